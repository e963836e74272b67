#include "bsnet/loss.hpp"

#include <algorithm>
#include <cmath>

#include "bsnet/ops.hpp"

namespace bsnet {

namespace {

template <typename T>
void require_dist(const Tensor<T>& dist, const std::vector<BrixiaScore>& y, const char* op) {
  contract(dist.rank() == 4 && dist.dim(1) == 3 && dist.dim(2) == 2 && dist.dim(3) == 4,
           std::string(op) + ": distributions must be [N,3,2,4]");
  contract(static_cast<size_t>(dist.dim(0)) == y.size(),
           std::string(op) + ": batch size does not match target count");
  for (const auto& s : y)
    contract(s.valid(), std::string(op) + ": target values must be in 0..3");
}

// dist memory is [n][row][col][class]; region letter L sits at row L%3, col L/3.
inline size_t dist_off(int n, int L) {
  const int row = L % 3, col = L / 3;
  return ((static_cast<size_t>(n) * 3 + static_cast<size_t>(row)) * 2 + static_cast<size_t>(col)) * 4;
}

}  // namespace

template <typename T>
Tensor<T> dice_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  contract(pred.shape() == target.shape(), "dice_loss: shape mismatch");
  const size_t n = pred.numel();
  const T* p = pred.data().data();
  const T* t = target.data().data();
  T inter = T(0), sp = T(0), st = T(0);
  for (size_t i = 0; i < n; ++i) {
    inter += p[i] * t[i];
    sp += p[i];
    st += t[i];
  }
  const T eps = T(1);
  const T num = T(2) * inter + eps;
  const T den = sp + st + eps;
  Tensor<T> y = Tensor<T>::scalar(T(1) - num / den);
  if (tape.wants_grad(pred)) {
    y.set_requires_grad(true);
    Tensor<T> pc = pred, tc = target, yc = y;
    tape.record([pc, tc, yc, inter, sp, st]() mutable {
      const T eps = T(1);
      const T num = T(2) * inter + eps;
      const T den = sp + st + eps;
      const T g = yc.grad()[0];
      const size_t n = pc.numel();
      const T* t = tc.data().data();
      T* dp = pc.grad().data();
      const T inv2 = T(1) / (den * den);
      for (size_t i = 0; i < n; ++i) {
        dp[i] += g * (num - T(2) * t[i] * den) * inv2;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scce(Tape<T>& tape, const Tensor<T>& dist, const std::vector<BrixiaScore>& y) {
  require_dist(dist, y, "scce");
  const int N = dist.dim(0);
  const T clampv = T(1e-12);
  const T* d = dist.data().data();
  T acc = T(0);
  for (int n = 0; n < N; ++n) {
    for (int L = 0; L < 6; ++L) {
      const T p = d[dist_off(n, L) + static_cast<size_t>(y[static_cast<size_t>(n)][L])];
      acc -= std::log(std::max(p, clampv));
    }
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(6 * N));
  if (tape.wants_grad(dist)) {
    out.set_requires_grad(true);
    Tensor<T> dc = dist, oc = out;
    auto yc = y;
    tape.record([dc, oc, yc]() mutable {
      const int N = dc.dim(0);
      const T clampv = T(1e-12);
      const T g = oc.grad()[0] / static_cast<T>(6 * N);
      const T* d = dc.data().data();
      T* dd = dc.grad().data();
      for (int n = 0; n < N; ++n) {
        for (int L = 0; L < 6; ++L) {
          const size_t i = dist_off(n, L) + static_cast<size_t>(yc[static_cast<size_t>(n)][L]);
          if (d[i] > clampv) dd[i] -= g / d[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mae_d(Tape<T>& tape, const Tensor<T>& dist, const std::vector<BrixiaScore>& y, T beta) {
  require_dist(dist, y, "mae_d");
  contract(beta > T(0), "mae_d: beta must be positive");
  const int N = dist.dim(0);
  const T* d = dist.data().data();
  T acc = T(0);
  for (int n = 0; n < N; ++n) {
    for (int L = 0; L < 6; ++L) {
      const T* p = d + dist_off(n, L);
      T mx = p[0];
      for (int k = 1; k < 4; ++k) mx = std::max(mx, p[k]);
      T s[4], z = T(0);
      for (int k = 0; k < 4; ++k) {
        s[k] = std::exp(beta * (p[k] - mx));
        z += s[k];
      }
      T e = T(0);
      for (int k = 0; k < 4; ++k) e += static_cast<T>(k) * (s[k] / z);
      acc += std::abs(static_cast<T>(y[static_cast<size_t>(n)][L]) - e);
    }
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(6 * N));
  if (tape.wants_grad(dist)) {
    out.set_requires_grad(true);
    Tensor<T> dc = dist, oc = out;
    auto yc = y;
    tape.record([dc, oc, yc, beta]() mutable {
      const int N = dc.dim(0);
      const T g = oc.grad()[0] / static_cast<T>(6 * N);
      const T* d = dc.data().data();
      T* dd = dc.grad().data();
      for (int n = 0; n < N; ++n) {
        for (int L = 0; L < 6; ++L) {
          const size_t off = dist_off(n, L);
          const T* p = d + off;
          T mx = p[0];
          for (int k = 1; k < 4; ++k) mx = std::max(mx, p[k]);
          T s[4], z = T(0);
          for (int k = 0; k < 4; ++k) {
            s[k] = std::exp(beta * (p[k] - mx));
            z += s[k];
          }
          T e = T(0);
          for (int k = 0; k < 4; ++k) {
            s[k] /= z;
            e += static_cast<T>(k) * s[k];
          }
          const T diff = static_cast<T>(yc[static_cast<size_t>(n)][L]) - e;
          const T sgn = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
          for (int k = 0; k < 4; ++k) {
            dd[off + static_cast<size_t>(k)] += g * (-sgn) * beta * s[k] * (static_cast<T>(k) - e);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> composite_loss(Tape<T>& tape, const Tensor<T>& dist, const std::vector<BrixiaScore>& y,
                         const LossConfig& cfg) {
  contract(cfg.alpha >= 0.0 && cfg.alpha <= 1.0, "composite_loss: alpha must be in [0,1]");
  contract(cfg.beta > 0.0, "composite_loss: beta must be positive");
  Tensor<T> a = scce(tape, dist, y);
  Tensor<T> b = mae_d(tape, dist, y, static_cast<T>(cfg.beta));
  Tensor<T> wa = ops::mul_scalar(tape, a, static_cast<T>(cfg.alpha));
  Tensor<T> wb = ops::mul_scalar(tape, b, static_cast<T>(1.0 - cfg.alpha));
  return ops::add(tape, wa, wb);
}

template <typename T>
OverlapMetrics overlap_metrics(const Tensor<T>& pred, const Tensor<T>& target) {
  contract(pred.shape() == target.shape(), "overlap_metrics: shape mismatch");
  const size_t n = pred.numel();
  const T* p = pred.data().data();
  const T* t = target.data().data();
  long long inter = 0, np = 0, nt = 0, uni = 0;
  for (size_t i = 0; i < n; ++i) {
    const bool bp = p[i] > T(0.5);
    const bool bt = t[i] > T(0.5);
    np += bp;
    nt += bt;
    inter += bp && bt;
    uni += bp || bt;
  }
  OverlapMetrics m;
  m.dice = (np + nt) == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
  m.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  return m;
}

namespace {

struct SeriesStats {
  double mer, mae, sd;
  std::optional<double> cc;
};

SeriesStats series_stats(const std::vector<double>& pred, const std::vector<double>& ref) {
  const double n = static_cast<double>(pred.size());
  double mer = 0, mae = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - ref[i];
    mer += e;
    mae += std::abs(e);
  }
  mer /= n;
  mae /= n;
  double var = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = std::abs(pred[i] - ref[i]) - mae;
    var += d * d;
  }
  SeriesStats s{mer, mae, std::sqrt(var / n), std::nullopt};
  double mp = 0, mr = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mr += ref[i];
  }
  mp /= n;
  mr /= n;
  double vp = 0, vr = 0, cov = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    vp += (pred[i] - mp) * (pred[i] - mp);
    vr += (ref[i] - mr) * (ref[i] - mr);
    cov += (pred[i] - mp) * (ref[i] - mr);
  }
  if (vp > 0 && vr > 0) s.cc = cov / std::sqrt(vp * vr);
  return s;
}

}  // namespace

ErrorStats error_stats(const std::vector<BrixiaScore>& preds, const std::vector<BrixiaScore>& refs,
                       StatScope scope, int region) {
  contract(preds.size() == refs.size(), "error_stats: length mismatch");
  contract(!preds.empty(), "error_stats: empty input");
  ErrorStats out;
  out.scope = scope;
  auto region_series = [&](int r, std::vector<double>* p, std::vector<double>* q) {
    p->clear();
    q->clear();
    for (size_t i = 0; i < preds.size(); ++i) {
      p->push_back(preds[i][r]);
      q->push_back(refs[i][r]);
    }
  };
  std::vector<double> p, q;
  if (scope == StatScope::kPerRegion) {
    contract(region >= 0 && region < 6, "error_stats: per-region scope needs a region in 0..5");
    out.region = region;
    region_series(region, &p, &q);
    const SeriesStats s = series_stats(p, q);
    out.mer = s.mer;
    out.mae = s.mae;
    out.sd = s.sd;
    out.cc = s.cc;
  } else if (scope == StatScope::kRegionAverage) {
    double mer = 0, mae = 0, sd = 0, ccs = 0;
    int ccn = 0;
    for (int r = 0; r < 6; ++r) {
      region_series(r, &p, &q);
      const SeriesStats s = series_stats(p, q);
      mer += s.mer;
      mae += s.mae;
      sd += s.sd;
      if (s.cc) {
        ccs += *s.cc;
        ++ccn;
      }
    }
    out.mer = mer / 6;
    out.mae = mae / 6;
    out.sd = sd / 6;
    if (ccn > 0) out.cc = ccs / ccn;
  } else {
    for (size_t i = 0; i < preds.size(); ++i) {
      p.push_back(global_score(preds[i]));
      q.push_back(global_score(refs[i]));
    }
    const SeriesStats s = series_stats(p, q);
    out.mer = s.mer;
    out.mae = s.mae;
    out.sd = s.sd;
    out.cc = s.cc;
  }
  return out;
}

std::vector<std::vector<int>> confusion_matrix(const std::vector<int>& preds,
                                               const std::vector<int>& refs, int domain_size) {
  contract(preds.size() == refs.size(), "confusion_matrix: length mismatch");
  contract(domain_size >= 1, "confusion_matrix: domain must be positive");
  std::vector<std::vector<int>> m(static_cast<size_t>(domain_size),
                                  std::vector<int>(static_cast<size_t>(domain_size), 0));
  for (size_t i = 0; i < preds.size(); ++i) {
    contract(preds[i] >= 0 && preds[i] < domain_size && refs[i] >= 0 && refs[i] < domain_size,
             "confusion_matrix: value outside domain at index " + std::to_string(i));
    ++m[static_cast<size_t>(refs[i])][static_cast<size_t>(preds[i])];
  }
  return m;
}

#define BSNET_INSTANTIATE_LOSS(T)                                                              \
  template Tensor<T> dice_loss<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> scce<T>(Tape<T>&, const Tensor<T>&, const std::vector<BrixiaScore>&);     \
  template Tensor<T> mae_d<T>(Tape<T>&, const Tensor<T>&, const std::vector<BrixiaScore>&, T); \
  template Tensor<T> composite_loss<T>(Tape<T>&, const Tensor<T>&,                             \
                                       const std::vector<BrixiaScore>&, const LossConfig&);    \
  template OverlapMetrics overlap_metrics<T>(const Tensor<T>&, const Tensor<T>&);

BSNET_INSTANTIATE_LOSS(float)
BSNET_INSTANTIATE_LOSS(double)

#undef BSNET_INSTANTIATE_LOSS

}  // namespace bsnet
