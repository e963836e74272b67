#include "bsnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace bsnet::ops {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<MatCM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;
template <typename T>
using CMapCM = Eigen::Map<const MatCM<T>>;

std::string dims(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

template <typename T>
void require_rank(const Tensor<T>& t, int r, const char* op, const char* name) {
  contract(t.rank() == r, std::string(op) + ": " + name + " must have rank " +
                              std::to_string(r) + ", got shape " + dims(t.shape()));
}

// Column layout: col[(oh*OW+ow)*CKK + (c*K+ki)*K + kj], i.e. one contiguous
// CKK block per output pixel (column-major CKK x OHW matrix).
template <typename T>
void im2col(const T* x, int C, int H, int W, int K, int stride, int pad, int OH, int OW, T* col) {
  const int CKK = C * K * K;
  for (int oh = 0; oh < OH; ++oh) {
    for (int ow = 0; ow < OW; ++ow) {
      T* dst = col + static_cast<size_t>(oh * OW + ow) * CKK;
      const int ih0 = oh * stride - pad;
      const int iw0 = ow * stride - pad;
      for (int c = 0; c < C; ++c) {
        const T* xc = x + static_cast<size_t>(c) * H * W;
        for (int ki = 0; ki < K; ++ki) {
          const int ih = ih0 + ki;
          T* drow = dst + (c * K + ki) * K;
          if (ih < 0 || ih >= H) {
            std::fill(drow, drow + K, T(0));
            continue;
          }
          const T* xrow = xc + static_cast<size_t>(ih) * W;
          for (int kj = 0; kj < K; ++kj) {
            const int iw = iw0 + kj;
            drow[kj] = (iw >= 0 && iw < W) ? xrow[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int K, int stride, int pad, int OH, int OW,
                T* dx) {
  const int CKK = C * K * K;
  for (int oh = 0; oh < OH; ++oh) {
    for (int ow = 0; ow < OW; ++ow) {
      const T* src = col + static_cast<size_t>(oh * OW + ow) * CKK;
      const int ih0 = oh * stride - pad;
      const int iw0 = ow * stride - pad;
      for (int c = 0; c < C; ++c) {
        T* xc = dx + static_cast<size_t>(c) * H * W;
        for (int ki = 0; ki < K; ++ki) {
          const int ih = ih0 + ki;
          if (ih < 0 || ih >= H) continue;
          const T* srow = src + (c * K + ki) * K;
          T* xrow = xc + static_cast<size_t>(ih) * W;
          for (int kj = 0; kj < K; ++kj) {
            const int iw = iw0 + kj;
            if (iw >= 0 && iw < W) xrow[iw] += srow[kj];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int padding) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "kernel");
  require_rank(b, 1, "conv2d", "bias");
  contract(stride >= 1, "conv2d: stride must be >= 1");
  contract(padding >= 0, "conv2d: padding must be >= 0");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), K = w.dim(2);
  contract(w.dim(1) == C, "conv2d: input channels " + std::to_string(C) +
                              " do not match kernel channels " + std::to_string(w.dim(1)));
  contract(w.dim(3) == K, "conv2d: kernels must be square, got " + dims(w.shape()));
  contract(b.dim(0) == O, "conv2d: bias size " + std::to_string(b.dim(0)) +
                              " does not match output channels " + std::to_string(O));
  contract(H + 2 * padding >= K && W + 2 * padding >= K,
           "conv2d: kernel " + std::to_string(K) + " larger than padded input " + dims(x.shape()));
  const int OH = (H + 2 * padding - K) / stride + 1;
  const int OW = (W + 2 * padding - K) / stride + 1;
  const int CKK = C * K * K;
  const int OHW = OH * OW;

  Tensor<T> y = Tensor<T>::zeros({N, O, OH, OW});
  {
    std::vector<T> col(static_cast<size_t>(CKK) * OHW);
    CMapRM<T> Wm(w.data().data(), O, CKK);
    for (int n = 0; n < N; ++n) {
      const T* xs = x.data().data() + static_cast<size_t>(n) * C * H * W;
      im2col(xs, C, H, W, K, stride, padding, OH, OW, col.data());
      CMapCM<T> Cm(col.data(), CKK, OHW);
      MapRM<T> Ym(y.data().data() + static_cast<size_t>(n) * O * OHW, O, OHW);
      Ym.noalias() = Wm * Cm;
      for (int o = 0; o < O; ++o) Ym.row(o).array() += b.data()[static_cast<size_t>(o)];
    }
  }

  if (tape.wants_grad(x, w, b)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = b, yc = y;
    tape.record([xc, wc, bc, yc, stride, padding]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int O = wc.dim(0), K = wc.dim(2);
      const int OH = yc.dim(2), OW = yc.dim(3);
      const int CKK = C * K * K, OHW = OH * OW;
      const bool gx = xc.requires_grad(), gw = wc.requires_grad(), gb = bc.requires_grad();
      std::vector<T> col(static_cast<size_t>(CKK) * OHW);
      CMapRM<T> Wm(wc.data().data(), O, CKK);
      for (int n = 0; n < N; ++n) {
        CMapRM<T> dY(yc.grad().data() + static_cast<size_t>(n) * O * OHW, O, OHW);
        if (gb) {
          T* db = bc.grad().data();
          for (int o = 0; o < O; ++o) db[o] += dY.row(o).sum();
        }
        if (gw) {
          const T* xs = xc.data().data() + static_cast<size_t>(n) * C * H * W;
          im2col(xs, C, H, W, K, stride, padding, OH, OW, col.data());
          CMapCM<T> Cm(col.data(), CKK, OHW);
          MapRM<T> dW(wc.grad().data(), O, CKK);
          dW.noalias() += dY * Cm.transpose();
        }
        if (gx) {
          MapCM<T> dCol(col.data(), CKK, OHW);
          dCol.noalias() = Wm.transpose() * dY;
          T* dx = xc.grad().data() + static_cast<size_t>(n) * C * H * W;
          col2im_add(col.data(), C, H, W, K, stride, padding, OH, OW, dx);
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(x, 2, "dense", "input");
  require_rank(w, 2, "dense", "weight");
  require_rank(b, 1, "dense", "bias");
  const int N = x.dim(0), F = x.dim(1), O = w.dim(1);
  contract(w.dim(0) == F, "dense: input features " + std::to_string(F) +
                              " do not match weight rows " + std::to_string(w.dim(0)));
  contract(b.dim(0) == O, "dense: bias size does not match output features");

  Tensor<T> y = Tensor<T>::zeros({N, O});
  {
    CMapRM<T> Xm(x.data().data(), N, F);
    CMapRM<T> Wm(w.data().data(), F, O);
    MapRM<T> Ym(y.data().data(), N, O);
    Ym.noalias() = Xm * Wm;
    for (int n = 0; n < N; ++n) {
      Ym.row(n) += CMapRM<T>(b.data().data(), 1, O);
    }
  }

  if (tape.wants_grad(x, w, b)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = b, yc = y;
    tape.record([xc, wc, bc, yc]() mutable {
      const int N = xc.dim(0), F = xc.dim(1), O = wc.dim(1);
      CMapRM<T> dY(yc.grad().data(), N, O);
      if (xc.requires_grad()) {
        MapRM<T> dX(xc.grad().data(), N, F);
        CMapRM<T> Wm(wc.data().data(), F, O);
        dX.noalias() += dY * Wm.transpose();
      }
      if (wc.requires_grad()) {
        MapRM<T> dW(wc.grad().data(), F, O);
        CMapRM<T> Xm(xc.data().data(), N, F);
        dW.noalias() += Xm.transpose() * dY;
      }
      if (bc.requires_grad()) {
        T* db = bc.grad().data();
        for (int o = 0; o < O; ++o) db[o] += dY.col(o).sum();
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const size_t n = x.numel();
  const T* xd = x.data().data();
  T* yd = y.data().data();
  for (size_t i = 0; i < n; ++i) yd[i] = xd[i] > T(0) ? xd[i] : T(0);
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      const size_t n = xc.numel();
      const T* xd = xc.data().data();
      const T* dy = yc.grad().data();
      T* dx = xc.grad().data();
      for (size_t i = 0; i < n; ++i)
        if (xd[i] > T(0)) dx[i] += dy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> swish(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const size_t n = x.numel();
  const T* xd = x.data().data();
  T* yd = y.data().data();
  for (size_t i = 0; i < n; ++i) {
    const T s = T(1) / (T(1) + std::exp(-xd[i]));
    yd[i] = xd[i] * s;
  }
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      const size_t n = xc.numel();
      const T* xd = xc.data().data();
      const T* dy = yc.grad().data();
      T* dx = xc.grad().data();
      for (size_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-xd[i]));
        dx[i] += dy[i] * (s + xd[i] * s * (T(1) - s));
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis) {
  contract(axis >= 0 && axis < x.rank(), "softmax: axis out of range for shape " + dims(x.shape()));
  const int L = x.dim(axis);
  size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(x.dim(i));
  for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<size_t>(x.dim(i));

  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xd = x.data().data();
  T* yd = y.data().data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * static_cast<size_t>(L) * inner + in;
      T mx = xd[base];
      for (int k = 1; k < L; ++k) mx = std::max(mx, xd[base + static_cast<size_t>(k) * inner]);
      T z = T(0);
      for (int k = 0; k < L; ++k) {
        const T e = std::exp(xd[base + static_cast<size_t>(k) * inner] - mx);
        yd[base + static_cast<size_t>(k) * inner] = e;
        z += e;
      }
      for (int k = 0; k < L; ++k) yd[base + static_cast<size_t>(k) * inner] /= z;
    }
  }

  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc, axis]() mutable {
      const int L = xc.dim(axis);
      size_t outer = 1, inner = 1;
      for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(xc.dim(i));
      for (int i = axis + 1; i < xc.rank(); ++i) inner *= static_cast<size_t>(xc.dim(i));
      const T* s = yc.data().data();
      const T* dy = yc.grad().data();
      T* dx = xc.grad().data();
      for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
          const size_t base = o * static_cast<size_t>(L) * inner + in;
          T dot = T(0);
          for (int k = 0; k < L; ++k) {
            const size_t i = base + static_cast<size_t>(k) * inner;
            dot += dy[i] * s[i];
          }
          for (int k = 0; k < L; ++k) {
            const size_t i = base + static_cast<size_t>(k) * inner;
            dx[i] += s[i] * (dy[i] - dot);
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  contract(a.shape() == b.shape(),
           "add: shape mismatch " + dims(a.shape()) + " vs " + dims(b.shape()));
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] + b.data()[i];
  if (tape.wants_grad(a, b)) {
    y.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, yc = y;
    tape.record([ac, bc, yc]() mutable {
      const size_t n = yc.numel();
      const T* dy = yc.grad().data();
      if (ac.requires_grad()) {
        T* da = ac.grad().data();
        for (size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (bc.requires_grad()) {
        T* db = bc.grad().data();
        for (size_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  contract(a.shape() == b.shape(),
           "mul: shape mismatch " + dims(a.shape()) + " vs " + dims(b.shape()));
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] * b.data()[i];
  if (tape.wants_grad(a, b)) {
    y.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, yc = y;
    tape.record([ac, bc, yc]() mutable {
      const size_t n = yc.numel();
      const T* dy = yc.grad().data();
      if (ac.requires_grad()) {
        T* da = ac.grad().data();
        const T* bd = bc.data().data();
        for (size_t i = 0; i < n; ++i) da[i] += dy[i] * bd[i];
      }
      if (bc.requires_grad()) {
        T* db = bc.grad().data();
        const T* ad = ac.data().data();
        for (size_t i = 0; i < n; ++i) db[i] += dy[i] * ad[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& x, T s) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) y.data()[i] = x.data()[i] * s;
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc, s]() mutable {
      const size_t n = xc.numel();
      const T* dy = yc.grad().data();
      T* dx = xc.grad().data();
      for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * s;
    });
  }
  return y;
}

template <typename T>
Tensor<T> mask_mul(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& m) {
  require_rank(x, 4, "mask_mul", "input");
  require_rank(m, 4, "mask_mul", "mask");
  contract(m.dim(1) == 1, "mask_mul: mask must have one channel, got " + dims(m.shape()));
  contract(m.dim(0) == x.dim(0) && m.dim(2) == x.dim(2) && m.dim(3) == x.dim(3),
           "mask_mul: mask " + dims(m.shape()) + " does not match input " + dims(x.shape()));
  const int N = x.dim(0), C = x.dim(1);
  const size_t HW = static_cast<size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  for (int n = 0; n < N; ++n) {
    const T* md = m.data().data() + static_cast<size_t>(n) * HW;
    for (int c = 0; c < C; ++c) {
      const size_t off = (static_cast<size_t>(n) * C + c) * HW;
      const T* xd = x.data().data() + off;
      T* yd = y.data().data() + off;
      for (size_t i = 0; i < HW; ++i) yd[i] = xd[i] * md[i];
    }
  }
  if (tape.wants_grad(x, m)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, mc = m, yc = y;
    tape.record([xc, mc, yc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const size_t HW = static_cast<size_t>(xc.dim(2)) * xc.dim(3);
      for (int n = 0; n < N; ++n) {
        const T* md = mc.data().data() + static_cast<size_t>(n) * HW;
        T* dm = mc.requires_grad() ? mc.grad().data() + static_cast<size_t>(n) * HW : nullptr;
        for (int c = 0; c < C; ++c) {
          const size_t off = (static_cast<size_t>(n) * C + c) * HW;
          const T* dy = yc.grad().data() + off;
          if (xc.requires_grad()) {
            T* dx = xc.grad().data() + off;
            for (size_t i = 0; i < HW; ++i) dx[i] += dy[i] * md[i];
          }
          if (dm) {
            const T* xd = xc.data().data() + off;
            for (size_t i = 0; i < HW; ++i) dm[i] += dy[i] * xd[i];
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const std::vector<Tensor<T>>& xs) {
  contract(!xs.empty(), "concat_channels: needs at least one input");
  const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int C = 0;
  for (const auto& x : xs) {
    require_rank(x, 4, "concat_channels", "input");
    contract(x.dim(0) == N && x.dim(2) == H && x.dim(3) == W,
             "concat_channels: inputs must agree on N,H,W; got " + dims(x.shape()) + " vs " +
                 dims(xs[0].shape()));
    C += x.dim(1);
  }
  const size_t HW = static_cast<size_t>(H) * W;
  Tensor<T> y = Tensor<T>::zeros({N, C, H, W});
  for (int n = 0; n < N; ++n) {
    size_t coff = 0;
    for (const auto& x : xs) {
      const size_t len = static_cast<size_t>(x.dim(1)) * HW;
      std::copy_n(x.data().data() + static_cast<size_t>(n) * len, len,
                  y.data().data() + (static_cast<size_t>(n) * C) * HW + coff);
      coff += len;
    }
  }
  bool any = false;
  for (const auto& x : xs) any = any || tape.wants_grad(x);
  if (any) {
    y.set_requires_grad(true);
    std::vector<Tensor<T>> xc = xs;
    Tensor<T> yc = y;
    tape.record([xc, yc]() mutable {
      const int N = yc.dim(0), C = yc.dim(1);
      const size_t HW = static_cast<size_t>(yc.dim(2)) * yc.dim(3);
      for (int n = 0; n < N; ++n) {
        size_t coff = 0;
        for (auto& x : xc) {
          const size_t len = static_cast<size_t>(x.dim(1)) * HW;
          if (x.requires_grad()) {
            const T* dy = yc.grad().data() + (static_cast<size_t>(n) * C) * HW + coff;
            T* dx = x.grad().data() + static_cast<size_t>(n) * len;
            for (size_t i = 0; i < len; ++i) dx[i] += dy[i];
          }
          coff += len;
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> max_pool2x2(Tape<T>& tape, const Tensor<T>& x) {
  require_rank(x, 4, "max_pool2x2", "input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  contract(H % 2 == 0 && W % 2 == 0, "max_pool2x2: H and W must be even, got " + dims(x.shape()));
  const int OH = H / 2, OW = W / 2;
  Tensor<T> y = Tensor<T>::zeros({N, C, OH, OW});
  auto arg = std::make_shared<std::vector<int32_t>>(y.numel());
  const T* xd = x.data().data();
  T* yd = y.data().data();
  size_t oi = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + static_cast<size_t>(nc) * H * W;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow, ++oi) {
        const int r = oh * 2, c = ow * 2;
        int best = r * W + c;
        T bv = plane[best];
        const int cand[3] = {r * W + c + 1, (r + 1) * W + c, (r + 1) * W + c + 1};
        for (int k = 0; k < 3; ++k) {
          if (plane[cand[k]] > bv) {
            bv = plane[cand[k]];
            best = cand[k];
          }
        }
        yd[oi] = bv;
        (*arg)[oi] = static_cast<int32_t>(nc) * H * W + best;
      }
    }
  }
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc, arg]() mutable {
      T* dx = xc.grad().data();
      const T* dy = yc.grad().data();
      const size_t n = yc.numel();
      for (size_t i = 0; i < n; ++i) dx[(*arg)[i]] += dy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool2x2(Tape<T>& tape, const Tensor<T>& x) {
  require_rank(x, 4, "avg_pool2x2", "input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  contract(H % 2 == 0 && W % 2 == 0, "avg_pool2x2: H and W must be even, got " + dims(x.shape()));
  const int OH = H / 2, OW = W / 2;
  Tensor<T> y = Tensor<T>::zeros({N, C, OH, OW});
  const T* xd = x.data().data();
  T* yd = y.data().data();
  size_t oi = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + static_cast<size_t>(nc) * H * W;
    for (int oh = 0; oh < OH; ++oh) {
      const T* r0 = plane + static_cast<size_t>(oh * 2) * W;
      const T* r1 = r0 + W;
      for (int ow = 0; ow < OW; ++ow, ++oi) {
        const int c = ow * 2;
        yd[oi] = (r0[c] + r0[c + 1] + r1[c] + r1[c + 1]) * T(0.25);
      }
    }
  }
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int OH = H / 2, OW = W / 2;
      T* dx = xc.grad().data();
      const T* dy = yc.grad().data();
      size_t oi = 0;
      for (int nc = 0; nc < N * C; ++nc) {
        T* plane = dx + static_cast<size_t>(nc) * H * W;
        for (int oh = 0; oh < OH; ++oh) {
          T* r0 = plane + static_cast<size_t>(oh * 2) * W;
          T* r1 = r0 + W;
          for (int ow = 0; ow < OW; ++ow, ++oi) {
            const int c = ow * 2;
            const T g = dy[oi] * T(0.25);
            r0[c] += g;
            r0[c + 1] += g;
            r1[c] += g;
            r1[c + 1] += g;
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const int N = x.dim(0), C = x.dim(1);
  const size_t HW = static_cast<size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y = Tensor<T>::zeros({N, C});
  const T* xd = x.data().data();
  for (int i = 0; i < N * C; ++i) {
    T acc = T(0);
    const T* p = xd + static_cast<size_t>(i) * HW;
    for (size_t k = 0; k < HW; ++k) acc += p[k];
    y.data()[static_cast<size_t>(i)] = acc / static_cast<T>(HW);
  }
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      const int NC = xc.dim(0) * xc.dim(1);
      const size_t HW = static_cast<size_t>(xc.dim(2)) * xc.dim(3);
      T* dx = xc.grad().data();
      const T* dy = yc.grad().data();
      for (int i = 0; i < NC; ++i) {
        const T g = dy[static_cast<size_t>(i)] / static_cast<T>(HW);
        T* p = dx + static_cast<size_t>(i) * HW;
        for (size_t k = 0; k < HW; ++k) p[k] += g;
      }
    });
  }
  return y;
}

namespace {

struct TapAxis {
  int i0, i1;
  double f;
};

inline TapAxis up2_tap(int o, int n) {
  const double s = (o + 0.5) * 0.5 - 0.5;
  int i0 = static_cast<int>(std::floor(s));
  const double f = s - i0;
  int i1 = i0 + 1;
  if (i0 < 0) i0 = 0;
  if (i1 > n - 1) i1 = n - 1;
  return {i0, i1, f};
}

}  // namespace

template <typename T>
Tensor<T> upsample_x2(Tape<T>& tape, const Tensor<T>& x) {
  require_rank(x, 4, "upsample_x2", "input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = H * 2, OW = W * 2;
  Tensor<T> y = Tensor<T>::zeros({N, C, OH, OW});
  std::vector<TapAxis> rows(static_cast<size_t>(OH)), cols(static_cast<size_t>(OW));
  for (int i = 0; i < OH; ++i) rows[static_cast<size_t>(i)] = up2_tap(i, H);
  for (int j = 0; j < OW; ++j) cols[static_cast<size_t>(j)] = up2_tap(j, W);
  const T* xd = x.data().data();
  T* yd = y.data().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + static_cast<size_t>(nc) * H * W;
    T* out = yd + static_cast<size_t>(nc) * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      const TapAxis& r = rows[static_cast<size_t>(oh)];
      const T* p0 = plane + static_cast<size_t>(r.i0) * W;
      const T* p1 = plane + static_cast<size_t>(r.i1) * W;
      const T fy = static_cast<T>(r.f);
      for (int ow = 0; ow < OW; ++ow) {
        const TapAxis& c = cols[static_cast<size_t>(ow)];
        const T fx = static_cast<T>(c.f);
        const T v0 = p0[c.i0] + fx * (p0[c.i1] - p0[c.i0]);
        const T v1 = p1[c.i0] + fx * (p1[c.i1] - p1[c.i0]);
        out[static_cast<size_t>(oh) * OW + ow] = v0 + fy * (v1 - v0);
      }
    }
  }
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int OH = H * 2, OW = W * 2;
      T* dx = xc.grad().data();
      const T* dy = yc.grad().data();
      for (int nc = 0; nc < N * C; ++nc) {
        T* plane = dx + static_cast<size_t>(nc) * H * W;
        const T* g = dy + static_cast<size_t>(nc) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const TapAxis r = up2_tap(oh, H);
          const T fy = static_cast<T>(r.f);
          for (int ow = 0; ow < OW; ++ow) {
            const TapAxis c = up2_tap(ow, W);
            const T fx = static_cast<T>(c.f);
            const T gv = g[static_cast<size_t>(oh) * OW + ow];
            plane[static_cast<size_t>(r.i0) * W + c.i0] += gv * (T(1) - fy) * (T(1) - fx);
            plane[static_cast<size_t>(r.i0) * W + c.i1] += gv * (T(1) - fy) * fx;
            plane[static_cast<size_t>(r.i1) * W + c.i0] += gv * fy * (T(1) - fx);
            plane[static_cast<size_t>(r.i1) * W + c.i1] += gv * fy * fx;
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> crop2d(Tape<T>& tape, const Tensor<T>& x, int r0, int c0, int h, int w) {
  require_rank(x, 4, "crop2d", "input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  contract(r0 >= 0 && c0 >= 0 && h > 0 && w > 0 && r0 + h <= H && c0 + w <= W,
           "crop2d: window (" + std::to_string(r0) + "," + std::to_string(c0) + ")+" +
               std::to_string(h) + "x" + std::to_string(w) + " outside input " + dims(x.shape()));
  Tensor<T> y = Tensor<T>::zeros({N, C, h, w});
  const T* xd = x.data().data();
  T* yd = y.data().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + static_cast<size_t>(nc) * H * W;
    T* out = yd + static_cast<size_t>(nc) * h * w;
    for (int i = 0; i < h; ++i)
      std::copy_n(plane + static_cast<size_t>(r0 + i) * W + c0, w, out + static_cast<size_t>(i) * w);
  }
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc, r0, c0, h, w]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      (void)H;
      T* dx = xc.grad().data();
      const T* dy = yc.grad().data();
      for (int nc = 0; nc < N * C; ++nc) {
        T* plane = dx + static_cast<size_t>(nc) * H * W;
        const T* g = dy + static_cast<size_t>(nc) * h * w;
        for (int i = 0; i < h; ++i) {
          T* row = plane + static_cast<size_t>(r0 + i) * W + c0;
          const T* grow = g + static_cast<size_t>(i) * w;
          for (int j = 0; j < w; ++j) row[j] += grow[j];
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> adaptive_avg_pool(Tape<T>& tape, const Tensor<T>& x, int oh, int ow) {
  require_rank(x, 4, "adaptive_avg_pool", "input");
  contract(oh > 0 && ow > 0, "adaptive_avg_pool: output size must be positive");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  contract(H >= 1 && W >= 1, "adaptive_avg_pool: empty input");
  Tensor<T> y = Tensor<T>::zeros({N, C, oh, ow});
  auto cell = [](int i, int n, int o, int* s, int* e) {
    *s = (i * n) / o;
    *e = ((i + 1) * n + o - 1) / o;
  };
  const T* xd = x.data().data();
  T* yd = y.data().data();
  size_t oi = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + static_cast<size_t>(nc) * H * W;
    for (int i = 0; i < oh; ++i) {
      int rs, re;
      cell(i, H, oh, &rs, &re);
      for (int j = 0; j < ow; ++j, ++oi) {
        int cs, ce;
        cell(j, W, ow, &cs, &ce);
        T acc = T(0);
        for (int r = rs; r < re; ++r)
          for (int c = cs; c < ce; ++c) acc += plane[static_cast<size_t>(r) * W + c];
        yd[oi] = acc / static_cast<T>((re - rs) * (ce - cs));
      }
    }
  }
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc, oh, ow]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      auto cell = [](int i, int n, int o, int* s, int* e) {
        *s = (i * n) / o;
        *e = ((i + 1) * n + o - 1) / o;
      };
      T* dx = xc.grad().data();
      const T* dy = yc.grad().data();
      size_t oi = 0;
      for (int nc = 0; nc < N * C; ++nc) {
        T* plane = dx + static_cast<size_t>(nc) * H * W;
        for (int i = 0; i < oh; ++i) {
          int rs, re;
          cell(i, H, oh, &rs, &re);
          for (int j = 0; j < ow; ++j, ++oi) {
            int cs, ce;
            cell(j, W, ow, &cs, &ce);
            const T g = dy[oi] / static_cast<T>((re - rs) * (ce - cs));
            for (int r = rs; r < re; ++r)
              for (int c = cs; c < ce; ++c) plane[static_cast<size_t>(r) * W + c] += g;
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_channels(Tape<T>& tape, const Tensor<T>& x, int c0, int c1) {
  require_rank(x, 4, "slice_channels", "input");
  const int N = x.dim(0), C = x.dim(1);
  contract(c0 >= 0 && c1 > c0 && c1 <= C, "slice_channels: range [" + std::to_string(c0) + "," +
                                              std::to_string(c1) + ") invalid for " +
                                              dims(x.shape()));
  const size_t HW = static_cast<size_t>(x.dim(2)) * x.dim(3);
  const int OC = c1 - c0;
  Tensor<T> y = Tensor<T>::zeros({N, OC, x.dim(2), x.dim(3)});
  for (int n = 0; n < N; ++n) {
    std::copy_n(x.data().data() + (static_cast<size_t>(n) * C + c0) * HW,
                static_cast<size_t>(OC) * HW,
                y.data().data() + static_cast<size_t>(n) * OC * HW);
  }
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc, c0]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), OC = yc.dim(1);
      const size_t HW = static_cast<size_t>(xc.dim(2)) * xc.dim(3);
      for (int n = 0; n < N; ++n) {
        const T* dy = yc.grad().data() + static_cast<size_t>(n) * OC * HW;
        T* dx = xc.grad().data() + (static_cast<size_t>(n) * C + c0) * HW;
        const size_t len = static_cast<size_t>(OC) * HW;
        for (size_t i = 0; i < len; ++i) dx[i] += dy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> affine_grid(Tape<T>& tape, const Tensor<T>& theta, int h, int w) {
  require_rank(theta, 2, "affine_grid", "theta");
  contract(theta.dim(1) == 6, "affine_grid: theta must be [N,6], got " + dims(theta.shape()));
  contract(h > 0 && w > 0, "affine_grid: output size must be positive");
  const int N = theta.dim(0);
  Tensor<T> g = Tensor<T>::zeros({N, h, w, 2});
  const T* td = theta.data().data();
  T* gd = g.data().data();
  for (int n = 0; n < N; ++n) {
    const T a = td[n * 6 + 0], b = td[n * 6 + 1], tx = td[n * 6 + 2];
    const T c = td[n * 6 + 3], d = td[n * 6 + 4], ty = td[n * 6 + 5];
    T* out = gd + static_cast<size_t>(n) * h * w * 2;
    for (int i = 0; i < h; ++i) {
      const T yn = static_cast<T>(2 * i + 1) / static_cast<T>(h) - T(1);
      for (int j = 0; j < w; ++j) {
        const T xn = static_cast<T>(2 * j + 1) / static_cast<T>(w) - T(1);
        T* p = out + (static_cast<size_t>(i) * w + j) * 2;
        p[0] = a * xn + b * yn + tx;
        p[1] = c * xn + d * yn + ty;
      }
    }
  }
  if (tape.wants_grad(theta)) {
    g.set_requires_grad(true);
    Tensor<T> tc = theta, gc = g;
    tape.record([tc, gc]() mutable {
      const int N = tc.dim(0), h = gc.dim(1), w = gc.dim(2);
      T* dt = tc.grad().data();
      const T* dg = gc.grad().data();
      for (int n = 0; n < N; ++n) {
        const T* g = dg + static_cast<size_t>(n) * h * w * 2;
        T da = 0, db = 0, dtx = 0, dc = 0, dd = 0, dty = 0;
        for (int i = 0; i < h; ++i) {
          const T yn = static_cast<T>(2 * i + 1) / static_cast<T>(h) - T(1);
          for (int j = 0; j < w; ++j) {
            const T xn = static_cast<T>(2 * j + 1) / static_cast<T>(w) - T(1);
            const T gx = g[(static_cast<size_t>(i) * w + j) * 2 + 0];
            const T gy = g[(static_cast<size_t>(i) * w + j) * 2 + 1];
            da += gx * xn;
            db += gx * yn;
            dtx += gx;
            dc += gy * xn;
            dd += gy * yn;
            dty += gy;
          }
        }
        dt[n * 6 + 0] += da;
        dt[n * 6 + 1] += db;
        dt[n * 6 + 2] += dtx;
        dt[n * 6 + 3] += dc;
        dt[n * 6 + 4] += dd;
        dt[n * 6 + 5] += dty;
      }
    });
  }
  return g;
}

template <typename T>
Tensor<T> grid_sample(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& grid) {
  require_rank(x, 4, "grid_sample", "input");
  require_rank(grid, 4, "grid_sample", "grid");
  contract(grid.dim(3) == 2, "grid_sample: grid must be [N,H,W,2], got " + dims(grid.shape()));
  contract(grid.dim(0) == x.dim(0), "grid_sample: batch mismatch " + dims(x.shape()) + " vs " +
                                        dims(grid.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int GH = grid.dim(1), GW = grid.dim(2);
  Tensor<T> y = Tensor<T>::zeros({N, C, GH, GW});
  const T* xd = x.data().data();
  const T* gd = grid.data().data();
  T* yd = y.data().data();
  for (int n = 0; n < N; ++n) {
    const T* g = gd + static_cast<size_t>(n) * GH * GW * 2;
    for (int i = 0; i < GH; ++i) {
      for (int j = 0; j < GW; ++j) {
        const T gx = g[(static_cast<size_t>(i) * GW + j) * 2 + 0];
        const T gy = g[(static_cast<size_t>(i) * GW + j) * 2 + 1];
        const T px = ((gx + T(1)) * static_cast<T>(W) - T(1)) * T(0.5);
        const T py = ((gy + T(1)) * static_cast<T>(H) - T(1)) * T(0.5);
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        const T fx = px - static_cast<T>(x0);
        const T fy = py - static_cast<T>(y0);
        const bool vx0 = x0 >= 0 && x0 < W, vx1 = x0 + 1 >= 0 && x0 + 1 < W;
        const bool vy0 = y0 >= 0 && y0 < H, vy1 = y0 + 1 >= 0 && y0 + 1 < H;
        for (int c = 0; c < C; ++c) {
          const T* plane = xd + (static_cast<size_t>(n) * C + c) * H * W;
          const T t00 = (vy0 && vx0) ? plane[static_cast<size_t>(y0) * W + x0] : T(0);
          const T t01 = (vy0 && vx1) ? plane[static_cast<size_t>(y0) * W + x0 + 1] : T(0);
          const T t10 = (vy1 && vx0) ? plane[static_cast<size_t>(y0 + 1) * W + x0] : T(0);
          const T t11 = (vy1 && vx1) ? plane[static_cast<size_t>(y0 + 1) * W + x0 + 1] : T(0);
          const T v0 = t00 + fx * (t01 - t00);
          const T v1 = t10 + fx * (t11 - t10);
          yd[((static_cast<size_t>(n) * C + c) * GH + i) * GW + j] = v0 + fy * (v1 - v0);
        }
      }
    }
  }
  if (tape.wants_grad(x, grid)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, gc = grid, yc = y;
    tape.record([xc, gc, yc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int GH = gc.dim(1), GW = gc.dim(2);
      const bool gin = xc.requires_grad(), ggr = gc.requires_grad();
      const T* xd = xc.data().data();
      const T* gd = gc.data().data();
      const T* dy = yc.grad().data();
      T* dx = gin ? xc.grad().data() : nullptr;
      T* dg = ggr ? gc.grad().data() : nullptr;
      for (int n = 0; n < N; ++n) {
        const T* g = gd + static_cast<size_t>(n) * GH * GW * 2;
        for (int i = 0; i < GH; ++i) {
          for (int j = 0; j < GW; ++j) {
            const T gx = g[(static_cast<size_t>(i) * GW + j) * 2 + 0];
            const T gy = g[(static_cast<size_t>(i) * GW + j) * 2 + 1];
            const T px = ((gx + T(1)) * static_cast<T>(W) - T(1)) * T(0.5);
            const T py = ((gy + T(1)) * static_cast<T>(H) - T(1)) * T(0.5);
            const int x0 = static_cast<int>(std::floor(px));
            const int y0 = static_cast<int>(std::floor(py));
            const T fx = px - static_cast<T>(x0);
            const T fy = py - static_cast<T>(y0);
            const bool vx0 = x0 >= 0 && x0 < W, vx1 = x0 + 1 >= 0 && x0 + 1 < W;
            const bool vy0 = y0 >= 0 && y0 < H, vy1 = y0 + 1 >= 0 && y0 + 1 < H;
            T dpx = T(0), dpy = T(0);
            for (int c = 0; c < C; ++c) {
              const size_t poff = (static_cast<size_t>(n) * C + c) * H * W;
              const T* plane = xd + poff;
              const T gv = dy[((static_cast<size_t>(n) * C + c) * GH + i) * GW + j];
              if (gin) {
                T* dplane = dx + poff;
                if (vy0 && vx0) dplane[static_cast<size_t>(y0) * W + x0] += gv * (T(1) - fx) * (T(1) - fy);
                if (vy0 && vx1) dplane[static_cast<size_t>(y0) * W + x0 + 1] += gv * fx * (T(1) - fy);
                if (vy1 && vx0) dplane[static_cast<size_t>(y0 + 1) * W + x0] += gv * (T(1) - fx) * fy;
                if (vy1 && vx1) dplane[static_cast<size_t>(y0 + 1) * W + x0 + 1] += gv * fx * fy;
              }
              if (ggr) {
                const T t00 = (vy0 && vx0) ? plane[static_cast<size_t>(y0) * W + x0] : T(0);
                const T t01 = (vy0 && vx1) ? plane[static_cast<size_t>(y0) * W + x0 + 1] : T(0);
                const T t10 = (vy1 && vx0) ? plane[static_cast<size_t>(y0 + 1) * W + x0] : T(0);
                const T t11 = (vy1 && vx1) ? plane[static_cast<size_t>(y0 + 1) * W + x0 + 1] : T(0);
                dpx += gv * ((T(1) - fy) * (t01 - t00) + fy * (t11 - t10));
                dpy += gv * ((t10 + fx * (t11 - t10)) - (t00 + fx * (t01 - t00)));
              }
            }
            if (ggr) {
              T* dgp = dg + (static_cast<size_t>(n) * GH * GW + static_cast<size_t>(i) * GW + j) * 2;
              dgp[0] += dpx * static_cast<T>(W) * T(0.5);
              dgp[1] += dpy * static_cast<T>(H) * T(0.5);
            }
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> stack_score_grid(Tape<T>& tape, const std::array<Tensor<T>, 6>& regions) {
  const int N = regions[0].dim(0);
  for (const auto& r : regions) {
    require_rank(r, 2, "stack_score_grid", "region");
    contract(r.dim(0) == N && r.dim(1) == 4,
             "stack_score_grid: each region must be [N,4], got " + dims(r.shape()));
  }
  Tensor<T> y = Tensor<T>::zeros({N, 3, 2, 4});
  for (int L = 0; L < 6; ++L) {
    const int row = L % 3, col = L / 3;
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < 4; ++k)
        y.at({n, row, col, k}) = regions[static_cast<size_t>(L)].at({n, k});
  }
  bool any = false;
  for (const auto& r : regions) any = any || tape.wants_grad(r);
  if (any) {
    y.set_requires_grad(true);
    std::array<Tensor<T>, 6> rc = regions;
    Tensor<T> yc = y;
    tape.record([rc, yc]() mutable {
      const int N = yc.dim(0);
      const T* dy = yc.grad().data();
      for (int L = 0; L < 6; ++L) {
        if (!rc[static_cast<size_t>(L)].requires_grad()) continue;
        const int row = L % 3, col = L / 3;
        T* dr = rc[static_cast<size_t>(L)].grad().data();
        for (int n = 0; n < N; ++n)
          for (int k = 0; k < 4; ++k)
            dr[n * 4 + k] += dy[((static_cast<size_t>(n) * 3 + row) * 2 + col) * 4 + k];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> theta_fixup(Tape<T>& tape, const Tensor<T>& theta, const Tensor<T>& mask, T mask_eps,
                      T det_eps, std::vector<bool>* replaced) {
  require_rank(theta, 2, "theta_fixup", "theta");
  contract(theta.dim(1) == 6, "theta_fixup: theta must be [N,6]");
  require_rank(mask, 4, "theta_fixup", "mask");
  contract(mask.dim(0) == theta.dim(0), "theta_fixup: batch mismatch");
  const int N = theta.dim(0);
  const size_t HW = static_cast<size_t>(mask.dim(1)) * mask.dim(2) * mask.dim(3);
  auto rep = std::make_shared<std::vector<bool>>(static_cast<size_t>(N), false);
  Tensor<T> y = Tensor<T>::zeros({N, 6});
  static const T ident[6] = {T(1), T(0), T(0), T(0), T(1), T(0)};
  for (int n = 0; n < N; ++n) {
    const T* t = theta.data().data() + n * 6;
    const T* m = mask.data().data() + static_cast<size_t>(n) * HW;
    T mean = T(0);
    for (size_t i = 0; i < HW; ++i) mean += m[i];
    mean /= static_cast<T>(HW);
    const T det = t[0] * t[4] - t[1] * t[3];
    const bool bad = mean < mask_eps || std::abs(det) < det_eps;
    (*rep)[static_cast<size_t>(n)] = bad;
    for (int k = 0; k < 6; ++k) y.data()[static_cast<size_t>(n) * 6 + k] = bad ? ident[k] : t[k];
  }
  if (replaced) *replaced = *rep;
  if (tape.wants_grad(theta)) {
    y.set_requires_grad(true);
    Tensor<T> tc = theta, yc = y;
    tape.record([tc, yc, rep]() mutable {
      const int N = tc.dim(0);
      T* dt = tc.grad().data();
      const T* dy = yc.grad().data();
      for (int n = 0; n < N; ++n) {
        if ((*rep)[static_cast<size_t>(n)]) continue;
        for (int k = 0; k < 6; ++k) dt[n * 6 + k] += dy[n * 6 + k];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> y = Tensor<T>::zeros({1});
  T acc = T(0);
  for (const T& v : x.data()) acc += v;
  y.data()[0] = acc;
  if (tape.wants_grad(x)) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    tape.record([xc, yc]() mutable {
      const T g = yc.grad()[0];
      T* dx = xc.grad().data();
      const size_t n = xc.numel();
      for (size_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return y;
}

#define BSNET_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> conv2d<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                               int, int);                                                         \
  template Tensor<T> dense<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> relu<T>(Tape<T>&, const Tensor<T>&);                                        \
  template Tensor<T> swish<T>(Tape<T>&, const Tensor<T>&);                                       \
  template Tensor<T> softmax<T>(Tape<T>&, const Tensor<T>&, int);                                \
  template Tensor<T> add<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> mul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> mul_scalar<T>(Tape<T>&, const Tensor<T>&, T);                               \
  template Tensor<T> mask_mul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> concat_channels<T>(Tape<T>&, const std::vector<Tensor<T>>&);                \
  template Tensor<T> max_pool2x2<T>(Tape<T>&, const Tensor<T>&);                                 \
  template Tensor<T> avg_pool2x2<T>(Tape<T>&, const Tensor<T>&);                                 \
  template Tensor<T> global_avg_pool<T>(Tape<T>&, const Tensor<T>&);                             \
  template Tensor<T> upsample_x2<T>(Tape<T>&, const Tensor<T>&);                                 \
  template Tensor<T> crop2d<T>(Tape<T>&, const Tensor<T>&, int, int, int, int);                  \
  template Tensor<T> adaptive_avg_pool<T>(Tape<T>&, const Tensor<T>&, int, int);                 \
  template Tensor<T> slice_channels<T>(Tape<T>&, const Tensor<T>&, int, int);                    \
  template Tensor<T> affine_grid<T>(Tape<T>&, const Tensor<T>&, int, int);                       \
  template Tensor<T> grid_sample<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> stack_score_grid<T>(Tape<T>&, const std::array<Tensor<T>, 6>&);             \
  template Tensor<T> theta_fixup<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, T, T,          \
                                    std::vector<bool>*);                                          \
  template Tensor<T> sum<T>(Tape<T>&, const Tensor<T>&);

BSNET_INSTANTIATE_OPS(float)
BSNET_INSTANTIATE_OPS(double)

#undef BSNET_INSTANTIATE_OPS

}  // namespace bsnet::ops
