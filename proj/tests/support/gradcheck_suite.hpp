#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "bsnet/loss.hpp"
#include "bsnet/ops.hpp"
#include "bsnet/rng.hpp"
#include "gradcheck.hpp"

namespace bsnet::testing {

struct SuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  size_t coords = 0;
};

namespace detail {

inline void merge(SuiteEntry& e, const GradCheckResult& r) {
  e.max_rel_err = std::max(e.max_rel_err, r.max_rel_err);
  e.coords += r.coords;
}

// Distinct values with pairwise gaps >> the FD step, so pool argmaxes and
// relu signs cannot flip inside the stencil.
inline Tensor<double> spaced_tensor(Rng& rng, std::vector<int> shape) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  std::vector<size_t> order(t.numel());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  for (size_t i = 0; i < order.size(); ++i)
    t.data()[order[i]] = -1.0 + 0.011 * static_cast<double>(i) + rng.uniform(0.0, 0.004);
  return t;
}

inline Tensor<double> safe_grid(Rng& rng, int n, int gh, int gw, int h, int w) {
  Tensor<double> g = Tensor<double>::zeros({n, gh, gw, 2});
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < gh; ++i) {
      for (int j = 0; j < gw; ++j) {
        // Pixel coords at integer+frac with frac in [0.07, 0.93]: the four
        // taps never change under the FD perturbation.
        const double px = rng.range(-1, w - 1) + rng.uniform(0.07, 0.93);
        const double py = rng.range(-1, h - 1) + rng.uniform(0.07, 0.93);
        double* p = &g.at({b, i, j, 0});
        p[0] = (2.0 * px + 1.0) / w - 1.0;
        p[1] = (2.0 * py + 1.0) / h - 1.0;
      }
    }
  }
  return g;
}

inline std::vector<BrixiaScore> random_scores(Rng& rng, int n) {
  std::vector<BrixiaScore> y(static_cast<size_t>(n));
  for (auto& s : y)
    for (int i = 0; i < 6; ++i) s[i] = rng.range(0, 3);
  return y;
}

}  // namespace detail

// Ten randomized shapes per primitive, gradients checked against central
// finite differences in double precision.
inline std::vector<SuiteEntry> run_primitive_gradchecks() {
  using namespace detail;
  std::vector<SuiteEntry> out;

  {
    SuiteEntry e{"conv2d", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(100 + seed);
      const int n = rng.range(1, 2), c = rng.range(1, 3), o = rng.range(1, 3);
      const int k = rng.bernoulli(0.5) ? 1 : 3;
      const int pad = rng.range(0, 1);
      const int stride = rng.range(1, 2);
      const int h = rng.range(std::max(1, k - 2 * pad), 6) + k - 1;
      const int w = rng.range(std::max(1, k - 2 * pad), 6) + k - 1;
      auto x = random_tensor(rng, {n, c, h, w});
      auto wt = random_tensor(rng, {o, c, k, k});
      auto b = random_tensor(rng, {o});
      merge(e, grad_check(
                   [stride, pad, seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::conv2d(t, in[0], in[1], in[2], stride, pad),
                                         7000 + seed);
                   },
                   {x, wt, b}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"dense", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(200 + seed);
      const int n = rng.range(1, 3), f = rng.range(1, 6), o = rng.range(1, 5);
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::dense(t, in[0], in[1], in[2]), 7100 + seed);
                   },
                   {random_tensor(rng, {n, f}), random_tensor(rng, {f, o}),
                    random_tensor(rng, {o})}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"relu", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(300 + seed);
      auto x = spaced_tensor(rng, {rng.range(1, 2), rng.range(1, 3), rng.range(2, 5), rng.range(2, 5)});
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::relu(t, in[0]), 7200 + seed);
                   },
                   {x}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"swish", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(400 + seed);
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::swish(t, in[0]), 7300 + seed);
                   },
                   {random_tensor(rng, {rng.range(1, 3), rng.range(1, 4), rng.range(1, 4)},
                                  -2.0, 2.0)}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"softmax", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(500 + seed);
      std::vector<int> shape;
      const int rank = rng.range(2, 4);
      for (int i = 0; i < rank; ++i) shape.push_back(rng.range(1, 4));
      const int axis = rng.range(0, rank - 1);
      merge(e, grad_check(
                   [axis, seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::softmax(t, in[0], axis), 7400 + seed);
                   },
                   {random_tensor(rng, shape, -2.0, 2.0)}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"add_mul", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(600 + seed);
      std::vector<int> shape{rng.range(1, 3), rng.range(1, 5)};
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     auto s = ops::add(t, in[0], in[1]);
                     auto m = ops::mul(t, s, in[2]);
                     return weighted_sum(t, ops::mul_scalar(t, m, 0.7), 7500 + seed);
                   },
                   {random_tensor(rng, shape), random_tensor(rng, shape),
                    random_tensor(rng, shape)}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"mask_mul", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(700 + seed);
      const int n = rng.range(1, 2), c = rng.range(1, 3), h = rng.range(2, 5), w = rng.range(2, 5);
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::mask_mul(t, in[0], in[1]), 7600 + seed);
                   },
                   {random_tensor(rng, {n, c, h, w}), random_tensor(rng, {n, 1, h, w})}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"concat_channels", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(800 + seed);
      const int n = rng.range(1, 2), h = rng.range(2, 4), w = rng.range(2, 4);
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::concat_channels(t, {in[0], in[1], in[2]}),
                                         7700 + seed);
                   },
                   {random_tensor(rng, {n, rng.range(1, 3), h, w}),
                    random_tensor(rng, {n, rng.range(1, 3), h, w}),
                    random_tensor(rng, {n, rng.range(1, 3), h, w})}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"max_pool2x2", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(900 + seed);
      auto x = spaced_tensor(rng, {rng.range(1, 2), rng.range(1, 2), 2 * rng.range(1, 3),
                                   2 * rng.range(1, 3)});
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::max_pool2x2(t, in[0]), 7800 + seed);
                   },
                   {x}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"avg_pool2x2", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1000 + seed);
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::avg_pool2x2(t, in[0]), 7900 + seed);
                   },
                   {random_tensor(rng, {rng.range(1, 2), rng.range(1, 3), 2 * rng.range(1, 3),
                                        2 * rng.range(1, 3)})}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"global_avg_pool", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1100 + seed);
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::global_avg_pool(t, in[0]), 8000 + seed);
                   },
                   {random_tensor(rng, {rng.range(1, 3), rng.range(1, 3), rng.range(1, 5),
                                        rng.range(1, 5)})}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"upsample_x2", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1200 + seed);
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::upsample_x2(t, in[0]), 8100 + seed);
                   },
                   {random_tensor(rng, {rng.range(1, 2), rng.range(1, 3), rng.range(1, 4),
                                        rng.range(1, 4)})}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"crop2d_adaptive_pool", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1300 + seed);
      const int h = rng.range(4, 8), w = rng.range(4, 8);
      const int ch = rng.range(2, h), cw = rng.range(2, w);
      const int r0 = rng.range(0, h - ch), c0 = rng.range(0, w - cw);
      merge(e, grad_check(
                   [=](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     auto c = ops::crop2d(t, in[0], r0, c0, ch, cw);
                     return weighted_sum(t, ops::adaptive_avg_pool(t, c, 2, 2), 8200 + seed);
                   },
                   {random_tensor(rng, {rng.range(1, 2), rng.range(1, 2), h, w})}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"slice_channels", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1400 + seed);
      const int c = rng.range(2, 5);
      const int c0 = rng.range(0, c - 1), c1 = rng.range(c0 + 1, c);
      merge(e, grad_check(
                   [=](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::slice_channels(t, in[0], c0, c1), 8300 + seed);
                   },
                   {random_tensor(rng, {rng.range(1, 2), c, rng.range(2, 4), rng.range(2, 4)})}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"affine_grid", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1500 + seed);
      const int h = rng.range(1, 5), w = rng.range(1, 5);
      merge(e, grad_check(
                   [=](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::affine_grid(t, in[0], h, w), 8400 + seed);
                   },
                   {random_tensor(rng, {rng.range(1, 3), 6})}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"grid_sample", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1600 + seed);
      const int n = rng.range(1, 2), c = rng.range(1, 2);
      const int h = rng.range(3, 6), w = rng.range(3, 6);
      const int gh = rng.range(2, 4), gw = rng.range(2, 4);
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return weighted_sum(t, ops::grid_sample(t, in[0], in[1]), 8500 + seed);
                   },
                   {random_tensor(rng, {n, c, h, w}), safe_grid(rng, n, gh, gw, h, w)}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"stack_score_grid", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1700 + seed);
      const int n = rng.range(1, 3);
      std::vector<Tensor<double>> in;
      for (int i = 0; i < 6; ++i) in.push_back(random_tensor(rng, {n, 4}));
      merge(e, grad_check(
                   [seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     std::array<Tensor<double>, 6> rs{in[0], in[1], in[2], in[3], in[4], in[5]};
                     return weighted_sum(t, ops::stack_score_grid(t, rs), 8600 + seed);
                   },
                   in));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"theta_fixup", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1800 + seed);
      const int n = rng.range(1, 3);
      Tensor<double> theta = Tensor<double>::zeros({n, 6});
      for (int b = 0; b < n; ++b) {
        // Keep |det| comfortably above the threshold so the branch is stable.
        theta.at({b, 0}) = rng.uniform(0.7, 1.3);
        theta.at({b, 1}) = rng.uniform(-0.2, 0.2);
        theta.at({b, 2}) = rng.uniform(-0.3, 0.3);
        theta.at({b, 3}) = rng.uniform(-0.2, 0.2);
        theta.at({b, 4}) = rng.uniform(0.7, 1.3);
        theta.at({b, 5}) = rng.uniform(-0.3, 0.3);
      }
      Tensor<double> mask = Tensor<double>::full({n, 1, 4, 4}, 0.6);
      merge(e, grad_check(
                   [mask, seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     auto th = ops::theta_fixup(t, in[0], mask, 1e-3, 1e-3);
                     return weighted_sum(t, th, 8700 + seed);
                   },
                   {theta}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"dice_loss", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1900 + seed);
      const int n = rng.range(1, 2), h = rng.range(2, 5), w = rng.range(2, 5);
      Tensor<double> target = Tensor<double>::zeros({n, 1, h, w});
      for (auto& v : target.data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
      merge(e, grad_check(
                   [target](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return dice_loss(t, in[0], target);
                   },
                   {random_tensor(rng, {n, 1, h, w}, 0.05, 0.95)}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"scce", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(2000 + seed);
      const int n = rng.range(1, 3);
      auto y = random_scores(rng, n);
      merge(e, grad_check(
                   [y](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return scce(t, in[0], y);
                   },
                   {random_tensor(rng, {n, 3, 2, 4}, 0.05, 1.0)}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"mae_d", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(2100 + seed);
      const int n = rng.range(1, 3);
      auto y = random_scores(rng, n);
      merge(e, grad_check(
                   [y](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return mae_d(t, in[0], y, 10.0);
                   },
                   {random_tensor(rng, {n, 3, 2, 4}, 0.0, 1.0)}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"composite_loss", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(2200 + seed);
      const int n = rng.range(1, 3);
      auto y = random_scores(rng, n);
      LossConfig cfg;
      merge(e, grad_check(
                   [y, cfg](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     return composite_loss(t, in[0], y, cfg);
                   },
                   {random_tensor(rng, {n, 3, 2, 4}, 0.05, 1.0)}));
    }
    out.push_back(e);
  }

  {
    SuiteEntry e{"softmax_grid_sample_chain", 0, 0};
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(2300 + seed);
      const int n = 1, c = rng.range(1, 2), h = rng.range(3, 5), w = rng.range(3, 5);
      merge(e, grad_check(
                   [=](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                     auto g = ops::affine_grid(t, in[1], h, w);
                     auto s = ops::grid_sample(t, in[0], g);
                     auto sm = ops::softmax(t, s, 1);
                     return weighted_sum(t, sm, 8800 + seed);
                   },
                   {random_tensor(rng, {n, c, h, w}),
                    Tensor<double>::from({0.9973, 0.0513, 0.0237, -0.0321, 1.0031, 0.0457},
                                         {n, 6})}));
    }
    out.push_back(e);
  }

  return out;
}

}  // namespace bsnet::testing
