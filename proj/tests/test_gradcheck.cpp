#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bsnet/loss.hpp"
#include "bsnet/model.hpp"
#include "support/gradcheck_suite.hpp"

TEST_CASE("primitive gradients match central finite differences") {
  const auto suite = bsnet::testing::run_primitive_gradchecks();
  CHECK(suite.size() >= 20);
  for (const auto& e : suite) {
    INFO(e.name << " rel_err " << e.max_rel_err << " over " << e.coords << " coords");
    CHECK(e.coords > 0);
    CHECK(e.max_rel_err <= 1e-3);
    std::printf("  %-28s coords %7zu  max rel err %.3e\n", e.name.c_str(), e.coords,
                e.max_rel_err);
  }
}

TEST_CASE("end-to-end pipeline gradients pass finite differences at 16x16") {
  using namespace bsnet;
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.widths = {3, 4, 5, 6};
  cfg.fpn_channels = 4;
  Model<double> model(cfg, 97);
  {
    // Nudge the two zero-initialized heads so the mask and transform paths
    // carry nontrivial gradients.
    Rng prng(3001);
    for (auto& v : model.param("decoder.head.w").data()) v = prng.normal() * 0.3;
    for (auto& v : model.param("align.out.w").data()) v = prng.normal() * 0.02;
  }

  Rng rng(3002);
  Tensor<double> img = Tensor<double>::zeros({2, 1, 16, 16});
  for (auto& v : img.data()) v = rng.uniform();
  img.set_requires_grad(true);
  Tensor<double> ref_mask = Tensor<double>::zeros({2, 1, 16, 16});
  for (auto& v : ref_mask.data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  std::vector<BrixiaScore> ys(2);
  for (auto& y : ys)
    for (int reg = 0; reg < 6; ++reg) y.v[static_cast<size_t>(reg)] = static_cast<int>(rng.below(4));
  const LossConfig lcfg;

  auto loss_value = [&](AttentionMode mode) {
    Tape<double> t(false);
    ForwardResult<double> r = model.forward_full(t, img, mode);
    return composite_loss(t, r.dist, ys, lcfg).value() + dice_loss(t, r.mask, ref_mask).value();
  };

  for (AttentionMode mode : {AttentionMode::HardAttention, AttentionMode::SoftAttention}) {
    for (const std::string& n : model.param_names()) model.param(n).zero_grad();
    img.zero_grad();
    Tape<double> tape(true);
    ForwardResult<double> r = model.forward_full(tape, img, mode);
    Tensor<double> total =
        ops::add(tape, composite_loss(tape, r.dist, ys, lcfg), dice_loss(tape, r.mask, ref_mask));
    tape.backward(total);

    Rng pick(4000 + (mode == AttentionMode::HardAttention ? 0 : 1));
    double max_rel = 0.0;
    size_t coords = 0;
    auto probe = [&](Tensor<double>& t, size_t idx) {
      const double save = t.data()[idx];
      const double eps = 1e-5;
      t.data()[idx] = save + eps;
      const double fp = loss_value(mode);
      t.data()[idx] = save - eps;
      const double fm = loss_value(mode);
      t.data()[idx] = save;
      const double num = (fp - fm) / (2.0 * eps);
      const double ana = t.grad().data()[idx];
      const double rel =
          std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-3});
      max_rel = std::max(max_rel, rel);
      ++coords;
    };
    for (const std::string& n : model.param_names()) {
      Tensor<double>& t = model.param(n);
      for (int k = 0; k < 2; ++k) probe(t, pick.below(t.numel()));
    }
    for (int k = 0; k < 4; ++k) probe(img, pick.below(img.numel()));

    const char* name = mode == AttentionMode::HardAttention ? "hard attention" : "soft attention";
    std::printf("  end-to-end %-15s coords %7zu  max rel err %.3e\n", name, coords, max_rel);
    CHECK(coords > 100);
    CHECK(max_rel <= 1e-2);
  }
}
