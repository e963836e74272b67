#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "bsnet/model.hpp"
#include "bsnet/ops.hpp"
#include "bsnet/regions.hpp"
#include "bsnet/rng.hpp"

using namespace bsnet;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.widths = {4, 6, 8, 10};
  cfg.fpn_channels = 6;
  return cfg;
}

template <typename T>
Tensor<T> random_image(int n, int size, uint64_t seed) {
  Rng rng(seed);
  Tensor<T> img = Tensor<T>::zeros({n, 1, size, size});
  for (auto& v : img.data()) v = static_cast<T>(rng.uniform());
  return img;
}

template <typename T>
Tensor<T> random_feat(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return t;
}

// Rows (a,b,tx,c,d,ty) kept inside |a|+|b|+2|tx| <= 1 so sampling stays
// in range down to a 2x2 pyramid level.
Tensor<float> bounded_theta(int n, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> th = Tensor<float>::zeros({n, 6});
  for (int i = 0; i < n; ++i) {
    th.at({i, 0}) = static_cast<float>(rng.uniform(0.80, 0.92));
    th.at({i, 1}) = static_cast<float>(rng.uniform(-0.02, 0.02));
    th.at({i, 2}) = static_cast<float>(rng.uniform(-0.02, 0.02));
    th.at({i, 3}) = static_cast<float>(rng.uniform(-0.02, 0.02));
    th.at({i, 4}) = static_cast<float>(rng.uniform(0.80, 0.92));
    th.at({i, 5}) = static_cast<float>(rng.uniform(-0.02, 0.02));
  }
  return th;
}

Tensor<float> identity_theta(int n) {
  Tensor<float> th = Tensor<float>::zeros({n, 6});
  for (int i = 0; i < n; ++i) {
    th.at({i, 0}) = 1.0f;
    th.at({i, 4}) = 1.0f;
  }
  return th;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

// Small random perturbation of the contract-pinned heads so forwards
// produce nontrivial masks and transforms.
void perturb_heads(Model<float>& m, uint64_t seed) {
  Rng rng(seed);
  for (auto& v : m.param("decoder.head.w").data()) v = static_cast<float>(rng.normal() * 0.3);
  for (auto& v : m.param("align.out.w").data()) v = static_cast<float>(rng.normal() * 0.02);
}

ScoreDistribution dist_of(const std::array<float, 24>& p) {
  ScoreDistribution d;
  d.p = p;
  return d;
}

}  // namespace

TEST_CASE("untrained model predicts an exactly 0.5 lung mask") {
  Model<float> m(small_config(), 11);
  Tape<float> tape(false);
  Tensor<float> mask = m.predict_mask(tape, random_image<float>(2, 32, 5));
  CHECK(mask.dim(0) == 2);
  CHECK(mask.dim(1) == 1);
  CHECK(mask.dim(2) == 32);
  CHECK(mask.dim(3) == 32);
  for (float v : mask.data()) CHECK(v == 0.5f);
}

TEST_CASE("untrained model estimates exactly the identity transform") {
  Model<float> m(small_config(), 12);
  Tape<float> tape(false);
  ForwardResult<float> r = m.forward_full(tape, random_image<float>(3, 32, 6),
                                          AttentionMode::SoftAttention);
  for (int n = 0; n < 3; ++n) {
    CHECK(r.theta.at({n, 0}) == 1.0f);
    CHECK(r.theta.at({n, 1}) == 0.0f);
    CHECK(r.theta.at({n, 2}) == 0.0f);
    CHECK(r.theta.at({n, 3}) == 0.0f);
    CHECK(r.theta.at({n, 4}) == 1.0f);
    CHECK(r.theta.at({n, 5}) == 0.0f);
    CHECK_FALSE(r.theta_fallback[static_cast<size_t>(n)]);
  }
}

TEST_CASE("backbone produces the documented four-level pyramid") {
  ModelConfig cfg;
  cfg.input_size = 64;
  Model<float> m(cfg, 13);
  Tape<float> tape(false);
  auto feats = m.backbone(tape, random_image<float>(2, 64, 7));
  const std::array<std::array<int, 4>, 4> want = {{{2, 12, 32, 32},
                                                   {2, 24, 16, 16},
                                                   {2, 36, 8, 8},
                                                   {2, 48, 4, 4}}};
  for (int l = 0; l < 4; ++l)
    for (int d = 0; d < 4; ++d)
      CHECK(feats[static_cast<size_t>(l)].dim(d) == want[static_cast<size_t>(l)][static_cast<size_t>(d)]);
}

TEST_CASE("forward distributions are normalized in both attention modes") {
  for (uint64_t seed : {21u, 22u, 23u, 24u}) {
    Model<float> m(small_config(), seed);
    perturb_heads(m, seed * 31 + 7);
    for (AttentionMode mode : {AttentionMode::HardAttention, AttentionMode::SoftAttention}) {
      Tape<float> tape(false);
      ForwardResult<float> r = m.forward_full(tape, random_image<float>(2, 32, seed + 100), mode);
      CHECK(r.dist.dim(0) == 2);
      CHECK(r.dist.dim(1) == 3);
      CHECK(r.dist.dim(2) == 2);
      CHECK(r.dist.dim(3) == 4);
      for (int n = 0; n < 2; ++n) {
        ScoreDistribution d = dist_from_tensor(r.dist, n);
        CHECK_NOTHROW(d.validate());
      }
      for (float v : r.mask.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
  }
}

TEST_CASE("identity transform leaves soft-attention features bitwise unchanged") {
  Model<float> m(small_config(), 31);
  Tape<float> tape(false);
  std::array<Tensor<float>, 4> feats = {
      random_feat<float>({2, 4, 16, 16}, 41), random_feat<float>({2, 6, 8, 8}, 42),
      random_feat<float>({2, 8, 4, 4}, 43), random_feat<float>({2, 10, 2, 2}, 44)};
  Tensor<float> mask = random_feat<float>({2, 1, 32, 32}, 45);
  for (auto& v : mask.data()) v = std::abs(v);
  auto out = m.align_features(tape, feats, mask, identity_theta(2),
                              AttentionMode::SoftAttention);
  CHECK(bitwise_equal(out.mask, mask));
  for (int l = 0; l < 4; ++l)
    CHECK(bitwise_equal(out.levels[static_cast<size_t>(l)], feats[static_cast<size_t>(l)]));
}

TEST_CASE("hard attention equals soft attention under an all-ones mask") {
  Model<float> m(small_config(), 32);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    std::array<Tensor<float>, 4> feats = {random_feat<float>({2, 4, 16, 16}, 400 + seed),
                                          random_feat<float>({2, 6, 8, 8}, 500 + seed),
                                          random_feat<float>({2, 8, 4, 4}, 600 + seed),
                                          random_feat<float>({2, 10, 2, 2}, 700 + seed)};
    Tensor<float> ones = Tensor<float>::full({2, 1, 32, 32}, 1.0f);
    Tensor<float> theta = bounded_theta(2, 900 + seed);
    Tape<float> t1(false), t2(false);
    auto ha = m.align_features(t1, feats, ones, theta, AttentionMode::HardAttention);
    auto sa = m.align_features(t2, feats, ones, theta, AttentionMode::SoftAttention);
    for (int l = 0; l < 4; ++l)
      CHECK(bitwise_equal(ha.levels[static_cast<size_t>(l)], sa.levels[static_cast<size_t>(l)]));
    for (float v : ha.mask.data()) CHECK(v == 1.0f);
  }
}

TEST_CASE("hard attention under a zero mask zeroes every pyramid level") {
  Model<float> m(small_config(), 33);
  Tape<float> tape(false);
  std::array<Tensor<float>, 4> feats = {
      random_feat<float>({1, 4, 16, 16}, 51), random_feat<float>({1, 6, 8, 8}, 52),
      random_feat<float>({1, 8, 4, 4}, 53), random_feat<float>({1, 10, 2, 2}, 54)};
  Tensor<float> zeros = Tensor<float>::zeros({1, 1, 32, 32});
  auto out = m.align_features(tape, feats, zeros, bounded_theta(1, 55),
                              AttentionMode::HardAttention);
  for (int l = 0; l < 4; ++l)
    for (float v : out.levels[static_cast<size_t>(l)].data()) CHECK(v == 0.0f);
}

TEST_CASE("roi pooling of constant pyramids is constant per level") {
  Model<float> m(small_config(), 34);
  Tape<float> tape(false);
  const std::array<float, 4> vals = {0.25f, -1.5f, 3.0f, 0.125f};
  std::array<Tensor<float>, 4> feats = {Tensor<float>::full({2, 4, 16, 16}, vals[0]),
                                        Tensor<float>::full({2, 6, 8, 8}, vals[1]),
                                        Tensor<float>::full({2, 8, 4, 4}, vals[2]),
                                        Tensor<float>::full({2, 10, 2, 2}, vals[3])};
  auto pooled = m.roi_pool(tape, feats);
  for (int reg = 0; reg < 6; ++reg)
    for (int l = 0; l < 4; ++l) {
      const Tensor<float>& t = pooled[static_cast<size_t>(reg)][static_cast<size_t>(l)];
      CHECK(t.dim(2) == 4);
      CHECK(t.dim(3) == 4);
      for (float v : t.data()) CHECK(v == vals[static_cast<size_t>(l)]);
    }
}

TEST_CASE("roi pooling crops follow the band and column geometry") {
  Model<float> m(small_config(), 35);
  // Marker pyramid: value encodes the region containing each pixel, so a
  // pooled crop whose cells all equal the region id proves the crop stayed
  // inside its own (possibly overlapping) band.
  std::array<Tensor<float>, 4> feats;
  const std::array<int, 4> sizes = {16, 8, 4, 2};
  for (int l = 0; l < 4; ++l)
    feats[static_cast<size_t>(l)] = Tensor<float>::zeros({1, 1, sizes[static_cast<size_t>(l)],
                                                          sizes[static_cast<size_t>(l)]});
  Tape<float> tape(false);
  for (int reg = 0; reg < 6; ++reg) {
    for (int l = 0; l < 4; ++l) {
      const int hw = sizes[static_cast<size_t>(l)];
      Tensor<float>& f = feats[static_cast<size_t>(l)];
      for (int r = 0; r < hw; ++r)
        for (int c = 0; c < hw; ++c)
          f.at({0, 0, r, c}) = in_region(r, c, reg, hw, hw) ? 1.0f : 0.0f;
    }
    auto pooled = m.roi_pool(tape, feats);
    for (int l = 0; l < 4; ++l)
      for (float v : pooled[static_cast<size_t>(reg)][static_cast<size_t>(l)].data())
        CHECK(v == 1.0f);
  }
}

TEST_CASE("scoring head is shared: permuting regions permutes output slices") {
  Model<float> m(small_config(), 36);
  std::array<std::array<Tensor<float>, 4>, 6> regions;
  const std::array<int, 4> chans = {4, 6, 8, 10};
  for (int reg = 0; reg < 6; ++reg)
    for (int l = 0; l < 4; ++l)
      regions[static_cast<size_t>(reg)][static_cast<size_t>(l)] =
          random_feat<float>({2, chans[static_cast<size_t>(l)], 4, 4},
                             1000 + static_cast<uint64_t>(reg * 4 + l));
  std::array<std::array<Tensor<float>, 4>, 6> rotated;
  for (int reg = 0; reg < 6; ++reg) rotated[static_cast<size_t>((reg + 1) % 6)] = regions[static_cast<size_t>(reg)];
  Tape<float> t1(false), t2(false);
  Tensor<float> base = m.score_forward(t1, regions);
  Tensor<float> perm = m.score_forward(t2, rotated);
  for (int n = 0; n < 2; ++n)
    for (int reg = 0; reg < 6; ++reg) {
      const int preg = (reg + 1) % 6;
      for (int k = 0; k < 4; ++k)
        CHECK(base.at({n, reg % 3, reg / 3, k}) == perm.at({n, preg % 3, preg / 3, k}));
    }
}

TEST_CASE("ensemble averages distributions elementwise") {
  ScoreDistribution a = dist_of({1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0,
                                 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0});
  ScoreDistribution b = dist_of({0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0,
                                 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0});
  ScoreDistribution e = ensemble({a, b});
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 2; ++col) {
      CHECK(e.at(row, col, 0) == 0.5f);
      CHECK(e.at(row, col, 1) == 0.5f);
      CHECK(e.at(row, col, 2) == 0.0f);
      CHECK(e.at(row, col, 3) == 0.0f);
    }
  CHECK_THROWS_AS(ensemble({}), std::invalid_argument);
}

TEST_CASE("predicted scores break probability ties toward the lower class") {
  ScoreDistribution d;
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 2; ++col) {
      d.at(row, col, 0) = 0.4f;
      d.at(row, col, 1) = 0.4f;
      d.at(row, col, 2) = 0.1f;
      d.at(row, col, 3) = 0.1f;
    }
  BrixiaScore s = predict_score(d);
  for (int reg = 0; reg < 6; ++reg) CHECK(s[reg] == 0);

  ScoreDistribution u = dist_of({0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f,
                                 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f,
                                 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f});
  BrixiaScore su = predict_score(u);
  for (int reg = 0; reg < 6; ++reg) CHECK(su[reg] == 0);

  // p is [row][col][cls]; BrixiaScore runs A..F down the left column first.
  ScoreDistribution v = dist_of({0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0,
                                 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  CHECK(predict_score(ensemble({v, v})) == predict_score(v));
  BrixiaScore sv = predict_score(v);
  CHECK(sv[0] == 2);
  CHECK(sv[1] == 0);
  CHECK(sv[2] == 2);
  CHECK(sv[3] == 3);
  CHECK(sv[4] == 1);
  CHECK(sv[5] == 3);
}

TEST_CASE("degenerate masks fall back to the identity transform") {
  Model<float> m(small_config(), 37);
  perturb_heads(m, 38);
  Tape<float> tape(false);
  Tensor<float> img = random_image<float>(2, 32, 39);
  auto feats = m.backbone(tape, img);
  Tensor<float> mask = Tensor<float>::zeros({2, 1, 32, 32});
  Tensor<float> raw = m.estimate_affine(tape, mask);
  std::vector<bool> fellback;
  Tensor<float> theta = ops::theta_fixup(tape, raw, mask, 1e-3f, 1e-3f, &fellback);
  for (int n = 0; n < 2; ++n) {
    CHECK(fellback[static_cast<size_t>(n)]);
    CHECK(theta.at({n, 0}) == 1.0f);
    CHECK(theta.at({n, 1}) == 0.0f);
    CHECK(theta.at({n, 2}) == 0.0f);
    CHECK(theta.at({n, 3}) == 0.0f);
    CHECK(theta.at({n, 4}) == 1.0f);
    CHECK(theta.at({n, 5}) == 0.0f);
  }
  auto aligned = m.align_features(tape, feats, mask, theta, AttentionMode::HardAttention);
  for (int l = 0; l < 4; ++l)
    for (float v : aligned.levels[static_cast<size_t>(l)].data()) CHECK(v == 0.0f);
}

TEST_CASE("default configuration stays inside the parameter budget") {
  Model<float> m(ModelConfig{}, 40);
  CHECK(m.scalar_count() <= 500000u);
  CHECK(m.scalar_count() >= 100000u);
}

TEST_CASE("set_trainable freezes exactly the deselected parameter groups") {
  Model<float> m(small_config(), 41);
  auto head_only = [](const std::string& n) {
    return n.rfind("fpn.", 0) == 0 || n.rfind("score.", 0) == 0;
  };
  m.set_trainable(head_only);
  int trainable = 0, frozen = 0;
  for (const std::string& n : m.param_names()) {
    CHECK(m.param(n).requires_grad() == head_only(n));
    (head_only(n) ? trainable : frozen)++;
  }
  CHECK(trainable > 0);
  CHECK(frozen > 0);
  m.set_trainable([](const std::string&) { return true; });
  for (const std::string& n : m.param_names()) CHECK(m.param(n).requires_grad());
}

TEST_CASE("frozen parameters record nothing on the tape") {
  Model<float> m(small_config(), 42);
  m.set_trainable([](const std::string&) { return false; });
  Tape<float> tape(true);
  ForwardResult<float> r = m.forward_full(tape, random_image<float>(1, 32, 43),
                                          AttentionMode::HardAttention);
  CHECK_FALSE(r.dist.requires_grad());
}

TEST_CASE("to_double copies values exactly and keeps the trainable flags") {
  Model<float> m(small_config(), 44);
  perturb_heads(m, 45);
  m.set_trainable([](const std::string& n) { return n.rfind("align.", 0) == 0; });
  Model<double> d = to_double(m);
  for (const std::string& n : m.param_names()) {
    const Tensor<float>& src = m.param(n);
    const Tensor<double>& dst = d.param(n);
    CHECK(dst.requires_grad() == src.requires_grad());
    for (size_t i = 0; i < src.numel(); ++i)
      CHECK(dst.data()[i] == static_cast<double>(src.data()[i]));
  }
}

TEST_CASE("initialization and forwards are deterministic in the seed") {
  Model<float> a(small_config(), 46);
  Model<float> b(small_config(), 46);
  Model<float> c(small_config(), 47);
  CHECK(a.param_names() == b.param_names());
  bool all_equal = true, any_diff = false;
  for (const std::string& n : a.param_names()) {
    if (!bitwise_equal(a.param(n), b.param(n))) all_equal = false;
    if (!bitwise_equal(a.param(n), c.param(n))) any_diff = true;
  }
  CHECK(all_equal);
  CHECK(any_diff);

  Tensor<float> img = random_image<float>(1, 32, 48);
  Tape<float> t1(false), t2(false);
  ForwardResult<float> r1 = a.forward_full(t1, img, AttentionMode::HardAttention);
  ForwardResult<float> r2 = b.forward_full(t2, img, AttentionMode::HardAttention);
  CHECK(bitwise_equal(r1.dist, r2.dist));
  CHECK(bitwise_equal(r1.mask, r2.mask));
  CHECK(bitwise_equal(r1.theta, r2.theta));
}

TEST_CASE("model configs reject bad sizes and widths") {
  ModelConfig bad = small_config();
  bad.input_size = 24;
  CHECK_THROWS_AS(Model<float>(bad, 1), std::invalid_argument);
  bad = small_config();
  bad.input_size = 8;
  CHECK_THROWS_AS(Model<float>(bad, 1), std::invalid_argument);
  bad = small_config();
  bad.widths[2] = 0;
  CHECK_THROWS_AS(Model<float>(bad, 1), std::invalid_argument);
  bad = small_config();
  bad.fpn_channels = -3;
  CHECK_THROWS_AS(Model<float>(bad, 1), std::invalid_argument);
  CHECK_THROWS_AS(Model<float>(small_config(), 1)
                      .param("nonexistent.w"),
                  std::invalid_argument);
}
