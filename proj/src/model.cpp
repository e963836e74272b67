#include "bsnet/model.hpp"

#include <cmath>

#include "bsnet/regions.hpp"
#include "bsnet/rng.hpp"

namespace bsnet {

void ModelConfig::validate() const {
  contract(input_size >= 16 && input_size % 16 == 0,
           "ModelConfig: input_size must be a multiple of 16 and at least 16");
  for (int w : widths) contract(w > 0, "ModelConfig: widths must be positive");
  contract(fpn_channels > 0, "ModelConfig: fpn_channels must be positive");
}

void ScoreDistribution::validate() const {
  for (float v : p) contract(v >= 0.0f, "ScoreDistribution: negative probability");
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 2; ++col) {
      float s = 0.0f;
      for (int k = 0; k < 4; ++k) s += at(row, col, k);
      contract(std::abs(s - 1.0f) <= 1e-5f, "ScoreDistribution: region slice does not sum to 1");
    }
}

ScoreDistribution ensemble(const std::vector<ScoreDistribution>& dists) {
  contract(!dists.empty(), "ensemble: empty member list");
  ScoreDistribution out;
  for (const auto& d : dists)
    for (size_t i = 0; i < out.p.size(); ++i) out.p[i] += d.p[i];
  for (auto& v : out.p) v /= static_cast<float>(dists.size());
  out.validate();
  return out;
}

BrixiaScore predict_score(const ScoreDistribution& dist) {
  BrixiaScore s;
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 2; ++col) {
      int best = 0;
      for (int k = 1; k < 4; ++k)
        if (dist.at(row, col, k) > dist.at(row, col, best)) best = k;
      s.at(row, col) = best;
    }
  return s;
}

ScoreDistribution dist_from_tensor(const Tensor<float>& t, int n) {
  contract(t.rank() == 4 && t.dim(1) == 3 && t.dim(2) == 2 && t.dim(3) == 4,
           "dist_from_tensor: expected [N,3,2,4]");
  contract(n >= 0 && n < t.dim(0), "dist_from_tensor: batch index out of range");
  ScoreDistribution d;
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 2; ++col)
      for (int k = 0; k < 4; ++k) d.at(row, col, k) = t.at({n, row, col, k});
  return d;
}

template <typename T>
Tensor<T>& Model<T>::add(const std::string& name, std::vector<int> shape) {
  contract(index_.find(name) == index_.end(), "Model: duplicate parameter " + name);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(Tensor<T>::zeros(std::move(shape)));
  tensors_.back().set_requires_grad(true);
  return tensors_.back();
}

template <typename T>
const Tensor<T>& Model<T>::p(const std::string& name) const {
  auto it = index_.find(name);
  contract(it != index_.end(), "Model: unknown parameter " + name);
  return tensors_[it->second];
}

template <typename T>
Tensor<T>& Model<T>::param(const std::string& name) {
  auto it = index_.find(name);
  contract(it != index_.end(), "Model: unknown parameter " + name);
  return tensors_[it->second];
}

template <typename T>
const Tensor<T>& Model<T>::param(const std::string& name) const {
  return p(name);
}

template <typename T>
size_t Model<T>::scalar_count() const {
  size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

template <typename T>
void Model<T>::set_trainable(const std::function<bool(const std::string&)>& pred) {
  for (size_t i = 0; i < names_.size(); ++i) tensors_[i].set_requires_grad(pred(names_[i]));
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  auto he = [&](Tensor<T>& t, int fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal() * sd);
  };
  auto conv = [&](const std::string& name, int cout, int cin, int k) {
    he(add(name + ".w", {cout, cin, k, k}), cin * k * k);
    add(name + ".b", {cout});
  };

  const auto& w = cfg_.widths;
  conv("backbone.stem", w[0], 1, 3);
  for (int s = 0; s < 4; ++s) {
    const int cin = s == 0 ? w[0] : w[static_cast<size_t>(s - 1)];
    const int c = w[static_cast<size_t>(s)];
    const std::string base = "backbone.s" + std::to_string(s);
    conv(base + ".r0.c0", c, cin, 3);
    conv(base + ".r0.c1", c, c, 3);
    if (s > 0) conv(base + ".r0.proj", c, cin, 1);
    conv(base + ".r1.c0", c, c, 3);
    conv(base + ".r1.c1", c, c, 3);
  }

  conv("decoder.n01", w[0], w[0] + w[1], 3);
  conv("decoder.n11", w[1], w[1] + w[2], 3);
  conv("decoder.n21", w[2], w[2] + w[3], 3);
  conv("decoder.n02", w[0], 2 * w[0] + w[1], 3);
  add("decoder.head.w", {2, w[0], 1, 1});  // zero: untrained mask is exactly 0.5
  add("decoder.head.b", {2});

  conv("align.c0", 8, 1, 3);
  conv("align.c1", 16, 8, 3);
  conv("align.c2", 16, 16, 3);
  conv("align.c3", 32, 16, 4);
  add("align.out.w", {32, 6});  // zero: untrained theta is exactly the identity
  Tensor<T>& tb = add("align.out.b", {6});
  tb.data()[0] = T(1);
  tb.data()[4] = T(1);

  const int fc = cfg_.fpn_channels;
  for (int l = 0; l < 4; ++l)
    conv("fpn.lat" + std::to_string(l), fc, w[static_cast<size_t>(l)], 1);
  conv("score.conv", fc, fc, 3);
  he(add("score.out.w", {fc, 4}), fc);
  add("score.out.b", {4});
}

template <typename T>
Tensor<T> Model<T>::residual_stage(Tape<T>& tape, const Tensor<T>& x, int stage,
                                   int stride) const {
  const std::string base = "backbone.s" + std::to_string(stage);
  Tensor<T> cur = x;
  for (int b = 0; b < 2; ++b) {
    const std::string rb = base + ".r" + std::to_string(b);
    const int s = b == 0 ? stride : 1;
    Tensor<T> y = ops::conv2d(tape, cur, p(rb + ".c0.w"), p(rb + ".c0.b"), s, 1);
    y = ops::relu(tape, y);
    y = ops::conv2d(tape, y, p(rb + ".c1.w"), p(rb + ".c1.b"), 1, 1);
    Tensor<T> skip = cur;
    if (b == 0 && index_.find(rb + ".proj.w") != index_.end())
      skip = ops::conv2d(tape, cur, p(rb + ".proj.w"), p(rb + ".proj.b"), s, 0);
    cur = ops::relu(tape, ops::add(tape, y, skip));
  }
  return cur;
}

template <typename T>
std::array<Tensor<T>, 4> Model<T>::backbone(Tape<T>& tape, const Tensor<T>& img) const {
  contract(img.rank() == 4 && img.dim(1) == 1 && img.dim(2) == cfg_.input_size &&
               img.dim(3) == cfg_.input_size,
           "backbone: image must be [N,1,S,S] at the configured input size");
  Tensor<T> e = ops::relu(tape, ops::conv2d(tape, img, p("backbone.stem.w"),
                                            p("backbone.stem.b"), 2, 1));
  std::array<Tensor<T>, 4> out;
  out[0] = residual_stage(tape, e, 0, 1);
  out[1] = residual_stage(tape, out[0], 1, 2);
  out[2] = residual_stage(tape, out[1], 2, 2);
  out[3] = residual_stage(tape, out[2], 3, 2);
  return out;
}

template <typename T>
Tensor<T> Model<T>::decode_mask(Tape<T>& tape, const std::array<Tensor<T>, 4>& feats) const {
  auto up = [&](const Tensor<T>& t) { return ops::upsample_x2(tape, t); };
  auto node = [&](const std::string& name, const std::vector<Tensor<T>>& parts) {
    Tensor<T> c = ops::concat_channels(tape, parts);
    return ops::relu(tape,
                     ops::conv2d(tape, c, p(name + ".w"), p(name + ".b"), 1, 1));
  };
  Tensor<T> x01 = node("decoder.n01", {feats[0], up(feats[1])});
  Tensor<T> x11 = node("decoder.n11", {feats[1], up(feats[2])});
  Tensor<T> x21 = node("decoder.n21", {feats[2], up(feats[3])});
  Tensor<T> x02 = node("decoder.n02", {feats[0], x01, up(x11)});
  Tensor<T> logits =
      ops::conv2d(tape, x02, p("decoder.head.w"), p("decoder.head.b"), 1, 0);
  Tensor<T> probs = ops::softmax(tape, ops::upsample_x2(tape, logits), 1);
  return ops::slice_channels(tape, probs, 0, 1);
}

template <typename T>
Tensor<T> Model<T>::predict_mask(Tape<T>& tape, const Tensor<T>& img) const {
  return decode_mask(tape, backbone(tape, img));
}

template <typename T>
Tensor<T> Model<T>::estimate_affine(Tape<T>& tape, const Tensor<T>& mask) const {
  contract(mask.rank() == 4 && mask.dim(1) == 1 && mask.dim(2) == cfg_.input_size &&
               mask.dim(3) == cfg_.input_size,
           "estimate_affine: mask must be [N,1,S,S] at the configured input size");
  Tensor<T> a = ops::relu(tape, ops::conv2d(tape, mask, p("align.c0.w"), p("align.c0.b"), 2, 1));
  a = ops::relu(tape, ops::conv2d(tape, a, p("align.c1.w"), p("align.c1.b"), 2, 1));
  a = ops::relu(tape, ops::conv2d(tape, a, p("align.c2.w"), p("align.c2.b"), 2, 1));
  a = ops::adaptive_avg_pool(tape, a, 4, 4);
  a = ops::relu(tape, ops::conv2d(tape, a, p("align.c3.w"), p("align.c3.b"), 1, 0));
  Tensor<T> v = ops::global_avg_pool(tape, a);
  return ops::dense(tape, v, p("align.out.w"), p("align.out.b"));
}

template <typename T>
typename Model<T>::Aligned Model<T>::align_features(Tape<T>& tape,
                                                    const std::array<Tensor<T>, 4>& feats,
                                                    const Tensor<T>& mask, const Tensor<T>& theta,
                                                    AttentionMode mode) const {
  Aligned out;
  Tensor<T> grid_full = ops::affine_grid(tape, theta, mask.dim(2), mask.dim(3));
  out.mask = ops::grid_sample(tape, mask, grid_full);
  Tensor<T> mlev = out.mask;
  for (int l = 0; l < 4; ++l) {
    mlev = ops::avg_pool2x2(tape, mlev);
    Tensor<T> grid = ops::affine_grid(tape, theta, feats[l].dim(2), feats[l].dim(3));
    Tensor<T> f = ops::grid_sample(tape, feats[l], grid);
    if (mode == AttentionMode::HardAttention) f = ops::mask_mul(tape, f, mlev);
    out.levels[static_cast<size_t>(l)] = f;
  }
  return out;
}

template <typename T>
std::array<std::array<Tensor<T>, 4>, 6> Model<T>::roi_pool(
    Tape<T>& tape, const std::array<Tensor<T>, 4>& aligned) const {
  std::array<std::array<Tensor<T>, 4>, 6> out;
  for (int l = 0; l < 4; ++l) {
    const Tensor<T>& f = aligned[static_cast<size_t>(l)];
    const int h = f.dim(2), w = f.dim(3);
    for (int reg = 0; reg < 6; ++reg) {
      const int row = reg % 3, col = reg / 3;
      Tensor<T> crop = ops::crop2d(tape, f, band_start(h, row), column_start(w, col),
                                   band_height(h), column_width(w, col));
      out[static_cast<size_t>(reg)][static_cast<size_t>(l)] =
          ops::adaptive_avg_pool(tape, crop, 4, 4);
    }
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::score_forward(Tape<T>& tape,
                                  const std::array<std::array<Tensor<T>, 4>, 6>& regions) const {
  std::array<Tensor<T>, 6> logits;
  for (int reg = 0; reg < 6; ++reg) {
    Tensor<T> pyr;
    for (int l = 3; l >= 0; --l) {
      const std::string lat = "fpn.lat" + std::to_string(l);
      Tensor<T> x = ops::conv2d(tape, regions[static_cast<size_t>(reg)][static_cast<size_t>(l)],
                                p(lat + ".w"), p(lat + ".b"), 1, 0);
      pyr = l == 3 ? x : ops::add(tape, x, pyr);
    }
    Tensor<T> h =
        ops::relu(tape, ops::conv2d(tape, pyr, p("score.conv.w"), p("score.conv.b"), 1, 1));
    Tensor<T> g = ops::global_avg_pool(tape, h);
    logits[static_cast<size_t>(reg)] = ops::dense(tape, g, p("score.out.w"), p("score.out.b"));
  }
  Tensor<T> grid = ops::stack_score_grid(tape, logits);
  return ops::softmax(tape, grid, 3);
}

template <typename T>
ForwardResult<T> Model<T>::forward_full(Tape<T>& tape, const Tensor<T>& img,
                                        AttentionMode mode) const {
  ForwardResult<T> r;
  const std::array<Tensor<T>, 4> feats = backbone(tape, img);
  r.mask = decode_mask(tape, feats);
  Tensor<T> raw = estimate_affine(tape, r.mask);
  r.theta = ops::theta_fixup(tape, raw, r.mask, T(1e-3), T(1e-3), &r.theta_fallback);
  const Aligned aligned = align_features(tape, feats, r.mask, r.theta, mode);
  const auto regions = roi_pool(tape, aligned.levels);
  r.dist = score_forward(tape, regions);
  return r;
}

Model<double> to_double(const Model<float>& m) {
  Model<double> out(m.config(), 0);
  for (const std::string& name : m.param_names()) {
    const Tensor<float>& src = m.param(name);
    Tensor<double>& dst = out.param(name);
    contract(src.numel() == dst.numel(), "to_double: shape mismatch for " + name);
    for (size_t i = 0; i < src.numel(); ++i)
      dst.data()[i] = static_cast<double>(src.data()[i]);
    dst.set_requires_grad(src.requires_grad());
  }
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace bsnet
