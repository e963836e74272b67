#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bsnet/ops.hpp"
#include "bsnet/score.hpp"
#include "bsnet/tensor.hpp"

namespace bsnet {

// HardAttention multiplies every aligned pyramid level by the aligned lung
// mask; SoftAttention uses the mask only to estimate the transform.
enum class AttentionMode { HardAttention, SoftAttention };

struct ModelConfig {
  int input_size = 128;
  std::array<int, 4> widths = {12, 24, 36, 48};  // pyramid strides 2,4,8,16
  int fpn_channels = 24;

  void validate() const;
};

// (a,b,tx,c,d,ty) of the 2x3 sampling matrix in normalized coordinates.
struct AffineParams {
  std::array<float, 6> m{1.0f, 0.0f, 0.0f, 0.0f, 1.0f, 0.0f};
  bool fallback = false;  // identity substituted for a degenerate estimate

  bool identity() const {
    return m[0] == 1.0f && m[1] == 0.0f && m[2] == 0.0f && m[3] == 0.0f && m[4] == 1.0f &&
           m[5] == 0.0f;
  }
};

// [3 rows][2 columns][4 classes]; each region slice is a distribution.
struct ScoreDistribution {
  std::array<float, 24> p{};

  float& at(int row, int col, int cls) {
    return p[static_cast<size_t>(row * 8 + col * 4 + cls)];
  }
  float at(int row, int col, int cls) const {
    return p[static_cast<size_t>(row * 8 + col * 4 + cls)];
  }
  void validate() const;
};

// Elementwise mean of the member distributions.
ScoreDistribution ensemble(const std::vector<ScoreDistribution>& dists);

// Per-region argmax; ties resolve to the lower class.
BrixiaScore predict_score(const ScoreDistribution& dist);

// Batch item n of a [N,3,2,4] forward output.
ScoreDistribution dist_from_tensor(const Tensor<float>& t, int n);

template <typename T>
struct ForwardResult {
  Tensor<T> dist;   // [N,3,2,4]
  Tensor<T> mask;   // [N,1,H,W] lung probability
  Tensor<T> theta;  // [N,6] after the degenerate-estimate fixup
  std::vector<bool> theta_fallback;
};

// Backbone + U-Net++ mask decoder + affine regressor + FPN scoring head.
// Parameters live in a stable, named registry; name prefixes group them
// into the trainable units of the staged schedule: "backbone." and
// "decoder." (segmentation), "align." (alignment), "fpn." and "score."
// (scoring head). Weights are He-normal from the init seed except the two
// contract-pinned layers: the mask head is zero (untrained mask exactly
// 0.5) and the regressor output is zero with identity bias (untrained
// theta exactly the identity).
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }

  const std::vector<std::string>& param_names() const { return names_; }
  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;
  size_t scalar_count() const;
  void set_trainable(const std::function<bool(const std::string&)>& pred);

  std::array<Tensor<T>, 4> backbone(Tape<T>& tape, const Tensor<T>& img) const;
  Tensor<T> decode_mask(Tape<T>& tape, const std::array<Tensor<T>, 4>& feats) const;
  Tensor<T> predict_mask(Tape<T>& tape, const Tensor<T>& img) const;

  // Raw [N,6] estimate; forward_full routes it through theta_fixup.
  Tensor<T> estimate_affine(Tape<T>& tape, const Tensor<T>& mask) const;

  struct Aligned {
    std::array<Tensor<T>, 4> levels;
    Tensor<T> mask;  // aligned, input resolution
  };
  Aligned align_features(Tape<T>& tape, const std::array<Tensor<T>, 4>& feats,
                         const Tensor<T>& mask, const Tensor<T>& theta, AttentionMode mode) const;

  // Region-major: six stacks of four [N,C_l,4,4] pooled crops.
  std::array<std::array<Tensor<T>, 4>, 6> roi_pool(Tape<T>& tape,
                                                   const std::array<Tensor<T>, 4>& aligned) const;
  Tensor<T> score_forward(Tape<T>& tape,
                          const std::array<std::array<Tensor<T>, 4>, 6>& regions) const;

  ForwardResult<T> forward_full(Tape<T>& tape, const Tensor<T>& img, AttentionMode mode) const;

 private:
  Tensor<T>& add(const std::string& name, std::vector<int> shape);
  const Tensor<T>& p(const std::string& name) const;
  Tensor<T> residual_stage(Tape<T>& tape, const Tensor<T>& x, int stage, int stride) const;

  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// Exact-value copy into a double model for the 64-bit check mode.
Model<double> to_double(const Model<float>& m);

}  // namespace bsnet
