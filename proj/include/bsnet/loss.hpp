#pragma once

#include <optional>
#include <vector>

#include "bsnet/score.hpp"
#include "bsnet/tensor.hpp"

namespace bsnet {

struct LossConfig {
  double alpha = 0.7;  // weight of the cross-entropy term
  double beta = 10.0;  // sharpness of the differentiable expected-class index
};

// pred: probabilities [N,1,H,W]; target: binary mask, same shape.
// 1 - (2|P.T| + eps) / (|P| + |T| + eps), eps = 1, with the sums taken over
// every pixel of the batch jointly.
template <typename T>
Tensor<T> dice_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target);

// dist: class distributions [N,3,2,4] (rows x cols x classes). Mean over the
// six regions (and the batch) of -log p(true class), p clamped at 1e-12.
template <typename T>
Tensor<T> scce(Tape<T>& tape, const Tensor<T>& dist, const std::vector<BrixiaScore>& y);

// Per region: e = sum_c c * softmax(beta * p)_c; contribution |y - e|; mean
// over regions and batch.
template <typename T>
Tensor<T> mae_d(Tape<T>& tape, const Tensor<T>& dist, const std::vector<BrixiaScore>& y, T beta);

template <typename T>
Tensor<T> composite_loss(Tape<T>& tape, const Tensor<T>& dist, const std::vector<BrixiaScore>& y,
                         const LossConfig& cfg);

struct OverlapMetrics {
  double dice = 0.0;
  double iou = 0.0;
};

// Thresholds both inputs at 0.5. Two empty masks count as perfect overlap.
template <typename T>
OverlapMetrics overlap_metrics(const Tensor<T>& pred, const Tensor<T>& target);

enum class StatScope { kPerRegion, kRegionAverage, kGlobalScore };

struct ErrorStats {
  StatScope scope = StatScope::kPerRegion;
  int region = -1;  // set for kPerRegion
  double mer = 0.0;
  double mae = 0.0;
  double sd = 0.0;
  std::optional<double> cc;
};

// kPerRegion needs region in 0..5; kRegionAverage averages the six per-region
// stats (CC averaged over regions where it is defined); kGlobalScore runs on
// the global sums.
ErrorStats error_stats(const std::vector<BrixiaScore>& preds, const std::vector<BrixiaScore>& refs,
                       StatScope scope, int region = -1);

// Counts entry [r][p] for reference r, prediction p.
std::vector<std::vector<int>> confusion_matrix(const std::vector<int>& preds,
                                               const std::vector<int>& refs, int domain_size);

}  // namespace bsnet
