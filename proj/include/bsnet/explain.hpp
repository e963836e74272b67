#pragma once

#include <array>
#include <string>
#include <vector>

#include "bsnet/image.hpp"
#include "bsnet/model.hpp"
#include "bsnet/superpixel.hpp"

namespace bsnet {

// Per-pixel, per-region, per-class relevance E = sum_i S_i * (p_i - p_0):
// the shift in every region/class probability when the superpixel covering
// that pixel is masked to zero. By construction E is constant within each
// superpixel for every (region, class) channel.
struct ExplanationMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;  // [r][c][row][col][cls], H*W*3*2*4
  SuperpixelMap superpixels;
  ScoreDistribution baseline;                 // p_0
  std::vector<std::array<float, 24>> deltas;  // per superpixel, p_i - p_0
  int forward_passes = 0;

  float at(int r, int c, int row, int col, int cls) const {
    return values[(static_cast<size_t>(r) * width + c) * 24 + row * 8 + col * 4 + cls];
  }
};

// Masks each superpixel to zero in turn and accumulates the prediction
// shifts; exactly superpixels.count + 1 forward passes.
ExplanationMap explanation_map(const Model<float>& model, const GrayImage& img, int n_superpixels,
                               AttentionMode mode);

// Region a pixel renders under: the column split crossed with the nearest
// band center among the bands containing the row (overlap rows resolve to
// one band).
int render_region(int r, int c, int height, int width);

// Each pixel takes its region's predicted class k and supportiveness -E at
// k (masking the superpixel lowered the class probability, so the pixel
// supports the prediction). Non-positive supportiveness renders white;
// positive renders the class color (0 green, 1 orange, 2 red, 3 black) at
// opacity r / max r.
std::vector<uint8_t> render_rgb(const ExplanationMap& e, const BrixiaScore& pred);

// render_rgb written as an 8-bit RGB PNG at map resolution.
void render_explanation(const ExplanationMap& e, const BrixiaScore& pred, const std::string& out);

// One row per (superpixel, region, class): superpixel_id,region,class,delta.
void write_explanation_csv(const ExplanationMap& e, const std::string& path);

}  // namespace bsnet
