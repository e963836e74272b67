#pragma once

#include <algorithm>
#include <cmath>

#include "bsnet/tensor.hpp"

namespace bsnet {

// Six-region geometry shared by ground-truth placement and ROI pooling:
// three vertical bands starting at 0, round(0.3H), round(0.6H), all of
// height H - round(0.6H) (25% overlap between consecutive bands), crossed
// with two columns split at floor(W/2). Region index follows the score
// layout: r in [0,6), row = r % 3, column = r / 3. Bands and columns are
// clamped to at least one pixel so the geometry stays usable on tiny
// pyramid levels (feature maps smaller than 3x2).

inline int band_height(int height) {
  return std::max(1, height - static_cast<int>(std::lround(0.6 * height)));
}

inline int band_start(int height, int band) {
  contract(band >= 0 && band < 3, "band_start: band must be 0, 1, or 2");
  if (band == 0) return 0;
  const double f = band == 1 ? 0.3 : 0.6;
  const int s = static_cast<int>(std::lround(f * height));
  return std::min(s, height - band_height(height));
}

inline int column_width(int width, int col) {
  contract(col == 0 || col == 1, "column_width: column must be 0 or 1");
  return col == 0 ? std::max(1, width / 2) : width - std::min(width / 2, width - 1);
}

inline int column_start(int width, int col) {
  contract(col == 0 || col == 1, "column_start: column must be 0 or 1");
  return col == 0 ? 0 : std::min(width / 2, width - 1);
}

inline bool in_region(int r, int c, int region, int height, int width) {
  const int row = region % 3, col = region / 3;
  const int r0 = band_start(height, row);
  const int c0 = column_start(width, col);
  return r >= r0 && r < r0 + band_height(height) && c >= c0 && c < c0 + column_width(width, col);
}

}  // namespace bsnet
