#pragma once

#include "bsnet/image.hpp"

namespace bsnet {

struct SuperpixelMap {
  int height = 0;
  int width = 0;
  int count = 0;
  std::vector<int> labels;  // row-major, values in [0, count)

  int at(int r, int c) const {
    contract(r >= 0 && r < height && c >= 0 && c < width, "SuperpixelMap::at: out of range");
    return labels[static_cast<size_t>(r) * width + c];
  }
};

// Grid-seeded SLIC-style clustering. Seeds sit on a gy x gx grid chosen so
// gy*gx tracks n_target with the image aspect; ten assignment/update rounds
// with distance ((I - Ic)/compactness)^2 + d^2/S^2 over a 2S search window;
// fragments smaller than S^2/4 are merged into the neighboring region found
// first in scan order, then labels are compacted. Deterministic.
SuperpixelMap extract_superpixels(const GrayImage& img, int n_target, float compactness = 0.1f);

}  // namespace bsnet
