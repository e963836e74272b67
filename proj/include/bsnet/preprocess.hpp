#pragma once

#include "bsnet/image.hpp"

namespace bsnet {

// Contrast-limited adaptive histogram equalization. The image is divided into
// a tiles×tiles grid (tiles clamped to the image size so every tile is
// non-empty). Each tile gets a `bins`-bin histogram; counts above
// ceil(clip_limit * tile_area) are clipped and the excess is redistributed
// uniformly. The equalization map is the clipped CDF with linear
// interpolation inside bins, so an already-equalized tile maps (almost) to
// itself. Per-pixel output blends the four nearest tile maps bilinearly.
GrayImage clahe(const GrayImage& img, float clip_limit = 0.01f, int tiles = 8, int bins = 256);

// 3x3 median filter with edge replication.
GrayImage median3(const GrayImage& img);

// Clips to the [lo_pct, hi_pct] percentile values (linear-interpolation
// percentiles over the sorted pixels) and rescales that range to [0,1].
// Degenerate range (hi <= lo) returns the image unchanged.
GrayImage percentile_rescale(const GrayImage& img, float lo_pct = 2.0f, float hi_pct = 98.0f);

// Full normalization: CLAHE (clip 0.01, 8x8 tiles, 256 bins), 3x3 median,
// percentile clip at 2/98, rescale to [0,1]. A constant image is returned
// unchanged.
GrayImage normalize_cxr(const GrayImage& img);

}  // namespace bsnet
