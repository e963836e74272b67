#pragma once

#include <optional>

#include "bsnet/image.hpp"
#include "bsnet/score.hpp"

namespace bsnet {

struct AugmentConfig {
  float hflip_prob = 0.5f;

  float p_geometric = 0.8f;
  float max_rotation_deg = 25.0f;
  float max_scale = 0.10f;  // scale drawn in [1-max_scale, 1+max_scale]
  float max_shift = 0.10f;  // fraction of the image dimension

  float p_elastic_family = 0.2f;  // one of elastic / grid / optical, uniformly
  float elastic_alpha = 60.0f;    // pixels at the 512 reference resolution
  float elastic_sigma = 12.0f;    // pixels at the 512 reference resolution
  int grid_steps = 5;
  float grid_limit = 0.3f;
  float optical_distort = 0.2f;
  float optical_shift = 0.05f;  // fraction of the image dimension

  float p_photometric = 0.5f;
  float brightness_limit = 0.2f;
  float contrast_limit = 0.2f;

  void validate() const;
};

struct AugmentResult {
  GrayImage image;
  std::optional<GrayImage> mask;
  std::optional<BrixiaScore> score;
};

// Row-major 2x3 sampling matrix in pixel coordinates:
//   in_x = m[0]*out_x + m[1]*out_y + m[2]
//   in_y = m[3]*out_x + m[4]*out_y + m[5]
struct Affine2D {
  float m[6] = {1, 0, 0, 0, 1, 0};
};

// Sampling matrix whose visual effect rotates the content by rot_deg about
// the image center, scales it by `scale`, then shifts it by
// (shift_x_frac*W, shift_y_frac*H) pixels.
Affine2D make_affine(float rot_deg, float scale, float shift_x_frac, float shift_y_frac,
                     int height, int width);
Affine2D invert_affine(const Affine2D& a);
Affine2D compose(const Affine2D& outer, const Affine2D& inner);

// Bilinear resample at the matrix-mapped source position; out-of-range taps
// read as zero.
GrayImage warp_affine(const GrayImage& img, const Affine2D& a);

// Exact column reversal (no resampling), so double application restores the
// input bit-for-bit.
GrayImage hflip_image(const GrayImage& img);

// Bilinear resample at (r + dy, c + dx); out-of-range taps read as zero.
GrayImage warp_displacement(const GrayImage& img, const std::vector<float>& dx,
                            const std::vector<float>& dy);

GrayImage resize_bilinear(const GrayImage& img, int out_height, int out_width);

// Applies, in this fixed order, each stage gated by its own probability draw:
// horizontal flip (also swaps the score columns), affine
// rotation/scale/shift, one elastic-family distortion (elastic, grid, or
// optical displacement field), brightness/contrast jitter (image only).
// Geometric stages hit image and mask identically. Same seed, same output.
AugmentResult augment(const GrayImage& img, const GrayImage* mask, const BrixiaScore* score,
                      const AugmentConfig& cfg, uint64_t seed);

}  // namespace bsnet
