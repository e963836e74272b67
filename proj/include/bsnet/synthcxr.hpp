#pragma once

#include <array>
#include <string>

#include "bsnet/augment.hpp"
#include "bsnet/image.hpp"
#include "bsnet/score.hpp"

namespace bsnet {

struct PhantomSpec {
  uint64_t seed = 0;
  std::array<int, 6> severity{};  // score order A..F
  int height = 128;
  int width = 128;

  // anatomy jitter; bounds chosen so the lungs always stay inside the frame
  // and inside their column halves
  float lung_center_jitter = 0.015f;  // fraction of the dimension
  float lung_axis_jitter = 0.08f;     // fraction of the nominal axis
  int min_rib_bands = 4;
  int max_rib_bands = 6;
  float heart_jitter = 0.03f;
  float artifact_prob = 0.1f;  // synthetic tube / electrode overlays

  void validate() const;
};

struct SampleRecord {
  GrayImage image;
  GrayImage lung_mask;  // binary
  BrixiaScore score;
  std::string id;
};

// Procedural phantom: torso and lung ellipses, rib bands, heart shadow,
// value noise, plus per-region opacity texture monotone in severity. The
// mask covers exactly the two lung ellipses; all severity texture is
// clipped to its region's band, column, and lung interior.
SampleRecord gen_phantom(const PhantomSpec& spec);

struct MisalignedPair {
  GrayImage warped_image;
  GrayImage warped_mask;
  GrayImage original_mask;
  // true generating parameters, for evaluation only (training labels are the
  // original masks)
  float rot_deg = 0.0f;
  float scale = 1.0f;
  float shift_x = 0.0f;
  float shift_y = 0.0f;
  Affine2D sampling;
};

MisalignedPair gen_misaligned_pair(const SampleRecord& sample, uint64_t rng_seed,
                                   float max_rot_deg = 25.0f, float max_scale = 0.10f,
                                   float max_shift = 0.10f);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Writes images/<id>.pgm (16-bit), masks/<id>.pgm (8-bit binary),
// scores.csv (header id,A,B,C,D,E,F), and train/val/test.txt id lists.
// Severities are drawn per region with weights {0.30,0.30,0.25,0.15},
// giving a unimodal mid-range Global Score histogram. Byte-deterministic
// in (n, seed).
void gen_dataset(int n, uint64_t seed, const std::string& out_dir, SplitFractions split,
                 int height = 128, int width = 128);

}  // namespace bsnet
