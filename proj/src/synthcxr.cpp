#include "bsnet/synthcxr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "bsnet/regions.hpp"
#include "bsnet/rng.hpp"

namespace bsnet {

void PhantomSpec::validate() const {
  contract(height >= 32 && width >= 32, "PhantomSpec: canvas must be at least 32x32");
  for (int s : severity) contract(s >= 0 && s <= 3, "PhantomSpec: severities must lie in [0,3]");
  contract(lung_center_jitter >= 0.0f && lung_center_jitter <= 0.03f,
           "PhantomSpec: lung_center_jitter must keep lungs in frame (max 0.03)");
  contract(lung_axis_jitter >= 0.0f && lung_axis_jitter <= 0.12f,
           "PhantomSpec: lung_axis_jitter must keep lungs in frame (max 0.12)");
  contract(min_rib_bands >= 1 && max_rib_bands >= min_rib_bands && max_rib_bands <= 10,
           "PhantomSpec: rib band count range invalid");
  contract(heart_jitter >= 0.0f && heart_jitter <= 0.05f, "PhantomSpec: heart_jitter too large");
  contract(artifact_prob >= 0.0f && artifact_prob <= 1.0f,
           "PhantomSpec: artifact_prob must lie in [0,1]");
}

namespace {

struct Ellipse {
  float cy = 0, cx = 0, ay = 1, ax = 1;
};

float ellipse_f(const Ellipse& e, float y, float x) {
  const float dy = (y - e.cy) / e.ay;
  const float dx = (x - e.cx) / e.ax;
  return dy * dy + dx * dx;
}

// 1 deep inside, 0 outside, smooth ramp across the edge band
float soft_inside(const Ellipse& e, float y, float x, float edge) {
  float t = (1.0f - ellipse_f(e, y, x)) / edge;
  t = std::min(1.0f, std::max(0.0f, t));
  return t * t * (3.0f - 2.0f * t);
}

// bilinear value noise over a uniform lattice, output in [0,1)
struct ValueNoise {
  int gh = 0, gw = 0;
  float cell = 1.0f;
  std::vector<float> grid;

  ValueNoise(int h, int w, float cell_px, Rng& rng) : cell(cell_px) {
    gh = static_cast<int>(std::ceil(static_cast<float>(h) / cell_px)) + 2;
    gw = static_cast<int>(std::ceil(static_cast<float>(w) / cell_px)) + 2;
    grid.resize(static_cast<size_t>(gh) * gw);
    for (auto& g : grid) g = static_cast<float>(rng.uniform());
  }

  float at(float y, float x) const {
    const float gy = y / cell, gx = x / cell;
    const int y0 = std::min(gh - 2, static_cast<int>(gy));
    const int x0 = std::min(gw - 2, static_cast<int>(gx));
    const float fy = gy - static_cast<float>(y0);
    const float fx = gx - static_cast<float>(x0);
    const float a = grid[static_cast<size_t>(y0) * gw + x0];
    const float b = grid[static_cast<size_t>(y0) * gw + x0 + 1];
    const float c = grid[static_cast<size_t>(y0 + 1) * gw + x0];
    const float d = grid[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
  }
};

struct Blob {
  float cy = 0, cx = 0, sigma = 1, amp = 0;
};

// Exclusive row partition of the three overlapping bands, split at overlap
// midpoints. Texture painted inside a core never straddles band boundaries,
// so neighbouring regions' statistics stay decoupled.
struct BandCores {
  int mid01 = 0, mid12 = 0;

  explicit BandCores(int height) {
    mid01 = (band_start(height, 1) + band_start(height, 0) + band_height(height)) / 2;
    mid12 = (band_start(height, 2) + band_start(height, 1) + band_height(height)) / 2;
  }
  int lo(int row_band) const { return row_band == 0 ? 0 : (row_band == 1 ? mid01 : mid12); }
  int hi(int row_band, int height) const {
    return row_band == 0 ? mid01 : (row_band == 1 ? mid12 : height);
  }
  bool contains(int r, int row_band, int height) const {
    return r >= lo(row_band) && r < hi(row_band, height);
  }
};

}  // namespace

SampleRecord gen_phantom(const PhantomSpec& spec) {
  spec.validate();
  // independent streams so a severity change perturbs texture pixels only
  const Rng root(spec.seed);
  Rng anat = root.derive(1);
  Rng tex = root.derive(2);
  Rng noise = root.derive(3);
  Rng grain = root.derive(4);
  Rng art = root.derive(5);
  const int H = spec.height, W = spec.width;
  const float Hf = static_cast<float>(H), Wf = static_cast<float>(W);
  const float mindim = static_cast<float>(std::min(H, W));

  // anatomy, fixed draw order
  const float cj = spec.lung_center_jitter, aj = spec.lung_axis_jitter;
  Ellipse lungL, lungR;
  lungL.cx = (0.32f + static_cast<float>(anat.uniform(-cj, cj))) * Wf;
  lungL.cy = (0.52f + static_cast<float>(anat.uniform(-cj, cj))) * Hf;
  lungL.ax = 0.14f * Wf * (1.0f + static_cast<float>(anat.uniform(-aj, aj)));
  lungL.ay = 0.30f * Hf * (1.0f + static_cast<float>(anat.uniform(-aj, aj)));
  lungR.cx = (0.68f + static_cast<float>(anat.uniform(-cj, cj))) * Wf;
  lungR.cy = (0.52f + static_cast<float>(anat.uniform(-cj, cj))) * Hf;
  lungR.ax = 0.14f * Wf * (1.0f + static_cast<float>(anat.uniform(-aj, aj)));
  lungR.ay = 0.30f * Hf * (1.0f + static_cast<float>(anat.uniform(-aj, aj)));

  const int n_ribs = anat.range(spec.min_rib_bands, spec.max_rib_bands);
  std::vector<float> rib_y(static_cast<size_t>(n_ribs)), rib_phase(static_cast<size_t>(n_ribs)),
      rib_curve(static_cast<size_t>(n_ribs)), rib_thick(static_cast<size_t>(n_ribs));
  for (int k = 0; k < n_ribs; ++k) {
    const float base = 0.25f + 0.55f * (static_cast<float>(k) + 0.5f) / static_cast<float>(n_ribs);
    rib_y[static_cast<size_t>(k)] = (base + static_cast<float>(anat.uniform(-0.012, 0.012))) * Hf;
    rib_phase[static_cast<size_t>(k)] = static_cast<float>(anat.uniform(0.0, 6.283185307));
    rib_curve[static_cast<size_t>(k)] = static_cast<float>(anat.uniform(0.02, 0.05)) * Hf;
    rib_thick[static_cast<size_t>(k)] =
        std::max(1.0f, static_cast<float>(anat.uniform(0.010, 0.016)) * Hf);
  }

  const float hj = spec.heart_jitter;
  Ellipse heart;
  heart.cx = (0.56f + static_cast<float>(anat.uniform(-hj, hj))) * Wf;
  heart.cy = (0.74f + static_cast<float>(anat.uniform(-hj, hj))) * Hf;
  heart.ax = 0.17f * Wf * (1.0f + static_cast<float>(anat.uniform(-0.1, 0.1)));
  heart.ay = 0.14f * Hf * (1.0f + static_cast<float>(anat.uniform(-0.1, 0.1)));

  Ellipse torso;
  torso.cx = 0.5f * Wf;
  torso.cy = 0.55f * Hf;
  torso.ax = 0.42f * Wf;
  torso.ay = 0.47f * Hf;

  // per-region texture parameters (draw order: regions A..F)
  auto inside_lungs = [&](float y, float x) {
    return ellipse_f(lungL, y, x) <= 1.0f || ellipse_f(lungR, y, x) <= 1.0f;
  };
  const BandCores cores(H);
  std::vector<ValueNoise> fine;
  std::vector<int> fine_of(6, -1);
  std::vector<float> fine_amp(6, 0.0f);
  std::vector<std::vector<Blob>> blobs(6);
  for (int reg = 0; reg < 6; ++reg) {
    Rng treg = tex.derive(static_cast<uint64_t>(reg));
    const int s = spec.severity[static_cast<size_t>(reg)];
    if (s >= 1) {
      fine_of[static_cast<size_t>(reg)] = static_cast<int>(fine.size());
      fine.emplace_back(H, W, 3.5f * mindim / 128.0f, treg);
      fine_amp[static_cast<size_t>(reg)] = s == 1 ? 0.20f : (s == 2 ? 0.26f : 0.32f);
    }
    if (s >= 2) {
      const int count = s == 2 ? treg.range(3, 5) : treg.range(6, 9);
      const int row = reg % 3, col = reg / 3;
      const int r0 = cores.lo(row), r1 = cores.hi(row, H);
      const int c0 = column_start(W, col), cw = column_width(W, col);
      for (int b = 0; b < count; ++b) {
        Blob blob;
        blob.sigma = (s == 2 ? 0.035f : 0.05f) * mindim *
                     static_cast<float>(treg.uniform(0.8, 1.3));
        blob.amp = (s == 2 ? 0.28f : 0.5f) * static_cast<float>(treg.uniform(0.9, 1.1));
        bool placed = false;
        for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
          const float y = static_cast<float>(treg.uniform(r0, r1 - 1));
          const float x = static_cast<float>(treg.uniform(c0, c0 + cw - 1));
          if (inside_lungs(y, x)) {
            blob.cy = y;
            blob.cx = x;
            placed = true;
          }
        }
        if (placed) blobs[static_cast<size_t>(reg)].push_back(blob);
      }
    }
  }

  ValueNoise coarse(H, W, 16.0f * mindim / 128.0f, noise);
  ValueNoise mid(H, W, 6.0f * mindim / 128.0f, noise);

  GrayImage img = GrayImage::create(H, W);
  GrayImage mask = GrayImage::create(H, W);
  const float edge = 0.06f;
  for (int r = 0; r < H; ++r) {
    const float y = static_cast<float>(r);
    for (int c = 0; c < W; ++c) {
      const float x = static_cast<float>(c);
      float v = 0.06f;
      const float t = soft_inside(torso, y, x, edge);
      v = v * (1.0f - t) + 0.55f * t;

      const float inL = soft_inside(lungL, y, x, edge);
      const float inR = soft_inside(lungR, y, x, edge);
      const float lung = std::max(inL, inR);
      v = v * (1.0f - lung) + 0.18f * lung;

      // ribs and the heart shadow show through the lung fields attenuated,
      // keeping the severity-free regional baselines close together
      if (t > 0.0f) {
        const float damp = 1.0f - 0.5f * lung;
        for (int k = 0; k < n_ribs; ++k) {
          const float yk = rib_y[static_cast<size_t>(k)] +
                           rib_curve[static_cast<size_t>(k)] *
                               std::sin(3.14159265f * x / Wf + rib_phase[static_cast<size_t>(k)]);
          const float d = std::abs(y - yk) / rib_thick[static_cast<size_t>(k)];
          if (d < 1.0f) v += 0.12f * (1.0f - d * d) * t * damp;
        }
      }

      const float hrt = soft_inside(heart, y, x, edge) * (1.0f - 0.75f * lung);
      v = v * (1.0f - hrt) + 0.62f * hrt;

      const bool in_mask = ellipse_f(lungL, y, x) <= 1.0f || ellipse_f(lungR, y, x) <= 1.0f;
      mask.at(r, c) = in_mask ? 1.0f : 0.0f;

      if (in_mask) {
        for (int reg = 0; reg < 6; ++reg) {
          if (spec.severity[static_cast<size_t>(reg)] == 0) continue;
          if (!cores.contains(r, reg % 3, H)) continue;
          if (c < column_start(W, reg / 3) ||
              c >= column_start(W, reg / 3) + column_width(W, reg / 3))
            continue;
          const int fi = fine_of[static_cast<size_t>(reg)];
          if (fi >= 0) v += fine_amp[static_cast<size_t>(reg)] * fine[static_cast<size_t>(fi)].at(y, x);
          for (const Blob& b : blobs[static_cast<size_t>(reg)]) {
            const float dy = y - b.cy, dx = x - b.cx;
            const float d2 = dy * dy + dx * dx;
            if (d2 <= 6.25f * b.sigma * b.sigma)
              v += b.amp * std::exp(-0.5f * d2 / (b.sigma * b.sigma));
          }
        }
      }

      v += 0.04f * (coarse.at(y, x) - 0.5f) + 0.03f * (mid.at(y, x) - 0.5f);
      img.at(r, c) = v;
    }
  }

  // grain, then optional device artifact
  for (auto& p : img.pixels) p += static_cast<float>(grain.uniform(-0.01, 0.01));

  if (art.bernoulli(spec.artifact_prob)) {
    if (art.bernoulli(0.5)) {
      // tube: a thin bright near-vertical line from the top edge
      const float x0 = static_cast<float>(art.uniform(0.3, 0.7)) * Wf;
      const float slope = static_cast<float>(art.uniform(-0.2, 0.2));
      const int len = static_cast<int>(0.4f * Hf);
      for (int r = 0; r < len; ++r) {
        const int c = static_cast<int>(x0 + slope * static_cast<float>(r));
        for (int dc = 0; dc <= 1; ++dc)
          if (c + dc >= 0 && c + dc < W)
            img.at(r, c + dc) = std::min(1.0f, img.at(r, c + dc) + 0.25f);
      }
    } else {
      // electrode: small saturated disk in the upper torso
      const float ey = static_cast<float>(art.uniform(0.12, 0.3)) * Hf;
      const float ex = static_cast<float>(art.uniform(0.25, 0.75)) * Wf;
      const float rad = std::max(2.0f, 0.02f * mindim);
      for (int r = std::max(0, static_cast<int>(ey - rad - 1));
           r <= std::min(H - 1, static_cast<int>(ey + rad + 1)); ++r)
        for (int c = std::max(0, static_cast<int>(ex - rad - 1));
             c <= std::min(W - 1, static_cast<int>(ex + rad + 1)); ++c) {
          const float dy = static_cast<float>(r) - ey, dx = static_cast<float>(c) - ex;
          if (dy * dy + dx * dx <= rad * rad) img.at(r, c) = 0.95f;
        }
    }
  }

  for (auto& p : img.pixels) p = std::min(1.0f, std::max(0.0f, p));

  SampleRecord rec;
  rec.image = std::move(img);
  rec.lung_mask = std::move(mask);
  for (int i = 0; i < 6; ++i) rec.score[i] = spec.severity[static_cast<size_t>(i)];
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%016llx", static_cast<unsigned long long>(spec.seed));
  rec.id = buf;
  return rec;
}

MisalignedPair gen_misaligned_pair(const SampleRecord& sample, uint64_t rng_seed,
                                   float max_rot_deg, float max_scale, float max_shift) {
  sample.image.validate("gen_misaligned_pair image");
  sample.lung_mask.validate("gen_misaligned_pair mask");
  contract(sample.image.height == sample.lung_mask.height &&
               sample.image.width == sample.lung_mask.width,
           "gen_misaligned_pair: image and mask sizes differ");
  contract(max_rot_deg >= 0.0f && max_scale >= 0.0f && max_scale < 1.0f && max_shift >= 0.0f,
           "gen_misaligned_pair: bad magnitude bounds");

  Rng rng(rng_seed);
  MisalignedPair out;
  out.rot_deg = static_cast<float>(rng.uniform(-max_rot_deg, max_rot_deg));
  out.scale = static_cast<float>(rng.uniform(1.0 - max_scale, 1.0 + max_scale));
  out.shift_x = static_cast<float>(rng.uniform(-max_shift, max_shift));
  out.shift_y = static_cast<float>(rng.uniform(-max_shift, max_shift));
  out.sampling = make_affine(out.rot_deg, out.scale, out.shift_x, out.shift_y,
                             sample.image.height, sample.image.width);
  out.warped_image = warp_affine(sample.image, out.sampling);
  out.warped_mask = warp_affine(sample.lung_mask, out.sampling);
  out.original_mask = sample.lung_mask;
  return out;
}

namespace {

int draw_severity(Rng& rng) {
  static const double kWeights[4] = {0.30, 0.30, 0.25, 0.15};
  const double u = rng.uniform();
  double cum = 0.0;
  for (int s = 0; s < 4; ++s) {
    cum += kWeights[s];
    if (u < cum) return s;
  }
  return 3;
}

}  // namespace

void gen_dataset(int n, uint64_t seed, const std::string& out_dir, SplitFractions split,
                 int height, int width) {
  contract(n >= 1, "gen_dataset: n must be positive");
  contract(split.train >= 0.0 && split.val >= 0.0 && split.test >= 0.0,
           "gen_dataset: split fractions must be non-negative");
  contract(std::abs(split.train + split.val + split.test - 1.0) < 1e-9,
           "gen_dataset: split fractions must sum to 1");

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");

  std::ofstream scores((fs::path(out_dir) / "scores.csv").string(), std::ios::binary);
  contract(scores.good(), "gen_dataset: cannot write scores.csv in " + out_dir);
  scores << "id,A,B,C,D,E,F\n";

  Rng master(seed);
  std::vector<std::string> ids;
  ids.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng r = master.derive(static_cast<uint64_t>(i));
    PhantomSpec spec;
    spec.height = height;
    spec.width = width;
    for (int k = 0; k < 6; ++k) spec.severity[static_cast<size_t>(k)] = draw_severity(r);
    spec.seed = r.next_u64();
    SampleRecord rec = gen_phantom(spec);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", i);
    rec.id = buf;
    ids.push_back(rec.id);
    write_pgm((fs::path(out_dir) / "images" / (rec.id + ".pgm")).string(), rec.image, 16);
    write_pgm((fs::path(out_dir) / "masks" / (rec.id + ".pgm")).string(), rec.lung_mask, 8);
    scores << rec.id;
    for (int k = 0; k < 6; ++k) scores << "," << rec.score[k];
    scores << "\n";
  }
  scores.close();

  const int n_train = static_cast<int>(std::lround(split.train * n));
  const int n_val = static_cast<int>(std::lround(split.val * n));
  contract(n_train + n_val <= n, "gen_dataset: split rounding exceeds n");
  auto write_list = [&](const std::string& name, int lo, int hi) {
    std::ofstream f((fs::path(out_dir) / name).string(), std::ios::binary);
    contract(f.good(), "gen_dataset: cannot write " + name);
    for (int i = lo; i < hi; ++i) f << ids[static_cast<size_t>(i)] << "\n";
  };
  write_list("train.txt", 0, n_train);
  write_list("val.txt", n_train, n_train + n_val);
  write_list("test.txt", n_train + n_val, n);
}

}  // namespace bsnet
