#include "bsnet/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "bsnet/regions.hpp"

namespace bsnet {

namespace {

ScoreDistribution forward_dist(const Model<float>& model, const GrayImage& img,
                               AttentionMode mode) {
  Tape<float> tape(false);
  return dist_from_tensor(model.forward_full(tape, to_tensor(img), mode).dist, 0);
}

}  // namespace

ExplanationMap explanation_map(const Model<float>& model, const GrayImage& img, int n_superpixels,
                               AttentionMode mode) {
  img.validate("explanation_map");
  contract(n_superpixels >= 1, "explanation_map: n_superpixels must be positive");
  contract(img.height == model.config().input_size && img.width == model.config().input_size,
           "explanation_map: image does not match the model input size");

  ExplanationMap e;
  e.height = img.height;
  e.width = img.width;
  e.superpixels = extract_superpixels(img, n_superpixels);
  e.baseline = forward_dist(model, img, mode);
  e.forward_passes = 1;

  e.deltas.assign(static_cast<size_t>(e.superpixels.count), {});
  for (int i = 0; i < e.superpixels.count; ++i) {
    GrayImage replica = img;
    for (size_t p = 0; p < replica.pixels.size(); ++p)
      if (e.superpixels.labels[p] == i) replica.pixels[p] = 0.0f;
    const ScoreDistribution pi = forward_dist(model, replica, mode);
    ++e.forward_passes;
    for (int k = 0; k < 24; ++k) e.deltas[i][k] = pi.p[k] - e.baseline.p[k];
  }

  e.values.assign(static_cast<size_t>(e.height) * e.width * 24, 0.0f);
  for (size_t p = 0; p < e.superpixels.labels.size(); ++p) {
    const auto& d = e.deltas[static_cast<size_t>(e.superpixels.labels[p])];
    std::copy(d.begin(), d.end(), e.values.begin() + static_cast<ptrdiff_t>(p * 24));
  }
  return e;
}

int render_region(int r, int c, int height, int width) {
  contract(r >= 0 && r < height && c >= 0 && c < width, "render_region: pixel out of range");
  const int col = width > 1 && c >= column_start(width, 1) ? 1 : 0;
  int best = 0;
  double best_dist = 0.0;
  bool found = false;
  for (int b = 0; b < 3; ++b) {
    const int s = band_start(height, b);
    if (r < s || r >= s + band_height(height)) continue;
    const double dist = std::abs(r + 0.5 - (s + 0.5 * band_height(height)));
    if (!found || dist < best_dist) {
      best = b;
      best_dist = dist;
      found = true;
    }
  }
  contract(found, "render_region: row outside every band");
  return col * 3 + best;
}

std::vector<uint8_t> render_rgb(const ExplanationMap& e, const BrixiaScore& pred) {
  contract(e.height > 0 && e.width > 0 &&
               e.values.size() == static_cast<size_t>(e.height) * e.width * 24,
           "render_rgb: malformed explanation map");
  contract(pred.valid(), "render_rgb: invalid prediction");

  std::vector<float> support(static_cast<size_t>(e.height) * e.width);
  float max_r = 0.0f;
  for (int r = 0; r < e.height; ++r)
    for (int c = 0; c < e.width; ++c) {
      const int region = render_region(r, c, e.height, e.width);
      const float s = -e.at(r, c, region % 3, region / 3, pred.at(region % 3, region / 3));
      support[static_cast<size_t>(r) * e.width + c] = s;
      max_r = std::max(max_r, s);
    }

  static constexpr std::array<std::array<float, 3>, 4> kClassColor = {{
      {0.0f, 128.0f, 0.0f},    // 0 green
      {255.0f, 165.0f, 0.0f},  // 1 orange
      {255.0f, 0.0f, 0.0f},    // 2 red
      {0.0f, 0.0f, 0.0f},      // 3 black
  }};

  std::vector<uint8_t> rgb(static_cast<size_t>(e.height) * e.width * 3, 255);
  if (max_r > 0.0f)
    for (int r = 0; r < e.height; ++r)
      for (int c = 0; c < e.width; ++c) {
        const float s = support[static_cast<size_t>(r) * e.width + c];
        if (s <= 0.0f) continue;
        const int region = render_region(r, c, e.height, e.width);
        const auto& color = kClassColor[static_cast<size_t>(pred.at(region % 3, region / 3))];
        const float a = s / max_r;
        for (int ch = 0; ch < 3; ++ch)
          rgb[(static_cast<size_t>(r) * e.width + c) * 3 + ch] =
              static_cast<uint8_t>(std::lround(255.0f * (1.0f - a) + color[ch] * a));
      }
  return rgb;
}

void render_explanation(const ExplanationMap& e, const BrixiaScore& pred, const std::string& out) {
  write_png_rgb(out, e.height, e.width, render_rgb(e, pred));
}

void write_explanation_csv(const ExplanationMap& e, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  contract(f.good(), "write_explanation_csv: cannot open " + path);
  f << "superpixel_id,region,class,delta\n";
  char buf[64];
  for (int i = 0; i < e.superpixels.count; ++i)
    for (int region = 0; region < 6; ++region)
      for (int cls = 0; cls < 4; ++cls) {
        const float d = e.deltas[static_cast<size_t>(i)]
                                [static_cast<size_t>((region % 3) * 8 + (region / 3) * 4 + cls)];
        std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(d));
        f << i << ',' << kRegionNames[region] << ',' << cls << ',' << buf << '\n';
      }
  contract(f.good(), "write_explanation_csv: write failed for " + path);
}

}  // namespace bsnet
