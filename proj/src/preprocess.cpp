#include "bsnet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace bsnet {

namespace {

struct TileMap {
  // cumulative histogram below each bin plus the bin's own count, scaled by
  // 1/area; map(v) = (below[b] + frac * count[b]) / area
  std::vector<float> below;
  std::vector<float> count;
};

TileMap build_tile_map(const GrayImage& img, int r0, int r1, int c0, int c1, float clip_limit,
                       int bins) {
  std::vector<int> hist(static_cast<size_t>(bins), 0);
  const int area = (r1 - r0) * (c1 - c0);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) {
      const int b = std::min(bins - 1, static_cast<int>(img.at(r, c) * static_cast<float>(bins)));
      ++hist[static_cast<size_t>(b)];
    }

  const int limit = std::max(1, static_cast<int>(
                                    std::ceil(static_cast<double>(clip_limit) * area)));
  long excess = 0;
  for (int b = 0; b < bins; ++b) {
    if (hist[static_cast<size_t>(b)] > limit) {
      excess += hist[static_cast<size_t>(b)] - limit;
      hist[static_cast<size_t>(b)] = limit;
    }
  }
  // exact uniform redistribution in real arithmetic; integer shares would
  // dump the residual into a prefix of the bins and bias the map
  const double spread = static_cast<double>(excess) / bins;

  TileMap m;
  m.below.resize(static_cast<size_t>(bins));
  m.count.resize(static_cast<size_t>(bins));
  const double inv_area = 1.0 / static_cast<double>(area);
  double cum = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double cnt = static_cast<double>(hist[static_cast<size_t>(b)]) + spread;
    m.below[static_cast<size_t>(b)] = static_cast<float>(cum * inv_area);
    m.count[static_cast<size_t>(b)] = static_cast<float>(cnt * inv_area);
    cum += cnt;
  }
  return m;
}

float apply_tile_map(const TileMap& m, float v, int bins) {
  const float x = v * static_cast<float>(bins);
  const int b = std::min(bins - 1, static_cast<int>(x));
  const float frac = std::min(1.0f, x - static_cast<float>(b));
  return m.below[static_cast<size_t>(b)] + frac * m.count[static_cast<size_t>(b)];
}

}  // namespace

GrayImage clahe(const GrayImage& img, float clip_limit, int tiles, int bins) {
  img.validate("clahe");
  contract(clip_limit > 0.0f, "clahe: clip_limit must be positive");
  contract(tiles >= 1 && bins >= 2, "clahe: bad tile or bin count");
  const int ty = std::min(tiles, img.height);
  const int tx = std::min(tiles, img.width);

  std::vector<int> row_edges(static_cast<size_t>(ty) + 1), col_edges(static_cast<size_t>(tx) + 1);
  for (int i = 0; i <= ty; ++i)
    row_edges[static_cast<size_t>(i)] = static_cast<int>(static_cast<long>(i) * img.height / ty);
  for (int j = 0; j <= tx; ++j)
    col_edges[static_cast<size_t>(j)] = static_cast<int>(static_cast<long>(j) * img.width / tx);

  std::vector<TileMap> maps(static_cast<size_t>(ty) * tx);
  std::vector<float> cy(static_cast<size_t>(ty)), cx(static_cast<size_t>(tx));
  for (int i = 0; i < ty; ++i) {
    cy[static_cast<size_t>(i)] =
        0.5f * static_cast<float>(row_edges[static_cast<size_t>(i)] +
                                  row_edges[static_cast<size_t>(i) + 1] - 1);
    for (int j = 0; j < tx; ++j) {
      maps[static_cast<size_t>(i) * tx + j] =
          build_tile_map(img, row_edges[static_cast<size_t>(i)],
                         row_edges[static_cast<size_t>(i) + 1], col_edges[static_cast<size_t>(j)],
                         col_edges[static_cast<size_t>(j) + 1], clip_limit, bins);
    }
  }
  for (int j = 0; j < tx; ++j)
    cx[static_cast<size_t>(j)] =
        0.5f * static_cast<float>(col_edges[static_cast<size_t>(j)] +
                                  col_edges[static_cast<size_t>(j) + 1] - 1);

  GrayImage out = GrayImage::create(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    int i0 = 0;
    while (i0 + 1 < ty && cy[static_cast<size_t>(i0) + 1] < static_cast<float>(r)) ++i0;
    const int i1 = std::min(i0 + 1, ty - 1);
    float wy = 0.0f;
    if (i1 != i0) {
      wy = (static_cast<float>(r) - cy[static_cast<size_t>(i0)]) /
           (cy[static_cast<size_t>(i1)] - cy[static_cast<size_t>(i0)]);
      wy = std::min(1.0f, std::max(0.0f, wy));
    }
    for (int c = 0; c < img.width; ++c) {
      int j0 = 0;
      while (j0 + 1 < tx && cx[static_cast<size_t>(j0) + 1] < static_cast<float>(c)) ++j0;
      const int j1 = std::min(j0 + 1, tx - 1);
      float wx = 0.0f;
      if (j1 != j0) {
        wx = (static_cast<float>(c) - cx[static_cast<size_t>(j0)]) /
             (cx[static_cast<size_t>(j1)] - cx[static_cast<size_t>(j0)]);
        wx = std::min(1.0f, std::max(0.0f, wx));
      }
      const float v = img.at(r, c);
      const float m00 = apply_tile_map(maps[static_cast<size_t>(i0) * tx + j0], v, bins);
      const float m01 = apply_tile_map(maps[static_cast<size_t>(i0) * tx + j1], v, bins);
      const float m10 = apply_tile_map(maps[static_cast<size_t>(i1) * tx + j0], v, bins);
      const float m11 = apply_tile_map(maps[static_cast<size_t>(i1) * tx + j1], v, bins);
      out.at(r, c) = (1.0f - wy) * ((1.0f - wx) * m00 + wx * m01) +
                     wy * ((1.0f - wx) * m10 + wx * m11);
    }
  }
  return out;
}

GrayImage median3(const GrayImage& img) {
  img.validate("median3");
  GrayImage out = GrayImage::create(img.height, img.width);
  float win[9];
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      int k = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        const int rr = std::min(img.height - 1, std::max(0, r + dr));
        for (int dc = -1; dc <= 1; ++dc) {
          const int cc = std::min(img.width - 1, std::max(0, c + dc));
          win[k++] = img.at(rr, cc);
        }
      }
      std::nth_element(win, win + 4, win + 9);
      out.at(r, c) = win[4];
    }
  }
  return out;
}

namespace {

float percentile_linear(const std::vector<float>& sorted, float pct) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double rank = static_cast<double>(pct) / 100.0 * static_cast<double>(n - 1);
  const size_t lo = static_cast<size_t>(rank);
  const size_t hi = std::min(n - 1, lo + 1);
  const double frac = rank - static_cast<double>(lo);
  return static_cast<float>(sorted[lo] * (1.0 - frac) + sorted[hi] * frac);
}

}  // namespace

GrayImage percentile_rescale(const GrayImage& img, float lo_pct, float hi_pct) {
  img.validate("percentile_rescale");
  contract(lo_pct >= 0.0f && hi_pct <= 100.0f && lo_pct < hi_pct,
           "percentile_rescale: bad percentile range");
  std::vector<float> sorted(img.pixels);
  std::sort(sorted.begin(), sorted.end());
  const float lo = percentile_linear(sorted, lo_pct);
  const float hi = percentile_linear(sorted, hi_pct);
  if (!(hi > lo)) return img;
  GrayImage out = GrayImage::create(img.height, img.width);
  const float inv = 1.0f / (hi - lo);
  for (size_t i = 0; i < img.size(); ++i)
    out.pixels[i] = std::min(1.0f, std::max(0.0f, (img.pixels[i] - lo) * inv));
  return out;
}

GrayImage normalize_cxr(const GrayImage& img) {
  img.validate("normalize_cxr");
  const auto [mn, mx] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  if (*mn == *mx) return img;
  GrayImage out = clahe(img, 0.01f, 8, 256);
  out = median3(out);
  out = percentile_rescale(out, 2.0f, 98.0f);
  out.validate("normalize_cxr output");
  return out;
}

}  // namespace bsnet
