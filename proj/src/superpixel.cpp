#include "bsnet/superpixel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace bsnet {

namespace {

struct Center {
  float y = 0.0f, x = 0.0f, intensity = 0.0f;
};

}  // namespace

SuperpixelMap extract_superpixels(const GrayImage& img, int n_target, float compactness) {
  img.validate("extract_superpixels");
  const int h = img.height, w = img.width;
  const long pixels = static_cast<long>(h) * w;
  contract(n_target >= 1 && n_target <= pixels,
           "extract_superpixels: n_target must lie in [1, pixel count]");
  contract(compactness > 0.0f, "extract_superpixels: compactness must be positive");

  SuperpixelMap map;
  map.height = h;
  map.width = w;
  map.labels.assign(static_cast<size_t>(pixels), 0);
  if (n_target == 1) {
    map.count = 1;
    return map;
  }

  int gx = 1, gy = 1;
  long best_err = -1;
  auto consider = [&](int cx, int cy) {
    if (cx < 1 || cx > w || cy < 1 || cy > h) return;
    if (static_cast<long>(cx) * cy > pixels) return;
    const long err = std::labs(static_cast<long>(cx) * cy - n_target);
    if (best_err < 0 || err < best_err) {
      best_err = err;
      gx = cx;
      gy = cy;
    }
  };
  const double gx_ideal = std::sqrt(static_cast<double>(n_target) * w / h);
  for (int cx : {static_cast<int>(std::floor(gx_ideal)), static_cast<int>(std::ceil(gx_ideal))}) {
    if (cx < 1) cx = 1;
    const double q = static_cast<double>(n_target) / std::min(std::max(1, cx), w);
    consider(cx, static_cast<int>(std::floor(q)));
    consider(cx, static_cast<int>(std::ceil(q)));
  }
  const double gy_ideal = std::sqrt(static_cast<double>(n_target) * h / w);
  for (int cy : {static_cast<int>(std::floor(gy_ideal)), static_cast<int>(std::ceil(gy_ideal))}) {
    if (cy < 1) cy = 1;
    const double q = static_cast<double>(n_target) / std::min(std::max(1, cy), h);
    consider(static_cast<int>(std::floor(q)), cy);
    consider(static_cast<int>(std::ceil(q)), cy);
  }
  const int k_init = gx * gy;
  const float S = std::sqrt(static_cast<float>(pixels) / static_cast<float>(k_init));

  std::vector<Center> centers(static_cast<size_t>(k_init));
  for (int i = 0; i < gy; ++i)
    for (int j = 0; j < gx; ++j) {
      Center& c = centers[static_cast<size_t>(i) * gx + j];
      c.y = (static_cast<float>(i) + 0.5f) * static_cast<float>(h) / static_cast<float>(gy) - 0.5f;
      c.x = (static_cast<float>(j) + 0.5f) * static_cast<float>(w) / static_cast<float>(gx) - 0.5f;
      const int ry = std::min(h - 1, std::max(0, static_cast<int>(std::lround(c.y))));
      const int rx = std::min(w - 1, std::max(0, static_cast<int>(std::lround(c.x))));
      c.intensity = img.at(ry, rx);
    }

  std::vector<float> dist(static_cast<size_t>(pixels));
  const float inf = std::numeric_limits<float>::max();
  const int window = std::max(1, static_cast<int>(std::ceil(2.0f * S)));
  const float inv_c2 = 1.0f / (compactness * compactness);
  const float inv_s2 = 1.0f / (S * S);

  for (int iter = 0; iter < 10; ++iter) {
    std::fill(dist.begin(), dist.end(), inf);
    for (int k = 0; k < k_init; ++k) {
      const Center& c = centers[static_cast<size_t>(k)];
      const int r0 = std::max(0, static_cast<int>(c.y) - window);
      const int r1 = std::min(h - 1, static_cast<int>(c.y) + window);
      const int c0 = std::max(0, static_cast<int>(c.x) - window);
      const int c1 = std::min(w - 1, static_cast<int>(c.x) + window);
      for (int r = r0; r <= r1; ++r)
        for (int cc = c0; cc <= c1; ++cc) {
          const size_t i = static_cast<size_t>(r) * w + cc;
          const float di = img.pixels[i] - c.intensity;
          const float dy = static_cast<float>(r) - c.y;
          const float dx = static_cast<float>(cc) - c.x;
          const float d = di * di * inv_c2 + (dy * dy + dx * dx) * inv_s2;
          if (d < dist[i]) {
            dist[i] = d;
            map.labels[i] = k;
          }
        }
    }
    for (int r = 0; r < h; ++r)
      for (int cc = 0; cc < w; ++cc) {
        const size_t i = static_cast<size_t>(r) * w + cc;
        if (dist[i] < inf) continue;
        float best = inf;
        for (int k = 0; k < k_init; ++k) {
          const float dy = static_cast<float>(r) - centers[static_cast<size_t>(k)].y;
          const float dx = static_cast<float>(cc) - centers[static_cast<size_t>(k)].x;
          const float d = dy * dy + dx * dx;
          if (d < best) {
            best = d;
            map.labels[i] = k;
          }
        }
      }

    std::vector<double> sy(static_cast<size_t>(k_init), 0.0), sx(static_cast<size_t>(k_init), 0.0),
        si(static_cast<size_t>(k_init), 0.0);
    std::vector<long> cnt(static_cast<size_t>(k_init), 0);
    for (int r = 0; r < h; ++r)
      for (int cc = 0; cc < w; ++cc) {
        const size_t i = static_cast<size_t>(r) * w + cc;
        const size_t k = static_cast<size_t>(map.labels[i]);
        sy[k] += r;
        sx[k] += cc;
        si[k] += img.pixels[i];
        ++cnt[k];
      }
    for (int k = 0; k < k_init; ++k) {
      if (cnt[static_cast<size_t>(k)] == 0) continue;
      const double n = static_cast<double>(cnt[static_cast<size_t>(k)]);
      centers[static_cast<size_t>(k)].y = static_cast<float>(sy[static_cast<size_t>(k)] / n);
      centers[static_cast<size_t>(k)].x = static_cast<float>(sx[static_cast<size_t>(k)] / n);
      centers[static_cast<size_t>(k)].intensity =
          static_cast<float>(si[static_cast<size_t>(k)] / n);
    }
  }

  // Connected components of the cluster labels, discovered in scan order.
  std::vector<int> comp(static_cast<size_t>(pixels), -1);
  std::vector<size_t> stack;
  int ncomp = 0;
  for (long p = 0; p < pixels; ++p) {
    if (comp[static_cast<size_t>(p)] >= 0) continue;
    const int old = map.labels[static_cast<size_t>(p)];
    stack.clear();
    stack.push_back(static_cast<size_t>(p));
    comp[static_cast<size_t>(p)] = ncomp;
    while (!stack.empty()) {
      const size_t cur = stack.back();
      stack.pop_back();
      const int r = static_cast<int>(cur) / w;
      const int c = static_cast<int>(cur) % w;
      const int nr[4] = {r - 1, r + 1, r, r};
      const int nc[4] = {c, c, c - 1, c + 1};
      for (int t = 0; t < 4; ++t) {
        if (nr[t] < 0 || nr[t] >= h || nc[t] < 0 || nc[t] >= w) continue;
        const size_t ni = static_cast<size_t>(nr[t]) * w + nc[t];
        if (map.labels[ni] == old && comp[ni] < 0) {
          comp[ni] = ncomp;
          stack.push_back(ni);
        }
      }
    }
    ++ncomp;
  }

  // Merge pass: fragments below S^2/4 always merge; beyond that, the smallest
  // components merge until the count is inside the +-20% band. Each merge
  // picks the neighbor with the closest mean intensity. Union-find keeps the
  // bookkeeping simple; stats are rebuilt per round (component counts are
  // small at desk scale).
  const long min_size = std::max(1L, static_cast<long>(S * S / 4.0f));
  const int lo_band = std::max(1, static_cast<int>(std::ceil(0.8 * n_target)));
  const int hi_band = std::max(1, static_cast<int>(std::floor(1.2 * n_target)));
  std::vector<int> parent(static_cast<size_t>(ncomp));
  for (int i = 0; i < ncomp; ++i) parent[static_cast<size_t>(i)] = i;
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  };

  while (true) {
    std::vector<long> size(static_cast<size_t>(ncomp), 0);
    std::vector<double> sum(static_cast<size_t>(ncomp), 0.0);
    for (long p = 0; p < pixels; ++p) {
      const int r = find(comp[static_cast<size_t>(p)]);
      ++size[static_cast<size_t>(r)];
      sum[static_cast<size_t>(r)] += img.pixels[static_cast<size_t>(p)];
    }
    int live = 0;
    for (int i = 0; i < ncomp; ++i)
      if (size[static_cast<size_t>(i)] > 0 && find(i) == i) ++live;
    if (live <= lo_band) break;

    int victim = -1;
    for (int i = 0; i < ncomp; ++i) {
      if (find(i) != i || size[static_cast<size_t>(i)] == 0) continue;
      if (size[static_cast<size_t>(i)] >= min_size && live <= hi_band) continue;
      if (victim < 0 || size[static_cast<size_t>(i)] < size[static_cast<size_t>(victim)])
        victim = i;
    }
    if (victim < 0) break;

    const double vmean = sum[static_cast<size_t>(victim)] /
                         static_cast<double>(size[static_cast<size_t>(victim)]);
    int best = -1;
    double best_gap = 0.0;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int a = find(comp[static_cast<size_t>(r) * w + c]);
        if (a != victim) continue;
        const int nr[2] = {r + 1, r};
        const int nc[2] = {c, c + 1};
        for (int t = 0; t < 2; ++t) {
          if (nr[t] >= h || nc[t] >= w) continue;
          const int b = find(comp[static_cast<size_t>(nr[t]) * w + nc[t]]);
          if (b == victim) continue;
          const double gap = std::abs(sum[static_cast<size_t>(b)] /
                                          static_cast<double>(size[static_cast<size_t>(b)]) -
                                      vmean);
          if (best < 0 || gap < best_gap || (gap == best_gap && b < best)) {
            best = b;
            best_gap = gap;
          }
        }
      }
    // neighbors above/left of the victim
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int a = find(comp[static_cast<size_t>(r) * w + c]);
        if (a == victim) continue;
        const int nr[2] = {r + 1, r};
        const int nc[2] = {c, c + 1};
        for (int t = 0; t < 2; ++t) {
          if (nr[t] >= h || nc[t] >= w) continue;
          const int b = find(comp[static_cast<size_t>(nr[t]) * w + nc[t]]);
          if (b != victim) continue;
          const double gap = std::abs(sum[static_cast<size_t>(a)] /
                                          static_cast<double>(size[static_cast<size_t>(a)]) -
                                      vmean);
          if (best < 0 || gap < best_gap || (gap == best_gap && a < best)) {
            best = a;
            best_gap = gap;
          }
        }
      }
    if (best < 0) break;  // victim touches nothing (single-component image)
    parent[static_cast<size_t>(victim)] = best;
  }

  // Compact labels in order of first appearance.
  std::vector<int> remap(static_cast<size_t>(ncomp), -1);
  int next_label = 0;
  for (long p = 0; p < pixels; ++p) {
    const int r = find(comp[static_cast<size_t>(p)]);
    if (remap[static_cast<size_t>(r)] < 0) remap[static_cast<size_t>(r)] = next_label++;
    map.labels[static_cast<size_t>(p)] = remap[static_cast<size_t>(r)];
  }
  map.count = next_label;
  return map;
}

}  // namespace bsnet
