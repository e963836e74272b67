#include "bsnet/augment.hpp"

#include <cmath>

#include "bsnet/rng.hpp"

namespace bsnet {

void AugmentConfig::validate() const {
  auto prob = [](float p) { return p >= 0.0f && p <= 1.0f; };
  contract(prob(hflip_prob) && prob(p_geometric) && prob(p_elastic_family) && prob(p_photometric),
           "AugmentConfig: probabilities must lie in [0,1]");
  contract(max_rotation_deg >= 0.0f && max_scale >= 0.0f && max_shift >= 0.0f &&
               elastic_alpha >= 0.0f && elastic_sigma >= 0.0f && grid_limit >= 0.0f &&
               optical_distort >= 0.0f && optical_shift >= 0.0f && brightness_limit >= 0.0f &&
               contrast_limit >= 0.0f,
           "AugmentConfig: magnitudes must be non-negative");
  contract(max_scale < 1.0f, "AugmentConfig: max_scale must stay below 1");
  contract(grid_steps >= 1, "AugmentConfig: grid_steps must be positive");
  contract(grid_limit < 1.0f, "AugmentConfig: grid_limit must stay below 1");
}

Affine2D make_affine(float rot_deg, float scale, float shift_x_frac, float shift_y_frac,
                     int height, int width) {
  contract(scale > 0.0f, "make_affine: scale must be positive");
  const float th = rot_deg * 3.14159265358979323846f / 180.0f;
  const float cs = std::cos(th), sn = std::sin(th);
  const float cx = 0.5f * static_cast<float>(width - 1);
  const float cy = 0.5f * static_cast<float>(height - 1);
  const float tx = shift_x_frac * static_cast<float>(width);
  const float ty = shift_y_frac * static_cast<float>(height);
  Affine2D a;
  a.m[0] = cs / scale;
  a.m[1] = sn / scale;
  a.m[2] = cx - (cs * (cx + tx) + sn * (cy + ty)) / scale;
  a.m[3] = -sn / scale;
  a.m[4] = cs / scale;
  a.m[5] = cy - (-sn * (cx + tx) + cs * (cy + ty)) / scale;
  return a;
}

Affine2D invert_affine(const Affine2D& a) {
  const float det = a.m[0] * a.m[4] - a.m[1] * a.m[3];
  contract(std::abs(det) > 1e-8f, "invert_affine: singular matrix");
  Affine2D r;
  r.m[0] = a.m[4] / det;
  r.m[1] = -a.m[1] / det;
  r.m[3] = -a.m[3] / det;
  r.m[4] = a.m[0] / det;
  r.m[2] = -(r.m[0] * a.m[2] + r.m[1] * a.m[5]);
  r.m[5] = -(r.m[3] * a.m[2] + r.m[4] * a.m[5]);
  return r;
}

Affine2D compose(const Affine2D& outer, const Affine2D& inner) {
  Affine2D r;
  r.m[0] = outer.m[0] * inner.m[0] + outer.m[1] * inner.m[3];
  r.m[1] = outer.m[0] * inner.m[1] + outer.m[1] * inner.m[4];
  r.m[2] = outer.m[0] * inner.m[2] + outer.m[1] * inner.m[5] + outer.m[2];
  r.m[3] = outer.m[3] * inner.m[0] + outer.m[4] * inner.m[3];
  r.m[4] = outer.m[3] * inner.m[1] + outer.m[4] * inner.m[4];
  r.m[5] = outer.m[3] * inner.m[2] + outer.m[4] * inner.m[5] + outer.m[5];
  return r;
}

namespace {

float bilinear_zeros(const GrayImage& img, float sy, float sx) {
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const float fx = sx - static_cast<float>(x0);
  const float fy = sy - static_cast<float>(y0);
  auto tap = [&](int y, int x) -> float {
    if (y < 0 || y >= img.height || x < 0 || x >= img.width) return 0.0f;
    return img.at(y, x);
  };
  const float top = (1.0f - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1);
  const float bot = (1.0f - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1);
  return (1.0f - fy) * top + fy * bot;
}

}  // namespace

GrayImage warp_affine(const GrayImage& img, const Affine2D& a) {
  img.validate("warp_affine");
  GrayImage out = GrayImage::create(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    const float y = static_cast<float>(r);
    for (int c = 0; c < img.width; ++c) {
      const float x = static_cast<float>(c);
      const float sx = a.m[0] * x + a.m[1] * y + a.m[2];
      const float sy = a.m[3] * x + a.m[4] * y + a.m[5];
      out.at(r, c) = bilinear_zeros(img, sy, sx);
    }
  }
  return out;
}

GrayImage hflip_image(const GrayImage& img) {
  img.validate("hflip_image");
  GrayImage out = GrayImage::create(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) out.at(r, c) = img.at(r, img.width - 1 - c);
  return out;
}

GrayImage warp_displacement(const GrayImage& img, const std::vector<float>& dx,
                            const std::vector<float>& dy) {
  img.validate("warp_displacement");
  contract(dx.size() == img.size() && dy.size() == img.size(),
           "warp_displacement: field size mismatch");
  GrayImage out = GrayImage::create(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const size_t i = static_cast<size_t>(r) * img.width + c;
      out.at(r, c) = bilinear_zeros(img, static_cast<float>(r) + dy[i],
                                    static_cast<float>(c) + dx[i]);
    }
  return out;
}

GrayImage resize_bilinear(const GrayImage& img, int out_height, int out_width) {
  img.validate("resize_bilinear");
  contract(out_height > 0 && out_width > 0, "resize_bilinear: bad output size");
  GrayImage out = GrayImage::create(out_height, out_width);
  const float sy = static_cast<float>(img.height) / static_cast<float>(out_height);
  const float sx = static_cast<float>(img.width) / static_cast<float>(out_width);
  for (int r = 0; r < out_height; ++r) {
    float y = (static_cast<float>(r) + 0.5f) * sy - 0.5f;
    y = std::min(static_cast<float>(img.height - 1), std::max(0.0f, y));
    for (int c = 0; c < out_width; ++c) {
      float x = (static_cast<float>(c) + 0.5f) * sx - 0.5f;
      x = std::min(static_cast<float>(img.width - 1), std::max(0.0f, x));
      out.at(r, c) = bilinear_zeros(img, y, x);
    }
  }
  return out;
}

namespace {

void gaussian_blur_field(std::vector<float>& f, int h, int w, float sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
  std::vector<float> k(static_cast<size_t>(radius) + 1);
  float sum = 0.0f;
  for (int i = 0; i <= radius; ++i) {
    k[static_cast<size_t>(i)] =
        std::exp(-0.5f * static_cast<float>(i) * static_cast<float>(i) / (sigma * sigma));
    sum += (i == 0 ? 1.0f : 2.0f) * k[static_cast<size_t>(i)];
  }
  for (auto& v : k) v /= sum;

  std::vector<float> tmp(f.size());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      float acc = k[0] * f[static_cast<size_t>(r) * w + c];
      for (int i = 1; i <= radius; ++i) {
        const int cl = std::max(0, c - i), cr = std::min(w - 1, c + i);
        acc += k[static_cast<size_t>(i)] *
               (f[static_cast<size_t>(r) * w + cl] + f[static_cast<size_t>(r) * w + cr]);
      }
      tmp[static_cast<size_t>(r) * w + c] = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      float acc = k[0] * tmp[static_cast<size_t>(r) * w + c];
      for (int i = 1; i <= radius; ++i) {
        const int ru = std::max(0, r - i), rd = std::min(h - 1, r + i);
        acc += k[static_cast<size_t>(i)] *
               (tmp[static_cast<size_t>(ru) * w + c] + tmp[static_cast<size_t>(rd) * w + c]);
      }
      f[static_cast<size_t>(r) * w + c] = acc;
    }
}

// Random field blurred to sigma, scaled to alpha; alpha/sigma are given at a
// 512-pixel reference resolution and scaled by min(H,W)/512.
void elastic_field(int h, int w, float alpha, float sigma, Rng& rng, std::vector<float>& dx,
                   std::vector<float>& dy) {
  const float s = static_cast<float>(std::min(h, w)) / 512.0f;
  const float alpha_eff = alpha * s;
  const float sigma_eff = std::max(0.1f, sigma * s);
  const size_t n = static_cast<size_t>(h) * w;
  dx.resize(n);
  dy.resize(n);
  for (size_t i = 0; i < n; ++i) dx[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (size_t i = 0; i < n; ++i) dy[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  gaussian_blur_field(dx, h, w, sigma_eff);
  gaussian_blur_field(dy, h, w, sigma_eff);
  for (size_t i = 0; i < n; ++i) {
    dx[i] *= alpha_eff;
    dy[i] *= alpha_eff;
  }
}

// Per axis: each of `steps` cells gets its width scaled by 1 + U(-limit,
// limit); cumulative widths are renormalized so the endpoints stay fixed,
// giving a monotone piecewise-linear coordinate map.
std::vector<float> grid_axis_map(int extent, int steps, float limit, Rng& rng) {
  std::vector<float> widths(static_cast<size_t>(steps));
  float total = 0.0f;
  for (int i = 0; i < steps; ++i) {
    widths[static_cast<size_t>(i)] = 1.0f + static_cast<float>(rng.uniform(-limit, limit));
    total += widths[static_cast<size_t>(i)];
  }
  std::vector<float> edges(static_cast<size_t>(steps) + 1, 0.0f);
  float cum = 0.0f;
  for (int i = 0; i < steps; ++i) {
    cum += widths[static_cast<size_t>(i)];
    edges[static_cast<size_t>(i) + 1] = cum / total * static_cast<float>(extent - 1);
  }
  std::vector<float> map(static_cast<size_t>(extent));
  const float cell = static_cast<float>(extent - 1) / static_cast<float>(steps);
  for (int x = 0; x < extent; ++x) {
    if (extent == 1 || cell == 0.0f) {
      map[static_cast<size_t>(x)] = static_cast<float>(x);
      continue;
    }
    int k = std::min(steps - 1, static_cast<int>(static_cast<float>(x) / cell));
    const float frac = (static_cast<float>(x) - static_cast<float>(k) * cell) / cell;
    map[static_cast<size_t>(x)] = edges[static_cast<size_t>(k)] +
                                  frac * (edges[static_cast<size_t>(k) + 1] -
                                          edges[static_cast<size_t>(k)]);
  }
  return map;
}

void grid_field(int h, int w, int steps, float limit, Rng& rng, std::vector<float>& dx,
                std::vector<float>& dy) {
  const std::vector<float> mx = grid_axis_map(w, steps, limit, rng);
  const std::vector<float> my = grid_axis_map(h, steps, limit, rng);
  const size_t n = static_cast<size_t>(h) * w;
  dx.resize(n);
  dy.resize(n);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const size_t i = static_cast<size_t>(r) * w + c;
      dx[i] = mx[static_cast<size_t>(c)] - static_cast<float>(c);
      dy[i] = my[static_cast<size_t>(r)] - static_cast<float>(r);
    }
}

// Radial distortion about a jittered center: source = center + u*(1 + k*r^2)
// in half-extent-normalized coordinates.
void optical_field(int h, int w, float distort, float shift, Rng& rng, std::vector<float>& dx,
                   std::vector<float>& dy) {
  const float k = static_cast<float>(rng.uniform(-distort, distort));
  const float cx = 0.5f * static_cast<float>(w - 1) +
                   static_cast<float>(rng.uniform(-shift, shift)) * static_cast<float>(w);
  const float cy = 0.5f * static_cast<float>(h - 1) +
                   static_cast<float>(rng.uniform(-shift, shift)) * static_cast<float>(h);
  const float hx = std::max(1.0f, 0.5f * static_cast<float>(w - 1));
  const float hy = std::max(1.0f, 0.5f * static_cast<float>(h - 1));
  const size_t n = static_cast<size_t>(h) * w;
  dx.resize(n);
  dy.resize(n);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const float u = (static_cast<float>(c) - cx) / hx;
      const float v = (static_cast<float>(r) - cy) / hy;
      const float f = 1.0f + k * (u * u + v * v);
      const size_t i = static_cast<size_t>(r) * w + c;
      dx[i] = cx + u * f * hx - static_cast<float>(c);
      dy[i] = cy + v * f * hy - static_cast<float>(r);
    }
}

}  // namespace

AugmentResult augment(const GrayImage& img, const GrayImage* mask, const BrixiaScore* score,
                      const AugmentConfig& cfg, uint64_t seed) {
  cfg.validate();
  img.validate("augment");
  if (mask) {
    mask->validate("augment mask");
    contract(mask->height == img.height && mask->width == img.width,
             "augment: mask dimensions must match the image");
  }
  if (score) contract(score->valid(), "augment: invalid score");

  Rng rng(seed);
  AugmentResult res;
  res.image = img;
  if (mask) res.mask = *mask;
  if (score) res.score = *score;

  if (rng.bernoulli(cfg.hflip_prob)) {
    res.image = hflip_image(res.image);
    if (res.mask) *res.mask = hflip_image(*res.mask);
    if (res.score) *res.score = flip_score(*res.score);
  }

  if (rng.bernoulli(cfg.p_geometric)) {
    const float rot = static_cast<float>(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg));
    const float scale = static_cast<float>(rng.uniform(1.0 - cfg.max_scale, 1.0 + cfg.max_scale));
    const float sx = static_cast<float>(rng.uniform(-cfg.max_shift, cfg.max_shift));
    const float sy = static_cast<float>(rng.uniform(-cfg.max_shift, cfg.max_shift));
    const Affine2D a = make_affine(rot, scale, sx, sy, img.height, img.width);
    res.image = warp_affine(res.image, a);
    if (res.mask) *res.mask = warp_affine(*res.mask, a);
  }

  if (rng.bernoulli(cfg.p_elastic_family)) {
    std::vector<float> dx, dy;
    const int pick = rng.range(0, 2);
    if (pick == 0) {
      elastic_field(img.height, img.width, cfg.elastic_alpha, cfg.elastic_sigma, rng, dx, dy);
    } else if (pick == 1) {
      grid_field(img.height, img.width, cfg.grid_steps, cfg.grid_limit, rng, dx, dy);
    } else {
      optical_field(img.height, img.width, cfg.optical_distort, cfg.optical_shift, rng, dx, dy);
    }
    res.image = warp_displacement(res.image, dx, dy);
    if (res.mask) *res.mask = warp_displacement(*res.mask, dx, dy);
  }

  if (rng.bernoulli(cfg.p_photometric)) {
    const float b = static_cast<float>(rng.uniform(-cfg.brightness_limit, cfg.brightness_limit));
    const float c = static_cast<float>(rng.uniform(-cfg.contrast_limit, cfg.contrast_limit));
    for (auto& p : res.image.pixels)
      p = std::min(1.0f, std::max(0.0f, (p - 0.5f) * (1.0f + c) + 0.5f + b));
  }

  res.image.validate("augment output");
  if (res.mask) res.mask->validate("augment mask output");
  return res;
}

}  // namespace bsnet
