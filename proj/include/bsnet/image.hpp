#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsnet/tensor.hpp"

namespace bsnet {

// Grayscale image, row-major float32 in [0,1].
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  static GrayImage create(int h, int w, float fill = 0.0f) {
    contract(h > 0 && w > 0, "GrayImage: dimensions must be positive");
    GrayImage img;
    img.height = h;
    img.width = w;
    img.pixels.assign(static_cast<size_t>(h) * w, fill);
    return img;
  }

  float& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
  float at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
  size_t size() const { return pixels.size(); }

  void validate(const std::string& what) const {
    contract(height > 0 && width > 0, what + ": empty image");
    contract(pixels.size() == static_cast<size_t>(height) * width, what + ": pixel count mismatch");
    for (float v : pixels)
      contract(v >= 0.0f && v <= 1.0f, what + ": pixel outside [0,1]");
  }
};

// Binary PGM (P5), 8-bit or 16-bit big-endian samples.
void write_pgm(const std::string& path, const GrayImage& img, int bits);
GrayImage read_pgm(const std::string& path);

// Minimal PNG codec: writes 8/16-bit grayscale and 8-bit RGB, reads 8/16-bit
// grayscale. Non-interlaced, zlib-compressed, filter types 0-4 on read.
void write_png_gray(const std::string& path, const GrayImage& img, int bits);
void write_png_rgb(const std::string& path, int height, int width,
                   const std::vector<uint8_t>& rgb);
GrayImage read_png_gray(const std::string& path);

// [1,1,H,W] float tensor from an image and back.
Tensor<float> to_tensor(const GrayImage& img);
GrayImage from_tensor(const Tensor<float>& t);

}  // namespace bsnet
