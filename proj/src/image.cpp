#include "bsnet/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace bsnet {

namespace {

int next_pgm_token(std::istream& in) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  contract(c != EOF, "read_pgm: truncated header");
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  contract(any, "read_pgm: malformed header token");
  return value;
}

}  // namespace

void write_pgm(const std::string& path, const GrayImage& img, int bits) {
  contract(bits == 8 || bits == 16, "write_pgm: bits must be 8 or 16");
  img.validate("write_pgm");
  std::ofstream f(path, std::ios::binary);
  contract(f.good(), "write_pgm: cannot open " + path);
  const int maxval = bits == 8 ? 255 : 65535;
  f << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
  if (bits == 8) {
    std::vector<uint8_t> buf(img.size());
    for (size_t i = 0; i < img.size(); ++i)
      buf[i] = static_cast<uint8_t>(std::lround(img.pixels[i] * 255.0f));
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    std::vector<uint8_t> buf(img.size() * 2);
    for (size_t i = 0; i < img.size(); ++i) {
      const uint16_t v = static_cast<uint16_t>(std::lround(img.pixels[i] * 65535.0f));
      buf[2 * i] = static_cast<uint8_t>(v >> 8);
      buf[2 * i + 1] = static_cast<uint8_t>(v & 0xff);
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  contract(f.good(), "write_pgm: write failed for " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  contract(f.good(), "read_pgm: cannot open " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  contract(m0 == 'P' && m1 == '5', "read_pgm: not a binary PGM: " + path);
  const int w = next_pgm_token(f);
  const int h = next_pgm_token(f);
  const int maxval = next_pgm_token(f);
  contract(w > 0 && h > 0, "read_pgm: bad dimensions in " + path);
  contract(maxval == 255 || maxval == 65535, "read_pgm: unsupported maxval in " + path);
  GrayImage img = GrayImage::create(h, w);
  const size_t n = img.size();
  if (maxval == 255) {
    std::vector<uint8_t> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    contract(static_cast<size_t>(f.gcount()) == n, "read_pgm: truncated data in " + path);
    for (size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  } else {
    std::vector<uint8_t> buf(n * 2);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2));
    contract(static_cast<size_t>(f.gcount()) == n * 2, "read_pgm: truncated data in " + path);
    for (size_t i = 0; i < n; ++i) {
      const uint16_t v = static_cast<uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
      img.pixels[i] = static_cast<float>(v) / 65535.0f;
    }
  }
  return img;
}

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<uint8_t>& data) {
  std::vector<uint8_t> head;
  put_u32(head, static_cast<uint32_t>(data.size()));
  f.write(reinterpret_cast<const char*>(head.data()), 4);
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  std::vector<uint8_t> tail;
  put_u32(tail, crc);
  f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

void write_png(const std::string& path, int h, int w, int bit_depth, int color_type,
               const std::vector<uint8_t>& raw_rows) {
  std::ofstream f(path, std::ios::binary);
  contract(f.good(), "write_png: cannot open " + path);
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  f.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(w));
  put_u32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(static_cast<uint8_t>(bit_depth));
  ihdr.push_back(static_cast<uint8_t>(color_type));
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(f, "IHDR", ihdr);

  uLongf bound = compressBound(static_cast<uLong>(raw_rows.size()));
  std::vector<uint8_t> comp(bound);
  const int rc = compress2(comp.data(), &bound, raw_rows.data(),
                           static_cast<uLong>(raw_rows.size()), 6);
  contract(rc == Z_OK, "write_png: compression failed");
  comp.resize(bound);
  write_chunk(f, "IDAT", comp);
  write_chunk(f, "IEND", {});
  contract(f.good(), "write_png: write failed for " + path);
}

}  // namespace

void write_png_gray(const std::string& path, const GrayImage& img, int bits) {
  contract(bits == 8 || bits == 16, "write_png_gray: bits must be 8 or 16");
  img.validate("write_png_gray");
  const size_t bpp = bits == 8 ? 1 : 2;
  std::vector<uint8_t> rows;
  rows.reserve(static_cast<size_t>(img.height) * (1 + static_cast<size_t>(img.width) * bpp));
  for (int r = 0; r < img.height; ++r) {
    rows.push_back(0);  // filter: none
    for (int c = 0; c < img.width; ++c) {
      if (bits == 8) {
        rows.push_back(static_cast<uint8_t>(std::lround(img.at(r, c) * 255.0f)));
      } else {
        const uint16_t v = static_cast<uint16_t>(std::lround(img.at(r, c) * 65535.0f));
        rows.push_back(static_cast<uint8_t>(v >> 8));
        rows.push_back(static_cast<uint8_t>(v & 0xff));
      }
    }
  }
  write_png(path, img.height, img.width, bits, 0, rows);
}

void write_png_rgb(const std::string& path, int height, int width,
                   const std::vector<uint8_t>& rgb) {
  contract(height > 0 && width > 0, "write_png_rgb: dimensions must be positive");
  contract(rgb.size() == static_cast<size_t>(height) * width * 3,
           "write_png_rgb: buffer size does not match dimensions");
  std::vector<uint8_t> rows;
  rows.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
  for (int r = 0; r < height; ++r) {
    rows.push_back(0);
    const uint8_t* src = rgb.data() + static_cast<size_t>(r) * width * 3;
    rows.insert(rows.end(), src, src + static_cast<size_t>(width) * 3);
  }
  write_png(path, height, width, 8, 2, rows);
}

namespace {

uint32_t get_u32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

uint8_t paeth(uint8_t a, uint8_t b, uint8_t c) {
  const int p = static_cast<int>(a) + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

GrayImage read_png_gray(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  contract(f.good(), "read_png_gray: cannot open " + path);
  std::vector<uint8_t> file((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  contract(file.size() > 8 && file[1] == 'P' && file[2] == 'N' && file[3] == 'G',
           "read_png_gray: not a PNG: " + path);
  size_t pos = 8;
  int w = 0, h = 0, bit_depth = 0, color_type = -1;
  std::vector<uint8_t> idat;
  while (pos + 8 <= file.size()) {
    const uint32_t len = get_u32(&file[pos]);
    contract(pos + 8 + len + 4 <= file.size(), "read_png_gray: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
    const uint8_t* data = &file[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      contract(len == 13, "read_png_gray: bad IHDR");
      w = static_cast<int>(get_u32(data));
      h = static_cast<int>(get_u32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      contract(data[12] == 0, "read_png_gray: interlaced PNGs unsupported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 8 + len + 4;
  }
  contract(w > 0 && h > 0, "read_png_gray: missing IHDR in " + path);
  contract(color_type == 0 && (bit_depth == 8 || bit_depth == 16),
           "read_png_gray: only 8/16-bit grayscale supported: " + path);

  const size_t bpp = bit_depth == 8 ? 1 : 2;
  const size_t rowbytes = static_cast<size_t>(w) * bpp;
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (rowbytes + 1));
  uLongf rawlen = static_cast<uLongf>(raw.size());
  const int rc = uncompress(raw.data(), &rawlen, idat.data(), static_cast<uLong>(idat.size()));
  contract(rc == Z_OK && rawlen == raw.size(), "read_png_gray: inflate failed for " + path);

  std::vector<uint8_t> out(static_cast<size_t>(h) * rowbytes);
  for (int r = 0; r < h; ++r) {
    const uint8_t filter = raw[static_cast<size_t>(r) * (rowbytes + 1)];
    const uint8_t* src = &raw[static_cast<size_t>(r) * (rowbytes + 1) + 1];
    uint8_t* dst = &out[static_cast<size_t>(r) * rowbytes];
    const uint8_t* prev = r > 0 ? &out[static_cast<size_t>(r - 1) * rowbytes] : nullptr;
    for (size_t i = 0; i < rowbytes; ++i) {
      const uint8_t a = i >= bpp ? dst[i - bpp] : 0;
      const uint8_t b = prev ? prev[i] : 0;
      const uint8_t c = (prev && i >= bpp) ? prev[i - bpp] : 0;
      switch (filter) {
        case 0: dst[i] = src[i]; break;
        case 1: dst[i] = static_cast<uint8_t>(src[i] + a); break;
        case 2: dst[i] = static_cast<uint8_t>(src[i] + b); break;
        case 3: dst[i] = static_cast<uint8_t>(src[i] + ((a + b) >> 1)); break;
        case 4: dst[i] = static_cast<uint8_t>(src[i] + paeth(a, b, c)); break;
        default: contract_fail("read_png_gray: unknown filter type");
      }
    }
  }

  GrayImage img = GrayImage::create(h, w);
  for (size_t i = 0; i < img.size(); ++i) {
    if (bit_depth == 8) {
      img.pixels[i] = static_cast<float>(out[i]) / 255.0f;
    } else {
      const uint16_t v = static_cast<uint16_t>((out[2 * i] << 8) | out[2 * i + 1]);
      img.pixels[i] = static_cast<float>(v) / 65535.0f;
    }
  }
  return img;
}

Tensor<float> to_tensor(const GrayImage& img) {
  Tensor<float> t = Tensor<float>::zeros({1, 1, img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), t.data().begin());
  return t;
}

GrayImage from_tensor(const Tensor<float>& t) {
  contract(t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 1,
           "from_tensor: expected a [1,1,H,W] tensor");
  GrayImage img = GrayImage::create(t.dim(2), t.dim(3));
  for (size_t i = 0; i < img.size(); ++i)
    img.pixels[i] = std::min(1.0f, std::max(0.0f, t.data()[i]));
  return img;
}

}  // namespace bsnet
