#pragma once

#include <array>
#include <cstring>
#include <fstream>

#include "dexgrasp/core.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace dexgrasp {

struct Color {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Color&) const = default;
};

struct Image {
  int width = 0, height = 0;
  std::vector<Color> pixels;  // row-major

  Image() = default;
  Image(int w, int h, Color fill = {0, 0, 0}) : width(w), height(h), pixels(size_t(w) * h, fill) {}
  Color& at(int x, int y) { return pixels[size_t(y) * width + x]; }
  const Color& at(int x, int y) const { return pixels[size_t(y) * width + x]; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

struct DepthImage {
  int width = 0, height = 0;
  std::vector<float> depth;  // meters, 0 = background

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), depth(size_t(w) * h, 0.0f) {}
  float& at(int x, int y) { return depth[size_t(y) * width + x]; }
  float at(int x, int y) const { return depth[size_t(y) * width + x]; }
};

struct Mask2D {
  int width = 0, height = 0;
  std::vector<uint8_t> data;
  int region_id = -1;

  Mask2D() = default;
  Mask2D(int w, int h) : width(w), height(h), data(size_t(w) * h, 0) {}
  uint8_t& at(int x, int y) { return data[size_t(y) * width + x]; }
  uint8_t at(int x, int y) const { return data[size_t(y) * width + x]; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  size_t count() const {
    size_t n = 0;
    for (uint8_t v : data) n += v ? 1 : 0;
    return n;
  }
  bool empty() const { return count() == 0; }
};

// ---------------------------------------------------------------------------
// PNG, 8-bit RGB (and 8-bit grayscale on read), no interlace.

namespace detail {

inline void png_chunk(std::ofstream& f, const char type[4], const std::vector<uint8_t>& data) {
  auto be32 = [](uint32_t v) {
    std::array<uint8_t, 4> b{uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
    return b;
  };
  auto len = be32(uint32_t(data.size()));
  f.write(reinterpret_cast<const char*>(len.data()), 4);
  f.write(type, 4);
  if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), uInt(data.size()));
  auto c = be32(uint32_t(crc));
  f.write(reinterpret_cast<const char*>(c.data()), 4);
}

}  // namespace detail

inline void save_png(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InputError, "cannot write " + path);
  const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  f.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr(13);
  auto put32 = [&](std::vector<uint8_t>& v, size_t off, uint32_t val) {
    v[off] = uint8_t(val >> 24);
    v[off + 1] = uint8_t(val >> 16);
    v[off + 2] = uint8_t(val >> 8);
    v[off + 3] = uint8_t(val);
  };
  put32(ihdr, 0, uint32_t(img.width));
  put32(ihdr, 4, uint32_t(img.height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // RGB
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  detail::png_chunk(f, "IHDR", ihdr);

  std::vector<uint8_t> raw;
  raw.reserve(size_t(img.height) * (1 + size_t(img.width) * 3));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < img.width; ++x) {
      const Color& c = img.at(x, y);
      raw.push_back(c.r);
      raw.push_back(c.g);
      raw.push_back(c.b);
    }
  }
  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 9) != Z_OK)
    throw Error(ErrorCode::InputError, "PNG compression failed for " + path);
  comp.resize(comp_len);
  detail::png_chunk(f, "IDAT", comp);
  detail::png_chunk(f, "IEND", {});
}

inline Image load_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InputError, "cannot open " + path);
  uint8_t sig[8];
  f.read(reinterpret_cast<char*>(sig), 8);
  const uint8_t want[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (std::memcmp(sig, want, 8) != 0) throw Error(ErrorCode::InputError, "not a PNG: " + path);

  auto rd32 = [&]() {
    uint8_t b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | b[3];
  };

  uint32_t width = 0, height = 0;
  int color_type = -1;
  std::vector<uint8_t> idat;
  for (;;) {
    uint32_t len = rd32();
    char type[5] = {};
    f.read(type, 4);
    if (!f) throw Error(ErrorCode::InputError, "truncated PNG: " + path);
    std::vector<uint8_t> data(len);
    if (len) f.read(reinterpret_cast<char*>(data.data()), len);
    f.ignore(4);  // crc
    std::string t(type);
    if (t == "IHDR") {
      width = (uint32_t(data[0]) << 24) | (uint32_t(data[1]) << 16) | (uint32_t(data[2]) << 8) |
              data[3];
      height = (uint32_t(data[4]) << 24) | (uint32_t(data[5]) << 16) | (uint32_t(data[6]) << 8) |
               data[7];
      if (data[8] != 8 || (data[9] != 2 && data[9] != 0) || data[12] != 0)
        throw Error(ErrorCode::InputError, "unsupported PNG variant: " + path);
      color_type = data[9];
    } else if (t == "IDAT") {
      idat.insert(idat.end(), data.begin(), data.end());
    } else if (t == "IEND") {
      break;
    }
  }

  int channels = color_type == 2 ? 3 : 1;
  size_t stride = size_t(width) * channels;
  std::vector<uint8_t> raw(height * (stride + 1));
  uLongf raw_len = uLongf(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK)
    throw Error(ErrorCode::InputError, "PNG inflate failed: " + path);

  Image img{int(width), int(height)};
  std::vector<uint8_t> prev(stride, 0), cur(stride);
  size_t pos = 0;
  for (uint32_t y = 0; y < height; ++y) {
    uint8_t filter = raw[pos++];
    std::memcpy(cur.data(), raw.data() + pos, stride);
    pos += stride;
    for (size_t i = 0; i < stride; ++i) {
      uint8_t a = i >= size_t(channels) ? cur[i - channels] : 0;
      uint8_t b = prev[i];
      uint8_t c = i >= size_t(channels) ? prev[i - channels] : 0;
      switch (filter) {
        case 0: break;
        case 1: cur[i] = uint8_t(cur[i] + a); break;
        case 2: cur[i] = uint8_t(cur[i] + b); break;
        case 3: cur[i] = uint8_t(cur[i] + (a + b) / 2); break;
        case 4: {
          int p = int(a) + int(b) - int(c);
          int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
          uint8_t pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          cur[i] = uint8_t(cur[i] + pred);
          break;
        }
        default: throw Error(ErrorCode::InputError, "bad PNG filter: " + path);
      }
    }
    for (uint32_t x = 0; x < width; ++x) {
      if (channels == 3)
        img.at(int(x), int(y)) = {cur[x * 3], cur[x * 3 + 1], cur[x * 3 + 2]};
      else
        img.at(int(x), int(y)) = {cur[x], cur[x], cur[x]};
    }
    std::swap(prev, cur);
  }
  return img;
}

inline void save_mask_png(const Mask2D& mask, const std::string& path) {
  Image img(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) img.at(x, y) = {255, 255, 255};
  save_png(img, path);
}

inline Mask2D load_mask_png(const std::string& path) {
  Image img = load_png(path);
  Mask2D mask(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) mask.at(x, y) = img.at(x, y).r > 127 ? 1 : 0;
  return mask;
}

// Depth sidecar: raw little-endian float32 blob plus a JSON header file.
inline void save_depth(const DepthImage& d, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InputError, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(d.depth.data()),
          std::streamsize(d.depth.size() * sizeof(float)));
  nlohmann::json h;
  h["width"] = d.width;
  h["height"] = d.height;
  h["dtype"] = "float32-le";
  std::ofstream hf(path + ".json");
  hf << h.dump(2) << "\n";
}

inline DepthImage load_depth(const std::string& path) {
  std::ifstream hf(path + ".json");
  if (!hf) throw Error(ErrorCode::InputError, "cannot open " + path + ".json");
  nlohmann::json h = nlohmann::json::parse(hf);
  DepthImage d(h.at("width").get<int>(), h.at("height").get<int>());
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InputError, "cannot open " + path);
  f.read(reinterpret_cast<char*>(d.depth.data()), std::streamsize(d.depth.size() * sizeof(float)));
  if (!f) throw Error(ErrorCode::InputError, "truncated depth blob " + path);
  return d;
}

// ---------------------------------------------------------------------------
// Minimal 5x7 digit/letter stamping for labeled prompts.

namespace detail {

inline const char* glyph_rows(char c) {
  switch (c) {
    case '0': return "01110 10001 10011 10101 11001 10001 01110";
    case '1': return "00100 01100 00100 00100 00100 00100 01110";
    case '2': return "01110 10001 00001 00010 00100 01000 11111";
    case '3': return "11110 00001 00001 01110 00001 00001 11110";
    case '4': return "00010 00110 01010 10010 11111 00010 00010";
    case '5': return "11111 10000 11110 00001 00001 10001 01110";
    case '6': return "00110 01000 10000 11110 10001 10001 01110";
    case '7': return "11111 00001 00010 00100 01000 01000 01000";
    case '8': return "01110 10001 10001 01110 10001 10001 01110";
    case '9': return "01110 10001 10001 01111 00001 00010 01100";
    default: return "00000 00000 00000 00000 00000 00000 00000";
  }
}

}  // namespace detail

inline void stamp_label(Image& img, int x0, int y0, const std::string& text, Color fg,
                        int scale = 2) {
  int cx = x0;
  for (char c : text) {
    const char* rows = detail::glyph_rows(c);
    for (int ry = 0; ry < 7; ++ry)
      for (int rx = 0; rx < 5; ++rx) {
        if (rows[ry * 6 + rx] != '1') continue;
        for (int sy = 0; sy < scale; ++sy)
          for (int sx = 0; sx < scale; ++sx) {
            int px = cx + rx * scale + sx, py = y0 + ry * scale + sy;
            if (img.in_bounds(px, py)) img.at(px, py) = fg;
          }
      }
    cx += 6 * scale;
  }
}

}  // namespace dexgrasp
