#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "aupipe/errors.hpp"

namespace aupipe {

/// 8-bit interleaved RGB raster, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

namespace detail {

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

struct PngReadState {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

}  // namespace detail

/// Binary PPM (P6, maxval 255).
inline Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw ValidationError("PPM: malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ValidationError("PPM: not a P6 file");
  pos = 2;
  const std::size_t w = number(), h = number(), maxval = number();
  if (maxval != 255) throw ValidationError("PPM: only maxval 255 is supported");
  if (w == 0 || h == 0) throw ValidationError("PPM: zero-area image");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + w * h * 3) throw ValidationError("PPM: truncated pixel data");
  Image img(w, h);
  std::copy_n(bytes.begin() + static_cast<long>(pos), w * h * 3, img.pixels.begin());
  return img;
}

inline std::vector<std::uint8_t> encode_ppm(const Image& img) {
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8)) throw ValidationError("PNG: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("PNG: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("PNG: cannot allocate info");
  }
  Image img;
  std::vector<png_bytep> rows;
  detail::PngReadState state{&bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("PNG: decode failed");
  }
  png_set_read_fn(png, &state, [](png_structp p, png_bytep out, png_size_t n) {
    auto* s = static_cast<detail::PngReadState*>(png_get_io_ptr(p));
    if (s->offset + n > s->bytes->size()) png_error(p, "truncated");
    std::copy_n(s->bytes->data() + s->offset, n, out);
    s->offset += n;
  });
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.pixels.resize(img.width * img.height * 3);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("PNG: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG: encode failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* o = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        o->insert(o->end(), data, data + n);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

/// Reads PNG or P6 PPM, chosen by content signature.
inline Image read_image(const std::filesystem::path& path) {
  auto bytes = detail::read_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  if (bytes.size() >= 8 && !png_sig_cmp(bytes.data(), 0, 8)) return decode_png(bytes);
  throw ValidationError(path.string() + ": unsupported image format (expected PNG or P6 PPM)");
}

/// Writes PNG when the extension is .png, PPM otherwise.
inline void write_image(const std::filesystem::path& path, const Image& img) {
  auto bytes = path.extension() == ".png" ? encode_png(img) : encode_ppm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::string image_content_type(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".ppm") return "image/x-portable-pixmap";
  return "application/octet-stream";
}

}  // namespace aupipe
