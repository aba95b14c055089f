#include "dicforge/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace dicforge::png {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw io_error("cannot open " + path);
  return f;
}

}  // namespace

void write_gray16(const std::string& path, const Image& img) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error("libpng write failure for " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width(), img.height(), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed encoder settings keep the output byte-deterministic.
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_write_info(png, info);

  std::vector<unsigned char> row(size_t(img.width()) * 2);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      float v = img.at(y, x);
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      const auto q = static_cast<uint16_t>(std::lround(double(v) * 65535.0));
      row[size_t(x) * 2] = static_cast<unsigned char>(q >> 8);  // PNG is big-endian
      row[size_t(x) * 2 + 1] = static_cast<unsigned char>(q & 0xFF);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_gray16(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw io_error("not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("libpng read failure for " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int width = int(png_get_image_width(png, info));
  const int height = int(png_get_image_height(png, info));
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("expected grayscale PNG: " + path);
  }
  if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  Image img(height, width);
  std::vector<unsigned char> row(png_get_rowbytes(png, info));
  const float scale = bit_depth == 16 ? 1.f / 65535.f : 1.f / 255.f;
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      uint32_t q = bit_depth == 16
                       ? (uint32_t(row[size_t(x) * 2]) << 8) | row[size_t(x) * 2 + 1]
                       : row[size_t(x)];
      img.at(y, x) = float(q) * scale;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_gray8(const std::string& path, const Image& img,
                 const std::map<std::string, std::string>& text) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error("libpng write failure for " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);

  std::vector<png_text> chunks(text.size());
  std::vector<std::string> keys, values;
  keys.reserve(text.size());
  values.reserve(text.size());
  size_t i = 0;
  for (const auto& [k, v] : text) {
    keys.push_back(k);
    values.push_back(v);
    chunks[i] = {};
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = keys.back().data();
    chunks[i].text = values.back().data();
    chunks[i].text_length = values.back().size();
    ++i;
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), int(chunks.size()));
  png_write_info(png, info);

  std::vector<unsigned char> row(size_t(img.width()));
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      float v = img.at(y, x);
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      row[size_t(x)] = static_cast<unsigned char>(std::lround(double(v) * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::map<std::string, std::string> read_text_chunks(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("libpng read failure for " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  std::map<std::string, std::string> out;
  png_textp chunks = nullptr;
  int n = 0;
  png_get_text(png, info, &chunks, &n);
  for (int i = 0; i < n; ++i) {
    out[chunks[i].key] = std::string(chunks[i].text, chunks[i].text_length);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace dicforge::png
