// Copyright 2026 The cvqa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cvqa/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "cvqa/errors.hpp"

namespace cvqa::data {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_pgm16(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n65535\n";
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.data()[i]), 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(v * 65535.0));
    out.put(static_cast<char>(q >> 8));
    out.put(static_cast<char>(q & 0xff));
  }
  if (!out) throw IoError("short write to " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P5" || w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw IoError(path.string() + " is not a binary PGM");
  }
  Image img(h, w);
  const bool wide = maxval > 255;
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    unsigned v = static_cast<unsigned char>(in.get());
    if (wide) v = (v << 8) | static_cast<unsigned char>(in.get());
    img.data()[i] = static_cast<float>(v) / static_cast<float>(maxval);
  }
  if (!in) throw IoError(path.string() + " is truncated");
  return img;
}

void write_png(const Image& img, const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(img.cols()));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.cols()), static_cast<png_uint_32>(img.rows()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      row[static_cast<std::size_t>(c)] =
          static_cast<png_byte>(std::lround(std::clamp(static_cast<double>(img(r, c)), 0.0, 1.0) * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const auto stride = png_get_rowbytes(png, info);
  buffer.resize(stride * h);
  for (png_uint_32 r = 0; r < h; ++r) rows.push_back(buffer.data() + r * stride);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  Image img(h, w);
  for (png_uint_32 r = 0; r < h; ++r) {
    for (png_uint_32 c = 0; c < w; ++c) img(r, c) = static_cast<float>(buffer[r * stride + c]) / 255.0f;
  }
  return img;
}

Image resample(const Image& img, int size) {
  Image out = Image::Zero(size, size);
  const double sr = static_cast<double>(img.rows()) / size, sc = static_cast<double>(img.cols()) / size;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const auto r0 = static_cast<Eigen::Index>(std::floor(r * sr));
      const auto c0 = static_cast<Eigen::Index>(std::floor(c * sc));
      const auto r1 = std::max(r0 + 1, static_cast<Eigen::Index>(std::floor((r + 1) * sr)));
      const auto c1 = std::max(c0 + 1, static_cast<Eigen::Index>(std::floor((c + 1) * sc)));
      out(r, c) = img.block(r0, c0, std::min(r1, img.rows()) - r0, std::min(c1, img.cols()) - c0).mean();
    }
  }
  return out;
}

Image read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png" || ext == ".PNG") return read_png(path);
  if (ext == ".pgm" || ext == ".PGM") return read_pgm(path);
  throw IoError("unsupported image format: " + path.string());
}

}  // namespace cvqa::data
