#include "adaf/image_png.hpp"

#include <png.h>

#include <cmath>
#include <filesystem>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace adaf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error("png: " + what + " (" + path + ")");
}

}  // namespace

void write_png16(const std::string& path, const Matrix<Real>& rgb, int h, int w,
                 const std::map<std::string, std::string>& text) {
  if (rgb.rows() != static_cast<Eigen::Index>(h) * w || rgb.cols() != 3)
    throw std::invalid_argument("write_png16: rgb must be (h*w) x 3");
  if (rgb.minCoeff() < Real(-1e-9) || rgb.maxCoeff() > Real(1) + Real(1e-9))
    throw std::invalid_argument("write_png16: pixel values must lie in [0,1]");
  if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("cannot open for writing", path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("create_write_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("create_info_struct failed", path);
  }
  std::vector<png_text> texts;
  std::vector<std::string> keys, vals;  // keep storage alive past set_text
  keys.reserve(text.size());
  vals.reserve(text.size());
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("libpng error while writing", path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 16,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (const auto& [k, v] : text) {
    keys.push_back(k);
    vals.push_back(v);
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = keys.back().data();
    t.text = vals.back().data();
    t.text_length = vals.back().size();
    texts.push_back(t);
  }
  if (!texts.empty()) png_set_text(png, info, texts.data(), static_cast<int>(texts.size()));
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(w) * 3 * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(rgb(r, c), Real(0), Real(1));
        auto q = static_cast<unsigned>(std::lround(v * 65535.0));
        row[(static_cast<std::size_t>(x) * 3 + c) * 2] = static_cast<png_byte>(q >> 8);
        row[(static_cast<std::size_t>(x) * 3 + c) * 2 + 1] = static_cast<png_byte>(q & 0xff);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageFile read_png16(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("cannot open for reading", path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("create_read_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("create_info_struct failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("libpng error while reading", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  ImageFile im;
  im.w = static_cast<int>(png_get_image_width(png, info));
  im.h = static_cast<int>(png_get_image_height(png, info));
  int depth = png_get_bit_depth(png, info);
  int color = png_get_color_type(png, info);
  if (depth != 16 || color != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("expected 16-bit RGB", path);
  }

  png_textp tptr = nullptr;
  int tcount = 0;
  if (png_get_text(png, info, &tptr, &tcount) > 0)
    for (int i = 0; i < tcount; ++i) im.text[tptr[i].key] = tptr[i].text ? tptr[i].text : "";

  im.rgb.resize(static_cast<Eigen::Index>(im.h) * im.w, 3);
  std::vector<png_byte> row(static_cast<std::size_t>(im.w) * 3 * 2);
  for (int y = 0; y < im.h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < im.w; ++x) {
      Eigen::Index r = static_cast<Eigen::Index>(y) * im.w + x;
      for (int c = 0; c < 3; ++c) {
        unsigned hi = row[(static_cast<std::size_t>(x) * 3 + c) * 2];
        unsigned lo = row[(static_cast<std::size_t>(x) * 3 + c) * 2 + 1];
        im.rgb(r, c) = static_cast<Real>((hi << 8) | lo) / Real(65535);
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return im;
}

}  // namespace adaf
