#pragma once

#include "adaf/types.hpp"

#include <map>
#include <string>

namespace adaf {

struct ImageFile {
  int h = 0, w = 0;
  Matrix<Real> rgb;  // (h*w) x 3 in [0,1]
  std::map<std::string, std::string> text;
};

// 16-bit RGB PNG. Values are quantized as round(v * 65535), so any value of
// the form k/65535 round-trips exactly; in particular re-saving a loaded
// image is lossless.
void write_png16(const std::string& path, const Matrix<Real>& rgb, int h, int w,
                 const std::map<std::string, std::string>& text = {});

ImageFile read_png16(const std::string& path);

}  // namespace adaf
