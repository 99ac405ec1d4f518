#pragma once

#include <string>

#include "refcolor/raster.hpp"

namespace refcolor {

// 8-bit PNG in/out. Reading converts bytes to [0,1] (v = byte/255); gray and
// gray+alpha files load as 1 channel, color files as 3 (alpha is dropped).
// Writing rounds v*255 to the nearest byte.
Raster read_png(const std::string& path);
void write_png(const Raster& img, const std::string& path);

}  // namespace refcolor
