#pragma once

#include <map>
#include <string>

#include "dicforge/common.hpp"

namespace dicforge::png {

/// Writes a [0,1] image as 16-bit grayscale PNG, intensity = round(v * 65535).
/// Encoding settings are fixed so identical images give identical bytes.
void write_gray16(const std::string& path, const Image& img);

/// Reads a 16-bit (or 8-bit) grayscale PNG back into [0,1].
Image read_gray16(const std::string& path);

/// Writes a [0,1] image as 8-bit grayscale PNG with tEXt chunks attached.
/// Used for rendered error/variance maps; `text` carries the normalization
/// metadata (raw min/max, clamp ceiling, kind).
void write_gray8(const std::string& path, const Image& img,
                 const std::map<std::string, std::string>& text = {});

/// Returns the tEXt chunks of a PNG (empty map if none).
std::map<std::string, std::string> read_text_chunks(const std::string& path);

}  // namespace dicforge::png
