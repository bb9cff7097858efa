#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "featherpoint/tensor.hpp"

namespace featherpoint {

/// 8-bit image, interleaved channels (1 = gray, 3 = RGB), row-major.
struct Image8 {
    std::size_t width = 0, height = 0, channels = 1;
    std::vector<std::uint8_t> pixels;
    bool operator==(const Image8&) const = default;
};

/// Parses P2/P3 (ASCII) and P5/P6 (binary) netpbm data. Samples with
/// maxval other than 255 are rescaled to 0..255 with rounding.
Image8 parse_pnm(const std::string& bytes);
/// Encodes gray images as P5/P2 and RGB images as P6/P3.
std::string encode_pnm(const Image8& img, bool binary = true);

Image8 read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image8& img, bool binary = true);

/// Gray (1,1,H,W) tensor in [0,1]; RGB uses 0.299 R + 0.587 G + 0.114 B.
Tensor image_to_gray(const Image8& img);
/// Rounds v*255 after clamping to [0,1].
Image8 gray_to_image(const Tensor& t);

}  // namespace featherpoint
