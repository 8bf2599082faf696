#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vpfnet/tensor.hpp"

namespace vpfnet {

/// 8-bit raster, interleaved rows (HWC). channels: 1 (gray), 3 (RGB), 4 (RGBA).
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
        return pixels[(y * width + x) * channels + c];
    }
};

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

/// uint8 HWC -> float CHW in [0,1].
Tensor to_float_chw(const Image& img);
/// float CHW in [0,1] -> uint8 HWC (values clamped, round-to-nearest).
Image to_image(const Tensor& chw);

/// Grayscale label image -> integer map (values are class ids).
IntTensor to_label_map(const Image& img);
Image label_map_to_image(const IntTensor& labels);

} // namespace vpfnet
