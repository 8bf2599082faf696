#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "vpfnet/tensor.hpp"

namespace vpfnet {

/// Center-aligned nearest-neighbor index map: src = floor((dst + 0.5) * scale),
/// clamped to the source range. Used for label maps in both directions.
inline std::size_t nearest_src_index(std::size_t dst, std::size_t dst_size,
                                     std::size_t src_size) {
    double scale = static_cast<double>(src_size) / static_cast<double>(dst_size);
    auto idx = static_cast<std::size_t>(
        std::floor((static_cast<double>(dst) + 0.5) * scale));
    return std::min(idx, src_size - 1);
}

/// Nearest-neighbor resample of an integer map [H,W]; preserves the value set.
inline IntTensor resize_nearest(const IntTensor& src, std::size_t th, std::size_t tw) {
    std::size_t sh = src.dim(0), sw = src.dim(1);
    if (th == sh && tw == sw) return src;
    IntTensor out({th, tw});
    for (std::size_t i = 0; i < th; ++i) {
        std::size_t si = nearest_src_index(i, th, sh);
        for (std::size_t j = 0; j < tw; ++j)
            out.at2(i, j) = src.at2(si, nearest_src_index(j, tw, sw));
    }
    return out;
}

/// Bilinear resample of a [C,H,W] tensor (half-pixel centers).
inline Tensor resize_bilinear(const Tensor& src, std::size_t th, std::size_t tw) {
    std::size_t c = src.dim(0), sh = src.dim(1), sw = src.dim(2);
    if (th == sh && tw == sw) return src;
    Tensor out({c, th, tw});
    double sy = static_cast<double>(sh) / static_cast<double>(th);
    double sx = static_cast<double>(sw) / static_cast<double>(tw);
    for (std::size_t i = 0; i < th; ++i) {
        double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        fy = std::max(0.0, std::min(fy, static_cast<double>(sh - 1)));
        std::size_t y0 = static_cast<std::size_t>(fy);
        std::size_t y1 = std::min(y0 + 1, sh - 1);
        double wy = fy - static_cast<double>(y0);
        for (std::size_t j = 0; j < tw; ++j) {
            double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
            fx = std::max(0.0, std::min(fx, static_cast<double>(sw - 1)));
            std::size_t x0 = static_cast<std::size_t>(fx);
            std::size_t x1 = std::min(x0 + 1, sw - 1);
            double wx = fx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double v00 = src.at3(ch, y0, x0), v01 = src.at3(ch, y0, x1);
                double v10 = src.at3(ch, y1, x0), v11 = src.at3(ch, y1, x1);
                out.at3(ch, i, j) = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                                    wy * ((1.0 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

} // namespace vpfnet
