#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "vpfnet/tensor.hpp"

namespace vpfnet {

/// Writes a tensor as a NumPy .npy file (format version 1.0, little-endian
/// float32). Used for confidence maps and latent diagnostics dumps.
inline void write_npy(const std::string& path, const Tensor& t) {
    std::string shape = "(";
    for (std::size_t i = 0; i < t.rank(); ++i) shape += std::to_string(t.dim(i)) + ",";
    if (t.rank() > 1) shape.pop_back();
    shape += ")";
    std::string header =
        "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape + ", }";
    std::size_t unpadded = 10 + header.size() + 1;
    std::size_t pad = (64 - unpadded % 64) % 64;
    header += std::string(pad, ' ');
    header += '\n';

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write npy file: " + path);
    const char magic[] = "\x93NUMPY";
    out.write(magic, 6);
    char version[2] = {1, 0};
    out.write(version, 2);
    auto hlen = static_cast<std::uint16_t>(header.size());
    out.write(reinterpret_cast<const char*>(&hlen), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (std::size_t i = 0; i < t.size(); ++i) {
        float v = static_cast<float>(t[i]);
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
}

} // namespace vpfnet
