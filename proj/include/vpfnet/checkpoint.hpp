#pragma once

#include <map>
#include <string>

#include "vpfnet/nn.hpp"
#include "vpfnet/tensor.hpp"

namespace vpfnet {

/// Single-file checkpoint: a JSON header (config echo, step counter, tensor
/// directory) followed by raw row-major float64 data. Tensors are addressed
/// by name, so the format is stable under code reorganization.
struct Checkpoint {
    std::map<std::string, std::string> config;
    std::map<std::string, std::string> meta; // bookkeeping outside the config schema
    std::uint64_t step = 0;
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Collects model parameters and buffers into a checkpoint tensor map.
void collect_tensors(nn::ParamList& params, nn::BufferList& buffers,
                     std::map<std::string, Tensor>& out);

/// Copies checkpoint tensors into matching names; throws on shape mismatch.
/// Returns the number of tensors applied. With allow_missing, names absent
/// from the checkpoint are skipped (weight-import of partial checkpoints).
std::size_t apply_tensors(const std::map<std::string, Tensor>& saved,
                          nn::ParamList& params, nn::BufferList& buffers,
                          bool allow_missing = false);

} // namespace vpfnet
