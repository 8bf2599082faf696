#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vpfnet {

/// Complementary-modality synthetic dataset. Class identity is split across
/// modalities by construction: odd classes render only into the thermal
/// channel (RGB shows background texture there), even nonzero classes only
/// into RGB (thermal stays flat). Night images get RGB contrast reduced 5x
/// plus noise, so neither modality alone suffices.
struct SyntheticSpec {
    std::string root;
    std::size_t height = 64, width = 64;
    int num_classes = 4; // >= 3: background plus at least one class per modality
    std::size_t train = 600, val = 50, test = 100;
    std::uint64_t seed = 7;
};

struct SyntheticReport {
    std::vector<std::uint64_t> label_histogram;
    std::size_t images = 0;
    std::size_t day = 0, night = 0;
};

/// Writes the dataset (canonical layout) to spec.root; deterministic in the
/// seed, including file bytes.
SyntheticReport generate_synthetic(const SyntheticSpec& spec);

} // namespace vpfnet
