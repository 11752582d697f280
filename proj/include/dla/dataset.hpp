#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dla/tensor.hpp"

namespace dla {

struct DatasetSpec {
    int n_train = 5000;
    int n_test = 1000;
    int classes = 10;
    int height = 16;
    int width = 16;
    int channels = 3;
    double noise = 0.1;  // Gaussian sigma as a fraction of full scale
    uint64_t seed = 7;

    void validate() const;
};

struct Dataset {
    int channels = 0, height = 0, width = 0, classes = 0;
    std::vector<uint8_t> images;  // sample-major, then channel, row, column
    std::vector<uint8_t> labels;

    int count() const { return static_cast<int>(labels.size()); }
    long sample_bytes() const { return static_cast<long>(channels) * height * width; }
    const uint8_t* image(int index) const { return images.data() + sample_bytes() * index; }
};

// Number of distinct pattern classes the renderer knows.
int pattern_library_size();

// Deterministic parametric pattern for one class. Jitter indexes the class's
// discrete variation space (phase, offset, orientation, brightness...);
// variant_count reports its size.
int pattern_variant_count(int class_id);
std::vector<uint8_t> render_pattern(int class_id, int variant, int channels, int height, int width);

// Stratified synthetic sets (train, test); class counts differ by at most 1.
std::pair<Dataset, Dataset> generate_synthetic(const DatasetSpec& spec);

// "DLAD" container, little-endian; see README for the byte layout.
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

}  // namespace dla
