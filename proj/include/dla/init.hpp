#pragma once

#include <cstdint>
#include <random>

#include "dla/tensor.hpp"

namespace dla {

// Seedable generator; every parameter draw in the project goes through one
// of these so a seed pins the whole initialization.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    double normal(double mean, double stddev) {
        std::normal_distribution<double> dist(mean, stddev);
        return dist(engine_);
    }
    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> dist(lo, hi);
        return dist(engine_);
    }
    // Uniform integer in [0, n).
    uint64_t integer(uint64_t n) {
        std::uniform_int_distribution<uint64_t> dist(0, n - 1);
        return dist(engine_);
    }
    bool coin() { return integer(2) == 1; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

// Fan-in-scaled normal, std = sqrt(2 / (Cin * k * k)).
Tensor init_conv_weight(Rng& rng, Shape shape);
// Uniform +-sqrt(1 / fan_in) for [out,in] maps.
Tensor init_linear_weight(Rng& rng, Shape shape);
Tensor init_normal(Rng& rng, Shape shape, double mean, double stddev, bool requires_grad);

}  // namespace dla
