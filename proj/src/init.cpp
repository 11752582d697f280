#include "dla/init.hpp"

#include <cmath>

namespace dla {

Tensor init_conv_weight(Rng& rng, Shape shape) {
    if (shape.size() != 4) throw DimensionError("init_conv_weight: want [O,C,k,k]");
    const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
    const double stddev = std::sqrt(2.0 / fan_in);
    std::vector<double> data(static_cast<size_t>(numel(shape)));
    for (double& v : data) v = rng.normal(0.0, stddev);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor init_linear_weight(Rng& rng, Shape shape) {
    if (shape.size() != 2) throw DimensionError("init_linear_weight: want [out,in]");
    const double bound = std::sqrt(1.0 / static_cast<double>(shape[1]));
    std::vector<double> data(static_cast<size_t>(numel(shape)));
    for (double& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor init_normal(Rng& rng, Shape shape, double mean, double stddev, bool requires_grad) {
    std::vector<double> data(static_cast<size_t>(numel(shape)));
    for (double& v : data) v = rng.normal(mean, stddev);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace dla
