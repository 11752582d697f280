#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dla/attention.hpp"

namespace dla {

struct NetworkConfig {
    int in_channels = 3;
    int height = 16;
    int width = 16;
    std::vector<int> stage_widths = {16, 32, 64};
    int blocks_per_stage = 3;
    int classes = 10;
    Variant variant = Variant::None;
    CellKind cell = CellKind::DSU;
    Activation state_norm = Activation::Sigmoid;
    int heads = 2;
    int reduction = 4;
    uint64_t seed = 1;

    void validate() const;
};

struct ParamInfo {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

struct Conv2dLayer {
    Tensor weight;
    int stride = 1;
    int padding = 1;
    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, stride, padding); }
};

struct BatchNormLayer {
    Tensor gamma, beta, running_mean, running_var;
    Tensor operator()(const Tensor& x, bool training) {
        return batch_norm(x, gamma, beta, running_mean, running_var, training);
    }
};

// Two 3x3 convolutions with normalization; 1x1 projection shortcut when the
// shape changes.
struct ResidualBlock {
    Conv2dLayer conv1;
    BatchNormLayer bn1;
    Conv2dLayer conv2;
    BatchNormLayer bn2;
    std::optional<Conv2dLayer> shortcut_conv;
    std::optional<BatchNormLayer> shortcut_bn;

    Tensor forward(const Tensor& x, bool training);
};

class Network {
public:
    explicit Network(const NetworkConfig& cfg);

    Tensor forward(const Tensor& batch, bool training,
                   std::vector<AttentionRecord>* records = nullptr);

    const NetworkConfig& config() const { return cfg_; }
    std::vector<ParamInfo>& params() { return params_; }
    const std::vector<ParamInfo>& params() const { return params_; }
    long trainable_count() const;
    StageAttention& stage_attention(int stage) { return *attention_.at(static_cast<size_t>(stage)); }
    int stage_count() const { return static_cast<int>(cfg_.stage_widths.size()); }

private:
    NetworkConfig cfg_;
    Conv2dLayer stem_;
    BatchNormLayer stem_bn_;
    std::vector<std::vector<ResidualBlock>> stages_;
    std::vector<std::unique_ptr<StageAttention>> attention_;  // per stage; nullptr-free, may be variant None
    Tensor fc_w_, fc_b_;
    std::vector<ParamInfo> params_;

    void register_tensor(const std::string& name, const Tensor& t, bool trainable);
};

// Analytic cost of attaching an attention variant to one stage of width c
// with n blocks; used to audit the enumeration.
long attention_attachment_cost(const AttentionConfig& cfg, int blocks, bool include_biases);

}  // namespace dla
