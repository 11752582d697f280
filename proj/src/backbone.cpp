#include "dla/backbone.hpp"

namespace dla {

void NetworkConfig::validate() const {
    if (in_channels <= 0 || height <= 0 || width <= 0) throw ConfigError("network: bad input dims");
    if (stage_widths.empty()) throw ConfigError("network: no stages");
    if (blocks_per_stage < 1) throw ConfigError("network: blocks_per_stage must be >= 1");
    if (classes < 2) throw ConfigError("network: need at least two classes");
    if (heads < 1) throw ConfigError("network: heads must be >= 1");
    for (int w : stage_widths) {
        if (w <= 0) throw ConfigError("network: non-positive stage width");
        if (variant != Variant::None && w % heads != 0)
            throw ConfigError("network: stage width " + std::to_string(w) +
                              " not divisible by heads " + std::to_string(heads));
        if (variant_is_dynamic(variant) && w % reduction != 0)
            throw ConfigError("network: stage width " + std::to_string(w) +
                              " not divisible by reduction " + std::to_string(reduction));
    }
}

Tensor ResidualBlock::forward(const Tensor& x, bool training) {
    Tensor main = relu(bn1(conv1(x), training));
    main = bn2(conv2(main), training);
    Tensor skip = x;
    if (shortcut_conv) skip = (*shortcut_bn)((*shortcut_conv)(x), training);
    return relu(add(main, skip));
}

namespace {

BatchNormLayer make_bn(int channels) {
    BatchNormLayer bn;
    bn.gamma = Tensor::full({channels}, 1.0, true);
    bn.beta = Tensor::zeros({channels}, true);
    bn.running_mean = Tensor::zeros({channels});
    bn.running_var = Tensor::full({channels}, 1.0);
    return bn;
}

}  // namespace

Network::Network(const NetworkConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);

    const int stem_out = cfg_.stage_widths[0];
    stem_.weight = init_conv_weight(rng, {stem_out, cfg_.in_channels, 3, 3});
    stem_.stride = 1;
    stem_.padding = 1;
    stem_bn_ = make_bn(stem_out);
    register_tensor("stem.conv_w", stem_.weight, true);
    register_tensor("stem.bn_gamma", stem_bn_.gamma, true);
    register_tensor("stem.bn_beta", stem_bn_.beta, true);
    register_tensor("stem.bn_mean", stem_bn_.running_mean, false);
    register_tensor("stem.bn_var", stem_bn_.running_var, false);

    int in_ch = stem_out;
    for (size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
        const int out_ch = cfg_.stage_widths[s];
        std::vector<ResidualBlock> blocks;
        for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
            const int stride = (b == 0 && s > 0) ? 2 : 1;
            ResidualBlock block;
            block.conv1.weight = init_conv_weight(rng, {out_ch, in_ch, 3, 3});
            block.conv1.stride = stride;
            block.conv1.padding = 1;
            block.bn1 = make_bn(out_ch);
            block.conv2.weight = init_conv_weight(rng, {out_ch, out_ch, 3, 3});
            block.conv2.stride = 1;
            block.conv2.padding = 1;
            block.bn2 = make_bn(out_ch);
            if (stride != 1 || in_ch != out_ch) {
                Conv2dLayer down;
                down.weight = init_conv_weight(rng, {out_ch, in_ch, 1, 1});
                down.stride = stride;
                down.padding = 0;
                block.shortcut_conv = down;
                block.shortcut_bn = make_bn(out_ch);
            }
            const std::string base =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
            register_tensor(base + ".conv1_w", block.conv1.weight, true);
            register_tensor(base + ".bn1_gamma", block.bn1.gamma, true);
            register_tensor(base + ".bn1_beta", block.bn1.beta, true);
            register_tensor(base + ".bn1_mean", block.bn1.running_mean, false);
            register_tensor(base + ".bn1_var", block.bn1.running_var, false);
            register_tensor(base + ".conv2_w", block.conv2.weight, true);
            register_tensor(base + ".bn2_gamma", block.bn2.gamma, true);
            register_tensor(base + ".bn2_beta", block.bn2.beta, true);
            register_tensor(base + ".bn2_mean", block.bn2.running_mean, false);
            register_tensor(base + ".bn2_var", block.bn2.running_var, false);
            if (block.shortcut_conv) {
                register_tensor(base + ".down_w", block.shortcut_conv->weight, true);
                register_tensor(base + ".down_gamma", block.shortcut_bn->gamma, true);
                register_tensor(base + ".down_beta", block.shortcut_bn->beta, true);
                register_tensor(base + ".down_mean", block.shortcut_bn->running_mean, false);
                register_tensor(base + ".down_var", block.shortcut_bn->running_var, false);
            }
            blocks.push_back(std::move(block));
            in_ch = out_ch;
        }
        stages_.push_back(std::move(blocks));

        AttentionConfig attn_cfg;
        attn_cfg.variant = cfg_.variant;
        attn_cfg.heads = cfg_.heads;
        attn_cfg.channels = out_ch;
        attn_cfg.cell = cfg_.cell;
        attn_cfg.reduction = cfg_.reduction;
        attn_cfg.state_norm = cfg_.state_norm;
        auto attention = std::make_unique<StageAttention>(attn_cfg, cfg_.blocks_per_stage,
                                                          static_cast<int>(s + 1), rng);
        const std::string prefix = "stage" + std::to_string(s + 1) + ".attn";
        for (const auto& [name, tensor] : attention->named_tensors(prefix))
            register_tensor(name, tensor, tensor.requires_grad());
        attention_.push_back(std::move(attention));
    }

    const int feat = cfg_.stage_widths.back();
    fc_w_ = init_linear_weight(rng, {cfg_.classes, feat});
    fc_b_ = Tensor::zeros({cfg_.classes}, true);
    register_tensor("fc.w", fc_w_, true);
    register_tensor("fc.b", fc_b_, true);
}

void Network::register_tensor(const std::string& name, const Tensor& t, bool trainable) {
    params_.push_back({name, t, trainable});
}

long Network::trainable_count() const {
    long n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.tensor.size();
    return n;
}

Tensor Network::forward(const Tensor& batch, bool training, std::vector<AttentionRecord>* records) {
    if (batch.rank() != 4 || batch.dim(1) != cfg_.in_channels || batch.dim(2) != cfg_.height ||
        batch.dim(3) != cfg_.width)
        throw DimensionError("network: input " + shape_str(batch.shape()) + " wants [B," +
                             std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.height) +
                             "," + std::to_string(cfg_.width) + "]");
    Tensor x = relu(stem_bn_(stem_(batch), training));
    for (size_t s = 0; s < stages_.size(); ++s) {
        attention_[s]->reset();
        for (ResidualBlock& block : stages_[s]) {
            x = block.forward(x, training);
            x = attention_[s]->apply(x, records);
        }
    }
    Tensor pooled = global_average_pool(x);
    return linear(pooled, fc_w_, &fc_b_);
}

long attention_attachment_cost(const AttentionConfig& cfg, int blocks, bool include_biases) {
    if (cfg.variant == Variant::None) return 0;
    const long c = cfg.channels;
    const long proj_dim = static_cast<long>(cfg.heads) * cfg.resolved_key_dim();
    long per_layer = 2 * proj_dim * c + c * c;  // query, key, 1x1 value map
    if (variant_is_light(cfg.variant)) per_layer += c;  // lambda
    long total = per_layer * blocks;
    if (variant_is_dynamic(cfg.variant)) {
        CellParams probe;  // enumerate through a zero-seeded instance
        Rng rng(0);
        probe = CellParams::create(cfg.cell, cfg.channels, cfg.reduction, cfg.state_norm, rng);
        total += param_count(probe, include_biases);
    }
    return total;
}

}  // namespace dla
