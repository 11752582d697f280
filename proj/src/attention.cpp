#include "dla/attention.hpp"

#include <cmath>
#include <numeric>

namespace dla {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::None: return "none";
        case Variant::MrlaB: return "mrla-b";
        case Variant::MrlaL: return "mrla-l";
        case Variant::DlaB: return "dla-b";
        case Variant::DlaL: return "dla-l";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "none") return Variant::None;
    if (name == "mrla-b") return Variant::MrlaB;
    if (name == "mrla-l") return Variant::MrlaL;
    if (name == "dla-b") return Variant::DlaB;
    if (name == "dla-l") return Variant::DlaL;
    throw ConfigError("unknown attention variant '" + name + "'");
}

bool variant_is_dynamic(Variant v) { return v == Variant::DlaB || v == Variant::DlaL; }
bool variant_is_light(Variant v) { return v == Variant::MrlaL || v == Variant::DlaL; }

void AttentionConfig::validate() const {
    if (variant == Variant::None) return;
    if (heads <= 0) throw ConfigError("attention: heads must be positive");
    if (channels <= 0 || channels % heads != 0)
        throw ConfigError("attention: channels " + std::to_string(channels) +
                          " not divisible by heads " + std::to_string(heads));
    if (resolved_key_dim() < 1) throw ConfigError("attention: key width must be >= 1");
    if (variant_is_dynamic(variant) && (reduction <= 0 || channels % reduction != 0))
        throw ConfigError("attention: channels not divisible by reduction ratio");
}

namespace {

Tensor project_descriptor(const Tensor& pooled, const Tensor& weight, const AttentionConfig& cfg) {
    Tensor flat = linear(pooled, weight);  // [B, H*Dk]
    return view(flat, {pooled.dim(0), cfg.heads, cfg.resolved_key_dim()});
}

Tensor scaled_score(const Tensor& q, const Tensor& k, const AttentionConfig& cfg) {
    return scale(head_dot(q, k), 1.0 / std::sqrt(static_cast<double>(cfg.resolved_key_dim())));
}

void fill_record(AttentionRecord* record, const Tensor& weights, int layer, int key_count) {
    if (!record) return;
    const int batch = weights.dim(0), heads = weights.dim(1), count = weights.dim(2);
    record->query_layer = layer;
    record->weights.assign(static_cast<size_t>(key_count), 0.0);
    // Light variants attend to the current key only; earlier slots stay 0.
    const int base = key_count - count;
    for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < count; ++i)
                record->weights[static_cast<size_t>(base + i)] +=
                    weights.data()[(static_cast<size_t>(b) * heads + h) * count + i];
    for (double& w : record->weights) w /= static_cast<double>(batch) * heads;
}

void require_layer(const TokenCache& cache, int layer, const char* who) {
    if (cache.empty())
        throw ContractError(std::string(who) + ": empty token cache");
    if (layer < 1 || layer > static_cast<int>(cache.size()))
        throw ContractError(std::string(who) + ": cache holds " + std::to_string(cache.size()) +
                            " layers, queried at " + std::to_string(layer));
}

}  // namespace

LayerTokens compute_tokens(const Tensor& feature, int layer, const ProjectionSet& proj,
                           const AttentionConfig& cfg) {
    if (layer < 1 || layer > static_cast<int>(proj.layers.size()))
        throw ConfigError("compute_tokens: no projection for layer " + std::to_string(layer));
    const LayerProjection& maps = proj.layers[static_cast<size_t>(layer) - 1];
    LayerTokens tokens;
    tokens.feature = feature;
    tokens.pooled = global_average_pool(feature);
    tokens.query = project_descriptor(tokens.pooled, maps.query_w, cfg);
    tokens.key = project_descriptor(tokens.pooled, maps.key_w, cfg);
    tokens.value = conv2d(feature, maps.value_w, 1, 0);
    return tokens;
}

Tensor attention_base(const TokenCache& cache, int layer, const AttentionConfig& cfg,
                      AttentionRecord* record) {
    require_layer(cache, layer, "attention_base");
    const Tensor& query = cache[static_cast<size_t>(layer) - 1].query;
    std::vector<Tensor> scores, values;
    scores.reserve(static_cast<size_t>(layer));
    values.reserve(static_cast<size_t>(layer));
    for (int i = 0; i < layer; ++i) {
        scores.push_back(scaled_score(query, cache[static_cast<size_t>(i)].key, cfg));
        values.push_back(cache[static_cast<size_t>(i)].value);
    }
    Tensor weights = softmax_lastdim(stack_lastdim(scores));
    fill_record(record, weights, layer, layer);
    return head_mix(weights, values, cfg.heads);
}

Tensor attention_base_matrix(const TokenCache& cache, int layer, const AttentionConfig& cfg) {
    require_layer(cache, layer, "attention_base_matrix");
    NoGradGuard no_grad;
    const int heads = cfg.heads, key_dim = cfg.resolved_key_dim();
    const Tensor& query = cache[static_cast<size_t>(layer) - 1].query;
    const Shape vshape = cache[0].value.shape();
    const int batch = vshape[0], channels = vshape[1];
    const long spatial = static_cast<long>(vshape[2]) * vshape[3];
    const int group = channels / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(key_dim));

    std::vector<double> out(static_cast<size_t>(batch) * channels * spatial, 0.0);
    std::vector<double> key_matrix(static_cast<size_t>(layer) * key_dim);
    std::vector<double> row(static_cast<size_t>(layer));
    for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h) {
            // concatenated key matrix [l, Dk] for this (batch, head)
            for (int i = 0; i < layer; ++i) {
                const double* k = cache[static_cast<size_t>(i)].key.data().data() +
                                  (static_cast<size_t>(b) * heads + h) * key_dim;
                std::copy_n(k, key_dim, key_matrix.begin() + static_cast<size_t>(i) * key_dim);
            }
            const double* q = query.data().data() + (static_cast<size_t>(b) * heads + h) * key_dim;
            gemm(key_matrix.data(), q, row.data(), layer, key_dim, 1, false);
            double peak = row[0] * inv_scale;
            for (int i = 0; i < layer; ++i) {
                row[static_cast<size_t>(i)] *= inv_scale;
                peak = std::max(peak, row[static_cast<size_t>(i)]);
            }
            double denom = 0.0;
            for (int i = 0; i < layer; ++i) {
                row[static_cast<size_t>(i)] = std::exp(row[static_cast<size_t>(i)] - peak);
                denom += row[static_cast<size_t>(i)];
            }
            for (int i = 0; i < layer; ++i) row[static_cast<size_t>(i)] /= denom;
            for (int i = 0; i < layer; ++i) {
                const double w = row[static_cast<size_t>(i)];
                const double* v = cache[static_cast<size_t>(i)].value.data().data();
                for (int cg = 0; cg < group; ++cg) {
                    const int c = h * group + cg;
                    const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
                    for (long p = 0; p < spatial; ++p) out[off + p] += w * v[off + p];
                }
            }
        }
    return Tensor::from_data(vshape, std::move(out));
}

Tensor attention_light(const Tensor& prev_output, const Tensor& layer_scale, const TokenCache& cache,
                       int layer, const AttentionConfig& cfg, AttentionRecord* record) {
    require_layer(cache, layer, "attention_light");
    const LayerTokens& current = cache[static_cast<size_t>(layer) - 1];
    std::vector<Tensor> scores = {scaled_score(current.query, current.key, cfg)};
    Tensor weights = softmax_lastdim(stack_lastdim(scores));
    fill_record(record, weights, layer, layer);
    std::vector<Tensor> values = {current.value};
    Tensor current_term = head_mix(weights, values, cfg.heads);
    if (!prev_output.defined()) return current_term;
    return add(channel_scale(prev_output, layer_scale), current_term);
}

CellState dla_forward_context(const TokenCache& cache, int layer, const CellParams& cell,
                              const Tensor& initial_cell) {
    require_layer(cache, layer, "dla_forward_context");
    CellState state = cell_initial_state(cell, initial_cell);
    for (int m = 0; m < layer; ++m) state = cell_step(cell, cache[static_cast<size_t>(m)].pooled, state);
    return state;
}

void dla_backward_refresh(TokenCache& cache, const CellState& context, int layer,
                          const CellParams& cell, const ProjectionSet& proj,
                          const AttentionConfig& cfg, const RefreshHooks& hooks) {
    require_layer(cache, layer, "dla_backward_refresh");
    const int refresh_count = layer - 1;
    if (refresh_count <= 0) return;

    std::vector<int> order(static_cast<size_t>(refresh_count));
    std::iota(order.begin(), order.end(), 0);
    if (hooks.update_order) {
        if (static_cast<int>(hooks.update_order->size()) != refresh_count)
            throw ContractError("refresh: update order length mismatch");
        order = *hooks.update_order;
    }

    // Gates are functions of the pre-refresh cache only; compute them all
    // before touching any feature so the update order cannot matter.
    std::vector<Tensor> gates(static_cast<size_t>(refresh_count));
    for (int m : order) {
        if (hooks.identity_gate) {
            const Tensor& pooled = cache[static_cast<size_t>(m)].pooled;
            gates[static_cast<size_t>(m)] = Tensor::full({pooled.dim(0), pooled.dim(1)}, 1.0);
        } else {
            CellState gate_state =
                cell_step(cell, cache[static_cast<size_t>(m)].pooled, context);
            gates[static_cast<size_t>(m)] = cell_output(cell, gate_state);
        }
    }
    for (int m : order) {
        Tensor refreshed =
            channel_scale_batched(cache[static_cast<size_t>(m)].feature, gates[static_cast<size_t>(m)]);
        cache[static_cast<size_t>(m)] = compute_tokens(refreshed, m + 1, proj, cfg);
    }
}

StageAttention::StageAttention(const AttentionConfig& cfg, int depth, int stage_id, Rng& rng)
    : cfg_(cfg), depth_(depth), stage_id_(stage_id) {
    cfg_.validate();
    if (cfg_.variant == Variant::None) return;
    const int c = cfg_.channels;
    const int proj_dim = cfg_.heads * cfg_.resolved_key_dim();
    for (int l = 0; l < depth; ++l) {
        LayerProjection maps;
        maps.query_w = init_linear_weight(rng, {proj_dim, c});
        maps.key_w = init_linear_weight(rng, {proj_dim, c});
        maps.value_w = init_conv_weight(rng, {c, c, 1, 1});
        proj_.layers.push_back(std::move(maps));
    }
    if (variant_is_light(cfg_.variant)) {
        // lambda starts at 1: the recurrence begins as a pass-through
        for (int l = 0; l < depth; ++l) output_scales_.push_back(Tensor::full({c}, 1.0, true));
    }
    if (variant_is_dynamic(cfg_.variant)) {
        cell_ = CellParams::create(cfg_.cell, c, cfg_.reduction, cfg_.state_norm, rng);
        context_init_ = init_normal(rng, {c}, 0.0, 0.1, false);
    }
}

void StageAttention::reset() {
    cache_.clear();
    prev_output_ = Tensor();
}

Tensor StageAttention::apply(const Tensor& feature, std::vector<AttentionRecord>* records) {
    if (cfg_.variant == Variant::None) return feature;
    const int layer = static_cast<int>(cache_.size()) + 1;
    if (layer > depth_)
        throw ContractError("stage attention: block " + std::to_string(layer) +
                            " exceeds configured depth " + std::to_string(depth_));
    cache_.push_back(compute_tokens(feature, layer, proj_, cfg_));

    if (variant_is_dynamic(cfg_.variant)) {
        const int batch = feature.dim(0);
        std::vector<double> seed(static_cast<size_t>(batch) * cfg_.channels);
        for (int b = 0; b < batch; ++b)
            std::copy_n(context_init_.data().begin(), cfg_.channels,
                        seed.begin() + static_cast<size_t>(b) * cfg_.channels);
        Tensor initial = Tensor::from_data({batch, cfg_.channels}, std::move(seed));
        CellState context = dla_forward_context(cache_, layer, cell_, initial);
        dla_backward_refresh(cache_, context, layer, cell_, proj_, cfg_, hooks);
    }

    AttentionRecord record;
    record.stage = stage_id_;
    Tensor output;
    switch (cfg_.variant) {
        case Variant::MrlaB:
        case Variant::DlaB:
            output = attention_base(cache_, layer, cfg_, records ? &record : nullptr);
            break;
        case Variant::MrlaL: {
            output = attention_light(prev_output_, layer > 1 ? layer_scale(layer) : Tensor(), cache_,
                                     layer, cfg_, records ? &record : nullptr);
            prev_output_ = output;
            break;
        }
        case Variant::DlaL: {
            // Earlier features were refreshed, so the recurrence is replayed
            // from layer 1 over the current tokens.
            Tensor running;
            for (int m = 1; m <= layer; ++m) {
                AttentionRecord* sink = (m == layer && records) ? &record : nullptr;
                running = attention_light(running, m > 1 ? layer_scale(m) : Tensor(), cache_, m, cfg_,
                                          sink);
            }
            output = running;
            break;
        }
        default:
            throw ConfigError("stage attention: bad variant");
    }
    if (records) records->push_back(std::move(record));
    return add(feature, output);
}

std::vector<NamedTensor> StageAttention::named_tensors(const std::string& prefix) const {
    std::vector<NamedTensor> out;
    if (cfg_.variant == Variant::None) return out;
    for (size_t l = 0; l < proj_.layers.size(); ++l) {
        const std::string base = prefix + ".layer" + std::to_string(l + 1);
        out.emplace_back(base + ".query_w", proj_.layers[l].query_w);
        out.emplace_back(base + ".key_w", proj_.layers[l].key_w);
        out.emplace_back(base + ".value_w", proj_.layers[l].value_w);
    }
    for (size_t l = 0; l < output_scales_.size(); ++l)
        out.emplace_back(prefix + ".layer" + std::to_string(l + 1) + ".output_scale", output_scales_[l]);
    if (variant_is_dynamic(cfg_.variant)) {
        auto cell_tensors = cell_.named_tensors(prefix + ".cell");
        out.insert(out.end(), cell_tensors.begin(), cell_tensors.end());
        out.emplace_back(prefix + ".context_init", context_init_);
    }
    return out;
}

}  // namespace dla
