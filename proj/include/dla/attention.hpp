#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dla/cells.hpp"
#include "dla/ops.hpp"
#include "dla/tensor.hpp"

namespace dla {

enum class Variant { None, MrlaB, MrlaL, DlaB, DlaL };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);
bool variant_is_dynamic(Variant v);
bool variant_is_light(Variant v);

struct AttentionConfig {
    Variant variant = Variant::MrlaB;
    int heads = 2;
    int key_dim = 0;  // per-head key width; 0 means channels / heads
    int channels = 0;
    CellKind cell = CellKind::DSU;
    int reduction = 4;
    Activation state_norm = Activation::Sigmoid;

    int resolved_key_dim() const { return key_dim > 0 ? key_dim : channels / heads; }
    void validate() const;
};

// One layer's query/key/value maps. Queries and keys act on the pooled
// descriptor, the value map is a 1x1 convolution on the full feature map.
struct LayerProjection {
    Tensor query_w;  // [H*Dk, C]
    Tensor key_w;    // [H*Dk, C]
    Tensor value_w;  // [C, C, 1, 1]
};

struct ProjectionSet {
    std::vector<LayerProjection> layers;
};

// Cached per-layer tokens inside one stage. `feature` is replaced in place
// by the backward refresh; the other fields always describe `feature`.
struct LayerTokens {
    Tensor feature;  // [B, C, h, w]
    Tensor pooled;   // [B, C]
    Tensor query;    // [B, H, Dk]
    Tensor key;      // [B, H, Dk]
    Tensor value;    // [B, C, h, w]
};

using TokenCache = std::vector<LayerTokens>;

// Attention weights of one query layer, averaged over heads and batch.
struct AttentionRecord {
    int stage = 0;
    int query_layer = 0;  // 1-based within the stage
    std::vector<double> weights;
};

LayerTokens compute_tokens(const Tensor& feature, int layer, const ProjectionSet& proj,
                           const AttentionConfig& cfg);

// Full softmax over layers 1..l (per head), weighted sum of value maps.
Tensor attention_base(const TokenCache& cache, int layer, const AttentionConfig& cfg,
                      AttentionRecord* record = nullptr);

// Forward-only route computing the same quantity as one concatenated
// softmax-matmul per (batch, head); used for the two-route equivalence check.
Tensor attention_base_matrix(const TokenCache& cache, int layer, const AttentionConfig& cfg);

// Recurrent accumulation: o_l = lambda_l (.) o_{l-1} + softmaxed current term.
Tensor attention_light(const Tensor& prev_output, const Tensor& layer_scale, const TokenCache& cache,
                       int layer, const AttentionConfig& cfg, AttentionRecord* record = nullptr);

// Sequential context recurrence over pooled descriptors of layers 1..l.
CellState dla_forward_context(const TokenCache& cache, int layer, const CellParams& cell,
                              const Tensor& initial_cell /*[B,C] broadcast of c0*/);

// Gate every layer m < l with the shared context and retokenize it. All
// gates read the pre-refresh cache, so the update order is immaterial.
struct RefreshHooks {
    bool identity_gate = false;                    // force gate == 1 (disables the refresh)
    std::optional<std::vector<int>> update_order;  // 0-based permutation of the first l-1 layers
};
void dla_backward_refresh(TokenCache& cache, const CellState& context, int layer,
                          const CellParams& cell, const ProjectionSet& proj,
                          const AttentionConfig& cfg, const RefreshHooks& hooks = {});

// Per-stage attention state; one instance per stage of the backbone.
class StageAttention {
public:
    StageAttention(const AttentionConfig& cfg, int depth, int stage_id, Rng& rng);

    void reset();
    // Runs the whole per-block pipeline and returns feature + attention output.
    Tensor apply(const Tensor& feature, std::vector<AttentionRecord>* records = nullptr);

    std::vector<NamedTensor> named_tensors(const std::string& prefix) const;

    const AttentionConfig& config() const { return cfg_; }
    int depth() const { return depth_; }
    const TokenCache& cache() const { return cache_; }
    TokenCache& cache() { return cache_; }
    const ProjectionSet& projections() const { return proj_; }
    const CellParams& cell() const { return cell_; }
    const Tensor& context_init() const { return context_init_; }
    const Tensor& layer_scale(int layer) const { return output_scales_.at(static_cast<size_t>(layer) - 1); }

    RefreshHooks hooks;  // test hooks, default inert

private:
    AttentionConfig cfg_;
    int depth_;
    int stage_id_;
    ProjectionSet proj_;
    CellParams cell_;                    // dynamic variants only
    Tensor context_init_;                // c0 [C], fixed at construction, not trained
    std::vector<Tensor> output_scales_;  // lambda per layer [C], light variants only
    TokenCache cache_;
    Tensor prev_output_;  // running o_{l-1} of the static light recurrence
};

}  // namespace dla
