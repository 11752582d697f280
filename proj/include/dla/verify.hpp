#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dla/attention.hpp"
#include "dla/backbone.hpp"

namespace dla {

struct ProbeError : std::runtime_error {
    explicit ProbeError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---- finite differences -------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    long worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    long coords_checked = 0;
};

// Central differences (f(p+h) - f(p-h)) / 2h against tape gradients.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
// At most `max_coords_per_tensor` seeded coordinates per array.
GradCheckReport finite_diff_gradcheck(const std::function<Tensor()>& loss_fn,
                                      const std::vector<NamedTensor>& params, double step = 1e-5,
                                      int max_coords_per_tensor = 200, uint64_t seed = 0);

// ---- brute-force attention oracle ---------------------------------------

// Raw token arrays, deliberately independent of the attention module types.
struct OracleTokens {
    int batch = 0, heads = 0, key_dim = 0, channels = 0, spatial = 0;
    std::vector<std::vector<double>> queries;  // per layer, flat [B*H*Dk]
    std::vector<std::vector<double>> keys;     // per layer, flat [B*H*Dk]
    std::vector<std::vector<double>> values;   // per layer, flat [B*C*spatial]
};

OracleTokens extract_tokens(const TokenCache& cache, const AttentionConfig& cfg);

// Literal concat -> softmax -> weighted sum with scalar loops.
std::vector<double> brute_force_attention_oracle(const OracleTokens& tokens, int layer);

// ---- monolithic dynamic-stage oracle ------------------------------------

// Scalar replay of a whole DLA-B stage: keeps its own copies of every
// parameter, refreshes all layers from scratch each block and applies the
// full softmax form. DSU cells only.
class DlaStageOracle {
public:
    DlaStageOracle(const StageAttention& stage, int batch, int feat_h, int feat_w);

    // Push the next block output and return the fused feature values.
    std::vector<double> step(const std::vector<double>& feature);
    const std::vector<std::vector<double>>& features() const { return features_; }

private:
    int batch_, heads_, key_dim_, channels_, height_, width_, reduction_;
    bool light_ = false;
    std::vector<std::vector<double>> query_w_, key_w_, value_w_, output_scale_;
    std::vector<double> compress_w_, cand_w_, in_w_, forget_w_, cand_b_, in_b_, forget_b_;
    std::vector<double> context_init_;
    std::vector<std::vector<double>> features_;

    std::vector<double> pooled(const std::vector<double>& feature) const;
    std::vector<double> dsu(const std::vector<double>& input, const std::vector<double>& state) const;
};

// ---- parameter audit -----------------------------------------------------

struct ParamLedgerEntry {
    std::string name;
    Shape shape;
    long count = 0;
    bool trainable = true;
};

struct ParamLedger {
    std::vector<ParamLedgerEntry> entries;
    long trainable_total = 0;
    long buffer_total = 0;
    std::string to_text() const;
};

ParamLedger param_count_oracle(const Network& net);

// ---- complexity probe -----------------------------------------------------

struct ScalingReport {
    std::vector<int> depths;
    std::vector<double> forward_context_us;  // median per depth
    std::vector<double> refresh_gate_us;     // median per depth, one layer's gate
    double linear_r2 = 0.0;
    std::vector<double> forward_doubling_ratios;  // consecutive-depth time ratios
    std::vector<double> gate_spread;              // gate time / gate time at first depth
    std::string to_text() const;
};

// Median wall time of (a) the forward context recurrence and (b) a single
// layer's refresh gate at each depth. Depths must be strictly increasing,
// at least 3 entries.
ScalingReport timing_scaling_probe(const std::vector<int>& depths, int repeats = 25,
                                   int channels = 64, int reduction = 4, uint64_t seed = 99);

}  // namespace dla
