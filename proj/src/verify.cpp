#include "dla/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dla/init.hpp"

namespace dla {

GradCheckReport finite_diff_gradcheck(const std::function<Tensor()>& loss_fn,
                                      const std::vector<NamedTensor>& params, double step,
                                      int max_coords_per_tensor, uint64_t seed) {
    if (step <= 0.0) throw ContractError("gradcheck: step must be positive");
    for (const auto& [name, tensor] : params) tensor.node()->grad.clear();

    Tensor loss = loss_fn();
    if (loss.size() != 1) throw ContractError("gradcheck: loss must be scalar");
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, tensor] : params) analytic.push_back(tensor.grad());

    Rng rng(seed);
    GradCheckReport report;
    NoGradGuard no_grad;
    for (size_t t = 0; t < params.size(); ++t) {
        const std::string& name = params[t].first;
        Tensor tensor = params[t].second;
        const long count = tensor.size();

        std::vector<long> coords;
        if (count <= max_coords_per_tensor) {
            coords.resize(static_cast<size_t>(count));
            std::iota(coords.begin(), coords.end(), 0);
        } else {
            coords.resize(static_cast<size_t>(count));
            std::iota(coords.begin(), coords.end(), 0);
            for (size_t i = coords.size(); i > 1; --i)
                std::swap(coords[i - 1], coords[rng.integer(i)]);
            coords.resize(static_cast<size_t>(max_coords_per_tensor));
        }

        for (long idx : coords) {
            double& slot = tensor.data()[static_cast<size_t>(idx)];
            const double saved = slot;
            slot = saved + step;
            const double plus = loss_fn().item();
            slot = saved - step;
            const double minus = loss_fn().item();
            slot = saved;
            if (!std::isfinite(plus) || !std::isfinite(minus))
                throw NumericError("gradcheck: non-finite loss while perturbing " + name);
            const double numeric = (plus - minus) / (2.0 * step);
            const double tape = analytic[t][static_cast<size_t>(idx)];
            const double denom = std::max({std::fabs(numeric), std::fabs(tape), 1e-8});
            const double rel = std::fabs(numeric - tape) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_tensor = name;
                report.worst_index = idx;
                report.analytic = tape;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

OracleTokens extract_tokens(const TokenCache& cache, const AttentionConfig& cfg) {
    OracleTokens t;
    if (cache.empty()) return t;
    t.heads = cfg.heads;
    t.key_dim = cfg.resolved_key_dim();
    t.batch = cache[0].value.dim(0);
    t.channels = cache[0].value.dim(1);
    t.spatial = static_cast<int>(cache[0].value.size() / (static_cast<long>(t.batch) * t.channels));
    for (const LayerTokens& layer : cache) {
        t.queries.push_back(layer.query.data());
        t.keys.push_back(layer.key.data());
        t.values.push_back(layer.value.data());
    }
    return t;
}

std::vector<double> brute_force_attention_oracle(const OracleTokens& tokens, int layer) {
    if (layer < 1 || layer > static_cast<int>(tokens.keys.size()))
        throw ContractError("attention oracle: bad layer");
    const int batch = tokens.batch, heads = tokens.heads, key_dim = tokens.key_dim;
    const int channels = tokens.channels, spatial = tokens.spatial;
    const int group = channels / heads;
    const std::vector<double>& query = tokens.queries[static_cast<size_t>(layer) - 1];

    std::vector<double> out(static_cast<size_t>(batch) * channels * spatial, 0.0);
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            std::vector<double> scores(static_cast<size_t>(layer));
            for (int i = 0; i < layer; ++i) {
                double s = 0.0;
                for (int d = 0; d < key_dim; ++d) {
                    const size_t off = (static_cast<size_t>(b) * heads + h) * key_dim + d;
                    s += query[off] * tokens.keys[static_cast<size_t>(i)][off];
                }
                scores[static_cast<size_t>(i)] = s / std::sqrt(static_cast<double>(key_dim));
            }
            double peak = scores[0];
            for (double s : scores) peak = std::max(peak, s);
            double denom = 0.0;
            for (double& s : scores) {
                s = std::exp(s - peak);
                denom += s;
            }
            for (double& s : scores) s /= denom;
            for (int i = 0; i < layer; ++i) {
                const double w = scores[static_cast<size_t>(i)];
                for (int cg = 0; cg < group; ++cg) {
                    const int c = h * group + cg;
                    const size_t off = (static_cast<size_t>(b) * channels + c) * static_cast<size_t>(spatial);
                    for (int p = 0; p < spatial; ++p)
                        out[off + p] += w * tokens.values[static_cast<size_t>(i)][off + p];
                }
            }
        }
    }
    return out;
}

// ---- monolithic stage oracle ----

DlaStageOracle::DlaStageOracle(const StageAttention& stage, int batch, int feat_h, int feat_w)
    : batch_(batch), height_(feat_h), width_(feat_w) {
    const AttentionConfig& cfg = stage.config();
    if (cfg.cell != CellKind::DSU) throw ContractError("stage oracle: DSU cells only");
    heads_ = cfg.heads;
    key_dim_ = cfg.resolved_key_dim();
    channels_ = cfg.channels;
    reduction_ = cfg.reduction;
    light_ = variant_is_light(cfg.variant);
    for (int l = 1; l <= stage.depth(); ++l) {
        const LayerProjection& maps = stage.projections().layers[static_cast<size_t>(l) - 1];
        query_w_.push_back(maps.query_w.data());
        key_w_.push_back(maps.key_w.data());
        value_w_.push_back(maps.value_w.data());
        if (light_) output_scale_.push_back(stage.layer_scale(l).data());
    }
    const CellParams& cell = stage.cell();
    compress_w_ = cell.dsu.compress_w.data();
    cand_w_ = cell.dsu.cand_w.data();
    in_w_ = cell.dsu.in_w.data();
    forget_w_ = cell.dsu.forget_w.data();
    cand_b_ = cell.dsu.cand_b.data();
    in_b_ = cell.dsu.in_b.data();
    forget_b_ = cell.dsu.forget_b.data();
    context_init_ = stage.context_init().data();
}

std::vector<double> DlaStageOracle::pooled(const std::vector<double>& feature) const {
    const int spatial = height_ * width_;
    std::vector<double> y(static_cast<size_t>(batch_) * channels_);
    for (int b = 0; b < batch_; ++b)
        for (int c = 0; c < channels_; ++c) {
            double s = 0.0;
            const size_t off = (static_cast<size_t>(b) * channels_ + c) * spatial;
            for (int p = 0; p < spatial; ++p) s += feature[off + p];
            y[static_cast<size_t>(b) * channels_ + c] = s / spatial;
        }
    return y;
}

std::vector<double> DlaStageOracle::dsu(const std::vector<double>& input,
                                        const std::vector<double>& state) const {
    const int c = channels_, bneck = channels_ / reduction_;
    std::vector<double> next(static_cast<size_t>(batch_) * c);
    for (int b = 0; b < batch_; ++b) {
        const double* y = input.data() + static_cast<size_t>(b) * c;
        const double* prev = state.data() + static_cast<size_t>(b) * c;
        std::vector<double> joined(static_cast<size_t>(2) * c);
        for (int i = 0; i < c; ++i) joined[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-prev[i]));
        for (int i = 0; i < c; ++i) joined[static_cast<size_t>(c) + i] = y[i];
        std::vector<double> squeezed(static_cast<size_t>(bneck));
        for (int f = 0; f < bneck; ++f) {
            double s = 0.0;
            for (int i = 0; i < 2 * c; ++i)
                s += compress_w_[static_cast<size_t>(f) * 2 * c + i] * joined[static_cast<size_t>(i)];
            squeezed[static_cast<size_t>(f)] = s > 0.0 ? s : 0.0;
        }
        for (int i = 0; i < c; ++i) {
            double cand = cand_b_[static_cast<size_t>(i)];
            double gate_in = in_b_[static_cast<size_t>(i)];
            double gate_forget = forget_b_[static_cast<size_t>(i)];
            for (int f = 0; f < bneck; ++f) {
                const double s = squeezed[static_cast<size_t>(f)];
                cand += cand_w_[static_cast<size_t>(i) * bneck + f] * s;
                gate_in += in_w_[static_cast<size_t>(i) * bneck + f] * s;
                gate_forget += forget_w_[static_cast<size_t>(i) * bneck + f] * s;
            }
            cand = std::tanh(cand);
            gate_in = 1.0 / (1.0 + std::exp(-gate_in));
            gate_forget = 1.0 / (1.0 + std::exp(-gate_forget));
            next[static_cast<size_t>(b) * c + i] = gate_forget * prev[i] + gate_in * cand;
        }
    }
    return next;
}

std::vector<double> DlaStageOracle::step(const std::vector<double>& feature) {
    features_.push_back(feature);
    const int layer = static_cast<int>(features_.size());
    const int c = channels_, spatial = height_ * width_;
    const int proj_dim = heads_ * key_dim_;

    // forward context over current (possibly previously refreshed) features
    std::vector<std::vector<double>> descriptors;
    for (const auto& f : features_) descriptors.push_back(pooled(f));
    std::vector<double> context(static_cast<size_t>(batch_) * c);
    for (int b = 0; b < batch_; ++b)
        for (int i = 0; i < c; ++i)
            context[static_cast<size_t>(b) * c + i] = context_init_[static_cast<size_t>(i)];
    for (int m = 0; m < layer; ++m) context = dsu(descriptors[static_cast<size_t>(m)], context);

    // refresh every earlier layer from the shared context
    for (int m = 0; m + 1 < layer; ++m) {
        std::vector<double> gate = dsu(descriptors[static_cast<size_t>(m)], context);
        std::vector<double>& f = features_[static_cast<size_t>(m)];
        for (int b = 0; b < batch_; ++b)
            for (int ch = 0; ch < c; ++ch) {
                const double g = gate[static_cast<size_t>(b) * c + ch];
                const size_t off = (static_cast<size_t>(b) * c + ch) * spatial;
                for (int p = 0; p < spatial; ++p) f[off + p] *= g;
            }
    }

    // all tokens recomputed from scratch
    std::vector<std::vector<double>> queries, keys, values;
    for (int m = 0; m < layer; ++m) {
        std::vector<double> y = pooled(features_[static_cast<size_t>(m)]);
        std::vector<double> q(static_cast<size_t>(batch_) * proj_dim),
            k(static_cast<size_t>(batch_) * proj_dim);
        for (int b = 0; b < batch_; ++b)
            for (int f = 0; f < proj_dim; ++f) {
                double sq = 0.0, sk = 0.0;
                for (int i = 0; i < c; ++i) {
                    const double yi = y[static_cast<size_t>(b) * c + i];
                    sq += query_w_[static_cast<size_t>(m)][static_cast<size_t>(f) * c + i] * yi;
                    sk += key_w_[static_cast<size_t>(m)][static_cast<size_t>(f) * c + i] * yi;
                }
                q[static_cast<size_t>(b) * proj_dim + f] = sq;
                k[static_cast<size_t>(b) * proj_dim + f] = sk;
            }
        std::vector<double> v(static_cast<size_t>(batch_) * c * spatial);
        const std::vector<double>& f = features_[static_cast<size_t>(m)];
        for (int b = 0; b < batch_; ++b)
            for (int co = 0; co < c; ++co)
                for (int p = 0; p < spatial; ++p) {
                    double s = 0.0;
                    for (int ci = 0; ci < c; ++ci)
                        s += value_w_[static_cast<size_t>(m)][static_cast<size_t>(co) * c + ci] *
                             f[(static_cast<size_t>(b) * c + ci) * spatial + p];
                    v[(static_cast<size_t>(b) * c + co) * spatial + p] = s;
                }
        queries.push_back(std::move(q));
        keys.push_back(std::move(k));
        values.push_back(std::move(v));
    }

    std::vector<double> attention(static_cast<size_t>(batch_) * c * spatial, 0.0);
    const int group = c / heads_;
    if (!light_) {
        // full softmax over layers 1..layer
        for (int b = 0; b < batch_; ++b)
            for (int h = 0; h < heads_; ++h) {
                std::vector<double> scores(static_cast<size_t>(layer));
                for (int i = 0; i < layer; ++i) {
                    double s = 0.0;
                    for (int d = 0; d < key_dim_; ++d) {
                        const size_t off = (static_cast<size_t>(b) * heads_ + h) * key_dim_ + d;
                        s += queries[static_cast<size_t>(layer) - 1][off] * keys[static_cast<size_t>(i)][off];
                    }
                    scores[static_cast<size_t>(i)] = s / std::sqrt(static_cast<double>(key_dim_));
                }
                double peak = scores[0];
                for (double s : scores) peak = std::max(peak, s);
                double denom = 0.0;
                for (double& s : scores) {
                    s = std::exp(s - peak);
                    denom += s;
                }
                for (double& s : scores) s /= denom;
                for (int i = 0; i < layer; ++i)
                    for (int cg = 0; cg < group; ++cg) {
                        const int ch = h * group + cg;
                        const size_t off = (static_cast<size_t>(b) * c + ch) * spatial;
                        for (int p = 0; p < spatial; ++p)
                            attention[off + p] += scores[static_cast<size_t>(i)] *
                                                  values[static_cast<size_t>(i)][off + p];
                    }
            }
    } else {
        // recurrence replay: o_m = lambda_m (.) o_{m-1} + v_m (singleton softmax weight is 1)
        for (int m = 0; m < layer; ++m) {
            for (int b = 0; b < batch_; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const size_t off = (static_cast<size_t>(b) * c + ch) * spatial;
                    const double lam = m > 0 ? output_scale_[static_cast<size_t>(m)][static_cast<size_t>(ch)] : 0.0;
                    for (int p = 0; p < spatial; ++p)
                        attention[off + p] = lam * attention[off + p] +
                                             values[static_cast<size_t>(m)][off + p];
                }
        }
    }

    std::vector<double> fused(static_cast<size_t>(batch_) * c * spatial);
    for (size_t i = 0; i < fused.size(); ++i) fused[i] = feature[i] + attention[i];
    return fused;
}

// ---- parameter audit ----

std::string ParamLedger::to_text() const {
    std::ostringstream out;
    out << "name,shape,count,kind\n";
    for (const ParamLedgerEntry& e : entries)
        out << e.name << ',' << shape_str(e.shape) << ',' << e.count << ','
            << (e.trainable ? "trainable" : "buffer") << '\n';
    out << "total_trainable," << trainable_total << '\n';
    out << "total_buffers," << buffer_total << '\n';
    return out.str();
}

ParamLedger param_count_oracle(const Network& net) {
    ParamLedger ledger;
    for (const ParamInfo& p : net.params()) {
        ParamLedgerEntry e;
        e.name = p.name;
        e.shape = p.tensor.shape();
        e.count = p.tensor.size();
        e.trainable = p.trainable;
        ledger.entries.push_back(std::move(e));
        (p.trainable ? ledger.trainable_total : ledger.buffer_total) += p.tensor.size();
    }
    return ledger;
}

// ---- complexity probe ----

namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string ScalingReport::to_text() const {
    std::ostringstream out;
    out << "depth,forward_context_us,refresh_gate_us\n";
    char buf[96];
    for (size_t i = 0; i < depths.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%d,%.3f,%.3f", depths[i], forward_context_us[i],
                      refresh_gate_us[i]);
        out << buf << '\n';
    }
    std::snprintf(buf, sizeof(buf), "linear_fit_r2,%.4f", linear_r2);
    out << buf << '\n';
    for (size_t i = 0; i < forward_doubling_ratios.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "forward_ratio_%d_to_%d,%.3f", depths[i], depths[i + 1],
                      forward_doubling_ratios[i]);
        out << buf << '\n';
    }
    for (size_t i = 0; i < gate_spread.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "gate_spread_at_%d,%.3f", depths[i], gate_spread[i]);
        out << buf << '\n';
    }
    return out.str();
}

ScalingReport timing_scaling_probe(const std::vector<int>& depths, int repeats, int channels,
                                   int reduction, uint64_t seed) {
    if (depths.size() < 3) throw ContractError("timing probe: need at least 3 depths");
    for (size_t i = 1; i < depths.size(); ++i)
        if (depths[i] <= depths[i - 1])
            throw ContractError("timing probe: depths must be strictly increasing");
    if (repeats < 5) throw ContractError("timing probe: need at least 5 repeats");

    NoGradGuard no_grad;
    Rng rng(seed);
    CellParams cell = CellParams::create(CellKind::DSU, channels, reduction, Activation::Sigmoid, rng);
    const int batch = 4;
    Tensor context_seed = init_normal(rng, {batch, channels}, 0.0, 0.1, false);

    const int max_depth = depths.back();
    std::vector<Tensor> descriptors;
    for (int i = 0; i < max_depth; ++i)
        descriptors.push_back(init_normal(rng, {batch, channels}, 0.0, 1.0, false));

    auto run_forward = [&](int depth) {
        CellState state = cell_initial_state(cell, context_seed);
        for (int m = 0; m < depth; ++m) state = cell_step(cell, descriptors[static_cast<size_t>(m)], state);
        return state;
    };

    // calibrate inner repetitions so one sample spans >= ~100 microseconds
    const auto t0 = Clock::now();
    CellState sink = run_forward(depths.front());
    const auto t1 = Clock::now();
    double once_us = std::chrono::duration<double, std::micro>(t1 - t0).count();
    if (once_us <= 0.0) once_us = 0.01;
    const int inner = std::max(1, static_cast<int>(100.0 / once_us) + 1);
    if (inner > 2000000)
        throw ProbeError("timing probe: timer resolution too coarse; increase repeats or depth");

    ScalingReport report;
    report.depths = depths;
    for (int depth : depths) {
        std::vector<double> samples;
        for (int r = 0; r < repeats + 3; ++r) {  // 3 warmup samples dropped
            const auto begin = Clock::now();
            for (int i = 0; i < inner; ++i) sink = run_forward(depth);
            const auto end = Clock::now();
            samples.push_back(std::chrono::duration<double, std::micro>(end - begin).count() / inner);
        }
        samples.erase(samples.begin(), samples.begin() + 3);
        report.forward_context_us.push_back(median(samples));

        CellState context = run_forward(depth);
        std::vector<double> gate_samples;
        const int gate_inner = inner * std::max(1, depth / 2);
        for (int r = 0; r < repeats + 3; ++r) {
            const auto begin = Clock::now();
            for (int i = 0; i < gate_inner; ++i)
                sink = cell_step(cell, descriptors[static_cast<size_t>(depth) - 1], context);
            const auto end = Clock::now();
            gate_samples.push_back(std::chrono::duration<double, std::micro>(end - begin).count() /
                                   gate_inner);
        }
        gate_samples.erase(gate_samples.begin(), gate_samples.begin() + 3);
        report.refresh_gate_us.push_back(median(gate_samples));
    }

    // least-squares t = a*depth + b
    const size_t n = depths.size();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sx += depths[i];
        sy += report.forward_context_us[i];
        sxx += static_cast<double>(depths[i]) * depths[i];
        sxy += depths[i] * report.forward_context_us[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / n;
    double ss_res = 0.0, ss_tot = 0.0;
    const double mean_y = sy / n;
    for (size_t i = 0; i < n; ++i) {
        const double fit = slope * depths[i] + intercept;
        ss_res += (report.forward_context_us[i] - fit) * (report.forward_context_us[i] - fit);
        ss_tot += (report.forward_context_us[i] - mean_y) * (report.forward_context_us[i] - mean_y);
    }
    report.linear_r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;

    for (size_t i = 0; i + 1 < n; ++i)
        report.forward_doubling_ratios.push_back(report.forward_context_us[i + 1] /
                                                 report.forward_context_us[i]);
    for (size_t i = 0; i < n; ++i)
        report.gate_spread.push_back(report.refresh_gate_us[i] / report.refresh_gate_us[0]);
    return report;
}

}  // namespace dla
