#include "dla/cells.hpp"

#include <algorithm>

namespace dla {

const char* cell_kind_name(CellKind kind) {
    switch (kind) {
        case CellKind::DSU: return "dsu";
        case CellKind::DIA: return "dia";
        case CellKind::LSTM: return "lstm";
        case CellKind::VanillaRNN: return "rnn";
    }
    return "?";
}

CellKind cell_kind_from_name(const std::string& name) {
    if (name == "dsu") return CellKind::DSU;
    if (name == "dia") return CellKind::DIA;
    if (name == "lstm") return CellKind::LSTM;
    if (name == "rnn") return CellKind::VanillaRNN;
    throw ConfigError("unknown cell kind '" + name + "'");
}

namespace {
const char* kGateNames[4] = {"input", "forget", "cand", "output"};
}

CellParams CellParams::create(CellKind kind, int channels, int reduction, Activation state_norm,
                              Rng& rng) {
    if (channels <= 0) throw ConfigError("cell: channels must be positive");
    if (reduction <= 0 || channels % reduction != 0)
        throw ConfigError("cell: channels " + std::to_string(channels) +
                          " not divisible by reduction " + std::to_string(reduction));
    CellParams p;
    p.kind = kind;
    p.channels = channels;
    p.reduction = reduction;
    p.state_norm = state_norm;
    const int bottleneck = channels / reduction;
    switch (kind) {
        case CellKind::DSU:
            p.dsu.compress_w = init_linear_weight(rng, {bottleneck, 2 * channels});
            p.dsu.cand_w = init_linear_weight(rng, {channels, bottleneck});
            p.dsu.in_w = init_linear_weight(rng, {channels, bottleneck});
            p.dsu.forget_w = init_linear_weight(rng, {channels, bottleneck});
            p.dsu.cand_b = Tensor::zeros({channels}, true);
            p.dsu.in_b = Tensor::zeros({channels}, true);
            p.dsu.forget_b = Tensor::zeros({channels}, true);
            break;
        case CellKind::LSTM:
            for (int g = 0; g < 4; ++g) {
                p.lstm.input_w[g] = init_linear_weight(rng, {channels, channels});
                p.lstm.hidden_w[g] = init_linear_weight(rng, {channels, channels});
                p.lstm.bias[g] = Tensor::zeros({channels}, true);
            }
            break;
        case CellKind::DIA:
            p.dia.compress_w = init_linear_weight(rng, {bottleneck, 2 * channels});
            p.dia.gate_w = init_linear_weight(rng, {4 * channels, bottleneck});
            p.dia.gate_b = Tensor::zeros({4 * channels}, true);
            break;
        case CellKind::VanillaRNN:
            p.rnn.input_w = init_linear_weight(rng, {channels, channels});
            p.rnn.hidden_w = init_linear_weight(rng, {channels, channels});
            p.rnn.bias = Tensor::zeros({channels}, true);
            break;
    }
    return p;
}

std::vector<NamedTensor> CellParams::named_tensors(const std::string& prefix) const {
    std::vector<NamedTensor> out;
    switch (kind) {
        case CellKind::DSU:
            out = {{prefix + ".compress_w", dsu.compress_w}, {prefix + ".cand_w", dsu.cand_w},
                   {prefix + ".in_w", dsu.in_w},             {prefix + ".forget_w", dsu.forget_w},
                   {prefix + ".cand_b", dsu.cand_b},         {prefix + ".in_b", dsu.in_b},
                   {prefix + ".forget_b", dsu.forget_b}};
            break;
        case CellKind::LSTM:
            for (int g = 0; g < 4; ++g) {
                out.emplace_back(prefix + "." + kGateNames[g] + "_w", lstm.input_w[g]);
                out.emplace_back(prefix + "." + kGateNames[g] + "_u", lstm.hidden_w[g]);
                out.emplace_back(prefix + "." + kGateNames[g] + "_b", lstm.bias[g]);
            }
            break;
        case CellKind::DIA:
            out = {{prefix + ".compress_w", dia.compress_w},
                   {prefix + ".gate_w", dia.gate_w},
                   {prefix + ".gate_b", dia.gate_b}};
            break;
        case CellKind::VanillaRNN:
            out = {{prefix + ".input_w", rnn.input_w},
                   {prefix + ".hidden_w", rnn.hidden_w},
                   {prefix + ".bias", rnn.bias}};
            break;
    }
    return out;
}

void CellParams::fill_zero() {
    for (auto& [name, tensor] : named_tensors("p"))
        std::fill(tensor.data().begin(), tensor.data().end(), 0.0);
}

CellState cell_initial_state(const CellParams& params, const Tensor& cell_init) {
    CellState s;
    s.cell = cell_init;
    if (params.kind == CellKind::LSTM || params.kind == CellKind::DIA)
        s.hidden = Tensor::zeros({cell_init.dim(0), params.channels});
    return s;
}

namespace {

void require_cell_input(const CellParams& params, const Tensor& input, const Tensor& state) {
    if (input.rank() != 2 || input.dim(1) != params.channels)
        throw DimensionError("cell_step: input " + shape_str(input.shape()) + " wants [B," +
                             std::to_string(params.channels) + "]");
    if (state.rank() != 2 || state.dim(1) != params.channels || state.dim(0) != input.dim(0))
        throw DimensionError("cell_step: state " + shape_str(state.shape()) + " mismatches input " +
                             shape_str(input.shape()));
}

}  // namespace

Tensor dsu_step(const Tensor& input, const Tensor& state, const CellParams& params) {
    require_cell_input(params, input, state);
    const auto& p = params.dsu;
    Tensor squeezed = concat_cols(activate(params.state_norm, state), input);
    Tensor s = relu(linear(squeezed, p.compress_w));
    Tensor cand = tanh_op(linear(s, p.cand_w, &p.cand_b));
    Tensor in_gate = sigmoid(linear(s, p.in_w, &p.in_b));
    Tensor forget_gate = sigmoid(linear(s, p.forget_w, &p.forget_b));
    return add(mul(forget_gate, state), mul(in_gate, cand));
}

CellState cell_step(const CellParams& params, const Tensor& input, const CellState& prev) {
    CellState next;
    switch (params.kind) {
        case CellKind::DSU: {
            next.cell = dsu_step(input, prev.cell, params);
            break;
        }
        case CellKind::LSTM: {
            require_cell_input(params, input, prev.cell);
            const auto& p = params.lstm;
            auto gate_pre = [&](int g) {
                return add(linear(input, p.input_w[g], &p.bias[g]), linear(prev.hidden, p.hidden_w[g]));
            };
            Tensor in_gate = sigmoid(gate_pre(0));
            Tensor forget_gate = sigmoid(gate_pre(1));
            Tensor cand = tanh_op(gate_pre(2));
            Tensor out_gate = sigmoid(gate_pre(3));
            next.cell = add(mul(forget_gate, prev.cell), mul(in_gate, cand));
            next.hidden = mul(out_gate, tanh_op(next.cell));
            break;
        }
        case CellKind::DIA: {
            require_cell_input(params, input, prev.cell);
            const auto& p = params.dia;
            const int c = params.channels;
            Tensor squeezed = concat_cols(prev.hidden, input);
            Tensor s = relu(linear(squeezed, p.compress_w));
            Tensor gates = linear(s, p.gate_w, &p.gate_b);
            Tensor in_gate = sigmoid(slice_cols(gates, 0, c));
            Tensor forget_gate = sigmoid(slice_cols(gates, c, 2 * c));
            Tensor out_gate = sigmoid(slice_cols(gates, 2 * c, 3 * c));
            Tensor cand = tanh_op(slice_cols(gates, 3 * c, 4 * c));
            next.cell = add(mul(forget_gate, prev.cell), mul(in_gate, cand));
            // DIA exposes sigma(c') instead of tanh(c') on the output path.
            next.hidden = mul(out_gate, sigmoid(next.cell));
            break;
        }
        case CellKind::VanillaRNN: {
            require_cell_input(params, input, prev.cell);
            const auto& p = params.rnn;
            next.cell = tanh_op(add(linear(input, p.input_w, &p.bias), linear(prev.cell, p.hidden_w)));
            break;
        }
    }
    return next;
}

Tensor cell_output(const CellParams& params, const CellState& state) {
    if (params.kind == CellKind::LSTM || params.kind == CellKind::DIA) return state.hidden;
    return state.cell;
}

long param_count(const CellParams& params, bool include_biases) {
    long total = 0;
    for (const auto& [name, tensor] : params.named_tensors("p")) {
        const bool is_bias = tensor.rank() == 1;  // every bias array is rank 1, every weight rank 2
        if (is_bias && !include_biases) continue;
        total += tensor.size();
    }
    return total;
}

}  // namespace dla
