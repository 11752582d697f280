#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dla/init.hpp"
#include "dla/ops.hpp"
#include "dla/tensor.hpp"

namespace dla {

enum class CellKind { DSU, DIA, LSTM, VanillaRNN };

const char* cell_kind_name(CellKind kind);
CellKind cell_kind_from_name(const std::string& name);

using NamedTensor = std::pair<std::string, Tensor>;

// Parameters of one recurrent gating cell. Only the member block matching
// `kind` is populated.
struct CellParams {
    CellKind kind = CellKind::DSU;
    int channels = 0;
    int reduction = 1;
    Activation state_norm = Activation::Sigmoid;  // applied to the previous state in DSU

    struct Dsu {
        Tensor compress_w;               // [C/r, 2C]
        Tensor cand_w, in_w, forget_w;   // [C, C/r]
        Tensor cand_b, in_b, forget_b;   // [C]
    } dsu;
    struct Lstm {
        // gate order: input, forget, candidate, output
        Tensor input_w[4];   // [C, C]
        Tensor hidden_w[4];  // [C, C]
        Tensor bias[4];      // [C]
    } lstm;
    struct Dia {
        Tensor compress_w;  // [C/r, 2C]
        Tensor gate_w;      // [4C, C/r], joint projection for i,f,o,candidate
        Tensor gate_b;      // [4C]
    } dia;
    struct Rnn {
        Tensor input_w;   // [C, C]
        Tensor hidden_w;  // [C, C]
        Tensor bias;      // [C]
    } rnn;

    static CellParams create(CellKind kind, int channels, int reduction, Activation state_norm,
                             Rng& rng);

    std::vector<NamedTensor> named_tensors(const std::string& prefix) const;
    void fill_zero();
};

// Recurrent state. `hidden` is only defined for LSTM/DIA; DSU and the
// vanilla RNN keep a single vector.
struct CellState {
    Tensor cell;    // [B, C]
    Tensor hidden;  // [B, C] where the kind defines one
};

CellState cell_initial_state(const CellParams& params, const Tensor& cell_init /*[B,C]*/);
CellState cell_step(const CellParams& params, const Tensor& input /*[B,C]*/, const CellState& prev);
// The vector the cell exposes: hidden for LSTM/DIA, the merged state otherwise.
Tensor cell_output(const CellParams& params, const CellState& state);

// dsu_step convenience: state in, state out, single vector.
Tensor dsu_step(const Tensor& input, const Tensor& state, const CellParams& params);

// Exact count of scalar parameters by enumerating the arrays.
long param_count(const CellParams& params, bool include_biases);

}  // namespace dla
