#pragma once

#include <span>
#include <vector>

#include "dla/tensor.hpp"

namespace dla {

enum class Activation { Identity, Sigmoid, Tanh, ReLU };

const char* activation_name(Activation act);
Activation activation_from_name(const std::string& name);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor activate(Activation act, const Tensor& x);

// ---- shape ----
Tensor view(const Tensor& x, Shape shape);
Tensor concat_cols(const Tensor& a, const Tensor& b);          // [B,n1],[B,n2] -> [B,n1+n2]
Tensor slice_cols(const Tensor& x, int col_begin, int col_end);  // [B,n] -> [B,col_end-col_begin]

// ---- dense linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]
// out[b,f] = sum_i x[b,i] * w[f,i] (+ bias[f]); w is [out,in] row-major.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

// ---- convolutional network pieces ----
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding,
              const Tensor* bias = nullptr);
Tensor global_average_pool(const Tensor& x);  // [B,C,H,W] -> [B,C]
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

// ---- attention pieces ----
Tensor softmax_lastdim(const Tensor& x);
Tensor head_dot(const Tensor& q, const Tensor& k);              // [B,H,D],[B,H,D] -> [B,H]
Tensor stack_lastdim(std::span<const Tensor> parts);            // L x [B,H] -> [B,H,L]
// out[b,c,p] = sum_i w[b, head(c), i] * values[i][b,c,p]
Tensor head_mix(const Tensor& weights, std::span<const Tensor> values, int heads);
Tensor channel_scale(const Tensor& x, const Tensor& s);          // x[B,C,...] * s[C]
Tensor channel_scale_batched(const Tensor& x, const Tensor& s);  // x[B,C,...] * s[B,C]

// ---- losses / reductions ----
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels);
Tensor dot_const(const Tensor& x, const std::vector<double>& weights);  // scalar functional
Tensor sum_all(const Tensor& x);

// C[m,n] = A[m,k] * B[k,n], row-major, inner index ascending per output
// element. `accumulate` adds onto existing C.
void gemm(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);

}  // namespace dla
