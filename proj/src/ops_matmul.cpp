#include <cstddef>

#if defined(__AVX512F__) || defined(__AVX2__)
#include <immintrin.h>
#endif

#include "dla/ops.hpp"

namespace dla {

using detail::make_node;

// Row-major GEMM over j-panels of 8 outputs and row quads. Per output
// element the k index ascends and every step is a separate multiply then
// add, so results are bitwise identical to the naive i,j,k triple loop on
// the same build; the quad only interleaves four independent accumulation
// chains to hide add latency. No fused multiply-add anywhere.
namespace {

constexpr int kPanel = 8;

template <bool Accumulate>
void gemm_panel(const double* a, const double* b, double* c, int m, int k, int n, int j) {
    const double* bp = b + j;
    int i = 0;
#if defined(__AVX512F__)
    for (; i + 4 <= m; i += 4) {
        const double* a0 = a + static_cast<size_t>(i) * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        __m512d acc0 = _mm512_setzero_pd(), acc1 = _mm512_setzero_pd();
        __m512d acc2 = _mm512_setzero_pd(), acc3 = _mm512_setzero_pd();
        for (int kk = 0; kk < k; ++kk) {
            const __m512d bv = _mm512_loadu_pd(bp + static_cast<size_t>(kk) * n);
            acc0 = _mm512_add_pd(acc0, _mm512_mul_pd(_mm512_set1_pd(a0[kk]), bv));
            acc1 = _mm512_add_pd(acc1, _mm512_mul_pd(_mm512_set1_pd(a1[kk]), bv));
            acc2 = _mm512_add_pd(acc2, _mm512_mul_pd(_mm512_set1_pd(a2[kk]), bv));
            acc3 = _mm512_add_pd(acc3, _mm512_mul_pd(_mm512_set1_pd(a3[kk]), bv));
        }
        double* crow = c + static_cast<size_t>(i) * n + j;
        auto flush = [&](double* row, __m512d acc) {
            if (Accumulate) acc = _mm512_add_pd(acc, _mm512_loadu_pd(row));
            _mm512_storeu_pd(row, acc);
        };
        flush(crow, acc0);
        flush(crow + n, acc1);
        flush(crow + 2 * static_cast<size_t>(n), acc2);
        flush(crow + 3 * static_cast<size_t>(n), acc3);
    }
    for (; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        __m512d acc = _mm512_setzero_pd();
        for (int kk = 0; kk < k; ++kk) {
            const __m512d bv = _mm512_loadu_pd(bp + static_cast<size_t>(kk) * n);
            acc = _mm512_add_pd(acc, _mm512_mul_pd(_mm512_set1_pd(arow[kk]), bv));
        }
        double* crow = c + static_cast<size_t>(i) * n + j;
        if (Accumulate) acc = _mm512_add_pd(acc, _mm512_loadu_pd(crow));
        _mm512_storeu_pd(crow, acc);
    }
#elif defined(__AVX2__)
    for (; i + 2 <= m; i += 2) {
        const double* a0 = a + static_cast<size_t>(i) * k;
        const double* a1 = a0 + k;
        __m256d r0lo = _mm256_setzero_pd(), r0hi = _mm256_setzero_pd();
        __m256d r1lo = _mm256_setzero_pd(), r1hi = _mm256_setzero_pd();
        for (int kk = 0; kk < k; ++kk) {
            const double* brow = bp + static_cast<size_t>(kk) * n;
            const __m256d blo = _mm256_loadu_pd(brow);
            const __m256d bhi = _mm256_loadu_pd(brow + 4);
            const __m256d av0 = _mm256_broadcast_sd(a0 + kk);
            const __m256d av1 = _mm256_broadcast_sd(a1 + kk);
            r0lo = _mm256_add_pd(r0lo, _mm256_mul_pd(av0, blo));
            r0hi = _mm256_add_pd(r0hi, _mm256_mul_pd(av0, bhi));
            r1lo = _mm256_add_pd(r1lo, _mm256_mul_pd(av1, blo));
            r1hi = _mm256_add_pd(r1hi, _mm256_mul_pd(av1, bhi));
        }
        double* c0 = c + static_cast<size_t>(i) * n + j;
        double* c1 = c0 + n;
        if (Accumulate) {
            r0lo = _mm256_add_pd(r0lo, _mm256_loadu_pd(c0));
            r0hi = _mm256_add_pd(r0hi, _mm256_loadu_pd(c0 + 4));
            r1lo = _mm256_add_pd(r1lo, _mm256_loadu_pd(c1));
            r1hi = _mm256_add_pd(r1hi, _mm256_loadu_pd(c1 + 4));
        }
        _mm256_storeu_pd(c0, r0lo);
        _mm256_storeu_pd(c0 + 4, r0hi);
        _mm256_storeu_pd(c1, r1lo);
        _mm256_storeu_pd(c1 + 4, r1hi);
    }
    for (; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        __m256d lo = _mm256_setzero_pd(), hi = _mm256_setzero_pd();
        for (int kk = 0; kk < k; ++kk) {
            const __m256d av = _mm256_broadcast_sd(arow + kk);
            const double* brow = bp + static_cast<size_t>(kk) * n;
            lo = _mm256_add_pd(lo, _mm256_mul_pd(av, _mm256_loadu_pd(brow)));
            hi = _mm256_add_pd(hi, _mm256_mul_pd(av, _mm256_loadu_pd(brow + 4)));
        }
        double* crow = c + static_cast<size_t>(i) * n + j;
        if (Accumulate) {
            lo = _mm256_add_pd(lo, _mm256_loadu_pd(crow));
            hi = _mm256_add_pd(hi, _mm256_loadu_pd(crow + 4));
        }
        _mm256_storeu_pd(crow, lo);
        _mm256_storeu_pd(crow + 4, hi);
    }
#else
    for (; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double t[kPanel] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = bp + static_cast<size_t>(kk) * n;
            for (int t_i = 0; t_i < kPanel; ++t_i) t[t_i] += av * brow[t_i];
        }
        double* crow = c + static_cast<size_t>(i) * n + j;
        if (Accumulate)
            for (int t_i = 0; t_i < kPanel; ++t_i) crow[t_i] += t[t_i];
        else
            for (int t_i = 0; t_i < kPanel; ++t_i) crow[t_i] = t[t_i];
    }
#endif
}

}  // namespace

void gemm(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    // Column blocks sized so one K x block slab of B stays in L2 while all
    // row quads sweep it.
    constexpr long kSlabBytes = 1 << 20;
    long block = kSlabBytes / (static_cast<long>(k) * static_cast<long>(sizeof(double)));
    block = std::max<long>(kPanel, (block / kPanel) * kPanel);

    const int panel_end = n - n % kPanel;
    for (long j0 = 0; j0 < panel_end; j0 += block) {
        const long j1 = std::min<long>(j0 + block, panel_end);
        for (long j = j0; j < j1; j += kPanel) {
            if (accumulate)
                gemm_panel<true>(a, b, c, m, k, n, static_cast<int>(j));
            else
                gemm_panel<false>(a, b, c, m, k, n, static_cast<int>(j));
        }
    }
    for (int j = panel_end; j < n; ++j) {
        for (int i = 0; i < m; ++i) {
            const double* arow = a + static_cast<size_t>(i) * k;
            double s = 0.0;
            for (int kk = 0; kk < k; ++kk) s += arow[kk] * b[static_cast<size_t>(kk) * n + j];
            if (accumulate)
                c[static_cast<size_t>(i) * n + j] += s;
            else
                c[static_cast<size_t>(i) * n + j] = s;
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul: want rank-2 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<size_t>(m) * n);
    gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
    NodePtr an = a.node(), bn = b.node();
    return make_node("matmul", {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node& self) {
        const double* g = self.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            // dA[i,kk] += sum_j g[i,j] * B[kk,j]
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    const double* grow = g + static_cast<size_t>(i) * n;
                    const double* brow = bn->value.data() + static_cast<size_t>(kk) * n;
                    double s = 0.0;
                    for (int jj = 0; jj < n; ++jj) s += grow[jj] * brow[jj];
                    an->grad[static_cast<size_t>(i) * k + kk] += s;
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // dB[kk,j] += sum_i A[i,kk] * g[i,j]
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    const double av = an->value[static_cast<size_t>(i) * k + kk];
                    const double* grow = g + static_cast<size_t>(i) * n;
                    double* brow = bn->grad.data() + static_cast<size_t>(kk) * n;
                    for (int jj = 0; jj < n; ++jj) brow[jj] += av * grow[jj];
                }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
    if (x.rank() != 2 || w.rank() != 2)
        throw DimensionError("linear: want [B,in] and [out,in], got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw DimensionError("linear: input width " + std::to_string(x.dim(1)) +
                             " vs weight fan-in " + std::to_string(w.dim(1)));
    const int batch = x.dim(0), fan_in = x.dim(1), fan_out = w.dim(0);
    if (bias && (bias->rank() != 1 || bias->dim(0) != fan_out))
        throw DimensionError("linear: bias shape " + shape_str(bias->shape()));

    std::vector<double> out(static_cast<size_t>(batch) * fan_out);
    for (int b = 0; b < batch; ++b) {
        const double* xrow = x.data().data() + static_cast<size_t>(b) * fan_in;
        double* orow = out.data() + static_cast<size_t>(b) * fan_out;
        for (int f = 0; f < fan_out; ++f) {
            const double* wrow = w.data().data() + static_cast<size_t>(f) * fan_in;
            double s = 0.0;
            for (int i = 0; i < fan_in; ++i) s += xrow[i] * wrow[i];
            orow[f] = bias ? s + bias->data()[f] : s;
        }
    }

    NodePtr xn = x.node(), wn = w.node();
    NodePtr biasn = bias ? bias->node() : nullptr;
    std::vector<NodePtr> parents = {xn, wn};
    if (biasn) parents.push_back(biasn);
    return make_node("linear", {batch, fan_out}, std::move(out), std::move(parents),
                     [xn, wn, biasn, batch, fan_in, fan_out](Node& self) {
                         const double* g = self.grad.data();
                         if (xn->requires_grad) {
                             xn->ensure_grad();
                             for (int b = 0; b < batch; ++b) {
                                 double* gx = xn->grad.data() + static_cast<size_t>(b) * fan_in;
                                 const double* grow = g + static_cast<size_t>(b) * fan_out;
                                 for (int f = 0; f < fan_out; ++f) {
                                     const double gv = grow[f];
                                     const double* wrow = wn->value.data() + static_cast<size_t>(f) * fan_in;
                                     for (int i = 0; i < fan_in; ++i) gx[i] += gv * wrow[i];
                                 }
                             }
                         }
                         if (wn->requires_grad) {
                             wn->ensure_grad();
                             for (int b = 0; b < batch; ++b) {
                                 const double* xrow = xn->value.data() + static_cast<size_t>(b) * fan_in;
                                 const double* grow = g + static_cast<size_t>(b) * fan_out;
                                 for (int f = 0; f < fan_out; ++f) {
                                     const double gv = grow[f];
                                     double* wrow = wn->grad.data() + static_cast<size_t>(f) * fan_in;
                                     for (int i = 0; i < fan_in; ++i) wrow[i] += gv * xrow[i];
                                 }
                             }
                         }
                         if (biasn && biasn->requires_grad) {
                             biasn->ensure_grad();
                             for (int b = 0; b < batch; ++b)
                                 for (int f = 0; f < fan_out; ++f)
                                     biasn->grad[f] += g[static_cast<size_t>(b) * fan_out + f];
                         }
                     });
}

}  // namespace dla
