#include <algorithm>
#include <cmath>
#include <cstring>

#if defined(__AVX512F__) || defined(__AVX2__)
#include <immintrin.h>
#endif

#include "dla/ops.hpp"

namespace dla {

using detail::make_node;

namespace {

struct ConvDims {
    int batch, in_ch, in_h, in_w;
    int out_ch, kernel, stride, pad;
    int out_h, out_w;
    long col_rows() const { return static_cast<long>(in_ch) * kernel * kernel; }
    long out_spatial() const { return static_cast<long>(out_h) * out_w; }
    long in_plane() const { return static_cast<long>(in_h) * in_w; }
    bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding) {
    if (x.rank() != 4 || w.rank() != 4)
        throw DimensionError("conv2d: want x[B,C,H,W], w[O,C,k,k], got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
    if (w.dim(2) != w.dim(3)) throw DimensionError("conv2d: non-square kernel " + shape_str(w.shape()));
    if (w.dim(2) % 2 == 0) throw DimensionError("conv2d: kernel extent must be odd");
    if (x.dim(1) != w.dim(1))
        throw DimensionError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                             shape_str(w.shape()));
    if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
    if (padding < 0) throw DimensionError("conv2d: negative padding");
    ConvDims d;
    d.batch = x.dim(0);
    d.in_ch = x.dim(1);
    d.in_h = x.dim(2);
    d.in_w = x.dim(3);
    d.out_ch = w.dim(0);
    d.kernel = w.dim(2);
    d.stride = stride;
    d.pad = padding;
    d.out_h = (d.in_h + 2 * padding - d.kernel) / stride + 1;
    d.out_w = (d.in_w + 2 * padding - d.kernel) / stride + 1;
    if (d.in_h + 2 * padding < d.kernel || d.in_w + 2 * padding < d.kernel || d.out_h <= 0 || d.out_w <= 0)
        throw DimensionError("conv2d: non-positive output extent for input " + shape_str(x.shape()));
    return d;
}

// Late stages have rows of 4-16 doubles where memcpy call overhead shows.
inline void copy_span(double* dst, const double* src, int count) {
    if (count >= 16) {
        std::memcpy(dst, src, sizeof(double) * static_cast<size_t>(count));
    } else {
        for (int i = 0; i < count; ++i) dst[i] = src[i];
    }
}
inline void zero_span(double* dst, int count) {
    for (int i = 0; i < count; ++i) dst[i] = 0.0;
}

// One sample: col[(ci*k + ky)*k + kx][oy*out_w + ox]. Row index order
// (ci, ky, kx) matches the naive accumulation order; the stride-1 path
// copies whole row segments.
void im2col_sample(const double* plane0, const ConvDims& d, double* col) {
    const long spatial = d.out_spatial();
    long row = 0;
    for (int ci = 0; ci < d.in_ch; ++ci) {
        const double* plane = plane0 + static_cast<long>(ci) * d.in_plane();
        for (int ky = 0; ky < d.kernel; ++ky)
            for (int kx = 0; kx < d.kernel; ++kx, ++row) {
                double* dst = col + row * spatial;
                if (d.stride == 1) {
                    const int x_begin = std::max(0, d.pad - kx);          // first ox with ix >= 0
                    const int x_end = std::min(d.out_w, d.in_w + d.pad - kx);  // first ox past the edge
                    for (int oy = 0; oy < d.out_h; ++oy) {
                        const int iy = oy + ky - d.pad;
                        double* out_line = dst + static_cast<long>(oy) * d.out_w;
                        if (iy < 0 || iy >= d.in_h || x_begin >= x_end) {
                            zero_span(out_line, d.out_w);
                            continue;
                        }
                        zero_span(out_line, x_begin);
                        copy_span(out_line + x_begin,
                                  plane + static_cast<long>(iy) * d.in_w + x_begin + kx - d.pad,
                                  x_end - x_begin);
                        zero_span(out_line + x_end, d.out_w - x_end);
                    }
                } else {
                    for (int oy = 0; oy < d.out_h; ++oy) {
                        const int iy = oy * d.stride + ky - d.pad;
                        double* out_line = dst + static_cast<long>(oy) * d.out_w;
                        if (iy < 0 || iy >= d.in_h) {
                            zero_span(out_line, d.out_w);
                            continue;
                        }
                        const double* src = plane + static_cast<long>(iy) * d.in_w;
                        for (int ox = 0; ox < d.out_w; ++ox) {
                            const int ix = ox * d.stride + kx - d.pad;
                            out_line[ox] = (ix < 0 || ix >= d.in_w) ? 0.0 : src[ix];
                        }
                    }
                }
            }
    }
}

void col2im_sample_add(const double* col, const ConvDims& d, double* dx0) {
    const long spatial = d.out_spatial();
    long row = 0;
    for (int ci = 0; ci < d.in_ch; ++ci) {
        double* plane = dx0 + static_cast<long>(ci) * d.in_plane();
        for (int ky = 0; ky < d.kernel; ++ky)
            for (int kx = 0; kx < d.kernel; ++kx, ++row) {
                const double* src = col + row * spatial;
                if (d.stride == 1) {
                    const int x_begin = std::max(0, d.pad - kx);
                    const int x_end = std::min(d.out_w, d.in_w + d.pad - kx);
                    for (int oy = 0; oy < d.out_h; ++oy) {
                        const int iy = oy + ky - d.pad;
                        if (iy < 0 || iy >= d.in_h || x_begin >= x_end) continue;
                        double* dst = plane + static_cast<long>(iy) * d.in_w + x_begin + kx - d.pad;
                        const double* line = src + static_cast<long>(oy) * d.out_w + x_begin;
                        for (int i = 0; i < x_end - x_begin; ++i) dst[i] += line[i];
                    }
                } else {
                    for (int oy = 0; oy < d.out_h; ++oy) {
                        const int iy = oy * d.stride + ky - d.pad;
                        if (iy < 0 || iy >= d.in_h) continue;
                        double* dst = plane + static_cast<long>(iy) * d.in_w;
                        const double* line = src + static_cast<long>(oy) * d.out_w;
                        for (int ox = 0; ox < d.out_w; ++ox) {
                            const int ix = ox * d.stride + kx - d.pad;
                            if (ix >= 0 && ix < d.in_w) dst[ix] += line[ox];
                        }
                    }
                }
            }
    }
}

// dst[i] += a * src[i]; separate multiply and add, as everywhere.
inline void axpy_span(double* dst, const double* src, double a, int n) {
    int i = 0;
#if defined(__AVX512F__)
    const __m512d av = _mm512_set1_pd(a);
    for (; i + 8 <= n; i += 8)
        _mm512_storeu_pd(dst + i,
                         _mm512_add_pd(_mm512_loadu_pd(dst + i),
                                       _mm512_mul_pd(av, _mm512_loadu_pd(src + i))));
#elif defined(__AVX2__)
    const __m256d av = _mm256_set1_pd(a);
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i,
                         _mm256_add_pd(_mm256_loadu_pd(dst + i),
                                       _mm256_mul_pd(av, _mm256_loadu_pd(src + i))));
#endif
    for (; i < n; ++i) dst[i] += a * src[i];
}

inline double dot_span(const double* a, const double* b, long k) {
    long kk = 0;
    double total;
#if defined(__AVX512F__)
    __m512d acc0 = _mm512_setzero_pd(), acc1 = _mm512_setzero_pd();
    for (; kk + 16 <= k; kk += 16) {
        acc0 = _mm512_add_pd(acc0, _mm512_mul_pd(_mm512_loadu_pd(a + kk), _mm512_loadu_pd(b + kk)));
        acc1 = _mm512_add_pd(acc1,
                             _mm512_mul_pd(_mm512_loadu_pd(a + kk + 8), _mm512_loadu_pd(b + kk + 8)));
    }
    total = _mm512_reduce_add_pd(_mm512_add_pd(acc0, acc1));
#elif defined(__AVX2__)
    __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
    for (; kk + 8 <= k; kk += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + kk), _mm256_loadu_pd(b + kk)));
        acc1 = _mm256_add_pd(acc1,
                             _mm256_mul_pd(_mm256_loadu_pd(a + kk + 4), _mm256_loadu_pd(b + kk + 4)));
    }
    const __m256d acc = _mm256_add_pd(acc0, acc1);
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    total = lanes[0] + lanes[1] + lanes[2] + lanes[3];
#else
    double p0 = 0.0, p1 = 0.0, p2 = 0.0, p3 = 0.0;
    for (; kk + 4 <= k; kk += 4) {
        p0 += a[kk] * b[kk];
        p1 += a[kk + 1] * b[kk + 1];
        p2 += a[kk + 2] * b[kk + 2];
        p3 += a[kk + 3] * b[kk + 3];
    }
    total = (p0 + p1) + (p2 + p3);
#endif
    for (; kk < k; ++kk) total += a[kk] * b[kk];
    return total;
}

// C[M x N] += A[M x K] * B[N x K]^T. Gradient path only: the K loop is
// tiled and vectorized with partial sums, which finite differences
// tolerate and reruns reproduce exactly. The tile keeps each B row pass
// inside cache while all M rows of A are visited.
void gemm_nt_accumulate(const double* a, const double* b, double* c, int m, int n, long k) {
    constexpr long kTile = 4096;
    for (long k0 = 0; k0 < k; k0 += kTile) {
        const long span = std::min(kTile, k - k0);
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k + k0;
            for (int i = 0; i < m; ++i)
                c[static_cast<size_t>(i) * n + j] +=
                    dot_span(a + static_cast<size_t>(i) * k + k0, brow, span);
        }
    }
}

// Direct 3x3 stride-1 pad-1 kernels for planes whose width is a multiple
// of 8, register-blocked over four output rows. Contributions reach each
// output element in (ci, ky, kx) order, exactly as the naive oracle; lanes
// outside the image contribute a masked +0.0, which leaves every sum
// unchanged.
#if defined(__AVX512F__)
constexpr bool kHaveDirect3x3 = true;

bool direct3x3_ok(const ConvDims& d) {
    return d.kernel == 3 && d.stride == 1 && d.pad == 1 && d.in_w % 8 == 0;
}

// Planes copied into a zero halo of one pixel so every shifted tap is a
// plain unaligned load.
void pad_planes(const double* x, int channels, int height, int width, std::vector<double>& out) {
    const int wp = width + 2, hp = height + 2;
    const long padded_plane = static_cast<long>(hp) * wp;
    out.assign(static_cast<size_t>(channels) * padded_plane, 0.0);
    for (int c = 0; c < channels; ++c) {
        const double* src = x + static_cast<long>(c) * height * width;
        double* dst = out.data() + c * padded_plane + wp + 1;
        for (int y = 0; y < height; ++y)
            std::memcpy(dst + static_cast<long>(y) * wp, src + static_cast<long>(y) * width,
                        sizeof(double) * static_cast<size_t>(width));
    }
}

template <bool Accumulate>
void conv3x3_forward_padded(const double* xpad, const double* w, double* out, int in_ch, int out_ch,
                            int height, int width) {
    const long plane = static_cast<long>(height) * width;
    const int wp = width + 2;
    const long padded_plane = static_cast<long>(height + 2) * wp;
    const int chunks = width / 8;

    for (int co = 0; co < out_ch; ++co) {
        double* oplane = out + static_cast<long>(co) * plane;
        int oy = 0;
        while (oy < height) {
            const int rows = std::min(4, height - oy);
            __m512d acc[4][4];
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < chunks; ++c) acc[r][c] = _mm512_setzero_pd();
            const double* wbase = w + static_cast<long>(co) * in_ch * 9;
            for (int ci = 0; ci < in_ch; ++ci) {
                // padded row for input row iy = oy + r + ky - 1
                const double* base = xpad + ci * padded_plane + static_cast<long>(oy) * wp + 1;
                const double* wrow = wbase + static_cast<long>(ci) * 9;
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const __m512d wv = _mm512_set1_pd(wrow[ky * 3 + kx]);
                        const double* shifted = base + static_cast<long>(ky) * wp + kx - 1;
                        for (int r = 0; r < rows; ++r) {
                            const double* row = shifted + static_cast<long>(r) * wp;
                            for (int c = 0; c < chunks; ++c)
                                acc[r][c] = _mm512_add_pd(
                                    acc[r][c], _mm512_mul_pd(wv, _mm512_loadu_pd(row + 8 * c)));
                        }
                    }
            }
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < chunks; ++c) {
                    double* dst = oplane + static_cast<long>(oy + r) * width + 8 * c;
                    __m512d value = acc[r][c];
                    if (Accumulate) value = _mm512_add_pd(value, _mm512_loadu_pd(dst));
                    _mm512_storeu_pd(dst, value);
                }
            oy += rows;
        }
    }
}

// dx = 3x3 convolution of the output gradient with the flipped, transposed
// kernel; reuses the forward kernel on repacked weights.
void conv3x3_flip_weights(const double* w, int out_ch, int in_ch, double* flipped) {
    for (int ci = 0; ci < in_ch; ++ci)
        for (int co = 0; co < out_ch; ++co)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx)
                    flipped[((static_cast<long>(ci) * out_ch + co) * 3 + (2 - ky)) * 3 + (2 - kx)] =
                        w[((static_cast<long>(co) * in_ch + ci) * 3 + ky) * 3 + kx];
}

// dw[co,ci,ky,kx] += sum over positions of g[co] * shifted x[ci]; vector
// partial sums per tap, reduced once at the end (gradient path only).
void conv3x3_weight_grad_padded(const double* g, const double* xpad, double* dw, int in_ch,
                                int out_ch, int height, int width) {
    const long plane = static_cast<long>(height) * width;
    const int wp = width + 2;
    const long padded_plane = static_cast<long>(height + 2) * wp;
    const int chunks = width / 8;

    for (int co = 0; co < out_ch; ++co) {
        const double* gplane = g + static_cast<long>(co) * plane;
        for (int ci = 0; ci < in_ch; ++ci) {
            const double* base = xpad + ci * padded_plane + 1;
            __m512d acc[9];
            for (int t = 0; t < 9; ++t) acc[t] = _mm512_setzero_pd();
            for (int oy = 0; oy < height; ++oy) {
                const double* grow = gplane + static_cast<long>(oy) * width;
                const double* xbase = base + static_cast<long>(oy) * wp;
                for (int c = 0; c < chunks; ++c) {
                    const __m512d gv = _mm512_loadu_pd(grow + 8 * c);
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* xrow = xbase + static_cast<long>(ky) * wp + 8 * c;
                        acc[ky * 3] = _mm512_add_pd(acc[ky * 3],
                                                    _mm512_mul_pd(gv, _mm512_loadu_pd(xrow - 1)));
                        acc[ky * 3 + 1] = _mm512_add_pd(
                            acc[ky * 3 + 1], _mm512_mul_pd(gv, _mm512_loadu_pd(xrow)));
                        acc[ky * 3 + 2] = _mm512_add_pd(
                            acc[ky * 3 + 2], _mm512_mul_pd(gv, _mm512_loadu_pd(xrow + 1)));
                    }
                }
            }
            double* dwrow = dw + (static_cast<long>(co) * in_ch + ci) * 9;
            for (int t = 0; t < 9; ++t) dwrow[t] += _mm512_reduce_add_pd(acc[t]);
        }
    }
}
#else
constexpr bool kHaveDirect3x3 = false;
bool direct3x3_ok(const ConvDims&) { return false; }
void pad_planes(const double*, int, int, int, std::vector<double>&) {}
template <bool Accumulate>
void conv3x3_forward_padded(const double*, const double*, double*, int, int, int, int) {}
void conv3x3_flip_weights(const double*, int, int, double*) {}
void conv3x3_weight_grad_padded(const double*, const double*, double*, int, int, int, int) {}
#endif

// Transposed column matrix colt[pos][row]; cheap at small spatial sizes.
void im2colt_sample(const double* plane0, const ConvDims& d, double* colt) {
    const long rows = d.col_rows();
    long row = 0;
    for (int ci = 0; ci < d.in_ch; ++ci) {
        const double* plane = plane0 + static_cast<long>(ci) * d.in_plane();
        for (int ky = 0; ky < d.kernel; ++ky)
            for (int kx = 0; kx < d.kernel; ++kx, ++row) {
                long pos = 0;
                for (int oy = 0; oy < d.out_h; ++oy) {
                    const int iy = oy * d.stride + ky - d.pad;
                    for (int ox = 0; ox < d.out_w; ++ox, ++pos) {
                        const int ix = ox * d.stride + kx - d.pad;
                        colt[pos * rows + row] = (iy < 0 || iy >= d.in_h || ix < 0 || ix >= d.in_w)
                                                     ? 0.0
                                                     : plane[static_cast<long>(iy) * d.in_w + ix];
                    }
                }
            }
    }
}

thread_local std::vector<double> g_col_scratch;
thread_local std::vector<double> g_wt_scratch;
thread_local std::vector<double> g_dcol_scratch;
thread_local std::vector<double> g_pad_scratch;

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding, const Tensor* bias) {
    const ConvDims d = conv_dims(x, w, stride, padding);
    if (bias && (bias->rank() != 1 || bias->dim(0) != d.out_ch))
        throw DimensionError("conv2d: bias shape " + shape_str(bias->shape()));

    const long col_rows = d.col_rows();
    const long spatial = d.out_spatial();
    const long in_block = static_cast<long>(d.in_ch) * d.in_plane();
    const long out_plane = static_cast<long>(d.out_ch) * spatial;

    std::vector<double> out(static_cast<size_t>(d.batch) * out_plane);
    if (d.pointwise()) {
        // 1x1: each sample's channel block is already the column matrix
        for (int b = 0; b < d.batch; ++b)
            gemm(w.data().data(), x.data().data() + static_cast<long>(b) * in_block,
                 out.data() + static_cast<long>(b) * out_plane, d.out_ch, d.in_ch,
                 static_cast<int>(spatial), false);
    } else if (kHaveDirect3x3 && direct3x3_ok(d)) {
        for (int b = 0; b < d.batch; ++b) {
            pad_planes(x.data().data() + static_cast<long>(b) * in_block, d.in_ch, d.in_h, d.in_w,
                       g_pad_scratch);
            conv3x3_forward_padded<false>(g_pad_scratch.data(), w.data().data(),
                                          out.data() + static_cast<long>(b) * out_plane, d.in_ch,
                                          d.out_ch, d.in_h, d.in_w);
        }
    } else {
        g_col_scratch.resize(static_cast<size_t>(col_rows) * spatial);
        for (int b = 0; b < d.batch; ++b) {
            im2col_sample(x.data().data() + static_cast<long>(b) * in_block, d, g_col_scratch.data());
            gemm(w.data().data(), g_col_scratch.data(), out.data() + static_cast<long>(b) * out_plane,
                 d.out_ch, static_cast<int>(col_rows), static_cast<int>(spatial), false);
        }
    }
    if (bias)
        for (int b = 0; b < d.batch; ++b)
            for (int co = 0; co < d.out_ch; ++co) {
                double* line = out.data() + static_cast<long>(b) * out_plane + static_cast<long>(co) * spatial;
                const double bv = bias->data()[co];
                for (long p = 0; p < spatial; ++p) line[p] += bv;
            }

    NodePtr xn = x.node(), wn = w.node();
    NodePtr biasn = bias ? bias->node() : nullptr;
    std::vector<NodePtr> parents = {xn, wn};
    if (biasn) parents.push_back(biasn);
    return make_node(
        "conv2d", {d.batch, d.out_ch, d.out_h, d.out_w}, std::move(out), std::move(parents),
        [xn, wn, biasn, d, col_rows, spatial, in_block, out_plane](Node& self) {
            const bool need_dx = xn->requires_grad;
            const bool need_dw = wn->requires_grad;
            if (need_dx) xn->ensure_grad();
            if (need_dw) wn->ensure_grad();

            const bool pointwise = d.pointwise();
            const bool direct = kHaveDirect3x3 && direct3x3_ok(d);
            // weight grad route: row dots against the column matrix when the
            // dot length amortizes, otherwise a transposed-column GEMM
            const bool dw_by_dots = pointwise || spatial >= 128;
            if (need_dx) {
                g_wt_scratch.resize(static_cast<size_t>(col_rows) * d.out_ch);
                if (direct) {
                    conv3x3_flip_weights(wn->value.data(), d.out_ch, d.in_ch, g_wt_scratch.data());
                } else {
                    // W^T materialized once: wt[row][co] = w[co][row]
                    for (int co = 0; co < d.out_ch; ++co)
                        for (long r = 0; r < col_rows; ++r)
                            g_wt_scratch[static_cast<size_t>(r) * d.out_ch + co] =
                                wn->value[static_cast<size_t>(co) * col_rows + r];
                    g_dcol_scratch.resize(static_cast<size_t>(col_rows) * spatial);
                }
            }
            if (need_dw && !pointwise && !direct)
                g_col_scratch.resize(static_cast<size_t>(col_rows) * spatial);

            for (int b = 0; b < d.batch; ++b) {
                const double* g = self.grad.data() + static_cast<long>(b) * out_plane;
                const double* xb = xn->value.data() + static_cast<long>(b) * in_block;
                if (need_dw) {
                    if (direct) {
                        pad_planes(xb, d.in_ch, d.in_h, d.in_w, g_pad_scratch);
                        conv3x3_weight_grad_padded(g, g_pad_scratch.data(), wn->grad.data(),
                                                   d.in_ch, d.out_ch, d.in_h, d.in_w);
                    } else if (dw_by_dots) {
                        const double* col = xb;  // pointwise case reads x directly
                        if (!pointwise) {
                            im2col_sample(xb, d, g_col_scratch.data());
                            col = g_col_scratch.data();
                        }
                        gemm_nt_accumulate(g, col, wn->grad.data(), d.out_ch,
                                           static_cast<int>(col_rows), spatial);
                    } else {
                        im2colt_sample(xb, d, g_col_scratch.data());
                        gemm(g, g_col_scratch.data(), wn->grad.data(), d.out_ch,
                             static_cast<int>(spatial), static_cast<int>(col_rows), true);
                    }
                }
                if (need_dx) {
                    double* dxb = xn->grad.data() + static_cast<long>(b) * in_block;
                    if (direct) {
                        pad_planes(g, d.out_ch, d.in_h, d.in_w, g_pad_scratch);
                        conv3x3_forward_padded<true>(g_pad_scratch.data(), g_wt_scratch.data(), dxb,
                                                     d.out_ch, d.in_ch, d.in_h, d.in_w);
                    } else {
                        gemm(g_wt_scratch.data(), g, g_dcol_scratch.data(),
                             static_cast<int>(col_rows), d.out_ch, static_cast<int>(spatial), false);
                        if (pointwise) {
                            for (long i = 0; i < in_block; ++i)
                                dxb[i] += g_dcol_scratch[static_cast<size_t>(i)];
                        } else {
                            col2im_sample_add(g_dcol_scratch.data(), d, dxb);
                        }
                    }
                }
            }
            if (biasn && biasn->requires_grad) {
                biasn->ensure_grad();
                for (int b = 0; b < d.batch; ++b) {
                    const double* g = self.grad.data() + static_cast<long>(b) * out_plane;
                    for (int co = 0; co < d.out_ch; ++co) {
                        double s = 0.0;
                        for (long p = 0; p < spatial; ++p) s += g[static_cast<long>(co) * spatial + p];
                        biasn->grad[co] += s;
                    }
                }
            }
        });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps) {
    if (x.rank() != 4) throw DimensionError("batch_norm: want [B,C,H,W], got " + shape_str(x.shape()));
    const int batch = x.dim(0), channels = x.dim(1);
    const long spatial = static_cast<long>(x.dim(2)) * x.dim(3);
    const long reduce = static_cast<long>(batch) * spatial;
    if (gamma.rank() != 1 || gamma.dim(0) != channels || beta.rank() != 1 || beta.dim(0) != channels)
        throw DimensionError("batch_norm: affine params must be [C]");
    if (running_mean.size() != channels || running_var.size() != channels)
        throw DimensionError("batch_norm: running stats must be [C]");

    std::vector<double> mean(static_cast<size_t>(channels)), var(static_cast<size_t>(channels));
    if (training) {
        for (int c = 0; c < channels; ++c) {
            double s = 0.0, sq = 0.0;
            for (int b = 0; b < batch; ++b) {
                const double* p = x.data().data() + (static_cast<size_t>(b) * channels + c) * spatial;
                for (long i = 0; i < spatial; ++i) {
                    s += p[i];
                    sq += p[i] * p[i];
                }
            }
            const double m = s / static_cast<double>(reduce);
            mean[static_cast<size_t>(c)] = m;
            var[static_cast<size_t>(c)] = std::max(0.0, sq / static_cast<double>(reduce) - m * m);
        }
        for (int c = 0; c < channels; ++c) {
            running_mean.data()[c] = (1.0 - momentum) * running_mean.data()[c] + momentum * mean[static_cast<size_t>(c)];
            running_var.data()[c] = (1.0 - momentum) * running_var.data()[c] + momentum * var[static_cast<size_t>(c)];
        }
    } else {
        for (int c = 0; c < channels; ++c) {
            mean[static_cast<size_t>(c)] = running_mean.data()[c];
            var[static_cast<size_t>(c)] = running_var.data()[c];
        }
    }

    std::vector<double> inv_std(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c)
        inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);

    std::vector<double> out(x.data().size());
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            const double m = mean[static_cast<size_t>(c)];
            const double scale_c = inv_std[static_cast<size_t>(c)] * gamma.data()[c];
            const double shift_c = beta.data()[c];
            const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
            for (long i = 0; i < spatial; ++i) out[off + i] = (x.data()[off + i] - m) * scale_c + shift_c;
        }

    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_node(
        "batch_norm", x.shape(), std::move(out), {xn, gn, bn},
        [xn, gn, bn, batch, channels, spatial, reduce, mean, inv_std, training](Node& self) {
            for (int c = 0; c < channels; ++c) {
                const double m = mean[static_cast<size_t>(c)];
                const double is = inv_std[static_cast<size_t>(c)];
                double sum_g = 0.0, sum_gx = 0.0;
                for (int b = 0; b < batch; ++b) {
                    const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
                    for (long i = 0; i < spatial; ++i) {
                        const double g = self.grad[off + i];
                        sum_g += g;
                        sum_gx += g * (xn->value[off + i] - m) * is;
                    }
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    gn->grad[c] += sum_gx;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    bn->grad[c] += sum_g;
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    const double gc = gn->value[c];
                    if (training) {
                        const double mean_g = sum_g / static_cast<double>(reduce);
                        const double mean_gx = sum_gx / static_cast<double>(reduce);
                        for (int b = 0; b < batch; ++b) {
                            const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
                            for (long i = 0; i < spatial; ++i) {
                                const double xhat = (xn->value[off + i] - m) * is;
                                xn->grad[off + i] +=
                                    gc * is * (self.grad[off + i] - mean_g - xhat * mean_gx);
                            }
                        }
                    } else {
                        for (int b = 0; b < batch; ++b) {
                            const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
                            for (long i = 0; i < spatial; ++i)
                                xn->grad[off + i] += gc * is * self.grad[off + i];
                        }
                    }
                }
            }
        });
}

}  // namespace dla
