#pragma once

// Test-only reference implementations. Plain nested loops, no shared code
// with the library paths they check.

#include <cmath>
#include <vector>

namespace oracle {

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int m,
                                  int k, int n) {
    std::vector<double> c(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk)
                acc += a[static_cast<size_t>(i) * k + kk] * b[static_cast<size_t>(kk) * n + j];
            c[static_cast<size_t>(i) * n + j] = acc;
        }
    return c;
}

inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& w,
                                  int batch, int in_ch, int in_h, int in_w, int out_ch, int kernel,
                                  int stride, int pad, const std::vector<double>* bias = nullptr) {
    const int out_h = (in_h + 2 * pad - kernel) / stride + 1;
    const int out_w = (in_w + 2 * pad - kernel) / stride + 1;
    std::vector<double> out(static_cast<size_t>(batch) * out_ch * out_h * out_w);
    for (int b = 0; b < batch; ++b)
        for (int co = 0; co < out_ch; ++co)
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox) {
                    double acc = 0.0;
                    for (int ci = 0; ci < in_ch; ++ci)
                        for (int ky = 0; ky < kernel; ++ky)
                            for (int kx = 0; kx < kernel; ++kx) {
                                const int iy = oy * stride + ky - pad;
                                const int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= in_h || ix < 0 || ix >= in_w) continue;
                                acc += x[((static_cast<size_t>(b) * in_ch + ci) * in_h + iy) * in_w + ix] *
                                       w[((static_cast<size_t>(co) * in_ch + ci) * kernel + ky) * kernel + kx];
                            }
                    if (bias) acc += (*bias)[static_cast<size_t>(co)];
                    out[((static_cast<size_t>(b) * out_ch + co) * out_h + oy) * out_w + ox] = acc;
                }
    return out;
}

inline std::vector<double> global_average_pool(const std::vector<double>& x, int batch, int channels,
                                               int h, int w) {
    std::vector<double> out(static_cast<size_t>(batch) * channels);
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            double s = 0.0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    s += x[((static_cast<size_t>(b) * channels + c) * h + y) * w + xx];
            out[static_cast<size_t>(b) * channels + c] = s / (static_cast<double>(h) * w);
        }
    return out;
}

// One DSU step on a single sample, scalar arithmetic throughout.
struct DsuArrays {
    int channels, reduction;
    std::vector<double> compress_w, cand_w, in_w, forget_w, cand_b, in_b, forget_b;
};

inline std::vector<double> dsu_step(const DsuArrays& p, const std::vector<double>& input,
                                    const std::vector<double>& state) {
    const int c = p.channels, bneck = p.channels / p.reduction;
    std::vector<double> joined(static_cast<size_t>(2) * c);
    for (int i = 0; i < c; ++i) joined[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-state[static_cast<size_t>(i)]));
    for (int i = 0; i < c; ++i) joined[static_cast<size_t>(c) + i] = input[static_cast<size_t>(i)];
    std::vector<double> squeezed(static_cast<size_t>(bneck));
    for (int f = 0; f < bneck; ++f) {
        double s = 0.0;
        for (int i = 0; i < 2 * c; ++i) s += p.compress_w[static_cast<size_t>(f) * 2 * c + i] * joined[static_cast<size_t>(i)];
        squeezed[static_cast<size_t>(f)] = s > 0.0 ? s : 0.0;
    }
    std::vector<double> next(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) {
        double cand = p.cand_b[static_cast<size_t>(i)];
        double gi = p.in_b[static_cast<size_t>(i)];
        double gf = p.forget_b[static_cast<size_t>(i)];
        for (int f = 0; f < bneck; ++f) {
            cand += p.cand_w[static_cast<size_t>(i) * bneck + f] * squeezed[static_cast<size_t>(f)];
            gi += p.in_w[static_cast<size_t>(i) * bneck + f] * squeezed[static_cast<size_t>(f)];
            gf += p.forget_w[static_cast<size_t>(i) * bneck + f] * squeezed[static_cast<size_t>(f)];
        }
        cand = std::tanh(cand);
        gi = 1.0 / (1.0 + std::exp(-gi));
        gf = 1.0 / (1.0 + std::exp(-gf));
        next[static_cast<size_t>(i)] = gf * state[static_cast<size_t>(i)] + gi * cand;
    }
    return next;
}

}  // namespace oracle
