#include "dla/ops.hpp"

#include <algorithm>
#include <cmath>

namespace dla {

using detail::make_node;

const char* activation_name(Activation act) {
    switch (act) {
        case Activation::Identity: return "identity";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Tanh: return "tanh";
        case Activation::ReLU: return "relu";
    }
    return "?";
}

Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu") return Activation::ReLU;
    throw ConfigError("unknown activation '" + name + "'");
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    NodePtr an = a.node(), bn = b.node();
    return make_node("add", a.shape(), std::move(out), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    NodePtr an = a.node(), bn = b.node();
    return make_node("mul", a.shape(), std::move(out), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    NodePtr an = a.node();
    return make_node("scale", a.shape(), std::move(out), {an}, [an, factor](Node& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * factor;
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    NodePtr xn = x.node();
    return make_node("relu", x.shape(), std::move(out), {xn}, [xn](Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double mask = xn->value[i] > 0.0 ? 1.0 : 0.0;
            xn->grad[i] += mask * self.grad[i];
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x.data()[i]);
    NodePtr xn = x.node();
    return make_node("sigmoid", x.shape(), std::move(out), {xn}, [xn](Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double s = self.value[i];
            xn->grad[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor tanh_op(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
    NodePtr xn = x.node();
    return make_node("tanh", x.shape(), std::move(out), {xn}, [xn](Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double t = self.value[i];
            xn->grad[i] += self.grad[i] * (1.0 - t * t);
        }
    });
}

Tensor activate(Activation act, const Tensor& x) {
    switch (act) {
        case Activation::Identity: return x;
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::Tanh: return tanh_op(x);
        case Activation::ReLU: return relu(x);
    }
    throw ConfigError("activate: bad activation");
}

Tensor view(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw DimensionError("view: cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    NodePtr xn = x.node();
    return make_node("view", std::move(shape), x.data(), {xn}, [xn](Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw DimensionError("concat_cols: want [B,n1],[B,n2], got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    const int rows = a.dim(0), na = a.dim(1), nb = b.dim(1);
    std::vector<double> out(static_cast<size_t>(rows) * (na + nb));
    for (int r = 0; r < rows; ++r) {
        std::copy_n(a.data().begin() + static_cast<size_t>(r) * na, na,
                    out.begin() + static_cast<size_t>(r) * (na + nb));
        std::copy_n(b.data().begin() + static_cast<size_t>(r) * nb, nb,
                    out.begin() + static_cast<size_t>(r) * (na + nb) + na);
    }
    NodePtr an = a.node(), bn = b.node();
    return make_node("concat_cols", {rows, na + nb}, std::move(out), {an, bn},
                     [an, bn, rows, na, nb](Node& self) {
                         for (int r = 0; r < rows; ++r) {
                             const double* g = self.grad.data() + static_cast<size_t>(r) * (na + nb);
                             if (an->requires_grad) {
                                 an->ensure_grad();
                                 double* ga = an->grad.data() + static_cast<size_t>(r) * na;
                                 for (int i = 0; i < na; ++i) ga[i] += g[i];
                             }
                             if (bn->requires_grad) {
                                 bn->ensure_grad();
                                 double* gb = bn->grad.data() + static_cast<size_t>(r) * nb;
                                 for (int i = 0; i < nb; ++i) gb[i] += g[na + i];
                             }
                         }
                     });
}

Tensor slice_cols(const Tensor& x, int col_begin, int col_end) {
    if (x.rank() != 2) throw DimensionError("slice_cols: want rank 2, got " + shape_str(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    if (col_begin < 0 || col_end > cols || col_begin >= col_end)
        throw DimensionError("slice_cols: bad range [" + std::to_string(col_begin) + "," +
                             std::to_string(col_end) + ") for " + shape_str(x.shape()));
    const int width = col_end - col_begin;
    std::vector<double> out(static_cast<size_t>(rows) * width);
    for (int r = 0; r < rows; ++r)
        std::copy_n(x.data().begin() + static_cast<size_t>(r) * cols + col_begin, width,
                    out.begin() + static_cast<size_t>(r) * width);
    NodePtr xn = x.node();
    return make_node("slice_cols", {rows, width}, std::move(out), {xn},
                     [xn, rows, cols, col_begin, width](Node& self) {
                         xn->ensure_grad();
                         for (int r = 0; r < rows; ++r) {
                             const double* g = self.grad.data() + static_cast<size_t>(r) * width;
                             double* gx = xn->grad.data() + static_cast<size_t>(r) * cols + col_begin;
                             for (int i = 0; i < width; ++i) gx[i] += g[i];
                         }
                     });
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.rank() < 1) throw DimensionError("softmax: rank 0 input");
    const int n = x.dim(x.rank() - 1);
    const long rows = x.size() / n;
    std::vector<double> out(x.data().size());
    for (long r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * n;
        double* o = out.data() + r * n;
        double m = in[0];
        for (int i = 1; i < n; ++i) m = std::max(m, in[i]);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            o[i] = std::exp(in[i] - m);
            sum += o[i];
        }
        for (int i = 0; i < n; ++i) o[i] /= sum;
    }
    NodePtr xn = x.node();
    return make_node("softmax", x.shape(), std::move(out), {xn}, [xn, rows, n](Node& self) {
        xn->ensure_grad();
        for (long r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * n;
            const double* g = self.grad.data() + r * n;
            double* gx = xn->grad.data() + r * n;
            double inner = 0.0;
            for (int i = 0; i < n; ++i) inner += g[i] * y[i];
            for (int i = 0; i < n; ++i) gx[i] += y[i] * (g[i] - inner);
        }
    });
}

Tensor head_dot(const Tensor& q, const Tensor& k) {
    require_same_shape("head_dot", q, k);
    if (q.rank() != 3) throw DimensionError("head_dot: want [B,H,D], got " + shape_str(q.shape()));
    const int batch = q.dim(0), heads = q.dim(1), depth = q.dim(2);
    std::vector<double> out(static_cast<size_t>(batch) * heads);
    for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h) {
            const size_t off = (static_cast<size_t>(b) * heads + h) * depth;
            double s = 0.0;
            for (int d = 0; d < depth; ++d) s += q.data()[off + d] * k.data()[off + d];
            out[static_cast<size_t>(b) * heads + h] = s;
        }
    NodePtr qn = q.node(), kn = k.node();
    return make_node("head_dot", {batch, heads}, std::move(out), {qn, kn},
                     [qn, kn, batch, heads, depth](Node& self) {
                         for (int b = 0; b < batch; ++b)
                             for (int h = 0; h < heads; ++h) {
                                 const double g = self.grad[static_cast<size_t>(b) * heads + h];
                                 const size_t off = (static_cast<size_t>(b) * heads + h) * depth;
                                 if (qn->requires_grad) {
                                     qn->ensure_grad();
                                     for (int d = 0; d < depth; ++d)
                                         qn->grad[off + d] += g * kn->value[off + d];
                                 }
                                 if (kn->requires_grad) {
                                     kn->ensure_grad();
                                     for (int d = 0; d < depth; ++d)
                                         kn->grad[off + d] += g * qn->value[off + d];
                                 }
                             }
                     });
}

Tensor stack_lastdim(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("stack_lastdim: empty input");
    const Shape base = parts[0].shape();
    for (const Tensor& t : parts) require_same_shape("stack_lastdim", parts[0], t);
    const long rows = numel(base);
    const int count = static_cast<int>(parts.size());
    std::vector<double> out(static_cast<size_t>(rows) * count);
    for (long r = 0; r < rows; ++r)
        for (int i = 0; i < count; ++i) out[static_cast<size_t>(r) * count + i] = parts[i].data()[r];
    Shape shape = base;
    shape.push_back(count);
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    for (const Tensor& t : parts) parents.push_back(t.node());
    auto captured = parents;
    return make_node("stack_lastdim", std::move(shape), std::move(out), std::move(parents),
                     [captured, rows, count](Node& self) {
                         for (int i = 0; i < count; ++i) {
                             const NodePtr& p = captured[static_cast<size_t>(i)];
                             if (!p->requires_grad) continue;
                             p->ensure_grad();
                             for (long r = 0; r < rows; ++r)
                                 p->grad[r] += self.grad[static_cast<size_t>(r) * count + i];
                         }
                     });
}

Tensor head_mix(const Tensor& weights, std::span<const Tensor> values, int heads) {
    if (values.empty()) throw ContractError("head_mix: no value maps");
    const int count = static_cast<int>(values.size());
    if (weights.rank() != 3 || weights.dim(1) != heads || weights.dim(2) != count)
        throw DimensionError("head_mix: weights " + shape_str(weights.shape()) + " want [B," +
                             std::to_string(heads) + "," + std::to_string(count) + "]");
    const Shape vshape = values[0].shape();
    for (const Tensor& v : values) require_same_shape("head_mix", values[0], v);
    if (vshape.size() < 2 || vshape[0] != weights.dim(0) || vshape[1] % heads != 0)
        throw DimensionError("head_mix: bad value shape " + shape_str(vshape));
    const int batch = vshape[0], channels = vshape[1];
    const long spatial = numel(vshape) / (static_cast<long>(batch) * channels);
    const int group = channels / heads;

    std::vector<double> out(static_cast<size_t>(batch) * channels * spatial, 0.0);
    for (int i = 0; i < count; ++i) {
        const double* v = values[static_cast<size_t>(i)].data().data();
        for (int b = 0; b < batch; ++b)
            for (int c = 0; c < channels; ++c) {
                const double w =
                    weights.data()[(static_cast<size_t>(b) * heads + c / group) * count + i];
                const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
                for (long p = 0; p < spatial; ++p) out[off + p] += w * v[off + p];
            }
    }

    std::vector<NodePtr> parents;
    parents.push_back(weights.node());
    for (const Tensor& v : values) parents.push_back(v.node());
    auto captured = parents;
    return make_node(
        "head_mix", vshape, std::move(out), std::move(parents),
        [captured, heads, count, batch, channels, spatial, group](Node& self) {
            const NodePtr& wn = captured[0];
            for (int i = 0; i < count; ++i) {
                const NodePtr& vn = captured[static_cast<size_t>(i) + 1];
                for (int b = 0; b < batch; ++b)
                    for (int c = 0; c < channels; ++c) {
                        const size_t widx = (static_cast<size_t>(b) * heads + c / group) * count + i;
                        const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
                        if (vn->requires_grad) {
                            vn->ensure_grad();
                            const double w = wn->value[widx];
                            for (long p = 0; p < spatial; ++p)
                                vn->grad[off + p] += w * self.grad[off + p];
                        }
                        if (wn->requires_grad) {
                            wn->ensure_grad();
                            double s = 0.0;
                            for (long p = 0; p < spatial; ++p)
                                s += vn->value[off + p] * self.grad[off + p];
                            wn->grad[widx] += s;
                        }
                    }
            }
        });
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
    if (x.rank() < 2 || s.rank() != 1 || s.dim(0) != x.dim(1))
        throw DimensionError("channel_scale: x " + shape_str(x.shape()) + " s " + shape_str(s.shape()));
    const int batch = x.dim(0), channels = x.dim(1);
    const long spatial = x.size() / (static_cast<long>(batch) * channels);
    std::vector<double> out(x.data().size());
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            const double f = s.data()[c];
            const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
            for (long p = 0; p < spatial; ++p) out[off + p] = x.data()[off + p] * f;
        }
    NodePtr xn = x.node(), sn = s.node();
    return make_node("channel_scale", x.shape(), std::move(out), {xn, sn},
                     [xn, sn, batch, channels, spatial](Node& self) {
                         for (int b = 0; b < batch; ++b)
                             for (int c = 0; c < channels; ++c) {
                                 const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
                                 if (xn->requires_grad) {
                                     xn->ensure_grad();
                                     const double f = sn->value[c];
                                     for (long p = 0; p < spatial; ++p)
                                         xn->grad[off + p] += self.grad[off + p] * f;
                                 }
                                 if (sn->requires_grad) {
                                     sn->ensure_grad();
                                     double g = 0.0;
                                     for (long p = 0; p < spatial; ++p)
                                         g += self.grad[off + p] * xn->value[off + p];
                                     sn->grad[c] += g;
                                 }
                             }
                     });
}

Tensor channel_scale_batched(const Tensor& x, const Tensor& s) {
    if (x.rank() < 2 || s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
        throw DimensionError("channel_scale_batched: x " + shape_str(x.shape()) + " s " +
                             shape_str(s.shape()));
    const int batch = x.dim(0), channels = x.dim(1);
    const long spatial = x.size() / (static_cast<long>(batch) * channels);
    std::vector<double> out(x.data().size());
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            const double f = s.data()[static_cast<size_t>(b) * channels + c];
            const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
            for (long p = 0; p < spatial; ++p) out[off + p] = x.data()[off + p] * f;
        }
    NodePtr xn = x.node(), sn = s.node();
    return make_node("channel_scale_batched", x.shape(), std::move(out), {xn, sn},
                     [xn, sn, batch, channels, spatial](Node& self) {
                         for (int b = 0; b < batch; ++b)
                             for (int c = 0; c < channels; ++c) {
                                 const size_t sidx = static_cast<size_t>(b) * channels + c;
                                 const size_t off = sidx * spatial;
                                 if (xn->requires_grad) {
                                     xn->ensure_grad();
                                     const double f = sn->value[sidx];
                                     for (long p = 0; p < spatial; ++p)
                                         xn->grad[off + p] += self.grad[off + p] * f;
                                 }
                                 if (sn->requires_grad) {
                                     sn->ensure_grad();
                                     double g = 0.0;
                                     for (long p = 0; p < spatial; ++p)
                                         g += self.grad[off + p] * xn->value[off + p];
                                     sn->grad[sidx] += g;
                                 }
                             }
                     });
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy: want [B,K], got " + shape_str(logits.shape()));
    const int batch = logits.dim(0), classes = logits.dim(1);
    if (static_cast<int>(labels.size()) != batch)
        throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                            std::to_string(batch));
    for (int y : labels)
        if (y < 0 || y >= classes) throw ContractError("cross_entropy: label out of range");

    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        const double* row = logits.data().data() + static_cast<size_t>(b) * classes;
        double m = row[0];
        for (int k = 1; k < classes; ++k) m = std::max(m, row[k]);
        double sum = 0.0;
        for (int k = 0; k < classes; ++k) sum += std::exp(row[k] - m);
        total += m + std::log(sum) - row[labels[static_cast<size_t>(b)]];
    }
    NodePtr ln = logits.node();
    return make_node("cross_entropy", {1}, {total / batch}, {ln},
                     [ln, labels, batch, classes](Node& self) {
                         ln->ensure_grad();
                         const double g = self.grad[0] / batch;
                         for (int b = 0; b < batch; ++b) {
                             const double* row = ln->value.data() + static_cast<size_t>(b) * classes;
                             double* gx = ln->grad.data() + static_cast<size_t>(b) * classes;
                             double m = row[0];
                             for (int k = 1; k < classes; ++k) m = std::max(m, row[k]);
                             double sum = 0.0;
                             for (int k = 0; k < classes; ++k) sum += std::exp(row[k] - m);
                             for (int k = 0; k < classes; ++k) {
                                 const double p = std::exp(row[k] - m) / sum;
                                 gx[k] += g * (p - (k == labels[static_cast<size_t>(b)] ? 1.0 : 0.0));
                             }
                         }
                     });
}

Tensor dot_const(const Tensor& x, const std::vector<double>& weights) {
    if (static_cast<long>(weights.size()) != x.size())
        throw DimensionError("dot_const: weight length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) s += x.data()[i] * weights[i];
    NodePtr xn = x.node();
    return make_node("dot_const", {1}, {s}, {xn}, [xn, weights](Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < weights.size(); ++i) xn->grad[i] += self.grad[0] * weights[i];
    });
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    NodePtr xn = x.node();
    return make_node("sum_all", {1}, {s}, {xn}, [xn](Node& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += self.grad[0];
    });
}

Tensor global_average_pool(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("global_average_pool: want [B,C,H,W], got " + shape_str(x.shape()));
    const int batch = x.dim(0), channels = x.dim(1);
    const long spatial = static_cast<long>(x.dim(2)) * x.dim(3);
    std::vector<double> out(static_cast<size_t>(batch) * channels);
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
            double s = 0.0;
            for (long p = 0; p < spatial; ++p) s += x.data()[off + p];
            out[static_cast<size_t>(b) * channels + c] = s / static_cast<double>(spatial);
        }
    NodePtr xn = x.node();
    return make_node("global_average_pool", {batch, channels}, std::move(out), {xn},
                     [xn, batch, channels, spatial](Node& self) {
                         xn->ensure_grad();
                         for (int b = 0; b < batch; ++b)
                             for (int c = 0; c < channels; ++c) {
                                 const double g =
                                     self.grad[static_cast<size_t>(b) * channels + c] / spatial;
                                 const size_t off = (static_cast<size_t>(b) * channels + c) * spatial;
                                 for (long p = 0; p < spatial; ++p) xn->grad[off + p] += g;
                             }
                     });
}

}  // namespace dla
