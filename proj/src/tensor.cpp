#include "dla/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dla {

namespace {
// Graph buffers are multi-megabyte and freed every step; keep them on the
// heap instead of round-tripping through mmap on each allocation.
struct AllocatorTuning {
    AllocatorTuning() {
#if defined(__GLIBC__)
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
    }
};
const AllocatorTuning g_allocator_tuning;
}  // namespace

long numel(const Shape& shape) {
    long n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value.assign(static_cast<size_t>(numel(shape)), fill);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != static_cast<long>(data.size()))
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of size " + std::to_string(size()));
    return node_->value[0];
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
    return node_->grad;
}

namespace {
thread_local int g_no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

void check_finite(const char* op, const std::vector<double>& values) {
    double probe = 0.0;
    for (double v : values) probe += std::fabs(v);
    if (std::isfinite(probe)) return;
    for (size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]))
            throw NumericError(std::string(op) + ": non-finite value at index " + std::to_string(i));
    }
    throw NumericError(std::string(op) + ": magnitude overflow");
}

namespace detail {

Tensor make_node(const char* op, Shape shape, std::vector<double> value,
                 std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
    check_finite(op, value);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    node->requires_grad = false;
    if (grad_enabled()) {
        for (const auto& p : parents) {
            if (p->requires_grad) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(node);
}

}  // namespace detail

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined tensor");
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));

    // Iterative post-order DFS; `order` ends up topologically sorted.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        if (next_parent < node->parents.size()) {
            Node* parent = node->parents[next_parent].get();
            ++next_parent;
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

}  // namespace dla
