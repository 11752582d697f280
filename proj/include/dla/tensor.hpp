#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dla {

// Error taxonomy. Shape problems, numeric blowups, contract violations and
// bad configs are distinct failure modes and callers test for them separately.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

long numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded operation (or leaf) of the differentiation graph. The graph
// of Node objects is the tape: parents always precede their consumers, and
// a reverse topological sweep visits every recorded op exactly once.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first use, accumulated by +=
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

// Shared handle to a graph node. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    long size() const { return static_cast<long>(node_->value.size()); }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    // Gradient of the last backward pass; zeros if this leaf was not reached.
    std::vector<double> grad() const;
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// While alive, ops compute values but record nothing on the tape.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Reverse sweep from a scalar loss. Every requires_grad leaf reachable from
// the loss receives its accumulated gradient; unreachable leaves are left
// with an empty grad (read back as zeros).
void backward(const Tensor& loss);

// Throws NumericError when the buffer holds a NaN/Inf. Every forward op
// calls this on its output.
void check_finite(const char* op, const std::vector<double>& values);

namespace detail {
Tensor make_node(const char* op, Shape shape, std::vector<double> value,
                 std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn);
}

}  // namespace dla
