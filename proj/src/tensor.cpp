#include "craft/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace craft {

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

static int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor make_tensor(std::vector<int64_t> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                    std::to_string(data.size()));
    auto t = std::make_shared<TensorImpl>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

Tensor zeros(std::vector<int64_t> shape, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)), 0.0);
    return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor full(std::vector<int64_t> shape, double value, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)), value);
    return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor scalar(double value, bool requires_grad) {
    return make_tensor({}, {value}, requires_grad);
}

Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
    for (double& x : d) x = stddev * rng.normal();
    return make_tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor detach(const Tensor& t) {
    auto out = std::make_shared<TensorImpl>();
    out->shape = t->shape;
    out->data = t->data;
    out->requires_grad = false;
    return out;
}

namespace {
thread_local Graph* g_active_graph = nullptr;
}

Graph::Graph() {
    prev_ = g_active_graph;
    g_active_graph = this;
}

Graph::~Graph() { g_active_graph = prev_; }

Graph* Graph::active() { return g_active_graph; }

void Graph::record(const Tensor& node) {
    if (g_active_graph) g_active_graph->nodes_.push_back(node);
}

void Graph::backward(const Tensor& loss) {
    if (!loss->is_scalar())
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss->shape));
    if (!loss->backward_fn)
        throw std::invalid_argument("backward: loss was not produced by operations on this graph");

    loss->ensure_grad();
    loss->grad[0] += 1.0;

    // reverse append order visits every node exactly once
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        TensorImpl& node = **it;
        if (node.grad.empty()) continue;  // nothing flowed into it
        if (node.backward_fn) node.backward_fn(node);
    }

    // intermediates drop their grads; leaves keep theirs for the optimizer
    for (auto& node : nodes_) {
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
}

}  // namespace craft
