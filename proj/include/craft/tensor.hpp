#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "craft/rng.hpp"

namespace craft {

class TensorImpl;
using Tensor = std::shared_ptr<TensorImpl>;

// Dense f64 tensor of rank 0..2. Leaves may carry requires_grad; interior
// nodes of the tape carry a backward closure that scatters the incoming
// gradient into their parents.
class TensorImpl {
public:
    std::vector<int64_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until backward needs it

    // tape linkage, set when an op records this node
    std::vector<Tensor> parents;
    std::function<void(TensorImpl&)> backward_fn;
    std::string op_name;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t rows() const { return rank() == 2 ? shape[0] : 1; }
    int64_t cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }

    // participates in backward, either as a trainable leaf or a tape node
    bool needs_grad() const { return requires_grad || backward_fn != nullptr; }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }

    double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }
};

std::string shape_str(const std::vector<int64_t>& shape);

Tensor make_tensor(std::vector<int64_t> shape, std::vector<double> data, bool requires_grad = false);
Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
Tensor full(std::vector<int64_t> shape, double value, bool requires_grad = false);
Tensor scalar(double value, bool requires_grad = false);
Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

// Detached value copy (no grad, no tape linkage).
Tensor detach(const Tensor& t);

// Append-only op tape. While a Graph is alive it is the active tape and ops
// whose inputs need gradients record themselves onto it; backward replays the
// recorded nodes once each, in reverse append order. Single-threaded by
// construction.
class Graph {
public:
    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // loss must be a scalar recorded on this graph
    void backward(const Tensor& loss);

    size_t size() const { return nodes_.size(); }

    static Graph* active();
    static void record(const Tensor& node);

private:
    std::vector<Tensor> nodes_;
    Graph* prev_ = nullptr;
};

}  // namespace craft
