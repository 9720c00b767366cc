#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "craft/ops.hpp"
#include "craft/tensor.hpp"
#include "doctest.h"

namespace craft::testutil {

// Central-difference gradient oracle: rebuilds the loss per evaluation, so
// it stays independent of the tape's backward path.
inline void check_gradients(const std::function<craft::Tensor()>& lossfn, const std::vector<craft::Tensor>& leaves,
                            double fd_step = 1e-5, double tol = 1e-3) {
    std::map<craft::TensorImpl*, std::vector<double>> analytic;
    {
        craft::Graph graph;
        craft::Tensor loss = lossfn();
        graph.backward(loss);
        for (const auto& leaf : leaves) {
            REQUIRE(!leaf->grad.empty());
            analytic[leaf.get()] = leaf->grad;
            leaf->grad.clear();
        }
    }
    for (const auto& leaf : leaves) {
        for (size_t i = 0; i < leaf->data.size(); ++i) {
            double saved = leaf->data[i];
            leaf->data[i] = saved + fd_step;
            double up = lossfn()->data[0];
            leaf->data[i] = saved - fd_step;
            double down = lossfn()->data[0];
            leaf->data[i] = saved;
            double numeric = (up - down) / (2.0 * fd_step);
            double a = analytic[leaf.get()][i];
            double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            CHECK(std::fabs(a - numeric) / denom < tol);
        }
    }
}

}  // namespace craft::testutil
