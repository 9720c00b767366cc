#pragma once

#include <vector>

#include "craft/tensor.hpp"

namespace craft {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// By compile-time constants.
Tensor scale(const Tensor& a, double c);
Tensor pow_elem(const Tensor& a, double p);

// Multiply every element by a scalar tensor (gradient flows into both).
Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s);

// Row-broadcast: A is (m x n), v is (n).
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor mul_rowvec(const Tensor& a, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar

// Row-wise over the last dimension of a 2-D tensor.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
// Normalizes each row to zero mean, unit variance (population variance).
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-12);

// Row gather / scatter on 2-D tensors. gather_rows doubles as the embedding
// lookup; scatter_rows overwrites the given rows of base with `rows`.
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids);
Tensor scatter_rows(const Tensor& base, const Tensor& rows, const std::vector<int64_t>& ids);

Tensor slice_cols(const Tensor& a, int64_t start, int64_t len);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// out[i] = a[r[i], c[i]], as a 1-D tensor.
Tensor pick(const Tensor& a, const std::vector<int64_t>& r, const std::vector<int64_t>& c);

}  // namespace craft
