#include "craft/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace craft {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const std::string& what) {
    throw std::invalid_argument(std::string(op) + ": " + what + ", got shape " + shape_str(a->shape));
}

void require_2d(const char* op, const Tensor& a) {
    if (a->rank() != 2) shape_error(op, a, "expected a 2-D tensor");
}

// Records the node when gradients can flow into it and a tape is active.
Tensor finish(Tensor out, std::vector<Tensor> parents, std::function<void(TensorImpl&)> fn, const char* name) {
    if (Graph::active()) {
        bool track = false;
        for (const auto& p : parents)
            if (p->needs_grad()) track = true;
        if (track) {
            out->parents = std::move(parents);
            out->backward_fn = std::move(fn);
            out->op_name = name;
            Graph::record(out);
        }
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    if (a->shape != b->shape) shape_error("add", a, b);
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] + b->data[i];
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a, b},
        [a, b](TensorImpl& self) {
            if (a->needs_grad()) {
                a->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i];
            }
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a->shape != b->shape) shape_error("sub", a, b);
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] - b->data[i];
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a, b},
        [a, b](TensorImpl& self) {
            if (a->needs_grad()) {
                a->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] -= self.grad[i];
            }
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a->shape != b->shape) shape_error("mul", a, b);
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * b->data[i];
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a, b},
        [a, b](TensorImpl& self) {
            if (a->needs_grad()) {
                a->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * b->data[i];
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i] * a->data[i];
            }
        },
        "mul");
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * c;
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a},
        [a, c](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * c;
        },
        "scale");
}

Tensor pow_elem(const Tensor& a, double p) {
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = std::pow(a->data[i], p);
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a},
        [a, p](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                a->grad[i] += self.grad[i] * p * std::pow(a->data[i], p - 1.0);
        },
        "pow_elem");
}

Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s) {
    if (!s->is_scalar()) shape_error("mul_scalar_tensor", s, "expected a scalar");
    double sv = s->data[0];
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * sv;
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a, s},
        [a, s, sv](TensorImpl& self) {
            if (a->needs_grad()) {
                a->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * sv;
            }
            if (s->needs_grad()) {
                s->ensure_grad();
                double acc = 0.0;
                for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * a->data[i];
                s->grad[0] += acc;
            }
        },
        "mul_scalar_tensor");
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    require_2d("add_rowvec", a);
    if (v->rank() != 1 || v->shape[0] != a->shape[1]) shape_error("add_rowvec", a, v);
    int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> d(a->data.size());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) d[i * n + j] = a->data[i * n + j] + v->data[j];
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a, v},
        [a, v, m, n](TensorImpl& self) {
            if (a->needs_grad()) {
                a->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
            }
            if (v->needs_grad()) {
                v->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) v->grad[j] += self.grad[i * n + j];
            }
        },
        "add_rowvec");
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
    require_2d("mul_rowvec", a);
    if (v->rank() != 1 || v->shape[0] != a->shape[1]) shape_error("mul_rowvec", a, v);
    int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> d(a->data.size());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) d[i * n + j] = a->data[i * n + j] * v->data[j];
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a, v},
        [a, v, m, n](TensorImpl& self) {
            if (a->needs_grad()) {
                a->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) a->grad[i * n + j] += self.grad[i * n + j] * v->data[j];
            }
            if (v->needs_grad()) {
                v->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) v->grad[j] += self.grad[i * n + j] * a->data[i * n + j];
            }
        },
        "mul_rowvec");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d("matmul", a);
    require_2d("matmul", b);
    if (a->shape[1] != b->shape[0]) shape_error("matmul", a, b);
    int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<double> d(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            double av = a->data[i * k + p];
            if (av == 0.0) continue;
            for (int64_t j = 0; j < n; ++j) d[i * n + j] += av * b->data[p * n + j];
        }
    Tensor out = make_tensor({m, n}, std::move(d));
    return finish(
        out, {a, b},
        [a, b, m, k, n](TensorImpl& self) {
            if (a->needs_grad()) {
                a->ensure_grad();
                // dA = g . B^T
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (int64_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * b->data[p * n + j];
                        a->grad[i * k + p] += acc;
                    }
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                // dB = A^T . g
                for (int64_t p = 0; p < k; ++p)
                    for (int64_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < m; ++i) acc += a->data[i * k + p] * self.grad[i * n + j];
                        b->grad[p * n + j] += acc;
                    }
            }
        },
        "matmul");
}

Tensor transpose(const Tensor& a) {
    require_2d("transpose", a);
    int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> d(a->data.size());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) d[j * m + i] = a->data[i * n + j];
    Tensor out = make_tensor({n, m}, std::move(d));
    return finish(
        out, {a},
        [a, m, n](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) a->grad[i * n + j] += self.grad[j * m + i];
        },
        "transpose");
}

Tensor relu(const Tensor& a) {
    std::vector<double> d(a->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a},
        [a](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (a->data[i] > 0.0) a->grad[i] += self.grad[i];
        },
        "relu");
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a->data) acc += x;
    Tensor out = scalar(acc);
    return finish(
        out, {a},
        [a](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += self.grad[0];
        },
        "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a->numel())); }

Tensor softmax_rows(const Tensor& a) {
    require_2d("softmax_rows", a);
    int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> d(a->data.size());
    for (int64_t i = 0; i < m; ++i) {
        double mx = a->data[i * n];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, a->data[i * n + j]);
        double z = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            d[i * n + j] = std::exp(a->data[i * n + j] - mx);
            z += d[i * n + j];
        }
        for (int64_t j = 0; j < n; ++j) d[i * n + j] /= z;
    }
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a},
        [a, m, n](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.data[i * n + j];
                for (int64_t j = 0; j < n; ++j)
                    a->grad[i * n + j] += self.data[i * n + j] * (self.grad[i * n + j] - dot);
            }
        },
        "softmax_rows");
}

Tensor log_softmax_rows(const Tensor& a) {
    require_2d("log_softmax_rows", a);
    int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> d(a->data.size());
    for (int64_t i = 0; i < m; ++i) {
        double mx = a->data[i * n];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, a->data[i * n + j]);
        double z = 0.0;
        for (int64_t j = 0; j < n; ++j) z += std::exp(a->data[i * n + j] - mx);
        double lz = std::log(z) + mx;
        for (int64_t j = 0; j < n; ++j) d[i * n + j] = a->data[i * n + j] - lz;
    }
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a},
        [a, m, n](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                double gsum = 0.0;
                for (int64_t j = 0; j < n; ++j) gsum += self.grad[i * n + j];
                for (int64_t j = 0; j < n; ++j)
                    a->grad[i * n + j] += self.grad[i * n + j] - std::exp(self.data[i * n + j]) * gsum;
            }
        },
        "log_softmax_rows");
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
    require_2d("layer_norm_rows", a);
    int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> d(a->data.size());
    std::vector<double> inv_std(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < n; ++j) mu += a->data[i * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            double c = a->data[i * n + j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(n);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = is;
        for (int64_t j = 0; j < n; ++j) d[i * n + j] = (a->data[i * n + j] - mu) * is;
    }
    Tensor out = make_tensor(a->shape, std::move(d));
    return finish(
        out, {a},
        [a, m, n, inv_std](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                double gmean = 0.0, gy = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    gmean += self.grad[i * n + j];
                    gy += self.grad[i * n + j] * self.data[i * n + j];
                }
                gmean /= static_cast<double>(n);
                gy /= static_cast<double>(n);
                double is = inv_std[static_cast<size_t>(i)];
                for (int64_t j = 0; j < n; ++j)
                    a->grad[i * n + j] += is * (self.grad[i * n + j] - gmean - self.data[i * n + j] * gy);
            }
        },
        "layer_norm_rows");
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids) {
    require_2d("gather_rows", table);
    int64_t rows = table->shape[0], n = table->shape[1];
    for (int64_t id : ids)
        if (id < 0 || id >= rows)
            throw std::invalid_argument("gather_rows: index " + std::to_string(id) + " out of range [0, " +
                                        std::to_string(rows) + ")");
    std::vector<double> d(ids.size() * static_cast<size_t>(n));
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table->data.begin() + ids[i] * n, n, d.begin() + static_cast<int64_t>(i) * n);
    Tensor out = make_tensor({static_cast<int64_t>(ids.size()), n}, std::move(d));
    return finish(
        out, {table},
        [table, ids, n](TensorImpl& self) {
            if (!table->needs_grad()) return;
            table->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                for (int64_t j = 0; j < n; ++j)
                    table->grad[ids[i] * n + j] += self.grad[static_cast<int64_t>(i) * n + j];
        },
        "gather_rows");
}

Tensor scatter_rows(const Tensor& base, const Tensor& rows, const std::vector<int64_t>& ids) {
    require_2d("scatter_rows", base);
    require_2d("scatter_rows", rows);
    if (rows->shape[0] != static_cast<int64_t>(ids.size()) || rows->shape[1] != base->shape[1])
        shape_error("scatter_rows", base, rows);
    int64_t m = base->shape[0], n = base->shape[1];
    std::vector<char> seen(static_cast<size_t>(m), 0);
    for (int64_t id : ids) {
        if (id < 0 || id >= m)
            throw std::invalid_argument("scatter_rows: index " + std::to_string(id) + " out of range [0, " +
                                        std::to_string(m) + ")");
        if (seen[static_cast<size_t>(id)]++)
            throw std::invalid_argument("scatter_rows: duplicate index " + std::to_string(id));
    }
    std::vector<double> d = base->data;
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(rows->data.begin() + static_cast<int64_t>(i) * n, n, d.begin() + ids[i] * n);
    Tensor out = make_tensor(base->shape, std::move(d));
    return finish(
        out, {base, rows},
        [base, rows, ids, n](TensorImpl& self) {
            if (base->needs_grad()) {
                base->ensure_grad();
                std::vector<char> replaced(static_cast<size_t>(base->shape[0]), 0);
                for (int64_t id : ids) replaced[static_cast<size_t>(id)] = 1;
                for (int64_t i = 0; i < base->shape[0]; ++i) {
                    if (replaced[static_cast<size_t>(i)]) continue;
                    for (int64_t j = 0; j < n; ++j) base->grad[i * n + j] += self.grad[i * n + j];
                }
            }
            if (rows->needs_grad()) {
                rows->ensure_grad();
                for (size_t i = 0; i < ids.size(); ++i)
                    for (int64_t j = 0; j < n; ++j)
                        rows->grad[static_cast<int64_t>(i) * n + j] += self.grad[ids[i] * n + j];
            }
        },
        "scatter_rows");
}

Tensor slice_cols(const Tensor& a, int64_t start, int64_t len) {
    require_2d("slice_cols", a);
    if (start < 0 || len <= 0 || start + len > a->shape[1])
        throw std::invalid_argument("slice_cols: window [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") out of range for shape " + shape_str(a->shape));
    int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> d(static_cast<size_t>(m * len));
    for (int64_t i = 0; i < m; ++i)
        std::copy_n(a->data.begin() + i * n + start, len, d.begin() + i * len);
    Tensor out = make_tensor({m, len}, std::move(d));
    return finish(
        out, {a},
        [a, start, len, m, n](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < len; ++j) a->grad[i * n + start + j] += self.grad[i * len + j];
        },
        "slice_cols");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    int64_t n = -1, total = 0;
    for (const auto& p : parts) {
        require_2d("concat_rows", p);
        if (n < 0) n = p->shape[1];
        if (p->shape[1] != n) shape_error("concat_rows", parts[0], p);
        total += p->shape[0];
    }
    std::vector<double> d;
    d.reserve(static_cast<size_t>(total * n));
    for (const auto& p : parts) d.insert(d.end(), p->data.begin(), p->data.end());
    Tensor out = make_tensor({total, n}, std::move(d));
    return finish(
        out, parts,
        [parts, n](TensorImpl& self) {
            int64_t row = 0;
            for (const auto& p : parts) {
                if (p->needs_grad()) {
                    p->ensure_grad();
                    for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += self.grad[row * n + static_cast<int64_t>(i)];
                }
                row += p->shape[0];
            }
        },
        "concat_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    int64_t m = -1, total = 0;
    for (const auto& p : parts) {
        require_2d("concat_cols", p);
        if (m < 0) m = p->shape[0];
        if (p->shape[0] != m) shape_error("concat_cols", parts[0], p);
        total += p->shape[1];
    }
    std::vector<double> d(static_cast<size_t>(m * total));
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t w = p->shape[1];
        for (int64_t i = 0; i < m; ++i)
            std::copy_n(p->data.begin() + i * w, w, d.begin() + i * total + off);
        off += w;
    }
    Tensor out = make_tensor({m, total}, std::move(d));
    return finish(
        out, parts,
        [parts, m, total](TensorImpl& self) {
            int64_t off2 = 0;
            for (const auto& p : parts) {
                int64_t w = p->shape[1];
                if (p->needs_grad()) {
                    p->ensure_grad();
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < w; ++j) p->grad[i * w + j] += self.grad[i * total + off2 + j];
                }
                off2 += w;
            }
        },
        "concat_cols");
}

Tensor pick(const Tensor& a, const std::vector<int64_t>& r, const std::vector<int64_t>& c) {
    require_2d("pick", a);
    if (r.size() != c.size()) throw std::invalid_argument("pick: row/col index lists differ in length");
    int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> d(r.size());
    for (size_t i = 0; i < r.size(); ++i) {
        if (r[i] < 0 || r[i] >= m || c[i] < 0 || c[i] >= n)
            throw std::invalid_argument("pick: index (" + std::to_string(r[i]) + ", " + std::to_string(c[i]) +
                                        ") out of range for shape " + shape_str(a->shape));
        d[i] = a->data[r[i] * n + c[i]];
    }
    Tensor out = make_tensor({static_cast<int64_t>(r.size())}, std::move(d));
    return finish(
        out, {a},
        [a, r, c, n](TensorImpl& self) {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < r.size(); ++i) a->grad[r[i] * n + c[i]] += self.grad[i];
        },
        "pick");
}

}  // namespace craft
