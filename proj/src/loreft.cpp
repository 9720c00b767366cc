#include "craft/loreft.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "craft/ops.hpp"

namespace craft {

std::vector<int64_t> select_positions(int64_t prompt_len, const StreamSpec& spec) {
    if (prompt_len < 1) throw std::invalid_argument("select_positions: prompt_len must be >= 1");
    if (spec.t_pos < 1) throw std::invalid_argument("select_positions: t_pos must be >= 1");
    std::vector<int64_t> out;
    int64_t front_end = std::min(spec.t_pos, prompt_len);
    for (int64_t p = 0; p < front_end; ++p) out.push_back(p);
    int64_t back_start = std::max<int64_t>(prompt_len - spec.t_pos, front_end);
    for (int64_t p = back_start; p < prompt_len; ++p) out.push_back(p);
    return out;
}

Tensor orthonormalize(const Tensor& r_raw) {
    if (r_raw->rank() != 2)
        throw std::invalid_argument("orthonormalize: expected a 2-D matrix, got shape " + shape_str(r_raw->shape));
    int64_t r = r_raw->shape[0], d = r_raw->shape[1];
    if (r > d)
        throw std::invalid_argument("orthonormalize: rank " + std::to_string(r) + " exceeds dimension " +
                                    std::to_string(d));

    // modified Gram-Schmidt on rows, built from tape ops
    std::vector<Tensor> q;
    q.reserve(static_cast<size_t>(r));
    double min_n2 = 0.0, max_n2 = 0.0;
    for (int64_t i = 0; i < r; ++i) {
        Tensor v = gather_rows(r_raw, {i});
        for (int64_t j = 0; j < i; ++j) {
            Tensor proj = sum(mul(v, q[static_cast<size_t>(j)]));
            v = sub(v, mul_scalar_tensor(q[static_cast<size_t>(j)], proj));
        }
        Tensor n2 = sum(mul(v, v));
        double n2v = n2->data[0];
        if (i == 0) min_n2 = max_n2 = n2v;
        min_n2 = std::min(min_n2, n2v);
        max_n2 = std::max(max_n2, n2v);
        if (n2v < 1e-20) {
            std::ostringstream os;
            os << "orthonormalize: rank-deficient R_raw, residual norm " << std::sqrt(std::max(n2v, 0.0))
               << " at row " << i << " (condition estimate " << std::sqrt(max_n2 / std::max(n2v, 1e-300)) << ")";
            throw std::invalid_argument(os.str());
        }
        q.push_back(mul_scalar_tensor(v, pow_elem(n2, -0.5)));
    }
    return concat_rows(q);
}

Tensor apply_edit(const Tensor& h_rows, const Tensor& r_raw, const Tensor& w, const Tensor& b) {
    if (h_rows->rank() != 2 || h_rows->shape[1] != r_raw->shape[1])
        throw std::invalid_argument("apply_edit: hidden rows " + shape_str(h_rows->shape) +
                                    " do not match projection " + shape_str(r_raw->shape));
    Tensor rot = orthonormalize(r_raw);
    Tensor subspace = matmul(h_rows, transpose(rot));            // positions x rank
    Tensor target = add_rowvec(matmul(h_rows, transpose(w)), b); // positions x rank
    return add(h_rows, matmul(sub(target, subspace), rot));
}

Intervention::Intervention(int64_t rank, int64_t hidden_dim, std::vector<int64_t> layers, StreamSpec spec,
                           uint64_t init_seed)
    : rank_(rank), hidden_dim_(hidden_dim), layers_(std::move(layers)), spec_(spec) {
    if (rank_ <= 0 || rank_ > hidden_dim_)
        throw std::invalid_argument("intervention: rank " + std::to_string(rank_) + " must be in [1, " +
                                    std::to_string(hidden_dim_) + "]");
    if (layers_.empty()) throw std::invalid_argument("intervention: empty layer set");
    std::sort(layers_.begin(), layers_.end());
    if (std::adjacent_find(layers_.begin(), layers_.end()) != layers_.end())
        throw std::invalid_argument("intervention: duplicate layer index");

    Rng rng(init_seed);
    double s = 1.0 / std::sqrt(static_cast<double>(hidden_dim_));
    for (size_t i = 0; i < layers_.size(); ++i) {
        LayerEdit e;
        e.r_raw = randn({rank_, hidden_dim_}, rng, s, true);
        e.w = detach(orthonormalize(e.r_raw));
        e.w->requires_grad = true;
        e.b = zeros({rank_}, true);
        edits_.push_back(std::move(e));
    }
}

const LayerEdit& Intervention::layer_params(int64_t layer) const {
    auto it = std::lower_bound(layers_.begin(), layers_.end(), layer);
    if (it == layers_.end() || *it != layer)
        throw std::invalid_argument("intervention: no parameters for layer " + std::to_string(layer));
    return edits_[static_cast<size_t>(it - layers_.begin())];
}

Tensor Intervention::apply(const Tensor& h_rows, int64_t layer) const {
    const LayerEdit& e = layer_params(layer);
    return apply_edit(h_rows, e.r_raw, e.w, e.b);
}

std::vector<double> Intervention::apply(const std::vector<double>& h, int64_t layer) const {
    Tensor row = make_tensor({1, static_cast<int64_t>(h.size())}, h);
    return apply(row, layer)->data;
}

HookSet Intervention::hooks(int64_t prompt_len) const {
    HookSet hs;
    std::vector<int64_t> pos = select_positions(prompt_len, spec_);
    for (int64_t l : layers_)
        hs.add(Hook{l, pos, [this, l](const Tensor& rows) { return apply(rows, l); }});
    return hs;
}

std::vector<Tensor> Intervention::parameters() const {
    std::vector<Tensor> out;
    for (const auto& e : edits_) {
        out.push_back(e.r_raw);
        out.push_back(e.w);
        out.push_back(e.b);
    }
    return out;
}

uint64_t Intervention::checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : edits_) {
        h = fnv1a(e.r_raw->data, h);
        h = fnv1a(e.w->data, h);
        h = fnv1a(e.b->data, h);
    }
    return h;
}

InterventionSnapshot::InterventionSnapshot(const Intervention& iv)
    : rank_(iv.rank_), hidden_dim_(iv.hidden_dim_), layers_(iv.layers_), spec_(iv.spec_) {
    for (const auto& e : iv.edits_)
        edits_.push_back(LayerEdit{detach(e.r_raw), detach(e.w), detach(e.b)});
}

const LayerEdit& InterventionSnapshot::layer_params(int64_t layer) const {
    auto it = std::lower_bound(layers_.begin(), layers_.end(), layer);
    if (it == layers_.end() || *it != layer)
        throw std::invalid_argument("snapshot: no parameters for layer " + std::to_string(layer));
    return edits_[static_cast<size_t>(it - layers_.begin())];
}

Tensor InterventionSnapshot::apply(const Tensor& h_rows, int64_t layer) const {
    const LayerEdit& e = layer_params(layer);
    return apply_edit(h_rows, e.r_raw, e.w, e.b);
}

HookSet InterventionSnapshot::hooks(int64_t prompt_len) const {
    HookSet hs;
    std::vector<int64_t> pos = select_positions(prompt_len, spec_);
    for (int64_t l : layers_)
        hs.add(Hook{l, pos, [this, l](const Tensor& rows) { return apply(rows, l); }});
    return hs;
}

std::vector<Tensor> InterventionSnapshot::parameters() const {
    std::vector<Tensor> out;
    for (const auto& e : edits_) {
        out.push_back(e.r_raw);
        out.push_back(e.w);
        out.push_back(e.b);
    }
    return out;
}

uint64_t InterventionSnapshot::checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : edits_) {
        h = fnv1a(e.r_raw->data, h);
        h = fnv1a(e.w->data, h);
        h = fnv1a(e.b->data, h);
    }
    return h;
}

namespace {

void check_transfer_shapes(int64_t src_rank, int64_t src_dim, const std::vector<int64_t>& src_layers,
                           const Intervention& dst) {
    if (src_rank != dst.rank() || src_dim != dst.hidden_dim() || src_layers != dst.layers())
        throw std::invalid_argument("transfer_into: source and destination interventions do not match");
}

}  // namespace

void transfer_into(const Intervention& src, Intervention& dst) {
    check_transfer_shapes(src.rank_, src.hidden_dim_, src.layers_, dst);
    for (size_t i = 0; i < src.edits_.size(); ++i) {
        dst.edits_[i].r_raw->data = src.edits_[i].r_raw->data;
        dst.edits_[i].w->data = src.edits_[i].w->data;
        dst.edits_[i].b->data = src.edits_[i].b->data;
    }
}

void transfer_into(const InterventionSnapshot& src, Intervention& dst) {
    check_transfer_shapes(src.rank_, src.hidden_dim_, src.layers_, dst);
    for (size_t i = 0; i < src.edits_.size(); ++i) {
        dst.edits_[i].r_raw->data = src.edits_[i].r_raw->data;
        dst.edits_[i].w->data = src.edits_[i].w->data;
        dst.edits_[i].b->data = src.edits_[i].b->data;
    }
}

namespace {

void write_f64_le(std::ostream& os, const std::vector<double>& v) {
    for (double x : v) {
        uint64_t bits;
        std::memcpy(&bits, &x, sizeof(bits));
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

void read_f64_le(std::istream& is, std::vector<double>& v) {
    for (double& x : v) {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        if (!is) throw std::runtime_error("intervention load: truncated data");
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
        std::memcpy(&x, &bits, sizeof(x));
    }
}

}  // namespace

void Intervention::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("intervention save: cannot open " + path);
    os << "craft intervention v1\n";
    os << "rank: " << rank_ << "\n";
    os << "hidden_dim: " << hidden_dim_ << "\n";
    os << "t_pos: " << spec_.t_pos << "\n";
    os << "layers:";
    for (int64_t l : layers_) os << " " << l;
    os << "\n";
    os << "end\n";
    // the unconstrained r_raw is what persists; the projection is derived
    for (const auto& e : edits_) {
        write_f64_le(os, e.r_raw->data);
        write_f64_le(os, e.w->data);
        write_f64_le(os, e.b->data);
    }
    if (!os) throw std::runtime_error("intervention save: write failed for " + path);
}

Intervention Intervention::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("intervention load: cannot open " + path);
    std::string line;
    std::getline(is, line);
    if (line != "craft intervention v1") throw std::runtime_error("intervention load: bad magic in " + path);
    std::map<std::string, std::string> kv;
    while (std::getline(is, line) && line != "end") {
        auto colon = line.find(":");
        if (colon == std::string::npos)
            throw std::runtime_error("intervention load: malformed header line '" + line + "'");
        kv[line.substr(0, colon)] = line.substr(colon + 1);
    }
    int64_t rank = std::stoll(kv.at("rank"));
    int64_t dim = std::stoll(kv.at("hidden_dim"));
    StreamSpec spec{std::stoll(kv.at("t_pos"))};
    std::vector<int64_t> layers;
    {
        std::istringstream ls(kv.at("layers"));
        int64_t l;
        while (ls >> l) layers.push_back(l);
    }
    Intervention iv(rank, dim, layers, spec, 0);
    for (auto& e : iv.edits_) {
        read_f64_le(is, e.r_raw->data);
        read_f64_le(is, e.w->data);
        read_f64_le(is, e.b->data);
    }
    return iv;
}

}  // namespace craft
