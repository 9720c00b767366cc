#include "craft/backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace craft {

void BackboneConfig::validate() const {
    if (num_layers <= 0 || hidden_dim <= 0 || num_heads <= 0 || vocab_size <= 0 || max_seq_len <= 0)
        throw std::invalid_argument("backbone config: all dimensions must be positive");
    if (hidden_dim % num_heads != 0)
        throw std::invalid_argument("backbone config: hidden_dim " + std::to_string(hidden_dim) +
                                    " not divisible by num_heads " + std::to_string(num_heads));
}

void HookSet::add(Hook h) {
    for (const auto& e : hooks_) {
        if (e.layer != h.layer) continue;
        for (int64_t p : e.positions)
            for (int64_t q : h.positions)
                if (p == q)
                    throw std::invalid_argument("hookset: duplicate hook at layer " + std::to_string(h.layer) +
                                                " position " + std::to_string(p));
    }
    hooks_.push_back(std::move(h));
}

FrozenBackbone::FrozenBackbone(const BackboneConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.init_seed);
    int64_t d = config_.hidden_dim;
    int64_t v = config_.vocab_size;
    double ws = 1.0 / std::sqrt(static_cast<double>(d));

    tok_emb_ = randn({v, d}, rng);
    pos_emb_ = randn({config_.max_seq_len, d}, rng);
    for (int64_t l = 0; l < config_.num_layers; ++l) {
        Block b;
        b.ln1_g = full({d}, 1.0);
        b.ln1_b = zeros({d});
        b.wq = randn({d, d}, rng, ws);
        b.bq = zeros({d});
        b.wk = randn({d, d}, rng, ws);
        b.bk = zeros({d});
        b.wv = randn({d, d}, rng, ws);
        b.bv = zeros({d});
        b.wo = randn({d, d}, rng, ws);
        b.bo = zeros({d});
        b.ln2_g = full({d}, 1.0);
        b.ln2_b = zeros({d});
        b.w_up = randn({d, 4 * d}, rng, ws);
        b.b_up = zeros({4 * d});
        b.w_down = randn({4 * d, d}, rng, 1.0 / std::sqrt(static_cast<double>(4 * d)));
        b.b_down = zeros({d});
        blocks_.push_back(std::move(b));
    }
    ln_f_g_ = full({d}, 1.0);
    ln_f_b_ = zeros({d});
    unembed_ = randn({d, v}, rng, ws);
    collect_weights();
}

void FrozenBackbone::collect_weights() {
    all_weights_.clear();
    all_weights_.push_back(tok_emb_);
    all_weights_.push_back(pos_emb_);
    for (auto& b : blocks_) {
        for (const Tensor& t : {b.ln1_g, b.ln1_b, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo,
                                b.ln2_g, b.ln2_b, b.w_up, b.b_up, b.w_down, b.b_down})
            all_weights_.push_back(t);
    }
    all_weights_.push_back(ln_f_g_);
    all_weights_.push_back(ln_f_b_);
    all_weights_.push_back(unembed_);
    for (auto& w : all_weights_) w->requires_grad = false;
}

namespace {

Tensor affine_ln(const Tensor& x, const Tensor& g, const Tensor& b) {
    return add_rowvec(mul_rowvec(layer_norm_rows(x), g), b);
}

Tensor causal_mask(int64_t s) {
    // exp(-1e30 - rowmax) underflows to exactly 0, so masked positions
    // contribute nothing, bit for bit
    std::vector<double> m(static_cast<size_t>(s * s), 0.0);
    for (int64_t i = 0; i < s; ++i)
        for (int64_t j = i + 1; j < s; ++j) m[i * s + j] = -1e30;
    return make_tensor({s, s}, std::move(m));
}

}  // namespace

ForwardResult FrozenBackbone::forward(const std::vector<int64_t>& tokens, const HookSet& hooks) const {
    int64_t s = static_cast<int64_t>(tokens.size());
    if (s == 0) throw std::invalid_argument("backbone forward: empty token sequence");
    if (s > config_.max_seq_len)
        throw std::invalid_argument("backbone forward: sequence length " + std::to_string(s) +
                                    " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    for (int64_t t : tokens)
        if (t < 0 || t >= config_.vocab_size)
            throw std::invalid_argument("backbone forward: token id " + std::to_string(t) + " out of range [0, " +
                                        std::to_string(config_.vocab_size) + ")");
    for (const auto& e : hooks.entries()) {
        if (e.layer < 0 || e.layer >= config_.num_layers)
            throw std::invalid_argument("backbone forward: hook layer " + std::to_string(e.layer) +
                                        " out of range [0, " + std::to_string(config_.num_layers) + ")");
        for (int64_t p : e.positions)
            if (p < 0 || p >= s)
                throw std::invalid_argument("backbone forward: hook position " + std::to_string(p) +
                                            " out of range for sequence length " + std::to_string(s));
    }

    std::vector<int64_t> pos_ids(static_cast<size_t>(s));
    std::iota(pos_ids.begin(), pos_ids.end(), 0);
    Tensor h = add(gather_rows(tok_emb_, tokens), gather_rows(pos_emb_, pos_ids));
    Tensor mask = causal_mask(s);
    int64_t head_dim = config_.hidden_dim / config_.num_heads;
    double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(head_dim));

    ForwardResult result;
    for (int64_t l = 0; l < config_.num_layers; ++l) {
        const Block& blk = blocks_[static_cast<size_t>(l)];

        Tensor a = affine_ln(h, blk.ln1_g, blk.ln1_b);
        Tensor q = add_rowvec(matmul(a, blk.wq), blk.bq);
        Tensor k = add_rowvec(matmul(a, blk.wk), blk.bk);
        Tensor vv = add_rowvec(matmul(a, blk.wv), blk.bv);
        std::vector<Tensor> heads;
        heads.reserve(static_cast<size_t>(config_.num_heads));
        for (int64_t i = 0; i < config_.num_heads; ++i) {
            Tensor qh = slice_cols(q, i * head_dim, head_dim);
            Tensor kh = slice_cols(k, i * head_dim, head_dim);
            Tensor vh = slice_cols(vv, i * head_dim, head_dim);
            Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_hd), mask);
            heads.push_back(matmul(softmax_rows(scores), vh));
        }
        Tensor attn = add_rowvec(matmul(concat_cols(heads), blk.wo), blk.bo);
        h = add(h, attn);

        Tensor m = affine_ln(h, blk.ln2_g, blk.ln2_b);
        Tensor u = relu(add_rowvec(matmul(m, blk.w_up), blk.b_up));
        h = add(h, add_rowvec(matmul(u, blk.w_down), blk.b_down));

        for (const auto& e : hooks.entries()) {
            if (e.layer != l) continue;
            Tensor picked = gather_rows(h, e.positions);
            Tensor edited = e.edit(picked);
            if (edited->shape != picked->shape)
                throw std::invalid_argument("backbone forward: hook edit changed shape at layer " +
                                            std::to_string(l));
            h = scatter_rows(h, edited, e.positions);
        }
        result.hidden.push_back(h);
    }

    result.logits = matmul(affine_ln(h, ln_f_g_, ln_f_b_), unembed_);
    return result;
}

uint64_t FrozenBackbone::checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : all_weights_) h = fnv1a(w->data, h);
    return h;
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
        if (!is) throw std::runtime_error("backbone load: truncated weight data");
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
        std::memcpy(&x, &bits, sizeof(x));
    }
}

}  // namespace

void FrozenBackbone::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("backbone save: cannot open " + path);
    os << "craft backbone v1\n";
    os << "num_layers: " << config_.num_layers << "\n";
    os << "hidden_dim: " << config_.hidden_dim << "\n";
    os << "num_heads: " << config_.num_heads << "\n";
    os << "vocab_size: " << config_.vocab_size << "\n";
    os << "max_seq_len: " << config_.max_seq_len << "\n";
    os << "init_seed: " << config_.init_seed << "\n";
    os << "end\n";
    for (const auto& w : all_weights_) write_f64_le(os, w->data);
    if (!os) throw std::runtime_error("backbone save: write failed for " + path);
}

FrozenBackbone FrozenBackbone::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("backbone load: cannot open " + path);
    std::string line;
    std::getline(is, line);
    if (line != "craft backbone v1") throw std::runtime_error("backbone load: bad magic in " + path);
    std::map<std::string, std::string> kv;
    while (std::getline(is, line) && line != "end") {
        auto colon = line.find(": ");
        if (colon == std::string::npos) throw std::runtime_error("backbone load: malformed header line '" + line + "'");
        kv[line.substr(0, colon)] = line.substr(colon + 2);
    }
    BackboneConfig cfg;
    cfg.num_layers = std::stoll(kv.at("num_layers"));
    cfg.hidden_dim = std::stoll(kv.at("hidden_dim"));
    cfg.num_heads = std::stoll(kv.at("num_heads"));
    cfg.vocab_size = std::stoll(kv.at("vocab_size"));
    cfg.max_seq_len = std::stoll(kv.at("max_seq_len"));
    cfg.init_seed = std::stoull(kv.at("init_seed"));

    FrozenBackbone bb(cfg);  // reconstructs shapes, then overwrite values
    for (auto& w : bb.all_weights_) read_f64_le(is, w->data);
    return bb;
}

}  // namespace craft
