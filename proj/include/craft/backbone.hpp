#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "craft/ops.hpp"
#include "craft/tensor.hpp"

namespace craft {

struct BackboneConfig {
    int64_t num_layers = 2;
    int64_t hidden_dim = 32;
    int64_t num_heads = 4;
    int64_t vocab_size = 64;
    int64_t max_seq_len = 64;
    uint64_t init_seed = 1;

    void validate() const;
    bool operator==(const BackboneConfig&) const = default;
};

// One edit site: the rows of the layer-l residual output at `positions` are
// gathered, passed through `edit`, and written back before layer l+1 runs.
struct Hook {
    int64_t layer = 0;
    std::vector<int64_t> positions;
    std::function<Tensor(const Tensor&)> edit;
};

class HookSet {
public:
    // rejects a (layer, position) pair that is already present
    void add(Hook h);
    const std::vector<Hook>& entries() const { return hooks_; }
    bool empty() const { return hooks_.empty(); }

private:
    std::vector<Hook> hooks_;
};

struct ForwardResult {
    Tensor logits;               // seq x vocab
    std::vector<Tensor> hidden;  // residual output per block, post-edit
};

// Decoder-only pre-norm transformer with frozen, seed-derived weights. The
// residual output of each block is the hookable state.
class FrozenBackbone {
public:
    explicit FrozenBackbone(const BackboneConfig& config);

    const BackboneConfig& config() const { return config_; }

    ForwardResult forward(const std::vector<int64_t>& tokens, const HookSet& hooks = HookSet()) const;

    uint64_t checksum() const;

    void save(const std::string& path) const;
    static FrozenBackbone load(const std::string& path);

    const std::vector<Tensor>& weights() const { return all_weights_; }

private:
    FrozenBackbone() = default;

    struct Block {
        Tensor ln1_g, ln1_b;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_g, ln2_b;
        Tensor w_up, b_up, w_down, b_down;
    };

    void collect_weights();

    BackboneConfig config_;
    Tensor tok_emb_, pos_emb_;
    std::vector<Block> blocks_;
    Tensor ln_f_g_, ln_f_b_;
    Tensor unembed_;
    std::vector<Tensor> all_weights_;
};

}  // namespace craft
