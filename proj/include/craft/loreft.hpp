#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "craft/backbone.hpp"
#include "craft/tensor.hpp"

namespace craft {

// Interventions cover the first t_pos and last t_pos prompt positions
// (f-stream and l-stream).
struct StreamSpec {
    int64_t t_pos = 15;
    bool operator==(const StreamSpec&) const = default;
};

// Union of the two streams, clipped to the prompt, deduplicated, ascending.
std::vector<int64_t> select_positions(int64_t prompt_len, const StreamSpec& spec);

// Differentiable row orthonormalization (modified Gram-Schmidt composed from
// tape ops, so gradients flow back into the unconstrained matrix).
Tensor orthonormalize(const Tensor& r_raw);

// Low-rank residual-stream edit: h + R^T (W h + b - R h), with R the
// orthonormalized projection of r_raw. h_rows holds one position per row.
Tensor apply_edit(const Tensor& h_rows, const Tensor& r_raw, const Tensor& w, const Tensor& b);

// One trainable triple per intervened layer, shared across the positions of
// that layer.
struct LayerEdit {
    Tensor r_raw;  // rank x d, unconstrained
    Tensor w;      // rank x d
    Tensor b;      // rank
};

class InterventionSnapshot;

class Intervention {
public:
    // Fresh interventions are exact identities: w is initialized to the
    // orthonormalized projection and b to zero.
    Intervention(int64_t rank, int64_t hidden_dim, std::vector<int64_t> layers, StreamSpec spec,
                 uint64_t init_seed);

    // Parameter tensors are shared handles; copying would alias the live
    // state. Deep copies go through snapshot() or transfer_into().
    Intervention(Intervention&&) = default;
    Intervention& operator=(Intervention&&) = default;
    Intervention(const Intervention&) = delete;
    Intervention& operator=(const Intervention&) = delete;

    int64_t rank() const { return rank_; }
    int64_t hidden_dim() const { return hidden_dim_; }
    const std::vector<int64_t>& layers() const { return layers_; }
    const StreamSpec& stream_spec() const { return spec_; }

    Tensor apply(const Tensor& h_rows, int64_t layer) const;
    // single-vector convenience
    std::vector<double> apply(const std::vector<double>& h, int64_t layer) const;

    HookSet hooks(int64_t prompt_len) const;

    const LayerEdit& layer_params(int64_t layer) const;
    std::vector<Tensor> parameters() const;

    uint64_t checksum() const;

    void save(const std::string& path) const;
    static Intervention load(const std::string& path);

private:
    friend class InterventionSnapshot;
    friend void transfer_into(const Intervention&, Intervention&);
    friend void transfer_into(const InterventionSnapshot&, Intervention&);

    int64_t rank_ = 0;
    int64_t hidden_dim_ = 0;
    std::vector<int64_t> layers_;
    StreamSpec spec_;
    std::vector<LayerEdit> edits_;  // aligned with layers_
};

// Frozen deep copy of an intervention's parameters; safe to share and to
// evaluate concurrently with the live model.
class InterventionSnapshot {
public:
    explicit InterventionSnapshot(const Intervention& iv);

    Tensor apply(const Tensor& h_rows, int64_t layer) const;
    HookSet hooks(int64_t prompt_len) const;

    const LayerEdit& layer_params(int64_t layer) const;
    std::vector<Tensor> parameters() const;
    const std::vector<int64_t>& layers() const { return layers_; }
    const StreamSpec& stream_spec() const { return spec_; }
    int64_t rank() const { return rank_; }
    int64_t hidden_dim() const { return hidden_dim_; }

    InterventionSnapshot snapshot() const { return *this; }

    uint64_t checksum() const;

private:
    friend void transfer_into(const InterventionSnapshot&, Intervention&);

    int64_t rank_ = 0;
    int64_t hidden_dim_ = 0;
    std::vector<int64_t> layers_;
    StreamSpec spec_;
    std::vector<LayerEdit> edits_;
};

inline InterventionSnapshot snapshot(const Intervention& iv) { return InterventionSnapshot(iv); }

// Overwrites dst's unconstrained parameters with src's values; the projection
// is re-established on dst's next forward. src is untouched.
void transfer_into(const Intervention& src, Intervention& dst);
void transfer_into(const InterventionSnapshot& src, Intervention& dst);

}  // namespace craft
