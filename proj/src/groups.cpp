#include "craft/groups.hpp"

#include <numeric>

namespace craft {

Intervention make_intervention(const InterventionSpec& spec, int64_t hidden_dim, int64_t num_layers,
                               uint64_t init_seed) {
    std::vector<int64_t> layers = spec.layers;
    if (layers.empty()) {
        layers.resize(static_cast<size_t>(num_layers));
        std::iota(layers.begin(), layers.end(), 0);
    }
    return Intervention(spec.rank, hidden_dim, layers, spec.stream, init_seed);
}

}  // namespace craft
