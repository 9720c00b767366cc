#pragma once

#include <cstdint>
#include <vector>

#include "craft/loreft.hpp"

namespace craft {

// Structure of the intervention modules a run works with; fresh modules for
// warm-up and new groups are stamped out of this.
struct InterventionSpec {
    int64_t rank = 8;
    StreamSpec stream{15};
    std::vector<int64_t> layers;  // empty = every backbone layer
};

Intervention make_intervention(const InterventionSpec& spec, int64_t hidden_dim, int64_t num_layers,
                               uint64_t init_seed);

// A similar-task group: the shared intervention state and its member tasks.
struct GroupState {
    int64_t gid = 0;
    Intervention intervention;
    std::vector<int64_t> members;

    GroupState(int64_t id, Intervention iv) : gid(id), intervention(std::move(iv)) {}
    GroupState(GroupState&&) = default;
    GroupState& operator=(GroupState&&) = default;
    GroupState(const GroupState&) = delete;
    GroupState& operator=(const GroupState&) = delete;
};

}  // namespace craft
