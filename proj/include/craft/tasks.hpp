#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "craft/rng.hpp"

namespace craft {

struct Example {
    std::vector<int64_t> prompt;
    std::vector<int64_t> label;
    bool operator==(const Example&) const = default;
};

enum class FamilyKind { ModularMap, Copy, Reverse, MarkerClass };

const char* family_kind_name(FamilyKind kind);
FamilyKind family_kind_from_name(const std::string& name);

struct FamilySpec {
    FamilyKind kind;
    int64_t count = 1;
};

struct TaskGenParams {
    int64_t train_n = 48;
    int64_t probe_n = 16;
    int64_t heldout_n = 32;
};

// Token ranges within the default 64-token vocabulary. Families answer in
// disjoint ranges so their output distributions live on separated supports.
struct VocabLayout {
    static constexpr int64_t content_base = 0, content_n = 16;
    static constexpr int64_t modular_base = 16, modular_n = 16;
    static constexpr int64_t marker_base = 32, marker_n = 8;
    static constexpr int64_t noise_base = 40, noise_n = 16;
    static constexpr int64_t family_tag_base = 56;  // one tag token per family kind
    static constexpr int64_t query_tok = 60;
    static constexpr int64_t min_vocab = 61;
};

struct TaskInstance {
    int64_t task_id = 0;
    int64_t family_id = 0;
    FamilyKind kind = FamilyKind::Copy;
    std::string name;
    std::vector<Example> train, probe, heldout;
    uint64_t data_seed = 0;
};

// Deterministic stream: tasks are emitted round-robin across the family
// specs, so each family's first instance precedes any second instance.
std::vector<TaskInstance> generate_stream(const std::vector<FamilySpec>& spec, uint64_t stream_seed,
                                          const TaskGenParams& params = TaskGenParams());

// Stream-order robustness helper: same tasks, shuffled order.
std::vector<TaskInstance> permute_stream(std::vector<TaskInstance> tasks, uint64_t order_seed);

// Two disjoint halves of the training set, presented as distinct tasks of the
// same family; probe and held-out splits are shared.
std::pair<TaskInstance, TaskInstance> split_halves(const TaskInstance& task);

// Line-delimited task format: one record per example, integer token arrays.
void save_tasks(const std::vector<TaskInstance>& tasks, const std::string& path);
std::vector<TaskInstance> load_tasks(const std::string& path);

}  // namespace craft
