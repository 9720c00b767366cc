#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "craft/backbone.hpp"
#include "craft/groups.hpp"
#include "craft/tasks.hpp"

namespace craft {

// Lower-triangular score matrix: scores[j][t] is the percent score on task t
// after training through task j (t <= j).
struct EvalMatrix {
    std::vector<std::vector<double>> scores;
    std::vector<int64_t> task_order;            // task ids in stream order
    std::vector<std::string> task_names;
    std::map<int64_t, int64_t> cluster_of;      // task id -> group id

    int64_t tasks() const { return static_cast<int64_t>(task_order.size()); }
    void validate_complete() const;
};

// Greedy decode of label-length continuations, scored by exact match.
std::vector<int64_t> greedy_decode(const FrozenBackbone& backbone, const Intervention* iv,
                                   const std::vector<int64_t>& prompt, int64_t n_tokens);

double exact_match_score(const TaskInstance& task, const Intervention& iv, const FrozenBackbone& backbone);

// Scores every task up to and including index j under its group's
// intervention; returns row j.
std::vector<double> evaluate_stream_step(int64_t j, const std::vector<TaskInstance>& tasks,
                                         const std::vector<GroupState>& groups,
                                         const std::map<int64_t, int64_t>& cluster_of,
                                         const FrozenBackbone& backbone);

// Mean of the last row.
double op_metric(const EvalMatrix& m);
// Mean over tasks of (score when learned - final score); positive means
// forgetting.
double bwt_metric(const EvalMatrix& m);

struct InvarianceViolation {
    int64_t row = 0;  // j
    int64_t col = 0;  // t
    double previous = 0.0;
    double current = 0.0;
};

// Cross-cluster cells must repeat bit-exactly between consecutive rows.
std::vector<InvarianceViolation> invariance_audit(const EvalMatrix& m);

std::string eval_matrix_csv(const EvalMatrix& m);
EvalMatrix eval_matrix_from_csv(const std::string& text);

}  // namespace craft
