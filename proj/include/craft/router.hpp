#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "craft/backbone.hpp"
#include "craft/groups.hpp"
#include "craft/tasks.hpp"

namespace craft {

struct RouterParams {
    double delta = 0.7;         // join threshold on the routing distance
    double eps = 0.01;          // denominator floor
    int64_t warmup_steps = 100; // S_wu
    uint64_t warmup_seed = 7;   // shared init seed for every task's warm-up
    double warmup_lr = 2e-2;
    double warmup_lr_ratio = 0.05;  // linear-ramp fraction of the warm-up budget
    int64_t batch_size = 4;
    int64_t top_k = 32;
    double smoothing = 1e-6;
    int64_t probe_size = 16;
};

// Deterministic sample of task examples the routing distributions are
// evaluated on.
struct ProbeBatch {
    std::vector<Example> examples;
    uint64_t batch_seed = 0;
    uint64_t fingerprint = 0;  // guards signature alignment
};

ProbeBatch make_probe_batch(const TaskInstance& task, const RouterParams& params);

// Smoothed top-k categorical distribution at one label position: explicit
// support probabilities plus a uniform per-token remainder off support.
struct PositionDist {
    std::vector<std::pair<int64_t, double>> support;  // (token, prob), ascending token
    double off_mass = 0.0;                            // per off-support token
    int64_t vocab = 0;
};

struct DistributionSignature {
    uint64_t probe_fingerprint = 0;
    std::vector<PositionDist> positions;
};

// Truncate a full categorical distribution to its top-k support (ties toward
// lower token ids), spread the remainder uniformly off support, then mix in
// `smoothing` of the uniform distribution so every token stays positive.
PositionDist smooth_top_k(const std::vector<double>& probs, int64_t k, double smoothing);

// Output distribution of the (optionally intervened) backbone on the probe's
// label positions; iv == nullptr is the no-adaptation baseline.
DistributionSignature signature(const Intervention* iv, const ProbeBatch& probe, const FrozenBackbone& backbone,
                                const RouterParams& params);

// Mean over label positions of KL(p||q) + KL(q||p) on the union support.
double sym_kl(const DistributionSignature& p, const DistributionSignature& q);

// d = D_KG / max(min(D_K, D_G), eps)
double routing_distance(double d_kg, double d_k, double d_g, double eps);

// Fresh module from the shared seed, trained for warmup_steps plain
// task-loss steps. The backbone stays untouched.
Intervention warmup(const TaskInstance& task, const FrozenBackbone& backbone, const RouterParams& params,
                    const InterventionSpec& ivspec);

struct GroupDistances {
    int64_t gid = -1;
    double d_k = 0.0;   // baseline -> warm-up, on the task's probe
    double d_g = 0.0;   // baseline -> group state, on the task's probe
    double d_kg = 0.0;  // warm-up -> group state
    double distance = 0.0;
};

struct RoutingDecision {
    int64_t task_id = -1;
    std::string task_name;
    bool joined = false;  // JOIN an existing group vs NEW group
    int64_t group_id = -1;
    std::optional<GroupDistances> best;
    std::optional<GroupDistances> runner_up;
    bool floor_triggered = false;
    std::vector<GroupDistances> candidates;
};

// Pure decision rule over precomputed distances: join the closest group iff
// its distance is within delta and the floor did not fire for it.
RoutingDecision decide_from_distances(int64_t task_id, const std::string& task_name,
                                      const std::vector<GroupDistances>& candidates, double delta, double eps);

// Full routing step: warm up, compare against every group on the task's own
// probe, then either join the best group or append a new group seeded with
// the warmed-up module.
RoutingDecision route(const TaskInstance& task, std::vector<GroupState>& groups, const FrozenBackbone& backbone,
                      const RouterParams& params, const InterventionSpec& ivspec);

// Decision log with the per-task JOIN/NEW, distances and floor flags.
std::string routing_log_csv(const std::vector<RoutingDecision>& decisions);

}  // namespace craft
