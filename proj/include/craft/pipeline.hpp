#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "craft/config.hpp"
#include "craft/metrics.hpp"
#include "craft/router.hpp"
#include "craft/trainer.hpp"

namespace craft {

struct EvictionEvent {
    int64_t task_id = 0;
    std::string task_name;
    int64_t from_gid = 0;
    int64_t to_gid = 0;
    double mu1 = 0.0;
};

struct RunReport {
    std::vector<RoutingDecision> decisions;
    std::vector<TrainTrace> traces;          // final trace per task, stream order
    std::vector<EvictionEvent> evictions;
    EvalMatrix matrix;
    double op = 0.0;
    double bwt = 0.0;
    std::map<int64_t, int64_t> task_to_group;             // inference table
    std::vector<std::vector<int64_t>> group_members;      // by gid
    double max_orth_residual = 0.0;
    uint64_t report_hash = 0;  // canonical hash over the persisted artifacts
};

// The full pipeline: per task in stream order, warm-up + routing, anchored
// training with eviction and early stopping, merge, then evaluation of every
// seen task. Pure function of the config; persists artifacts when
// cfg.output_dir is set.
RunReport run_stream(const RunConfig& cfg);

// Routing-only dry run: warm-up and routing decisions, no phase-2 training.
std::vector<RoutingDecision> route_stream_only(const RunConfig& cfg);

struct SweepRow {
    double value = 0.0;
    int64_t groups = 0;  // K
    double op = 0.0;
    double bwt = 0.0;
};

// One full run per value along axis ("delta" | "warmup_steps" | "beta"),
// seeds shared.
std::vector<SweepRow> sweep(const RunConfig& cfg, const std::string& axis, const std::vector<double>& values);
std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows);

// Forced-placement ablations; returns (OP, BWT).
std::pair<double, double> ablate(const RunConfig& cfg, const std::string& mode);

// Renders the summary block for a completed run directory.
std::string render_report(const std::string& run_dir);

// Canonical hash of a run directory's artifacts (relative paths + bytes).
uint64_t report_dir_hash(const std::string& run_dir);

// Post-run audits: cross-group invariance and inference parity against the
// persisted group states. Returns a list of human-readable failures.
std::vector<std::string> audit_run_dir(const std::string& run_dir);

// A 2-task stream of deliberately far families, for probing where spurious
// merging starts as delta grows.
RunConfig adversarial_pair_config(const RunConfig& base);

// Bundled 15-task evaluation-matrix example used by the `fixtures`
// subcommand and the metric tests.
EvalMatrix fixture_eval_matrix();

}  // namespace craft
