#pragma once

#include <cstdint>
#include <vector>

#include "craft/backbone.hpp"
#include "craft/groups.hpp"
#include "craft/loreft.hpp"
#include "craft/tasks.hpp"

namespace craft {

struct TrainConfig {
    double beta = 0.3;           // KL anchor coefficient
    double eta = 1.0;            // eviction threshold on the epoch-1 mean KL
    int64_t epochs = 20;
    double lr = 2e-2;
    int64_t rolling_window = 20;
    int64_t batch_size = 4;
    double lr_warmup_ratio = 0.05;
    bool early_stopping = true;
    bool audit_orthonormality = true;
    uint64_t shuffle_seed = 1;
};

struct LossBreakdown {
    double task_term = 0.0;
    double kl_term = 0.0;
    double total = 0.0;
};

struct LossGraphs {
    Tensor loss;  // scalar node for backward
    LossBreakdown parts;
};

// Mean next-token cross-entropy over the label positions of the batch.
LossGraphs task_loss(const std::vector<const Example*>& batch, const Intervention& iv,
                     const FrozenBackbone& backbone);

// Task loss plus beta times the forward KL from the frozen anchor's output
// distribution to the live model's, token-wise on label positions over the
// full vocabulary. The anchor forward runs untracked, so gradients reach only
// the live parameters.
LossGraphs anchored_loss(const std::vector<const Example*>& batch, const Intervention& live,
                         const InterventionSnapshot& anchor, const FrozenBackbone& backbone, double beta);

struct TrainTrace {
    std::vector<double> kl_steps;        // per-step forward KL (nats)
    std::vector<double> task_loss_steps;
    std::vector<double> lr_steps;
    std::vector<int64_t> epoch_of_step;  // 1-based
    double mu1 = 0.0;                    // mean KL over epoch 1
    bool evicted = false;
    int64_t stop_step = 0;               // steps actually executed
    bool early_stopped = false;
    double max_orth_residual = 0.0;      // max ||R R^T - I||_inf seen after any step
};

// True once the epoch-1 mean KL exceeds eta (strictly).
bool check_eviction(const TrainTrace& trace, double eta);

// Dual-plateau rule: the last `window` KL mean has not decreased against the
// previous non-overlapping window, and the task-loss mean has not decreased
// by more than 1e-4.
bool early_stop(const TrainTrace& trace, int64_t window);

struct TrainResult {
    Intervention live;
    InterventionSnapshot anchor;
    TrainTrace trace;
};

// Anchored adaptation of one task inside its group: the group state is
// snapshotted as the anchor, a live copy trains under anchored_loss, and the
// run stops on the epoch schedule, an early-stop plateau, or (when may_evict)
// an epoch-1 eviction. The group itself is not modified; committing the
// result is merge()'s job.
TrainResult train_task(const TaskInstance& task, const GroupState& group, const FrozenBackbone& backbone,
                       const TrainConfig& config, bool may_evict);

// Commits trained parameters to the group state.
void merge(const Intervention& live, GroupState& group);

// per-position max |R R^T - I| over every layer of the intervention
double orthonormality_residual(const Intervention& iv);

}  // namespace craft
