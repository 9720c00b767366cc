#include "craft/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "craft/adamw.hpp"
#include "craft/ops.hpp"

namespace craft {

namespace {

std::vector<int64_t> full_sequence(const Example& e) {
    std::vector<int64_t> seq = e.prompt;
    seq.insert(seq.end(), e.label.begin(), e.label.end());
    return seq;
}

// positions whose next-token prediction is scored against the label
void label_rows_and_targets(const Example& e, std::vector<int64_t>& rows, std::vector<int64_t>& targets) {
    int64_t m = static_cast<int64_t>(e.prompt.size());
    for (size_t i = 0; i < e.label.size(); ++i) {
        rows.push_back(m - 1 + static_cast<int64_t>(i));
        targets.push_back(e.label[i]);
    }
}

LossGraphs build_loss(const std::vector<const Example*>& batch, const Intervention& live,
                      const InterventionSnapshot* anchor, const FrozenBackbone& backbone, double beta) {
    if (batch.empty()) throw std::invalid_argument("loss: empty batch");
    int64_t total_pos = 0;
    for (const Example* e : batch) total_pos += static_cast<int64_t>(e->label.size());
    if (total_pos == 0) throw std::invalid_argument("loss: batch has no label positions");

    int64_t vocab = backbone.config().vocab_size;
    Tensor ce_sum;      // sum of label log-probs under the live model
    Tensor kl_dot_sum;  // sum over label positions of anchor_probs . live_log_probs
    double kl_const = 0.0;

    for (const Example* e : batch) {
        std::vector<int64_t> seq = full_sequence(*e);
        std::vector<int64_t> rows, targets;
        label_rows_and_targets(*e, rows, targets);

        ForwardResult fr = backbone.forward(seq, live.hooks(static_cast<int64_t>(e->prompt.size())));
        Tensor logsm = log_softmax_rows(fr.logits);
        Tensor picked = sum(pick(logsm, rows, targets));
        ce_sum = ce_sum ? add(ce_sum, picked) : picked;

        if (anchor) {
            // untracked anchor forward: nothing on this path needs gradients
            ForwardResult af = backbone.forward(seq, anchor->hooks(static_cast<int64_t>(e->prompt.size())));
            Tensor a_rows = gather_rows(af.logits, rows);
            Tensor a_sm = softmax_rows(a_rows);
            // the entropy side mirrors the dot side operation by operation,
            // so equal live and anchor logits cancel bit for bit
            Tensor a_lsm = log_softmax_rows(a_rows);
            double example_const = sum(mul(a_sm, a_lsm))->data[0];
            kl_const = kl_dot_sum ? kl_const + example_const : example_const;
            Tensor dot = sum(mul(detach(a_sm), gather_rows(logsm, rows)));
            kl_dot_sum = kl_dot_sum ? add(kl_dot_sum, dot) : dot;
        }
        (void)vocab;
    }

    double inv_n = 1.0 / static_cast<double>(total_pos);
    Tensor task_term = scale(ce_sum, -inv_n);
    LossGraphs out;
    if (anchor) {
        Tensor kl_term = scale(sub(scalar(kl_const), kl_dot_sum), inv_n);
        out.loss = add(task_term, scale(kl_term, beta));
        out.parts.kl_term = kl_term->data[0];
    } else {
        out.loss = task_term;
        out.parts.kl_term = 0.0;
    }
    out.parts.task_term = task_term->data[0];
    out.parts.total = out.parts.task_term + beta * out.parts.kl_term;
    return out;
}

}  // namespace

LossGraphs task_loss(const std::vector<const Example*>& batch, const Intervention& iv,
                     const FrozenBackbone& backbone) {
    return build_loss(batch, iv, nullptr, backbone, 0.0);
}

LossGraphs anchored_loss(const std::vector<const Example*>& batch, const Intervention& live,
                         const InterventionSnapshot& anchor, const FrozenBackbone& backbone, double beta) {
    return build_loss(batch, live, &anchor, backbone, beta);
}

bool check_eviction(const TrainTrace& trace, double eta) { return trace.mu1 > eta; }

bool early_stop(const TrainTrace& trace, int64_t window) {
    if (window < 1) throw std::invalid_argument("early_stop: window must be >= 1");
    int64_t n = static_cast<int64_t>(trace.kl_steps.size());
    if (n < window) throw std::invalid_argument("early_stop: fewer steps recorded than the window");
    if (n < 2 * window) return false;

    auto mean_range = [](const std::vector<double>& v, int64_t from, int64_t to) {
        double s = 0.0;
        for (int64_t i = from; i < to; ++i) s += v[static_cast<size_t>(i)];
        return s / static_cast<double>(to - from);
    };
    double kl_recent = mean_range(trace.kl_steps, n - window, n);
    double kl_prev = mean_range(trace.kl_steps, n - 2 * window, n - window);
    double loss_recent = mean_range(trace.task_loss_steps, n - window, n);
    double loss_prev = mean_range(trace.task_loss_steps, n - 2 * window, n - window);

    bool kl_plateau = kl_recent >= kl_prev;
    bool loss_plateau = (loss_prev - loss_recent) <= 1e-4;
    return kl_plateau && loss_plateau;
}

double orthonormality_residual(const Intervention& iv) {
    double worst = 0.0;
    for (int64_t l : iv.layers()) {
        const LayerEdit& e = iv.layer_params(l);
        Tensor rot = orthonormalize(e.r_raw);
        int64_t r = rot->shape[0], d = rot->shape[1];
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < r; ++j) {
                double acc = 0.0;
                for (int64_t k = 0; k < d; ++k) acc += rot->data[i * d + k] * rot->data[j * d + k];
                worst = std::max(worst, std::fabs(acc - (i == j ? 1.0 : 0.0)));
            }
    }
    return worst;
}

TrainResult train_task(const TaskInstance& task, const GroupState& group, const FrozenBackbone& backbone,
                       const TrainConfig& config, bool may_evict) {
    if (task.train.empty()) throw std::invalid_argument("train_task: task '" + task.name + "' has no training data");
    if (config.rolling_window < 1) throw std::invalid_argument("train_task: rolling_window must be >= 1");

    const Intervention& giv = group.intervention;
    Intervention live(giv.rank(), giv.hidden_dim(), giv.layers(), giv.stream_spec(), 0);
    transfer_into(giv, live);
    InterventionSnapshot anchor = snapshot(giv);

    int64_t n_train = static_cast<int64_t>(task.train.size());
    int64_t steps_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
    int64_t total_steps = config.epochs * steps_per_epoch;
    LrSchedule sched = linear_warmup(config.lr, total_steps, config.lr_warmup_ratio);
    AdamW opt(live.parameters(), sched);
    // the plateau test only makes sense once the lr ramp is over
    int64_t stop_check_from = sched.warmup_steps + 2 * config.rolling_window;

    TrainTrace trace;
    Rng shuffle_rng(mix_seed(config.shuffle_seed, task.data_seed));
    std::vector<int64_t> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

    bool done = false;
    for (int64_t epoch = 1; epoch <= config.epochs && !done; ++epoch) {
        shuffle_rng.shuffle(order);
        for (int64_t s = 0; s < steps_per_epoch && !done; ++s) {
            std::vector<const Example*> batch;
            for (int64_t i = s * config.batch_size; i < std::min((s + 1) * config.batch_size, n_train); ++i)
                batch.push_back(&task.train[static_cast<size_t>(order[static_cast<size_t>(i)])]);

            Graph graph;
            LossGraphs lg = anchored_loss(batch, live, anchor, backbone, config.beta);
            graph.backward(lg.loss);
            opt.step();
            opt.zero_grad();

            trace.kl_steps.push_back(lg.parts.kl_term);
            trace.task_loss_steps.push_back(lg.parts.task_term);
            trace.lr_steps.push_back(opt.last_lr());
            trace.epoch_of_step.push_back(epoch);
            if (config.audit_orthonormality)
                trace.max_orth_residual = std::max(trace.max_orth_residual, orthonormality_residual(live));

            if (config.early_stopping && static_cast<int64_t>(trace.kl_steps.size()) >= stop_check_from &&
                early_stop(trace, config.rolling_window)) {
                trace.early_stopped = true;
                done = true;
            }
        }
        if (epoch == 1) {
            double s = 0.0;
            for (double k : trace.kl_steps) s += k;
            trace.mu1 = s / static_cast<double>(trace.kl_steps.size());
            if (may_evict && check_eviction(trace, config.eta)) {
                trace.evicted = true;
                done = true;
            }
        }
    }
    trace.stop_step = static_cast<int64_t>(trace.kl_steps.size());
    return TrainResult{std::move(live), std::move(anchor), std::move(trace)};
}

void merge(const Intervention& live, GroupState& group) { transfer_into(live, group.intervention); }

}  // namespace craft
