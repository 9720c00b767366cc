#include "craft/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "craft/adamw.hpp"
#include "craft/ops.hpp"
#include "craft/trainer.hpp"

namespace craft {

ProbeBatch make_probe_batch(const TaskInstance& task, const RouterParams& params) {
    if (task.train.empty()) throw std::invalid_argument("probe batch: task '" + task.name + "' has no data");
    ProbeBatch pb;
    pb.batch_seed = mix_seed(task.data_seed, 0x970b);
    Rng rng(pb.batch_seed);
    std::vector<int64_t> idx(task.train.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    int64_t n = std::min<int64_t>(params.probe_size, static_cast<int64_t>(task.train.size()));
    for (int64_t i = 0; i < n; ++i) pb.examples.push_back(task.train[static_cast<size_t>(idx[static_cast<size_t>(i)])]);

    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : pb.examples) {
        h = fnv1a(e.prompt.data(), e.prompt.size() * sizeof(int64_t), h);
        h = fnv1a(e.label.data(), e.label.size() * sizeof(int64_t), h);
    }
    pb.fingerprint = mix_seed(h, pb.batch_seed);
    return pb;
}

PositionDist smooth_top_k(const std::vector<double>& probs, int64_t k, double smoothing) {
    int64_t vocab = static_cast<int64_t>(probs.size());
    k = std::min(k, vocab);
    std::vector<int64_t> ids(static_cast<size_t>(vocab));
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](int64_t a, int64_t b) {
        return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
    });

    PositionDist pd;
    pd.vocab = vocab;
    double kept = 0.0;
    for (int64_t i = 0; i < k; ++i) {
        int64_t id = ids[static_cast<size_t>(i)];
        pd.support.emplace_back(id, probs[static_cast<size_t>(id)]);
        kept += probs[static_cast<size_t>(id)];
    }
    std::sort(pd.support.begin(), pd.support.end());

    double leftover = std::max(1.0 - kept, 0.0);
    double off = vocab > k ? leftover / static_cast<double>(vocab - k) : 0.0;
    for (auto& sv : pd.support) sv.second = (1.0 - smoothing) * sv.second + smoothing / static_cast<double>(vocab);
    pd.off_mass = vocab > k ? (1.0 - smoothing) * off + smoothing / static_cast<double>(vocab) : 0.0;
    return pd;
}

DistributionSignature signature(const Intervention* iv, const ProbeBatch& probe, const FrozenBackbone& backbone,
                                const RouterParams& params) {
    DistributionSignature sig;
    sig.probe_fingerprint = probe.fingerprint;
    int64_t vocab = backbone.config().vocab_size;

    for (const auto& e : probe.examples) {
        std::vector<int64_t> seq = e.prompt;
        seq.insert(seq.end(), e.label.begin(), e.label.end());
        HookSet hooks = iv ? iv->hooks(static_cast<int64_t>(e.prompt.size())) : HookSet();
        ForwardResult fr = backbone.forward(seq, hooks);

        int64_t m = static_cast<int64_t>(e.prompt.size());
        for (size_t li = 0; li < e.label.size(); ++li) {
            int64_t row = m - 1 + static_cast<int64_t>(li);
            std::vector<double> p(static_cast<size_t>(vocab));
            double mx = fr.logits->at(row, 0);
            for (int64_t v = 1; v < vocab; ++v) mx = std::max(mx, fr.logits->at(row, v));
            double z = 0.0;
            for (int64_t v = 0; v < vocab; ++v) {
                p[static_cast<size_t>(v)] = std::exp(fr.logits->at(row, v) - mx);
                z += p[static_cast<size_t>(v)];
            }
            for (double& x : p) x /= z;
            sig.positions.push_back(smooth_top_k(p, params.top_k, params.smoothing));
        }
    }
    return sig;
}

namespace {

double kl_pair(const PositionDist& p, const PositionDist& q) {
    // union support; the complement contributes in closed form
    double acc = 0.0;
    size_t i = 0, j = 0;
    int64_t in_union = 0;
    auto term = [](double a, double b) { return a * std::log(a / b); };
    while (i < p.support.size() || j < q.support.size()) {
        int64_t pi = i < p.support.size() ? p.support[i].first : INT64_MAX;
        int64_t qj = j < q.support.size() ? q.support[j].first : INT64_MAX;
        if (pi == qj) {
            acc += term(p.support[i].second, q.support[j].second);
            ++i, ++j;
        } else if (pi < qj) {
            acc += term(p.support[i].second, q.off_mass);
            ++i;
        } else {
            acc += term(p.off_mass, q.support[j].second);
            ++j;
        }
        ++in_union;
    }
    int64_t outside = p.vocab - in_union;
    if (outside > 0 && p.off_mass > 0.0) acc += static_cast<double>(outside) * term(p.off_mass, q.off_mass);
    return acc;
}

}  // namespace

double sym_kl(const DistributionSignature& p, const DistributionSignature& q) {
    if (p.probe_fingerprint != q.probe_fingerprint || p.positions.size() != q.positions.size())
        throw std::invalid_argument("sym_kl: signatures come from misaligned probes");
    if (p.positions.empty()) throw std::invalid_argument("sym_kl: empty signatures");
    double acc = 0.0;
    for (size_t i = 0; i < p.positions.size(); ++i)
        acc += kl_pair(p.positions[i], q.positions[i]) + kl_pair(q.positions[i], p.positions[i]);
    return acc / static_cast<double>(p.positions.size());
}

double routing_distance(double d_kg, double d_k, double d_g, double eps) {
    if (!std::isfinite(d_kg) || !std::isfinite(d_k) || !std::isfinite(d_g))
        throw std::invalid_argument("routing_distance: non-finite input");
    return d_kg / std::max(std::min(d_k, d_g), eps);
}

Intervention warmup(const TaskInstance& task, const FrozenBackbone& backbone, const RouterParams& params,
                    const InterventionSpec& ivspec) {
    if (task.train.empty()) throw std::invalid_argument("warmup: task '" + task.name + "' has no training data");
    if (params.warmup_steps < 1) throw std::invalid_argument("warmup: warmup_steps must be >= 1");

    Intervention iv = make_intervention(ivspec, backbone.config().hidden_dim, backbone.config().num_layers,
                                        params.warmup_seed);
    AdamW opt(iv.parameters(), linear_warmup(params.warmup_lr, params.warmup_steps, params.warmup_lr_ratio));

    Rng rng(mix_seed(params.warmup_seed, task.data_seed));
    int64_t n = static_cast<int64_t>(task.train.size());
    for (int64_t step = 0; step < params.warmup_steps; ++step) {
        std::vector<const Example*> batch;
        for (int64_t b = 0; b < params.batch_size; ++b)
            batch.push_back(&task.train[static_cast<size_t>(rng.uniform_int(0, n - 1))]);
        Graph graph;
        LossGraphs lg = task_loss(batch, iv, backbone);
        graph.backward(lg.loss);
        opt.step();
        opt.zero_grad();
    }
    return iv;
}

RoutingDecision decide_from_distances(int64_t task_id, const std::string& task_name,
                                      const std::vector<GroupDistances>& candidates, double delta, double eps) {
    RoutingDecision d;
    d.task_id = task_id;
    d.task_name = task_name;
    d.candidates = candidates;
    if (candidates.empty()) return d;  // first task: NEW, no distances

    std::vector<size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return candidates[a].distance < candidates[b].distance; });
    d.best = candidates[order[0]];
    if (order.size() > 1) d.runner_up = candidates[order[1]];
    d.floor_triggered = std::min(d.best->d_k, d.best->d_g) < eps;
    d.joined = d.best->distance <= delta && !d.floor_triggered;
    if (d.joined) d.group_id = d.best->gid;
    return d;
}

RoutingDecision route(const TaskInstance& task, std::vector<GroupState>& groups, const FrozenBackbone& backbone,
                      const RouterParams& params, const InterventionSpec& ivspec) {
    ProbeBatch probe = make_probe_batch(task, params);
    Intervention warm = warmup(task, backbone, params, ivspec);

    DistributionSignature base = signature(nullptr, probe, backbone, params);
    DistributionSignature warm_sig = signature(&warm, probe, backbone, params);
    double d_k = sym_kl(base, warm_sig);

    std::vector<GroupDistances> candidates;
    for (const auto& g : groups) {
        DistributionSignature g_sig = signature(&g.intervention, probe, backbone, params);
        GroupDistances gd;
        gd.gid = g.gid;
        gd.d_k = d_k;
        gd.d_g = sym_kl(base, g_sig);
        gd.d_kg = sym_kl(warm_sig, g_sig);
        gd.distance = routing_distance(gd.d_kg, gd.d_k, gd.d_g, params.eps);
        candidates.push_back(gd);
    }

    RoutingDecision decision = decide_from_distances(task.task_id, task.name, candidates, params.delta, params.eps);
    if (decision.joined) {
        groups[static_cast<size_t>(decision.group_id)].members.push_back(task.task_id);
    } else {
        GroupState fresh(static_cast<int64_t>(groups.size()),
                         make_intervention(ivspec, backbone.config().hidden_dim, backbone.config().num_layers,
                                           params.warmup_seed));
        transfer_into(warm, fresh.intervention);
        fresh.members.push_back(task.task_id);
        decision.group_id = fresh.gid;
        groups.push_back(std::move(fresh));
    }
    return decision;
}

std::string routing_log_csv(const std::vector<RoutingDecision>& decisions) {
    std::ostringstream os;
    os << "task,decision,best_gid,d_best,runner_gid,d_runner,floor,D_K,D_G,D_KG\n";
    auto num = [](double v) {
        char buf[40];
        snprintf(buf, sizeof(buf), "%.6f", v);
        return std::string(buf);
    };
    for (const auto& d : decisions) {
        os << d.task_name << "," << (d.joined ? "JOIN" : "NEW") << ",";
        if (d.best) os << "G" << d.best->gid;
        os << ",";
        if (d.best) os << num(d.best->distance);
        os << ",";
        if (d.runner_up) os << "G" << d.runner_up->gid;
        os << ",";
        if (d.runner_up) os << num(d.runner_up->distance);
        os << "," << (d.floor_triggered ? "yes" : "no") << ",";
        if (d.best) os << num(d.best->d_k);
        os << ",";
        if (d.best) os << num(d.best->d_g);
        os << ",";
        if (d.best) os << num(d.best->d_kg);
        os << "\n";
    }
    return os.str();
}

}  // namespace craft
