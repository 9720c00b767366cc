#include "craft/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace craft {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    snprintf(buf, sizeof(buf), spec, v);
    return std::string(buf);
}

std::string trace_jsonl(const TrainTrace& t) {
    std::ostringstream os;
    for (size_t i = 0; i < t.kl_steps.size(); ++i) {
        os << "{\"step\":" << (i + 1) << ",\"epoch\":" << t.epoch_of_step[i] << ",\"task_loss\":"
           << fmt(t.task_loss_steps[i], "%.17g") << ",\"kl\":" << fmt(t.kl_steps[i], "%.17g")
           << ",\"lr\":" << fmt(t.lr_steps[i], "%.17g") << "}\n";
    }
    return os.str();
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << content;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string membership_csv(const std::vector<GroupState>& groups) {
    std::ostringstream os;
    os << "gid,members\n";
    for (const auto& g : groups) {
        os << "G" << g.gid << ",";
        for (size_t i = 0; i < g.members.size(); ++i) os << (i ? ";" : "") << g.members[i];
        os << "\n";
    }
    return os.str();
}

std::string inference_csv(const std::vector<TaskInstance>& tasks, const std::map<int64_t, int64_t>& table) {
    std::ostringstream os;
    os << "task_id,task_name,gid\n";
    for (const auto& t : tasks) os << t.task_id << "," << t.name << ",G" << table.at(t.task_id) << "\n";
    return os.str();
}

std::string summary_text(const RunConfig& cfg, const RunReport& rep) {
    std::ostringstream os;
    os << "mode: " << cfg.mode << "\n";
    os << "tasks: " << rep.matrix.tasks() << "\n";
    os << "groups: " << rep.group_members.size() << "\n";
    os << "op: " << fmt(rep.op) << "\n";
    os << "bwt: " << fmt(rep.bwt) << "\n";
    os << "evictions: " << rep.evictions.size() << "\n";
    for (const auto& e : rep.evictions)
        os << "  task " << e.task_name << ": G" << e.from_gid << " -> G" << e.to_gid << " (mu1 " << fmt(e.mu1)
           << ")\n";
    os << "max_orth_residual: " << fmt(rep.max_orth_residual, "%.3e") << "\n";
    os << "invariance_violations: " << invariance_audit(rep.matrix).size() << "\n";
    os << "partition:";
    for (size_t g = 0; g < rep.group_members.size(); ++g) {
        os << " G" << g << "{";
        for (size_t i = 0; i < rep.group_members[g].size(); ++i)
            os << (i ? "," : "") << rep.group_members[g][i];
        os << "}";
    }
    os << "\n";
    return os.str();
}

GroupState found_group(int64_t gid, const Intervention* seed_from, const RunConfig& cfg,
                       const FrozenBackbone& backbone) {
    GroupState g(gid, make_intervention(cfg.intervention, backbone.config().hidden_dim,
                                        backbone.config().num_layers, cfg.seeds.warmup));
    if (seed_from) transfer_into(*seed_from, g.intervention);
    return g;
}

}  // namespace

RunReport run_stream(const RunConfig& cfg) {
    cfg.validate();
    FrozenBackbone backbone(cfg.backbone);
    uint64_t frozen_checksum = backbone.checksum();
    std::vector<TaskInstance> tasks = build_stream(cfg);

    TrainConfig traincfg = cfg.train;
    bool routing_on = cfg.mode == "craft" || cfg.mode == "task-similar-noreg";
    if (cfg.mode == "task-similar-noreg" || cfg.mode == "all-in-one" || cfg.mode == "task-wise")
        traincfg.beta = 0.0;

    std::vector<GroupState> groups;
    RunReport rep;
    rep.matrix.cluster_of.clear();

    for (size_t j = 0; j < tasks.size(); ++j) {
        const TaskInstance& task = tasks[j];

        RoutingDecision decision;
        if (routing_on) {
            decision = route(task, groups, backbone, cfg.router, cfg.intervention);
        } else if (cfg.mode == "task-wise") {
            Intervention warm = warmup(task, backbone, cfg.router, cfg.intervention);
            GroupState g = found_group(static_cast<int64_t>(groups.size()), &warm, cfg, backbone);
            g.members.push_back(task.task_id);
            decision.task_id = task.task_id;
            decision.task_name = task.name;
            decision.joined = false;
            decision.group_id = g.gid;
            groups.push_back(std::move(g));
        } else {  // all-in-one: one shared module, no warm-up routing
            decision.task_id = task.task_id;
            decision.task_name = task.name;
            if (groups.empty()) {
                GroupState g = found_group(0, nullptr, cfg, backbone);
                g.members.push_back(task.task_id);
                groups.push_back(std::move(g));
                decision.joined = false;
            } else {
                groups[0].members.push_back(task.task_id);
                decision.joined = true;
            }
            decision.group_id = 0;
        }

        bool may_evict = routing_on && decision.joined;
        GroupState& group = groups[static_cast<size_t>(decision.group_id)];
        TrainResult tr = train_task(task, group, backbone, traincfg, may_evict);
        rep.max_orth_residual = std::max(rep.max_orth_residual, tr.trace.max_orth_residual);

        int64_t final_gid = decision.group_id;
        if (tr.trace.evicted) {
            // the mis-routed task leaves; the group keeps its pre-task state
            transfer_into(tr.anchor, group.intervention);
            auto& mem = group.members;
            mem.erase(std::remove(mem.begin(), mem.end(), task.task_id), mem.end());

            GroupState fresh = found_group(static_cast<int64_t>(groups.size()), &tr.live, cfg, backbone);
            fresh.members.push_back(task.task_id);
            final_gid = fresh.gid;
            groups.push_back(std::move(fresh));
            rep.evictions.push_back(
                EvictionEvent{task.task_id, task.name, decision.group_id, final_gid, tr.trace.mu1});

            TrainResult tr2 = train_task(task, groups[static_cast<size_t>(final_gid)], backbone, traincfg, false);
            rep.max_orth_residual = std::max(rep.max_orth_residual, tr2.trace.max_orth_residual);
            merge(tr2.live, groups[static_cast<size_t>(final_gid)]);
            tr2.trace.evicted = true;  // keep the event visible in the task's trace
            rep.traces.push_back(std::move(tr2.trace));
        } else {
            merge(tr.live, group);
            rep.traces.push_back(std::move(tr.trace));
        }

        rep.decisions.push_back(decision);
        rep.matrix.cluster_of[task.task_id] = final_gid;
        rep.matrix.task_order.push_back(task.task_id);
        rep.matrix.task_names.push_back(task.name);
        rep.matrix.scores.push_back(
            evaluate_stream_step(static_cast<int64_t>(j), tasks, groups, rep.matrix.cluster_of, backbone));
    }

    if (backbone.checksum() != frozen_checksum)
        throw std::runtime_error("run_stream: frozen backbone weights changed during the run");

    rep.op = op_metric(rep.matrix);
    rep.bwt = bwt_metric(rep.matrix);
    rep.task_to_group = rep.matrix.cluster_of;
    rep.group_members.clear();
    for (const auto& g : groups) rep.group_members.push_back(g.members);

    if (!cfg.output_dir.empty()) {
        fs::path dir(cfg.output_dir);
        fs::create_directories(dir / "traces");
        fs::create_directories(dir / "groups");

        RunConfig cfg_copy = cfg;
        cfg_copy.output_dir.clear();  // the location is not part of the experiment
        write_file(dir / "config.json", config_to_json_text(cfg_copy));
        backbone.save((dir / "backbone.bin").string());
        for (const auto& g : groups) g.intervention.save((dir / "groups" / ("group_" + std::to_string(g.gid) + ".bin")).string());
        write_file(dir / "routing.csv", routing_log_csv(rep.decisions));
        write_file(dir / "eval_matrix.csv", eval_matrix_csv(rep.matrix));
        write_file(dir / "membership.csv", membership_csv(groups));
        write_file(dir / "inference.csv", inference_csv(tasks, rep.task_to_group));
        for (size_t j = 0; j < tasks.size(); ++j)
            write_file(dir / "traces" / ("task_" + std::to_string(tasks[j].task_id) + "_" + tasks[j].name + ".jsonl"),
                       trace_jsonl(rep.traces[j]));
        write_file(dir / "summary.txt", summary_text(cfg, rep));
        rep.report_hash = report_dir_hash(cfg.output_dir);
        std::ostringstream hs;
        hs << std::hex << rep.report_hash;
        write_file(dir / "hash.txt", hs.str() + "\n");
    }
    return rep;
}

std::vector<RoutingDecision> route_stream_only(const RunConfig& cfg) {
    cfg.validate();
    FrozenBackbone backbone(cfg.backbone);
    std::vector<TaskInstance> tasks = build_stream(cfg);
    std::vector<GroupState> groups;
    std::vector<RoutingDecision> decisions;
    for (const auto& task : tasks) decisions.push_back(route(task, groups, backbone, cfg.router, cfg.intervention));
    return decisions;
}

std::vector<SweepRow> sweep(const RunConfig& cfg, const std::string& axis, const std::vector<double>& values) {
    if (values.size() < 2) throw std::invalid_argument("sweep: need at least 2 values");
    std::vector<SweepRow> rows;
    for (double v : values) {
        RunConfig c = cfg;
        c.output_dir.clear();
        if (axis == "delta") c.router.delta = v;
        else if (axis == "warmup_steps") c.router.warmup_steps = static_cast<int64_t>(v);
        else if (axis == "beta") c.train.beta = v;
        else throw std::invalid_argument("sweep: unknown axis '" + axis + "'");
        RunReport rep = run_stream(c);
        rows.push_back(SweepRow{v, static_cast<int64_t>(rep.group_members.size()), rep.op, rep.bwt});
    }
    return rows;
}

std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << axis << ",K,OP,BWT\n";
    for (const auto& r : rows)
        os << fmt(r.value, "%.6g") << "," << r.groups << "," << fmt(r.op) << "," << fmt(r.bwt) << "\n";
    return os.str();
}

std::pair<double, double> ablate(const RunConfig& cfg, const std::string& mode) {
    RunConfig c = cfg;
    c.mode = mode;
    c.output_dir.clear();
    c.validate();
    RunReport rep = run_stream(c);
    return {rep.op, rep.bwt};
}

uint64_t report_dir_hash(const std::string& run_dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().filename() == "hash.txt") continue;
        files.push_back(entry.path());
    }
    std::vector<std::string> rels;
    for (const auto& f : files) rels.push_back(fs::relative(f, run_dir).generic_string());
    std::vector<size_t> order(rels.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return rels[a] < rels[b]; });

    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i : order) {
        h = fnv1a(rels[i].data(), rels[i].size(), h);
        std::string bytes = read_file(files[i]);
        h = fnv1a(bytes.data(), bytes.size(), h);
    }
    return h;
}

std::string render_report(const std::string& run_dir) {
    fs::path dir(run_dir);
    if (!fs::exists(dir / "eval_matrix.csv") || !fs::exists(dir / "routing.csv"))
        throw std::runtime_error("report: " + run_dir + " is not a completed run directory");
    EvalMatrix m = eval_matrix_from_csv(read_file(dir / "eval_matrix.csv"));
    std::ostringstream os;
    os << "== routing ==\n" << read_file(dir / "routing.csv");
    os << "== evaluation matrix ==\n" << read_file(dir / "eval_matrix.csv");
    os << "== metrics ==\n";
    os << "OP: " << fmt(op_metric(m)) << "\n";
    os << "BWT: " << fmt(bwt_metric(m)) << "\n";
    os << "invariance violations: " << invariance_audit(m).size() << "\n";
    if (fs::exists(dir / "summary.txt")) os << "== summary ==\n" << read_file(dir / "summary.txt");
    return os.str();
}

std::vector<std::string> audit_run_dir(const std::string& run_dir) {
    std::vector<std::string> failures;
    fs::path dir(run_dir);
    try {
        EvalMatrix m = eval_matrix_from_csv(read_file(dir / "eval_matrix.csv"));
        auto violations = invariance_audit(m);
        if (!violations.empty())
            failures.push_back("invariance audit: " + std::to_string(violations.size()) + " violation(s)");

        // inference parity: re-score the final row from the persisted states
        RunConfig cfg = load_config((dir / "config.json").string());
        FrozenBackbone backbone = FrozenBackbone::load((dir / "backbone.bin").string());
        std::vector<TaskInstance> tasks = build_stream(cfg);
        if (static_cast<int64_t>(tasks.size()) != m.tasks()) {
            failures.push_back("inference parity: task count mismatch");
            return failures;
        }
        for (size_t t = 0; t < tasks.size(); ++t) {
            // cluster ids in the parsed matrix are keyed by row index
            int64_t gid = m.cluster_of.at(static_cast<int64_t>(t));
            Intervention iv = Intervention::load((dir / "groups" / ("group_" + std::to_string(gid) + ".bin")).string());
            double score = exact_match_score(tasks[t], iv, backbone);
            double recorded = m.scores.back()[t];
            if (score != recorded)
                failures.push_back("inference parity: task " + tasks[t].name + " re-scores " + fmt(score) +
                                   " vs recorded " + fmt(recorded));
        }

        std::string recorded_hash = read_file(dir / "hash.txt");
        std::ostringstream hs;
        hs << std::hex << report_dir_hash(run_dir);
        if (recorded_hash != hs.str() + "\n")
            failures.push_back("hash audit: artifacts do not match the recorded hash");
    } catch (const std::exception& e) {
        failures.push_back(std::string("audit error: ") + e.what());
    }
    return failures;
}

RunConfig adversarial_pair_config(const RunConfig& base) {
    RunConfig cfg = base;
    cfg.stream.families = {{FamilyKind::ModularMap, 1}, {FamilyKind::MarkerClass, 1}};
    cfg.output_dir.clear();
    return cfg;
}

EvalMatrix fixture_eval_matrix() {
    // 15-task lower-triangular example with its cluster assignments
    const std::vector<std::vector<double>> rows = {
        {39.0},
        {39.0, 57.0},
        {39.0, 57.0, 19.3},
        {39.0, 57.0, 19.3, 37.9},
        {39.0, 57.0, 19.3, 37.2, 61.0},
        {39.0, 49.0, 19.3, 37.2, 61.0, 34.2},
        {39.0, 51.0, 19.3, 37.2, 61.0, 34.2, 41.0},
        {41.0, 51.0, 19.3, 37.2, 61.0, 34.2, 41.0, 38.4},
        {38.0, 51.0, 19.3, 37.2, 61.0, 34.2, 41.0, 38.2, 79.0},
        {38.0, 51.0, 19.3, 43.4, 57.0, 34.2, 41.0, 38.2, 79.0, 52.0},
        {40.0, 51.0, 19.3, 43.4, 57.0, 34.2, 41.0, 37.6, 80.0, 52.0, 61.0},
        {41.0, 51.0, 19.3, 43.4, 57.0, 34.2, 41.0, 38.1, 74.0, 52.0, 45.0, 88.0},
        {37.0, 51.0, 19.3, 43.4, 57.0, 34.2, 41.0, 36.5, 72.0, 52.0, 44.0, 85.0, 50.0},
        {40.0, 51.0, 19.3, 43.4, 57.0, 34.2, 41.0, 37.8, 77.0, 52.0, 42.0, 82.0, 46.0, 61.0},
        {40.0, 51.0, 19.3, 36.4, 60.0, 34.2, 41.0, 37.8, 77.0, 52.0, 42.0, 82.0, 46.0, 61.0, 75.0},
    };
    const std::vector<std::string> names = {"task01", "task02", "task03", "task04", "task05",
                                            "task06", "task07", "task08", "task09", "task10",
                                            "task11", "task12", "task13", "task14", "task15"};
    const std::vector<int64_t> clusters = {0, 1, 2, 3, 3, 1, 1, 0, 0, 3, 0, 0, 0, 0, 3};
    EvalMatrix m;
    m.scores = rows;
    for (int64_t i = 0; i < 15; ++i) {
        m.task_order.push_back(i);
        m.task_names.push_back(names[static_cast<size_t>(i)]);
        m.cluster_of[i] = clusters[static_cast<size_t>(i)];
    }
    return m;
}

}  // namespace craft
