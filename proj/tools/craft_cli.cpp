#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "craft/pipeline.hpp"

using namespace craft;

namespace {

RunConfig resolve_config(const std::string& config_path, const std::string& profile,
                         const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (!config_path.empty()) {
        cfg = load_config(config_path);
    } else if (profile == "full") {
        cfg = RunConfig::full_defaults();
    } else {
        cfg = RunConfig::desk_defaults();
    }
    for (const auto& kv : overrides) apply_override(cfg, kv);
    cfg.validate();
    return cfg;
}

void print_decisions(const std::vector<RoutingDecision>& decisions) {
    std::cout << routing_log_csv(decisions);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"craft: continual learning with routed low-rank representation interventions"};
    app.require_subcommand(1);

    std::string config_path, profile = "desk", out_dir, axis = "delta", mode = "craft", run_dir;
    std::vector<std::string> overrides;
    std::vector<double> values;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--profile", profile, "defaults profile: desk | full")
            ->check(CLI::IsMember({"desk", "full"}));
        sub->add_option("--set", overrides, "override a config key, e.g. --set router.delta=0.5");
    };

    CLI::App* run = app.add_subcommand("run", "run the full pipeline on the configured stream");
    add_common(run);
    run->add_option("--out", out_dir, "output directory for the run artifacts")->required();

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "rerun the stream across an axis of values");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--axis", axis, "delta | warmup_steps | beta")
        ->check(CLI::IsMember({"delta", "warmup_steps", "beta"}));
    sweep_cmd->add_option("--values", values, "axis values")->required()->expected(-2);
    bool adversarial = false;
    sweep_cmd->add_flag("--adversarial", adversarial, "sweep the canned far-family 2-task stream");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "forced-placement ablation");
    add_common(ablate_cmd);
    ablate_cmd->add_option("--mode", mode, "task-wise | all-in-one | task-similar-noreg | craft")
        ->check(CLI::IsMember({"task-wise", "all-in-one", "task-similar-noreg", "craft"}));

    CLI::App* report_cmd = app.add_subcommand("report", "render the report for a completed run directory");
    report_cmd->add_option("dir", run_dir, "run directory")->required();

    CLI::App* route_cmd = app.add_subcommand("route", "routing-only dry run (no phase-2 training)");
    add_common(route_cmd);

    CLI::App* fixtures_cmd = app.add_subcommand("fixtures", "run the bundled evaluation-matrix example");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            RunConfig cfg = resolve_config(config_path, profile, overrides);
            cfg.output_dir = out_dir;
            RunReport rep = run_stream(cfg);
            std::cout << "tasks: " << rep.matrix.tasks() << "  groups: " << rep.group_members.size() << "\n";
            printf("OP: %.4f\nBWT: %.4f\n", rep.op, rep.bwt);
            printf("report hash: %llx\n", static_cast<unsigned long long>(rep.report_hash));
            std::vector<std::string> failures = audit_run_dir(out_dir);
            for (const auto& f : failures) std::cerr << "audit failure: " << f << "\n";
            if (!failures.empty()) return 1;
            std::cout << "audits: ok\n";
        } else if (sweep_cmd->parsed()) {
            RunConfig cfg = resolve_config(config_path, profile, overrides);
            if (adversarial) cfg = adversarial_pair_config(cfg);
            auto rows = sweep(cfg, axis, values);
            std::cout << sweep_csv(axis, rows);
        } else if (ablate_cmd->parsed()) {
            RunConfig cfg = resolve_config(config_path, profile, overrides);
            auto [op, bwt] = ablate(cfg, mode);
            printf("mode: %s\nOP: %.4f\nBWT: %.4f\n", mode.c_str(), op, bwt);
        } else if (report_cmd->parsed()) {
            std::cout << render_report(run_dir);
        } else if (route_cmd->parsed()) {
            RunConfig cfg = resolve_config(config_path, profile, overrides);
            print_decisions(route_stream_only(cfg));
        } else if (fixtures_cmd->parsed()) {
            EvalMatrix m = fixture_eval_matrix();
            printf("OP: %.2f\nBWT: %.2f\n", op_metric(m), bwt_metric(m));
            std::cout << "invariance violations: " << invariance_audit(m).size() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
