#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <set>

#include "craft/config.hpp"
#include "craft/metrics.hpp"
#include "craft/tasks.hpp"
#include "craft/trainer.hpp"
#include "doctest.h"

using namespace craft;

namespace {

std::vector<FamilySpec> all_families(int64_t count) {
    return {{FamilyKind::ModularMap, count},
            {FamilyKind::Copy, count},
            {FamilyKind::Reverse, count},
            {FamilyKind::MarkerClass, count}};
}

std::set<std::vector<int64_t>> prompt_set(const std::vector<Example>& v) {
    std::set<std::vector<int64_t>> s;
    for (const auto& e : v) s.insert(e.prompt);
    return s;
}

}  // namespace

TEST_CASE("generation is a pure function of seeds") {
    auto a = generate_stream(all_families(2), 123);
    auto b = generate_stream(all_families(2), 123);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].train == b[i].train);
        CHECK(a[i].probe == b[i].probe);
        CHECK(a[i].heldout == b[i].heldout);
        CHECK(a[i].data_seed == b[i].data_seed);
    }
    auto c = generate_stream(all_families(2), 124);
    CHECK(a[0].train != c[0].train);
}

TEST_CASE("4 families x 2 tasks gives 8 tasks with family labels preserved") {
    auto tasks = generate_stream(all_families(2), 11);
    REQUIRE(tasks.size() == 8);
    // round-robin: first four tasks cover all four families
    std::set<int64_t> first_four;
    for (size_t i = 0; i < 4; ++i) first_four.insert(tasks[i].family_id);
    CHECK(first_four.size() == 4);
    for (const auto& t : tasks) {
        CHECK(t.family_id >= 0);
        CHECK(t.family_id < 4);
        CHECK(!t.train.empty());
        CHECK(!t.probe.empty());
        CHECK(!t.heldout.empty());
    }
    // two tasks of a family share the kind but not the data
    CHECK(tasks[0].kind == tasks[4].kind);
    CHECK(tasks[0].train != tasks[4].train);
}

TEST_CASE("splits are disjoint within a task") {
    auto tasks = generate_stream(all_families(1), 7);
    for (const auto& t : tasks) {
        auto tr = prompt_set(t.train), pr = prompt_set(t.probe), he = prompt_set(t.heldout);
        CHECK(tr.size() == t.train.size());
        for (const auto& p : pr) CHECK(tr.count(p) == 0);
        for (const auto& p : he) {
            CHECK(tr.count(p) == 0);
            CHECK(pr.count(p) == 0);
        }
    }
}

TEST_CASE("labels live in the family's answer range") {
    auto tasks = generate_stream(all_families(2), 19);
    for (const auto& t : tasks) {
        for (const auto& e : t.train) {
            switch (t.kind) {
                case FamilyKind::ModularMap:
                    REQUIRE(e.label.size() == 1);
                    CHECK(e.label[0] >= VocabLayout::modular_base);
                    CHECK(e.label[0] < VocabLayout::modular_base + VocabLayout::modular_n);
                    break;
                case FamilyKind::Copy:
                    REQUIRE(e.label.size() == 1);
                    CHECK(e.label[0] >= VocabLayout::content_base);
                    CHECK(e.label[0] < VocabLayout::content_base + VocabLayout::content_n / 2);
                    break;
                case FamilyKind::Reverse:
                    // the order-inverted readout answers in the high content half
                    REQUIRE(e.label.size() == 1);
                    CHECK(e.label[0] >= VocabLayout::content_base + VocabLayout::content_n / 2);
                    CHECK(e.label[0] < VocabLayout::content_base + VocabLayout::content_n);
                    break;
                case FamilyKind::MarkerClass:
                    REQUIRE(e.label.size() == 1);
                    CHECK(e.label[0] >= VocabLayout::marker_base);
                    CHECK(e.label[0] < VocabLayout::marker_base + VocabLayout::marker_n);
                    break;
            }
        }
    }
}

TEST_CASE("permute_stream keeps the task set") {
    auto tasks = generate_stream(all_families(2), 5);
    auto shuffled = permute_stream(tasks, 99);
    REQUIRE(shuffled.size() == tasks.size());
    std::set<int64_t> ids;
    for (const auto& t : shuffled) ids.insert(t.task_id);
    CHECK(ids.size() == tasks.size());
}

TEST_CASE("split_halves partitions the training set and shares held-out data") {
    auto tasks = generate_stream({{FamilyKind::Copy, 1}}, 31);
    const TaskInstance& t = tasks[0];
    auto [a, b] = split_halves(t);

    CHECK(a.task_id != b.task_id);
    CHECK(a.family_id == t.family_id);
    CHECK(b.family_id == t.family_id);
    CHECK(a.kind == t.kind);

    auto ta = prompt_set(a.train), tb = prompt_set(b.train);
    for (const auto& p : ta) CHECK(tb.count(p) == 0);
    CHECK(a.train.size() + b.train.size() == t.train.size());
    std::set<std::vector<int64_t>> merged = ta;
    merged.insert(tb.begin(), tb.end());
    CHECK(merged == prompt_set(t.train));

    CHECK(a.heldout == t.heldout);
    CHECK(b.heldout == t.heldout);

    TaskInstance tiny = t;
    tiny.train.resize(1);
    CHECK_THROWS_AS(split_halves(tiny), std::invalid_argument);
}

TEST_CASE("tasks round-trip through the line-delimited format") {
    namespace fs = std::filesystem;
    auto tasks = generate_stream(all_families(2), 41);
    fs::path p = fs::temp_directory_path() / "craft_tasks_test.txt";
    save_tasks(tasks, p.string());
    auto back = load_tasks(p.string());
    REQUIRE(back.size() == tasks.size());
    for (size_t i = 0; i < tasks.size(); ++i) {
        CHECK(back[i].task_id == tasks[i].task_id);
        CHECK(back[i].family_id == tasks[i].family_id);
        CHECK(back[i].kind == tasks[i].kind);
        CHECK(back[i].name == tasks[i].name);
        CHECK(back[i].data_seed == tasks[i].data_seed);
        CHECK(back[i].train == tasks[i].train);
        CHECK(back[i].probe == tasks[i].probe);
        CHECK(back[i].heldout == tasks[i].heldout);
    }
    fs::remove(p);
}

// Guards against vacuous streams: every family must be learnable by an
// isolated intervention within the default budget.
TEST_CASE("every generated task reaches 90% held-out accuracy task-wise") {
    RunConfig cfg = RunConfig::desk_defaults();
    FrozenBackbone backbone(cfg.backbone);
    auto tasks = generate_stream(all_families(1), cfg.seeds.data, cfg.stream.gen);

    for (const auto& task : tasks) {
        GroupState g(0, make_intervention(cfg.intervention, cfg.backbone.hidden_dim, cfg.backbone.num_layers,
                                          cfg.seeds.warmup));
        g.members.push_back(task.task_id);
        TrainConfig tc = cfg.train;
        tc.beta = 0.0;
        TrainResult res = train_task(task, g, backbone, tc, false);
        merge(res.live, g);
        double acc = exact_match_score(task, g.intervention, backbone);
        INFO("task ", task.name, " accuracy ", acc);
        CHECK(acc >= 90.0);
    }
}
