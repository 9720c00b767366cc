#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "craft/config.hpp"
#include "craft/router.hpp"
#include "craft/trainer.hpp"
#include "doctest.h"

using namespace craft;

namespace {

RunConfig cfg_small() {
    RunConfig cfg = RunConfig::desk_defaults();
    return cfg;
}

DistributionSignature make_sig(std::vector<std::vector<double>> dists, uint64_t fp) {
    DistributionSignature s;
    s.probe_fingerprint = fp;
    for (auto& d : dists) {
        PositionDist pd;
        pd.vocab = static_cast<int64_t>(d.size());
        for (size_t i = 0; i < d.size(); ++i) pd.support.emplace_back(static_cast<int64_t>(i), d[i]);
        pd.off_mass = 0.0;
        s.positions.push_back(pd);
    }
    return s;
}

}  // namespace

TEST_CASE("routing_distance arithmetic") {
    CHECK(routing_distance(0.0, 0.5, 0.4, 0.01) == 0.0);
    CHECK(routing_distance(0.2, 0.5, 0.4, 0.01) == doctest::Approx(0.5));
    // floor: min(d_k, d_g) below eps pins the denominator at eps
    CHECK(routing_distance(0.2, 0.001, 0.002, 0.01) == doctest::Approx(20.0));
    CHECK_THROWS_AS(routing_distance(std::nan(""), 1, 1, 0.01), std::invalid_argument);
}

TEST_CASE("sym_kl basics and closed form") {
    auto p = make_sig({{0.5, 0.3, 0.2}}, 1);
    auto q = make_sig({{0.2, 0.5, 0.3}}, 1);
    CHECK(sym_kl(p, p) == 0.0);
    CHECK(sym_kl(p, q) == doctest::Approx(sym_kl(q, p)));

    double want = 0.0;
    std::vector<double> pv = {0.5, 0.3, 0.2}, qv = {0.2, 0.5, 0.3};
    for (int i = 0; i < 3; ++i) want += (pv[i] - qv[i]) * std::log(pv[i] / qv[i]);
    CHECK(sym_kl(p, q) == doctest::Approx(want).epsilon(1e-12));

    auto misaligned = make_sig({{0.5, 0.3, 0.2}}, 2);
    CHECK_THROWS_AS(sym_kl(p, misaligned), std::invalid_argument);
}

TEST_CASE("smooth_top_k truncates and spreads the remainder") {
    std::vector<double> probs = {0.4, 0.1, 0.2, 0.05, 0.05, 0.08, 0.02, 0.1};
    PositionDist pd = smooth_top_k(probs, 4, 1e-6);
    REQUIRE(pd.support.size() == 4);
    // top-4 ids by mass: 0 (.4), 2 (.2), 1 (.1), 7 (.1)
    CHECK(pd.support[0].first == 0);
    CHECK(pd.support[1].first == 1);
    CHECK(pd.support[2].first == 2);
    CHECK(pd.support[3].first == 7);

    double kept = 0.4 + 0.2 + 0.1 + 0.1;
    double off = (1.0 - kept) / 4.0;
    CHECK(pd.off_mass == doctest::Approx((1 - 1e-6) * off + 1e-6 / 8).epsilon(1e-12));
    CHECK(pd.support[0].second == doctest::Approx((1 - 1e-6) * 0.4 + 1e-6 / 8).epsilon(1e-12));

    double total = pd.off_mass * 4;
    for (auto& sv : pd.support) total += sv.second;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // k >= vocab keeps everything
    PositionDist full = smooth_top_k(probs, 32, 1e-6);
    CHECK(full.support.size() == 8);
    CHECK(full.off_mass == 0.0);
}

TEST_CASE("uniform probabilities stay uniform through smoothing") {
    std::vector<double> probs(8, 0.125);
    PositionDist pd = smooth_top_k(probs, 32, 1e-6);
    for (auto& sv : pd.support) CHECK(sv.second == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("decision rule over canned distances mirrors the log semantics") {
    SUBCASE("first task: new group, no distances") {
        RoutingDecision d = decide_from_distances(0, "t0", {}, 0.7, 0.01);
        CHECK_FALSE(d.joined);
        CHECK_FALSE(d.best.has_value());
        CHECK_FALSE(d.floor_triggered);
    }
    SUBCASE("close group joins") {
        std::vector<GroupDistances> cands = {{3, 0.5, 0.6, 0.0134, 0.0223}, {2, 0.5, 0.7, 0.017, 0.0243}};
        RoutingDecision d = decide_from_distances(4, "t4", cands, 0.7, 0.01);
        CHECK(d.joined);
        CHECK(d.group_id == 3);
        CHECK(d.best->gid == 3);
        CHECK(d.runner_up->gid == 2);
        CHECK_FALSE(d.floor_triggered);
    }
    SUBCASE("tiny best distance with the floor active forces a new group") {
        std::vector<GroupDistances> cands = {{0, 0.4, 0.002, 0.0005, 0.0012}, {1, 0.4, 0.5, 0.016, 0.0361}};
        RoutingDecision d = decide_from_distances(2, "t2", cands, 0.7, 0.01);
        CHECK_FALSE(d.joined);
        CHECK(d.floor_triggered);
        CHECK(d.best->gid == 0);
        CHECK(d.runner_up->gid == 1);
    }
    SUBCASE("beyond delta opens a new group") {
        std::vector<GroupDistances> cands = {{0, 0.5, 0.6, 0.5, 1.0}};
        RoutingDecision d = decide_from_distances(1, "t1", cands, 0.7, 0.01);
        CHECK_FALSE(d.joined);
        CHECK_FALSE(d.floor_triggered);
    }
}

TEST_CASE("warm-up determinism and shared-seed initialization") {
    RunConfig cfg = cfg_small();
    FrozenBackbone bb(cfg.backbone);
    auto tasks = generate_stream({{FamilyKind::Copy, 1}, {FamilyKind::ModularMap, 1}}, cfg.seeds.data,
                                 cfg.stream.gen);

    SUBCASE("zero learning rate returns the shared-seed initialization") {
        RouterParams rp = cfg.router;
        rp.warmup_lr = 0.0;
        rp.warmup_steps = 5;
        Intervention w = warmup(tasks[0], bb, rp, cfg.intervention);
        Intervention fresh = make_intervention(cfg.intervention, cfg.backbone.hidden_dim, cfg.backbone.num_layers,
                                               rp.warmup_seed);
        CHECK(w.checksum() == fresh.checksum());
    }

    SUBCASE("two tasks share the warm-up initialization but diverge after training") {
        Intervention a = make_intervention(cfg.intervention, cfg.backbone.hidden_dim, cfg.backbone.num_layers,
                                           cfg.router.warmup_seed);
        Intervention b = make_intervention(cfg.intervention, cfg.backbone.hidden_dim, cfg.backbone.num_layers,
                                           cfg.router.warmup_seed);
        CHECK(a.checksum() == b.checksum());
        Intervention wa = warmup(tasks[0], bb, cfg.router, cfg.intervention);
        Intervention wb = warmup(tasks[1], bb, cfg.router, cfg.intervention);
        CHECK(wa.checksum() != wb.checksum());
    }

    SUBCASE("warm-up reduces the probe-batch task loss") {
        ProbeBatch probe = make_probe_batch(tasks[0], cfg.router);
        std::vector<const Example*> batch;
        for (const auto& e : probe.examples) batch.push_back(&e);
        Intervention fresh = make_intervention(cfg.intervention, cfg.backbone.hidden_dim, cfg.backbone.num_layers,
                                               cfg.router.warmup_seed);
        double before = task_loss(batch, fresh, bb).parts.task_term;
        Intervention w = warmup(tasks[0], bb, cfg.router, cfg.intervention);
        double after = task_loss(batch, w, bb).parts.task_term;
        CHECK(after < before);
    }

    SUBCASE("empty task data is rejected") {
        TaskInstance empty = tasks[0];
        empty.train.clear();
        CHECK_THROWS_AS(warmup(empty, bb, cfg.router, cfg.intervention), std::invalid_argument);
    }
}

TEST_CASE("identity intervention signature equals the baseline bit-exactly") {
    RunConfig cfg = cfg_small();
    FrozenBackbone bb(cfg.backbone);
    auto tasks = generate_stream({{FamilyKind::Copy, 1}}, cfg.seeds.data, cfg.stream.gen);
    ProbeBatch probe = make_probe_batch(tasks[0], cfg.router);

    Intervention identity = make_intervention(cfg.intervention, cfg.backbone.hidden_dim, cfg.backbone.num_layers, 3);
    DistributionSignature base = signature(nullptr, probe, bb, cfg.router);
    DistributionSignature with_iv = signature(&identity, probe, bb, cfg.router);
    REQUIRE(base.positions.size() == with_iv.positions.size());
    for (size_t i = 0; i < base.positions.size(); ++i) {
        CHECK(base.positions[i].support == with_iv.positions[i].support);
        CHECK(base.positions[i].off_mass == with_iv.positions[i].off_mass);
    }
    CHECK(sym_kl(base, with_iv) == 0.0);
}

TEST_CASE("routing a task against its own warmed copy joins at distance zero") {
    RunConfig cfg = cfg_small();
    FrozenBackbone bb(cfg.backbone);
    auto tasks = generate_stream({{FamilyKind::ModularMap, 1}}, cfg.seeds.data, cfg.stream.gen);

    std::vector<GroupState> groups;
    RoutingDecision first = route(tasks[0], groups, bb, cfg.router, cfg.intervention);
    CHECK_FALSE(first.joined);
    REQUIRE(groups.size() == 1);

    TaskInstance twin = tasks[0];
    twin.task_id = 100;  // same data, fresh identity
    RoutingDecision second = route(twin, groups, bb, cfg.router, cfg.intervention);
    CHECK(second.joined);
    CHECK(second.group_id == 0);
    CHECK(second.best->d_kg == 0.0);
    CHECK(second.best->distance == 0.0);
    CHECK(second.best->d_k >= cfg.router.eps);  // warm-up really moved
    CHECK(groups[0].members == std::vector<int64_t>{tasks[0].task_id, 100});
}

TEST_CASE("routing is deterministic and keeps the partition total") {
    RunConfig cfg = cfg_small();
    FrozenBackbone bb(cfg.backbone);
    auto tasks = generate_stream({{FamilyKind::Copy, 1}, {FamilyKind::ModularMap, 1}, {FamilyKind::MarkerClass, 1}},
                                 cfg.seeds.data, cfg.stream.gen);

    auto run_routing = [&] {
        std::vector<GroupState> groups;
        std::vector<RoutingDecision> ds;
        for (const auto& t : tasks) ds.push_back(route(t, groups, bb, cfg.router, cfg.intervention));
        return std::make_pair(std::move(groups), std::move(ds));
    };
    auto [g1, d1] = run_routing();
    auto [g2, d2] = run_routing();

    REQUIRE(g1.size() == g2.size());
    size_t members = 0;
    for (size_t i = 0; i < g1.size(); ++i) {
        CHECK(g1[i].members == g2[i].members);
        CHECK(g1[i].intervention.checksum() == g2[i].intervention.checksum());
        members += g1[i].members.size();
    }
    CHECK(members == tasks.size());  // every task in exactly one group
    CHECK(routing_log_csv(d1) == routing_log_csv(d2));
}

TEST_CASE("two halves of one task saturate the routing distance") {
    RunConfig cfg = cfg_small();
    FrozenBackbone bb(cfg.backbone);
    auto tasks = generate_stream({{FamilyKind::Reverse, 1}}, cfg.seeds.data, cfg.stream.gen);
    auto [half_a, half_b] = split_halves(tasks[0]);

    std::vector<GroupState> groups;
    RoutingDecision first = route(half_a, groups, bb, cfg.router, cfg.intervention);
    RoutingDecision second = route(half_b, groups, bb, cfg.router, cfg.intervention);

    CHECK_FALSE(first.joined);
    CHECK_FALSE(second.joined);
    CHECK(groups.size() == 2);
    // each half warmed up independently on its own memory; on the other
    // half's data the two look far apart
    REQUIRE(second.best.has_value());
    CHECK(second.best->distance > cfg.router.delta);
}

TEST_CASE("misaligned probes are rejected") {
    RunConfig cfg = cfg_small();
    FrozenBackbone bb(cfg.backbone);
    auto tasks = generate_stream({{FamilyKind::Copy, 2}}, cfg.seeds.data, cfg.stream.gen);
    ProbeBatch p0 = make_probe_batch(tasks[0], cfg.router);
    ProbeBatch p1 = make_probe_batch(tasks[1], cfg.router);
    DistributionSignature a = signature(nullptr, p0, bb, cfg.router);
    DistributionSignature b = signature(nullptr, p1, bb, cfg.router);
    CHECK_THROWS_AS(sym_kl(a, b), std::invalid_argument);
}
