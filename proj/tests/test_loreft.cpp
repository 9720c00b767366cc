#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "craft/adamw.hpp"
#include "craft/loreft.hpp"
#include "craft/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace craft;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
    return worst;
}

double orth_residual(const Tensor& rot) {
    int64_t r = rot->shape[0], d = rot->shape[1];
    double worst = 0;
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < r; ++j) {
            double acc = 0;
            for (int64_t k = 0; k < d; ++k) acc += rot->data[i * d + k] * rot->data[j * d + k];
            worst = std::max(worst, std::fabs(acc - (i == j ? 1.0 : 0.0)));
        }
    return worst;
}

}  // namespace

TEST_CASE("select_positions unions the two streams") {
    StreamSpec s15{15};
    auto p = select_positions(40, s15);
    REQUIRE(p.size() == 30);
    for (int64_t i = 0; i < 15; ++i) CHECK(p[static_cast<size_t>(i)] == i);
    for (int64_t i = 0; i < 15; ++i) CHECK(p[static_cast<size_t>(15 + i)] == 25 + i);

    auto clamped = select_positions(10, s15);
    REQUIRE(clamped.size() == 10);
    for (int64_t i = 0; i < 10; ++i) CHECK(clamped[static_cast<size_t>(i)] == i);

    auto overlap = select_positions(20, s15);
    REQUIRE(overlap.size() == 20);
    for (int64_t i = 0; i < 20; ++i) CHECK(overlap[static_cast<size_t>(i)] == i);
}

TEST_CASE("orthonormalize is a fixed point on orthonormal input") {
    Tensor r = make_tensor({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    Tensor rot = orthonormalize(r);
    CHECK(max_abs_diff(rot->data, r->data) < 1e-10);
}

TEST_CASE("orthonormalize removes row scaling") {
    Tensor r = make_tensor({2, 2}, {2, 0, 0, 3});
    Tensor rot = orthonormalize(r);
    CHECK(max_abs_diff(rot->data, {1, 0, 0, 1}) < 1e-10);
}

TEST_CASE("orthonormalize produces R R^T = I on random input") {
    Rng rng(5);
    Tensor r = randn({4, 16}, rng);
    CHECK(orth_residual(orthonormalize(r)) < 1e-10);
}

TEST_CASE("orthonormalize rejects rank-deficient input with a condition diagnostic") {
    Tensor r = make_tensor({2, 3}, {1, 2, 3, 2, 4, 6});  // second row is 2x the first
    CHECK_THROWS_WITH_AS(orthonormalize(r), doctest::Contains("condition"), std::invalid_argument);
}

TEST_CASE("orthonormalize is differentiable") {
    Rng rng(6);
    Tensor r = randn({3, 8}, rng, 1.0, true);
    Tensor w = randn({3, 8}, rng, 1.0, false);
    testutil::check_gradients([&] { return sum(mul(orthonormalize(r), w)); }, {r});
}

TEST_CASE("apply is the identity when w equals the projection and b is zero") {
    // fresh interventions are built exactly that way
    Intervention iv(3, 16, {0}, StreamSpec{2}, 9);
    Rng rng(10);
    Tensor h = randn({5, 16}, rng);
    Tensor out = iv.apply(h, 0);
    CHECK(max_abs_diff(out->data, h->data) < 1e-12);
}

TEST_CASE("apply collapses to w h + b at full rank with identity projection") {
    int64_t d = 3;
    Intervention iv(d, d, {0}, StreamSpec{1}, 4);
    auto& e = const_cast<LayerEdit&>(iv.layer_params(0));
    e.r_raw->data = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    Rng rng(11);
    e.w->data = randn({d, d}, rng)->data;
    e.b->data = {0.3, -0.2, 0.5};

    std::vector<double> h = {0.4, -1.1, 2.0};
    std::vector<double> got = iv.apply(h, 0);
    for (int64_t i = 0; i < d; ++i) {
        double want = e.b->data[static_cast<size_t>(i)];
        for (int64_t j = 0; j < d; ++j) want += e.w->data[static_cast<size_t>(i * d + j)] * h[static_cast<size_t>(j)];
        CHECK(got[static_cast<size_t>(i)] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("apply matches a term-by-term recomputation") {
    int64_t d = 8, r = 2;
    Intervention iv(r, d, {0}, StreamSpec{1}, 12);
    Rng rng(13);
    auto& e = const_cast<LayerEdit&>(iv.layer_params(0));
    e.w->data = randn({r, d}, rng)->data;
    e.b->data = randn({r}, rng)->data;

    std::vector<double> h = randn({d}, rng)->data;
    Tensor rot = orthonormalize(e.r_raw);

    // h + R^T (W h + b - R h), computed with plain loops
    std::vector<double> inner(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        double wh = e.b->data[static_cast<size_t>(i)], rh = 0;
        for (int64_t j = 0; j < d; ++j) {
            wh += e.w->data[static_cast<size_t>(i * d + j)] * h[static_cast<size_t>(j)];
            rh += rot->data[static_cast<size_t>(i * d + j)] * h[static_cast<size_t>(j)];
        }
        inner[static_cast<size_t>(i)] = wh - rh;
    }
    std::vector<double> want = h;
    for (int64_t j = 0; j < d; ++j)
        for (int64_t i = 0; i < r; ++i)
            want[static_cast<size_t>(j)] += rot->data[static_cast<size_t>(i * d + j)] * inner[static_cast<size_t>(i)];

    std::vector<double> got = iv.apply(h, 0);
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("subspace locality: the edit acts only inside rowspace(R)") {
    int64_t d = 16, r = 4;
    Intervention iv(r, d, {0}, StreamSpec{1}, 14);
    Rng rng(15);
    auto& e = const_cast<LayerEdit&>(iv.layer_params(0));
    e.w->data = randn({r, d}, rng)->data;
    e.b->data = randn({r}, rng)->data;

    std::vector<double> h = randn({d}, rng)->data;
    std::vector<double> out = iv.apply(h, 0);
    Tensor rot = orthonormalize(e.r_raw);

    // project (out - h) onto the complement of rowspace(R): should vanish
    std::vector<double> delta(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j) delta[static_cast<size_t>(j)] = out[static_cast<size_t>(j)] - h[static_cast<size_t>(j)];
    std::vector<double> coeffs(static_cast<size_t>(r), 0.0);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < d; ++j)
            coeffs[static_cast<size_t>(i)] += rot->data[static_cast<size_t>(i * d + j)] * delta[static_cast<size_t>(j)];
    for (int64_t j = 0; j < d; ++j) {
        double back = 0;
        for (int64_t i = 0; i < r; ++i)
            back += rot->data[static_cast<size_t>(i * d + j)] * coeffs[static_cast<size_t>(i)];
        CHECK(std::fabs(delta[static_cast<size_t>(j)] - back) < 1e-9);
    }
}

TEST_CASE("snapshots are frozen deep copies") {
    Intervention iv(2, 8, {0, 1}, StreamSpec{2}, 16);
    InterventionSnapshot snap = snapshot(iv);
    uint64_t before = snap.checksum();

    Rng rng(17);
    Tensor h = randn({3, 8}, rng);
    std::vector<double> via_iv = iv.apply(h, 0)->data;
    std::vector<double> via_snap = snap.apply(h, 0)->data;
    CHECK(via_iv == via_snap);

    // mutate the live module; the snapshot must not move
    auto& e = const_cast<LayerEdit&>(iv.layer_params(0));
    e.b->data[0] += 1.0;
    CHECK(snap.checksum() == before);
    CHECK(snap.apply(h, 0)->data == via_snap);
    CHECK(iv.apply(h, 0)->data != via_iv);

    // snapshot of a snapshot is the same snapshot
    InterventionSnapshot again = snap.snapshot();
    CHECK(again.checksum() == snap.checksum());
}

TEST_CASE("transfer_into copies parameters and preserves the source") {
    Intervention src(2, 8, {0}, StreamSpec{2}, 18);
    Intervention dst(2, 8, {0}, StreamSpec{2}, 19);
    auto& es = const_cast<LayerEdit&>(src.layer_params(0));
    es.b->data = {0.5, -0.5};
    uint64_t src_sum = src.checksum();

    transfer_into(src, dst);
    CHECK(src.checksum() == src_sum);
    CHECK(dst.checksum() == src_sum);

    Rng rng(20);
    Tensor h = randn({2, 8}, rng);
    CHECK(src.apply(h, 0)->data == dst.apply(h, 0)->data);

    Intervention other(3, 8, {0}, StreamSpec{2}, 21);
    CHECK_THROWS_AS(transfer_into(other, dst), std::invalid_argument);
}

TEST_CASE("gradients still flow through a transferred module") {
    Intervention src(2, 8, {0}, StreamSpec{2}, 22);
    Intervention dst(2, 8, {0}, StreamSpec{2}, 23);
    Rng rng(24);
    auto& es = const_cast<LayerEdit&>(src.layer_params(0));
    es.w->data = randn({2, 8}, rng)->data;
    es.b->data = randn({2}, rng)->data;
    transfer_into(src, dst);

    Tensor h = randn({3, 8}, rng);
    const LayerEdit& e = dst.layer_params(0);
    testutil::check_gradients([&] { return sum(dst.apply(h, 0)); }, {e.r_raw, e.w, e.b});
}

TEST_CASE("orthonormality survives optimizer steps on r_raw") {
    Intervention iv(4, 16, {0}, StreamSpec{2}, 25);
    Rng rng(26);
    Tensor h = randn({4, 16}, rng);
    Tensor target = randn({4, 16}, rng);
    AdamW opt(iv.parameters(), LrSchedule{0.05, 0});
    for (int step = 0; step < 50; ++step) {
        Graph graph;
        Tensor diff = sub(iv.apply(h, 0), target);
        graph.backward(sum(mul(diff, diff)));
        opt.step();
        opt.zero_grad();
        CHECK(orth_residual(orthonormalize(iv.layer_params(0).r_raw)) < 1e-5);
    }
}

TEST_CASE("interventions serialize with their unconstrained parameters") {
    namespace fs = std::filesystem;
    Intervention iv(3, 16, {0, 1}, StreamSpec{4}, 27);
    Rng rng(28);
    for (int64_t l : iv.layers()) {
        auto& e = const_cast<LayerEdit&>(iv.layer_params(l));
        e.r_raw->data = randn({3, 16}, rng)->data;
        e.w->data = randn({3, 16}, rng)->data;
        e.b->data = randn({3}, rng)->data;
    }
    fs::path p = fs::temp_directory_path() / "craft_iv_test.bin";
    iv.save(p.string());
    Intervention loaded = Intervention::load(p.string());
    CHECK(loaded.checksum() == iv.checksum());
    CHECK(loaded.rank() == 3);
    CHECK(loaded.stream_spec().t_pos == 4);
    CHECK(loaded.layers() == iv.layers());
    fs::remove(p);
}
