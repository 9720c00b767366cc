#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "craft/metrics.hpp"
#include "craft/pipeline.hpp"
#include "doctest.h"

using namespace craft;

namespace {

EvalMatrix small_matrix(std::vector<std::vector<double>> rows, std::vector<int64_t> clusters) {
    EvalMatrix m;
    m.scores = std::move(rows);
    for (size_t i = 0; i < m.scores.size(); ++i) {
        m.task_order.push_back(static_cast<int64_t>(i));
        m.task_names.push_back("t" + std::to_string(i));
        m.cluster_of[static_cast<int64_t>(i)] = clusters[i];
    }
    return m;
}

}  // namespace

TEST_CASE("op is the mean of the final row") {
    EvalMatrix m = small_matrix({{10}, {10, 30}, {10, 30, 50}}, {0, 1, 2});
    CHECK(op_metric(m) == doctest::Approx(30.0));

    EvalMatrix constant = small_matrix({{42}, {42, 42}}, {0, 0});
    CHECK(op_metric(constant) == doctest::Approx(42.0));
}

TEST_CASE("op/bwt reject incomplete matrices") {
    EvalMatrix m = small_matrix({{10}, {10, 30}}, {0, 1});
    m.scores.pop_back();
    CHECK_THROWS_AS(op_metric(m), std::invalid_argument);
    CHECK_THROWS_AS(bwt_metric(m), std::invalid_argument);
}

TEST_CASE("bwt is the mean diagonal-minus-final drop") {
    EvalMatrix m = small_matrix({{80}, {70, 60}, {75, 50, 90}}, {0, 0, 0});
    // diag: 80, 60, 90; final: 75, 50, 90 -> drops 5, 10, 0
    CHECK(bwt_metric(m) == doctest::Approx(5.0));

    EvalMatrix still = small_matrix({{80}, {80, 60}, {80, 60, 90}}, {0, 0, 0});
    CHECK(bwt_metric(still) == doctest::Approx(0.0));

    EvalMatrix single = small_matrix({{77}}, {0});
    CHECK(bwt_metric(single) == doctest::Approx(0.0));
}

TEST_CASE("bwt sign convention: a uniform +1 drop raises bwt by (T-1)/T") {
    EvalMatrix m = small_matrix({{80}, {70, 60}, {75, 50, 90}}, {0, 0, 0});
    double before = bwt_metric(m);
    EvalMatrix dropped = m;
    for (size_t t = 0; t + 1 < dropped.scores.back().size(); ++t) dropped.scores.back()[t] -= 1.0;
    double after = bwt_metric(dropped);
    CHECK(after - before == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("bundled 15-task matrix reproduces the reference metrics") {
    EvalMatrix m = fixture_eval_matrix();
    CHECK(std::fabs(op_metric(m) - 50.31) < 0.01);
    CHECK(std::fabs(bwt_metric(m) - 2.61) < 0.05);
    CHECK(invariance_audit(m).empty());
}

TEST_CASE("random lower-triangular fixture matches a hand mean") {
    Rng rng(3);
    std::vector<std::vector<double>> rows;
    for (int64_t j = 0; j < 4; ++j) {
        std::vector<double> r;
        for (int64_t t = 0; t <= j; ++t) r.push_back(100.0 * rng.uniform());
        rows.push_back(r);
    }
    EvalMatrix m = small_matrix(rows, {0, 1, 0, 1});
    double hand = (rows[3][0] + rows[3][1] + rows[3][2] + rows[3][3]) / 4.0;
    CHECK(op_metric(m) == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("invariance audit is vacuous with one cluster") {
    EvalMatrix m = small_matrix({{10}, {20, 30}, {5, 6, 7}}, {0, 0, 0});
    CHECK(invariance_audit(m).empty());
}

TEST_CASE("invariance audit pinpoints a corrupted cross-cluster cell") {
    EvalMatrix m = fixture_eval_matrix();
    // task03 lives in cluster 2; the final row trains cluster 3
    m.scores[14][2] += 1.0;
    auto v = invariance_audit(m);
    REQUIRE(v.size() == 1);
    CHECK(v[0].row == 14);
    CHECK(v[0].col == 2);
}

TEST_CASE("matrix csv round-trips through the metrics") {
    EvalMatrix m = fixture_eval_matrix();
    std::string csv = eval_matrix_csv(m);
    EvalMatrix back = eval_matrix_from_csv(csv);
    CHECK(op_metric(back) == op_metric(m));
    CHECK(bwt_metric(back) == bwt_metric(m));
    CHECK(eval_matrix_csv(back) == csv);
}
