// Quantile reordering: marginal preservation and rank copying, exactly, with
// deterministic tie handling.
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "enscal/error.hpp"
#include "enscal/scenario.hpp"

using namespace enscal;

namespace {

// Rank of entry m within column values, ties broken by index order.
std::vector<std::size_t> column_ranks(const std::vector<double>& col) {
    std::vector<std::size_t> order(col.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return col[i] < col[j]; });
    std::vector<std::size_t> rank(col.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
    return rank;
}

}  // namespace

TEST_CASE("mid quantile levels") {
    auto lv = mid_quantile_levels(4);
    REQUIRE(lv.size() == 4);
    CHECK(lv[0] == 0.125);
    CHECK(lv[1] == 0.375);
    CHECK(lv[2] == 0.625);
    CHECK(lv[3] == 0.875);
}

TEST_CASE("sorted template is the identity assignment") {
    std::vector<std::vector<double>> quantiles = {{10.0, 20.0, 30.0}};
    std::vector<std::vector<double>> raw = {{1.0}, {2.0}, {5.0}};
    ScenarioSet s = ecc_q(quantiles, raw, {24});
    REQUIRE(s.values.size() == 3);
    CHECK(s.values[0][0] == 10.0);
    CHECK(s.values[1][0] == 20.0);
    CHECK(s.values[2][0] == 30.0);
    CHECK(s.lead_times == std::vector<std::int64_t>{24});
}

TEST_CASE("rank permutation worked example") {
    // raw ranks (3,1,2) must hand members (q3, q1, q2)
    std::vector<std::vector<double>> quantiles = {{0.1, 0.2, 0.3}};
    std::vector<std::vector<double>> raw = {{9.0}, {4.0}, {6.0}};
    ScenarioSet s = ecc_q(quantiles, raw, {0});
    CHECK(s.values[0][0] == 0.3);
    CHECK(s.values[1][0] == 0.1);
    CHECK(s.values[2][0] == 0.2);
}

TEST_CASE("ties in the template resolve by member index") {
    std::vector<std::vector<double>> quantiles = {{1.0, 2.0, 3.0}};
    std::vector<std::vector<double>> raw = {{7.0}, {7.0}, {7.0}};
    ScenarioSet s = ecc_q(quantiles, raw, {0});
    CHECK(s.values[0][0] == 1.0);
    CHECK(s.values[1][0] == 2.0);
    CHECK(s.values[2][0] == 3.0);
}

TEST_CASE("dimension mismatches are rejected") {
    CHECK_THROWS_AS(ecc_q({{1.0, 2.0}}, {{1.0}, {2.0}, {3.0}}, {0}), Error);
    CHECK_THROWS_AS(ecc_q({{1.0}, {2.0}}, {{1.0}}, {0}), Error);
    CHECK_THROWS_AS(ecc_q({}, {}, {}), Error);
}

TEST_CASE("marginals and rank structure are copied exactly on random inputs") {
    std::mt19937_64 eng(20240817);
    std::uniform_int_distribution<int> m_dist(2, 12);
    std::uniform_int_distribution<int> h_dist(1, 5);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::uniform_int_distribution<int> tie(0, 3);

    for (int rep = 0; rep < 1000; ++rep) {
        const int m = m_dist(eng);
        const int h = h_dist(eng);
        std::vector<std::int64_t> leads;
        for (int i = 0; i < h; ++i) leads.push_back(24 * (i + 1));

        std::vector<std::vector<double>> quantiles(static_cast<std::size_t>(h));
        for (auto& q : quantiles) {
            q.resize(static_cast<std::size_t>(m));
            for (double& x : q) x = u(eng);
            std::sort(q.begin(), q.end());
        }
        std::vector<std::vector<double>> raw(
            static_cast<std::size_t>(m),
            std::vector<double>(static_cast<std::size_t>(h)));
        for (auto& row : raw)
            for (double& x : row) x = tie(eng) == 0 ? 1.0 : u(eng);

        ScenarioSet s = ecc_q(quantiles, raw, leads);
        REQUIRE(s.values.size() == raw.size());

        for (int lead = 0; lead < h; ++lead) {
            auto hl = static_cast<std::size_t>(lead);
            std::vector<double> out_col, raw_col;
            for (std::size_t mm = 0; mm < raw.size(); ++mm) {
                out_col.push_back(s.values[mm][hl]);
                raw_col.push_back(raw[mm][hl]);
            }
            // marginal preservation: sorting the output column reproduces the
            // quantile vector bit for bit
            std::vector<double> sorted_out = out_col;
            std::sort(sorted_out.begin(), sorted_out.end());
            CHECK(sorted_out == quantiles[hl]);

            // rank copy: member m holds the quantile whose index is m's rank
            // in the raw column
            auto ranks = column_ranks(raw_col);
            bool rank_ok = true;
            for (std::size_t mm = 0; mm < raw.size(); ++mm)
                rank_ok = rank_ok && out_col[mm] == quantiles[hl][ranks[mm]];
            CHECK(rank_ok);
        }
    }
}
