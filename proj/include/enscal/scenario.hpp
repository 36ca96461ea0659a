// Scenario reordering: turn per-lead-time predictive quantiles into
// temporally coherent trajectories by copying the rank structure of a raw
// ensemble template across lead times.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "enscal/error.hpp"

namespace enscal {

struct ScenarioSet {
    std::vector<std::int64_t> lead_times;
    std::vector<std::vector<double>> values;  // [member][lead]
};

// Mid-levels (i - 0.5) / M for i = 1..M.
inline std::vector<double> mid_quantile_levels(int M) {
    require(M >= 1, errc::validation, "need at least one member");
    std::vector<double> levels(static_cast<std::size_t>(M));
    for (int i = 1; i <= M; ++i)
        levels[static_cast<std::size_t>(i - 1)] = (static_cast<double>(i) - 0.5) /
                                                  static_cast<double>(M);
    return levels;
}

// quantiles[h] holds the M ascending predictive quantiles for lead h;
// raw[m][h] is member m of the template at lead h. Member m of the output
// receives, at each lead, the quantile whose index equals m's rank in the
// template there (ties resolved by member index).
inline ScenarioSet ecc_q(const std::vector<std::vector<double>>& quantiles,
                         const std::vector<std::vector<double>>& raw,
                         std::vector<std::int64_t> lead_times) {
    const std::size_t H = quantiles.size();
    require(H >= 1, errc::validation, "need at least one lead time");
    require(lead_times.size() == H, errc::validation,
            "one lead label per quantile row required");
    const std::size_t M = raw.size();
    require(M >= 1, errc::validation, "template has no members");
    for (const auto& row : raw)
        require(row.size() == H, errc::validation,
                "template rows must cover every lead time");
    for (std::size_t h = 0; h < H; ++h) {
        require(quantiles[h].size() == M, errc::validation,
                "quantile count must match the template member count");
        for (std::size_t i = 1; i < M; ++i)
            require(quantiles[h][i - 1] <= quantiles[h][i], errc::validation,
                    "quantiles must be sorted ascending at lead index " +
                        std::to_string(h));
    }

    ScenarioSet out;
    out.lead_times = std::move(lead_times);
    out.values.assign(M, std::vector<double>(H, 0.0));
    std::vector<std::size_t> order(M);
    for (std::size_t h = 0; h < H; ++h) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
            if (raw[i][h] != raw[j][h]) return raw[i][h] < raw[j][h];
            return i < j;
        });
        for (std::size_t r = 0; r < M; ++r)
            out.values[order[r]][h] = quantiles[h][r];
    }
    return out;
}

}  // namespace enscal
