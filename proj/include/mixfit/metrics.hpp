#pragma once

#include <vector>

#include "mixfit/types.hpp"

namespace mixfit {

// D_KL(a, b) + D_KL(b, a) in closed form:
//   1/2 Tr[Si^-1 Sj + Sj^-1 Si] + 1/2 (mi - mj)^T [Si^-1 + Sj^-1] (mi - mj) - d
double symmetric_kl_gaussian(const GaussianComponent& a, const GaussianComponent& b);

struct ComponentMatching {
    std::vector<int> permutation;  // estimated index -> true index, -1 when unmatched
    double total_cost = 0.0;
};

// Minimum-cost one-to-one assignment under the symmetric-KL cost. Unequal
// component counts are padded with a large sentinel cost; padded pairs do not
// appear in the permutation or the total.
ComponentMatching match_components(const MixtureModel& estimated, const MixtureModel& truth);

// Sum of matched symmetric-KL divergences; mixing-coefficient error excluded.
double param_error(const MixtureModel& estimated, const MixtureModel& truth);

}  // namespace mixfit
