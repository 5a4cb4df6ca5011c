#pragma once

#include "storval/contract.hpp"
#include "storval/intrinsic.hpp"
#include "storval/market.hpp"

#include <span>
#include <vector>

namespace storval {

/// Closed interval; a derivative at a kink of the value function is a range.
struct Range {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double x, double tol = 0.0) const { return x >= lo - tol && x <= hi + tol; }
};

struct SensitivityReport {
    double dS_dq_end = 0.0;
    double dS_dq_start = 0.0;
    double dS_dt_end = 0.0;
    Range q_end_range;
    Range q_start_range;
    Range t_end_range;
    TriggerBand first_band;  // in carry-adjusted prices
    TriggerBand final_band;
    bool q_end_one_sided = false;  // band has width: left and right derivatives differ
    bool q_start_one_sided = false;
    bool t_end_one_sided = false;
};

/// Derivatives of the intrinsic value with respect to the boundary data, read off the
/// first and final trigger bands. Bands are shifted back to original prices when the
/// contract carries inventory cost.
SensitivityReport sensitivities(const IntrinsicSolution& solution, const ForwardCurve& curve,
                                const StorageContract& contract);

/// Step pairs (i, i+1) where the curve crosses the trigger of a single-segment solution.
std::vector<std::size_t> trigger_crossings(const IntrinsicSolution& solution, const ForwardCurve& curve);

/// First-order trigger shift for a curve bump, weighting each crossing by 1/|dF|.
double trigger_variation(const IntrinsicSolution& solution, const ForwardCurve& curve,
                         std::span<const double> bump);

}  // namespace storval
