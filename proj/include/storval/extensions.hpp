#pragma once

#include "storval/contract.hpp"
#include "storval/intrinsic.hpp"
#include "storval/market.hpp"

#include <cstddef>
#include <span>
#include <string>

namespace storval {

/// F~_i = F_i - sum_{u<i} carry_u * dt. Solving the zero-carry problem on F~ gives the
/// exercise of the carry problem; cash must be re-priced on the original curve.
ForwardCurve carry_adjusted_curve(const ForwardCurve& curve, std::span<const double> carry);

struct CycleSolveResult {
    IntrinsicSolution solution;
    double lambda = 0.0;       // virtual operating cost on the limited side
    double cycle_used = 0.0;
    std::size_t iterations = 0;
    bool binding = false;
    bool saturated = false;    // dead zone swallowed every optional trade before meeting c_max
};

/// Total intake (sum of positive exercises) or release (sum of negative exercises).
double cycle_volume(const Trajectory& trajectory, CycleKind kind);

/// Shooting on a constant virtual operating cost until the cycle limit holds.
CycleSolveResult solve_with_cycle(const StorageContract& contract, const ForwardCurve& curve);

/// Exact lattice solve with cumulative intake (or release) as a second state dimension.
/// The cycle lattice has the volume spacing, so n_cycle_levels must cover c_max.
IntrinsicSolution solve_dp_with_cycle_state(const StorageContract& contract, const ForwardCurve& curve,
                                            std::size_t n_volume_levels, std::size_t n_cycle_levels);

enum class TerminalLevel { at_min, interior, at_max };

const char* to_string(TerminalLevel level);

struct FreeTerminalSolution {
    IntrinsicSolution solution;
    TerminalLevel level = TerminalLevel::interior;
    TriggerBand final_range;       // final-segment triggers consistent with the touch chain
    bool condition_holds = false;  // final_range agrees with the residual price for this level
    double residual_price = 0.0;   // residual price net of total carry
};

/// Lattice solve with payoff q_end * F_e, classified by where the terminal volume ends.
FreeTerminalSolution solve_free_terminal(const StorageContract& contract, const ForwardCurve& curve,
                                         std::size_t n_volume_levels = 201);

}  // namespace storval
