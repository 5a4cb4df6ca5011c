#pragma once

#include "storval/contract.hpp"
#include "storval/market.hpp"

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace storval {

/// Volume path on the grid nodes and the volume exercised during each step.
struct Trajectory {
    TimeGrid grid;
    std::vector<double> volumes;    // n_steps + 1
    std::vector<double> exercises;  // n_steps, volumes[i+1] - volumes[i]
};

/// Interval of trigger prices that reproduces every action of steps [from, to).
struct TriggerBand {
    std::size_t from = 0;
    std::size_t to = 0;
    double c_lo = -std::numeric_limits<double>::infinity();
    double c_hi = std::numeric_limits<double>::infinity();
    bool consistent = true;

    /// Representative trigger: midpoint, or the finite edge of a one-sided band.
    double representative() const;
    double width() const { return c_hi - c_lo; }
    bool contains(double c, double tol) const { return c >= c_lo - tol && c <= c_hi + tol; }
};

enum class Boundary { lower, upper };

struct Touch {
    std::size_t node = 0;
    Boundary boundary = Boundary::lower;
};

enum class SolveMethod { dp, trigger };

enum class TouchCase { lower_from_left, upper_from_left, lower_from_right, upper_from_right };

const char* to_string(TouchCase c);
const char* to_string(SolveMethod m);
const char* to_string(Boundary b);

struct TouchCheck {
    std::size_t node = 0;
    TouchCase kind = TouchCase::lower_from_left;
    double price = 0.0;          // F(t*) of the adjacent step
    double implied_trigger = 0.0;  // C implied by the touch condition
    double residual = 0.0;       // distance of implied_trigger outside the band (0 inside)
    double slope = 0.0;          // F(t*+dt) - F(t*)
    bool slope_ok = true;
    bool passed = true;
};

struct IntrinsicSolution {
    Trajectory trajectory;
    double value = 0.0;
    std::vector<TriggerBand> bands;
    std::vector<Touch> touches;
    SolveMethod method = SolveMethod::trigger;
    bool certified = false;         // optimality conditions verified on the trajectory
    bool fallback = false;          // trigger solver handed over to the lattice solver
    std::string fallback_reason;
    std::vector<TouchCheck> diagnostics;

    const TriggerBand& first_band() const { return bands.front(); }
    const TriggerBand& final_band() const { return bands.back(); }
};

/// Rate of the three-regime rule: inject below the dead zone [C - gamma_inj, C + gamma_rel],
/// release above it, idle inside (edges included).
double exercise_decision(double price, double trigger, double gamma_inj, double gamma_rel,
                         double r_min, double r_max);

/// Applies exercise_decision stepwise with a constant trigger; a step that would leave
/// [q_min, q_max] is clipped onto the boundary.
Trajectory build_trajectory(const ForwardCurve& curve, const StorageContract& contract,
                            double trigger);

struct TriggerOptions {
    double price_tolerance = 1e-9;  // relative to the price scale
    bool dp_fallback = true;
    std::size_t fallback_levels = 201;
    /// Only refine the first segment; the rest of the trajectory comes from the global trigger.
    bool first_segment_only = false;
};

IntrinsicSolution solve_trigger(const StorageContract& contract, const ForwardCurve& curve,
                                const TriggerOptions& options = {});

/// Exact solve for constant rates: backward recursion on the concave piecewise-linear
/// value-to-go, whose slope is the trigger price of each step. Handles carry cost and
/// both terminal conditions.
IntrinsicSolution solve_marginal_value(const StorageContract& contract, const ForwardCurve& curve);

/// Trajectory of solve_marginal_value without bands, value or certificate.
Trajectory marginal_value_trajectory(const StorageContract& contract, const ForwardCurve& curve);

/// Representative trigger of the first band of the exact solution. Same number as
/// solve_marginal_value(...).first_band().representative() at a fraction of the cost;
/// meant for nested estimation where only the prompt trigger is needed.
double first_trigger(const StorageContract& contract, const ForwardCurve& curve);

IntrinsicSolution solve_dp(const StorageContract& contract, const ForwardCurve& curve,
                           std::size_t n_volume_levels);

/// Fills value, touches, bands, optimality certificate and touch diagnostics of a solution
/// whose trajectory is already set. Carry cost is handled through the adjusted curve.
void annotate_solution(IntrinsicSolution& solution, const ForwardCurve& curve,
                       const StorageContract& contract);

/// Cash value of a trajectory, including carry cost and the free-terminal payoff.
double evaluate_value(const Trajectory& trajectory, const ForwardCurve& curve,
                      const StorageContract& contract);

/// Throws std::invalid_argument naming the first infeasible step.
void check_feasible(const Trajectory& trajectory, const StorageContract& contract);

/// Interior nodes (0 < i < n) where the volume sits on a bound.
std::vector<Touch> find_touches(const Trajectory& trajectory, const StorageContract& contract);

/// Bands per segment between boundary touches; neighbouring segments whose bands
/// overlap are merged, so a trajectory driven by one trigger yields one band.
std::vector<TriggerBand> extract_trigger_bands(const Trajectory& trajectory,
                                               const ForwardCurve& curve,
                                               const StorageContract& contract);

/// Band of the actions over an arbitrary step window [from, to), ignoring touches.
TriggerBand band_over_steps(const Trajectory& trajectory, const ForwardCurve& curve,
                            const StorageContract& contract, std::size_t from, std::size_t to);

/// Optimality certificate for constant-rate contracts without carry cost: a trigger
/// per touch-delimited segment exists that explains every action, rises across upper
/// touches, falls across lower touches and meets the free-terminal condition.
bool certify_optimality(const Trajectory& trajectory, const ForwardCurve& curve,
                        const StorageContract& contract, double price_tol);

/// Triggers of the last touch-delimited segment that are consistent with every earlier
/// segment (rising across upper touches, falling across lower touches). Flagged
/// inconsistent when the chain breaks.
TriggerBand terminal_trigger_range(const Trajectory& trajectory, const ForwardCurve& curve,
                                   const StorageContract& contract, double price_tol);

std::vector<TouchCheck> check_boundary_touch_conditions(const IntrinsicSolution& solution,
                                                        const ForwardCurve& curve,
                                                        const StorageContract& contract,
                                                        double tol);

/// Largest one-step move of the curve; the natural tolerance for touch conditions.
double price_grid_step(const ForwardCurve& curve);

}  // namespace storval
