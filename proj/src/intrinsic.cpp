#include "storval/intrinsic.hpp"

#include "storval/extensions.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace storval {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double price_scale(const ForwardCurve& curve, const StorageContract& c) {
    double s = 1.0;
    for (double f : curve.prices()) s = std::max(s, std::abs(f));
    return s + c.gamma_inj + c.gamma_rel;
}

struct Interval {
    double lo = -kInf;
    double hi = kInf;

    void intersect(const Interval& o) {
        lo = std::max(lo, o.lo);
        hi = std::min(hi, o.hi);
    }
    bool empty(double tol) const { return lo > hi + tol; }
};

/// Trigger prices under which an action is optimal for one step taken in isolation.
Interval step_interval(double price, double exercise, RateLimits r, double dt,
                       const StorageContract& c, double vtol) {
    const double full_inj = r.r_max * dt;
    const double full_rel = r.r_min * dt;
    const double inj_edge = price + c.gamma_inj;
    const double rel_edge = price - c.gamma_rel;
    if (exercise > vtol) {
        if (exercise >= full_inj - vtol) return {inj_edge, kInf};
        return {inj_edge, inj_edge};
    }
    if (exercise < -vtol) {
        if (exercise <= full_rel + vtol) return {-kInf, rel_edge};
        return {rel_edge, rel_edge};
    }
    return {full_rel < -vtol ? rel_edge : -kInf, full_inj > vtol ? inj_edge : kInf};
}

Interval segment_interval(const Trajectory& t, std::span<const double> prices,
                          const StorageContract& c, std::size_t from, std::size_t to, double vtol) {
    const double dt = c.grid.dt();
    Interval band;
    for (std::size_t i = from; i < to; ++i)
        band.intersect(step_interval(prices[i], t.exercises[i], c.rate_for(i, t.volumes[i]), dt, c, vtol));
    return band;
}

bool on_upper(const StorageContract& c, std::size_t node, double v, double vtol) {
    return std::abs(v - c.q_max[node]) <= vtol;
}
bool on_lower(const StorageContract& c, std::size_t node, double v, double vtol) {
    return std::abs(v - c.q_min[node]) <= vtol;
}

/// Segment boundaries: 0, every interior touch node, n.
std::vector<std::size_t> segment_cuts(const Trajectory& t, const StorageContract& c) {
    const std::size_t n = t.exercises.size();
    const double vtol = c.volume_tolerance();
    std::vector<std::size_t> cuts{0};
    for (std::size_t k = 1; k < n; ++k)
        if (on_upper(c, k, t.volumes[k], vtol) || on_lower(c, k, t.volumes[k], vtol)) cuts.push_back(k);
    cuts.push_back(n);
    return cuts;
}

/// Zero-carry problem with the same optimal exercise: prices shifted by cumulative carry,
/// residual price shifted by the total carry.
struct CarryFree {
    ForwardCurve curve;
    StorageContract contract;
};

CarryFree carry_free(const StorageContract& c, const ForwardCurve& curve) {
    if (!c.has_carry()) return {curve, c};
    CarryFree out{carry_adjusted_curve(curve, c.carry_cost), c};
    double total = 0.0;
    for (double g : c.carry_cost) total += g * c.grid.dt();
    std::fill(out.contract.carry_cost.begin(), out.contract.carry_cost.end(), 0.0);
    if (auto* f = std::get_if<FreeTerminal>(&out.contract.terminal)) f->residual_price -= total;
    return out;
}

// Greedy single-trigger simulation over a step range, used by the bisection.
class SegmentSolver {
public:
    SegmentSolver(std::span<const double> prices, const StorageContract& c, Trajectory& traj)
        : prices_(prices), c_(c), traj_(traj), dt_(c.grid.dt()), vtol_(c.volume_tolerance()),
          rates_(c.rate_for(0, c.q_start)) {}

    double terminal(std::size_t from, std::size_t to, double q0, double trigger, bool write) {
        double q = q0;
        for (std::size_t i = from; i < to; ++i) {
            const double r = exercise_decision(prices_[i], trigger, c_.gamma_inj, c_.gamma_rel,
                                               rates_.r_min, rates_.r_max);
            q = advance(i, q, r, write);
        }
        return q;
    }

    double mixed_terminal(std::size_t from, std::size_t to, double q0, double c_lo, double c_hi,
                          double theta, bool write) {
        double q = q0;
        for (std::size_t i = from; i < to; ++i) {
            const double a = exercise_decision(prices_[i], c_lo, c_.gamma_inj, c_.gamma_rel,
                                               rates_.r_min, rates_.r_max);
            const double b = exercise_decision(prices_[i], c_hi, c_.gamma_inj, c_.gamma_rel,
                                               rates_.r_min, rates_.r_max);
            q = advance(i, q, (1.0 - theta) * a + theta * b, write);
        }
        return q;
    }

    /// Single-trigger solution of steps [from, to) from q_from to q_to, written into the
    /// trajectory. Throws if q_to is out of reach of any trigger.
    void solve(std::size_t from, std::size_t to, double q_from, double q_to) {
        std::vector<double> breaks;
        breaks.reserve(2 * (to - from));
        for (std::size_t i = from; i < to; ++i) {
            breaks.push_back(prices_[i] + c_.gamma_inj);
            breaks.push_back(prices_[i] - c_.gamma_rel);
        }
        std::sort(breaks.begin(), breaks.end());
        breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

        // probe k sits strictly inside the k-th gap between sorted breakpoints
        const std::size_t m = breaks.size();
        auto probe = [&](std::size_t k) {
            if (k == 0) return breaks.front() - (1.0 + std::abs(breaks.front()));
            if (k == m) return breaks.back() + (1.0 + std::abs(breaks.back()));
            return 0.5 * (breaks[k - 1] + breaks[k]);
        };

        if (terminal(from, to, q_from, probe(m), false) < q_to - vtol_ ||
            terminal(from, to, q_from, probe(0), false) > q_to + vtol_)
            throw std::runtime_error("unreachable terminal volume");

        // first probe with terminal volume >= q_to (terminal volume is monotone in the trigger)
        std::size_t lo = 0, hi = m;
        if (terminal(from, to, q_from, probe(0), false) >= q_to - vtol_) hi = 0;
        while (hi - lo > 1) {
            const std::size_t mid = lo + (hi - lo) / 2;
            if (terminal(from, to, q_from, probe(mid), false) >= q_to - vtol_)
                hi = mid;
            else
                lo = mid;
        }
        const double c_hi = probe(hi);
        const double t_hi = terminal(from, to, q_from, c_hi, false);
        if (hi == 0 || std::abs(t_hi - q_to) <= vtol_) {
            terminal(from, to, q_from, c_hi, true);
            return;
        }

        // q_to falls inside the jump at breakpoint hi-1: fill the marginal steps fractionally
        const double c_lo = probe(hi - 1);
        const double t_lo = terminal(from, to, q_from, c_lo, false);
        double theta = std::clamp((q_to - t_lo) / (t_hi - t_lo), 0.0, 1.0);
        double t = mixed_terminal(from, to, q_from, c_lo, c_hi, theta, false);
        if (std::abs(t - q_to) > 0.01 * vtol_) {
            double a = 0.0, b = 1.0;
            for (int it = 0; it < 200 && std::abs(t - q_to) > 0.01 * vtol_; ++it) {
                (t < q_to ? a : b) = theta;
                theta = 0.5 * (a + b);
                t = mixed_terminal(from, to, q_from, c_lo, c_hi, theta, false);
            }
        }
        mixed_terminal(from, to, q_from, c_lo, c_hi, theta, true);
        // absorb the residual rounding into the last active step
        const double residual = q_to - traj_.volumes[to];
        if (std::abs(residual) <= vtol_) {
            traj_.volumes[to] = q_to;
            traj_.exercises[to - 1] += residual;
        }
    }

private:
    double advance(std::size_t i, double q, double rate, bool write) {
        double next = q + rate * dt_;
        next = std::clamp(next, c_.q_min[i + 1], c_.q_max[i + 1]);
        // snap onto bounds so touch detection is exact
        if (std::abs(next - c_.q_max[i + 1]) <= vtol_) next = c_.q_max[i + 1];
        if (std::abs(next - c_.q_min[i + 1]) <= vtol_) next = c_.q_min[i + 1];
        if (write) {
            traj_.volumes[i + 1] = next;
            traj_.exercises[i] = next - q;
        }
        return next;
    }

    std::span<const double> prices_;
    const StorageContract& c_;
    Trajectory& traj_;
    double dt_;
    double vtol_;
    RateLimits rates_;
};

}  // namespace

void annotate_solution(IntrinsicSolution& s, const ForwardCurve& curve, const StorageContract& contract) {
    const CarryFree eq = carry_free(contract, curve);
    s.value = evaluate_value(s.trajectory, curve, contract);
    s.touches = find_touches(s.trajectory, contract);
    s.bands = extract_trigger_bands(s.trajectory, eq.curve, eq.contract);
    const double ptol = 1e-9 * price_scale(eq.curve, eq.contract);
    s.certified = !contract.has_volume_dependent_rates() &&
                  certify_optimality(s.trajectory, eq.curve, eq.contract, ptol);
    bool interior = false;
    for (const auto& t : s.touches) interior |= t.node > 0 && t.node < s.trajectory.exercises.size();
    if (interior)
        s.diagnostics = check_boundary_touch_conditions(s, eq.curve, eq.contract, price_grid_step(eq.curve));
}

double first_trigger(const StorageContract& contract, const ForwardCurve& curve) {
    if (contract.has_volume_dependent_rates()) {
        TriggerOptions o;
        o.dp_fallback = false;
        return solve_trigger(contract, curve, o).first_band().representative();
    }
    const Trajectory t = marginal_value_trajectory(contract, curve);
    const CarryFree eq = carry_free(contract, curve);
    return extract_trigger_bands(t, eq.curve, eq.contract).front().representative();
}

double TriggerBand::representative() const {
    if (std::isfinite(c_lo) && std::isfinite(c_hi)) return 0.5 * (c_lo + c_hi);
    if (std::isfinite(c_lo)) return c_lo;
    if (std::isfinite(c_hi)) return c_hi;
    return std::numeric_limits<double>::quiet_NaN();
}

const char* to_string(TouchCase c) {
    switch (c) {
        case TouchCase::lower_from_left: return "lower_from_left";
        case TouchCase::upper_from_left: return "upper_from_left";
        case TouchCase::lower_from_right: return "lower_from_right";
        case TouchCase::upper_from_right: return "upper_from_right";
    }
    return "?";
}

const char* to_string(SolveMethod m) { return m == SolveMethod::dp ? "dp" : "trigger"; }
const char* to_string(Boundary b) { return b == Boundary::lower ? "lower" : "upper"; }

double exercise_decision(double price, double trigger, double gamma_inj, double gamma_rel,
                         double r_min, double r_max) {
    if (price < trigger - gamma_inj) return r_max;
    if (price > trigger + gamma_rel) return r_min;
    return 0.0;
}

Trajectory build_trajectory(const ForwardCurve& curve, const StorageContract& contract,
                            double trigger) {
    const std::size_t n = contract.grid.n_steps();
    if (curve.size() != n) throw std::invalid_argument("curve and contract grids differ");
    const double dt = contract.grid.dt();
    Trajectory t{contract.grid, std::vector<double>(n + 1), std::vector<double>(n)};
    t.volumes[0] = contract.q_start;
    for (std::size_t i = 0; i < n; ++i) {
        const RateLimits r = contract.rate_for(i, t.volumes[i]);
        const double rate = exercise_decision(curve[i], trigger, contract.gamma_inj,
                                              contract.gamma_rel, r.r_min, r.r_max);
        const double next = std::clamp(t.volumes[i] + rate * dt, contract.q_min[i + 1], contract.q_max[i + 1]);
        t.volumes[i + 1] = next;
        t.exercises[i] = next - t.volumes[i];
    }
    return t;
}

double evaluate_value(const Trajectory& t, const ForwardCurve& curve, const StorageContract& c) {
    check_feasible(t, c);
    if (curve.size() != t.exercises.size()) throw std::invalid_argument("curve and trajectory grids differ");
    const double dt = c.grid.dt();
    double value = 0.0;
    for (std::size_t i = 0; i < t.exercises.size(); ++i) {
        const double dq = t.exercises[i];
        value += -dq * curve[i] - c.gamma_inj * std::max(dq, 0.0) - c.gamma_rel * std::max(-dq, 0.0) -
                 c.carry_cost[i] * t.volumes[i + 1] * dt;
    }
    if (!c.is_fixed_terminal()) value += t.volumes.back() * c.residual_price();
    return value;
}

void check_feasible(const Trajectory& t, const StorageContract& c) {
    const std::size_t n = c.grid.n_steps();
    if (t.volumes.size() != n + 1 || t.exercises.size() != n)
        throw std::invalid_argument("trajectory length does not match the contract grid");
    const double tol = 1e-7 * c.volume_scale();
    const double dt = c.grid.dt();
    for (std::size_t i = 0; i <= n; ++i) {
        if (t.volumes[i] < c.q_min[i] - tol || t.volumes[i] > c.q_max[i] + tol)
            throw std::invalid_argument("infeasible trajectory: volume outside bounds at node " +
                                        std::to_string(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(t.volumes[i + 1] - t.volumes[i] - t.exercises[i]) > tol)
            throw std::invalid_argument("infeasible trajectory: exercise inconsistent with volumes at step " +
                                        std::to_string(i));
        const RateLimits r = c.rate_for(i, t.volumes[i]);
        if (t.exercises[i] < r.r_min * dt - tol || t.exercises[i] > r.r_max * dt + tol)
            throw std::invalid_argument("infeasible trajectory: rate limit violated at step " +
                                        std::to_string(i));
    }
}

std::vector<Touch> find_touches(const Trajectory& t, const StorageContract& c) {
    std::vector<Touch> out;
    const double vtol = c.volume_tolerance();
    for (std::size_t k = 0; k < t.volumes.size(); ++k) {
        if (on_upper(c, k, t.volumes[k], vtol))
            out.push_back({k, Boundary::upper});
        else if (on_lower(c, k, t.volumes[k], vtol))
            out.push_back({k, Boundary::lower});
    }
    return out;
}

std::vector<TriggerBand> extract_trigger_bands(const Trajectory& t, const ForwardCurve& curve,
                                               const StorageContract& c) {
    const double ptol = 1e-9 * price_scale(curve, c);
    const auto cuts = segment_cuts(t, c);
    const double vtol = c.volume_tolerance();
    std::vector<TriggerBand> bands;
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
        const Interval iv = segment_interval(t, curve.prices(), c, cuts[s], cuts[s + 1], vtol);
        TriggerBand b{cuts[s], cuts[s + 1], iv.lo, iv.hi, !iv.empty(ptol)};
        if (!bands.empty() && bands.back().consistent && b.consistent) {
            TriggerBand& prev = bands.back();
            Interval merged{prev.c_lo, prev.c_hi};
            merged.intersect(iv);
            if (!merged.empty(ptol)) {
                prev.to = b.to;
                prev.c_lo = merged.lo;
                prev.c_hi = std::max(merged.lo, merged.hi);
                continue;
            }
        }
        if (b.consistent && b.c_hi < b.c_lo) b.c_hi = b.c_lo;
        bands.push_back(b);
    }
    return bands;
}

TriggerBand band_over_steps(const Trajectory& t, const ForwardCurve& curve,
                            const StorageContract& c, std::size_t from, std::size_t to) {
    if (!(from < to) || to > t.exercises.size()) throw std::out_of_range("band window out of range");
    const Interval iv = segment_interval(t, curve.prices(), c, from, to, c.volume_tolerance());
    return {from, to, iv.lo, iv.hi, !iv.empty(1e-9 * price_scale(curve, c))};
}

TriggerBand terminal_trigger_range(const Trajectory& t, const ForwardCurve& curve,
                                   const StorageContract& c, double ptol) {
    const auto cuts = segment_cuts(t, c);
    const double vtol = c.volume_tolerance();
    // feasible interval of the current segment's trigger given everything to its left
    Interval feasible;
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
        Interval iv = segment_interval(t, curve.prices(), c, cuts[s], cuts[s + 1], vtol);
        if (s > 0) {
            const std::size_t k = cuts[s];
            const bool up = on_upper(c, k, t.volumes[k], vtol);
            const bool low = on_lower(c, k, t.volumes[k], vtol);
            if (up && !low) iv.lo = std::max(iv.lo, feasible.lo);   // trigger may only rise
            if (low && !up) iv.hi = std::min(iv.hi, feasible.hi);   // trigger may only fall
        }
        if (iv.empty(ptol)) return {cuts[s], t.exercises.size(), iv.lo, iv.hi, false};
        feasible = iv;
    }
    return {cuts[cuts.size() - 2], t.exercises.size(), feasible.lo, std::max(feasible.lo, feasible.hi), true};
}

bool certify_optimality(const Trajectory& t, const ForwardCurve& curve, const StorageContract& c,
                        double ptol) {
    if (c.has_carry() || c.has_volume_dependent_rates()) return false;
    const TriggerBand last = terminal_trigger_range(t, curve, c, ptol);
    if (!last.consistent) return false;
    if (const auto* f = std::get_if<FreeTerminal>(&c.terminal)) {
        const std::size_t n = t.exercises.size();
        const double vtol = c.volume_tolerance();
        const bool up = on_upper(c, n, t.volumes[n], vtol);
        const bool low = on_lower(c, n, t.volumes[n], vtol);
        const double fe = f->residual_price;
        if (up && low) return true;
        if (up) return last.c_lo <= fe + ptol;
        if (low) return last.c_hi >= fe - ptol;
        return last.contains(fe, ptol);
    }
    return true;
}

double price_grid_step(const ForwardCurve& curve) {
    double step = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) step = std::max(step, std::abs(curve[i] - curve[i - 1]));
    return step;
}

std::vector<TouchCheck> check_boundary_touch_conditions(const IntrinsicSolution& solution,
                                                        const ForwardCurve& curve,
                                                        const StorageContract& c, double tol) {
    const Trajectory& t = solution.trajectory;
    const std::size_t n = t.exercises.size();
    const double vtol = c.volume_tolerance();
    auto band_of_step = [&](std::size_t step) -> const TriggerBand* {
        for (const auto& b : solution.bands)
            if (step >= b.from && step < b.to) return &b;
        return nullptr;
    };

    std::vector<TouchCheck> out;
    for (const Touch& touch : solution.touches) {
        const std::size_t k = touch.node;
        if (k == 0 || k >= n) continue;  // endpoints are not interior points
        const double slope = curve[k] - curve[k - 1];
        // t* is the node between two steps, so F(t*) lies between their prices
        const double f_lo = std::min(curve[k - 1], curve[k]);
        const double f_hi = std::max(curve[k - 1], curve[k]);
        auto check = [&](TouchCase kind, std::size_t step, double shift, bool rising) {
            TouchCheck tc;
            tc.node = k;
            tc.kind = kind;
            tc.price = curve[step];
            tc.slope = slope;
            tc.slope_ok = rising ? slope >= -tol : slope <= tol;
            const TriggerBand* b = band_of_step(step);
            tc.implied_trigger = curve[step] + shift;
            if (b) {
                const double lo = f_lo + shift, hi = f_hi + shift;
                tc.implied_trigger = std::clamp(std::clamp(b->representative(), b->c_lo, b->c_hi), lo, hi);
                tc.residual = std::max({0.0, b->c_lo - hi, lo - b->c_hi});
            }
            tc.passed = b && b->consistent && tc.residual <= tol && tc.slope_ok;
            out.push_back(tc);
        };
        const double in = t.exercises[k - 1];
        const double next = t.exercises[k];
        if (touch.boundary == Boundary::upper) {
            if (in > vtol) check(TouchCase::upper_from_left, k - 1, c.gamma_inj, true);
            if (next < -vtol) check(TouchCase::upper_from_right, k, -c.gamma_rel, true);
        } else {
            if (in < -vtol) check(TouchCase::lower_from_left, k - 1, -c.gamma_rel, false);
            if (next > vtol) check(TouchCase::lower_from_right, k, c.gamma_inj, false);
        }
    }
    return out;
}

IntrinsicSolution solve_trigger(const StorageContract& contract, const ForwardCurve& curve,
                                const TriggerOptions& options) {
    require_valid(contract);
    if (!contract.is_fixed_terminal())
        throw std::invalid_argument("solve_trigger needs a fixed terminal condition");
    const std::size_t n = contract.grid.n_steps();
    if (curve.size() != n) throw std::invalid_argument("curve and contract grids differ");

    if (contract.has_volume_dependent_rates()) {
        if (!options.dp_fallback)
            throw std::invalid_argument("volume-dependent rates need the lattice solver");
        IntrinsicSolution s = solve_dp(contract, curve, options.fallback_levels);
        s.fallback = true;
        s.fallback_reason = "volume-dependent rates";
        return s;
    }

    const CarryFree eq = carry_free(contract, curve);
    const auto prices = eq.curve.prices();
    const double ptol = options.price_tolerance * price_scale(eq.curve, eq.contract);
    const double vtol = eq.contract.volume_tolerance();

    IntrinsicSolution s;
    s.method = SolveMethod::trigger;
    s.trajectory = Trajectory{contract.grid, std::vector<double>(n + 1), std::vector<double>(n)};
    Trajectory& traj = s.trajectory;
    traj.volumes[0] = contract.q_start;
    SegmentSolver solver(prices, eq.contract, traj);
    solver.solve(0, n, contract.q_start, contract.q_end());

    // Re-solve every touch-delimited piece that a single trigger cannot explain,
    // with the touch volumes as boundary data.
    std::function<void(std::size_t, std::size_t, std::size_t)> refine =
        [&](std::size_t from, std::size_t to, std::size_t depth) {
            if (!segment_interval(traj, prices, eq.contract, from, to, vtol).empty(ptol)) return;
            if (depth > n) return;
            const std::vector<double> before(traj.volumes.begin() + from, traj.volumes.begin() + to + 1);
            solver.solve(from, to, traj.volumes[from], traj.volumes[to]);
            std::vector<std::size_t> cuts{from};
            for (std::size_t k = from + 1; k < to; ++k)
                if (on_upper(eq.contract, k, traj.volumes[k], vtol) || on_lower(eq.contract, k, traj.volumes[k], vtol))
                    cuts.push_back(k);
            cuts.push_back(to);
            if (cuts.size() == 2) return;
            const bool unchanged =
                std::equal(before.begin(), before.end(), traj.volumes.begin() + from);
            if (unchanged && depth > 0) return;
            const std::size_t pieces = options.first_segment_only ? 1 : cuts.size() - 1;
            for (std::size_t p = 0; p < pieces; ++p) refine(cuts[p], cuts[p + 1], depth + 1);
        };

    const auto cuts = segment_cuts(traj, eq.contract);
    const std::size_t pieces = options.first_segment_only ? 1 : cuts.size() - 1;
    for (std::size_t p = 0; p < pieces; ++p) refine(cuts[p], cuts[p + 1], 1);

    if (options.first_segment_only) {
        // nested estimation only needs the first band; skip value certification
        s.value = evaluate_value(traj, curve, contract);
        s.touches = find_touches(traj, contract);
        s.bands = extract_trigger_bands(traj, eq.curve, eq.contract);
        return s;
    }

    annotate_solution(s, curve, contract);
    if (s.certified) return s;

    // touches the single-trigger pass did not anticipate: solve the value-to-go exactly
    try {
        IntrinsicSolution exact = solve_marginal_value(contract, curve);
        if (exact.certified) return exact;
    } catch (const std::runtime_error&) {
    }
    if (options.dp_fallback) {
        IntrinsicSolution dp = solve_dp(contract, curve, options.fallback_levels);
        dp.fallback = true;
        dp.fallback_reason = "trigger solution failed the optimality certificate";
        return dp;
    }
    return s;
}

}  // namespace storval
