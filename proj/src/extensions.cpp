#include "storval/extensions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace storval {

ForwardCurve carry_adjusted_curve(const ForwardCurve& curve, std::span<const double> carry) {
    if (carry.size() != curve.size())
        throw std::invalid_argument("carry cost needs one value per curve step");
    const double dt = curve.grid().dt();
    std::vector<double> adjusted(curve.size());
    double accrued = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        adjusted[i] = curve[i] - accrued;
        accrued += carry[i] * dt;
    }
    return ForwardCurve(curve.grid(), std::move(adjusted));
}

double cycle_volume(const Trajectory& t, CycleKind kind) {
    double total = 0.0;
    for (double dq : t.exercises) total += kind == CycleKind::intake ? std::max(dq, 0.0) : std::max(-dq, 0.0);
    return total;
}

const char* to_string(TerminalLevel level) {
    switch (level) {
        case TerminalLevel::at_min: return "at_min";
        case TerminalLevel::interior: return "interior";
        case TerminalLevel::at_max: return "at_max";
    }
    return "?";
}

FreeTerminalSolution solve_free_terminal(const StorageContract& contract, const ForwardCurve& curve,
                                         std::size_t n_volume_levels) {
    const auto* free = std::get_if<FreeTerminal>(&contract.terminal);
    if (!free) throw std::invalid_argument("solve_free_terminal needs a free terminal condition");

    FreeTerminalSolution out;
    out.solution = solve_dp(contract, curve, n_volume_levels);
    double total_carry = 0.0;
    for (double g : contract.carry_cost) total_carry += g * contract.grid.dt();
    out.residual_price = free->residual_price - total_carry;

    const std::size_t n = contract.grid.n_steps();
    const double q = out.solution.trajectory.volumes[n];
    const double vtol = contract.volume_tolerance();
    if (std::abs(q - contract.q_min[n]) <= vtol)
        out.level = TerminalLevel::at_min;
    else if (std::abs(q - contract.q_max[n]) <= vtol)
        out.level = TerminalLevel::at_max;
    else
        out.level = TerminalLevel::interior;

    double scale = 1.0;
    for (double f : curve.prices()) scale = std::max(scale, std::abs(f));
    const double tol = 1e-9 * (scale + std::abs(out.residual_price));
    StorageContract plain = contract;
    std::fill(plain.carry_cost.begin(), plain.carry_cost.end(), 0.0);
    const ForwardCurve adjusted = carry_adjusted_curve(curve, contract.carry_cost);
    out.final_range = terminal_trigger_range(out.solution.trajectory, adjusted, plain, tol);
    const TriggerBand& band = out.final_range;
    const double fe = out.residual_price;
    if (!band.consistent) return out;
    switch (out.level) {
        case TerminalLevel::at_min: out.condition_holds = band.c_hi >= fe - tol; break;
        case TerminalLevel::at_max: out.condition_holds = band.c_lo <= fe + tol; break;
        case TerminalLevel::interior: out.condition_holds = band.contains(fe, tol); break;
    }
    return out;
}

namespace {

IntrinsicSolution solve_unlimited(const StorageContract& contract, const ForwardCurve& curve) {
    if (contract.is_fixed_terminal()) return solve_trigger(contract, curve);
    return solve_free_terminal(contract, curve).solution;
}

StorageContract with_virtual_cost(StorageContract c, CycleKind kind, double lambda) {
    c.cycle.reset();
    (kind == CycleKind::intake ? c.gamma_inj : c.gamma_rel) += lambda;
    return c;
}

Trajectory blend(const Trajectory& a, const Trajectory& b, double theta) {
    Trajectory t{a.grid, std::vector<double>(a.volumes.size()), std::vector<double>(a.exercises.size())};
    for (std::size_t i = 0; i < t.volumes.size(); ++i)
        t.volumes[i] = (1.0 - theta) * a.volumes[i] + theta * b.volumes[i];
    for (std::size_t i = 0; i < t.exercises.size(); ++i) t.exercises[i] = t.volumes[i + 1] - t.volumes[i];
    return t;
}

}  // namespace

CycleSolveResult solve_with_cycle(const StorageContract& contract, const ForwardCurve& curve) {
    if (!contract.cycle) throw std::invalid_argument("contract has no cycle limit");
    const CycleKind kind = contract.cycle->kind;
    const double c_max = contract.cycle->c_max;
    const double vtol = contract.volume_tolerance();

    if (contract.is_fixed_terminal()) {
        const double net = contract.q_end() - contract.q_start;
        const double forced = kind == CycleKind::intake ? std::max(net, 0.0) : std::max(-net, 0.0);
        if (forced > c_max + vtol) {
            std::ostringstream msg;
            msg << "cycle limit infeasible: terminal condition forces " << forced << " > c_max " << c_max;
            throw std::invalid_argument(msg.str());
        }
    }
    StorageContract base = contract;
    base.cycle.reset();
    require_valid(base);

    CycleSolveResult r;
    r.solution = solve_unlimited(base, curve);
    r.cycle_used = cycle_volume(r.solution.trajectory, kind);
    r.iterations = 1;
    if (r.cycle_used <= c_max + vtol) return r;

    r.binding = true;
    const auto prices = curve.prices();
    const auto [fmin, fmax] = std::minmax_element(prices.begin(), prices.end());
    double lo = 0.0;
    double hi = *fmax - *fmin + contract.gamma_inj + contract.gamma_rel;
    double used_lo = r.cycle_used;
    IntrinsicSolution sol_lo = r.solution;

    auto probe = [&](double lambda) {
        ++r.iterations;
        IntrinsicSolution s = solve_unlimited(with_virtual_cost(base, kind, lambda), curve);
        return std::make_pair(s, cycle_volume(s.trajectory, kind));
    };

    auto [sol_hi, used_hi] = probe(hi);
    if (used_hi > c_max + vtol) {
        // the dead zone already covers the whole curve; only forced trades remain
        r.saturated = true;
        r.lambda = hi;
        r.solution = sol_hi;
        r.solution.value = evaluate_value(sol_hi.trajectory, curve, base);
        r.cycle_used = used_hi;
        return r;
    }

    const double lambda_tol = 1e-12 * std::max(1.0, hi);
    while (hi - lo > lambda_tol && r.iterations < 200) {
        const double mid = 0.5 * (lo + hi);
        auto [s, used] = probe(mid);
        if (used > used_lo + vtol || used < used_hi - vtol) {
            std::ostringstream msg;
            msg << "cycle use not monotone in virtual cost: lambda " << mid << " gives " << used
                << " outside [" << used_hi << ", " << used_lo << "]";
            throw std::logic_error(msg.str());
        }
        if (used <= c_max + vtol) {
            hi = mid;
            sol_hi = std::move(s);
            used_hi = used;
            if (used >= c_max - vtol) break;
        } else {
            lo = mid;
            sol_lo = std::move(s);
            used_lo = used;
        }
    }

    r.lambda = hi;
    const StorageContract shaped = with_virtual_cost(base, kind, hi);
    if (used_hi >= c_max - vtol) {
        r.solution = std::move(sol_hi);
    } else {
        // Both neighbours optimise the same Lagrangian at the jump, so does any blend;
        // the blend that meets c_max exactly is optimal for the limited problem.
        double a = 0.0, b = 1.0;  // weight on the high-lambda trajectory
        Trajectory t = sol_lo.trajectory;
        for (int it = 0; it < 200; ++it) {
            const double theta = 0.5 * (a + b);
            t = blend(sol_lo.trajectory, sol_hi.trajectory, theta);
            const double used = cycle_volume(t, kind);
            if (std::abs(used - c_max) <= 0.01 * vtol) break;
            (used > c_max ? a : b) = theta;
        }
        if (cycle_volume(t, kind) > c_max + vtol) t = blend(sol_lo.trajectory, sol_hi.trajectory, b);
        r.solution = IntrinsicSolution{};
        r.solution.method = sol_hi.method;
        r.solution.trajectory = std::move(t);
        annotate_solution(r.solution, curve, shaped);
    }
    r.solution.value = evaluate_value(r.solution.trajectory, curve, base);
    r.cycle_used = cycle_volume(r.solution.trajectory, kind);
    return r;
}

IntrinsicSolution solve_dp_with_cycle_state(const StorageContract& contract, const ForwardCurve& curve,
                                            std::size_t n_volume_levels, std::size_t n_cycle_levels) {
    if (!contract.cycle) throw std::invalid_argument("contract has no cycle limit");
    if (n_volume_levels < 2 || n_cycle_levels < 1)
        throw std::invalid_argument("lattice needs >= 2 volume levels and >= 1 cycle level");
    const std::size_t n = contract.grid.n_steps();
    if (static_cast<double>(n) * static_cast<double>(n_volume_levels) * static_cast<double>(n_cycle_levels) > 1e6)
        throw std::invalid_argument("oracle instance too large");
    StorageContract base = contract;
    base.cycle.reset();
    require_valid(base);
    if (curve.size() != n) throw std::invalid_argument("curve and contract grids differ");

    const double lo = *std::min_element(contract.q_min.begin(), contract.q_min.end());
    const double hi = *std::max_element(contract.q_max.begin(), contract.q_max.end());
    const std::size_t L = hi - lo > contract.volume_tolerance() ? n_volume_levels : 1;
    const double h = L > 1 ? (hi - lo) / static_cast<double>(L - 1) : 0.0;
    std::vector<double> level(L);
    for (std::size_t j = 0; j < L; ++j)
        level[j] = L > 1 ? lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(L - 1) : lo;
    level.back() = hi;
    auto nearest = [&](double v) -> std::size_t {
        if (L == 1) return 0;
        return static_cast<std::size_t>(std::clamp(std::round((v - lo) / h), 0.0, static_cast<double>(L - 1)));
    };

    const CycleKind kind = contract.cycle->kind;
    const std::size_t M = L == 1 ? 1
                                 : std::min<std::size_t>(n_cycle_levels,
                                                         static_cast<std::size_t>(std::floor(contract.cycle->c_max / h + 1e-9)) + 1);
    const double dt = contract.grid.dt();
    const double vtol = contract.volume_tolerance();
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    auto allowed = [&](std::size_t node, std::size_t j) {
        return level[j] >= contract.q_min[node] - vtol && level[j] <= contract.q_max[node] + vtol;
    };
    auto idx = [&](std::size_t j, std::size_t m) { return j * M + m; };

    std::vector<double> next(L * M, kNegInf), cur(L * M);
    std::vector<std::size_t> next_term(L * M), cur_term(L * M);
    std::vector<long> choice(n * L * M, 0);
    for (std::size_t j = 0; j < L; ++j)
        for (std::size_t m = 0; m < M; ++m) {
            next_term[idx(j, m)] = j;
            if (contract.is_fixed_terminal()) {
                if (j == nearest(contract.q_end())) next[idx(j, m)] = 0.0;
            } else if (allowed(n, j)) {
                next[idx(j, m)] = level[j] * contract.residual_price();
            }
        }

    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = 0; j < L; ++j) {
            long k_lo = 0, k_hi = 0;
            if (L > 1) {
                const RateLimits r = contract.rate_for(i, level[j]);
                const double up = r.r_max * dt / h, down = r.r_min * dt / h;
                if ((up > 0.0 && up < 1.0 - 1e-9) || (down < 0.0 && down > -1.0 + 1e-9))
                    throw std::invalid_argument("refine lattice: volume spacing exceeds rate * dt");
                k_lo = static_cast<long>(std::ceil(down - 1e-9));
                k_hi = static_cast<long>(std::floor(up + 1e-9));
            }
            for (std::size_t m = 0; m < M; ++m) {
                const std::size_t s = idx(j, m);
                cur[s] = kNegInf;
                cur_term[s] = j;
                long best_k = 0;
                if (allowed(i, j)) {
                    for (long k = k_lo; k <= k_hi; ++k) {
                        const long t = static_cast<long>(j) + k;
                        if (t < 0 || t >= static_cast<long>(L)) continue;
                        const auto jt = static_cast<std::size_t>(t);
                        const long add = kind == CycleKind::intake ? std::max(k, 0L) : std::max(-k, 0L);
                        const std::size_t mt = m + static_cast<std::size_t>(add);
                        if (mt >= M || !allowed(i + 1, jt)) continue;
                        const std::size_t st = idx(jt, mt);
                        if (next[st] == kNegInf) continue;
                        const double dq = level[jt] - level[j];
                        const double v = next[st] - dq * curve[i] - contract.gamma_inj * std::max(dq, 0.0) -
                                         contract.gamma_rel * std::max(-dq, 0.0) -
                                         contract.carry_cost[i] * dt * level[jt];
                        const double eps = 1e-10 * (1.0 + std::abs(v));
                        const bool take = cur[s] == kNegInf || v > cur[s] + eps ||
                                          (v >= cur[s] - eps &&
                                           (next_term[st] < cur_term[s] ||
                                            (next_term[st] == cur_term[s] && std::labs(k) < std::labs(best_k))));
                        if (take) {
                            cur[s] = v;
                            cur_term[s] = next_term[st];
                            best_k = k;
                        }
                    }
                }
                choice[(i * L + j) * M + m] = best_k;
            }
        }
        std::swap(cur, next);
        std::swap(cur_term, next_term);
    }

    std::size_t j = nearest(contract.q_start);
    std::size_t m = 0;
    if (next[idx(j, m)] == kNegInf) throw std::runtime_error("unreachable terminal volume");

    IntrinsicSolution s;
    s.method = SolveMethod::dp;
    s.trajectory = Trajectory{contract.grid, std::vector<double>(n + 1), std::vector<double>(n)};
    s.trajectory.volumes[0] = level[j];
    for (std::size_t i = 0; i < n; ++i) {
        const long k = choice[(i * L + j) * M + m];
        j = static_cast<std::size_t>(static_cast<long>(j) + k);
        m += static_cast<std::size_t>(kind == CycleKind::intake ? std::max(k, 0L) : std::max(-k, 0L));
        double v = level[j];
        if (std::abs(v - contract.q_max[i + 1]) <= vtol) v = contract.q_max[i + 1];
        if (std::abs(v - contract.q_min[i + 1]) <= vtol) v = contract.q_min[i + 1];
        s.trajectory.volumes[i + 1] = v;
        s.trajectory.exercises[i] = v - s.trajectory.volumes[i];
    }
    annotate_solution(s, curve, base);
    return s;
}

}  // namespace storval
