#include "storval/intrinsic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace storval {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Lattice {
    std::vector<double> levels;
    double spacing = 0.0;

    std::size_t nearest(double v) const {
        if (levels.size() == 1 || spacing == 0.0) return 0;
        const double x = std::round((v - levels.front()) / spacing);
        return static_cast<std::size_t>(std::clamp(x, 0.0, static_cast<double>(levels.size() - 1)));
    }
};

Lattice make_lattice(const StorageContract& c, std::size_t n_levels) {
    const double lo = *std::min_element(c.q_min.begin(), c.q_min.end());
    const double hi = *std::max_element(c.q_max.begin(), c.q_max.end());
    Lattice l;
    if (hi - lo <= c.volume_tolerance()) {
        l.levels = {lo};
        return l;
    }
    l.spacing = (hi - lo) / static_cast<double>(n_levels - 1);
    l.levels.resize(n_levels);
    for (std::size_t j = 0; j < n_levels; ++j)
        l.levels[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(n_levels - 1);
    l.levels.back() = hi;
    return l;
}

}  // namespace

IntrinsicSolution solve_dp(const StorageContract& contract, const ForwardCurve& curve,
                           std::size_t n_volume_levels) {
    if (n_volume_levels < 2) throw std::invalid_argument("solve_dp needs at least 2 volume levels");
    require_valid(contract);
    const std::size_t n = contract.grid.n_steps();
    if (curve.size() != n) throw std::invalid_argument("curve and contract grids differ");

    const Lattice lat = make_lattice(contract, n_volume_levels);
    const std::size_t L = lat.levels.size();
    const double h = lat.spacing;
    const double dt = contract.grid.dt();
    const double vtol = contract.volume_tolerance();

    auto allowed = [&](std::size_t node, std::size_t j) {
        const double v = lat.levels[j];
        return v >= contract.q_min[node] - vtol && v <= contract.q_max[node] + vtol;
    };

    // admissible lattice moves per (step, level)
    struct Moves {
        long lo = 0, hi = 0;
    };
    auto moves = [&](std::size_t step, std::size_t j) -> Moves {
        if (h == 0.0) return {0, 0};
        const RateLimits r = contract.rate_for(step, lat.levels[j]);
        const double up = r.r_max * dt / h;
        const double down = r.r_min * dt / h;
        if ((up > 0.0 && up < 1.0 - 1e-9) || (down < 0.0 && down > -1.0 + 1e-9))
            throw std::invalid_argument("refine lattice: volume spacing exceeds rate * dt");
        return {static_cast<long>(std::ceil(down - 1e-9)), static_cast<long>(std::floor(up + 1e-9))};
    };

    std::vector<double> next(L, kNegInf), cur(L);
    std::vector<std::size_t> next_term(L), cur_term(L);
    std::vector<std::vector<long>> choice(n, std::vector<long>(L, 0));

    if (contract.is_fixed_terminal()) {
        const std::size_t target = lat.nearest(contract.q_end());
        next[target] = 0.0;
    } else {
        for (std::size_t j = 0; j < L; ++j)
            if (allowed(n, j)) next[j] = lat.levels[j] * contract.residual_price();
    }
    for (std::size_t j = 0; j < L; ++j) next_term[j] = j;

    for (std::size_t i = n; i-- > 0;) {
        const double f = curve[i];
        const double carry = contract.carry_cost[i] * dt;
        for (std::size_t j = 0; j < L; ++j) {
            cur[j] = kNegInf;
            cur_term[j] = j;
            if (!allowed(i, j)) continue;
            const Moves m = moves(i, j);
            long best_k = 0;
            for (long k = m.lo; k <= m.hi; ++k) {
                const long t = static_cast<long>(j) + k;
                if (t < 0 || t >= static_cast<long>(L)) continue;
                const auto jt = static_cast<std::size_t>(t);
                if (next[jt] == kNegInf || !allowed(i + 1, jt)) continue;
                const double dq = lat.levels[jt] - lat.levels[j];
                const double v = next[jt] - dq * f - contract.gamma_inj * std::max(dq, 0.0) -
                                 contract.gamma_rel * std::max(-dq, 0.0) - carry * lat.levels[jt];
                bool take = false;
                if (cur[j] == kNegInf) {
                    take = true;
                } else {
                    const double eps = 1e-10 * (1.0 + std::abs(v));
                    if (v > cur[j] + eps)
                        take = true;
                    else if (v >= cur[j] - eps) {
                        if (next_term[jt] < cur_term[j])
                            take = true;
                        else if (next_term[jt] == cur_term[j] && std::labs(k) < std::labs(best_k))
                            take = true;
                    }
                }
                if (take) {
                    cur[j] = v;
                    cur_term[j] = next_term[jt];
                    best_k = k;
                }
            }
            choice[i][j] = best_k;
        }
        std::swap(cur, next);
        std::swap(cur_term, next_term);
    }

    const std::size_t start = lat.nearest(contract.q_start);
    if (next[start] == kNegInf) throw std::runtime_error("unreachable terminal volume");

    IntrinsicSolution s;
    s.method = SolveMethod::dp;
    s.trajectory = Trajectory{contract.grid, std::vector<double>(n + 1), std::vector<double>(n)};
    std::size_t j = start;
    s.trajectory.volumes[0] = lat.levels[j];
    for (std::size_t i = 0; i < n; ++i) {
        j = static_cast<std::size_t>(static_cast<long>(j) + choice[i][j]);
        double v = lat.levels[j];
        // land exactly on the bound when the lattice level is within rounding of it
        if (std::abs(v - contract.q_max[i + 1]) <= vtol) v = contract.q_max[i + 1];
        if (std::abs(v - contract.q_min[i + 1]) <= vtol) v = contract.q_min[i + 1];
        s.trajectory.volumes[i + 1] = v;
        s.trajectory.exercises[i] = v - s.trajectory.volumes[i];
    }
    annotate_solution(s, curve, contract);
    return s;
}

}  // namespace storval
