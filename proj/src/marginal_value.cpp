#include "storval/intrinsic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>

namespace storval {

namespace {

struct Piece {
    double length;
    double slope;
};

// Concave piecewise-linear function on [lo, lo + sum of lengths], pieces in decreasing slope.
struct ConcavePL {
    double lo = 0.0;
    double value_lo = 0.0;
    std::vector<Piece> pieces;

    double hi() const {
        double h = lo;
        for (const auto& p : pieces) h += p.length;
        return h;
    }

    void add_linear(double slope) {
        value_lo += slope * lo;
        for (auto& p : pieces) p.slope += slope;
    }

    // keep only [a, b]; returns false if the intersection is empty
    bool restrict(double a, double b, double tol) {
        const double h = hi();
        if (a > h + tol || b < lo - tol || a > b + tol) return false;
        // trim left
        std::size_t k = 0;
        while (lo < a && k < pieces.size()) {
            const double take = std::min(pieces[k].length, a - lo);
            value_lo += take * pieces[k].slope;
            lo += take;
            pieces[k].length -= take;
            if (pieces[k].length <= 0.0) ++k;
        }
        pieces.erase(pieces.begin(), pieces.begin() + static_cast<std::ptrdiff_t>(k));
        if (lo < a) lo = std::min(a, h);  // a sits beyond hi within tolerance
        // trim right
        double end = hi();
        while (end > b && !pieces.empty()) {
            const double cut = std::min(pieces.back().length, end - b);
            pieces.back().length -= cut;
            end -= cut;
            if (pieces.back().length <= 0.0) pieces.pop_back();
        }
        return true;
    }
};

// sup-convolution with a one-step exercise function: its (at most two) pieces are
// inserted at their slope rank, fusing with an equal slope already present
void insert_piece(std::vector<Piece>& pieces, Piece p) {
    if (p.length <= 0.0) return;
    auto it = std::lower_bound(pieces.begin(), pieces.end(), p.slope,
                               [](const Piece& a, double slope) { return a.slope > slope; });
    if (it != pieces.end() && it->slope == p.slope)
        it->length += p.length;
    else
        pieces.insert(it, p);
}

// Read-only view of a stored value-to-go function.
struct PLView {
    double lo;
    double hi;
    std::span<const Piece> pieces;
};

// slope just right / left of x (x inside the domain)
double right_slope(const PLView& f, double x, double& piece_end) {
    double pos = f.lo;
    for (const auto& p : f.pieces) {
        if (x < pos + p.length) {
            piece_end = pos + p.length;
            return p.slope;
        }
        pos += p.length;
    }
    piece_end = pos;
    return -std::numeric_limits<double>::infinity();
}

double left_slope(const PLView& f, double x, double& piece_start) {
    double pos = f.hi;
    for (auto it = f.pieces.rbegin(); it != f.pieces.rend(); ++it) {
        if (x > pos - it->length) {
            piece_start = pos - it->length;
            return it->slope;
        }
        pos -= it->length;
    }
    piece_start = pos;
    return std::numeric_limits<double>::infinity();
}

}  // namespace

Trajectory marginal_value_trajectory(const StorageContract& contract, const ForwardCurve& curve) {
    require_valid(contract);
    if (contract.has_volume_dependent_rates())
        throw std::invalid_argument("volume-dependent rates need the lattice solver");
    const std::size_t n = contract.grid.n_steps();
    if (curve.size() != n) throw std::invalid_argument("curve and contract grids differ");
    const double dt = contract.grid.dt();
    const double vtol = contract.volume_tolerance();
    const RateLimits r = contract.rate_for(0, contract.q_start);
    const double up = r.r_max * dt;
    const double down = r.r_min * dt;

    // value-to-go after each step's carry, as a function of the end-of-step volume;
    // snapshots share one piece buffer
    struct Snapshot {
        double lo, hi;
        std::size_t begin, end;
    };
    std::vector<Snapshot> after(n);
    std::vector<Piece> store;
    store.reserve(8 * n);
    ConcavePL v;
    if (contract.is_fixed_terminal()) {
        v.lo = contract.q_end();
    } else {
        v.lo = contract.q_min[n];
        v.value_lo = contract.residual_price() * v.lo;
        if (contract.q_max[n] > v.lo) v.pieces.push_back({contract.q_max[n] - v.lo, contract.residual_price()});
    }
    for (std::size_t i = n; i-- > 0;) {
        v.add_linear(-contract.carry_cost[i] * dt);
        after[i] = {v.lo, v.hi(), store.size(), store.size() + v.pieces.size()};
        store.insert(store.end(), v.pieces.begin(), v.pieces.end());
        // h(y) with y = q - q': injecting |y| costs F + gamma_inj per unit, releasing earns F - gamma_rel
        v.lo -= up;
        v.value_lo -= (curve[i] + contract.gamma_inj) * up;
        insert_piece(v.pieces, {up, curve[i] + contract.gamma_inj});
        insert_piece(v.pieces, {-down, curve[i] - contract.gamma_rel});
        if (!v.restrict(contract.q_min[i], contract.q_max[i], vtol))
            throw std::runtime_error("unreachable terminal volume");
    }
    if (contract.q_start < v.lo - vtol || contract.q_start > v.hi() + vtol)
        throw std::runtime_error("unreachable terminal volume");

    double scale = 1.0;
    for (double f : curve.prices()) scale = std::max(scale, std::abs(f));
    const double ptol = 1e-12 * (scale + contract.gamma_inj + contract.gamma_rel);

    Trajectory t{contract.grid, std::vector<double>(n + 1), std::vector<double>(n)};
    double q = contract.q_start;
    t.volumes[0] = q;
    for (std::size_t i = 0; i < n; ++i) {
        const PLView w{after[i].lo, after[i].hi,
                       std::span<const Piece>(store).subspan(after[i].begin, after[i].end - after[i].begin)};
        const double a = std::max(q + down, w.lo);
        const double b = std::min(q + up, w.hi);
        double next = std::clamp(q, a, b);
        const double inject_edge = curve[i] + contract.gamma_inj;
        const double release_edge = curve[i] - contract.gamma_rel;
        bool moved = false;
        // inject while the marginal value of storage beats the purchase cost
        while (next < b - vtol * 1e-3) {
            double end = 0.0;
            if (right_slope(w, next, end) <= inject_edge + ptol) break;
            next = std::min(end, b);
            moved = true;
        }
        if (!moved && next <= q) {
            while (next > a + vtol * 1e-3) {
                double start = 0.0;
                if (left_slope(w, next, start) >= release_edge - ptol) break;
                next = std::max(start, a);
            }
        }
        for (double bound : {contract.q_min[i + 1], contract.q_max[i + 1]})
            if (std::abs(next - bound) <= vtol) next = bound;
        t.volumes[i + 1] = next;
        t.exercises[i] = next - q;
        q = next;
    }
    if (contract.is_fixed_terminal()) {
        t.exercises[n - 1] += contract.q_end() - q;
        t.volumes[n] = contract.q_end();
    }
    return t;
}

IntrinsicSolution solve_marginal_value(const StorageContract& contract, const ForwardCurve& curve) {
    IntrinsicSolution s;
    s.method = SolveMethod::trigger;
    s.trajectory = marginal_value_trajectory(contract, curve);
    annotate_solution(s, curve, contract);
    return s;
}

}  // namespace storval
