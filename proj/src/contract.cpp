#include "storval/contract.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace storval {

StorageContract StorageContract::simple(TimeGrid grid, double q_min, double q_max, double r_min,
                                        double r_max, double q_start, TerminalCondition terminal,
                                        double gamma_inj, double gamma_rel) {
    StorageContract c;
    c.grid = grid;
    c.q_min.assign(grid.n_steps() + 1, q_min);
    c.q_max.assign(grid.n_steps() + 1, q_max);
    c.rates = {RateBucket{q_min, r_min, r_max}};
    c.gamma_inj = gamma_inj;
    c.gamma_rel = gamma_rel;
    c.carry_cost.assign(grid.n_steps(), 0.0);
    c.q_start = q_start;
    c.terminal = terminal;
    return c;
}

RateLimits StorageContract::rate_for(std::size_t /*step*/, double volume) const {
    if (rates.empty()) return {};
    if (rates.size() == 1) return {rates.front().r_min, rates.front().r_max};
    // last bucket whose lower edge is at or below the volume; the first bucket also
    // covers anything below its edge
    const RateBucket* chosen = &rates.front();
    const double tol = volume_tolerance();
    for (const auto& b : rates)
        if (b.volume_from <= volume + tol) chosen = &b;
    return {chosen->r_min, chosen->r_max};
}

bool StorageContract::has_carry() const {
    return std::any_of(carry_cost.begin(), carry_cost.end(), [](double g) { return g != 0.0; });
}

double StorageContract::q_end() const {
    if (const auto* f = std::get_if<FixedTerminal>(&terminal)) return f->q_end;
    throw std::logic_error("contract has a free terminal condition");
}

double StorageContract::residual_price() const {
    if (const auto* f = std::get_if<FreeTerminal>(&terminal)) return f->residual_price;
    return 0.0;
}

double StorageContract::volume_scale() const {
    double s = 1.0;
    for (double v : q_max) s = std::max(s, std::abs(v));
    for (double v : q_min) s = std::max(s, std::abs(v));
    return s;
}

namespace {

void add(std::vector<Violation>& out, std::string code, std::string message,
         std::optional<std::size_t> step = std::nullopt) {
    out.push_back({std::move(code), std::move(message), step});
}

struct RateExtremes {
    double widest_min = 0.0, widest_max = 0.0;      // most permissive
    double narrowest_min = 0.0, narrowest_max = 0.0;  // least permissive
};

RateExtremes rate_extremes(const StorageContract& c) {
    RateExtremes e;
    if (c.rates.empty()) return e;
    e.widest_min = e.narrowest_min = c.rates.front().r_min;
    e.widest_max = e.narrowest_max = c.rates.front().r_max;
    for (const auto& b : c.rates) {
        e.widest_min = std::min(e.widest_min, b.r_min);
        e.widest_max = std::max(e.widest_max, b.r_max);
        e.narrowest_min = std::max(e.narrowest_min, b.r_min);
        e.narrowest_max = std::min(e.narrowest_max, b.r_max);
    }
    return e;
}

}  // namespace

VolumeEnvelope forward_envelope(const StorageContract& c) {
    const std::size_t n = c.grid.n_steps();
    const double dt = c.grid.dt();
    VolumeEnvelope env{std::vector<double>(n + 1), std::vector<double>(n + 1)};
    env.lower[0] = env.upper[0] = c.q_start;
    for (std::size_t i = 0; i < n; ++i) {
        const RateLimits lo_rate = c.rate_for(i, env.lower[i]);
        const RateLimits up_rate = c.rate_for(i, env.upper[i]);
        env.lower[i + 1] = std::max(c.q_min[i + 1], env.lower[i] + lo_rate.r_min * dt);
        env.upper[i + 1] = std::min(c.q_max[i + 1], env.upper[i] + up_rate.r_max * dt);
    }
    return env;
}

VolumeEnvelope terminal_reachable_envelope(const StorageContract& c) {
    const std::size_t n = c.grid.n_steps();
    const double dt = c.grid.dt();
    VolumeEnvelope env{c.q_min, c.q_max};
    if (!c.is_fixed_terminal()) return env;
    const RateExtremes e = rate_extremes(c);
    env.lower[n] = env.upper[n] = c.q_end();
    for (std::size_t i = n; i-- > 0;) {
        env.lower[i] = std::max(c.q_min[i], env.lower[i + 1] - e.narrowest_max * dt);
        env.upper[i] = std::min(c.q_max[i], env.upper[i + 1] - e.narrowest_min * dt);
    }
    return env;
}

std::vector<Violation> validate_contract(const StorageContract& c) {
    std::vector<Violation> out;
    const std::size_t n = c.grid.n_steps();
    const double tol = c.volume_tolerance();

    bool bounds_ok = true;
    if (c.q_min.size() != n + 1 || c.q_max.size() != n + 1) {
        add(out, "bounds_length", "q_min and q_max need one value per grid node (n_steps + 1)");
        bounds_ok = false;
    } else {
        for (std::size_t i = 0; i <= n; ++i) {
            if (!std::isfinite(c.q_min[i]) || !std::isfinite(c.q_max[i])) {
                add(out, "bounds_not_finite", "volume bound is not finite", i);
                bounds_ok = false;
            } else if (c.q_min[i] > c.q_max[i]) {
                add(out, "bounds_crossed", "q_min exceeds q_max at node " + std::to_string(i), i);
                bounds_ok = false;
            }
        }
    }

    bool rates_ok = true;
    if (c.rates.empty()) {
        add(out, "rate_table_empty", "rate table has no buckets");
        rates_ok = false;
    }
    for (std::size_t b = 0; b < c.rates.size(); ++b) {
        const auto& r = c.rates[b];
        if (!std::isfinite(r.r_min) || !std::isfinite(r.r_max) || r.r_min > 0.0 || r.r_max < 0.0) {
            add(out, "rate_sign", "rate bucket " + std::to_string(b) + " needs r_min <= 0 <= r_max");
            rates_ok = false;
        }
        if (b > 0 && !(r.volume_from > c.rates[b - 1].volume_from)) {
            add(out, "rate_table_order", "rate buckets must have increasing volume_from");
            rates_ok = false;
        }
    }

    if (!(c.gamma_inj >= 0.0) || !(c.gamma_rel >= 0.0) || !std::isfinite(c.gamma_inj) ||
        !std::isfinite(c.gamma_rel))
        add(out, "cost_negative", "operating costs must be finite and non-negative");

    if (c.carry_cost.size() != n) {
        add(out, "carry_length", "carry cost needs one value per grid step");
    } else {
        for (std::size_t i = 0; i < n; ++i)
            if (!(c.carry_cost[i] >= 0.0) || !std::isfinite(c.carry_cost[i])) {
                add(out, "carry_negative", "carry cost must be finite and non-negative", i);
                break;
            }
    }

    if (const auto* f = std::get_if<FreeTerminal>(&c.terminal); f && !std::isfinite(f->residual_price))
        add(out, "residual_price_not_finite", "residual unit price is not finite");

    if (c.cycle && !(c.cycle->c_max > 0.0))
        add(out, "cycle_invalid", "cycle limit c_max must be positive");

    if (!bounds_ok) return out;

    if (!std::isfinite(c.q_start) || c.q_start < c.q_min[0] - tol || c.q_start > c.q_max[0] + tol)
        add(out, "start_out_of_bounds", "q_start outside [q_min, q_max] at node 0", 0);
    if (c.is_fixed_terminal()) {
        const double q_end = c.q_end();
        if (!std::isfinite(q_end) || q_end < c.q_min[n] - tol || q_end > c.q_max[n] + tol)
            add(out, "terminal_out_of_bounds", "q_end outside [q_min, q_max] at the last node", n);
    }
    if (!rates_ok || !out.empty()) return out;

    // reachable set is [lower, upper] per node when it stays inside the bounds
    const double dt = c.grid.dt();
    double lo = c.q_start, hi = c.q_start;
    for (std::size_t i = 0; i < n; ++i) {
        const double next_lo = lo + c.rate_for(i, lo).r_min * dt;
        const double next_hi = hi + c.rate_for(i, hi).r_max * dt;
        if (next_hi < c.q_min[i + 1] - tol || next_lo > c.q_max[i + 1] + tol) {
            add(out, "bounds_unreachable",
                "volume bounds at node " + std::to_string(i + 1) + " cannot be reached", i + 1);
            return out;
        }
        lo = std::max(c.q_min[i + 1], next_lo);
        hi = std::min(c.q_max[i + 1], next_hi);
    }
    if (c.is_fixed_terminal()) {
        const double q_end = c.q_end();
        if (q_end < lo - tol || q_end > hi + tol) {
            std::ostringstream msg;
            msg << "terminal volume " << q_end << " unreachable: reachable range is [" << lo << ", "
                << hi << "]";
            add(out, "terminal_unreachable", msg.str(), n);
        }
        if (c.cycle && c.cycle->c_max > 0.0) {
            const double forced = c.cycle->kind == CycleKind::intake ? std::max(0.0, q_end - c.q_start)
                                                                     : std::max(0.0, c.q_start - q_end);
            if (forced > c.cycle->c_max + tol)
                add(out, "cycle_infeasible", "cycle limit is below the volume forced by the terminal condition");
        }
    }
    return out;
}

void require_valid(const StorageContract& contract) {
    const auto v = validate_contract(contract);
    if (v.empty()) return;
    std::string msg = "invalid contract:";
    for (const auto& x : v) msg += " [" + x.code + "] " + x.message + ";";
    throw std::invalid_argument(msg);
}

}  // namespace storval
