#include "storval/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace storval {

namespace {

double total_carry(const StorageContract& c) {
    double total = 0.0;
    for (double g : c.carry_cost) total += g * c.grid.dt();
    return total;
}

bool degenerate(const TriggerBand& b) {
    const double scale = 1.0 + std::max(std::abs(b.c_lo), std::abs(b.c_hi));
    return std::isfinite(b.width()) && b.width() <= 1e-12 * scale;
}

double operating_cost(double rate, const StorageContract& c) {
    return c.gamma_inj * std::max(rate, 0.0) + c.gamma_rel * std::max(-rate, 0.0);
}

}  // namespace

SensitivityReport sensitivities(const IntrinsicSolution& solution, const ForwardCurve& curve,
                                const StorageContract& contract) {
    if (solution.bands.empty()) throw std::invalid_argument("solution carries no trigger bands");
    const std::size_t n = contract.grid.n_steps();
    SensitivityReport r;
    r.first_band = solution.first_band();
    r.final_band = solution.final_band();

    // trigger at the horizon in original prices
    const double shift = total_carry(contract);
    const Range final_c{r.final_band.c_lo + shift, r.final_band.c_hi + shift};
    const double c_end = r.final_band.representative() + shift;
    const double c_start = r.first_band.representative();

    if (contract.is_fixed_terminal()) {
        r.dS_dq_end = -c_end;
        r.q_end_range = {-final_c.hi, -final_c.lo};
    } else {
        const double fe = contract.residual_price();
        r.dS_dq_end = fe - c_end;
        r.q_end_range = {fe - final_c.hi, fe - final_c.lo};
    }
    r.dS_dq_start = c_start;
    r.q_start_range = {r.first_band.c_lo, r.first_band.c_hi};

    const double rate = solution.trajectory.exercises[n - 1] / contract.grid.dt();
    const double f_end = curve[n - 1];
    r.dS_dt_end = rate == 0.0 ? 0.0 : rate * (c_end - f_end) - operating_cost(rate, contract);
    if (rate == 0.0) {
        r.t_end_range = {0.0, 0.0};
    } else {
        const double a = rate * (final_c.lo - f_end) - operating_cost(rate, contract);
        const double b = rate * (final_c.hi - f_end) - operating_cost(rate, contract);
        r.t_end_range = {std::min(a, b), std::max(a, b)};
    }
    r.q_end_one_sided = !degenerate(r.final_band);
    r.q_start_one_sided = !degenerate(r.first_band);
    r.t_end_one_sided = rate != 0.0 && r.q_end_one_sided;
    return r;
}

std::vector<std::size_t> trigger_crossings(const IntrinsicSolution& solution, const ForwardCurve& curve) {
    const std::size_t n = curve.size();
    for (const auto& t : solution.touches)
        if (t.node > 0 && t.node < n)
            throw std::invalid_argument("trigger variation needs a solution without interior touches");
    if (solution.bands.size() != 1) throw std::invalid_argument("trigger variation needs a single-segment solution");
    const double c = solution.bands.front().representative();
    if (!std::isfinite(c)) throw std::invalid_argument("trigger undetermined by first order");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i + 1 < n; ++i)
        if ((curve[i] - c) * (curve[i + 1] - c) <= 0.0) out.push_back(i);
    return out;
}

double trigger_variation(const IntrinsicSolution& solution, const ForwardCurve& curve,
                         std::span<const double> bump) {
    if (bump.size() != curve.size()) throw std::invalid_argument("bump needs one value per curve step");
    const auto crossings = trigger_crossings(solution, curve);
    if (crossings.empty()) throw std::runtime_error("trigger undetermined by first order");

    // The delta functions of the continuous formula become crossing sums; a crossing's
    // weight is the inverse price slope there. The common rate span and dt cancel.
    double scale = 1.0;
    for (double f : curve.prices()) scale = std::max(scale, std::abs(f));
    const double min_slope = 1e-12 * scale;
    double num = 0.0, den = 0.0;
    for (std::size_t i : crossings) {
        const double w = 1.0 / std::max(std::abs(curve[i + 1] - curve[i]), min_slope);
        num += w * 0.5 * (bump[i] + bump[i + 1]);
        den += w;
    }
    return num / den;
}

}  // namespace storval
