#include "storval/market.hpp"

#include "storval/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace storval {

TimeGrid::TimeGrid(double t_start, double t_end, std::size_t n_steps)
    : t_start_(t_start), t_end_(t_end), n_steps_(n_steps) {
    if (!std::isfinite(t_start) || !std::isfinite(t_end) || !(t_end > t_start))
        throw std::invalid_argument("time grid requires finite t_end > t_start");
    if (n_steps == 0) throw std::invalid_argument("time grid requires n_steps >= 1");
}

TimeGrid TimeGrid::tail(std::size_t first) const {
    if (first >= n_steps_) throw std::out_of_range("time grid tail past last step");
    return TimeGrid(time(first), t_end_, n_steps_ - first);
}

ForwardCurve::ForwardCurve(TimeGrid grid, std::vector<double> prices)
    : grid_(grid), prices_(std::move(prices)) {
    if (prices_.size() != grid_.n_steps())
        throw std::invalid_argument("forward curve needs one price per grid step (got " +
                                    std::to_string(prices_.size()) + ", expected " +
                                    std::to_string(grid_.n_steps()) + ")");
    for (std::size_t j = 0; j < prices_.size(); ++j)
        if (!std::isfinite(prices_[j]))
            throw std::invalid_argument("forward curve price at step " + std::to_string(j) +
                                        " is not finite");
}

ForwardCurve ForwardCurve::tail(std::size_t first) const {
    return ForwardCurve(grid_.tail(first),
                        std::vector<double>(prices_.begin() + static_cast<std::ptrdiff_t>(first),
                                            prices_.end()));
}

void OneFactorParams::validate() const {
    if (!std::isfinite(sigma) || sigma < 0.0)
        throw std::invalid_argument("sigma must be finite and non-negative");
    if (!std::isfinite(alpha) || alpha < 0.0)
        throw std::invalid_argument("alpha must be finite and non-negative");
}

double OneFactorParams::vol_at(double time_to_delivery) const {
    return sigma * std::exp(-alpha * time_to_delivery);
}

ForwardCurve evolve_forward_curve(const ForwardCurve& curve, const OneFactorParams& params,
                                  double z, double dt) {
    if (!std::isfinite(z)) throw std::invalid_argument("normal draw is not finite");
    if (!std::isfinite(dt) || !(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (curve.size() < 2) throw std::invalid_argument("no delivery bucket survives the step");

    const double sqrt_dt = std::sqrt(dt);
    const double step = curve.grid().dt();
    std::vector<double> next(curve.size() - 1);
    for (std::size_t j = 1; j < curve.size(); ++j) {
        const double vol = params.vol_at(step * static_cast<double>(j));
        next[j - 1] = curve[j] * std::exp(vol * sqrt_dt * z - 0.5 * vol * vol * dt);
    }
    return ForwardCurve(curve.grid().tail(1), std::move(next));
}

ForwardSurface generate_scenario(const ForwardCurve& curve0, const OneFactorParams& params,
                                 std::uint64_t seed, std::uint64_t scenario) {
    params.validate();
    const CounterRng rng(seed, scenario);
    ForwardSurface surface{curve0.grid(), {}};
    surface.curves.reserve(curve0.size());
    surface.curves.push_back(curve0);
    const double dt = curve0.grid().dt();
    for (std::size_t i = 1; i < curve0.size(); ++i)
        surface.curves.push_back(
            evolve_forward_curve(surface.curves.back(), params, rng.normal(i - 1), dt));
    return surface;
}

std::vector<ForwardSurface> generate_scenarios(const ForwardCurve& curve0,
                                               const OneFactorParams& params,
                                               std::size_t n_scenarios, std::uint64_t seed) {
    if (n_scenarios == 0) throw std::invalid_argument("n_scenarios must be >= 1");
    std::vector<ForwardSurface> out;
    out.reserve(n_scenarios);
    for (std::size_t k = 0; k < n_scenarios; ++k)
        out.push_back(generate_scenario(curve0, params, seed, k));
    return out;
}

SpotPath spot_path(const ForwardSurface& surface) {
    SpotPath path{surface.grid, {}};
    path.prices.reserve(surface.curves.size());
    for (const auto& c : surface.curves) path.prices.push_back(c[0]);
    return path;
}

SpotPath simulate_spot_path(const ForwardCurve& curve0, const OneFactorParams& params,
                            std::uint64_t seed, std::uint64_t scenario) {
    return simulate_spot_path(curve0, params, CounterRng(seed, scenario));
}

SpotPath simulate_spot_path(const ForwardCurve& curve0, const OneFactorParams& params, const CounterRng& rng) {
    params.validate();
    const double dt = curve0.grid().dt();
    const double decay = std::exp(-params.alpha * dt);
    const double sqrt_dt = std::sqrt(dt);

    // Shock and variance accumulated by the bucket delivering at the current step:
    // shock_k = sum_{m<k} e^{-alpha (k-m) dt} z_m, var_k = sum_{m<k} e^{-2 alpha (k-m) dt} dt.
    double shock = 0.0;
    double var = 0.0;
    SpotPath path{curve0.grid(), std::vector<double>(curve0.size())};
    path.prices[0] = curve0[0];
    for (std::size_t k = 1; k < curve0.size(); ++k) {
        shock = decay * (shock + rng.normal(k - 1));
        var = decay * decay * (var + dt);
        const double s = params.sigma;
        path.prices[k] = curve0[k] * std::exp(s * sqrt_dt * shock - 0.5 * s * s * var);
    }
    return path;
}

double relative_spot_variation(const OneFactorParams& params, double t) {
    params.validate();
    if (!(t >= 0.0)) throw std::invalid_argument("t must be non-negative");
    const double s2 = params.sigma * params.sigma;
    // alpha -> 0 limit of s2/(2 alpha) (1 - e^{-2 alpha t}) is s2 t; expm1 keeps small alpha exact
    const double integrated =
        params.alpha * t < 1e-12 ? s2 * t : -s2 * std::expm1(-2.0 * params.alpha * t) / (2.0 * params.alpha);
    return std::sqrt(std::expm1(integrated));
}

namespace {

MartingaleDiagnostic summarise(const ForwardCurve& initial,
                               const std::vector<std::vector<double>>& samples, double threshold) {
    const std::size_t n = initial.size();
    MartingaleDiagnostic d;
    d.initial.assign(initial.prices().begin(), initial.prices().end());
    d.mean.resize(n);
    d.std_error.resize(n);
    d.z_score.resize(n);
    const double m = static_cast<double>(samples.size());
    for (std::size_t j = 0; j < n; ++j) {
        double mean = 0.0;
        for (const auto& s : samples) mean += s[j];
        mean /= m;
        double ss = 0.0;
        for (const auto& s : samples) ss += (s[j] - mean) * (s[j] - mean);
        const double se = std::sqrt(ss / (m - 1.0) / m);
        d.mean[j] = mean;
        d.std_error[j] = se;
        const double diff = mean - d.initial[j];
        d.z_score[j] = se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff));
        d.max_abs_z = std::max(d.max_abs_z, std::abs(d.z_score[j]));
        if (std::abs(d.z_score[j]) > threshold) d.flagged.push_back(j);
    }
    return d;
}

}  // namespace

MartingaleDiagnostic martingale_diagnostic(std::span<const ForwardSurface> scenarios,
                                           double threshold) {
    if (scenarios.size() < 2) throw std::invalid_argument("martingale diagnostic needs >= 2 scenarios");
    std::vector<std::vector<double>> samples;
    samples.reserve(scenarios.size());
    for (const auto& s : scenarios) samples.push_back(spot_path(s).prices);
    return summarise(scenarios.front().curves.front(), samples, threshold);
}

MartingaleDiagnostic martingale_diagnostic(const ForwardCurve& initial,
                                           std::span<const SpotPath> paths, double threshold) {
    if (paths.size() < 2) throw std::invalid_argument("martingale diagnostic needs >= 2 paths");
    std::vector<std::vector<double>> samples;
    samples.reserve(paths.size());
    for (const auto& p : paths) samples.push_back(p.prices);
    return summarise(initial, samples, threshold);
}

}  // namespace storval
