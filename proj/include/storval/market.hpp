#pragma once

#include "storval/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace storval {

/// Uniform time grid on [t_start, t_end] with n_steps intervals (years).
class TimeGrid {
public:
    TimeGrid() = default;
    TimeGrid(double t_start, double t_end, std::size_t n_steps);

    double t_start() const { return t_start_; }
    double t_end() const { return t_end_; }
    std::size_t n_steps() const { return n_steps_; }
    double dt() const { return (t_end_ - t_start_) / static_cast<double>(n_steps_); }
    double time(std::size_t i) const { return t_start_ + dt() * static_cast<double>(i); }

    /// Grid covering steps [first, n_steps) of this grid.
    TimeGrid tail(std::size_t first) const;

    bool operator==(const TimeGrid&) const = default;

private:
    double t_start_ = 0.0;
    double t_end_ = 1.0;
    std::size_t n_steps_ = 1;
};

/// Forward prices by delivery step; prices[j] is the price for delivery in step j.
class ForwardCurve {
public:
    ForwardCurve() = default;
    ForwardCurve(TimeGrid grid, std::vector<double> prices);

    const TimeGrid& grid() const { return grid_; }
    std::span<const double> prices() const { return prices_; }
    double operator[](std::size_t j) const { return prices_[j]; }
    std::size_t size() const { return prices_.size(); }

    ForwardCurve tail(std::size_t first) const;

private:
    TimeGrid grid_;
    std::vector<double> prices_;
};

/// Evolution of a forward curve across observation steps.
/// curves[i] is observed at step i and covers deliveries i..n_steps-1.
struct ForwardSurface {
    TimeGrid grid;
    std::vector<ForwardCurve> curves;

    std::size_t n_observations() const { return curves.size(); }
};

struct SpotPath {
    TimeGrid grid;
    std::vector<double> prices;
};

/// One-factor mean-reverting lognormal forward model: dF/F = sigma e^{-alpha (T-t)} dW.
struct OneFactorParams {
    double sigma = 0.0;
    double alpha = 0.0;

    void validate() const;
    double vol_at(double time_to_delivery) const;
};

/// Log-Euler martingale step of every delivery bucket over dt. The front bucket
/// (delivery at the current observation) is dropped from the result.
ForwardCurve evolve_forward_curve(const ForwardCurve& curve, const OneFactorParams& params,
                                  double z, double dt);

/// One surface per scenario. Scenario k uses the random stream (seed, k) only, so it
/// is identical for any n_scenarios > k.
std::vector<ForwardSurface> generate_scenarios(const ForwardCurve& curve0,
                                               const OneFactorParams& params,
                                               std::size_t n_scenarios, std::uint64_t seed);

ForwardSurface generate_scenario(const ForwardCurve& curve0, const OneFactorParams& params,
                                 std::uint64_t seed, std::uint64_t scenario);

SpotPath spot_path(const ForwardSurface& surface);

/// Relative standard deviation of the spot price at horizon t under the one-factor model.
double relative_spot_variation(const OneFactorParams& params, double t);

struct MartingaleDiagnostic {
    std::vector<double> initial;    // F(0, T) per bucket
    std::vector<double> mean;       // mean of F(T, T) over scenarios
    std::vector<double> std_error;
    std::vector<double> z_score;
    std::vector<std::size_t> flagged;   // buckets with |z| > threshold
    double max_abs_z = 0.0;
};

/// Compares the last observed price of each bucket, F(T, T), with F(0, T).
MartingaleDiagnostic martingale_diagnostic(std::span<const ForwardSurface> scenarios,
                                           double threshold = 3.0);

/// Same test fed directly with spot paths (all sharing the initial curve).
MartingaleDiagnostic martingale_diagnostic(const ForwardCurve& initial,
                                           std::span<const SpotPath> paths,
                                           double threshold = 3.0);

/// Spot path F(t_i, t_i) sampled directly without materialising the surface.
/// Uses the same draws as generate_scenario for the same (seed, scenario).
SpotPath simulate_spot_path(const ForwardCurve& curve0, const OneFactorParams& params,
                            std::uint64_t seed, std::uint64_t scenario);

/// Same path driven by an explicit random stream.
SpotPath simulate_spot_path(const ForwardCurve& curve0, const OneFactorParams& params, const CounterRng& rng);

}  // namespace storval
