#include "storval/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace storval {

namespace {

double pairwise_sum(std::span<const double> x) {
    if (x.size() <= 8) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    const std::size_t half = x.size() / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

IntrinsicSolution solve_exact(const StorageContract& c, const ForwardCurve& f) {
    if (c.has_volume_dependent_rates()) return solve_trigger(c, f);
    return solve_marginal_value(c, f);
}

std::uint64_t inner_seed(std::uint64_t seed, std::size_t step) {
    return seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(step) + 1));
}

struct ScenarioResult {
    double pnl = 0.0;
    std::vector<double> path;
    std::vector<DecisionRecord> decisions;
    std::size_t inner_solves = 0;
};

double operating_cost(const StorageContract& c, double dq) {
    return c.gamma_inj * std::max(dq, 0.0) + c.gamma_rel * std::max(-dq, 0.0);
}

// Switches to the neighbouring regime (inject or release <-> idle) when the spot is
// within eps of the dead-zone edge separating them.
double forced_wrong_rate(double rate, double spot, double trigger, const StorageContract& c, std::size_t i,
                         double q, double eps) {
    const double inj_edge = trigger - c.gamma_inj;
    const double rel_edge = trigger + c.gamma_rel;
    const RateLimits r = c.rate_for(i, q);
    double wrong = 0.0;
    double distance = 0.0;
    if (spot < inj_edge) {
        distance = inj_edge - spot;
    } else if (spot > rel_edge) {
        distance = spot - rel_edge;
    } else if (spot - inj_edge < rel_edge - spot) {
        distance = spot - inj_edge;
        wrong = r.r_max;
    } else {
        distance = rel_edge - spot;
        wrong = r.r_min;
    }
    if (distance >= eps) return rate;
    const double next = std::clamp(q + wrong * c.grid.dt(), c.q_min[i + 1], c.q_max[i + 1]);
    return (next - q) / c.grid.dt();
}

ScenarioResult run_scenario(const SimulationConfig& cfg, std::size_t k, const VolumeEnvelope& env) {
    const StorageContract& c = cfg.contract;
    const std::size_t n = c.grid.n_steps();
    const double dt = c.grid.dt();
    const double vtol = c.volume_tolerance();
    const ForwardSurface surface = generate_scenario(cfg.curve, cfg.params, cfg.seed, k);

    ScenarioResult out;
    out.decisions.reserve(n);
    if (cfg.record_paths) out.path.reserve(n + 1);
    PortfolioLedger ledger(c.q_start);
    std::size_t step = 0;
    try {
        for (; step < n; ++step) {
            const std::size_t i = step;
            const double q = ledger.storage_volume();
            const StorageContract rc = remaining_contract(c, i, q);
            const auto observed = surface.curves[i].prices();
            const ForwardCurve now(rc.grid, std::vector<double>(observed.begin(), observed.end()));
            const double spot = now[0];
            ledger.settle(i, spot);

            const IntrinsicSolution sol = solve_exact(rc, now);
            if (cfg.record_paths) out.path.push_back(ledger.mark_to_market(now, i) + sol.value);
            const double c_intr = sol.first_band().representative();
            const double hint = sol.trajectory.exercises[0] / dt;

            double trigger = c_intr;
            if (cfg.policy == ExercisePolicy::stochastic_trigger) {
                trigger = stochastic_trigger(now, q, rc, cfg.params, cfg.inner_paths, inner_seed(cfg.seed, i), k);
                out.inner_solves += cfg.inner_paths;
            }

            const double lo = env.lower[i + 1] - q;
            const double hi = env.upper[i + 1] - q;
            auto clip = [&](double rate) { return std::clamp(rate * dt, std::min(lo, hi), hi); };

            double rate = prompt_exercise(spot, trigger, c, i, q, hint);
            if (cfg.force_wrong_below > 0.0) rate = forced_wrong_rate(rate, spot, trigger, c, i, q, cfg.force_wrong_below);
            const double dq = clip(rate);
            const double dq_intr = clip(prompt_exercise(spot, c_intr, c, i, q, hint));

            DecisionRecord d;
            d.scenario = k;
            d.step = i;
            d.spot = spot;
            d.trigger = trigger;
            d.intrinsic_trigger = c_intr;
            d.exercise = dq;
            d.intrinsic_exercise = dq_intr;
            d.divergent = std::abs(dq - dq_intr) > vtol;
            out.decisions.push_back(d);

            ledger.trade_spot(i, dq, spot);
            ledger.charge(operating_cost(c, dq) + c.carry_cost[i] * ledger.storage_volume() * dt);

            if (cfg.hedging == HedgePolicy::rolling_intrinsic && i + 1 < n) {
                if (std::abs(dq - sol.trajectory.exercises[0]) <= vtol) {
                    rebalance_hedge(ledger, i, sol.trajectory, now);
                } else {
                    // prompt exercise left the intrinsic plan: hedge the plan from the new volume
                    const StorageContract next_c = remaining_contract(c, i + 1, ledger.storage_volume());
                    const auto rest = now.prices().subspan(1);
                    const IntrinsicSolution next =
                        solve_exact(next_c, ForwardCurve(next_c.grid, std::vector<double>(rest.begin(), rest.end())));
                    Trajectory profile = sol.trajectory;
                    profile.exercises[0] = dq;
                    std::copy(next.trajectory.exercises.begin(), next.trajectory.exercises.end(),
                              profile.exercises.begin() + 1);
                    rebalance_hedge(ledger, i, profile, now);
                }
            }
        }
        if (const auto* f = std::get_if<FreeTerminal>(&c.terminal))
            ledger.trade_spot(n, -ledger.storage_volume(), f->residual_price);
    } catch (const std::exception& e) {
        throw std::runtime_error("scenario " + std::to_string(k) + ", step " + std::to_string(step) + ": " +
                                 e.what());
    }
    out.pnl = ledger.cash() - ledger.costs();
    if (cfg.record_paths) out.path.push_back(out.pnl);
    return out;
}

}  // namespace

const char* to_string(ExercisePolicy p) {
    return p == ExercisePolicy::intrinsic ? "intrinsic" : "stochastic_trigger";
}

const char* to_string(HedgePolicy h) { return h == HedgePolicy::rolling_intrinsic ? "rolling_intrinsic" : "none"; }

void PortfolioLedger::trade_spot(std::size_t step, double volume, double price) {
    log_.push_back({step, step, volume, price});
    cash_ -= volume * price;
    storage_volume_ += volume;
}

void PortfolioLedger::trade_forward(std::size_t obs_step, std::size_t delivery_step, double volume, double price) {
    if (delivery_step <= obs_step) throw std::invalid_argument("forward trade must deliver after the observation");
    log_.push_back({obs_step, delivery_step, volume, price});
    cash_ -= volume * price;
    forwards_[delivery_step] += volume;
}

void PortfolioLedger::settle(std::size_t obs_step, double spot) {
    while (!forwards_.empty() && forwards_.begin()->first <= obs_step) {
        const auto [delivery, position] = *forwards_.begin();
        log_.push_back({obs_step, delivery, -position, spot});
        cash_ -= -position * spot;
        forwards_.erase(forwards_.begin());
    }
}

double PortfolioLedger::mark_to_market(const ForwardCurve& curve_now, std::size_t obs_step) const {
    double v = cash_ - costs_;
    for (const auto& [delivery, position] : forwards_) {
        if (delivery < obs_step || delivery - obs_step >= curve_now.size())
            throw std::out_of_range("forward position outside the observed curve");
        v += position * curve_now[delivery - obs_step];
    }
    return v;
}

double PortfolioLedger::cash_from_log() const {
    double s = 0.0;
    for (const auto& t : log_) s -= t.volume * t.price;
    return s;
}

StorageContract remaining_contract(const StorageContract& contract, std::size_t step, double q_now) {
    const std::size_t n = contract.grid.n_steps();
    if (step >= n) throw std::out_of_range("no steps remain after node " + std::to_string(step));
    StorageContract c = contract;
    const auto cut = static_cast<std::ptrdiff_t>(step);
    c.grid = contract.grid.tail(step);
    c.q_min.assign(contract.q_min.begin() + cut, contract.q_min.end());
    c.q_max.assign(contract.q_max.begin() + cut, contract.q_max.end());
    c.carry_cost.assign(contract.carry_cost.begin() + cut, contract.carry_cost.end());
    c.q_start = q_now;
    c.cycle.reset();
    return c;
}

double stochastic_trigger(const ForwardCurve& curve_now, double q_now, const StorageContract& contract,
                          const OneFactorParams& params, std::size_t inner_paths, std::uint64_t seed,
                          std::uint64_t stream) {
    if (inner_paths == 0) throw std::invalid_argument("stochastic trigger needs at least one inner path");
    if (curve_now.size() != contract.grid.n_steps())
        throw std::invalid_argument("curve and remaining contract grids differ");
    StorageContract c = contract;
    c.q_start = q_now;
    std::vector<double> triggers(inner_paths);
    for (std::size_t j = 0; j < inner_paths; ++j) {
        SpotPath path = simulate_spot_path(curve_now, params, CounterRng(seed, stream, j + 1));
        triggers[j] = first_trigger(c, ForwardCurve(c.grid, std::move(path.prices)));
    }
    // centred on the first draw, so identical inner triggers average to that value exactly
    const double base = triggers.front();
    for (double& t : triggers) t -= base;
    return base + pairwise_sum(triggers) / static_cast<double>(inner_paths);
}

double prompt_exercise(double spot, double trigger, const StorageContract& contract, std::size_t step,
                       double q_now, std::optional<double> tie_hint_rate) {
    const RateLimits r = contract.rate_for(step, q_now);
    const double dt = contract.grid.dt();
    double rate = 0.0;
    if (!std::isfinite(trigger)) {
        rate = tie_hint_rate.value_or(0.0);
    } else {
        const double tol = 1e-9 * std::max({1.0, std::abs(spot), std::abs(trigger)});
        const bool on_edge = std::abs(spot - (trigger - contract.gamma_inj)) <= tol ||
                             std::abs(spot - (trigger + contract.gamma_rel)) <= tol;
        rate = on_edge && tie_hint_rate
                   ? *tie_hint_rate
                   : exercise_decision(spot, trigger, contract.gamma_inj, contract.gamma_rel, r.r_min, r.r_max);
    }
    const double next = std::clamp(q_now + rate * dt, contract.q_min[step + 1], contract.q_max[step + 1]);
    return (next - q_now) / dt;
}

std::vector<Trade> rebalance_hedge(PortfolioLedger& ledger, std::size_t obs_step, const Trajectory& profile,
                                   const ForwardCurve& curve_now) {
    if (profile.exercises.size() != curve_now.size())
        throw std::invalid_argument("hedge profile and curve lengths differ");
    std::vector<Trade> trades;
    const auto& pos = ledger.forward_position();
    for (std::size_t k = 1; k < profile.exercises.size(); ++k) {
        const std::size_t delivery = obs_step + k;
        const double target = profile.exercises[k];
        const auto it = pos.find(delivery);
        const double current = it == pos.end() ? 0.0 : it->second;
        const double diff = target - current;
        if (std::abs(diff) <= 1e-12 * std::max({1.0, std::abs(target), std::abs(current)})) continue;
        ledger.trade_forward(obs_step, delivery, diff, curve_now[k]);
        trades.push_back(ledger.trade_log().back());
    }
    return trades;
}

void SimulationConfig::validate() const {
    require_valid(contract);
    if (curve.size() != contract.grid.n_steps())
        throw std::invalid_argument("initial curve needs one price per contract step");
    params.validate();
    if (n_scenarios == 0) throw std::invalid_argument("simulation needs at least one scenario");
    if (policy == ExercisePolicy::stochastic_trigger && inner_paths == 0)
        throw std::invalid_argument("stochastic trigger policy needs inner_paths >= 1");
    if (contract.cycle) throw std::invalid_argument("cycle limits are not simulated");
    if (!(force_wrong_below >= 0.0)) throw std::invalid_argument("force_wrong_below must be non-negative");
}

MeanSe mean_and_se(std::span<const double> x) {
    if (x.empty()) return {};
    const double n = static_cast<double>(x.size());
    // centred on the first sample so that identical samples give an exact mean and zero spread
    std::vector<double> dev(x.begin(), x.end());
    for (double& v : dev) v -= x.front();
    const double mean = x.front() + pairwise_sum(dev) / n;
    if (x.size() == 1) return {mean, 0.0};
    std::vector<double> sq(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - mean) * (x[i] - mean);
    return {mean, std::sqrt(pairwise_sum(sq) / (n - 1.0)) / std::sqrt(n)};
}

SimulationReport run_simulation(const SimulationConfig& config) {
    config.validate();
    const VolumeEnvelope env = terminal_reachable_envelope(config.contract);
    SimulationReport report;
    report.policy = config.policy;
    report.hedging = config.hedging;
    report.seed = config.seed;
    report.intrinsic_value = solve_exact(config.contract, config.curve).value;

    const std::size_t n_scen = config.n_scenarios;
    std::size_t workers = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n_scen);
    std::vector<ScenarioResult> results(n_scen);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (std::size_t k = next++; k < n_scen; k = next++) {
            try {
                results[k] = run_scenario(config, k, env);
            } catch (...) {
                const std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n_scen;
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);

    report.terminal_pnl.reserve(n_scen);
    for (auto& r : results) {
        report.terminal_pnl.push_back(r.pnl);
        report.inner_solves += r.inner_solves;
        for (const auto& d : r.decisions) report.divergence_count += d.divergent;
        report.decision_count += r.decisions.size();
        report.decisions.insert(report.decisions.end(), r.decisions.begin(), r.decisions.end());
        if (config.record_paths) report.pnl_paths.push_back(std::move(r.path));
    }
    const MeanSe m = mean_and_se(report.terminal_pnl);
    report.mean = m.mean;
    report.std_error = m.se;
    report.time_value = report.mean - report.intrinsic_value;
    return report;
}

LossStats pnl_loss_stats(const SimulationReport& reference, const SimulationReport& candidate) {
    if (reference.terminal_pnl.size() != candidate.terminal_pnl.size() || reference.seed != candidate.seed)
        throw std::invalid_argument("loss statistics need reports from the same scenario set");
    std::vector<double> diff(reference.terminal_pnl.size());
    for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = reference.terminal_pnl[k] - candidate.terminal_pnl[k];
    const MeanSe m = mean_and_se(diff);
    LossStats s;
    s.loss = m.mean;
    s.loss_se = m.se;
    s.time_value = reference.mean - reference.intrinsic_value;
    s.fraction_of_time_value = s.time_value != 0.0 ? s.loss / s.time_value : std::numeric_limits<double>::quiet_NaN();
    return s;
}

BenchmarkSetup canonical_benchmark() {
    const std::size_t n = 365;
    const TimeGrid grid(0.0, 1.0, n);
    // 10 units of working volume filled or emptied in five days, fees of 0.1 per unit
    StorageContract c = StorageContract::simple(grid, 0.0, 10.0, -730.0, 730.0, 0.0, FixedTerminal{0.0}, 0.1, 0.1);
    std::vector<double> prices(n);
    for (std::size_t i = 0; i < n; ++i)
        prices[i] = 20.0 + 2.0 * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 30.0);
    return {std::move(c), ForwardCurve(grid, std::move(prices)), OneFactorParams{0.9, 20.0}};
}

}  // namespace storval
