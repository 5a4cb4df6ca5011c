#pragma once

#include "storval/contract.hpp"
#include "storval/intrinsic.hpp"
#include "storval/market.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace storval {

enum class ExercisePolicy { intrinsic, stochastic_trigger };
enum class HedgePolicy { rolling_intrinsic, none };

const char* to_string(ExercisePolicy p);
const char* to_string(HedgePolicy h);

struct Trade {
    std::size_t obs_step = 0;
    std::size_t delivery_step = 0;
    double volume = 0.0;  // bought volume, negative when selling
    double price = 0.0;
};

/// Storage option, forward hedges and cumulative cash of one simulated portfolio.
/// Operating and carry costs are charged to a separate account so that cash is
/// always the negated sum of volume times price over the trade log.
class PortfolioLedger {
public:
    explicit PortfolioLedger(double storage_volume = 0.0) : storage_volume_(storage_volume) {}

    double storage_volume() const { return storage_volume_; }
    double cash() const { return cash_; }
    double costs() const { return costs_; }
    const std::map<std::size_t, double>& forward_position() const { return forwards_; }
    const std::vector<Trade>& trade_log() const { return log_; }

    /// Physical exercise at the spot price; moves the storage volume.
    void trade_spot(std::size_t step, double volume, double price);
    /// Forward hedge trade for a future delivery step.
    void trade_forward(std::size_t obs_step, std::size_t delivery_step, double volume, double price);
    /// Closes the position of every delivery step up to obs_step at the spot price.
    void settle(std::size_t obs_step, double spot);
    void charge(double amount) { costs_ += amount; }

    /// cash - costs + open forwards marked on the given curve (curve[0] delivers at obs_step).
    double mark_to_market(const ForwardCurve& curve_now, std::size_t obs_step) const;

    /// -sum(volume * price) recomputed from the log.
    double cash_from_log() const;

private:
    double storage_volume_ = 0.0;
    double cash_ = 0.0;
    double costs_ = 0.0;
    std::map<std::size_t, double> forwards_;
    std::vector<Trade> log_;
};

/// The contract as seen from node `step` with volume q_now: grid, bounds and carry
/// cut to the remaining steps. Cycle limits are dropped.
StorageContract remaining_contract(const StorageContract& contract, std::size_t step, double q_now);

/// <C> over inner spot paths simulated from curve_now, each solved exactly with
/// q_start = q_now. Inner path j draws from CounterRng(seed, stream, j + 1).
/// The contract must already be the remaining contract (its grid matches curve_now).
double stochastic_trigger(const ForwardCurve& curve_now, double q_now, const StorageContract& contract,
                          const OneFactorParams& params, std::size_t inner_paths, std::uint64_t seed,
                          std::uint64_t stream = 0);

/// Rate of the trigger rule at node `step`, clipped so the volume stays inside
/// [q_min, q_max] of the next node. When the spot sits on an edge of the dead zone
/// (within 1e-9 of the price scale) the tie hint is used instead, if given.
double prompt_exercise(double spot, double trigger, const StorageContract& contract, std::size_t step,
                       double q_now, std::optional<double> tie_hint_rate = std::nullopt);

/// Brings the forward position of every delivery after obs_step to the planned
/// exercise of `profile`. profile and curve_now both start at delivery obs_step;
/// their first step (the prompt exercise) is not hedged.
std::vector<Trade> rebalance_hedge(PortfolioLedger& ledger, std::size_t obs_step, const Trajectory& profile,
                                   const ForwardCurve& curve_now);

struct SimulationConfig {
    StorageContract contract;
    ForwardCurve curve;
    OneFactorParams params;
    std::size_t n_scenarios = 1;
    std::uint64_t seed = 0;
    ExercisePolicy policy = ExercisePolicy::intrinsic;
    std::size_t inner_paths = 50;
    HedgePolicy hedging = HedgePolicy::rolling_intrinsic;
    std::size_t threads = 0;           // 0: hardware concurrency
    bool record_paths = false;         // keep the per-step portfolio value of each scenario
    double force_wrong_below = 0.0;    // take the neighbouring regime's action within this distance of a dead-zone edge

    void validate() const;
};

/// One prompt decision of the simulated policy, next to what the intrinsic policy
/// would have done in the same state.
struct DecisionRecord {
    std::size_t scenario = 0;
    std::size_t step = 0;
    double spot = 0.0;
    double trigger = 0.0;
    double intrinsic_trigger = 0.0;
    double exercise = 0.0;             // volume actually exercised
    double intrinsic_exercise = 0.0;   // volume the intrinsic rule would exercise
    bool divergent = false;
};

struct SimulationReport {
    ExercisePolicy policy = ExercisePolicy::intrinsic;
    HedgePolicy hedging = HedgePolicy::rolling_intrinsic;
    std::uint64_t seed = 0;
    std::vector<double> terminal_pnl;
    double mean = 0.0;
    double std_error = 0.0;
    double intrinsic_value = 0.0;
    double time_value = 0.0;           // mean - intrinsic_value
    std::size_t divergence_count = 0;
    std::size_t decision_count = 0;
    std::vector<DecisionRecord> decisions;
    std::vector<std::vector<double>> pnl_paths;  // n_steps + 1 values per scenario when recorded
    std::size_t inner_solves = 0;

    double divergence_rate() const {
        return decision_count ? double(divergence_count) / double(decision_count) : 0.0;
    }
};

SimulationReport run_simulation(const SimulationConfig& config);

/// Paired loss of `candidate` against `reference`: per-scenario reference - candidate.
struct LossStats {
    double loss = 0.0;
    double loss_se = 0.0;
    double time_value = 0.0;          // reference mean - intrinsic value
    double fraction_of_time_value = 0.0;
};

LossStats pnl_loss_stats(const SimulationReport& reference, const SimulationReport& candidate);

/// Mean and standard error (sample std / sqrt(n)) with pairwise summation.
struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};
MeanSe mean_and_se(std::span<const double> x);

/// Fast storage on a fast-oscillating curve over one year of daily steps.
struct BenchmarkSetup {
    StorageContract contract;
    ForwardCurve curve;
    OneFactorParams params;
};
BenchmarkSetup canonical_benchmark();

}  // namespace storval
