#pragma once

#include "storval/market.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace storval {

struct FixedTerminal {
    double q_end = 0.0;
};

/// Free end volume; the remaining inventory is paid residual_price per unit.
struct FreeTerminal {
    double residual_price = 0.0;
};

using TerminalCondition = std::variant<FixedTerminal, FreeTerminal>;

enum class CycleKind { intake, release };

struct CycleLimit {
    CycleKind kind = CycleKind::intake;
    double c_max = 0.0;
};

/// Rates (volume/year) that apply while the volume is at or above volume_from.
struct RateBucket {
    double volume_from = 0.0;
    double r_min = 0.0;
    double r_max = 0.0;
};

struct RateLimits {
    double r_min = 0.0;
    double r_max = 0.0;
};

/// Storage/swing contract. Volume bounds live on the n_steps+1 grid nodes, carry cost
/// on the n_steps intervals. Rates come from a volume-bucket table; constant rates
/// are a one-bucket table.
struct StorageContract {
    TimeGrid grid;
    std::vector<double> q_min;
    std::vector<double> q_max;
    std::vector<RateBucket> rates;
    double gamma_inj = 0.0;
    double gamma_rel = 0.0;
    std::vector<double> carry_cost;
    double q_start = 0.0;
    TerminalCondition terminal = FixedTerminal{};
    std::optional<CycleLimit> cycle;

    /// Contract with constant bounds, constant rates and no carry cost.
    static StorageContract simple(TimeGrid grid, double q_min, double q_max, double r_min,
                                  double r_max, double q_start, TerminalCondition terminal,
                                  double gamma_inj = 0.0, double gamma_rel = 0.0);

    RateLimits rate_for(std::size_t step, double volume) const;
    bool has_volume_dependent_rates() const { return rates.size() > 1; }
    bool has_carry() const;
    bool is_fixed_terminal() const { return std::holds_alternative<FixedTerminal>(terminal); }
    double q_end() const;             // throws unless fixed
    double residual_price() const;    // 0 for fixed terminal
    double volume_scale() const;
    double volume_tolerance() const { return 1e-9 * volume_scale(); }
};

struct Violation {
    std::string code;
    std::string message;
    std::optional<std::size_t> step;
};

/// Every violated invariant; empty means valid. Violations are data, never thrown.
std::vector<Violation> validate_contract(const StorageContract& contract);

/// Throws std::invalid_argument carrying the violation list if the contract is invalid.
void require_valid(const StorageContract& contract);

/// Greedy maximum-injection and maximum-release volume paths from q_start.
struct VolumeEnvelope {
    std::vector<double> lower;
    std::vector<double> upper;
};

VolumeEnvelope forward_envelope(const StorageContract& contract);

/// Per node, the volume range from which a fixed terminal volume is still reachable
/// (within bounds). For a free terminal this is just the bounds.
VolumeEnvelope terminal_reachable_envelope(const StorageContract& contract);

}  // namespace storval
