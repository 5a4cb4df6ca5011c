#pragma once

#include "storval/contract.hpp"
#include "storval/intrinsic.hpp"
#include "storval/market.hpp"
#include "storval/simulation.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace storval::io {

/// Malformed or inconsistent input file. The message names the file and the line or field.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to the same double.
std::string format_number(double x);

/// Contract from its JSON form:
///   grid {t_start, t_end, n_steps}, q_min, q_max (number or per-node array),
///   rates: {r_min, r_max} or [{volume_from, r_min, r_max}, ...],
///   gamma_inj, gamma_rel, carry_cost (number or per-step array), q_start,
///   terminal {type: "fixed", q_end} | {type: "free", residual_price},
///   cycle {kind: "intake" | "release", c_max} (optional).
/// Unknown keys are rejected so that misspelled fields do not silently default.
StorageContract contract_from_json(const nlohmann::json& j, std::string_view source = "contract");
nlohmann::json contract_to_json(const StorageContract& contract);
StorageContract load_contract(const std::filesystem::path& path);

/// `delivery_step,price` CSV with one row per step of the grid, in order.
ForwardCurve parse_curve_csv(std::string_view text, const TimeGrid& grid, std::string_view source = "curve");
ForwardCurve load_curve(const std::filesystem::path& path, const TimeGrid& grid);
std::string curve_to_csv(const ForwardCurve& curve);

nlohmann::json solution_to_json(const IntrinsicSolution& solution);
/// Trajectory stored in a solution document, on the given grid.
Trajectory trajectory_from_json(const nlohmann::json& solution, const TimeGrid& grid);
std::string trajectory_to_csv(const Trajectory& trajectory, const ForwardCurve& curve);

/// `scenario,policy,terminal_pnl`, one row per scenario of every report.
std::string simulation_to_csv(const std::vector<const SimulationReport*>& reports);
/// `scenario,policy,step,portfolio_value` for reports that recorded paths.
std::string pnl_paths_to_csv(const std::vector<const SimulationReport*>& reports);
nlohmann::json report_summary(const SimulationReport& report);

struct RunManifest {
    std::string command;
    std::vector<std::string> arguments;
    std::vector<std::string> inputs;
    std::uint64_t seed = 0;
    std::string tool_version;
    double wall_clock_seconds = 0.0;
    std::vector<std::string> outputs;
};
nlohmann::json manifest_to_json(const RunManifest& manifest);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
/// Pretty-printed JSON with a trailing newline.
std::string dump(const nlohmann::json& j);

}  // namespace storval::io
