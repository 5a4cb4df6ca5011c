#include "storval/analytics.hpp"
#include "storval/extensions.hpp"
#include "storval/io.hpp"
#include "storval/simulation.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <optional>

using namespace storval;
using nlohmann::json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_solver = 1;
constexpr int exit_input = 2;

// contract or curve files that parse but describe something the solvers must not see
struct InvalidInput {
    std::vector<std::string> lines;
};

struct Inputs {
    std::string contract_path;
    std::string curve_path;
};

struct Problem {
    StorageContract contract;
    ForwardCurve curve;
};

Problem load_problem(const Inputs& in) {
    Problem p;
    p.contract = io::load_contract(in.contract_path);
    const auto violations = validate_contract(p.contract);
    if (!violations.empty()) {
        InvalidInput bad;
        for (const auto& v : violations) bad.lines.push_back(in.contract_path + ": " + v.code + ": " + v.message);
        throw bad;
    }
    p.curve = io::load_curve(in.curve_path, p.contract.grid);
    return p;
}

class Outputs {
public:
    Outputs(std::string dir, std::string format) : dir_(std::move(dir)), format_(std::move(format)) {}

    void file(const std::string& name, const std::string& text) {
        const auto path = std::filesystem::path(dir_) / name;
        io::write_text_file(path, text);
        written_.push_back(path.string());
    }

    /// Scalar summary on standard output: the JSON object, or `key,value` rows.
    void summary(const json& j) const {
        if (format_ == "json") {
            std::cout << io::dump(j);
            return;
        }
        std::cout << "key,value\n";
        for (const auto& [k, v] : j.items()) {
            if (v.is_number_float())
                std::cout << k << "," << io::format_number(v.get<double>()) << "\n";
            else if (v.is_primitive())
                std::cout << k << "," << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
        }
    }

    const std::vector<std::string>& written() const { return written_; }
    const std::string& dir() const { return dir_; }

private:
    std::string dir_;
    std::string format_;
    std::vector<std::string> written_;
};

IntrinsicSolution solve_value(const StorageContract& c, const ForwardCurve& f, const std::string& method,
                              std::size_t levels) {
    if (method == "dp") {
        if (c.cycle) return solve_dp_with_cycle_state(c, f, levels, 100000);
        return solve_dp(c, f, levels);
    }
    if (c.cycle) return solve_with_cycle(c, f).solution;
    const bool exact = !c.has_volume_dependent_rates();
    if (method == "trigger") {
        if (!c.is_fixed_terminal()) {
            if (!exact) throw std::runtime_error("free terminal with volume-dependent rates needs --method dp or auto");
            return solve_marginal_value(c, f);
        }
        TriggerOptions o;
        o.dp_fallback = false;
        return solve_trigger(c, f, o);
    }
    if (!c.is_fixed_terminal()) return exact ? solve_marginal_value(c, f) : solve_free_terminal(c, f, levels).solution;
    TriggerOptions o;
    o.fallback_levels = levels;
    return solve_trigger(c, f, o);
}

json band_json(const TriggerBand& b) {
    auto edge = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
    return {{"from", b.from}, {"to", b.to}, {"c_lo", edge(b.c_lo)}, {"c_hi", edge(b.c_hi)}};
}

json range_json(const Range& r) { return {{"lo", r.lo}, {"hi", r.hi}}; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Intrinsic valuation and hedging simulation of storage and swing contracts"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string format = "json";
    app.add_option("--seed", seed, "Random seed for simulations")->capture_default_str();
    app.add_option("--out-dir", out_dir, "Directory for output files")->capture_default_str();
    app.add_option("--format", format, "Summary format on standard output")
        ->check(CLI::IsMember({"json", "csv"}))
        ->capture_default_str();

    auto add_inputs = [](CLI::App* cmd, Inputs& in, bool required) {
        auto* c = cmd->add_option("--contract", in.contract_path, "Contract JSON")->check(CLI::ExistingFile);
        auto* f = cmd->add_option("--curve", in.curve_path, "Forward curve CSV (delivery_step,price)")
                      ->check(CLI::ExistingFile);
        if (required) {
            c->required();
            f->required();
        }
        return std::pair{c, f};
    };

    Inputs value_in;
    std::string method = "auto";
    std::size_t levels = 201;
    bool write_trajectory = false;
    auto* value = app.add_subcommand("value", "Intrinsic value, trajectory and trigger bands");
    add_inputs(value, value_in, true);
    value->add_option("--method", method, "Solver")->check(CLI::IsMember({"trigger", "dp", "auto"}))->capture_default_str();
    value->add_option("--levels", levels, "Volume lattice levels for dp and fallback")->check(CLI::Range(2, 100000))
        ->capture_default_str();
    value->add_flag("--trajectory", write_trajectory, "Also write trajectory.csv");

    Inputs sim_in;
    double alpha = 20.0;
    double sigma = 0.9;
    std::size_t scenarios = 100;
    std::string policy = "both";
    std::size_t inner_paths = 50;
    std::string hedge = "rolling";
    std::size_t threads = 0;
    bool record_paths = false;
    bool benchmark = false;
    auto* simulate = app.add_subcommand("simulate", "Hedging simulation of the intrinsic and stochastic-trigger policies");
    auto [sim_contract, sim_curve] = add_inputs(simulate, sim_in, false);
    auto* bench = simulate->add_flag("--benchmark", benchmark, "Use the built-in canonical benchmark contract and curve");
    sim_contract->excludes(bench);
    sim_curve->excludes(bench);
    simulate->add_option("--alpha", alpha, "Mean reversion speed")->check(CLI::NonNegativeNumber)->capture_default_str();
    simulate->add_option("--sigma", sigma, "Volatility")->check(CLI::NonNegativeNumber)->capture_default_str();
    simulate->add_option("--scenarios", scenarios, "Outer scenarios")->check(CLI::PositiveNumber)->capture_default_str();
    simulate->add_option("--policy", policy, "Exercise policy")
        ->check(CLI::IsMember({"intrinsic", "stochastic", "both"}))
        ->capture_default_str();
    simulate->add_option("--inner-paths", inner_paths, "Inner paths per stochastic trigger")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    simulate->add_option("--hedge", hedge, "Hedging")->check(CLI::IsMember({"rolling", "none"}))->capture_default_str();
    simulate->add_option("--threads", threads, "Worker threads, 0 for all cores")->capture_default_str();
    simulate->add_flag("--paths", record_paths, "Also write pnl_paths.csv");

    Inputs cycle_in;
    auto* cycle = app.add_subcommand("cycle", "Valuation under the contract's cycle limit");
    add_inputs(cycle, cycle_in, true);

    Inputs sens_in;
    auto* sens = app.add_subcommand("sensitivities", "Value derivatives with respect to boundary data");
    add_inputs(sens, sens_in, true);

    Inputs check_in;
    auto* validate = app.add_subcommand("validate", "Check a contract (and optionally a curve) without solving");
    auto [check_contract, check_curve] = add_inputs(validate, check_in, false);
    check_contract->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_input;
    }

    const auto start = std::chrono::steady_clock::now();
    Outputs out(out_dir, format);
    io::RunManifest manifest;
    manifest.seed = seed;
    manifest.tool_version = STORVAL_VERSION;
    for (int k = 1; k < argc; ++k) manifest.arguments.emplace_back(argv[k]);

    try {
        if (value->parsed()) {
            manifest.command = "value";
            manifest.inputs = {value_in.contract_path, value_in.curve_path};
            const Problem p = load_problem(value_in);
            const IntrinsicSolution s = solve_value(p.contract, p.curve, method, levels);
            if (method == "trigger" && !s.certified && p.contract.is_fixed_terminal() && !p.contract.cycle) {
                std::cerr << "error: trigger solution failed the optimality certificate; use --method auto or dp\n";
                return exit_solver;
            }
            out.file("solution.json", io::dump(io::solution_to_json(s)));
            if (write_trajectory) out.file("trajectory.csv", io::trajectory_to_csv(s.trajectory, p.curve));
            out.summary({{"value", s.value},
                         {"method", to_string(s.method)},
                         {"certified", s.certified},
                         {"fallback", s.fallback}});
        } else if (simulate->parsed()) {
            manifest.command = "simulate";
            SimulationConfig cfg{StorageContract{}, ForwardCurve{}, OneFactorParams{sigma, alpha}};
            if (benchmark) {
                const auto b = canonical_benchmark();
                cfg.contract = b.contract;
                cfg.curve = b.curve;
            } else {
                if (sim_in.contract_path.empty() || sim_in.curve_path.empty()) {
                    std::cerr << "error: simulate needs --contract and --curve, or --benchmark\n";
                    return exit_input;
                }
                manifest.inputs = {sim_in.contract_path, sim_in.curve_path};
                Problem p = load_problem(sim_in);
                cfg.contract = std::move(p.contract);
                cfg.curve = std::move(p.curve);
            }
            cfg.n_scenarios = scenarios;
            cfg.seed = seed;
            cfg.inner_paths = inner_paths;
            cfg.hedging = hedge == "rolling" ? HedgePolicy::rolling_intrinsic : HedgePolicy::none;
            cfg.threads = threads;
            cfg.record_paths = record_paths;

            std::optional<SimulationReport> intr, stoch;
            if (policy != "stochastic") {
                cfg.policy = ExercisePolicy::intrinsic;
                intr = run_simulation(cfg);
            }
            if (policy != "intrinsic") {
                cfg.policy = ExercisePolicy::stochastic_trigger;
                stoch = run_simulation(cfg);
            }
            std::vector<const SimulationReport*> reports;
            if (intr) reports.push_back(&*intr);
            if (stoch) reports.push_back(&*stoch);

            json summary;
            if (reports.size() == 1) {
                summary = io::report_summary(*reports.front());
            } else {
                // loss of the intrinsic policy, paired against the stochastic-trigger policy
                const LossStats l = pnl_loss_stats(*stoch, *intr);
                summary = {{"intrinsic_value", intr->intrinsic_value},
                           {"mean_intrinsic", intr->mean},
                           {"se_intrinsic", intr->std_error},
                           {"mean_stochastic", stoch->mean},
                           {"se_stochastic", stoch->std_error},
                           {"time_value", l.time_value},
                           {"loss", l.loss},
                           {"loss_se", l.loss_se},
                           {"loss_over_time_value", l.fraction_of_time_value},
                           {"divergence_rate", stoch->divergence_rate()}};
            }
            summary["scenarios"] = scenarios;
            summary["seed"] = seed;
            json doc = summary;
            doc["policies"] = json::array();
            for (const auto* r : reports) doc["policies"].push_back(io::report_summary(*r));
            out.file("simulation.csv", io::simulation_to_csv(reports));
            out.file("summary.json", io::dump(doc));
            if (record_paths) out.file("pnl_paths.csv", io::pnl_paths_to_csv(reports));
            out.summary(summary);
        } else if (cycle->parsed()) {
            manifest.command = "cycle";
            manifest.inputs = {cycle_in.contract_path, cycle_in.curve_path};
            const Problem p = load_problem(cycle_in);
            if (!p.contract.cycle) {
                std::cerr << "error: " << cycle_in.contract_path << ": contract has no 'cycle' field\n";
                return exit_input;
            }
            const CycleSolveResult r = solve_with_cycle(p.contract, p.curve);
            const json summary = {{"value", r.solution.value},  {"lambda", r.lambda},
                                  {"cycle_used", r.cycle_used}, {"c_max", p.contract.cycle->c_max},
                                  {"binding", r.binding},       {"saturated", r.saturated},
                                  {"iterations", r.iterations}};
            json doc = summary;
            doc["solution"] = io::solution_to_json(r.solution);
            out.file("cycle.json", io::dump(doc));
            out.summary(summary);
        } else if (sens->parsed()) {
            manifest.command = "sensitivities";
            manifest.inputs = {sens_in.contract_path, sens_in.curve_path};
            const Problem p = load_problem(sens_in);
            const IntrinsicSolution s = solve_value(p.contract, p.curve, "auto", 201);
            const SensitivityReport r = sensitivities(s, p.curve, p.contract);
            const json summary = {{"value", s.value},
                                  {"dS_dq_end", r.dS_dq_end},
                                  {"dS_dq_start", r.dS_dq_start},
                                  {"dS_dt_end", r.dS_dt_end},
                                  {"q_end_one_sided", r.q_end_one_sided},
                                  {"q_start_one_sided", r.q_start_one_sided},
                                  {"t_end_one_sided", r.t_end_one_sided}};
            json doc = summary;
            doc["q_end_range"] = range_json(r.q_end_range);
            doc["q_start_range"] = range_json(r.q_start_range);
            doc["t_end_range"] = range_json(r.t_end_range);
            doc["first_band"] = band_json(r.first_band);
            doc["final_band"] = band_json(r.final_band);
            out.file("sensitivities.json", io::dump(doc));
            out.summary(summary);
        } else if (validate->parsed()) {
            const StorageContract c = io::load_contract(check_in.contract_path);
            const auto violations = validate_contract(c);
            for (const auto& v : violations) std::cerr << check_in.contract_path << ": " << v.code << ": " << v.message << "\n";
            if (!violations.empty()) return exit_input;
            if (!check_in.curve_path.empty()) io::load_curve(check_in.curve_path, c.grid);
            out.summary({{"valid", true}, {"n_steps", c.grid.n_steps()}});
            return exit_ok;
        }
    } catch (const InvalidInput& bad) {
        for (const auto& line : bad.lines) std::cerr << line << "\n";
        return exit_input;
    } catch (const io::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_input;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_solver;
    }

    manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.outputs = out.written();
    io::write_text_file(std::filesystem::path(out.dir()) / "manifest.json", io::dump(io::manifest_to_json(manifest)));
    return exit_ok;
}
