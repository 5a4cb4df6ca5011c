#include "storval/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace storval::io {

namespace {

using nlohmann::json;

[[noreturn]] void fail(std::string_view source, const std::string& where, const std::string& what) {
    throw InputError(std::string(source) + ": " + where + ": " + what);
}

class Fields {
public:
    Fields(const json& j, std::string_view source, std::string prefix)
        : j_(j), source_(source), prefix_(std::move(prefix)) {
        if (!j.is_object()) fail(source_, where(""), "expected an object");
    }

    void allow_only(std::initializer_list<const char*> keys) const {
        const std::set<std::string> ok(keys.begin(), keys.end());
        for (const auto& [k, v] : j_.items())
            if (!ok.count(k)) fail(source_, where(k), "unknown field");
    }

    bool has(const char* key) const { return j_.contains(key); }
    const json& at(const char* key) const {
        if (!j_.contains(key)) fail(source_, where(key), "missing");
        return j_.at(key);
    }

    double number(const char* key) const { return as_number(at(key), key); }
    double number_or(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }

    double as_number(const json& v, const std::string& key) const {
        if (!v.is_number()) fail(source_, where(key), "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) fail(source_, where(key), "not finite");
        return x;
    }

    std::size_t count(const char* key) const {
        const json& v = at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0) fail(source_, where(key), "expected a non-negative integer");
        return v.get<std::size_t>();
    }

    std::string text(const char* key) const {
        const json& v = at(key);
        if (!v.is_string()) fail(source_, where(key), "expected a string");
        return v.get<std::string>();
    }

    /// A number broadcast to n entries, or an array of exactly n numbers.
    std::vector<double> series(const char* key, std::size_t n) const {
        const json& v = at(key);
        if (v.is_number()) return std::vector<double>(n, as_number(v, key));
        if (!v.is_array()) fail(source_, where(key), "expected a number or an array");
        if (v.size() != n)
            fail(source_, where(key), "expected " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = as_number(v[i], std::string(key) + "[" + std::to_string(i) + "]");
        return out;
    }

    Fields child(const char* key) const { return Fields(at(key), source_, path(key)); }
    std::string where(const std::string& key) const {
        if (key.empty()) return prefix_.empty() ? "document" : "field '" + prefix_ + "'";
        return "field '" + path(key) + "'";
    }
    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

private:
    const json& j_;
    std::string_view source_;
    std::string prefix_;
};

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

StorageContract contract_from_json(const json& j, std::string_view source) {
    const Fields f(j, source, "");
    f.allow_only({"grid", "q_min", "q_max", "rates", "gamma_inj", "gamma_rel", "carry_cost", "q_start", "terminal",
                  "cycle"});

    const Fields g = f.child("grid");
    g.allow_only({"t_start", "t_end", "n_steps"});
    const std::size_t n = g.count("n_steps");
    StorageContract c;
    try {
        c.grid = TimeGrid(g.number("t_start"), g.number("t_end"), n);
    } catch (const std::invalid_argument& e) {
        fail(source, "field 'grid'", e.what());
    }
    c.q_min = f.series("q_min", n + 1);
    c.q_max = f.series("q_max", n + 1);

    const json& rates = f.at("rates");
    if (rates.is_object()) {
        const Fields r(rates, source, "rates");
        r.allow_only({"r_min", "r_max"});
        c.rates = {{0.0, r.number("r_min"), r.number("r_max")}};
    } else if (rates.is_array()) {
        for (std::size_t k = 0; k < rates.size(); ++k) {
            const Fields r(rates[k], source, "rates[" + std::to_string(k) + "]");
            r.allow_only({"volume_from", "r_min", "r_max"});
            c.rates.push_back({r.number("volume_from"), r.number("r_min"), r.number("r_max")});
        }
    } else {
        fail(source, "field 'rates'", "expected {r_min, r_max} or an array of buckets");
    }

    c.gamma_inj = f.number_or("gamma_inj", 0.0);
    c.gamma_rel = f.number_or("gamma_rel", 0.0);
    c.carry_cost = f.has("carry_cost") ? f.series("carry_cost", n) : std::vector<double>(n, 0.0);
    c.q_start = f.number("q_start");

    const Fields t = f.child("terminal");
    const std::string type = t.text("type");
    if (type == "fixed") {
        t.allow_only({"type", "q_end"});
        c.terminal = FixedTerminal{t.number("q_end")};
    } else if (type == "free") {
        t.allow_only({"type", "residual_price"});
        c.terminal = FreeTerminal{t.number_or("residual_price", 0.0)};
    } else {
        fail(source, t.where("type"), "expected \"fixed\" or \"free\", got \"" + type + "\"");
    }

    if (f.has("cycle")) {
        const Fields y = f.child("cycle");
        y.allow_only({"kind", "c_max"});
        const std::string kind = y.text("kind");
        if (kind != "intake" && kind != "release")
            fail(source, y.where("kind"), "expected \"intake\" or \"release\", got \"" + kind + "\"");
        c.cycle = CycleLimit{kind == "intake" ? CycleKind::intake : CycleKind::release, y.number("c_max")};
    }
    return c;
}

json contract_to_json(const StorageContract& c) {
    json j;
    j["grid"] = {{"t_start", c.grid.t_start()}, {"t_end", c.grid.t_end()}, {"n_steps", c.grid.n_steps()}};
    j["q_min"] = c.q_min;
    j["q_max"] = c.q_max;
    if (c.rates.size() == 1 && c.rates[0].volume_from == 0.0) {
        j["rates"] = {{"r_min", c.rates[0].r_min}, {"r_max", c.rates[0].r_max}};
    } else {
        j["rates"] = json::array();
        for (const auto& r : c.rates)
            j["rates"].push_back({{"volume_from", r.volume_from}, {"r_min", r.r_min}, {"r_max", r.r_max}});
    }
    j["gamma_inj"] = c.gamma_inj;
    j["gamma_rel"] = c.gamma_rel;
    j["carry_cost"] = c.carry_cost;
    j["q_start"] = c.q_start;
    if (const auto* fixed = std::get_if<FixedTerminal>(&c.terminal))
        j["terminal"] = {{"type", "fixed"}, {"q_end", fixed->q_end}};
    else
        j["terminal"] = {{"type", "free"}, {"residual_price", std::get<FreeTerminal>(c.terminal).residual_price}};
    if (c.cycle)
        j["cycle"] = {{"kind", c.cycle->kind == CycleKind::intake ? "intake" : "release"}, {"c_max", c.cycle->c_max}};
    return j;
}

StorageContract load_contract(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
    return contract_from_json(j, path.string());
}

ForwardCurve parse_curve_csv(std::string_view text, const TimeGrid& grid, std::string_view source) {
    std::vector<double> prices;
    prices.reserve(grid.n_steps());
    std::size_t line_no = 0;
    bool header = false;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view raw = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        const std::string_view line = trim(raw);
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        if (!header) {
            if (line != "delivery_step,price") fail(source, where, "expected header 'delivery_step,price'");
            header = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos)
            fail(source, where, "expected two columns");
        const std::string_view step_text = trim(line.substr(0, comma));
        const std::string_view price_text = trim(line.substr(comma + 1));

        std::size_t step = 0;
        auto rs = std::from_chars(step_text.data(), step_text.data() + step_text.size(), step);
        if (rs.ec != std::errc() || rs.ptr != step_text.data() + step_text.size())
            fail(source, where, "delivery_step '" + std::string(step_text) + "' is not a non-negative integer");
        if (step != prices.size())
            fail(source, where, "delivery_step " + std::to_string(step) + " out of order, expected " +
                                    std::to_string(prices.size()));
        if (step >= grid.n_steps())
            fail(source, where, "delivery_step " + std::to_string(step) + " beyond the contract's " +
                                    std::to_string(grid.n_steps()) + " steps");

        double price = 0.0;
        auto rp = std::from_chars(price_text.data(), price_text.data() + price_text.size(), price);
        if (rp.ec != std::errc() || rp.ptr != price_text.data() + price_text.size() || !std::isfinite(price))
            fail(source, where, "price '" + std::string(price_text) + "' is not a finite number");
        prices.push_back(price);
    }
    if (!header) fail(source, "line 1", "empty file, expected header 'delivery_step,price'");
    if (prices.size() != grid.n_steps())
        fail(source, "end of file", "got " + std::to_string(prices.size()) + " prices for " +
                                        std::to_string(grid.n_steps()) + " steps");
    return ForwardCurve(grid, std::move(prices));
}

ForwardCurve load_curve(const std::filesystem::path& path, const TimeGrid& grid) {
    return parse_curve_csv(read_text_file(path), grid, path.string());
}

std::string curve_to_csv(const ForwardCurve& curve) {
    std::string out = "delivery_step,price\n";
    for (std::size_t j = 0; j < curve.size(); ++j) out += std::to_string(j) + "," + format_number(curve[j]) + "\n";
    return out;
}

json solution_to_json(const IntrinsicSolution& s) {
    json j;
    j["value"] = s.value;
    j["method"] = to_string(s.method);
    j["certified"] = s.certified;
    j["fallback"] = s.fallback;
    if (s.fallback) j["fallback_reason"] = s.fallback_reason;
    j["trajectory"] = {{"volumes", s.trajectory.volumes}, {"exercises", s.trajectory.exercises}};
    j["bands"] = json::array();
    for (const auto& b : s.bands)
        j["bands"].push_back({{"from", b.from},
                              {"to", b.to},
                              {"c_lo", number_or_null(b.c_lo)},
                              {"c_hi", number_or_null(b.c_hi)},
                              {"consistent", b.consistent}});
    j["touches"] = json::array();
    for (const auto& t : s.touches) j["touches"].push_back({{"node", t.node}, {"boundary", to_string(t.boundary)}});
    j["diagnostics"] = json::array();
    for (const auto& d : s.diagnostics)
        j["diagnostics"].push_back({{"node", d.node},
                                    {"case", to_string(d.kind)},
                                    {"price", d.price},
                                    {"implied_trigger", number_or_null(d.implied_trigger)},
                                    {"residual", number_or_null(d.residual)},
                                    {"slope", d.slope},
                                    {"slope_ok", d.slope_ok},
                                    {"passed", d.passed}});
    return j;
}

Trajectory trajectory_from_json(const json& solution, const TimeGrid& grid) {
    const Fields f(solution, "solution", "");
    const Fields t = f.child("trajectory");
    return Trajectory{grid, t.series("volumes", grid.n_steps() + 1), t.series("exercises", grid.n_steps())};
}

std::string trajectory_to_csv(const Trajectory& t, const ForwardCurve& curve) {
    std::string out = "step,volume,exercise,price\n";
    for (std::size_t i = 0; i < t.exercises.size(); ++i)
        out += std::to_string(i) + "," + format_number(t.volumes[i]) + "," + format_number(t.exercises[i]) + "," +
               format_number(curve[i]) + "\n";
    return out;
}

std::string simulation_to_csv(const std::vector<const SimulationReport*>& reports) {
    std::string out = "scenario,policy,terminal_pnl\n";
    for (const auto* r : reports)
        for (std::size_t k = 0; k < r->terminal_pnl.size(); ++k)
            out += std::to_string(k) + "," + to_string(r->policy) + "," + format_number(r->terminal_pnl[k]) + "\n";
    return out;
}

std::string pnl_paths_to_csv(const std::vector<const SimulationReport*>& reports) {
    std::string out = "scenario,policy,step,portfolio_value\n";
    for (const auto* r : reports)
        for (std::size_t k = 0; k < r->pnl_paths.size(); ++k)
            for (std::size_t i = 0; i < r->pnl_paths[k].size(); ++i)
                out += std::to_string(k) + "," + to_string(r->policy) + "," + std::to_string(i) + "," +
                       format_number(r->pnl_paths[k][i]) + "\n";
    return out;
}

json report_summary(const SimulationReport& r) {
    return {{"policy", to_string(r.policy)},
            {"hedging", to_string(r.hedging)},
            {"scenarios", r.terminal_pnl.size()},
            {"mean", r.mean},
            {"se", r.std_error},
            {"intrinsic_value", r.intrinsic_value},
            {"time_value", r.time_value},
            {"divergence_rate", r.divergence_rate()},
            {"inner_solves", r.inner_solves}};
}

json manifest_to_json(const RunManifest& m) {
    return {{"command", m.command},     {"arguments", m.arguments},
            {"inputs", m.inputs},       {"seed", m.seed},
            {"tool_version", m.tool_version}, {"wall_clock_seconds", m.wall_clock_seconds},
            {"outputs", m.outputs}};
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace storval::io
