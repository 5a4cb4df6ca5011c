#include "doctest.h"
#include "oracles.hpp"

#include "storval/intrinsic.hpp"

#include <random>

using namespace storval;

namespace {

StorageContract unit_storage(std::size_t n, double gi = 0.0, double gr = 0.0, double rate = 1.0) {
    return StorageContract::simple(TimeGrid(0.0, double(n), n), 0.0, 1.0, -rate, rate, 0.0,
                                   FixedTerminal{0.0}, gi, gr);
}

ForwardCurve curve_of(const StorageContract& c, std::vector<double> f) { return ForwardCurve(c.grid, std::move(f)); }

// Random instance whose data are integer, so a unit lattice holds the exact optimum.
struct Instance {
    StorageContract contract;
    ForwardCurve curve;
};

Instance random_integer_instance(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> cap(2, 10), r(1, 3), cost(0, 2);
    const double q_max = cap(rng);
    std::uniform_int_distribution<int> vol(0, int(q_max));
    StorageContract c = StorageContract::simple(TimeGrid(0.0, double(n), n), 0.0, q_max, -double(r(rng)),
                                                double(r(rng)), double(vol(rng)), FixedTerminal{double(vol(rng))},
                                                0.5 * cost(rng), 0.5 * cost(rng));
    while (!validate_contract(c).empty()) c.terminal = FixedTerminal{double(vol(rng))};
    return {c, ForwardCurve(c.grid, oracle::random_curve(rng, n))};
}

}  // namespace

TEST_CASE("exercise decision follows the three regimes with a closed dead zone") {
    CHECK(exercise_decision(5, 10, 0, 0, -1, 1) == 1);
    CHECK(exercise_decision(10, 10, 0, 0, -1, 1) == 0);
    CHECK(exercise_decision(12, 10, 0, 1, -1, 1) == -1);
    CHECK(exercise_decision(10.5, 10, 0, 1, -1, 1) == 0);
    CHECK(exercise_decision(9, 10, 1, 0, -1, 1) == 0);
}

TEST_CASE("build_trajectory clips steps onto the volume bounds") {
    auto c = unit_storage(2);
    auto t = build_trajectory(curve_of(c, {10, 20}), c, 15);
    CHECK(t.exercises == std::vector<double>{1, -1});
    CHECK(t.volumes == std::vector<double>{0, 1, 0});

    auto fast = unit_storage(2, 0, 0, 2.0);
    auto clipped = build_trajectory(curve_of(fast, {10, 20}), fast, 15);
    CHECK(clipped.exercises[0] == 1.0);

    auto low = build_trajectory(curve_of(c, {10, 20}), c, 0.0);
    for (double v : low.volumes) CHECK(v >= 0.0);
}

TEST_CASE("two-step spread instance matches enumeration") {
    auto c = unit_storage(2);
    const std::vector<double> f{10, 20};
    const auto truth = oracle::enumerate(c, f, oracle::uniform_levels(0, 1, 3));
    auto s = solve_trigger(c, curve_of(c, f));
    CHECK(s.value == doctest::Approx(truth.value));
    CHECK(s.value == doctest::Approx(10.0));
    CHECK(s.method == SolveMethod::trigger);
    CHECK(s.certified);
    REQUIRE(s.bands.size() == 1);
    CHECK(s.bands[0].c_lo == doctest::Approx(10.0));
    CHECK(s.bands[0].c_hi == doctest::Approx(20.0));

    auto d = solve_dp(c, curve_of(c, f), 3);
    CHECK(d.value == doctest::Approx(10.0));

    auto costly = unit_storage(2, 1, 1);
    const auto truth_costly = oracle::enumerate(costly, f, oracle::uniform_levels(0, 1, 3));
    CHECK(solve_trigger(costly, curve_of(costly, f)).value == doctest::Approx(truth_costly.value));
    CHECK(truth_costly.value == doctest::Approx(8.0));
}

TEST_CASE("flat curve has zero value") {
    auto c = unit_storage(5);
    auto s = solve_trigger(c, curve_of(c, std::vector<double>(5, 10.0)));
    CHECK(s.value == doctest::Approx(0.0));
    CHECK(solve_dp(c, curve_of(c, std::vector<double>(5, 10.0)), 11).value == doctest::Approx(0.0));
    const auto bands = extract_trigger_bands(build_trajectory(curve_of(c, std::vector<double>(5, 10.0)), c, 10.0),
                                             curve_of(c, std::vector<double>(5, 10.0)), c);
    REQUIRE(bands.size() == 1);
    CHECK(bands[0].c_lo == 10.0);
    CHECK(bands[0].c_hi == 10.0);
}

TEST_CASE("evaluate_value charges carry on held volume") {
    auto c = unit_storage(2);
    Trajectory t{c.grid, {0, 1, 0}, {1, -1}};
    CHECK(evaluate_value(t, curve_of(c, {10, 20}), c) == doctest::Approx(10.0));
    c.carry_cost = {2.0, 2.0};
    CHECK(evaluate_value(t, curve_of(c, {10, 20}), c) == doctest::Approx(8.0));
    Trajectory idle{c.grid, {0, 0, 0}, {0, 0}};
    CHECK(evaluate_value(idle, curve_of(c, {10, 20}), c) == 0.0);
    Trajectory bad{c.grid, {0, 2, 0}, {2, -2}};
    CHECK_THROWS_WITH_AS(evaluate_value(bad, curve_of(c, {10, 20}), c),
                         doctest::Contains("node 1"), std::invalid_argument);
}

TEST_CASE("unreachable terminal volume is reported") {
    auto c = StorageContract::simple(TimeGrid(0, 2, 2), 0, 10, -1, 1, 0, FixedTerminal{5});
    CHECK_THROWS_AS(solve_trigger(c, curve_of(c, {1, 2})), std::invalid_argument);
    CHECK_THROWS_AS(solve_dp(c, curve_of(c, {1, 2}), 11), std::invalid_argument);
}

TEST_CASE("coarse lattice is rejected") {
    auto c = StorageContract::simple(TimeGrid(0, 2, 2), 0, 10, -1, 1, 0, FixedTerminal{0});
    CHECK_THROWS_WITH(solve_dp(c, curve_of(c, {1, 2}), 3), doctest::Contains("refine lattice"));
}

TEST_CASE("lattice solver equals exhaustive enumeration on small instances") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> steps(1, 6), levels(2, 5);
        const std::size_t n = steps(rng);
        const std::size_t L = levels(rng);
        std::uniform_int_distribution<int> lv(0, int(L) - 1), jump(1, int(L) - 1), cost(0, 3);
        const double h = 1.0 / double(L - 1);
        const double r = h * jump(rng);
        StorageContract c = StorageContract::simple(TimeGrid(0, double(n), n), 0, 1, -r, r, h * lv(rng),
                                                    FixedTerminal{h * lv(rng)}, 0.5 * cost(rng), 0.5 * cost(rng));
        if (trial % 3 == 0) c.terminal = FreeTerminal{double(cost(rng)) * 5.0};
        if (trial % 4 == 0) c.carry_cost.assign(n, 0.25 * cost(rng));
        if (!validate_contract(c).empty()) continue;
        const auto f = oracle::random_curve(rng, n);
        const auto truth = oracle::enumerate(c, f, oracle::uniform_levels(0, 1, L));
        const auto dp = solve_dp(c, ForwardCurve(c.grid, f), L);
        CHECK(dp.value == doctest::Approx(truth.value).epsilon(1e-12));
        // data on the lattice: the continuous optimum lives on it too
        CHECK(solve_marginal_value(c, ForwardCurve(c.grid, f)).value == doctest::Approx(truth.value).epsilon(1e-12));
    }
}

TEST_CASE("trigger solver agrees with the exact lattice optimum on random instances") {
    std::mt19937_64 rng(11);
    int fallbacks = 0;
    for (int trial = 0; trial < 150; ++trial) {
        std::uniform_int_distribution<int> steps(2, 60);
        auto inst = random_integer_instance(rng, steps(rng));
        const auto& c = inst.contract;
        const std::size_t levels = std::size_t(c.q_max[0]) + 1;
        const auto dp = solve_dp(c, inst.curve, levels);
        const auto tr = solve_trigger(c, inst.curve);
        fallbacks += tr.fallback;
        CHECK(tr.value == doctest::Approx(dp.value).epsilon(1e-9));
        CHECK_NOTHROW(check_feasible(tr.trajectory, c));
    }
    MESSAGE("trigger fallbacks to lattice: " << fallbacks << " of 150");
}

TEST_CASE("trigger solver within lattice tolerance on non-lattice instances") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<int> steps(2, 60);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const std::size_t n = steps(rng);
        const double q_max = 1.0 + 9.0 * u(rng);
        const double r = 0.2 + 2.0 * u(rng);
        const std::size_t levels = 401;
        const double gap = q_max / double(levels - 1);
        // start and end on the lattice so the lattice optimum is a feasible continuous plan
        std::uniform_int_distribution<int> lv(0, int(levels) - 1);
        StorageContract c = StorageContract::simple(TimeGrid(0, double(n), n), 0, q_max, -r, r, gap * lv(rng),
                                                    FixedTerminal{gap * lv(rng)}, u(rng), u(rng));
        if (!validate_contract(c).empty()) continue;
        const ForwardCurve f(c.grid, oracle::random_curve(rng, n));
        const auto dp = solve_dp(c, f, levels);
        auto tr = solve_trigger(c, f, {.dp_fallback = false});
        double fmax = 0.0;
        for (double x : f.prices()) fmax = std::max(fmax, std::abs(x));
        // the lattice can only lose value relative to the continuous optimum
        CHECK(tr.value >= dp.value - 1e-9);
        CHECK(tr.value - dp.value <= std::max(1e-6, 2 * gap * fmax * double(n)));
    }
}

TEST_CASE("bands replay the exercises of their segments") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 60; ++trial) {
        std::uniform_int_distribution<int> steps(2, 40);
        auto inst = random_integer_instance(rng, steps(rng));
        const auto s = solve_trigger(inst.contract, inst.curve);
        for (const auto& b : s.bands) {
            CHECK(b.consistent);
            CHECK(b.c_lo <= b.c_hi);
        }
        // a single band with finite width: replaying from a strictly interior trigger reproduces the segment
        if (s.bands.size() == 1 && s.touches.empty() && s.bands[0].width() > 1e-6 &&
            std::isfinite(s.bands[0].width())) {
            const auto replay = build_trajectory(inst.curve, inst.contract, s.bands[0].representative());
            for (std::size_t i = 0; i < replay.exercises.size(); ++i)
                CHECK(replay.exercises[i] == doctest::Approx(s.trajectory.exercises[i]));
        }
    }
}

TEST_CASE("lattice solutions always have non-empty bands") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 60; ++trial) {
        std::uniform_int_distribution<int> steps(2, 40);
        auto inst = random_integer_instance(rng, steps(rng));
        const auto d = solve_dp(inst.contract, inst.curve, std::size_t(inst.contract.q_max[0]) + 1);
        for (const auto& b : d.bands) CHECK(b.consistent);
        CHECK(d.certified);
    }
}

TEST_CASE("terminal volume is non-decreasing in the trigger") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        auto inst = random_integer_instance(rng, 30);
        double prev = -1e300;
        for (double C = 0.0; C <= 35.0; C += 0.25) {
            const double q = build_trajectory(inst.curve, inst.contract, C).volumes.back();
            CHECK(q >= prev - 1e-12);
            prev = q;
        }
    }
}

TEST_CASE("optimal exercise is bang-bang and never trades inside the dead zone") {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 60; ++trial) {
        std::uniform_int_distribution<int> steps(2, 40);
        auto inst = random_integer_instance(rng, steps(rng));
        const auto& c = inst.contract;
        const auto s = solve_trigger(c, inst.curve);
        if (s.fallback) continue;
        const double dt = c.grid.dt();
        const double r_max = c.rates[0].r_max * dt, r_min = c.rates[0].r_min * dt;
        auto at_bound = [&](std::size_t node) {
            return std::abs(s.trajectory.volumes[node] - c.q_max[node]) < 1e-9 ||
                   std::abs(s.trajectory.volumes[node] - c.q_min[node]) < 1e-9;
        };
        for (std::size_t i = 0; i < s.trajectory.exercises.size(); ++i) {
            const double dq = s.trajectory.exercises[i];
            const bool full = std::abs(dq) < 1e-9 || std::abs(dq - r_max) < 1e-9 || std::abs(dq - r_min) < 1e-9;
            if (full || at_bound(i) || at_bound(i + 1)) continue;
            // a fractional step away from the bounds pins its segment's trigger to one price
            for (const auto& b : s.bands)
                if (i >= b.from && i < b.to) CHECK(b.width() == doctest::Approx(0.0));
        }
        for (const auto& b : s.bands) {
            double max_inj = -1e300, min_rel = 1e300;
            for (std::size_t i = b.from; i < b.to; ++i) {
                if (s.trajectory.exercises[i] > 1e-9) max_inj = std::max(max_inj, inst.curve[i]);
                if (s.trajectory.exercises[i] < -1e-9) min_rel = std::min(min_rel, inst.curve[i]);
            }
            CHECK(max_inj <= min_rel - c.gamma_inj - c.gamma_rel + 1e-9);
        }
    }
}

TEST_CASE("touch conditions hold at interior touches and flag a violating trajectory") {
    // rising then falling curve: storage fills, waits at the top, then empties
    auto c = StorageContract::simple(TimeGrid(0, 8, 8), 0, 2, -1, 1, 0, FixedTerminal{0});
    const ForwardCurve f(c.grid, {1, 2, 3, 4, 8, 7, 6, 5});
    auto s = solve_trigger(c, f);
    CHECK(s.certified);
    for (const auto& d : s.diagnostics) CHECK(d.passed);

    // injecting on a falling curve into the upper bound contradicts the touch condition
    IntrinsicSolution wrong;
    wrong.trajectory = Trajectory{c.grid, {0, 0, 0, 1, 2, 2, 1, 0, 0}, {0, 0, 1, 1, 0, -1, -1, 0}};
    const ForwardCurve falling(c.grid, {9, 8, 7, 6, 5, 4, 3, 2});
    wrong.touches = find_touches(wrong.trajectory, c);
    wrong.bands = extract_trigger_bands(wrong.trajectory, falling, c);
    auto diag = check_boundary_touch_conditions(wrong, falling, c, 0.0);
    bool flagged = false;
    for (const auto& d : diag)
        if (d.kind == TouchCase::upper_from_left && !d.passed) flagged = true;
    CHECK(flagged);
    CHECK_FALSE(certify_optimality(wrong.trajectory, falling, c, 1e-9));
}

TEST_CASE("prompt trigger shortcut agrees with the full exact solve") {
    std::mt19937_64 rng(404);
    for (int k = 0; k < 100; ++k) {
        auto [c, f] = random_integer_instance(rng, 12);
        if (k % 3 == 0) c.carry_cost.assign(12, 0.25);
        const auto full = solve_marginal_value(c, f);
        const auto t = marginal_value_trajectory(c, f);
        CHECK(t.volumes == full.trajectory.volumes);
        CHECK(first_trigger(c, f) == full.first_band().representative());
    }
}
