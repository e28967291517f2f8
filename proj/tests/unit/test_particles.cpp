#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "mkvrisk/particles.hpp"
#include "mkvrisk/rng.hpp"

using namespace mkv;

namespace {

CoefficientSet frozen() {
    CoefficientSet c = CoefficientSet::brownian(0.0);
    return c;
}

double exhaustive_w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    const std::size_t n = a.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t r = 0; r < a.dim; ++r) {
                const double d = a.points[i * a.dim + r] - b.points[perm[i] * a.dim + r];
                c += d * d;
            }
        }
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / double(n));
}

EmpiricalMeasure random_cloud(std::uint64_t seed, std::size_t n, std::size_t dim, double shift) {
    EmpiricalMeasure m{dim, std::vector<double>(n * dim)};
    CounterRng{seed}.normals(0, 0, StreamTag::experiment, m.points);
    for (auto& v : m.points) v += shift;
    return m;
}

}  // namespace

TEST_CASE("time grid") {
    const TimeGrid g(0.25, 3);
    CHECK(g.step() == doctest::Approx(0.25));
    CHECK(g.node(0) == 0.25);
    CHECK(g.node(3) == 1.0);
    CHECK_THROWS_AS(TimeGrid(1.0, 4), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid(0.0, 0), std::invalid_argument);
}

TEST_CASE("frozen dynamics keep every particle in place") {
    const auto ens = simulate_mckv(frozen(), TimeGrid(0.0, 64), InitialCondition::point({1.0}), 50, nullptr, 3,
                                   {Retention::all_nodes});
    for (std::size_t k = 0; k <= 64; ++k) {
        for (double v : ens.node(k)) CHECK(v == 1.0);
    }
}

TEST_CASE("exponential decay") {
    const auto c = CoefficientSet::linear(0.0, -1.0, 0.0, 0.0);
    const auto ens = simulate_mckv(c, TimeGrid(0.0, 1000), InitialCondition::point({1.0}), 4, nullptr, 1);
    for (double v : ens.final_states()) CHECK(std::abs(v - std::exp(-1.0)) <= 2e-3);
}

TEST_CASE("mean-driven growth") {
    const auto c = CoefficientSet::linear(0.0, 0.0, 1.0, 0.0);
    const auto ens = simulate_mckv(c, TimeGrid(0.0, 512), InitialCondition::point({1.0}), 16, nullptr, 1);
    CHECK(std::abs(ens.mean_at(512)[0] - std::exp(1.0)) <= 1e-2);
}

TEST_CASE("mean-field mean follows its ODE") {
    const double alpha = 0.3, beta = -1.0, gamma = 0.5;
    const auto c = CoefficientSet::linear(alpha, beta, gamma, 0.0);
    const auto init = InitialCondition::gaussian({1.0}, {0.5});
    const auto ens = simulate_mckv(c, TimeGrid(0.0, 1000), init, 10000, nullptr, 77);
    const double k = beta + gamma;
    const double m1 = (1.0 + alpha / k) * std::exp(k) - alpha / k;
    CHECK(std::abs(ens.mean_at(1000)[0] - m1) <= 1e-2);
}

TEST_CASE("seeded runs are reproducible and backend independent") {
    auto c = CoefficientSet::linear(0.1, -0.5, 0.5, 1.0);
    c.diffusion.kind = DiffusionKind::modulated;
    c.diffusion.amplitude = 0.3;
    c.diffusion.x_slope = 1.0;
    c.diffusion.mean_slope = 0.5;
    const auto init = InitialCondition::gaussian({0.0}, {1.0});
    SimulationOptions serial{Retention::all_nodes, kernels::Backend::serial};
    SimulationOptions parallel{Retention::all_nodes, kernels::Backend::parallel};
    const auto a = simulate_mckv(c, TimeGrid(0.0, 40), init, 3000, nullptr, 9, serial);
    const auto b = simulate_mckv(c, TimeGrid(0.0, 40), init, 3000, nullptr, 9, parallel);
    const auto d = simulate_mckv(c, TimeGrid(0.0, 40), init, 3000, nullptr, 9, parallel);
    CHECK(a.states == b.states);
    CHECK(a.means == b.means);
    CHECK(b.states == d.states);
    const auto e = simulate_mckv(c, TimeGrid(0.0, 40), init, 3000, nullptr, 10, parallel);
    CHECK(e.states != b.states);

    const auto table = brownian_table(9, 3000, TimeGrid(0.0, 40), 1);
    SimulationOptions cached = parallel;
    cached.noise = table;
    const auto f = simulate_mckv(c, TimeGrid(0.0, 40), init, 3000, nullptr, 9, cached);
    CHECK(f.states == b.states);
}

TEST_CASE("final-only retention") {
    const auto c = CoefficientSet::brownian(1.0);
    const auto all = simulate_mckv(c, TimeGrid(0.0, 8), InitialCondition::point({0.0}), 10, nullptr, 5,
                                   {Retention::all_nodes});
    const auto fin = simulate_mckv(c, TimeGrid(0.0, 8), InitialCondition::point({0.0}), 10, nullptr, 5);
    CHECK(fin.has_node(0));
    CHECK_FALSE(fin.has_node(4));
    CHECK_THROWS_AS(fin.node(4), std::invalid_argument);
    CHECK(std::equal(fin.final_states().begin(), fin.final_states().end(), all.node(8).begin()));
}

TEST_CASE("open-loop control shifts the drift") {
    const auto c = CoefficientSet::brownian(2.0).with_noise_index(1);
    auto ctrl = ControlField::open_loop(4, 1);
    std::vector<double> p{1.0, 1.0, 1.0, 1.0};
    ctrl.set_params(p);
    CoefficientSet quiet = c;
    quiet.diffusion.matrix = {2.0};
    quiet.noise_index = 1;
    const auto ens = simulate_mckv(CoefficientSet::brownian(2.0), TimeGrid(0.0, 16), InitialCondition::point({0.0}), 1000,
                                   &ctrl, 1);
    const auto base = simulate_mckv(CoefficientSet::brownian(2.0), TimeGrid(0.0, 16), InitialCondition::point({0.0}),
                                    1000, nullptr, 1);
    for (std::size_t i = 0; i < 1000; ++i) {
        CHECK(ens.final_states()[i] - base.final_states()[i] == doctest::Approx(2.0).epsilon(1e-12));
    }
    const auto capped = ctrl.with_cap(0.0);
    const auto zero = simulate_mckv(CoefficientSet::brownian(2.0), TimeGrid(0.0, 16), InitialCondition::point({0.0}), 1000,
                                    &capped, 1);
    CHECK(zero.states == base.states);
}

TEST_CASE("control validation") {
    const auto c = CoefficientSet::brownian(1.0);
    const auto init = InitialCondition::point({0.0});
    auto wrong_dim = ControlField::open_loop(4, 2);
    CHECK_THROWS_AS(simulate_mckv(c, TimeGrid(0.0, 8), init, 5, &wrong_dim, 1), std::invalid_argument);
    auto wrong_start = ControlField::open_loop(4, 1, 0.5);
    CHECK_THROWS_AS(simulate_mckv(c, TimeGrid(0.0, 8), init, 5, &wrong_start, 1), std::invalid_argument);
    auto per = ControlField::per_sample(5, 7, 1);
    CHECK_THROWS_AS(simulate_mckv(c, TimeGrid(0.0, 8), init, 5, &per, 1), std::invalid_argument);
    auto ok = ControlField::per_sample(5, 8, 1);
    CHECK_NOTHROW(simulate_mckv(c, TimeGrid(0.0, 8), init, 5, &ok, 1));
    auto bad = ControlField::open_loop(2, 1);
    std::vector<double> nan{1.0, std::nan("")};
    bad.set_params(nan);
    CHECK_THROWS_AS(simulate_mckv(c, TimeGrid(0.0, 8), init, 5, &bad, 1), std::invalid_argument);
    CHECK_THROWS_AS(bad.set_params(std::vector<double>{1.0}), std::invalid_argument);
    CHECK_THROWS_AS(simulate_mckv(c, TimeGrid(0.0, 8), init, 0, nullptr, 1), std::invalid_argument);
}

TEST_CASE("feedback controls and caps") {
    auto aff = ControlField::feedback_affine(2, 1, 1);
    std::vector<double> p{0.5, -1.0, 0.0, 2.0};
    aff.set_params(p);
    std::vector<double> x{2.0}, q(1);
    aff.value(0.1, 0, 0, x, q);
    CHECK(q[0] == doctest::Approx(-1.5));
    aff.value(0.9, 0, 0, x, q);
    CHECK(q[0] == doctest::Approx(4.0));
    const auto capped = aff.with_cap(1.0);
    capped.value(0.9, 0, 0, x, q);
    CHECK(q[0] == doctest::Approx(1.0));
    auto rad = ControlField::feedback_radial(1, 1, {{0.0}, {1.0}}, 1.0);
    std::vector<double> r{0.0, 1.0, 2.0};
    rad.set_params(r);
    std::vector<double> x0{0.0};
    rad.value(0.5, 0, 0, x0, q);
    CHECK(q[0] == doctest::Approx(1.0 + 2.0 * std::exp(-0.5)));
}

TEST_CASE("overflow aborts with the step index") {
    const auto c = CoefficientSet::linear(0.0, 1e5, 0.0, 0.0);
    try {
        simulate_mckv(c, TimeGrid(0.0, 200), InitialCondition::point({1.0}), 3, nullptr, 1);
        FAIL("expected overflow");
    } catch (const SimulationError& e) {
        CHECK(e.step() > 1);
        CHECK(e.step() <= 200);
    }
}

TEST_CASE("running cost accumulates the control energy") {
    auto ctrl = ControlField::open_loop(2, 1);
    std::vector<double> p{1.0, 3.0};
    ctrl.set_params(p);
    const CostFunction g = CostFunction::quadratic();
    SimulationOptions opts;
    opts.running_cost = &g;
    const auto ens = simulate_mckv(CoefficientSet::brownian(1.0), TimeGrid(0.0, 8), InitialCondition::point({0.0}), 3,
                                   &ctrl, 1, opts);
    for (double v : ens.running_cost) CHECK(v == doctest::Approx(0.5 * 0.5 * 1.0 + 0.5 * 0.5 * 9.0));
    opts.cost_argument_scale = 2.0;
    const auto scaled = simulate_mckv(CoefficientSet::brownian(1.0), TimeGrid(0.0, 8), InitialCondition::point({0.0}),
                                      3, &ctrl, 1, opts);
    CHECK(scaled.running_cost[0] == doctest::Approx(4.0 * ens.running_cost[0]));
}

TEST_CASE("initial laws") {
    const auto g = InitialCondition::gaussian({0.0}, {1.0});
    const auto ens = simulate_mckv(frozen(), TimeGrid(0.0, 1), g, 10000, nullptr, 123);
    const auto mu = empirical_measure(ens, 0);
    CHECK(std::abs(mu.mean()[0]) <= 3.0 / std::sqrt(1e4));
    const auto atoms = InitialCondition::uniform_atoms({{-1.0}, {1.0}});
    const auto ea = simulate_mckv(frozen(), TimeGrid(0.0, 1), atoms, 10, nullptr, 1);
    CHECK(ea.mean_at(0)[0] == 0.0);
    CHECK_FALSE(atoms.deterministic());
    CHECK(InitialCondition::point({2.0}).deterministic());
    CHECK_THROWS_AS(simulate_mckv(frozen(), TimeGrid(0.0, 1), InitialCondition::point({0.0, 1.0}), 2, nullptr, 1),
                    std::invalid_argument);
}

TEST_CASE("empirical measures") {
    const auto one = simulate_mckv(frozen(), TimeGrid(0.0, 2), InitialCondition::point({3.0}), 1, nullptr, 1);
    const auto d3 = empirical_measure(one, 2);
    CHECK(d3.size() == 1);
    CHECK(d3.points[0] == 3.0);
    CHECK(d3.total_weight() == 1.0);
    const EmpiricalMeasure two{1, {0.0, 2.0}};
    CHECK(two.mean()[0] == 1.0);
    CHECK(two.variance()[0] == 1.0);
    CHECK_THROWS_AS(empirical_measure(one, 3), std::invalid_argument);
    const auto big = random_cloud(5, 1000, 1, 0.0);
    CHECK(std::abs(big.total_weight() - 1.0) <= 1e-12);
}

TEST_CASE("wasserstein examples") {
    const auto a = random_cloud(1, 40, 1, 0.0);
    CHECK(wasserstein2(a, a) == 0.0);
    CHECK(wasserstein2(EmpiricalMeasure{1, {0.0}}, EmpiricalMeasure{1, {2.0}}) == 2.0);
    CHECK(wasserstein2(EmpiricalMeasure{1, {0.0, 1.0}}, EmpiricalMeasure{1, {1.0, 2.0}}) == doctest::Approx(1.0));
    CHECK(wasserstein2(EmpiricalMeasure{2, {0, 0, 1, 0}}, EmpiricalMeasure{2, {1, 0, 2, 0}}) == doctest::Approx(1.0));
    // unequal sizes in 1-D: {0} vs {-1, 1}
    CHECK(wasserstein2(EmpiricalMeasure{1, {0.0}}, EmpiricalMeasure{1, {-1.0, 1.0}}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(wasserstein2(EmpiricalMeasure{1, {0.0}}, EmpiricalMeasure{2, {0.0, 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS(wasserstein2(EmpiricalMeasure{2, {0, 0, 1, 1}}, EmpiricalMeasure{2, {0, 0}}), std::invalid_argument);
    const auto huge = random_cloud(2, 600, 2, 0.0);
    CHECK_THROWS_WITH_AS(wasserstein2(huge, huge), doctest::Contains("subsample"), std::invalid_argument);
}

TEST_CASE("assignment matches exhaustive matching") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = random_cloud(100 + s, 6, 2, 0.0);
        const auto b = random_cloud(200 + s, 6, 2, 0.7);
        CHECK(wasserstein2(a, b) == doctest::Approx(exhaustive_w2(a, b)).epsilon(1e-12));
        const auto c = random_cloud(300 + s, 6, 1, 0.3);
        const auto e = random_cloud(400 + s, 6, 1, 0.0);
        CHECK(wasserstein2(c, e) == doctest::Approx(exhaustive_w2(c, e)).epsilon(1e-12));
    }
}

TEST_CASE("wasserstein metric axioms on random triples") {
    for (std::uint64_t s = 0; s < 200; ++s) {
        const std::size_t dim = 1 + s % 3;
        const std::size_t n = 5 + s % 7;
        const auto a = random_cloud(3 * s, n, dim, 0.0);
        const auto b = random_cloud(3 * s + 1, n, dim, 0.5);
        const auto c = random_cloud(3 * s + 2, n, dim, -0.25);
        const double ab = wasserstein2(a, b), ba = wasserstein2(b, a);
        CHECK(ab == ba);
        CHECK(ab >= 0.0);
        CHECK(wasserstein2(a, c) <= ab + wasserstein2(b, c) + 1e-9);
        EmpiricalMeasure shuffled = a;
        std::reverse(shuffled.points.begin(), shuffled.points.end());
        if (dim == 1) CHECK(wasserstein2(a, shuffled) == 0.0);
    }
}

TEST_CASE("lipschitz probes") {
    const auto lin = CoefficientSet::linear(0.2, -0.7, 0.5, 1.0);
    const auto probe = probe_lipschitz(lin, 1000, 8);
    CHECK(probe.within);
    CHECK_FALSE(probe.boundedness_checked);
    CHECK(probe.max_ratio <= 0.7 + 1e-12);
    auto understated = lin;
    understated.lipschitz = 0.2;
    CHECK_FALSE(probe_lipschitz(understated, 1000, 8).within);

    CoefficientSet poly;
    poly.drift.kind = DriftKind::clipped_polynomial;
    poly.drift.poly = {0.0, 1.0, 0.0, -0.1};
    poly.drift.poly_bound = 1.0;
    poly.lipschitz = 4.0;
    const auto pp = probe_lipschitz(poly, 1000, 9);
    CHECK(pp.boundedness_checked);
    CHECK(pp.bounded);

    CoefficientSet mod = CoefficientSet::brownian(1.0);
    mod.diffusion.kind = DiffusionKind::modulated;
    mod.diffusion.amplitude = 0.5;
    mod.diffusion.x_slope = 1.0;
    mod.lipschitz = 0.5;
    CHECK(probe_lipschitz(mod, 1000, 10).within);
    mod.lipschitz = 0.2;
    CHECK_FALSE(probe_lipschitz(mod, 1000, 10).within);
}

TEST_CASE("ellipticity") {
    auto c = CoefficientSet::brownian(0.5);
    CHECK(min_ellipticity(c) == doctest::Approx(0.25));
    c.ellipticity = 0.2;
    CHECK_NOTHROW(check_ellipticity(c));
    c.ellipticity = 1.0;
    CHECK_THROWS_AS(check_ellipticity(c), EllipticityError);
    CoefficientSet tall;
    tall.state_dim = 2;
    tall.noise_dim = 1;
    tall.diffusion.matrix = {1.0, 0.0};
    CHECK(min_ellipticity(tall) == doctest::Approx(0.0));
}

TEST_CASE("second moment stays within the growth bound") {
    const double alpha = 0.5, beta = 0.8, gamma = 0.6, sigma = 1.2;
    const auto c = CoefficientSet::linear(alpha, beta, gamma, sigma);
    const auto init = InitialCondition::gaussian({0.5}, {1.0});
    const auto ens = simulate_mckv(c, TimeGrid(0.0, 256), init, 5000, nullptr, 4, {Retention::all_nodes});
    double m2_0 = 0.0;
    for (double v : ens.node(0)) m2_0 += v * v;
    m2_0 /= 5000.0;
    const double growth = 1.0 + 4.0 * c.lipschitz;
    for (std::size_t k = 0; k <= 256; ++k) {
        double m2 = 0.0;
        for (double v : ens.node(k)) m2 += v * v;
        m2 /= 5000.0;
        const double t = ens.grid.node(k);
        CHECK(std::isfinite(m2));
        CHECK(m2 <= (m2_0 + (alpha * alpha + sigma * sigma) * t) * std::exp(growth * t));
    }
}

TEST_CASE("chaos report") {
    const auto still = chaos_report(CoefficientSet::brownian(0.0), TimeGrid(0.0, 16), InitialCondition::point({0.5}),
                                    {10, 100}, 1000, 1);
    CHECK(still.all_zero);
    CHECK_FALSE(still.slope.has_value());
    const auto bm = chaos_report(CoefficientSet::brownian(1.0), TimeGrid(0.0, 32), InitialCondition::point({0.0}),
                                 {100, 1000}, 100000, 5, 2);
    CHECK(bm.strictly_decreasing);
    REQUIRE(bm.slope.has_value());
    CHECK(*bm.slope < 0.0);
    CHECK_THROWS_AS(chaos_report(CoefficientSet::brownian(1.0), TimeGrid(0.0, 4), InitialCondition::point({0.0}),
                                 {100}, 100, 1),
                    std::invalid_argument);
}

TEST_CASE("ensemble csv") {
    const auto ens = simulate_mckv(frozen(), TimeGrid(0.0, 2), InitialCondition::point({1.5}), 2, nullptr, 1);
    std::ostringstream os;
    write_ensemble_csv(os, ens);
    CHECK(os.str() == "particle,time,x1\n0,0,1.5\n1,0,1.5\n0,1,1.5\n1,1,1.5\n");
}
