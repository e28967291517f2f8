#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mkvrisk/convex.hpp"

using namespace mkv;

namespace {

CostFunction sampled(double lo, double hi, std::size_t n, double (*f)(double)) {
    const auto g = UniformGrid::cube(1, lo, hi, n);
    GridTable t{g, std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) t.values[i] = f(g.axis(0).coord(i));
    return CostFunction::grid(std::move(t));
}

// sup over the listed z of q z - f(z), evaluated directly.
double direct_sup(const std::vector<double>& z, const std::vector<double>& fz, double q) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < z.size(); ++i) best = std::max(best, q * z[i] - fz[i]);
    return best;
}

// Lower convex hull of (x_i, y_i), x sorted; evaluated at every x_i.
std::vector<double> lower_hull(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<std::size_t> h;
    for (std::size_t i = 0; i < x.size(); ++i) {
        while (h.size() >= 2) {
            const std::size_t a = h[h.size() - 2];
            const std::size_t b = h.back();
            const double cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a]);
            if (cross <= 0.0) {
                h.pop_back();
            } else {
                break;
            }
        }
        h.push_back(i);
    }
    std::vector<double> out(x.size());
    std::size_t seg = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        while (seg + 1 < h.size() && x[h[seg + 1]] < x[i]) ++seg;
        if (seg + 1 == h.size()) {
            out[i] = y[h[seg]];
            continue;
        }
        const std::size_t a = h[seg];
        const std::size_t b = h[seg + 1];
        out[i] = y[a] + (y[b] - y[a]) * (x[i] - x[a]) / (x[b] - x[a]);
    }
    return out;
}

}  // namespace

TEST_CASE("closed-form conjugates") {
    const auto dual = UniformGrid::cube(1, -1, 1, 3);
    const CostFunction q = legendre_transform(CostFunction::quadratic(), dual);
    CHECK(q.kind() == CostKind::quadratic);
    CHECK(q(1.7) == doctest::Approx(0.5 * 1.7 * 1.7));

    const CostFunction p = legendre_transform(CostFunction::power(4.0), dual);
    CHECK(p.kind() == CostKind::power);
    CHECK(p.exponent() == doctest::Approx(4.0 / 3.0));
    for (double v : {0.3, 1.0, 2.5}) CHECK(p(v) == doctest::Approx(0.75 * std::pow(v, 4.0 / 3.0)));

    const CostFunction scaled = legendre_transform(CostFunction::quadratic(4.0), dual);
    CHECK(scaled(2.0) == doctest::Approx(0.5));
    CHECK(holder_conjugate(3.0) == doctest::Approx(1.5));
    CHECK_THROWS_AS(CostFunction::power(1.0), std::invalid_argument);
}

TEST_CASE("conjugate of the norm on a box is the clipped support function") {
    const CostFunction f = sampled(-5, 5, 1001, [](double z) { return std::abs(z); });
    const auto dual = UniformGrid::cube(1, -2, 2, 401);
    TransformInfo info;
    const CostFunction g = legendre_transform(f, dual, &info);
    CHECK(info.numeric);
    CHECK(info.box_clipped);
    for (std::size_t j = 0; j < dual.size(); ++j) {
        const double q = dual.axis(0).coord(j);
        const double expect = std::abs(q) <= 1.0 ? 0.0 : 5.0 * (std::abs(q) - 1.0);
        CHECK(g.table().values[j] == doctest::Approx(expect).epsilon(1e-12).scale(1.0));
        if (std::abs(q) > 1.0 + 1e-9) CHECK(info.clipped_mask[j] == 1);
        if (std::abs(q) < 1.0 - 1e-9) CHECK(info.clipped_mask[j] == 0);
    }
}

TEST_CASE("grid transform agrees with a direct double loop in 2-D") {
    const auto primal = UniformGrid::cube(2, -2, 2, 41);
    GridTable t{primal, std::vector<double>(primal.size())};
    std::vector<double> p(2);
    for (std::size_t i = 0; i < primal.size(); ++i) {
        primal.point(i, p);
        t.values[i] = 0.5 * p[0] * p[0] + 0.25 * std::pow(p[1], 4) + 0.1 * p[0] * p[1];
    }
    const auto dual = UniformGrid::cube(2, -1, 1, 11);
    const CostFunction g = legendre_transform(CostFunction::grid(t), dual);
    std::vector<double> q(2);
    for (std::size_t j = 0; j < dual.size(); ++j) {
        dual.point(j, q);
        double best = -1e300;
        for (std::size_t i = 0; i < primal.size(); ++i) {
            primal.point(i, p);
            best = std::max(best, q[0] * p[0] + q[1] * p[1] - t.values[i]);
        }
        CHECK(g.table().values[j] == doctest::Approx(best).epsilon(1e-13).scale(1.0));
    }
}

TEST_CASE("non-convex grid input is rejected with a report") {
    const CostFunction f = sampled(-3, 3, 61, [](double z) { return -std::cos(z); });
    const auto dual = UniformGrid::cube(1, -2, 2, 41);
    try {
        legendre_transform(f, dual);
        FAIL("expected a convexity error");
    } catch (const ConvexityError& e) {
        CHECK(e.axis() == 0);
        CHECK(e.second_difference() < 0.0);
    }
}

TEST_CASE("biconjugate of a quartic is within 1e-3") {
    const CostFunction f = sampled(-2, 2, 801, [](double z) { return z * z * z * z; });
    const auto dual = UniformGrid::cube(1, -32, 32, 3201);
    const CostFunction fss = biconjugate(f, dual);
    std::vector<double> z(801), fz(801);
    for (std::size_t i = 0; i < 801; ++i) {
        z[i] = f.table().grid.axis(0).coord(i);
        fz[i] = f.table().values[i];
    }
    std::vector<double> qs(3201), gq(3201);
    for (std::size_t j = 0; j < 3201; ++j) {
        qs[j] = dual.axis(0).coord(j);
        gq[j] = direct_sup(z, fz, qs[j]);
    }
    double err = 0.0;
    for (std::size_t i = 0; i < 801; ++i) {
        const double oracle = direct_sup(qs, gq, z[i]);
        CHECK(fss.table().values[i] == doctest::Approx(oracle).epsilon(1e-12).scale(1.0));
        err = std::max(err, std::abs(fss.table().values[i] - fz[i]));
    }
    CHECK(err <= 1e-3);

    const CostFunction q = CostFunction::quadratic(2.0);
    const CostFunction qss = biconjugate(q, dual);
    CHECK(qss.kind() == CostKind::quadratic);
    CHECK(qss(1.3) == q(1.3));
}

TEST_CASE("biconjugate of a non-convex function is its lower convex hull") {
    const std::size_t n = 629;
    const CostFunction f = sampled(-std::numbers::pi, std::numbers::pi, n, [](double z) { return -std::cos(z); });
    const auto dual = UniformGrid::cube(1, -3, 3, 6001);
    const CostFunction fss = biconjugate(f, dual);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = f.table().grid.axis(0).coord(i);
        y[i] = f.table().values[i];
    }
    const auto hull = lower_hull(x, y);
    std::vector<double> qs(dual.size()), gq(dual.size());
    for (std::size_t j = 0; j < dual.size(); ++j) {
        qs[j] = dual.axis(0).coord(j);
        gq[j] = direct_sup(x, y, qs[j]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(fss.table().values[i] == doctest::Approx(direct_sup(qs, gq, x[i])).epsilon(1e-12).scale(1.0));
        CHECK(fss.table().values[i] <= hull[i] + 1e-12);
        // slope quantization bound: dual step times the width of the primal box
        CHECK(fss.table().values[i] >= hull[i] - dual.axis(0).step() * 2.0 * std::numbers::pi);
    }
    const auto mid = n / 2;
    CHECK(fss.table().values[mid] == doctest::Approx(-1.0));
    CHECK(*std::min_element(fss.table().values.begin(), fss.table().values.end()) == doctest::Approx(-1.0));
    CHECK(fss.table().values[n / 4] < -0.1);
}

TEST_CASE("biconjugation is idempotent") {
    const CostFunction f = sampled(-2, 2, 401, [](double z) { return std::abs(z) < 1 ? -std::cos(z) : z * z - 1.5; });
    const auto dual = UniformGrid::cube(1, -8, 8, 801);
    const CostFunction once = biconjugate(f, dual);
    const CostFunction twice = biconjugate(once, dual);
    for (std::size_t i = 0; i < once.table().values.size(); ++i) {
        CHECK(std::abs(once.table().values[i] - twice.table().values[i]) <= 1e-12);
    }
}

TEST_CASE("closed forms match grid transforms at interior points") {
    const auto primal = UniformGrid::cube(1, -3, 3, 6001);
    const auto dual = UniformGrid::cube(1, -2, 2, 401);
    for (const CostFunction& f : {CostFunction::quadratic(), CostFunction::power(4.0)}) {
        TransformInfo info;
        const CostFunction numeric = legendre_transform(sample_on_grid(f, primal), dual, &info);
        const CostFunction exact = legendre_transform(f, dual);
        for (std::size_t j = 0; j < dual.size(); ++j) {
            CHECK(info.clipped_mask[j] == 0);
            const double q = dual.axis(0).coord(j);
            CHECK(std::abs(numeric.table().values[j] - exact(q)) <= 1e-6);
        }
    }
}

TEST_CASE("truncated pair of the quadratic") {
    const auto grid = UniformGrid::cube(1, -4, 4, 801);
    const ConjugatePair pair = truncate_pair(CostFunction::quadratic(), 1.0, grid);
    CHECK(pair.provenance == Provenance::numeric_grid);
    const auto& fz = pair.primal.table().values;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double z = grid.axis(0).coord(i);
        const double expect = std::abs(z) <= 1.0 ? 0.5 * z * z : std::abs(z) - 0.5;
        CHECK(fz[i] == doctest::Approx(expect).epsilon(1e-12).scale(1.0));
    }
    CHECK(pair.dual(0.5) == doctest::Approx(0.125).epsilon(1e-12));

    const ConjugatePair closed = truncate_closed_form(CostFunction::quadratic(), 1.0);
    CHECK(closed.primal(0.5) == doctest::Approx(0.125));
    CHECK(closed.primal(3.0) == doctest::Approx(2.5));
    CHECK(closed.dual(0.5) == doctest::Approx(0.125));
    CHECK(std::isinf(closed.dual(1.5)));
    CHECK_THROWS_AS(truncate_pair(CostFunction::quadratic(), 0.0, grid), std::invalid_argument);
    CHECK_THROWS_AS(truncate_closed_form(CostFunction::quadratic(), -1.0), std::invalid_argument);
}

TEST_CASE("inactive truncation reproduces the plain conjugate") {
    const auto grid = UniformGrid::cube(1, -3, 3, 301);
    const CostFunction g = CostFunction::power(4.0 / 3.0);
    const ConjugatePair pair = truncate_pair(g, 10.0, grid);
    const CostFunction plain = legendre_transform(sample_on_grid(g, grid), grid);
    CHECK(pair.primal.table().values == plain.table().values);
}

TEST_CASE("truncation ladder ordering, Lipschitz bound and Young") {
    const auto grid = UniformGrid::cube(1, -6, 6, 601);
    const CostFunction g = CostFunction::power(4.0 / 3.0);
    const auto gs = sample_on_grid(g, grid).table().values;
    // on a discrete grid the order reversal lands on the discrete biconjugate of g
    const auto gss = biconjugate(sample_on_grid(g, grid), grid).table().values;
    double grid_tol = 0.0;
    for (std::size_t i = 0; i < gs.size(); ++i) grid_tol = std::max(grid_tol, std::abs(gs[i] - gss[i]));
    CHECK(grid_tol < 1e-3);
    std::vector<ConjugatePair> ladder;
    for (double n : {0.5, 1.0, 2.0, 4.0}) ladder.push_back(truncate_pair(g, n, grid));
    const double h = grid.axis(0).step();
    for (std::size_t r = 0; r < ladder.size(); ++r) {
        const double n = std::pow(2.0, double(r) - 1.0);
        const auto& f = ladder[r].primal.table().values;
        const auto& gn = ladder[r].dual.table().values;
        double lip = 0.0;
        for (std::size_t i = 0; i + 1 < f.size(); ++i) lip = std::max(lip, std::abs(f[i + 1] - f[i]) / h);
        CHECK(lip <= n + 1e-9);
        for (std::size_t i = 0; i < gs.size(); ++i) {
            CHECK(gn[i] >= gss[i] - 1e-12);
            CHECK(gn[i] >= gs[i] - grid_tol - 1e-12);
        }
        if (r + 1 < ladder.size()) {
            const auto& f_next = ladder[r + 1].primal.table().values;
            for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] <= f_next[i] + 1e-12);
        }
        std::vector<double> zs, qs;
        for (std::size_t i = 0; i < grid.size(); i += 7) zs.push_back(grid.axis(0).coord(i));
        for (std::size_t i = 3; i < grid.size(); i += 11) qs.push_back(grid.axis(0).coord(i));
        CHECK(young_min_slack(ladder[r], zs, qs, 1) >= -1e-9);
    }
    const ConjugatePair closed{CostFunction::quadratic(), CostFunction::quadratic(), Provenance::closed_form, {}, {}};
    std::vector<double> zs{-2, -0.5, 0, 1, 3}, qs{-1, 0, 0.25, 2};
    CHECK(young_min_slack(closed, zs, qs, 1) >= -1e-9);
}

TEST_CASE("envelope of a step") {
    const auto grid = UniformGrid::cube(1, -2, 2, 401);
    GridTable step{grid, std::vector<double>(grid.size())};
    for (std::size_t i = 0; i < grid.size(); ++i) step.values[i] = i >= 200 ? 1.0 : 0.0;
    const GridTable env = pasch_hausdorff(step, 1.0);
    const double h = grid.axis(0).step();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double x = grid.axis(0).coord(i);
        double direct = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < grid.size(); ++j) {
            direct = std::min(direct, step.values[j] + std::abs(x - grid.axis(0).coord(j)));
        }
        CHECK(env.values[i] == direct);
        const double continuum = i < 200 ? 0.0 : std::min(1.0, x);
        CHECK(std::abs(env.values[i] - continuum) <= h + 1e-12);
    }
}

TEST_CASE("envelope invariants") {
    const auto grid = UniformGrid::cube(1, -3, 3, 121);
    GridTable lip{grid, std::vector<double>(grid.size())};
    GridTable rough{grid, std::vector<double>(grid.size())};
    GridTable flat{grid, std::vector<double>(grid.size(), 2.5)};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double x = grid.axis(0).coord(i);
        lip.values[i] = std::sin(x);
        rough.values[i] = std::floor(3 * x) * x;
    }
    CHECK(pasch_hausdorff(lip, 2.0).values == lip.values);
    CHECK(pasch_hausdorff(flat, 0.7).values == flat.values);
    const double h = grid.axis(0).step();
    std::vector<double> prev;
    for (double m : {0.5, 1.0, 4.0}) {
        const auto env = pasch_hausdorff(rough, m, kernels::Backend::serial);
        CHECK(env.values == pasch_hausdorff(rough, m, kernels::Backend::parallel).values);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            CHECK(env.values[i] <= rough.values[i]);
            if (i + 1 < grid.size()) CHECK(std::abs(env.values[i + 1] - env.values[i]) <= m * h + 1e-12);
            if (!prev.empty()) CHECK(env.values[i] >= prev[i]);
        }
        prev = env.values;
    }
    CHECK_THROWS_AS(pasch_hausdorff(GridTable{}, 1.0), std::invalid_argument);
}

TEST_CASE("viscosity scaling") {
    const CostFunction q4 = viscosity_scale(CostFunction::quadratic(), 4);
    CHECK(q4(2.0) == doctest::Approx(0.5));
    const CostFunction p = CostFunction::power(4.0 / 3.0);
    const CostFunction p16 = viscosity_scale(p, 16);
    CHECK(p16(1.0) == doctest::Approx(0.75 * std::pow(16.0, -2.0 / 3.0)).epsilon(1e-14));
    const CostFunction same = viscosity_scale(p, 1);
    CHECK(same(1.7) == p(1.7));
    for (long n : {2L, 3L, 16L, 64L}) {
        for (const CostFunction& g : {CostFunction::quadratic(0.7), p, CostFunction::restricted(2.0, 1.0, 3.0),
                                      CostFunction::truncated(2.0, 1.0, 3.0)}) {
            const CostFunction gn = viscosity_scale(g, n);
            for (double q : {0.1, 0.9, 2.0}) {
                const double a = gn(std::sqrt(double(n)) * q);
                const double b = g(q);
                CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)));
            }
        }
    }
    CHECK_THROWS_AS(viscosity_scale(p, 0), std::invalid_argument);
}

TEST_CASE("offset terms flip sign under conjugation") {
    OffsetTerm off{0.2, {1.0}, {0.5}, 0.3};
    const CostFunction f = CostFunction::quadratic().with_offset(off);
    const CostFunction g = legendre_transform(f, UniformGrid::cube(1, -1, 1, 3));
    const std::vector<double> z{1.0}, x{0.05}, mean{0.1};
    CHECK(f(0.0, z, x, mean) == doctest::Approx(0.5 + 0.3));
    CHECK(g(0.0, z, x, mean) == doctest::Approx(0.5 - 0.3));
    const std::vector<double> xs{-0.4};
    CHECK(f.offset_value(xs, mean) == doctest::Approx(-0.15));
}

TEST_CASE("time factors") {
    const CostFunction f = CostFunction::quadratic().with_time_factors({1.0, 2.0});
    const std::vector<double> z{1.0};
    CHECK(f.z_part(0.25, z) == doctest::Approx(0.5));
    CHECK(f.z_part(0.75, z) == doctest::Approx(1.0));
    const CostFunction g = legendre_transform(f, UniformGrid::cube(1, -1, 1, 3));
    CHECK(g.z_part(0.75, z) == doctest::Approx(0.25));
    CHECK_THROWS_AS(CostFunction::grid(GridTable{UniformGrid::cube(1, -1, 1, 3), {1, 0, 1}}).with_time_factors({1.0}),
                    std::invalid_argument);
}
