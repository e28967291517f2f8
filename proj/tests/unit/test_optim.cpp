#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "mkvrisk/optim.hpp"

using namespace mkv;

namespace {

double neg_rosenbrock(std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        s += 100.0 * std::pow(x[i + 1] - x[i] * x[i], 2) + std::pow(1.0 - x[i], 2);
    }
    return -s;
}

}  // namespace

TEST_CASE("nelder-mead finds the rosenbrock optimum") {
    const auto r = nelder_mead_maximize(neg_rosenbrock, {-1.2, 1.0});
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(r.value > -1e-8);
    CHECK(r.evaluations <= 20000);
}

TEST_CASE("bfgs finds the rosenbrock optimum") {
    GradientAscentOptions opts;
    opts.max_iterations = 200;
    opts.fd_step = 1e-6;
    const auto r = bfgs_maximize(neg_rosenbrock, {-1.2, 1.0}, opts);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("bfgs on a concave quadratic") {
    const auto f = [](std::span<const double> x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] - 0.5 * (i + 1.0) * x[i] * x[i];
        return s;
    };
    std::size_t calls = 0;
    const auto r = bfgs_maximize(f, std::vector<double>(6, 0.0), {}, [&](std::size_t, double) { ++calls; });
    for (std::size_t i = 0; i < 6; ++i) CHECK(r.x[i] == doctest::Approx(1.0 / (i + 1.0)).epsilon(1e-6));
    CHECK(calls == r.iterations);
}

TEST_CASE("infeasible regions count as -inf") {
    const auto f = [](std::span<const double> x) {
        return x[0] < 0.0 ? -std::numeric_limits<double>::infinity() : -(x[0] - 2.0) * (x[0] - 2.0);
    };
    CHECK(nelder_mead_maximize(f, {0.5}).x[0] == doctest::Approx(2.0).epsilon(1e-5));
    const auto none = [](std::span<const double>) { return -std::numeric_limits<double>::infinity(); };
    CHECK(std::isinf(bfgs_maximize(none, {0.0}).value));
    CHECK(std::isinf(nelder_mead_maximize(none, {0.0}).value));
}
