#include "mkvrisk/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mkv {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe(double v) { return std::isfinite(v) ? v : kNegInf; }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

OptimResult nelder_mead_maximize(const Objective& f, std::vector<double> x0, const NelderMeadOptions& options,
                                 const TraceHook& trace) {
    const std::size_t n = x0.size();
    if (n == 0) throw std::invalid_argument("nelder_mead: empty parameter vector");
    const double dn = static_cast<double>(n);
    const double alpha = 1.0;
    const double beta = 1.0 + 2.0 / dn;
    const double gamma = 0.75 - 0.5 / dn;
    const double delta = 1.0 - 1.0 / dn;

    OptimResult res;
    auto eval = [&](const std::vector<double>& x) {
        ++res.evaluations;
        return safe(f(x));
    };
    std::vector<std::vector<double>> simplex(n + 1, x0);
    std::vector<double> vals(n + 1);
    vals[0] = eval(x0);
    for (std::size_t i = 0; i < n; ++i) {
        simplex[i + 1][i] += options.initial_step;
        vals[i + 1] = eval(simplex[i + 1]);
    }
    std::vector<std::size_t> order(n + 1);
    std::vector<double> centroid(n), xr(n), xe(n), xc(n);
    while (res.evaluations < options.max_evaluations) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second = order[n - 1];
        ++res.iterations;
        if (trace) trace(res.iterations, vals[best]);
        double spread = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
            if (std::isfinite(vals[i]) && std::isfinite(vals[best])) {
                spread = std::max(spread, std::abs(vals[i] - vals[best]));
            } else if (i != best) {
                spread = std::numeric_limits<double>::infinity();
            }
        }
        double size = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
            for (std::size_t k = 0; k < n; ++k) size = std::max(size, std::abs(simplex[i][k] - simplex[best][k]));
        }
        if (spread <= options.tolerance * (1.0 + std::abs(vals[best])) && size <= 1e-9) {
            res.converged = true;
            break;
        }
        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == worst) continue;
            for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[i][k] / dn;
        }
        for (std::size_t k = 0; k < n; ++k) xr[k] = centroid[k] + alpha * (centroid[k] - simplex[worst][k]);
        const double fr = eval(xr);
        if (fr > vals[best]) {
            for (std::size_t k = 0; k < n; ++k) xe[k] = centroid[k] + beta * (xr[k] - centroid[k]);
            const double fe = eval(xe);
            if (fe > fr) {
                simplex[worst] = xe;
                vals[worst] = fe;
            } else {
                simplex[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if (fr > vals[second]) {
            simplex[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        const bool outside = fr > vals[worst];
        for (std::size_t k = 0; k < n; ++k) {
            xc[k] = outside ? centroid[k] + gamma * (xr[k] - centroid[k])
                            : centroid[k] - gamma * (centroid[k] - simplex[worst][k]);
        }
        const double fc = eval(xc);
        if (fc > (outside ? fr : vals[worst])) {
            simplex[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == best) continue;
            for (std::size_t k = 0; k < n; ++k) simplex[i][k] = simplex[best][k] + delta * (simplex[i][k] - simplex[best][k]);
            vals[i] = eval(simplex[i]);
        }
    }
    const auto it = std::max_element(vals.begin(), vals.end());
    res.value = *it;
    res.x = simplex[static_cast<std::size_t>(it - vals.begin())];
    return res;
}

OptimResult bfgs_maximize(const Objective& f, std::vector<double> x0, const GradientAscentOptions& options,
                          const TraceHook& trace) {
    const std::size_t n = x0.size();
    if (n == 0) throw std::invalid_argument("bfgs: empty parameter vector");
    OptimResult res;
    // minimize phi = -f
    auto phi = [&](const std::vector<double>& x) {
        ++res.evaluations;
        const double v = f(x);
        return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
    };
    auto gradient = [&](std::vector<double>& x, std::vector<double>& g) {
        for (std::size_t i = 0; i < n; ++i) {
            const double keep = x[i];
            x[i] = keep + options.fd_step;
            const double up = phi(x);
            x[i] = keep - options.fd_step;
            const double down = phi(x);
            x[i] = keep;
            g[i] = (up - down) / (2.0 * options.fd_step);
        }
    };
    std::vector<double> x = std::move(x0);
    double fx = phi(x);
    res.x = x;
    res.value = -fx;
    if (!std::isfinite(fx)) return res;
    std::vector<double> g(n), g_new(n), dir(n), s(n), y(n), x_new(n), hy(n);
    std::vector<double> h(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;
    bool scaled = false;
    gradient(x, g);
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
        res.iterations = it + 1;
        if (!std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); })) break;
        if (std::sqrt(dot(g, g)) <= options.gradient_tolerance) {
            res.converged = true;
            break;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc -= h[i * n + j] * g[j];
            dir[i] = acc;
        }
        double slope = dot(g, dir);
        if (slope >= 0.0) {
            std::fill(h.begin(), h.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                h[i * n + i] = 1.0;
                dir[i] = -g[i];
            }
            slope = dot(g, dir);
        }
        double step = 1.0;
        double f_new = fx;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + step * dir[i];
            f_new = phi(x_new);
            if (f_new <= fx + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        gradient(x_new, g_new);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        const double improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if (trace) trace(res.iterations, -fx);
        const double sy = dot(s, y);
        if (sy > 1e-14) {
            if (!scaled) {
                const double gam = sy / dot(y, y);
                for (std::size_t i = 0; i < n; ++i) h[i * n + i] = gam;
                scaled = true;
            }
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += h[i * n + j] * y[j];
                hy[i] = acc;
            }
            const double yhy = dot(y, hy);
            const double rho = 1.0 / sy;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    h[i * n + j] += (1.0 + yhy * rho) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        if (improvement <= options.value_tolerance * (1.0 + std::abs(fx))) {
            res.converged = true;
            break;
        }
    }
    res.x = x;
    res.value = -fx;
    return res;
}

}  // namespace mkv
