#include "mkvrisk/deterministic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>

#include "mkvrisk/optim.hpp"
#include "mkvrisk/rng.hpp"

namespace mkv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void weighted_mean(std::span<const double> x, std::size_t m, std::span<const double> weights,
                   std::array<double, kMaxStateDim>& out) {
    const std::size_t n = x.size() / m;
    double total = 0.0;
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        total += w;
        for (std::size_t r = 0; r < m; ++r) out[r] += w * x[i * m + r];
    }
    for (std::size_t r = 0; r < m; ++r) out[r] /= total;
}

using ControlAt = std::function<void(double t, std::size_t particle, std::span<const double> x, std::span<double> out)>;

/// Classical RK4 for M coupled characteristics plus their running costs. With `point_measure`
/// every characteristic sees delta at its own state; otherwise the empirical mean of all of them.
struct Rk4System {
    const CoefficientSet& coeffs;
    const TimeGrid& grid;
    const ControlAt& control;
    const CostFunction* cost;
    bool point_measure;
    kernels::Backend backend;
    std::span<const double> weights = {};  // multiplicity of each characteristic; empty means 1

    std::size_t m() const { return coeffs.state_dim; }

    /// Derivative of states (M x m) and costs (M) at time t with the control cell of t_ctrl.
    void derivative(double t, double t_ctrl, std::span<const double> x, std::span<double> dx,
                    std::span<double> dc) const {
        const std::size_t mm = m();
        const std::size_t d = coeffs.noise_dim;
        const std::size_t particles = x.size() / mm;
        std::array<double, kMaxStateDim> shared{};
        if (!point_measure) weighted_mean(x, mm, weights, shared);
        kernels::for_each_index(backend, particles, [&](std::size_t i) {
            const auto xi = x.subspan(i * mm, mm);
            const std::span<const double> mean = point_measure ? xi : std::span<const double>(shared.data(), mm);
            std::array<double, kMaxStateDim> b{}, phi{};
            std::array<double, kMaxStateDim * kMaxStateDim> sigma{};
            coeffs.drift_at(t, xi, mean, std::span<double>(b.data(), mm));
            coeffs.sigma_at(xi, mean, std::span<double>(sigma.data(), mm * d));
            control(t_ctrl, i, xi, std::span<double>(phi.data(), d));
            for (std::size_t r = 0; r < mm; ++r) {
                double v = b[r];
                for (std::size_t j = 0; j < d; ++j) v += sigma[r * d + j] * phi[j];
                dx[i * mm + r] = v;
            }
            dc[i] = cost ? (*cost)(t_ctrl, std::span<const double>(phi.data(), d), xi, mean) : 0.0;
        });
    }

    /// Advances x in place over step k; adds the step cost to `costs`. Returns false on overflow.
    bool step(std::size_t k, std::span<double> x, std::span<double> costs, std::vector<double>& work) const {
        const std::size_t n = x.size();
        const std::size_t particles = costs.size();
        const double h = grid.step();
        const double t0 = grid.node(k);
        const double tm = t0 + 0.5 * h;
        work.resize(5 * n + 4 * particles);
        double* k1 = work.data();
        double* k2 = k1 + n;
        double* k3 = k2 + n;
        double* k4 = k3 + n;
        double* tmp = k4 + n;
        double* c1 = tmp + n;
        double* c2 = c1 + particles;
        double* c3 = c2 + particles;
        double* c4 = c3 + particles;
        const auto span_n = [n](double* p) { return std::span<double>(p, n); };
        const auto span_p = [particles](double* p) { return std::span<double>(p, particles); };
        derivative(t0, tm, x, span_n(k1), span_p(c1));
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
        derivative(tm, tm, span_n(tmp), span_n(k2), span_p(c2));
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
        derivative(tm, tm, span_n(tmp), span_n(k3), span_p(c3));
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * k3[i];
        derivative(t0 + h, tm, span_n(tmp), span_n(k4), span_p(c4));
        bool finite = true;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            finite = finite && std::isfinite(x[i]);
        }
        for (std::size_t i = 0; i < particles; ++i) costs[i] += h / 6.0 * (c1[i] + 2.0 * c2[i] + 2.0 * c3[i] + c4[i]);
        return finite;
    }
};

/// Identical initial states stay identical under a deterministic feedback flow, so each
/// distinct state is transported once and carries its multiplicity.
struct DistinctStates {
    std::vector<double> states;
    std::vector<double> weights;
};

DistinctStates distinct_states(std::span<const double> x, std::size_t m) {
    const std::size_t n = x.size() / m;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    const auto row = [&](std::size_t i) { return x.subspan(i * m, m); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(row(a).begin(), row(a).end(), row(b).begin(), row(b).end());
    });
    DistinctStates out;
    for (std::size_t j = 0; j < n; ++j) {
        const auto r = row(order[j]);
        const bool same = !out.weights.empty() && std::equal(r.begin(), r.end(), out.states.end() - static_cast<std::ptrdiff_t>(m));
        if (same) {
            out.weights.back() += 1.0;
        } else {
            out.states.insert(out.states.end(), r.begin(), r.end());
            out.weights.push_back(1.0);
        }
    }
    return out;
}

struct WeightedFlow {
    double payoff = 0.0;
    double cost = 0.0;
    std::vector<double> final_states;
};

WeightedFlow run_flow(const CoefficientSet& coeffs, const TimeGrid& grid, const DistinctStates& start,
                      const TerminalFunctional& f, const CostFunction& g, const ControlField& field,
                      kernels::Backend backend) {
    const std::size_t m = coeffs.state_dim;
    const std::size_t distinct = start.weights.size();
    const ControlAt ctrl = [&](double t, std::size_t i, std::span<const double> x, std::span<double> out) {
        field.value(t, 0, i, x, out);
    };
    // a parallel region per stage only pays off for large clouds
    const auto effective = distinct >= 4096 ? backend : kernels::Backend::serial;
    const Rk4System sys{coeffs, grid, ctrl, &g, false, effective, start.weights};
    WeightedFlow out;
    out.final_states = start.states;
    std::vector<double> costs(distinct, 0.0), work;
    for (std::size_t k = 0; k < grid.steps; ++k) {
        if (!sys.step(k, out.final_states, costs, work)) throw SimulationError(k + 1, "flow_action: non-finite state");
    }
    std::array<double, kMaxStateDim> buf{};
    weighted_mean(out.final_states, m, start.weights, buf);
    const std::span<const double> mean(buf.data(), m);
    double total = 0.0;
    for (std::size_t i = 0; i < distinct; ++i) {
        const double w = start.weights[i];
        total += w;
        out.payoff += w * f(std::span<const double>(out.final_states.data() + i * m, m), mean);
        out.cost += w * costs[i];
    }
    out.payoff /= total;
    out.cost /= total;
    return out;
}

std::vector<double> restart_point(std::size_t dim, std::size_t restart, double spread, std::uint64_t seed) {
    std::vector<double> x(dim, 0.0);
    if (restart == 0) return x;
    const CounterRng rng{seed};
    rng.normals(restart, 1, StreamTag::optimizer, x);
    for (double& v : x) v *= spread;
    return x;
}

struct MultiStart {
    std::vector<double> best_x;
    double best = -kInf;
    std::vector<double> values;
    double spread = 0.0;
    std::size_t evaluations = 0;
};

MultiStart multi_start(const Objective& objective, std::size_t dim, const ActionBudget& budget, std::uint64_t seed) {
    if (budget.restarts == 0 || budget.max_evaluations == 0) {
        throw std::invalid_argument("optimizer budget needs restarts >= 1 and evaluations >= 1");
    }
    MultiStart out;
    double worst = kInf;
    for (std::size_t r = 0; r < budget.restarts; ++r) {
        NelderMeadOptions nm;
        nm.max_evaluations = budget.max_evaluations;
        auto res = nelder_mead_maximize(objective, restart_point(dim, r, budget.spread, seed), nm);
        out.evaluations += res.evaluations;
        if (budget.polish && std::isfinite(res.value)) {
            GradientAscentOptions go;
            go.max_iterations = 100;
            go.fd_step = 1e-6;
            const auto pol = bfgs_maximize(objective, res.x, go);
            out.evaluations += pol.evaluations;
            if (pol.value > res.value) res = pol;
        }
        out.values.push_back(res.value);
        if (!std::isfinite(res.value)) continue;
        worst = std::min(worst, res.value);
        if (res.value > out.best) {
            out.best = res.value;
            out.best_x = res.x;
        }
    }
    if (out.best_x.empty()) throw InfeasibleProblem("every restart diverged (objective -inf)");
    out.spread = out.best - worst;
    return out;
}

}  // namespace

// ---------------------------------------------------------------- controls and paths

ControlVector ControlVector::zeros(std::size_t cells, std::size_t dim, double start) {
    ControlVector c;
    c.dim = dim;
    c.cells = cells;
    c.start = start;
    c.values.assign(cells * dim, 0.0);
    c.validate();
    return c;
}

ControlVector ControlVector::constant(std::size_t cells, std::vector<double> value, double start) {
    ControlVector c = zeros(cells, value.size(), start);
    for (std::size_t k = 0; k < cells; ++k) std::copy(value.begin(), value.end(), c.values.begin() + k * c.dim);
    return c;
}

std::size_t ControlVector::cell_of(double t) const {
    const double u = (t - start) / (1.0 - start);
    if (!(u > 0.0)) return 0;
    return std::min(cells - 1, static_cast<std::size_t>(u * static_cast<double>(cells)));
}

std::span<const double> ControlVector::at(double t) const { return {values.data() + cell_of(t) * dim, dim}; }

double ControlVector::energy() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return s * (1.0 - start) / static_cast<double>(cells);
}

void ControlVector::validate() const {
    if (cells == 0 || dim == 0) throw std::invalid_argument("ControlVector: need cells >= 1 and dim >= 1");
    if (values.size() != cells * dim) throw std::invalid_argument("ControlVector: value count mismatch");
    if (!(start < 1.0)) throw std::invalid_argument("ControlVector: start must be < 1");
    for (double v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument("ControlVector: non-finite entry");
    }
}

DeterministicPath integrate_ode(const CoefficientSet& coeffs, const TimeGrid& grid, std::span<const double> x0,
                                const ControlVector& control) {
    coeffs.validate();
    control.validate();
    if (x0.size() != coeffs.state_dim) throw std::invalid_argument("integrate_ode: x0 dimension mismatch");
    if (control.dim != coeffs.noise_dim) throw std::invalid_argument("integrate_ode: control dimension mismatch");
    const ControlAt ctrl = [&](double t, std::size_t, std::span<const double>, std::span<double> out) {
        const auto v = control.at(t);
        std::copy(v.begin(), v.end(), out.begin());
    };
    const Rk4System sys{coeffs, grid, ctrl, nullptr, true, kernels::Backend::serial};
    DeterministicPath path;
    path.grid = grid;
    path.dim = coeffs.state_dim;
    path.states.resize((grid.steps + 1) * path.dim);
    std::vector<double> x(x0.begin(), x0.end()), work;
    double cost = 0.0;
    std::copy(x.begin(), x.end(), path.states.begin());
    for (std::size_t k = 0; k < grid.steps; ++k) {
        if (!sys.step(k, x, std::span<double>(&cost, 1), work)) {
            throw SimulationError(k + 1, "integrate_ode: non-finite state");
        }
        std::copy(x.begin(), x.end(), path.states.begin() + static_cast<std::ptrdiff_t>((k + 1) * path.dim));
    }
    return path;
}

ActionValue action_value(const DeterministicPath& path, const ControlVector& control, const TerminalFunctional& f,
                         const CostFunction& g) {
    control.validate();
    const TimeGrid& grid = path.grid;
    if (path.states.size() != (grid.steps + 1) * path.dim) throw std::invalid_argument("action_value: malformed path");
    ActionValue a;
    const double h = grid.step();
    for (std::size_t k = 0; k < grid.steps; ++k) {
        const double tm = grid.node(k) + 0.5 * h;
        const auto phi = control.at(tm);
        double c = g.z_part(tm, phi);
        if (g.offset()) c += 0.5 * (g.offset_value(path.node(k), path.node(k)) + g.offset_value(path.node(k + 1), path.node(k + 1)));
        a.cost += c * h;
    }
    const auto x1 = path.final_state();
    a.payoff = f(x1, x1);
    a.total = a.payoff - a.cost;
    return a;
}

ActionResult maximize_action(const CoefficientSet& coeffs, const TimeGrid& grid, std::span<const double> x0,
                             const TerminalFunctional& f, const CostFunction& g, std::size_t cells,
                             const ActionBudget& budget, std::uint64_t seed) {
    ControlVector work = ControlVector::zeros(cells, coeffs.noise_dim, grid.start);
    const Objective objective = [&](std::span<const double> theta) {
        std::copy(theta.begin(), theta.end(), work.values.begin());
        for (double v : work.values) {
            if (!std::isfinite(v)) return -kInf;
        }
        try {
            const double v = action_value(integrate_ode(coeffs, grid, x0, work), work, f, g).total;
            return std::isfinite(v) ? v : -kInf;
        } catch (const SimulationError&) {
            return -kInf;
        }
    };
    const auto ms = multi_start(objective, work.values.size(), budget, seed);
    ActionResult out;
    out.control = work;
    out.control.values = ms.best_x;
    out.value = action_value(integrate_ode(coeffs, grid, x0, out.control), out.control, f, g);
    out.restart_values = ms.values;
    out.restart_spread = ms.spread;
    out.evaluations = ms.evaluations;
    return out;
}

RateResult rate_function(const CoefficientSet& coeffs, const TimeGrid& grid, const DeterministicPath& target) {
    coeffs.validate();
    const std::size_t m = coeffs.state_dim;
    const std::size_t d = coeffs.noise_dim;
    if (target.dim != m || target.states.size() != (grid.steps + 1) * m) {
        throw std::invalid_argument("rate_function: target does not match the grid and state dimension");
    }
    RateResult out;
    out.control = ControlVector::zeros(grid.steps, d, grid.start);
    const double h = grid.step();
    Eigen::MatrixXd sigma(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    Eigen::VectorXd v(static_cast<Eigen::Index>(m));
    std::vector<double> b(m), s(m * d);
    double energy = 0.0;
    for (std::size_t k = 0; k < grid.steps; ++k) {
        const auto x = target.node(k);
        const auto y = target.node(k + 1);
        coeffs.drift_at(grid.node(k), x, x, b);
        coeffs.sigma_at(x, x, s);
        for (std::size_t r = 0; r < m; ++r) {
            v(static_cast<Eigen::Index>(r)) = (y[r] - x[r]) / h - b[r];
            for (std::size_t j = 0; j < d; ++j) sigma(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = s[r * d + j];
        }
        if (coeffs.ellipticity > 0.0) {
            const Eigen::MatrixXd gram = sigma * sigma.transpose();
            const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
            if (lo < coeffs.ellipticity) throw EllipticityError(lo, coeffs.ellipticity);
        }
        const Eigen::VectorXd phi = sigma.completeOrthogonalDecomposition().solve(v);
        const double residual = (sigma * phi - v).norm() / (1.0 + v.norm());
        out.worst_residual = std::max(out.worst_residual, residual);
        if (residual > kReachabilityTolerance) out.reachable = false;
        for (std::size_t j = 0; j < d; ++j) out.control.values[k * d + j] = phi(static_cast<Eigen::Index>(j));
        energy += phi.squaredNorm() * h;
    }
    out.value = out.reachable ? 0.5 * energy : kInf;
    return out;
}

// ---------------------------------------------------------------- measure flow

FlowValue flow_action(const CoefficientSet& coeffs, const TimeGrid& grid, std::span<const double> initial_states,
                      const TerminalFunctional& f, const CostFunction& g, const ControlField& field,
                      kernels::Backend backend) {
    const std::size_t m = coeffs.state_dim;
    if (initial_states.empty() || initial_states.size() % m != 0) {
        throw std::invalid_argument("flow_action: initial states do not match the state dimension");
    }
    if (field.dim() != coeffs.noise_dim) throw std::invalid_argument("flow_action: control dimension mismatch");
    DistinctStates all;
    all.states.assign(initial_states.begin(), initial_states.end());
    all.weights.assign(initial_states.size() / m, 1.0);
    auto run = run_flow(coeffs, grid, all, f, g, field, backend);
    FlowValue out;
    out.payoff = run.payoff;
    out.cost = run.cost;
    out.total = run.payoff - run.cost;
    out.final_states = std::move(run.final_states);
    return out;
}

FlowResult flow_value_random_init(const CoefficientSet& coeffs, const TimeGrid& grid, const InitialCondition& init,
                                  const TerminalFunctional& f, const CostFunction& g,
                                  const ControlField& feedback_template, std::size_t particles,
                                  const ActionBudget& budget, std::uint64_t seed, kernels::Backend backend) {
    coeffs.validate();
    if (particles < kMinFlowParticles) {
        throw std::invalid_argument("flow_value_random_init: need at least " + std::to_string(kMinFlowParticles) +
                                    " characteristics");
    }
    if (feedback_template.mode() == ControlMode::per_sample) {
        throw std::invalid_argument("flow_value_random_init: per-sample tables are not a feedback field");
    }
    if (init.dim() != coeffs.state_dim) throw std::invalid_argument("flow_value_random_init: init dimension mismatch");
    std::vector<double> x0(particles * coeffs.state_dim);
    sample_initial(init, derive_seed(seed, 1), particles, x0);
    if (feedback_template.dim() != coeffs.noise_dim) {
        throw std::invalid_argument("flow_value_random_init: control dimension mismatch");
    }
    const DistinctStates start = distinct_states(x0, coeffs.state_dim);

    ControlField field = feedback_template;
    const Objective objective = [&](std::span<const double> theta) {
        for (double v : theta) {
            if (!std::isfinite(v)) return -kInf;
        }
        field.set_params(theta);
        try {
            const auto run = run_flow(coeffs, grid, start, f, g, field, backend);
            const double v = run.payoff - run.cost;
            return std::isfinite(v) ? v : -kInf;
        } catch (const SimulationError&) {
            return -kInf;
        }
    };
    const auto ms = multi_start(objective, field.params().size(), budget, derive_seed(seed, 2));
    FlowResult out;
    out.field = feedback_template;
    out.field.set_params(ms.best_x);
    const auto best = run_flow(coeffs, grid, start, f, g, out.field, backend);
    out.value = best.payoff - best.cost;
    out.payoff = best.payoff;
    out.cost = best.cost;
    out.restart_values = ms.values;
    out.restart_spread = ms.spread;
    out.evaluations = ms.evaluations;
    return out;
}

void write_control_csv(std::ostream& os, const ControlVector& control) {
    os << "time";
    for (std::size_t j = 0; j < control.dim; ++j) os << ",phi_" << j + 1;
    os << '\n';
    const double width = (1.0 - control.start) / static_cast<double>(control.cells);
    for (std::size_t k = 0; k < control.cells; ++k) {
        os << control.start + width * static_cast<double>(k);
        for (std::size_t j = 0; j < control.dim; ++j) os << ',' << control.values[k * control.dim + j];
        os << '\n';
    }
}

void write_path_csv(std::ostream& os, const DeterministicPath& path) {
    os << "time";
    for (std::size_t r = 0; r < path.dim; ++r) os << ",x_" << r + 1;
    os << '\n';
    for (std::size_t k = 0; k <= path.grid.steps; ++k) {
        os << path.grid.node(k);
        for (double v : path.node(k)) os << ',' << v;
        os << '\n';
    }
}

}  // namespace mkv
