#include "mkvrisk/rho.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "mkvrisk/optim.hpp"
#include "mkvrisk/rng.hpp"

namespace mkv {

namespace {

constexpr double kZ95 = 1.959963984540054;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

MeanSd mean_sd(kernels::Backend backend, std::span<const double> v) {
    const auto n = static_cast<double>(v.size());
    MeanSd out;
    out.mean = kernels::blocked_sum(backend, v) / n;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - out.mean) * (v[i] - out.mean);
    out.sd = v.size() > 1 ? std::sqrt(kernels::blocked_sum(backend, sq) / (n - 1.0)) : 0.0;
    return out;
}

}  // namespace

std::string to_string(RhoMethod method) {
    switch (method) {
        case RhoMethod::closed_form_mgf:
            return "closed-form-mgf";
        case RhoMethod::lsmc:
            return "lsmc";
        case RhoMethod::dual_lower:
            return "dual-lower";
    }
    return "unknown";
}

std::vector<double> terminal_values(const TerminalFunctional& f, const ParticleEnsemble& ens) {
    if (ens.particles == 0) throw std::invalid_argument("terminal_values: empty ensemble");
    const auto x = ens.final_states();
    const auto mean = ens.mean_at(ens.grid.steps);
    std::vector<double> out(ens.particles);
    for (std::size_t i = 0; i < ens.particles; ++i) out[i] = f(x.subspan(i * ens.dim, ens.dim), mean);
    return out;
}

RhoEstimate log_mean_exp(std::span<const double> values, double theta, kernels::Backend backend) {
    if (values.empty()) throw std::invalid_argument("log_mean_exp: empty sample");
    if (!(theta > 0.0)) throw std::invalid_argument("log_mean_exp: theta must be positive");
    const auto m = kernels::exp_moments(backend, values, theta);
    const auto n = static_cast<double>(m.count);
    const double mean = m.sum / n;
    RhoEstimate est;
    est.method = RhoMethod::closed_form_mgf;
    est.samples = m.count;
    est.value = m.shift + std::log(mean) / theta;
    const double var = std::max(0.0, m.sum_sq / n - mean * mean);
    est.half_width = m.count > 1 ? kZ95 * std::sqrt(var / (n - 1.0)) / (theta * mean) : 0.0;
    return est;
}

RhoEstimate rho_log_mgf_mc(const TerminalFunctional& f, const ParticleEnsemble& ens, long n,
                           kernels::Backend backend) {
    if (n < 1) throw std::invalid_argument("rho_log_mgf_mc: scale index must be >= 1");
    if (ens.particles == 0) throw std::invalid_argument("rho_log_mgf_mc: empty ensemble");
    const auto v = terminal_values(f, ens);
    RhoEstimate est = log_mean_exp(v, static_cast<double>(n), backend);
    est.scale_index = n;
    return est;
}

// ---------------------------------------------------------------- dual side

namespace {

struct ControlEvaluation {
    RhoEstimate estimate;
    double mean_payoff = 0.0;
    double mean_cost = 0.0;
};

ControlEvaluation evaluate_detail(const TerminalFunctional& f, const CoefficientSet& coeffs, const TimeGrid& grid,
                                  const InitialCondition& init, const CostFunction& g, const ControlField& control,
                                  std::size_t particles, std::uint64_t seed, kernels::Backend backend) {
    if (particles == 0) throw std::invalid_argument("evaluate_control: particles must be >= 1");
    SimulationOptions opts;
    opts.backend = backend;
    opts.running_cost = &g;
    opts.cost_argument_scale = std::sqrt(static_cast<double>(coeffs.noise_index));
    const auto ens = simulate_mckv(coeffs, grid, init, particles, &control, seed, opts);
    auto v = terminal_values(f, ens);
    ControlEvaluation out;
    const auto np = static_cast<double>(particles);
    out.mean_payoff = kernels::blocked_sum(backend, v) / np;
    out.mean_cost = kernels::blocked_sum(backend, ens.running_cost) / np;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= ens.running_cost[i];
    const auto ms = mean_sd(backend, v);
    RhoEstimate& est = out.estimate;
    est.method = RhoMethod::dual_lower;
    est.lower_bound = true;
    est.samples = particles;
    est.scale_index = coeffs.noise_index;
    est.value = std::isfinite(ms.mean) ? ms.mean : kNegInf;
    est.half_width = kZ95 * ms.sd / std::sqrt(np);
    return out;
}

}  // namespace

RhoEstimate evaluate_control(const TerminalFunctional& f, const CoefficientSet& coeffs, const TimeGrid& grid,
                             const InitialCondition& init, const CostFunction& g, const ControlField& control,
                             std::size_t particles, std::uint64_t seed, kernels::Backend backend) {
    return evaluate_detail(f, coeffs, grid, init, g, control, particles, seed, backend).estimate;
}

DualResult rho_dual_lower(const TerminalFunctional& f, const CoefficientSet& coeffs, const TimeGrid& grid,
                          const InitialCondition& init, const CostFunction& g, const ControlField& control_template,
                          const DualBudget& budget, std::uint64_t seed, kernels::Backend backend) {
    if (control_template.mode() == ControlMode::per_sample) {
        throw std::invalid_argument(
            "rho_dual_lower: per-sample tables are not optimizable; use an open-loop or feedback template");
    }
    if (budget.starts == 0 || budget.opt_particles == 0 || budget.particles == 0) {
        throw std::invalid_argument("rho_dual_lower: budget needs starts and particles >= 1");
    }
    coeffs.validate();
    const std::uint64_t opt_seed = derive_seed(seed, 1);
    const std::uint64_t eval_seed = derive_seed(seed, 2);
    const std::uint64_t start_seed = derive_seed(seed, 3);
    const std::size_t np = budget.opt_particles;

    std::vector<double> noise;
    if (!coeffs.zero_diffusion()) noise = brownian_table(opt_seed, np, grid, coeffs.noise_dim, backend);
    SimulationOptions opts;
    opts.backend = backend;
    opts.running_cost = &g;
    opts.cost_argument_scale = std::sqrt(static_cast<double>(coeffs.noise_index));
    opts.noise = noise;

    ControlField field = control_template;
    std::vector<double> work(np);
    const Objective objective = [&](std::span<const double> theta) {
        field.set_params(theta);
        try {
            const auto ens = simulate_mckv(coeffs, grid, init, np, &field, opt_seed, opts);
            const auto x = ens.final_states();
            const auto mean = ens.mean_at(grid.steps);
            for (std::size_t i = 0; i < np; ++i) {
                work[i] = f(x.subspan(i * ens.dim, ens.dim), mean) - ens.running_cost[i];
            }
            const double v = kernels::blocked_sum(backend, work) / static_cast<double>(np);
            return std::isfinite(v) ? v : kNegInf;
        } catch (const SimulationError&) {
            return kNegInf;
        }
    };

    DualResult result;
    result.control = control_template;
    const std::size_t dim = control_template.params().size();
    std::vector<double> best_x;
    double best = kNegInf;
    double worst = std::numeric_limits<double>::infinity();
    GradientAscentOptions gopts;
    gopts.max_iterations = budget.iterations;
    gopts.fd_step = budget.fd_step;
    const CounterRng rng{start_seed};
    for (std::size_t s = 0; s < budget.starts; ++s) {
        std::vector<double> x0(control_template.params().begin(), control_template.params().end());
        if (s > 0) {
            std::vector<double> z(dim);
            rng.normals(s, 0, StreamTag::optimizer, z);
            for (std::size_t i = 0; i < dim; ++i) x0[i] += budget.start_spread * z[i];
        }
        const double v0 = objective(x0);
        if (std::isfinite(v0)) result.trace.push_back({s, 0, v0});
        const auto hook = [&](std::size_t it, double v) { result.trace.push_back({s, it, v}); };
        const auto res = bfgs_maximize(objective, x0, gopts, hook);
        if (!std::isfinite(res.value)) continue;
        ++result.feasible_starts;
        worst = std::min(worst, res.value);
        if (res.value > best) {
            best = res.value;
            best_x = res.x;
        }
    }
    if (result.feasible_starts == 0) {
        throw InfeasibleTemplate("rho_dual_lower: objective is -inf on every start (infeasible template)");
    }
    result.train_objective = best;
    result.start_spread = best - worst;
    result.control.set_params(best_x);
    const auto final_eval =
        evaluate_detail(f, coeffs, grid, init, g, result.control, budget.particles, eval_seed, backend);
    result.estimate = final_eval.estimate;
    result.mean_payoff = final_eval.mean_payoff;
    result.mean_cost = final_eval.mean_cost;
    return result;
}

// ---------------------------------------------------------------- regression

void RegressionBasisSpec::validate() const {
    if (degree < 1) throw std::invalid_argument("regression basis degree must be >= 1");
    if (!(ridge >= 0.0)) throw std::invalid_argument("regression ridge must be >= 0");
    if (family == BasisFamily::radial && centers == 0) throw std::invalid_argument("radial basis needs centers");
}

namespace {

using Exponents = std::vector<std::array<unsigned, kMaxStateDim>>;

Exponents monomials(std::size_t m, std::size_t degree) {
    Exponents out;
    std::array<unsigned, kMaxStateDim> e{};
    // enumerate all exponent tuples with total degree in 1..degree
    const auto rec = [&](auto&& self, std::size_t axis, std::size_t left) -> void {
        if (axis == m) {
            std::size_t total = 0;
            for (std::size_t k = 0; k < m; ++k) total += e[k];
            if (total > 0) out.push_back(e);
            return;
        }
        for (std::size_t p = 0; p <= left; ++p) {
            e[axis] = static_cast<unsigned>(p);
            self(self, axis + 1, left - p);
        }
        e[axis] = 0;
    };
    rec(rec, 0, degree);
    std::stable_sort(out.begin(), out.end(), [m](const auto& a, const auto& b) {
        unsigned sa = 0, sb = 0;
        for (std::size_t k = 0; k < m; ++k) {
            sa += a[k];
            sb += b[k];
        }
        return sa < sb;
    });
    return out;
}

}  // namespace

std::size_t RegressionBasisSpec::size(std::size_t m) const {
    if (family == BasisFamily::polynomial) return 1 + monomials(m, degree).size();
    return 1 + m + centers;
}

RegressionError::RegressionError(std::size_t step, double condition)
    : std::runtime_error("bsde_lsmc: ill-conditioned regression at step " + std::to_string(step) +
                         " (condition number " + std::to_string(condition) + ")"),
      step_(step),
      condition_(condition) {}

namespace {

class BasisBuilder {
public:
    BasisBuilder(const RegressionBasisSpec& spec, std::size_t m)
        : spec_(spec), m_(m), powers_(spec.family == BasisFamily::polynomial ? monomials(m, spec.degree) : Exponents{}) {}

    /// Fills psi (N x p) for the cloud x; returns the number of columns used.
    Eigen::Index build(std::span<const double> x, Eigen::MatrixXd& psi) {
        const std::size_t n = x.size() / m_;
        std::array<double, kMaxStateDim> mu{}, sd{};
        bool degenerate = true;
        for (std::size_t r = 0; r < m_; ++r) {
            double s1 = 0.0;
            for (std::size_t i = 0; i < n; ++i) s1 += x[i * m_ + r];
            mu[r] = s1 / static_cast<double>(n);
            double s2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) s2 += (x[i * m_ + r] - mu[r]) * (x[i * m_ + r] - mu[r]);
            sd[r] = std::sqrt(s2 / static_cast<double>(n));
            if (sd[r] > 1e-12 * (1.0 + std::abs(mu[r]))) degenerate = false;
        }
        if (degenerate) {
            psi.setOnes(static_cast<Eigen::Index>(n), 1);
            return 1;
        }
        const auto p = static_cast<Eigen::Index>(spec_.size(m_));
        psi.resize(static_cast<Eigen::Index>(n), p);
        std::array<double, kMaxStateDim> u{};
        std::vector<double> centers;
        double width = 1.0;
        if (spec_.family == BasisFamily::radial) {
            const std::size_t stride = std::max<std::size_t>(1, n / 2048);
            std::vector<double> sub;
            for (std::size_t i = 0; i < n; i += stride) {
                sub.push_back(sd[0] > 0.0 ? (x[i * m_] - mu[0]) / sd[0] : 0.0);
            }
            std::sort(sub.begin(), sub.end());
            for (std::size_t c = 0; c < spec_.centers; ++c) {
                const double level = static_cast<double>(c + 1) / static_cast<double>(spec_.centers + 1);
                centers.push_back(sub[static_cast<std::size_t>(level * static_cast<double>(sub.size() - 1))]);
            }
            width = spec_.centers > 1 ? std::max(0.25, (centers.back() - centers.front()) /
                                                           static_cast<double>(spec_.centers - 1))
                                      : 1.0;
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t r = 0; r < m_; ++r) u[r] = sd[r] > 0.0 ? (x[i * m_ + r] - mu[r]) / sd[r] : 0.0;
            const auto row = static_cast<Eigen::Index>(i);
            psi(row, 0) = 1.0;
            Eigen::Index col = 1;
            if (spec_.family == BasisFamily::polynomial) {
                for (const auto& e : powers_) {
                    double v = 1.0;
                    for (std::size_t r = 0; r < m_; ++r) {
                        for (unsigned k = 0; k < e[r]; ++k) v *= u[r];
                    }
                    psi(row, col++) = v;
                }
            } else {
                for (std::size_t r = 0; r < m_; ++r) psi(row, col++) = u[r];
                for (double c : centers) {
                    const double d = (u[0] - c) / width;
                    psi(row, col++) = std::exp(-0.5 * d * d);
                }
            }
        }
        return p;
    }

private:
    const RegressionBasisSpec& spec_;
    std::size_t m_;
    Exponents powers_;
};

}  // namespace

RhoEstimate bsde_lsmc(const TerminalFunctional& f, const CoefficientSet& coeffs, const TimeGrid& grid,
                      const InitialCondition& init, const CostFunction& generator, const RegressionBasisSpec& basis,
                      std::size_t particles, std::uint64_t seed, kernels::Backend backend) {
    basis.validate();
    coeffs.validate();
    const std::size_t m = coeffs.state_dim;
    const std::size_t d = coeffs.noise_dim;
    if (init.dim() != m) throw std::invalid_argument("bsde_lsmc: initial condition dimension mismatch");
    const std::size_t p = basis.size(m);
    if (particles < 50 * p) {
        throw std::invalid_argument("bsde_lsmc: need at least " + std::to_string(50 * p) + " particles for " +
                                    std::to_string(p) + " basis functions");
    }
    if (generator.dim() != 0 && generator.dim() != d) {
        throw std::invalid_argument("bsde_lsmc: generator dimension must equal noise_dim");
    }
    const std::size_t steps = grid.steps;
    const double dt = grid.step();
    const std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(double(steps)))));
    const std::size_t block = particles * m;
    SimulationOptions opts;
    opts.backend = backend;

    // forward pass, keeping checkpoints every `stride` steps
    std::vector<double> means((steps + 1) * m);
    std::vector<std::vector<double>> checkpoints;
    std::vector<double> cur(block), next(block);
    sample_initial(init, seed, particles, cur);
    for (std::size_t k = 0; k < steps; ++k) {
        if (k % stride == 0) checkpoints.push_back(cur);
        euler_step(coeffs, grid, k, cur, next, std::span<double>(means.data() + k * m, m), nullptr, seed, opts);
        std::swap(cur, next);
    }
    kernels::mean_rows(backend, cur, m, std::span<double>(means.data() + steps * m, m));

    std::vector<double> y(particles), path(particles);
    for (std::size_t i = 0; i < particles; ++i) {
        y[i] = f(std::span<const double>(cur.data() + i * m, m), std::span<const double>(means.data() + steps * m, m));
    }
    path = y;

    BasisBuilder builder(basis, m);
    Eigen::MatrixXd psi;
    Eigen::MatrixXd targets(static_cast<Eigen::Index>(particles), static_cast<Eigen::Index>(d));
    std::vector<double> dw(particles * d);
    std::vector<double> segment;
    std::vector<double> scratch_mean(m);
    double residual_acc = 0.0;
    std::size_t residual_count = 0;

    for (std::size_t c = checkpoints.size(); c-- > 0;) {
        const std::size_t k0 = c * stride;
        const std::size_t k1 = std::min(steps, k0 + stride);
        const std::size_t len = k1 - k0;
        segment.assign(len * block, 0.0);
        std::copy(checkpoints[c].begin(), checkpoints[c].end(), segment.begin());
        for (std::size_t k = k0; k + 1 < k1; ++k) {
            const std::span<const double> from(segment.data() + (k - k0) * block, block);
            const std::span<double> to(segment.data() + (k - k0 + 1) * block, block);
            euler_step(coeffs, grid, k, from, to, scratch_mean, nullptr, seed, opts);
        }
        checkpoints[c].clear();
        checkpoints[c].shrink_to_fit();

        for (std::size_t k = k1; k-- > k0;) {
            const std::span<const double> x(segment.data() + (k - k0) * block, block);
            const std::span<const double> mean(means.data() + k * m, m);
            brownian_step(seed, k, particles, d, dt, dw, backend);
            const Eigen::Index cols = builder.build(x, psi);
            const double ybar = kernels::blocked_sum(backend, y) / static_cast<double>(particles);
            const double inv_n = 1.0 / static_cast<double>(particles);
            Eigen::MatrixXd gram = (psi.transpose() * psi) * inv_n;
            for (Eigen::Index j = 1; j < cols; ++j) gram(j, j) += basis.ridge;  // intercept unpenalized
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
            const double lo = eig.eigenvalues().minCoeff();
            const double hi = eig.eigenvalues().maxCoeff();
            const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
            if (cond > kMaxConditionNumber) throw RegressionError(k, cond);
            const auto solver = gram.ldlt();

            // continuation first, then Z from the increment left over after it
            const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(particles));
            const Eigen::VectorXd cont_coef = solver.solve((psi.transpose() * yv) * inv_n);
            const Eigen::VectorXd cont = psi * cont_coef;
            Eigen::MatrixXd fitted(static_cast<Eigen::Index>(particles), static_cast<Eigen::Index>(1 + d));
            fitted.col(0) = cont;
            if (d > 0) {
                for (std::size_t i = 0; i < particles; ++i) {
                    const auto row = static_cast<Eigen::Index>(i);
                    for (std::size_t j = 0; j < d; ++j) {
                        targets(row, static_cast<Eigen::Index>(j)) = (y[i] - cont(row)) * dw[i * d + j] / dt;
                    }
                }
                const Eigen::MatrixXd z_coef = solver.solve((psi.transpose() * targets) * inv_n);
                fitted.rightCols(static_cast<Eigen::Index>(d)) = psi * z_coef;
            }

            double ss_res = 0.0, ss_tot = 0.0;
            for (std::size_t i = 0; i < particles; ++i) {
                const double e = y[i] - fitted(static_cast<Eigen::Index>(i), 0);
                ss_res += e * e;
                ss_tot += (y[i] - ybar) * (y[i] - ybar);
            }
            if (ss_tot > 0.0) {
                residual_acc += std::sqrt(ss_res / ss_tot);
                ++residual_count;
            }
            const double t = grid.node(k);
            kernels::for_each_index(backend, particles, [&](std::size_t i) {
                std::array<double, kMaxStateDim> z{};
                const auto row = static_cast<Eigen::Index>(i);
                double zdw = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    z[j] = fitted(row, static_cast<Eigen::Index>(1 + j));
                    zdw += z[j] * dw[i * d + j];
                }
                const double gen = generator(t, std::span<const double>(z.data(), d), x.subspan(i * m, m), mean) * dt;
                y[i] = fitted(row, 0) + gen;
                path[i] += gen - zdw;
            });
        }
    }

    RhoEstimate est;
    est.method = RhoMethod::lsmc;
    est.samples = particles;
    est.scale_index = coeffs.noise_index;
    // The pathwise mean equals the mean regressed Y_0 minus the sample mean of sum Z dW, a
    // zero-mean control variate; its spread is what the half width measures.
    const auto ms = mean_sd(backend, path);
    est.value = ms.mean;
    est.half_width = kZ95 * ms.sd / std::sqrt(static_cast<double>(particles));
    est.residual = residual_count > 0 ? residual_acc / static_cast<double>(residual_count) : 0.0;
    return est;
}

// ---------------------------------------------------------------- ladders and gaps

TruncationReport rho_truncated_sequence(const TerminalFunctional& f, const CoefficientSet& coeffs,
                                        const TimeGrid& grid, const InitialCondition& init, const CostFunction& g,
                                        const std::vector<double>& ladder, std::uint64_t seed,
                                        const TruncationOptions& options) {
    if (ladder.empty()) throw std::invalid_argument("rho_truncated_sequence: empty ladder");
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        if (!(ladder[i] > 0.0)) throw std::invalid_argument("rho_truncated_sequence: truncation indices must be > 0");
        if (i > 0 && !(ladder[i] > ladder[i - 1])) {
            throw std::invalid_argument("rho_truncated_sequence: ladder must be strictly increasing");
        }
    }
    if (options.method == RhoMethod::closed_form_mgf) {
        throw std::invalid_argument("rho_truncated_sequence: method must be lsmc or dual");
    }
    const bool closed = (g.kind() == CostKind::quadratic || g.kind() == CostKind::power) && g.time_factors().empty();
    if (!closed && !options.transform_grid) {
        throw std::invalid_argument("rho_truncated_sequence: a transform grid is required for this cost");
    }
    const double arg_scale = std::sqrt(static_cast<double>(coeffs.noise_index));
    TruncationReport report;
    for (double n : ladder) {
        const ConjugatePair pair =
            closed ? truncate_closed_form(g, n) : truncate_pair(g, n, *options.transform_grid);
        RhoEstimate est;
        if (options.method == RhoMethod::lsmc) {
            est = bsde_lsmc(f, coeffs, grid, init, pair.primal, options.basis, options.particles, seed, options.backend);
        } else {
            const ControlField tmpl = (options.control_template ? *options.control_template
                                                                : ControlField::open_loop(20, coeffs.noise_dim, grid.start))
                                          .with_cap(n / arg_scale);
            est = rho_dual_lower(f, coeffs, grid, init, pair.dual, tmpl, options.budget, seed, options.backend).estimate;
        }
        report.rows.push_back({n, est});
    }
    bool up = true, down = true, flat = true;
    for (std::size_t i = 1; i < report.rows.size(); ++i) {
        const auto& a = report.rows[i - 1].estimate;
        const auto& b = report.rows[i].estimate;
        const double combined = std::hypot(a.half_width, b.half_width);
        if (b.value < a.value - 2.0 * combined) report.nondecreasing_within_ci = false;
        if (b.value < a.value) up = false;
        if (b.value > a.value) down = false;
        if (b.value != a.value) flat = false;
    }
    report.observed_direction = flat ? "constant" : up ? "nondecreasing" : down ? "nonincreasing" : "mixed";
    return report;
}

DualGapReport dual_gap_report(const TerminalFunctional& f, const CoefficientSet& coeffs, const TimeGrid& grid,
                              const InitialCondition& init, const CostFunction& g, const ControlField& control_template,
                              std::size_t primal_particles, const DualBudget& budget, std::uint64_t seed,
                              kernels::Backend backend) {
    if (g.kind() != CostKind::quadratic || g.offset() || !g.time_factors().empty()) {
        throw std::invalid_argument("dual_gap_report: needs a plain quadratic cost (the only primal oracle)");
    }
    SimulationOptions opts;
    opts.backend = backend;
    const auto ens = simulate_mckv(coeffs, grid, init, primal_particles, nullptr, derive_seed(seed, 10), opts);
    DualGapReport report;
    const auto v = terminal_values(f, ens);
    report.primal = log_mean_exp(v, 1.0 / g.scale(), backend);
    report.primal.scale_index = coeffs.noise_index;
    report.dual = rho_dual_lower(f, coeffs, grid, init, g, control_template, budget, derive_seed(seed, 11), backend);
    report.gap = report.primal.value - report.dual.estimate.value;
    report.combined_half_width = std::hypot(report.primal.half_width, report.dual.estimate.half_width);
    report.certificate_ok = report.gap >= -3.0 * report.combined_half_width;
    return report;
}

}  // namespace mkv
