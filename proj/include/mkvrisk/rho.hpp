#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mkvrisk/convex.hpp"
#include "mkvrisk/particles.hpp"
#include "mkvrisk/terminal.hpp"

namespace mkv {

enum class RhoMethod { closed_form_mgf, lsmc, dual_lower };

std::string to_string(RhoMethod method);

struct RhoEstimate {
    double value = 0.0;
    double half_width = 0.0;  // 95% normal half width
    RhoMethod method = RhoMethod::closed_form_mgf;
    long scale_index = 1;
    std::size_t samples = 0;
    bool lower_bound = false;
    double residual = 0.0;  // lsmc: mean relative regression residual
};

/// F(X_i(1), L^N(1)) for every particle.
std::vector<double> terminal_values(const TerminalFunctional& f, const ParticleEnsemble& ens);

/// (1/theta) log mean exp(theta v), shifted by max v; delta-method half width.
RhoEstimate log_mean_exp(std::span<const double> values, double theta,
                         kernels::Backend backend = kernels::Backend::parallel);

/// (1/n) log mean exp(n F) over the ensemble's terminal law.
RhoEstimate rho_log_mgf_mc(const TerminalFunctional& f, const ParticleEnsemble& ens, long n,
                           kernels::Backend backend = kernels::Backend::parallel);

struct DualBudget {
    std::size_t opt_particles = 4096;  // common-random-number sample used while optimizing
    std::size_t particles = 200000;    // independent sample for the reported value
    std::size_t starts = 5;
    std::size_t iterations = 30;
    double fd_step = 1e-3;
    double start_spread = 0.5;
};

struct TracePoint {
    std::size_t start = 0;
    std::size_t iteration = 0;
    double objective = 0.0;
};

struct DualResult {
    RhoEstimate estimate;
    ControlField control;
    std::vector<TracePoint> trace;
    double train_objective = 0.0;
    double start_spread = 0.0;  // best minus worst finite start objective
    std::size_t feasible_starts = 0;
    double mean_payoff = 0.0;
    double mean_cost = 0.0;
};

class InfeasibleTemplate : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sample mean and half width of F(X^q(1)) - int g(t, sqrt(n) q, X^q, mu^q) dt for a fixed control.
/// The control acts on the drift as sigma q; sqrt(n) converts it to the unit-noise scale.
RhoEstimate evaluate_control(const TerminalFunctional& f, const CoefficientSet& coeffs, const TimeGrid& grid,
                             const InitialCondition& init, const CostFunction& g, const ControlField& control,
                             std::size_t particles, std::uint64_t seed,
                             kernels::Backend backend = kernels::Backend::parallel);

/// Maximizes the control objective over the template's parameters (CRN finite-difference BFGS,
/// multi-start) and re-evaluates the best field on an independent sample. Always a lower bound.
DualResult rho_dual_lower(const TerminalFunctional& f, const CoefficientSet& coeffs, const TimeGrid& grid,
                          const InitialCondition& init, const CostFunction& g, const ControlField& control_template,
                          const DualBudget& budget, std::uint64_t seed,
                          kernels::Backend backend = kernels::Backend::parallel);

enum class BasisFamily { polynomial, radial };

struct RegressionBasisSpec {
    BasisFamily family = BasisFamily::polynomial;
    std::size_t degree = 3;
    std::size_t centers = 8;
    double ridge = 1e-8;

    void validate() const;
    /// Number of basis functions in state dimension m.
    std::size_t size(std::size_t m) const;
};

inline constexpr double kMaxConditionNumber = 1e12;

class RegressionError : public std::runtime_error {
public:
    RegressionError(std::size_t step, double condition);
    std::size_t step() const { return step_; }
    double condition() const { return condition_; }

private:
    std::size_t step_;
    double condition_;
};

/// Backward least-squares Monte Carlo for Y_k = E_k[Y_{k+1}] + f(t_k, Z_k, X_k, mu_k) dt,
/// Z_k = E_k[(Y_{k+1} - C_k) dW_k] / dt with C_k the regressed continuation, Y_K = F.
/// Value and half width come from the martingale-corrected pathwise estimator
/// F + sum f dt - sum Z dW.
RhoEstimate bsde_lsmc(const TerminalFunctional& f, const CoefficientSet& coeffs, const TimeGrid& grid,
                      const InitialCondition& init, const CostFunction& generator, const RegressionBasisSpec& basis,
                      std::size_t particles, std::uint64_t seed,
                      kernels::Backend backend = kernels::Backend::parallel);

struct TruncationRow {
    double n = 0.0;
    RhoEstimate estimate;
};

struct TruncationReport {
    std::vector<TruncationRow> rows;
    bool nondecreasing_within_ci = true;  // each step >= previous - 2 combined half widths
    std::string observed_direction;       // nondecreasing | nonincreasing | constant | mixed
};

struct TruncationOptions {
    RhoMethod method = RhoMethod::lsmc;
    std::size_t particles = 200000;
    RegressionBasisSpec basis;
    DualBudget budget;
    std::optional<ControlField> control_template;
    std::optional<UniformGrid> transform_grid;  // required for non-closed-form costs
    kernels::Backend backend = kernels::Backend::parallel;
};

/// rho^{g_n} along a truncation ladder, with common random numbers across n.
TruncationReport rho_truncated_sequence(const TerminalFunctional& f, const CoefficientSet& coeffs,
                                        const TimeGrid& grid, const InitialCondition& init, const CostFunction& g,
                                        const std::vector<double>& ladder, std::uint64_t seed,
                                        const TruncationOptions& options = {});

struct DualGapReport {
    RhoEstimate primal;
    DualResult dual;
    double gap = 0.0;  // primal - dual
    double combined_half_width = 0.0;
    bool certificate_ok = true;  // gap >= -3 * combined half width
};

/// Primal log-mean-exp (theta = 1 / scale of the quadratic g) against the dual lower bound.
DualGapReport dual_gap_report(const TerminalFunctional& f, const CoefficientSet& coeffs, const TimeGrid& grid,
                              const InitialCondition& init, const CostFunction& g, const ControlField& control_template,
                              std::size_t primal_particles, const DualBudget& budget, std::uint64_t seed,
                              kernels::Backend backend = kernels::Backend::parallel);

}  // namespace mkv
