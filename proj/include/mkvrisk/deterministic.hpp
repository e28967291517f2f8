#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "mkvrisk/convex.hpp"
#include "mkvrisk/particles.hpp"
#include "mkvrisk/terminal.hpp"

namespace mkv {

/// Open-loop control, one vector per equal cell of [start, 1].
struct ControlVector {
    std::size_t dim = 1;
    std::size_t cells = 1;
    double start = 0.0;
    std::vector<double> values{0.0};

    static ControlVector zeros(std::size_t cells, std::size_t dim, double start = 0.0);
    static ControlVector constant(std::size_t cells, std::vector<double> value, double start = 0.0);

    std::size_t cell_of(double t) const;
    std::span<const double> at(double t) const;
    /// sum_k |phi_k|^2 * cell length.
    double energy() const;
    void validate() const;
};

struct DeterministicPath {
    TimeGrid grid;
    std::size_t dim = 1;
    std::vector<double> states;  // (K + 1) x dim

    std::span<const double> node(std::size_t k) const { return {states.data() + k * dim, dim}; }
    std::span<const double> final_state() const { return node(grid.steps); }
};

/// RK4 for dPhi/dt = b(t, Phi, delta_Phi) + sigma(t, Phi, delta_Phi) phi(t); the control
/// cell is picked at each step's midpoint so cell-aligned controls are constant per step.
DeterministicPath integrate_ode(const CoefficientSet& coeffs, const TimeGrid& grid, std::span<const double> x0,
                                const ControlVector& control);

struct ActionValue {
    double payoff = 0.0;
    double cost = 0.0;
    double total = 0.0;
};

/// F(Phi(1), delta) minus the running cost; the control part is integrated exactly per step,
/// a state-dependent offset by the trapezoid rule.
ActionValue action_value(const DeterministicPath& path, const ControlVector& control, const TerminalFunctional& f,
                         const CostFunction& g);

class InfeasibleProblem : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ActionBudget {
    std::size_t restarts = 5;
    std::size_t max_evaluations = 20000;  // per restart
    double spread = 1.0;                  // sd of the random restart points
    bool polish = true;                   // finish each restart with finite-difference BFGS
};

struct ActionResult {
    ActionValue value;
    ControlVector control;
    std::vector<double> restart_values;
    double restart_spread = 0.0;
    std::size_t evaluations = 0;
};

ActionResult maximize_action(const CoefficientSet& coeffs, const TimeGrid& grid, std::span<const double> x0,
                             const TerminalFunctional& f, const CostFunction& g, std::size_t cells,
                             const ActionBudget& budget = {}, std::uint64_t seed = 0);

struct RateResult {
    double value = 0.0;  // +inf when some step is unreachable
    bool reachable = true;
    double worst_residual = 0.0;  // relative least-squares residual, max over steps
    ControlVector control;        // minimal-energy control, one cell per step
};

inline constexpr double kReachabilityTolerance = 1e-6;

/// Minimal-energy control through the pseudo-inverse of sigma at each node.
RateResult rate_function(const CoefficientSet& coeffs, const TimeGrid& grid, const DeterministicPath& target);

struct FlowResult {
    double value = 0.0;
    double payoff = 0.0;
    double cost = 0.0;
    ControlField field;
    std::vector<double> restart_values;
    double restart_spread = 0.0;
    std::size_t evaluations = 0;
};

struct FlowValue {
    double payoff = 0.0;
    double cost = 0.0;
    double total = 0.0;
    std::vector<double> final_states;  // M x m
};

inline constexpr std::size_t kMinFlowParticles = 100;

/// M zero-noise characteristics under a feedback field, coupled through their empirical law.
FlowValue flow_action(const CoefficientSet& coeffs, const TimeGrid& grid, std::span<const double> initial_states,
                      const TerminalFunctional& f, const CostFunction& g, const ControlField& field,
                      kernels::Backend backend = kernels::Backend::parallel);

/// Maximizes the averaged flow action over the template's parameters.
FlowResult flow_value_random_init(const CoefficientSet& coeffs, const TimeGrid& grid, const InitialCondition& init,
                                  const TerminalFunctional& f, const CostFunction& g,
                                  const ControlField& feedback_template, std::size_t particles,
                                  const ActionBudget& budget = {}, std::uint64_t seed = 0,
                                  kernels::Backend backend = kernels::Backend::parallel);

/// "time,phi_1..phi_d" at every cell start.
void write_control_csv(std::ostream& os, const ControlVector& control);
/// "time,x_1..x_m" at every node.
void write_path_csv(std::ostream& os, const DeterministicPath& path);

}  // namespace mkv
