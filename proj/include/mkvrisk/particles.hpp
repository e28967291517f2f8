#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mkvrisk/convex.hpp"
#include "mkvrisk/kernels.hpp"

namespace mkv {

/// Uniform grid s = t_0 < ... < t_K = 1.
struct TimeGrid {
    double start = 0.0;
    std::size_t steps = 512;

    TimeGrid() = default;
    TimeGrid(double s, std::size_t k);

    double step() const { return (1.0 - start) / static_cast<double>(steps); }
    double node(std::size_t k) const { return k == steps ? 1.0 : start + static_cast<double>(k) * step(); }
};

/// Piecewise-constant function over equal cells of [0, 1].
struct CellTable {
    std::vector<double> values{0.0};

    static CellTable constant(double v) { return CellTable{{v}}; }
    double operator()(double t) const;
    bool all_zero() const;
};

enum class DriftKind { zero, linear, clipped_polynomial };

/// Drift catalog. `linear`: b = alpha(t) + beta(t) x + gamma(t) mean(mu), componentwise.
/// `clipped_polynomial`: b_r = clip(sum_j poly[j] x_r^j, -poly_bound, poly_bound).
struct DriftSpec {
    DriftKind kind = DriftKind::zero;
    CellTable alpha;
    CellTable beta;
    CellTable gamma;
    std::vector<double> poly;
    double poly_bound = 1.0;
};

enum class DiffusionKind { constant, modulated };

/// sigma = s(x, mu) * matrix with s = 1 + amplitude * tanh(x_slope * x_1 + mean_slope * mean_1)
/// for the modulated entry (bounded, Lipschitz, elliptic when amplitude < 1).
struct DiffusionSpec {
    DiffusionKind kind = DiffusionKind::constant;
    std::vector<double> matrix{1.0};  // state_dim x noise_dim, row-major
    double amplitude = 0.0;
    double x_slope = 0.0;
    double mean_slope = 0.0;
};

/// Coefficients of dX = b(t, X, mu) dt + n^{-1/2} sigma(t, X, mu) dW.
/// Catalog entries see the law only through its mean.
struct CoefficientSet {
    std::size_t state_dim = 1;
    std::size_t noise_dim = 1;
    DriftSpec drift;
    DiffusionSpec diffusion;
    long noise_index = 1;
    double lipschitz = 1.0;    // declared l_b
    double ellipticity = 0.0;  // declared C2; 0 disables the check

    static CoefficientSet brownian(double sigma = 1.0);
    static CoefficientSet linear(double alpha, double beta, double gamma, double sigma = 1.0);
    CoefficientSet with_noise_index(long n) const;

    void validate() const;
    void drift_at(double t, std::span<const double> x, std::span<const double> mean, std::span<double> out) const;
    double sigma_factor(std::span<const double> x, std::span<const double> mean) const;
    /// Full m x d matrix at (x, mu), row-major.
    void sigma_at(std::span<const double> x, std::span<const double> mean, std::span<double> out) const;
    double noise_scale() const;
    bool measure_dependent() const;
    bool zero_diffusion() const;
};

struct LipschitzProbe {
    double max_ratio = 0.0;
    bool within = true;
    bool boundedness_checked = true;  // false for the (unbounded) linear catalog
    bool bounded = true;
};

/// Randomized two-point probes of |b - b'| + |sigma - sigma'| <= l_b (|x - x'| + W2(mu, mu')).
LipschitzProbe probe_lipschitz(const CoefficientSet& coeffs, std::size_t pairs, std::uint64_t seed);

/// Lower bound of the smallest eigenvalue of sigma sigma^T over all states.
double min_ellipticity(const CoefficientSet& coeffs);

class EllipticityError : public std::invalid_argument {
public:
    EllipticityError(double found, double declared);
    double found() const { return found_; }

private:
    double found_;
};

/// Throws EllipticityError when the declared C2 > 0 is not met.
void check_ellipticity(const CoefficientSet& coeffs);

enum class InitKind { point, gaussian, atoms };

/// Initial law xi: a point mass, independent Gaussians, or a uniform law on
/// finitely many atoms (balanced: particle i gets atom i mod A).
struct InitialCondition {
    InitKind kind = InitKind::point;
    std::vector<double> location{0.0};
    std::vector<double> stddev;
    std::vector<std::vector<double>> atoms;
    bool balanced = true;

    static InitialCondition point(std::vector<double> x);
    static InitialCondition gaussian(std::vector<double> mean, std::vector<double> sd);
    static InitialCondition uniform_atoms(std::vector<std::vector<double>> atoms, bool balanced = true);

    std::size_t dim() const;
    bool deterministic() const;
    void sample(std::uint64_t seed, std::size_t particle, std::span<double> out) const;
};

enum class ControlMode { open_loop, feedback_affine, feedback_radial, per_sample };

/// Control parameterizations on the cells of [start, 1]. The control enters
/// the drift as sigma * q. A finite cap projects values onto the ball |q| <= cap.
class ControlField {
public:
    static ControlField open_loop(std::size_t cells, std::size_t dim, double start = 0.0);
    static ControlField feedback_affine(std::size_t cells, std::size_t dim, std::size_t state_dim, double start = 0.0);
    static ControlField feedback_radial(std::size_t cells, std::size_t dim, std::vector<std::vector<double>> centers,
                                        double width, double start = 0.0);
    static ControlField per_sample(std::size_t particles, std::size_t steps, std::size_t dim, double start = 0.0);

    ControlMode mode() const { return mode_; }
    std::size_t cells() const { return cells_; }
    std::size_t dim() const { return dim_; }
    std::size_t state_dim() const { return state_dim_; }
    std::size_t particles() const { return particles_; }
    double start() const { return start_; }
    double cap() const { return cap_; }
    ControlField with_cap(double cap) const;
    bool is_feedback() const { return mode_ == ControlMode::feedback_affine || mode_ == ControlMode::feedback_radial; }

    std::span<const double> params() const { return params_; }
    std::span<double> params() { return params_; }
    void set_params(std::span<const double> p);
    std::size_t params_per_cell() const;
    std::size_t cell_of(double t) const;

    /// q(t, x) for particle `particle` at grid step `step`.
    void value(double t, std::size_t step, std::size_t particle, std::span<const double> x,
               std::span<double> out) const;
    void check_finite() const;

private:
    ControlMode mode_ = ControlMode::open_loop;
    std::size_t cells_ = 1;
    std::size_t dim_ = 1;
    std::size_t state_dim_ = 1;
    std::size_t particles_ = 0;
    double start_ = 0.0;
    double cap_ = -1.0;  // negative: uncapped
    double width_ = 1.0;
    std::vector<std::vector<double>> centers_;
    std::vector<double> params_;
};

enum class Retention { final_only, all_nodes };

struct ParticleEnsemble {
    std::size_t particles = 0;
    std::size_t dim = 0;
    TimeGrid grid;
    Retention retention = Retention::final_only;
    std::uint64_t seed = 0;
    std::vector<double> states;        // stored nodes x particles x dim
    std::vector<double> means;         // (K + 1) x dim, empirical mean at every node
    std::vector<double> running_cost;  // per particle when a running cost was requested

    bool has_node(std::size_t k) const;
    std::span<const double> node(std::size_t k) const;
    std::span<const double> final_states() const { return node(grid.steps); }
    std::span<const double> mean_at(std::size_t k) const;
};

class SimulationError : public std::runtime_error {
public:
    SimulationError(std::size_t step, const std::string& what);
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

struct SimulationOptions {
    Retention retention = Retention::final_only;
    kernels::Backend backend = kernels::Backend::parallel;
    /// Accumulates sum_k g(t_k, a * q_k, X_k, mean_k) dt per particle, a = cost_argument_scale.
    const CostFunction* running_cost = nullptr;
    double cost_argument_scale = 1.0;
    /// Optional pre-drawn increments from brownian_table; must match (seed, N, grid, d).
    std::span<const double> noise;
};

/// Euler-Maruyama for the N-particle system
/// X_{k+1} = X_k + [b + sigma q] dt + n^{-1/2} sigma sqrt(dt) Z_k with the same-step
/// empirical measure. Noise is addressed by (seed, particle, step).
ParticleEnsemble simulate_mckv(const CoefficientSet& coeffs, const TimeGrid& grid, const InitialCondition& init,
                               std::size_t particles, const ControlField* control, std::uint64_t seed,
                               const SimulationOptions& options = {});

/// Initial states of `particles` particles, row-major.
void sample_initial(const InitialCondition& init, std::uint64_t seed, std::size_t particles, std::span<double> out);

/// One step of simulate_mckv from node k (inputs assumed validated): writes the
/// empirical mean of `cur` into `mean` and node k + 1 into `next`.
void euler_step(const CoefficientSet& coeffs, const TimeGrid& grid, std::size_t k, std::span<const double> cur,
                std::span<double> next, std::span<double> mean, const ControlField* control, std::uint64_t seed,
                const SimulationOptions& options, std::span<double> running_cost = {});

/// The Brownian increment W(t_{k+1}) - W(t_k) used by simulate_mckv for `particle`.
/// Four consecutive particles share the Philox blocks of one step.
void brownian_increment(std::uint64_t seed, std::size_t particle, std::size_t step, double dt, std::span<double> out);

/// The increments of all particles at one step, row-major.
void brownian_step(std::uint64_t seed, std::size_t step, std::size_t particles, std::size_t noise_dim, double dt,
                   std::span<double> out, kernels::Backend backend = kernels::Backend::parallel);

/// All increments of `particles` paths, laid out [step][particle][noise dim].
std::vector<double> brownian_table(std::uint64_t seed, std::size_t particles, const TimeGrid& grid,
                                   std::size_t noise_dim, kernels::Backend backend = kernels::Backend::parallel);

/// Uniformly weighted point cloud.
struct EmpiricalMeasure {
    std::size_t dim = 1;
    std::vector<double> points;

    std::size_t size() const { return dim == 0 ? 0 : points.size() / dim; }
    double weight() const { return 1.0 / static_cast<double>(size()); }
    double total_weight() const;
    std::vector<double> mean() const;
    std::vector<double> variance() const;
};

EmpiricalMeasure empirical_measure(const ParticleEnsemble& ens, std::size_t k);

inline constexpr std::size_t kExactAssignmentCap = 512;
inline constexpr std::size_t kMaxStateDim = 8;

/// Exact W2 between uniform clouds: quantile coupling in 1-D (any sizes),
/// optimal assignment in higher dimension (equal sizes, at most 512 points).
double wasserstein2(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

/// W2 values at or below this are floating-point noise (e.g. identical zero-noise laws).
inline constexpr double kDistanceFloor = 1e-12;

struct ChaosRow {
    std::size_t particles = 0;
    double distance = 0.0;
};

struct ChaosReport {
    std::vector<ChaosRow> rows;
    std::size_t reference_particles = 0;
    std::optional<double> slope;  // log-log fit; empty when every distance is zero
    bool strictly_decreasing = false;
    bool all_zero = false;  // every distance <= kDistanceFloor
};

/// W2 between the time-1 laws at each N and at N_ref, averaged over replicates.
ChaosReport chaos_report(const CoefficientSet& coeffs, const TimeGrid& grid, const InitialCondition& init,
                         const std::vector<std::size_t>& particle_counts, std::size_t reference_particles,
                         std::uint64_t seed, std::size_t replicates = 1, const SimulationOptions& options = {});

/// CSV "particle,time,x1..xm" for every stored node.
void write_ensemble_csv(std::ostream& os, const ParticleEnsemble& ens);

}  // namespace mkv
