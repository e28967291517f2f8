#include "mkvrisk/particles.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "mkvrisk/rng.hpp"

namespace mkv {

namespace {

using Scratch = std::array<double, kMaxStateDim>;

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

std::size_t cell_index(double t, double start, std::size_t cells) {
    const double u = (t - start) / (1.0 - start);
    if (!(u > 0.0)) return 0;
    const auto c = static_cast<std::size_t>(u * static_cast<double>(cells));
    return std::min(c, cells - 1);
}

}  // namespace

TimeGrid::TimeGrid(double s, std::size_t k) : start(s), steps(k) {
    if (!(s >= 0.0 && s < 1.0)) throw std::invalid_argument("TimeGrid: start must lie in [0, 1)");
    if (k == 0) throw std::invalid_argument("TimeGrid: need at least one step");
}

double CellTable::operator()(double t) const {
    if (values.empty()) throw std::invalid_argument("CellTable: empty");
    return values[cell_index(t, 0.0, values.size())];
}

bool CellTable::all_zero() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

// ---------------------------------------------------------------- coefficients

CoefficientSet CoefficientSet::brownian(double sigma) {
    CoefficientSet c;
    c.diffusion.matrix = {sigma};
    c.lipschitz = 0.0;
    return c;
}

CoefficientSet CoefficientSet::linear(double alpha, double beta, double gamma, double sigma) {
    CoefficientSet c;
    c.drift.kind = DriftKind::linear;
    c.drift.alpha = CellTable::constant(alpha);
    c.drift.beta = CellTable::constant(beta);
    c.drift.gamma = CellTable::constant(gamma);
    c.diffusion.matrix = {sigma};
    c.lipschitz = std::max(std::abs(beta), std::abs(gamma));
    return c;
}

CoefficientSet CoefficientSet::with_noise_index(long n) const {
    CoefficientSet c = *this;
    c.noise_index = n;
    return c;
}

void CoefficientSet::validate() const {
    if (state_dim == 0 || noise_dim == 0 || state_dim > kMaxStateDim || noise_dim > kMaxStateDim) {
        throw std::invalid_argument("CoefficientSet: dimensions must lie in 1.." + std::to_string(kMaxStateDim));
    }
    if (diffusion.matrix.size() != state_dim * noise_dim) {
        throw std::invalid_argument("CoefficientSet: diffusion matrix must have state_dim * noise_dim entries");
    }
    if (noise_index < 1) throw std::invalid_argument("CoefficientSet: noise index must be >= 1");
    if (!(lipschitz >= 0.0)) throw std::invalid_argument("CoefficientSet: Lipschitz constant must be >= 0");
    if (!(ellipticity >= 0.0)) throw std::invalid_argument("CoefficientSet: ellipticity constant must be >= 0");
    for (const auto* t : {&drift.alpha, &drift.beta, &drift.gamma}) {
        if (t->values.empty()) throw std::invalid_argument("CoefficientSet: empty coefficient table");
        for (double v : t->values) {
            if (!std::isfinite(v)) throw std::invalid_argument("CoefficientSet: non-finite coefficient");
        }
    }
    if (drift.kind == DriftKind::clipped_polynomial && !(drift.poly_bound > 0.0)) {
        throw std::invalid_argument("CoefficientSet: polynomial drift needs a positive clip bound");
    }
    for (double v : diffusion.matrix) {
        if (!std::isfinite(v)) throw std::invalid_argument("CoefficientSet: non-finite diffusion entry");
    }
}

void CoefficientSet::drift_at(double t, std::span<const double> x, std::span<const double> mean,
                              std::span<double> out) const {
    switch (drift.kind) {
        case DriftKind::zero:
            std::fill(out.begin(), out.end(), 0.0);
            return;
        case DriftKind::linear: {
            const double a = drift.alpha(t);
            const double b = drift.beta(t);
            const double g = drift.gamma(t);
            for (std::size_t r = 0; r < state_dim; ++r) out[r] = a + b * x[r] + g * mean[r];
            return;
        }
        case DriftKind::clipped_polynomial:
            for (std::size_t r = 0; r < state_dim; ++r) {
                double acc = 0.0;
                for (auto it = drift.poly.rbegin(); it != drift.poly.rend(); ++it) acc = acc * x[r] + *it;
                out[r] = std::clamp(acc, -drift.poly_bound, drift.poly_bound);
            }
            return;
    }
}

double CoefficientSet::sigma_factor(std::span<const double> x, std::span<const double> mean) const {
    if (diffusion.kind == DiffusionKind::constant) return 1.0;
    return 1.0 + diffusion.amplitude * std::tanh(diffusion.x_slope * x[0] + diffusion.mean_slope * mean[0]);
}

void CoefficientSet::sigma_at(std::span<const double> x, std::span<const double> mean, std::span<double> out) const {
    const double s = sigma_factor(x, mean);
    for (std::size_t i = 0; i < diffusion.matrix.size(); ++i) out[i] = s * diffusion.matrix[i];
}

double CoefficientSet::noise_scale() const { return 1.0 / std::sqrt(static_cast<double>(noise_index)); }

bool CoefficientSet::measure_dependent() const {
    const bool drift_dep = drift.kind == DriftKind::linear && !drift.gamma.all_zero();
    const bool sigma_dep = diffusion.kind == DiffusionKind::modulated && diffusion.mean_slope != 0.0;
    return drift_dep || sigma_dep;
}

bool CoefficientSet::zero_diffusion() const {
    return std::all_of(diffusion.matrix.begin(), diffusion.matrix.end(), [](double v) { return v == 0.0; });
}

LipschitzProbe probe_lipschitz(const CoefficientSet& coeffs, std::size_t pairs, std::uint64_t seed) {
    coeffs.validate();
    const std::size_t m = coeffs.state_dim;
    const std::size_t cloud = 6;
    const CounterRng rng{seed};
    LipschitzProbe probe;
    probe.boundedness_checked = coeffs.drift.kind != DriftKind::linear;
    const double drift_bound = coeffs.drift.kind == DriftKind::clipped_polynomial
                                   ? coeffs.drift.poly_bound * std::sqrt(static_cast<double>(m))
                                   : 0.0;
    std::vector<double> z((2 + 2 * cloud) * m + 1);
    std::vector<double> s1(m * coeffs.noise_dim), s2(m * coeffs.noise_dim);
    Scratch b1{}, b2{};
    for (std::size_t p = 0; p < pairs; ++p) {
        rng.normals(p, 0, StreamTag::probe, z);
        const double t = CounterRng::to_unit(rng.raw(p, 1, StreamTag::probe, 0)[0]);
        const std::span<const double> x1(z.data(), m);
        const std::span<const double> x2(z.data() + m, m);
        EmpiricalMeasure mu1{m, {}}, mu2{m, {}};
        for (std::size_t i = 0; i < cloud * m; ++i) {
            mu1.points.push_back(2.0 * z[2 * m + i]);
            mu2.points.push_back(2.0 * z[2 * m + cloud * m + i] + z.back());
        }
        const auto mean1 = mu1.mean();
        const auto mean2 = mu2.mean();
        coeffs.drift_at(t, x1, mean1, std::span<double>(b1.data(), m));
        coeffs.drift_at(t, x2, mean2, std::span<double>(b2.data(), m));
        coeffs.sigma_at(x1, mean1, s1);
        coeffs.sigma_at(x2, mean2, s2);
        double db = 0.0;
        double dx = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            db += (b1[r] - b2[r]) * (b1[r] - b2[r]);
            dx += (x1[r] - x2[r]) * (x1[r] - x2[r]);
        }
        double ds = 0.0;
        for (std::size_t i = 0; i < s1.size(); ++i) ds += (s1[i] - s2[i]) * (s1[i] - s2[i]);
        const double lhs = std::max(std::sqrt(db), std::sqrt(ds));
        const double rhs = std::sqrt(dx) + wasserstein2(mu1, mu2);
        if (rhs > 0.0) probe.max_ratio = std::max(probe.max_ratio, lhs / rhs);
        if (lhs > coeffs.lipschitz * rhs * (1.0 + 1e-12) + 1e-12) probe.within = false;
        if (probe.boundedness_checked) {
            const double nb1 = norm2(std::span<const double>(b1.data(), m));
            const double nb2 = norm2(std::span<const double>(b2.data(), m));
            if (std::max(nb1, nb2) > drift_bound * (1.0 + 1e-12)) probe.bounded = false;
        }
    }
    return probe;
}

double min_ellipticity(const CoefficientSet& coeffs) {
    coeffs.validate();
    const auto m = static_cast<Eigen::Index>(coeffs.state_dim);
    const auto d = static_cast<Eigen::Index>(coeffs.noise_dim);
    Eigen::MatrixXd sigma(m, d);
    for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index c = 0; c < d; ++c) sigma(r, c) = coeffs.diffusion.matrix[static_cast<std::size_t>(r * d + c)];
    }
    const Eigen::MatrixXd a = sigma * sigma.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
    double lmin = std::max(0.0, eig.eigenvalues().minCoeff());
    if (coeffs.diffusion.kind == DiffusionKind::modulated) {
        const double low = std::max(0.0, 1.0 - std::abs(coeffs.diffusion.amplitude));
        lmin *= low * low;
    }
    return lmin;
}

EllipticityError::EllipticityError(double found, double declared)
    : std::invalid_argument("ellipticity violated: smallest eigenvalue of sigma sigma^T is " + std::to_string(found) +
                            " < declared C2 = " + std::to_string(declared)),
      found_(found) {}

void check_ellipticity(const CoefficientSet& coeffs) {
    if (coeffs.ellipticity <= 0.0) return;
    const double found = min_ellipticity(coeffs);
    if (found < coeffs.ellipticity) throw EllipticityError(found, coeffs.ellipticity);
}

// ---------------------------------------------------------------- initial law

InitialCondition InitialCondition::point(std::vector<double> x) {
    InitialCondition c;
    c.kind = InitKind::point;
    c.location = std::move(x);
    return c;
}

InitialCondition InitialCondition::gaussian(std::vector<double> mean, std::vector<double> sd) {
    if (mean.size() != sd.size()) throw std::invalid_argument("InitialCondition: mean/sd size mismatch");
    for (double s : sd) {
        if (!(s >= 0.0)) throw std::invalid_argument("InitialCondition: negative standard deviation");
    }
    InitialCondition c;
    c.kind = InitKind::gaussian;
    c.location = std::move(mean);
    c.stddev = std::move(sd);
    return c;
}

InitialCondition InitialCondition::uniform_atoms(std::vector<std::vector<double>> atoms, bool balanced) {
    if (atoms.empty()) throw std::invalid_argument("InitialCondition: no atoms");
    for (const auto& a : atoms) {
        if (a.size() != atoms.front().size()) throw std::invalid_argument("InitialCondition: ragged atoms");
    }
    InitialCondition c;
    c.kind = InitKind::atoms;
    c.location = atoms.front();
    c.atoms = std::move(atoms);
    c.balanced = balanced;
    return c;
}

std::size_t InitialCondition::dim() const { return kind == InitKind::atoms ? atoms.front().size() : location.size(); }

bool InitialCondition::deterministic() const {
    switch (kind) {
        case InitKind::point:
            return true;
        case InitKind::gaussian:
            return std::all_of(stddev.begin(), stddev.end(), [](double s) { return s == 0.0; });
        case InitKind::atoms:
            return atoms.size() == 1;
    }
    return false;
}

void InitialCondition::sample(std::uint64_t seed, std::size_t particle, std::span<double> out) const {
    switch (kind) {
        case InitKind::point:
            std::copy(location.begin(), location.end(), out.begin());
            return;
        case InitKind::gaussian: {
            CounterRng{seed}.normals(particle, 0, StreamTag::initial, out);
            for (std::size_t r = 0; r < out.size(); ++r) out[r] = location[r] + stddev[r] * out[r];
            return;
        }
        case InitKind::atoms: {
            std::size_t pick = particle % atoms.size();
            if (!balanced) {
                const double u = CounterRng::to_unit(CounterRng{seed}.raw(particle, 0, StreamTag::initial, 0)[0]);
                pick = std::min(atoms.size() - 1, static_cast<std::size_t>(u * static_cast<double>(atoms.size())));
            }
            std::copy(atoms[pick].begin(), atoms[pick].end(), out.begin());
            return;
        }
    }
}

// ---------------------------------------------------------------- controls

ControlField ControlField::open_loop(std::size_t cells, std::size_t dim, double start) {
    if (cells == 0 || dim == 0) throw std::invalid_argument("ControlField: need cells >= 1 and dim >= 1");
    ControlField f;
    f.mode_ = ControlMode::open_loop;
    f.cells_ = cells;
    f.dim_ = dim;
    f.start_ = start;
    f.params_.assign(cells * dim, 0.0);
    return f;
}

ControlField ControlField::feedback_affine(std::size_t cells, std::size_t dim, std::size_t state_dim, double start) {
    ControlField f = open_loop(cells, dim, start);
    if (state_dim == 0) throw std::invalid_argument("ControlField: state_dim must be >= 1");
    f.mode_ = ControlMode::feedback_affine;
    f.state_dim_ = state_dim;
    f.params_.assign(cells * f.params_per_cell(), 0.0);
    return f;
}

ControlField ControlField::feedback_radial(std::size_t cells, std::size_t dim, std::vector<std::vector<double>> centers,
                                           double width, double start) {
    if (centers.empty()) throw std::invalid_argument("ControlField: radial basis needs centers");
    if (!(width > 0.0)) throw std::invalid_argument("ControlField: radial width must be positive");
    ControlField f = open_loop(cells, dim, start);
    f.mode_ = ControlMode::feedback_radial;
    f.state_dim_ = centers.front().size();
    f.centers_ = std::move(centers);
    f.width_ = width;
    f.params_.assign(cells * f.params_per_cell(), 0.0);
    return f;
}

ControlField ControlField::per_sample(std::size_t particles, std::size_t steps, std::size_t dim, double start) {
    if (particles == 0) throw std::invalid_argument("ControlField: per-sample table needs particles");
    ControlField f = open_loop(steps, dim, start);
    f.mode_ = ControlMode::per_sample;
    f.particles_ = particles;
    f.params_.assign(particles * steps * dim, 0.0);
    return f;
}

ControlField ControlField::with_cap(double cap) const {
    if (!(cap >= 0.0)) throw std::invalid_argument("ControlField: cap must be >= 0");
    ControlField f = *this;
    f.cap_ = cap;
    return f;
}

std::size_t ControlField::params_per_cell() const {
    switch (mode_) {
        case ControlMode::open_loop:
            return dim_;
        case ControlMode::feedback_affine:
            return dim_ * (1 + state_dim_);
        case ControlMode::feedback_radial:
            return dim_ * (1 + centers_.size());
        case ControlMode::per_sample:
            return dim_ * particles_;
    }
    return dim_;
}

void ControlField::set_params(std::span<const double> p) {
    if (p.size() != params_.size()) throw std::invalid_argument("ControlField: parameter count mismatch");
    std::copy(p.begin(), p.end(), params_.begin());
}

std::size_t ControlField::cell_of(double t) const { return cell_index(t, start_, cells_); }

void ControlField::value(double t, std::size_t step, std::size_t particle, std::span<const double> x,
                         std::span<double> out) const {
    switch (mode_) {
        case ControlMode::open_loop: {
            const double* a = params_.data() + cell_of(t) * dim_;
            std::copy(a, a + dim_, out.begin());
            break;
        }
        case ControlMode::feedback_affine: {
            const double* a = params_.data() + cell_of(t) * params_per_cell();
            const double* b = a + dim_;
            for (std::size_t i = 0; i < dim_; ++i) {
                double v = a[i];
                for (std::size_t j = 0; j < state_dim_; ++j) v += b[i * state_dim_ + j] * x[j];
                out[i] = v;
            }
            break;
        }
        case ControlMode::feedback_radial: {
            const double* a = params_.data() + cell_of(t) * params_per_cell();
            const double* w = a + dim_;
            const std::size_t nc = centers_.size();
            for (std::size_t i = 0; i < dim_; ++i) out[i] = a[i];
            for (std::size_t c = 0; c < nc; ++c) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < state_dim_; ++j) {
                    const double diff = x[j] - centers_[c][j];
                    d2 += diff * diff;
                }
                const double phi = std::exp(-d2 / (2.0 * width_ * width_));
                for (std::size_t i = 0; i < dim_; ++i) out[i] += w[i * nc + c] * phi;
            }
            break;
        }
        case ControlMode::per_sample: {
            const double* a = params_.data() + (particle * cells_ + step) * dim_;
            std::copy(a, a + dim_, out.begin());
            break;
        }
    }
    if (cap_ >= 0.0) {
        const double r = norm2(out.first(dim_));
        if (r > cap_) {
            const double s = r > 0.0 ? cap_ / r : 0.0;
            for (std::size_t i = 0; i < dim_; ++i) out[i] *= s;
        }
    }
}

void ControlField::check_finite() const {
    for (double v : params_) {
        if (!std::isfinite(v)) throw std::invalid_argument("ControlField: non-finite parameter");
    }
}

// ---------------------------------------------------------------- ensemble

bool ParticleEnsemble::has_node(std::size_t k) const {
    if (k > grid.steps) return false;
    return retention == Retention::all_nodes || k == 0 || k == grid.steps;
}

std::span<const double> ParticleEnsemble::node(std::size_t k) const {
    if (!has_node(k)) throw std::invalid_argument("ParticleEnsemble: node " + std::to_string(k) + " not stored");
    const std::size_t slot = retention == Retention::all_nodes ? k : (k == 0 ? 0 : 1);
    return std::span<const double>(states).subspan(slot * particles * dim, particles * dim);
}

std::span<const double> ParticleEnsemble::mean_at(std::size_t k) const {
    if (k > grid.steps) throw std::invalid_argument("ParticleEnsemble: node out of range");
    return std::span<const double>(means).subspan(k * dim, dim);
}

SimulationError::SimulationError(std::size_t step, const std::string& what)
    : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}

namespace {

constexpr std::size_t kNoiseGroup = 4;

/// Normals for particles 4g .. 4g + 3 at one step: the flattened (particle, dim) index j
/// lives in Philox block j / 4, lane j % 4, so a group needs exactly d blocks.
void group_normals(const CounterRng& rng, std::size_t step, std::size_t group, std::size_t d, double* out) {
    for (std::size_t blk = 0; blk < d; ++blk) {
        const auto r = rng.raw(group * d + blk, step, StreamTag::diffusion, 0);
        for (std::size_t pair = 0; pair < 2; ++pair) {
            const double radius = std::sqrt(-2.0 * std::log(CounterRng::to_unit(r[2 * pair])));
            const double angle = 2.0 * std::numbers::pi * CounterRng::to_unit(r[2 * pair + 1]);
            out[4 * blk + 2 * pair] = radius * std::cos(angle);
            out[4 * blk + 2 * pair + 1] = radius * std::sin(angle);
        }
    }
}

}  // namespace

void brownian_increment(std::uint64_t seed, std::size_t particle, std::size_t step, double dt, std::span<double> out) {
    const std::size_t d = out.size();
    std::array<double, kNoiseGroup * kMaxStateDim> z{};
    group_normals(CounterRng{seed}, step, particle / kNoiseGroup, d, z.data());
    const double s = std::sqrt(dt);
    const std::size_t lane = particle % kNoiseGroup;
    for (std::size_t j = 0; j < d; ++j) out[j] = z[lane * d + j] * s;
}

void brownian_step(std::uint64_t seed, std::size_t step, std::size_t particles, std::size_t noise_dim, double dt,
                   std::span<double> out, kernels::Backend backend) {
    if (out.size() != particles * noise_dim) throw std::invalid_argument("brownian_step: output size mismatch");
    const CounterRng rng{seed};
    const double s = std::sqrt(dt);
    const std::size_t groups = (particles + kNoiseGroup - 1) / kNoiseGroup;
    kernels::for_each_index(backend, groups, [&](std::size_t g) {
        std::array<double, kNoiseGroup * kMaxStateDim> z{};
        group_normals(rng, step, g, noise_dim, z.data());
        const std::size_t lo = g * kNoiseGroup;
        const std::size_t hi = std::min(particles, lo + kNoiseGroup);
        for (std::size_t j = 0; j < (hi - lo) * noise_dim; ++j) out[lo * noise_dim + j] = z[j] * s;
    });
}

std::vector<double> brownian_table(std::uint64_t seed, std::size_t particles, const TimeGrid& grid,
                                   std::size_t noise_dim, kernels::Backend backend) {
    std::vector<double> table(grid.steps * particles * noise_dim);
    const double dt = grid.step();
    const std::size_t block = particles * noise_dim;
    for (std::size_t k = 0; k < grid.steps; ++k) {
        brownian_step(seed, k, particles, noise_dim, dt, std::span<double>(table.data() + k * block, block), backend);
    }
    return table;
}

namespace {

void validate_run(const CoefficientSet& coeffs, const TimeGrid& grid, const InitialCondition& init,
                  std::size_t particles, const ControlField* control, const SimulationOptions& options) {
    coeffs.validate();
    if (particles == 0) throw std::invalid_argument("simulate_mckv: need at least one particle");
    const std::size_t d = coeffs.noise_dim;
    if (init.dim() != coeffs.state_dim) throw std::invalid_argument("simulate_mckv: initial condition dimension mismatch");
    if (control != nullptr) {
        if (control->dim() != d) throw std::invalid_argument("simulate_mckv: control dimension must equal noise_dim");
        if (std::abs(control->start() - grid.start) > 1e-12) {
            throw std::invalid_argument("simulate_mckv: control start does not match the time grid");
        }
        if (control->is_feedback() && control->state_dim() != coeffs.state_dim) {
            throw std::invalid_argument("simulate_mckv: feedback state dimension mismatch");
        }
        if (control->mode() == ControlMode::per_sample &&
            (control->particles() != particles || control->cells() != grid.steps)) {
            throw std::invalid_argument("simulate_mckv: per-sample control must be particles x steps");
        }
        control->check_finite();
    }
    const CostFunction* cost = options.running_cost;
    if (cost != nullptr && cost->dim() != 0 && cost->dim() != d) {
        throw std::invalid_argument("simulate_mckv: running cost dimension mismatch");
    }
    if (!options.noise.empty() && options.noise.size() != grid.steps * particles * d) {
        throw std::invalid_argument("simulate_mckv: noise table has the wrong size");
    }
}

}  // namespace

void sample_initial(const InitialCondition& init, std::uint64_t seed, std::size_t particles, std::span<double> out) {
    const std::size_t m = init.dim();
    if (out.size() != particles * m) throw std::invalid_argument("sample_initial: output size mismatch");
    for (std::size_t i = 0; i < particles; ++i) init.sample(seed, i, out.subspan(i * m, m));
}

void euler_step(const CoefficientSet& coeffs, const TimeGrid& grid, std::size_t k, std::span<const double> cur,
                std::span<double> next, std::span<double> mean, const ControlField* control, std::uint64_t seed,
                const SimulationOptions& options, std::span<double> running_cost) {
    const std::size_t m = coeffs.state_dim;
    const std::size_t d = coeffs.noise_dim;
    const std::size_t particles = cur.size() / m;
    const double dt = grid.step();
    const double sqdt = std::sqrt(dt);
    const double scale = coeffs.noise_scale();
    const bool has_noise = !coeffs.zero_diffusion();
    const CounterRng rng{seed};
    const CostFunction* cost = options.running_cost;
    kernels::mean_rows(options.backend, cur, m, mean);
    const double t = grid.node(k);

    // everything that is the same for all particles at this step
    const bool affine_drift = coeffs.drift.kind != DriftKind::clipped_polynomial;
    const double da = coeffs.drift.kind == DriftKind::linear ? coeffs.drift.alpha(t) : 0.0;
    const double db = coeffs.drift.kind == DriftKind::linear ? coeffs.drift.beta(t) : 0.0;
    const double dg = coeffs.drift.kind == DriftKind::linear ? coeffs.drift.gamma(t) : 0.0;
    const bool constant_sigma = coeffs.diffusion.kind == DiffusionKind::constant;
    const bool shared_control = control == nullptr || control->mode() == ControlMode::open_loop;
    Scratch q_shared{};
    if (control != nullptr && shared_control) control->value(t, k, 0, cur.subspan(0, m), std::span<double>(q_shared.data(), d));
    const bool shared_cost = cost != nullptr && shared_control && !cost->offset();
    double cost_shared = 0.0;
    if (shared_cost) {
        Scratch qa{};
        for (std::size_t j = 0; j < d; ++j) qa[j] = options.cost_argument_scale * q_shared[j];
        cost_shared = (*cost)(t, std::span<const double>(qa.data(), d), cur.subspan(0, m), mean) * dt;
    }
    const bool fresh_noise = has_noise && options.noise.empty();
    const std::size_t groups = (particles + kNoiseGroup - 1) / kNoiseGroup;

    kernels::for_each_index(options.backend, groups, [&](std::size_t g) {
        std::array<double, kNoiseGroup * kMaxStateDim> fresh;
        if (fresh_noise) group_normals(rng, k, g, d, fresh.data());
        const std::size_t hi = std::min(particles, (g + 1) * kNoiseGroup);
        for (std::size_t i = g * kNoiseGroup; i < hi; ++i) {
            const std::span<const double> x(cur.data() + i * m, m);
            Scratch b, q, z;  // only the first m / d entries are read
            std::array<double, kMaxStateDim * kMaxStateDim> sig;
            if (affine_drift) {
                for (std::size_t r = 0; r < m; ++r) b[r] = da + db * x[r] + dg * mean[r];
            } else {
                coeffs.drift_at(t, x, mean, std::span<double>(b.data(), m));
            }
            const double* s = coeffs.diffusion.matrix.data();
            if (!constant_sigma) {
                coeffs.sigma_at(x, mean, std::span<double>(sig.data(), m * d));
                s = sig.data();
            }
            if (shared_control) {
                std::copy(q_shared.begin(), q_shared.begin() + static_cast<std::ptrdiff_t>(d), q.begin());
            } else {
                control->value(t, k, i, x, std::span<double>(q.data(), d));
            }
            if (!has_noise) {
                std::fill(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
            } else {
                if (fresh_noise) {
                    const std::size_t lane = i - g * kNoiseGroup;
                    for (std::size_t j = 0; j < d; ++j) z[j] = fresh[lane * d + j] * sqdt;
                } else {
                    const double* w = options.noise.data() + (k * particles + i) * d;
                    std::copy(w, w + d, z.begin());
                }
            }
            double* out = next.data() + i * m;
            for (std::size_t r = 0; r < m; ++r) {
                double push = b[r];
                double shock = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    push += s[r * d + j] * q[j];
                    shock += s[r * d + j] * z[j];
                }
                out[r] = x[r] + push * dt + scale * shock;
            }
            if (shared_cost) {
                running_cost[i] += cost_shared;
            } else if (cost != nullptr) {
                Scratch qa{};
                for (std::size_t j = 0; j < d; ++j) qa[j] = options.cost_argument_scale * q[j];
                running_cost[i] += (*cost)(t, std::span<const double>(qa.data(), d), x, mean) * dt;
            }
        }
    });
    if (!std::all_of(next.begin(), next.end(), [](double v) { return std::isfinite(v); })) {
        throw SimulationError(k + 1, "simulate_mckv: non-finite particle state");
    }
}

ParticleEnsemble simulate_mckv(const CoefficientSet& coeffs, const TimeGrid& grid, const InitialCondition& init,
                               std::size_t particles, const ControlField* control, std::uint64_t seed,
                               const SimulationOptions& options) {
    validate_run(coeffs, grid, init, particles, control, options);
    const std::size_t m = coeffs.state_dim;

    ParticleEnsemble ens;
    ens.particles = particles;
    ens.dim = m;
    ens.grid = grid;
    ens.retention = options.retention;
    ens.seed = seed;
    const std::size_t stride = particles * m;
    const std::size_t slots = options.retention == Retention::all_nodes ? grid.steps + 1 : 2;
    ens.states.assign(slots * stride, 0.0);
    ens.means.assign((grid.steps + 1) * m, 0.0);
    if (options.running_cost != nullptr) ens.running_cost.assign(particles, 0.0);

    std::vector<double> cur(stride), next(stride);
    sample_initial(init, seed, particles, cur);
    std::copy(cur.begin(), cur.end(), ens.states.begin());
    for (std::size_t k = 0; k < grid.steps; ++k) {
        euler_step(coeffs, grid, k, cur, next, std::span<double>(ens.means.data() + k * m, m), control, seed, options,
                   ens.running_cost);
        std::swap(cur, next);
        if (options.retention == Retention::all_nodes) {
            std::copy(cur.begin(), cur.end(), ens.states.begin() + static_cast<std::ptrdiff_t>((k + 1) * stride));
        }
    }
    kernels::mean_rows(options.backend, cur, m, std::span<double>(ens.means.data() + grid.steps * m, m));
    if (options.retention == Retention::final_only) {
        std::copy(cur.begin(), cur.end(), ens.states.begin() + static_cast<std::ptrdiff_t>(stride));
    }
    return ens;
}

// ---------------------------------------------------------------- measures

double EmpiricalMeasure::total_weight() const {
    const std::size_t n = size();
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) w += weight();
    return w;
}

std::vector<double> EmpiricalMeasure::mean() const {
    std::vector<double> out(dim, 0.0);
    kernels::mean_rows(kernels::Backend::serial, points, dim, out);
    return out;
}

std::vector<double> EmpiricalMeasure::variance() const {
    const auto mu = mean();
    std::vector<double> out(dim, 0.0);
    const std::size_t n = size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < dim; ++r) {
            const double diff = points[i * dim + r] - mu[r];
            out[r] += diff * diff;
        }
    }
    for (auto& v : out) v /= static_cast<double>(n);
    return out;
}

EmpiricalMeasure empirical_measure(const ParticleEnsemble& ens, std::size_t k) {
    if (k > ens.grid.steps) throw std::invalid_argument("empirical_measure: time index out of range");
    const auto pts = ens.node(k);
    return EmpiricalMeasure{ens.dim, std::vector<double>(pts.begin(), pts.end())};
}

namespace {

double w2_sorted(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t na = a.size();
    const std::size_t nb = b.size();
    // Quantile coupling: walk the merged breakpoints i/na and j/nb exactly.
    std::size_t i = 0;
    std::size_t j = 0;
    std::size_t prev = 0;  // in units of 1/(na*nb)
    double total = 0.0;
    while (i < na && j < nb) {
        const std::size_t ea = (i + 1) * nb;
        const std::size_t eb = (j + 1) * na;
        const std::size_t end = std::min(ea, eb);
        const double diff = a[i] - b[j];
        total += static_cast<double>(end - prev) * diff * diff;
        prev = end;
        if (ea == end) ++i;
        if (eb == end) ++j;
    }
    return std::sqrt(total / (static_cast<double>(na) * static_cast<double>(nb)));
}

// Shortest augmenting path assignment with potentials, O(n^3).
std::vector<std::size_t> min_cost_assignment(const std::vector<double>& cost, std::size_t n) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t row = 1; row <= n; ++row) {
        p[0] = row;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> match(n);
    for (std::size_t j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
    return match;
}

}  // namespace

double wasserstein2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    if (a.dim != b.dim) throw std::invalid_argument("wasserstein2: dimension mismatch");
    if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("wasserstein2: empty measure");
    if (a.dim == 1) return w2_sorted(a.points, b.points);
    if (a.size() != b.size()) {
        throw std::invalid_argument("wasserstein2: multi-dimensional clouds must have equal size");
    }
    const std::size_t n = a.size();
    if (n > kExactAssignmentCap) {
        throw std::invalid_argument("wasserstein2: " + std::to_string(n) + " points exceed the exact solver cap of " +
                                    std::to_string(kExactAssignmentCap) + "; subsample both clouds first");
    }
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double c = 0.0;
            for (std::size_t r = 0; r < a.dim; ++r) {
                const double diff = a.points[i * a.dim + r] - b.points[j * a.dim + r];
                c += diff * diff;
            }
            cost[i * n + j] = c;
        }
    }
    const auto match = min_cost_assignment(cost, n);
    std::vector<double> pairs(n);
    for (std::size_t i = 0; i < n; ++i) pairs[i] = cost[i * n + match[i]];
    std::sort(pairs.begin(), pairs.end());
    const double total = std::accumulate(pairs.begin(), pairs.end(), 0.0);
    return std::sqrt(total / static_cast<double>(n));
}

ChaosReport chaos_report(const CoefficientSet& coeffs, const TimeGrid& grid, const InitialCondition& init,
                         const std::vector<std::size_t>& particle_counts, std::size_t reference_particles,
                         std::uint64_t seed, std::size_t replicates, const SimulationOptions& options) {
    if (particle_counts.empty()) throw std::invalid_argument("chaos_report: empty particle list");
    if (replicates == 0) throw std::invalid_argument("chaos_report: need at least one replicate");
    const std::size_t largest = *std::max_element(particle_counts.begin(), particle_counts.end());
    if (reference_particles <= largest) {
        throw std::invalid_argument("chaos_report: reference size must exceed every particle count");
    }
    SimulationOptions opts = options;
    opts.retention = Retention::final_only;
    opts.running_cost = nullptr;
    opts.noise = {};
    const auto ref = simulate_mckv(coeffs, grid, init, reference_particles, nullptr,
                                   derive_seed(seed, reference_particles, 0), opts);
    const auto ref_law = empirical_measure(ref, grid.steps);

    ChaosReport report;
    report.reference_particles = reference_particles;
    for (std::size_t n : particle_counts) {
        double acc = 0.0;
        for (std::size_t r = 0; r < replicates; ++r) {
            const auto ens = simulate_mckv(coeffs, grid, init, n, nullptr, derive_seed(seed, n, r + 1), opts);
            acc += wasserstein2(empirical_measure(ens, grid.steps), ref_law);
        }
        report.rows.push_back({n, acc / static_cast<double>(replicates)});
    }
    report.all_zero = std::all_of(report.rows.begin(), report.rows.end(), [](const ChaosRow& r) {
        return r.distance <= kDistanceFloor;
    });
    report.strictly_decreasing = true;
    for (std::size_t i = 1; i < report.rows.size(); ++i) {
        if (!(report.rows[i].distance < report.rows[i - 1].distance)) report.strictly_decreasing = false;
    }
    const bool positive = std::all_of(report.rows.begin(), report.rows.end(), [](const ChaosRow& r) {
        return r.distance > kDistanceFloor;
    });
    if (positive && report.rows.size() >= 2) {
        double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
        const auto cnt = static_cast<double>(report.rows.size());
        for (const auto& row : report.rows) {
            const double lx = std::log(static_cast<double>(row.particles));
            const double ly = std::log(row.distance);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        const double den = cnt * sxx - sx * sx;
        if (den > 0.0) report.slope = (cnt * sxy - sx * sy) / den;
    }
    return report;
}

void write_ensemble_csv(std::ostream& os, const ParticleEnsemble& ens) {
    os << "particle,time";
    for (std::size_t r = 0; r < ens.dim; ++r) os << ",x" << (r + 1);
    os << '\n';
    const auto old = os.precision(17);
    for (std::size_t k = 0; k <= ens.grid.steps; ++k) {
        if (!ens.has_node(k)) continue;
        const auto pts = ens.node(k);
        const double t = ens.grid.node(k);
        for (std::size_t i = 0; i < ens.particles; ++i) {
            os << i << ',' << t;
            for (std::size_t r = 0; r < ens.dim; ++r) os << ',' << pts[i * ens.dim + r];
            os << '\n';
        }
    }
    os.precision(old);
}

}  // namespace mkv
