#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mkvrisk/grid.hpp"
#include "mkvrisk/kernels.hpp"

namespace mkv {

/// Bounded Lipschitz state/measure term
/// f2(x, mu) = clip(constant + x_weights . x + mean_weights . mean(mu), -bound, bound).
/// Empty weight vectors mean "no dependence".
struct OffsetTerm {
    double constant = 0.0;
    std::vector<double> x_weights;
    std::vector<double> mean_weights;
    double bound = 1.0;

    double operator()(std::span<const double> x, std::span<const double> mean) const;
};

enum class CostKind {
    quadratic,   // (scale/2) |z|^2
    power,       // (scale/p) |z|^p, p > 1
    grid,        // sampled table on a uniform grid
    truncated,   // sup_{|q| <= radius} q.z - (scale/p)|q|^p
    restricted,  // (scale/p)|q|^p on the ball of `radius`, +inf outside
};

std::string to_string(CostKind kind);

/// Running cost f(t, z, x, mu) = w(t) f1(z) + sign * f2(x, mu), or its conjugate.
/// w is an optional piecewise-constant factor over equal cells of [0, 1].
class CostFunction {
public:
    static CostFunction quadratic(double scale = 1.0);
    static CostFunction power(double p, double scale = 1.0);
    static CostFunction grid(GridTable table);
    static CostFunction truncated(double p, double scale, double radius);
    static CostFunction restricted(double p, double scale, double radius);

    CostFunction with_offset(OffsetTerm offset, double sign = 1.0) const;
    CostFunction with_time_factors(std::vector<double> factors) const;

    CostKind kind() const { return kind_; }
    double exponent() const { return exponent_; }
    double scale() const { return scale_; }
    double radius() const { return radius_; }
    const GridTable& table() const;
    const std::optional<OffsetTerm>& offset() const { return offset_; }
    double offset_sign() const { return offset_sign_; }
    const std::vector<double>& time_factors() const { return time_factors_; }

    bool closed_form() const { return kind_ != CostKind::grid; }
    /// Radial profile (scale/p) r^p, possibly truncated/restricted.
    bool radial() const { return kind_ != CostKind::grid; }
    /// Required argument dimension, or 0 when any dimension is accepted.
    std::size_t dim() const;

    double time_factor(double t) const;
    double z_part(double t, std::span<const double> z) const;
    double offset_value(std::span<const double> x, std::span<const double> mean) const;
    double operator()(double t, std::span<const double> z, std::span<const double> x,
                      std::span<const double> mean) const;
    /// z-part at t = 0 (time-homogeneous use).
    double operator()(std::span<const double> z) const { return z_part(0.0, z); }
    double operator()(double z) const { return z_part(0.0, std::span<const double>(&z, 1)); }

    /// q -> g(a q); a > 0.
    CostFunction scale_argument(double a) const;

private:
    CostKind kind_ = CostKind::quadratic;
    double exponent_ = 2.0;
    double scale_ = 1.0;
    double radius_ = 0.0;
    std::shared_ptr<const GridTable> table_;
    std::optional<OffsetTerm> offset_;
    double offset_sign_ = 1.0;
    std::vector<double> time_factors_;
};

class ConvexityError : public std::invalid_argument {
public:
    ConvexityError(std::size_t axis, std::size_t flat_index, double second_difference);
    std::size_t axis() const { return axis_; }
    std::size_t flat_index() const { return index_; }
    double second_difference() const { return value_; }

private:
    std::size_t axis_;
    std::size_t index_;
    double value_;
};

/// Metadata of a grid transform. A dual point is box-clipped when its maximizer
/// sits on the boundary of the primal grid.
struct TransformInfo {
    bool numeric = false;
    bool box_clipped = false;
    std::size_t clipped_points = 0;
    std::vector<unsigned char> clipped_mask;
};

struct TransformOptions {
    bool check_convexity = true;
    kernels::Backend backend = kernels::Backend::parallel;
};

/// Throws ConvexityError when a discrete second difference along some axis is
/// below -1e-12 * max(1, max|f|). Infinite entries are skipped.
void check_grid_convexity(const GridTable& table);

/// Convex conjugate. Closed-form kinds map to closed-form kinds; grid kinds use
/// separable discrete maximization onto the dual grid `dual`.
CostFunction legendre_transform(const CostFunction& f, const UniformGrid& dual, TransformInfo* info = nullptr,
                                 const TransformOptions& options = {});

/// f** on f's own grid, via the dual grid. Accepts non-convex input (returns
/// the convex envelope of the samples).
CostFunction biconjugate(const CostFunction& f, const UniformGrid& dual, TransformInfo* info = nullptr,
                         const TransformOptions& options = {});

/// Samples the z-part at t = 0 onto a grid.
CostFunction sample_on_grid(const CostFunction& f, const UniformGrid& grid);

enum class Provenance { closed_form, numeric_grid };

struct ConjugatePair {
    CostFunction primal;
    CostFunction dual;
    Provenance provenance = Provenance::closed_form;
    std::optional<UniformGrid> grid;
    TransformInfo info;
};

/// f_n(z) = max_{|q| <= n} q.z - g(q) and g_n = f_n^*, both on `grid` (which
/// serves as q-grid and z-grid).
ConjugatePair truncate_pair(const CostFunction& g, double n, const UniformGrid& grid,
                            const TransformOptions& options = {});

/// Closed-form truncation for radial quadratic/power g.
ConjugatePair truncate_closed_form(const CostFunction& g, double n);

/// q -> g(q / sqrt(n)).
CostFunction viscosity_scale(const CostFunction& g, long n);

/// Largest m-Lipschitz minorant on the grid: F_m(x) = min_y F(y) + m |x - y|.
GridTable pasch_hausdorff(const GridTable& f, double slope,
                          kernels::Backend backend = kernels::Backend::parallel);

/// min over sampled pairs of primal(z) + dual(q) - q.z (z-parts, t = 0).
double young_min_slack(const ConjugatePair& pair, std::span<const double> zs, std::span<const double> qs,
                       std::size_t dim);

double holder_conjugate(double p);

}  // namespace mkv
