#include "mkvrisk/convex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mkv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double norm(std::span<const double> z) {
    double s = 0.0;
    for (double v : z) s += v * v;
    return std::sqrt(s);
}

void require_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be positive and finite");
}

}  // namespace

double holder_conjugate(double p) {
    if (!(p > 1.0)) throw std::invalid_argument("exponent must exceed 1");
    return p / (p - 1.0);
}

std::string to_string(CostKind kind) {
    switch (kind) {
        case CostKind::quadratic: return "quadratic";
        case CostKind::power: return "power";
        case CostKind::grid: return "grid";
        case CostKind::truncated: return "truncated";
        case CostKind::restricted: return "restricted";
    }
    return "unknown";
}

double OffsetTerm::operator()(std::span<const double> x, std::span<const double> mean) const {
    double v = constant;
    for (std::size_t k = 0; k < std::min(x.size(), x_weights.size()); ++k) v += x_weights[k] * x[k];
    for (std::size_t k = 0; k < std::min(mean.size(), mean_weights.size()); ++k) v += mean_weights[k] * mean[k];
    return std::clamp(v, -bound, bound);
}

CostFunction CostFunction::quadratic(double scale) {
    require_positive(scale, "quadratic scale");
    CostFunction f;
    f.kind_ = CostKind::quadratic;
    f.exponent_ = 2.0;
    f.scale_ = scale;
    return f;
}

CostFunction CostFunction::power(double p, double scale) {
    if (!(p > 1.0) || !std::isfinite(p)) throw std::invalid_argument("power cost requires p > 1");
    require_positive(scale, "power scale");
    CostFunction f;
    f.kind_ = CostKind::power;
    f.exponent_ = p;
    f.scale_ = scale;
    return f;
}

CostFunction CostFunction::grid(GridTable table) {
    if (table.values.size() != table.grid.size() || table.values.empty()) {
        throw std::invalid_argument("grid cost: value table does not match grid");
    }
    CostFunction f;
    f.kind_ = CostKind::grid;
    f.table_ = std::make_shared<const GridTable>(std::move(table));
    return f;
}

CostFunction CostFunction::truncated(double p, double scale, double radius) {
    CostFunction f = power(p, scale);
    require_positive(radius, "truncation radius");
    f.kind_ = CostKind::truncated;
    f.radius_ = radius;
    return f;
}

CostFunction CostFunction::restricted(double p, double scale, double radius) {
    CostFunction f = truncated(p, scale, radius);
    f.kind_ = CostKind::restricted;
    return f;
}

CostFunction CostFunction::with_offset(OffsetTerm offset, double sign) const {
    if (!(offset.bound >= 0.0)) throw std::invalid_argument("offset bound must be non-negative");
    CostFunction f = *this;
    f.offset_ = std::move(offset);
    f.offset_sign_ = sign;
    return f;
}

CostFunction CostFunction::with_time_factors(std::vector<double> factors) const {
    if (kind_ != CostKind::quadratic && kind_ != CostKind::power && !factors.empty()) {
        throw std::invalid_argument("time factors are supported for quadratic and power costs only");
    }
    for (double w : factors) require_positive(w, "time factor");
    CostFunction f = *this;
    f.time_factors_ = std::move(factors);
    return f;
}

const GridTable& CostFunction::table() const {
    if (!table_) throw std::logic_error("cost function has no grid table");
    return *table_;
}

std::size_t CostFunction::dim() const { return kind_ == CostKind::grid ? table_->grid.dim() : 0; }

double CostFunction::time_factor(double t) const {
    if (time_factors_.empty()) return 1.0;
    const auto cells = static_cast<double>(time_factors_.size());
    const auto k = static_cast<std::size_t>(std::clamp(std::floor(t * cells), 0.0, cells - 1.0));
    return time_factors_[k];
}

double CostFunction::z_part(double t, std::span<const double> z) const {
    switch (kind_) {
        case CostKind::quadratic: {
            double s = 0.0;
            for (double v : z) s += v * v;
            return time_factor(t) * 0.5 * scale_ * s;
        }
        case CostKind::power:
            return time_factor(t) * scale_ / exponent_ * std::pow(norm(z), exponent_);
        case CostKind::grid:
            return table_->interpolate(z);
        case CostKind::truncated: {
            const double r = norm(z);
            const double p = exponent_;
            const double rho = std::pow(r / scale_, 1.0 / (p - 1.0));
            if (rho <= radius_) {
                const double pb = holder_conjugate(p);
                return std::pow(scale_, 1.0 - pb) / pb * std::pow(r, pb);
            }
            return radius_ * r - scale_ / p * std::pow(radius_, p);
        }
        case CostKind::restricted: {
            const double r = norm(z);
            if (r > radius_ * (1.0 + 1e-12)) return kInf;
            return scale_ / exponent_ * std::pow(r, exponent_);
        }
    }
    return kInf;
}

double CostFunction::offset_value(std::span<const double> x, std::span<const double> mean) const {
    return offset_ ? offset_sign_ * (*offset_)(x, mean) : 0.0;
}

double CostFunction::operator()(double t, std::span<const double> z, std::span<const double> x,
                                std::span<const double> mean) const {
    return z_part(t, z) + offset_value(x, mean);
}

CostFunction CostFunction::scale_argument(double a) const {
    require_positive(a, "argument scale");
    CostFunction f = *this;
    switch (kind_) {
        case CostKind::quadratic:
        case CostKind::power:
            f.scale_ = scale_ * std::pow(a, exponent_);
            break;
        case CostKind::restricted:
            f.scale_ = scale_ * std::pow(a, exponent_);
            f.radius_ = radius_ / a;
            break;
        case CostKind::truncated:
            f.scale_ = scale_ * std::pow(a, -exponent_);
            f.radius_ = radius_ * a;
            break;
        case CostKind::grid: {
            std::vector<Axis> axes = table_->grid.axes();
            for (auto& ax : axes) ax = Axis{ax.lo / a, ax.hi / a, ax.points};
            f.table_ = std::make_shared<const GridTable>(GridTable{UniformGrid(std::move(axes)), table_->values});
            break;
        }
    }
    return f;
}

ConvexityError::ConvexityError(std::size_t axis, std::size_t flat_index, double second_difference)
    : std::invalid_argument("convexity violation on axis " + std::to_string(axis) + " at grid index " +
                            std::to_string(flat_index) + " (second difference " +
                            std::to_string(second_difference) + ")"),
      axis_(axis),
      index_(flat_index),
      value_(second_difference) {}

void check_grid_convexity(const GridTable& table) {
    const UniformGrid& g = table.grid;
    const double tol = 1e-12 * std::max(1.0, table.max_abs_finite());
    for (std::size_t k = 0; k < g.dim(); ++k) {
        const std::size_t stride = g.stride(k);
        const std::size_t n = g.axis(k).points;
        for (std::size_t flat = 0; flat < g.size(); ++flat) {
            const std::size_t i = g.unflatten(flat)[k];
            if (i == 0 || i + 1 == n) continue;
            const double a = table.values[flat - stride];
            const double b = table.values[flat];
            const double c = table.values[flat + stride];
            if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c)) continue;
            const double d2 = a - 2.0 * b + c;
            if (d2 < -tol) throw ConvexityError(k, flat, d2);
        }
    }
}

namespace {

CostFunction closed_form_conjugate(const CostFunction& f) {
    CostFunction g;
    const double p = f.exponent();
    const double s = f.scale();
    std::vector<double> factors;
    switch (f.kind()) {
        case CostKind::quadratic:
            g = CostFunction::quadratic(1.0 / s);
            for (double w : f.time_factors()) factors.push_back(1.0 / w);
            break;
        case CostKind::power: {
            const double pb = holder_conjugate(p);
            g = CostFunction::power(pb, std::pow(s, 1.0 - pb));
            for (double w : f.time_factors()) factors.push_back(std::pow(w, 1.0 - pb));
            break;
        }
        case CostKind::truncated:
            g = CostFunction::restricted(p, s, f.radius());
            break;
        case CostKind::restricted:
            g = CostFunction::truncated(p, s, f.radius());
            break;
        case CostKind::grid:
            throw std::logic_error("closed_form_conjugate called on grid kind");
    }
    if (!factors.empty()) g = g.with_time_factors(std::move(factors));
    if (f.offset()) g = g.with_offset(*f.offset(), -f.offset_sign());
    return g;
}

}  // namespace

CostFunction legendre_transform(const CostFunction& f, const UniformGrid& dual, TransformInfo* info,
                                 const TransformOptions& options) {
    if (f.closed_form()) {
        if (info) *info = TransformInfo{};
        return closed_form_conjugate(f);
    }
    const GridTable& table = f.table();
    const std::size_t d = table.grid.dim();
    if (dual.dim() != d) throw std::invalid_argument("dual grid dimension does not match primal grid");
    if (dual.size() == 0) throw std::invalid_argument("empty dual domain");
    if (options.check_convexity) check_grid_convexity(table);

    std::vector<std::size_t> shape(d);
    for (std::size_t k = 0; k < d; ++k) shape[k] = table.grid.axis(k).points;
    std::vector<double> cur(table.values.size());
    std::transform(table.values.begin(), table.values.end(), cur.begin(), [](double v) { return -v; });

    std::vector<std::vector<std::size_t>> args(d);
    std::vector<std::vector<std::size_t>> out_shapes(d);
    for (std::size_t k = 0; k < d; ++k) {
        std::vector<std::size_t> out_shape = shape;
        out_shape[k] = dual.axis(k).points;
        std::size_t out_size = 1;
        for (auto s : out_shape) out_size *= s;
        std::vector<double> out(out_size);
        args[k].assign(out_size, 0);
        kernels::legendre_pass(options.backend, cur, shape, k, table.grid.axis(k), dual.axis(k), out, args[k]);
        cur = std::move(out);
        shape = out_shape;
        out_shapes[k] = std::move(out_shape);
    }

    TransformInfo local;
    local.numeric = true;
    local.clipped_mask.assign(dual.size(), 0);
    for (std::size_t j = 0; j < dual.size(); ++j) {
        if (!std::isfinite(cur[j])) continue;
        const auto q_idx = dual.unflatten(j);
        std::array<std::size_t, kMaxGridDim> z_idx{};
        bool clipped = false;
        for (std::size_t k = d; k-- > 0;) {
            std::size_t flat = 0;
            std::size_t stride = 1;
            for (std::size_t a = d; a-- > 0;) {
                flat += (a <= k ? q_idx[a] : z_idx[a]) * stride;
                stride *= out_shapes[k][a];
            }
            z_idx[k] = args[k][flat];
            if (z_idx[k] == 0 || z_idx[k] + 1 == table.grid.axis(k).points) clipped = true;
        }
        if (clipped) {
            local.clipped_mask[j] = 1;
            ++local.clipped_points;
        }
    }
    local.box_clipped = local.clipped_points > 0;
    if (info) *info = std::move(local);

    CostFunction g = CostFunction::grid(GridTable{dual, std::move(cur)});
    if (f.offset()) g = g.with_offset(*f.offset(), -f.offset_sign());
    return g;
}

CostFunction biconjugate(const CostFunction& f, const UniformGrid& dual, TransformInfo* info,
                         const TransformOptions& options) {
    if (f.closed_form()) {
        if (info) *info = TransformInfo{};
        return f;
    }
    TransformOptions unchecked = options;
    unchecked.check_convexity = false;
    TransformInfo first;
    const CostFunction g = legendre_transform(f, dual, &first, unchecked);
    TransformInfo second;
    CostFunction fss = legendre_transform(g, f.table().grid, &second, unchecked);
    second.box_clipped = second.box_clipped || first.box_clipped;
    if (info) *info = std::move(second);
    return fss;
}

CostFunction sample_on_grid(const CostFunction& f, const UniformGrid& grid) {
    std::vector<double> values(grid.size());
    std::vector<double> p(grid.dim());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid.point(i, p);
        values[i] = f.z_part(0.0, p);
    }
    CostFunction s = CostFunction::grid(GridTable{grid, std::move(values)});
    if (f.offset()) s = s.with_offset(*f.offset(), f.offset_sign());
    return s;
}

ConjugatePair truncate_pair(const CostFunction& g, double n, const UniformGrid& grid, const TransformOptions& options) {
    if (!(n > 0.0)) throw std::invalid_argument("truncation radius must be positive");
    CostFunction sampled = sample_on_grid(g, grid);
    check_grid_convexity(sampled.table());
    GridTable masked = sampled.table();
    std::vector<double> p(grid.dim());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid.point(i, p);
        if (norm(p) > n * (1.0 + 1e-12)) masked.values[i] = kInf;
    }
    CostFunction masked_g = CostFunction::grid(std::move(masked));
    if (g.offset()) masked_g = masked_g.with_offset(*g.offset(), g.offset_sign());

    TransformOptions unchecked = options;
    unchecked.check_convexity = false;
    ConjugatePair pair;
    pair.provenance = Provenance::numeric_grid;
    pair.grid = grid;
    pair.primal = legendre_transform(masked_g, grid, &pair.info, unchecked);
    pair.dual = legendre_transform(pair.primal, grid, nullptr, unchecked);
    return pair;
}

ConjugatePair truncate_closed_form(const CostFunction& g, double n) {
    if (!(n > 0.0)) throw std::invalid_argument("truncation radius must be positive");
    if (g.kind() != CostKind::quadratic && g.kind() != CostKind::power) {
        throw std::invalid_argument("closed-form truncation needs a quadratic or power cost");
    }
    if (!g.time_factors().empty()) throw std::invalid_argument("closed-form truncation needs a time-homogeneous cost");
    ConjugatePair pair;
    pair.provenance = Provenance::closed_form;
    pair.dual = CostFunction::restricted(g.exponent(), g.scale(), n);
    pair.primal = CostFunction::truncated(g.exponent(), g.scale(), n);
    if (g.offset()) {
        pair.dual = pair.dual.with_offset(*g.offset(), g.offset_sign());
        pair.primal = pair.primal.with_offset(*g.offset(), -g.offset_sign());
    }
    return pair;
}

CostFunction viscosity_scale(const CostFunction& g, long n) {
    if (n < 1) throw std::invalid_argument("viscosity index must be >= 1");
    if (n == 1) return g;
    return g.scale_argument(1.0 / std::sqrt(static_cast<double>(n)));
}

GridTable pasch_hausdorff(const GridTable& f, double slope, kernels::Backend backend) {
    if (f.values.empty() || f.values.size() != f.grid.size()) throw std::invalid_argument("empty function table");
    require_positive(slope, "envelope slope");
    for (double v : f.values) {
        if (std::isnan(v) || v == -kInf) throw std::invalid_argument("function table must be bounded below");
    }
    GridTable out{f.grid, std::vector<double>(f.values.size())};
    kernels::pasch_hausdorff(backend, f.grid, f.values, slope, out.values);
    return out;
}

double young_min_slack(const ConjugatePair& pair, std::span<const double> zs, std::span<const double> qs,
                       std::size_t dim) {
    if (dim == 0 || zs.size() % dim != 0 || qs.size() % dim != 0) {
        throw std::invalid_argument("young_min_slack: sample arrays do not match dimension");
    }
    double slack = kInf;
    for (std::size_t i = 0; i < zs.size(); i += dim) {
        const auto z = zs.subspan(i, dim);
        const double fz = pair.primal.z_part(0.0, z);
        for (std::size_t j = 0; j < qs.size(); j += dim) {
            const auto q = qs.subspan(j, dim);
            double dot = 0.0;
            for (std::size_t k = 0; k < dim; ++k) dot += q[k] * z[k];
            const double gq = pair.dual.z_part(0.0, q);
            if (!std::isfinite(fz) || !std::isfinite(gq)) continue;
            slack = std::min(slack, fz + gq - dot);
        }
    }
    return slack;
}

}  // namespace mkv
