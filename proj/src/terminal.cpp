#include "mkvrisk/terminal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mkvrisk/rng.hpp"

namespace mkv {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TerminalFunctional TerminalFunctional::constant(double c) {
    if (!std::isfinite(c)) throw std::invalid_argument("terminal constant must be finite");
    TerminalFunctional f;
    f.shift_ = c;
    return f;
}

TerminalFunctional TerminalFunctional::polynomial(std::vector<double> coeffs, double clip) {
    if (coeffs.empty()) throw std::invalid_argument("polynomial terminal needs coefficients");
    if (!(clip > 0.0)) throw std::invalid_argument("polynomial terminal needs a positive clip");
    TerminalFunctional f;
    f.kind_ = TerminalKind::polynomial;
    f.coeffs_ = std::move(coeffs);
    f.clip_ = clip;
    return f;
}

TerminalFunctional TerminalFunctional::neg_sq_dist(std::vector<double> center, double weight) {
    if (center.empty()) throw std::invalid_argument("quadratic terminal needs a center");
    if (!(weight >= 0.0)) throw std::invalid_argument("quadratic terminal weight must be >= 0");
    TerminalFunctional f;
    f.kind_ = TerminalKind::neg_sq_dist;
    f.center_ = std::move(center);
    f.weight_ = weight;
    return f;
}

TerminalFunctional TerminalFunctional::tanh(double amplitude, double slope, double offset) {
    TerminalFunctional f;
    f.kind_ = TerminalKind::tanh;
    f.amplitude_ = amplitude;
    f.slope_ = slope;
    f.offset_ = offset;
    return f;
}

TerminalFunctional TerminalFunctional::plus(double c) const {
    TerminalFunctional f = *this;
    f.shift_ += c;
    return f;
}

TerminalFunctional TerminalFunctional::with_mean_term(double coeff) const {
    TerminalFunctional f = *this;
    f.mean_coeff_ = coeff;
    return f;
}

TerminalFunctional TerminalFunctional::with_floor(double floor) const {
    if (kind_ != TerminalKind::neg_sq_dist) throw std::invalid_argument("floor applies to the quadratic terminal only");
    TerminalFunctional f = *this;
    f.floor_ = floor;
    f.floored_ = true;
    return f;
}

double TerminalFunctional::operator()(std::span<const double> x, std::span<const double> mean) const {
    double v = shift_;
    switch (kind_) {
        case TerminalKind::constant:
            break;
        case TerminalKind::polynomial: {
            double acc = 0.0;
            for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * x[0] + *it;
            v += std::clamp(acc, -clip_, clip_);
            break;
        }
        case TerminalKind::neg_sq_dist: {
            if (x.size() != center_.size()) throw std::invalid_argument("terminal: state dimension mismatch");
            double d2 = 0.0;
            for (std::size_t r = 0; r < x.size(); ++r) d2 += (x[r] - center_[r]) * (x[r] - center_[r]);
            double q = -weight_ * d2;
            if (floored_) q = std::max(q, floor_);
            v += q;
            break;
        }
        case TerminalKind::tanh:
            v += amplitude_ * std::tanh(slope_ * x[0] + offset_);
            break;
    }
    if (mean_coeff_ != 0.0) v += mean_coeff_ * mean[0];
    return v;
}

double TerminalFunctional::operator()(double x) const {
    return (*this)(std::span<const double>(&x, 1), std::span<const double>(&x, 1));
}

double TerminalFunctional::declared_bound() const {
    if (mean_coeff_ != 0.0) return kInf;
    switch (kind_) {
        case TerminalKind::constant:
            return std::abs(shift_);
        case TerminalKind::polynomial:
            return clip_ + std::abs(shift_);
        case TerminalKind::neg_sq_dist:
            return floored_ ? std::abs(floor_) + std::abs(shift_) : kInf;
        case TerminalKind::tanh:
            return std::abs(amplitude_) + std::abs(shift_);
    }
    return kInf;
}

std::string TerminalFunctional::describe() const {
    std::ostringstream os;
    switch (kind_) {
        case TerminalKind::constant:
            os << "constant";
            break;
        case TerminalKind::polynomial:
            os << "polynomial(degree " << coeffs_.size() - 1 << ", clip " << clip_ << ")";
            break;
        case TerminalKind::neg_sq_dist:
            os << "-" << weight_ << "|x - c|^2";
            break;
        case TerminalKind::tanh:
            os << amplitude_ << " tanh(" << slope_ << " x + " << offset_ << ")";
            break;
    }
    if (mean_coeff_ != 0.0) os << " + " << mean_coeff_ << " mean";
    if (shift_ != 0.0) os << " + " << shift_;
    return os.str();
}

ContinuityProbe probe_continuity(const TerminalFunctional& f, std::size_t dim, std::size_t pairs, double radius,
                                 std::uint64_t seed) {
    if (dim == 0) throw std::invalid_argument("probe_continuity: dim must be >= 1");
    const CounterRng rng{seed};
    const double bound = f.declared_bound();
    ContinuityProbe probe;
    std::vector<double> z(2 * dim), x(dim), y(dim);
    for (std::size_t p = 0; p < pairs; ++p) {
        rng.normals(p, 0, StreamTag::probe, z);
        double len = 0.0;
        for (std::size_t r = 0; r < dim; ++r) len += z[dim + r] * z[dim + r];
        len = std::sqrt(len);
        for (std::size_t r = 0; r < dim; ++r) {
            x[r] = 2.0 * z[r];
            y[r] = x[r] + (len > 0.0 ? radius * z[dim + r] / len : 0.0);
        }
        const double fx = f(x, x);
        const double fy = f(y, y);
        const double jump = std::abs(fx - fy);
        probe.max_jump = std::max(probe.max_jump, jump);
        probe.max_ratio = std::max(probe.max_ratio, jump / radius);
        if (std::abs(fx) > bound * (1.0 + 1e-12) || std::abs(fy) > bound * (1.0 + 1e-12)) probe.within_bound = false;
    }
    return probe;
}

}  // namespace mkv
