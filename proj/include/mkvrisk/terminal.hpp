#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mkv {

enum class TerminalKind { constant, polynomial, neg_sq_dist, tanh };

/// Terminal payoff F(x, mu) = base(x) + mean_coeff * mean_1(mu) + shift.
/// base: constant 0; clip(sum_j c_j x_1^j); -weight |x - center|^2 (optionally floored); amplitude tanh(slope x_1 + offset).
class TerminalFunctional {
public:
    static TerminalFunctional constant(double c);
    static TerminalFunctional polynomial(std::vector<double> coeffs, double clip);
    static TerminalFunctional neg_sq_dist(std::vector<double> center, double weight = 1.0);
    static TerminalFunctional tanh(double amplitude = 1.0, double slope = 1.0, double offset = 0.0);

    TerminalFunctional plus(double c) const;
    TerminalFunctional with_mean_term(double coeff) const;
    /// Lower floor for the quadratic kind; makes it bounded.
    TerminalFunctional with_floor(double floor) const;

    TerminalKind kind() const { return kind_; }
    double operator()(std::span<const double> x, std::span<const double> mean) const;
    double operator()(double x) const;
    /// sup |F| when finite, +inf otherwise.
    double declared_bound() const;
    bool is_constant() const { return kind_ == TerminalKind::constant && mean_coeff_ == 0.0; }
    double shift() const { return shift_; }
    std::string describe() const;

private:
    TerminalKind kind_ = TerminalKind::constant;
    std::vector<double> coeffs_;
    std::vector<double> center_;
    double weight_ = 1.0;
    double clip_ = 0.0;
    double floor_ = 0.0;
    bool floored_ = false;
    double amplitude_ = 1.0;
    double slope_ = 1.0;
    double offset_ = 0.0;
    double mean_coeff_ = 0.0;
    double shift_ = 0.0;
};

struct ContinuityProbe {
    double max_jump = 0.0;       // largest |F(x) - F(x')| over probe pairs
    double max_ratio = 0.0;      // largest |F(x) - F(x')| / |x - x'|
    bool within_bound = true;    // every evaluation inside the declared bound
};

/// Randomized nearby pairs at distance `radius` around standard normal points.
ContinuityProbe probe_continuity(const TerminalFunctional& f, std::size_t dim, std::size_t pairs, double radius,
                                 std::uint64_t seed);

}  // namespace mkv
