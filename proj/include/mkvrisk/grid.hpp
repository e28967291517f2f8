#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mkv {

inline constexpr std::size_t kMaxGridDim = 3;

/// One axis of a uniform tensor grid: `points` equally spaced nodes on [lo, hi].
struct Axis {
    double lo = 0.0;
    double hi = 1.0;
    std::size_t points = 2;

    double step() const { return (hi - lo) / static_cast<double>(points - 1); }
    double coord(std::size_t i) const { return lo + step() * static_cast<double>(i); }
};

/// Row-major uniform tensor grid in dimension 1..3 (last axis varies fastest).
class UniformGrid {
public:
    UniformGrid() = default;
    explicit UniformGrid(std::vector<Axis> axes);

    /// Same axis repeated `dim` times.
    static UniformGrid cube(std::size_t dim, double lo, double hi, std::size_t points);

    std::size_t dim() const { return axes_.size(); }
    std::size_t size() const { return size_; }
    const Axis& axis(std::size_t k) const { return axes_[k]; }
    const std::vector<Axis>& axes() const { return axes_; }

    std::size_t stride(std::size_t k) const { return strides_[k]; }
    std::array<std::size_t, kMaxGridDim> unflatten(std::size_t flat) const;
    void point(std::size_t flat, std::span<double> out) const;
    bool on_boundary(std::size_t flat) const;

    /// Largest distance from the origin to any grid corner along a single axis.
    double radius() const;

    bool operator==(const UniformGrid&) const;

private:
    std::vector<Axis> axes_;
    std::array<std::size_t, kMaxGridDim> strides_{};
    std::size_t size_ = 0;
};

/// Function values sampled on a uniform grid. Off-grid evaluation is multilinear;
/// outside the box the boundary cell's multilinear form is extended.
struct GridTable {
    UniformGrid grid;
    std::vector<double> values;

    double interpolate(std::span<const double> x) const;
    double max_abs_finite() const;
};

/// CSV with header "coord1,...,coordD,value"; rows in grid order.
void write_grid_csv(std::ostream& os, const GridTable& table, const std::string& coord_prefix = "z");
GridTable read_grid_csv(std::istream& is);

}  // namespace mkv
