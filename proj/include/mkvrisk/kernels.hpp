#pragma once

// Data-parallel inner loops. Every kernel has a serial reference path and an
// OpenMP path selected by Backend; both produce bit-identical results because
// reductions are folded over fixed-size blocks in a fixed order.

#include <cstddef>
#include <span>
#include <vector>

#include "mkvrisk/grid.hpp"

namespace mkv::kernels {

enum class Backend { serial, parallel };

inline constexpr std::size_t kReduceBlock = 1024;

inline std::size_t block_count(std::size_t n) { return (n + kReduceBlock - 1) / kReduceBlock; }

template <class Body>
void for_each_index(Backend backend, std::size_t n, Body&& body) {
    if (backend == Backend::parallel) {
        const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
    } else {
        for (std::size_t i = 0; i < n; ++i) body(i);
    }
}

/// Column means of a row-major (rows x dim) array.
void mean_rows(Backend backend, std::span<const double> rows, std::size_t dim, std::span<double> out);

/// Block-ordered sum; the summation order depends only on the length.
double blocked_sum(Backend backend, std::span<const double> values);

struct ExpMoments {
    double shift = 0.0;   // max of the inputs
    double sum = 0.0;     // sum exp(theta * (v - shift))
    double sum_sq = 0.0;  // sum exp(2 theta * (v - shift))
    std::size_t count = 0;
};

/// Shifted exponential moments for log-mean-exp estimators.
ExpMoments exp_moments(Backend backend, std::span<const double> values, double theta);

/// One separable Legendre pass along `axis`:
/// out(.., q_j, ..) = max_i ( q_j * z_i + in(.., z_i, ..) ).
/// `in_shape`/`out_shape` differ only on `axis`. argmax gets the maximizing i.
void legendre_pass(Backend backend, std::span<const double> in, const std::vector<std::size_t>& in_shape,
                   std::size_t axis, const Axis& z_axis, const Axis& q_axis, std::span<double> out,
                   std::span<std::size_t> argmax);

/// F_m(x) = min_y F(y) + m |x - y| over the grid points (Euclidean distance).
void pasch_hausdorff(Backend backend, const UniformGrid& grid, std::span<const double> values, double slope,
                     std::span<double> out);

}  // namespace mkv::kernels
