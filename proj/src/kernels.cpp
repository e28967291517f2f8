#include "mkvrisk/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mkv::kernels {

void mean_rows(Backend backend, std::span<const double> rows, std::size_t dim, std::span<double> out) {
    if (dim == 0 || rows.size() % dim != 0 || out.size() != dim) {
        throw std::invalid_argument("mean_rows: shape mismatch");
    }
    const std::size_t n = rows.size() / dim;
    if (n == 0) throw std::invalid_argument("mean_rows: no rows");
    const std::size_t blocks = block_count(n);
    std::vector<double> partial(blocks * dim, 0.0);
    for_each_index(backend, blocks, [&](std::size_t b) {
        const std::size_t lo = b * kReduceBlock;
        const std::size_t hi = std::min(n, lo + kReduceBlock);
        double* acc = partial.data() + b * dim;
        for (std::size_t i = lo; i < hi; ++i) {
            for (std::size_t k = 0; k < dim; ++k) acc[k] += rows[i * dim + k];
        }
    });
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t k = 0; k < dim; ++k) out[k] += partial[b * dim + k];
    }
    for (auto& v : out) v /= static_cast<double>(n);
}

double blocked_sum(Backend backend, std::span<const double> values) {
    const std::size_t n = values.size();
    const std::size_t blocks = block_count(n);
    std::vector<double> partial(blocks, 0.0);
    for_each_index(backend, blocks, [&](std::size_t b) {
        const std::size_t hi = std::min(n, (b + 1) * kReduceBlock);
        double acc = 0.0;
        for (std::size_t i = b * kReduceBlock; i < hi; ++i) acc += values[i];
        partial[b] = acc;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

ExpMoments exp_moments(Backend backend, std::span<const double> values, double theta) {
    if (values.empty()) throw std::invalid_argument("exp_moments: empty input");
    ExpMoments m;
    m.count = values.size();
    m.shift = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(m.shift)) throw std::domain_error("exp_moments: non-finite input");
    const std::size_t blocks = block_count(values.size());
    std::vector<double> partial(2 * blocks, 0.0);
    for_each_index(backend, blocks, [&](std::size_t b) {
        const std::size_t hi = std::min(values.size(), (b + 1) * kReduceBlock);
        double s1 = 0.0;
        double s2 = 0.0;
        for (std::size_t i = b * kReduceBlock; i < hi; ++i) {
            const double e = std::exp(theta * (values[i] - m.shift));
            s1 += e;
            s2 += e * e;
        }
        partial[2 * b] = s1;
        partial[2 * b + 1] = s2;
    });
    for (std::size_t b = 0; b < blocks; ++b) {
        m.sum += partial[2 * b];
        m.sum_sq += partial[2 * b + 1];
    }
    return m;
}

void legendre_pass(Backend backend, std::span<const double> in, const std::vector<std::size_t>& in_shape,
                   std::size_t axis, const Axis& z_axis, const Axis& q_axis, std::span<double> out,
                   std::span<std::size_t> argmax) {
    if (axis >= in_shape.size() || in_shape[axis] != z_axis.points) {
        throw std::invalid_argument("legendre_pass: axis does not match input shape");
    }
    std::size_t inner = 1;
    for (std::size_t k = axis + 1; k < in_shape.size(); ++k) inner *= in_shape[k];
    std::size_t outer = 1;
    for (std::size_t k = 0; k < axis; ++k) outer *= in_shape[k];
    const std::size_t nz = z_axis.points;
    const std::size_t nq = q_axis.points;
    if (out.size() != outer * nq * inner || argmax.size() != out.size()) {
        throw std::invalid_argument("legendre_pass: output size mismatch");
    }
    std::vector<double> z(nz);
    for (std::size_t i = 0; i < nz; ++i) z[i] = z_axis.coord(i);
    const double neg_inf = -std::numeric_limits<double>::infinity();

    // one line = fixed (outer, inner) pair
    for_each_index(backend, outer * inner, [&](std::size_t line) {
        const std::size_t o = line / inner;
        const std::size_t r = line % inner;
        const double* src = in.data() + o * nz * inner + r;
        double* dst = out.data() + o * nq * inner + r;
        std::size_t* arg = argmax.data() + o * nq * inner + r;
        for (std::size_t j = 0; j < nq; ++j) {
            const double q = q_axis.coord(j);
            double best = neg_inf;
            std::size_t best_i = 0;
            for (std::size_t i = 0; i < nz; ++i) {
                const double v = q * z[i] + src[i * inner];
                if (v > best) {
                    best = v;
                    best_i = i;
                }
            }
            dst[j * inner] = best;
            arg[j * inner] = best_i;
        }
    });
}

void pasch_hausdorff(Backend backend, const UniformGrid& grid, std::span<const double> values, double slope,
                     std::span<double> out) {
    const std::size_t n = grid.size();
    const std::size_t d = grid.dim();
    std::vector<double> pts(n * d);
    for (std::size_t i = 0; i < n; ++i) grid.point(i, std::span<double>(pts.data() + i * d, d));
    for_each_index(backend, n, [&](std::size_t i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            double dist2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = pts[i * d + k] - pts[j * d + k];
                dist2 += diff * diff;
            }
            best = std::min(best, values[j] + slope * std::sqrt(dist2));
        }
        out[i] = best;
    });
}

}  // namespace mkv::kernels
