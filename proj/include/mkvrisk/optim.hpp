#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mkv {

using Objective = std::function<double(std::span<const double>)>;
/// Called after every iteration with (iteration, best value so far).
using TraceHook = std::function<void(std::size_t, double)>;

struct OptimResult {
    std::vector<double> x;
    double value = 0.0;
    std::size_t evaluations = 0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Adaptive-coefficient Nelder-Mead; non-finite objective values count as -inf.
struct NelderMeadOptions {
    std::size_t max_evaluations = 20000;
    double initial_step = 0.5;
    double tolerance = 1e-12;
};

OptimResult nelder_mead_maximize(const Objective& f, std::vector<double> x0, const NelderMeadOptions& options = {},
                                 const TraceHook& trace = {});

/// BFGS ascent on central finite-difference gradients with backtracking.
struct GradientAscentOptions {
    std::size_t max_iterations = 40;
    double fd_step = 1e-3;
    double gradient_tolerance = 1e-7;
    double value_tolerance = 1e-12;
};

OptimResult bfgs_maximize(const Objective& f, std::vector<double> x0, const GradientAscentOptions& options = {},
                          const TraceHook& trace = {});

}  // namespace mkv
