#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mkvrisk/convex.hpp"
#include "mkvrisk/deterministic.hpp"
#include "mkvrisk/particles.hpp"
#include "mkvrisk/rho.hpp"
#include "mkvrisk/terminal.hpp"

namespace mkv {

enum class ExperimentKind { gibbs, fw, vanish, chaos, pl };

std::string to_string(ExperimentKind kind);
std::optional<ExperimentKind> parse_experiment_kind(std::string_view name);

/// Itemized configuration problems, one "source:line: message" entry each.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> diagnostics);
    const std::vector<std::string>& diagnostics() const { return diagnostics_; }

private:
    std::vector<std::string> diagnostics_;
};

struct ControlTemplateSpec {
    ControlMode mode = ControlMode::open_loop;
    std::size_t cells = 20;
    std::vector<double> radial_centers{-2.0, -1.0, 0.0, 1.0, 2.0};
    double radial_width = 1.0;

    ControlField build(std::size_t noise_dim, std::size_t state_dim, double start) const;
};

enum class ReferenceMode { none, value, gaussian };

struct BumpFamily {
    std::vector<double> lambdas{0.25, 0.5, 0.75};
    std::size_t triples = 100;
    std::size_t rho_triples = 20;
    double width_min = 0.25;
    double width_max = 2.0;
    double center_spread = 1.5;  // centers drawn in mean +- spread * sd
    std::size_t probes = 64;
};

struct ExperimentConfig {
    std::optional<ExperimentKind> kind;
    std::string label;
    std::uint64_t seed = 0;

    CoefficientSet coeffs;
    InitialCondition init = InitialCondition::point({0.0});
    CostFunction cost = CostFunction::quadratic();
    TerminalFunctional terminal = TerminalFunctional::constant(0.0);

    double start = 0.0;
    std::size_t steps = 512;
    std::size_t particles = 200000;
    std::size_t particle_scale = 10000;  // N(n) = max(particles, particle_scale * n)
    std::size_t flow_particles = 100;
    std::vector<double> ladder{1, 2, 4, 8, 16, 32};
    std::vector<std::size_t> particle_counts{100, 1000, 10000};
    std::size_t reference_particles = 100000;
    std::size_t replicates = 1;

    ControlTemplateSpec control;
    DualBudget dual;
    ActionBudget action;
    RegressionBasisSpec basis;
    double truncation = 8.0;
    bool lsmc = true;
    ReferenceMode reference_mode = ReferenceMode::none;
    double reference_value = 0.0;
    BumpFamily bumps;

    std::string out;
    std::map<std::string, double> tolerances;  // tol_* keys without the prefix

    /// Sorted "section.key = value" lines as written, seed included.
    std::string canonical;
    std::uint64_t hash = 0;

    TimeGrid grid() const { return TimeGrid(start, steps); }
    double tolerance(const std::string& name, double fallback) const;
    void set_seed(std::uint64_t s);
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text);

ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>",
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace mkv
