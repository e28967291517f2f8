#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mkvrisk/config.hpp"

namespace mkv {

/// A pass/fail verdict: pass == (observed <relation> limit).
struct Check {
    std::string name;
    double observed = 0.0;
    double limit = 0.0;
    std::string relation;  // "<=" or ">="
    bool pass = false;

    static Check at_most(std::string name, double observed, double limit);
    static Check at_least(std::string name, double observed, double limit);
};

struct Artifact {
    std::string name;  // file name inside the output directory
    std::string content;
};

enum class ReportFormat { json, csv };

struct ExperimentReport {
    ExperimentKind kind = ExperimentKind::gibbs;
    std::string label;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::map<std::string, double> tolerances;  // effective values, defaults resolved
    std::vector<std::string> schema;           // row columns in order
    std::vector<nlohmann::ordered_json> rows;
    std::vector<Check> checks;
    std::vector<Artifact> artifacts;

    explicit ExperimentReport(const ExperimentConfig& cfg);

    /// Appends a row; config hash and seed are added to it.
    nlohmann::ordered_json& add_row(nlohmann::ordered_json row);
    void add_check(Check c) { checks.push_back(std::move(c)); }
    double tol(const ExperimentConfig& cfg, const std::string& name, double fallback);

    bool pass() const;
    nlohmann::ordered_json to_json() const;
    /// Header comments (experiment, hash, seed, schema), then one line per row.
    std::string to_csv() const;
    /// Writes the report and its artifacts into `dir`; returns the report path.
    std::filesystem::path write(const std::filesystem::path& dir, ReportFormat format) const;
};

std::string hex_hash(std::uint64_t h);

/// Primal log-mean-exp, dual lower bound and lsmc at the configured truncation (quadratic cost).
ExperimentReport run_gibbs_check(const ExperimentConfig& cfg);
/// (1/n) log-mean-exp of nF along the ladder against the deterministic action maximum.
ExperimentReport run_fw_sweep(const ExperimentConfig& cfg);
/// Dual rho with the viscosity-scaled cost along the ladder against the deterministic value.
ExperimentReport run_vanish_sweep(const ExperimentConfig& cfg);
ExperimentReport run_chaos_sweep(const ExperimentConfig& cfg);
/// Gaussian-bump inequality on a shared particle sample at t = 1.
ExperimentReport run_pl_check(const ExperimentConfig& cfg);
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Exact log rho for F = c0 + c1 x + mean_coeff * mean + shift under linear Gaussian dynamics with
/// constant coefficients and quadratic cost; throws ConfigError when the instance is outside that class.
double gaussian_reference(const ExperimentConfig& cfg);

/// mean over the sample of exp(-a (x - c)^2).
double bump_integral(std::span<const double> sample, double a, double c);

/// (I3 - I1^{1-l} I2^l) / (I1^{1-l} I2^l) for bumps of common width a.
double pl_relative_slack(std::span<const double> sample, double a, double c1, double c2, double c3, double lambda);

}  // namespace mkv
