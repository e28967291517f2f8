#include "mkvrisk/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mkvrisk/rng.hpp"
#include "mkvrisk/version.hpp"

namespace mkv {

using nlohmann::ordered_json;

Check Check::at_most(std::string name, double observed, double limit) {
    return Check{std::move(name), observed, limit, "<=", observed <= limit};
}

Check Check::at_least(std::string name, double observed, double limit) {
    return Check{std::move(name), observed, limit, ">=", observed >= limit};
}

std::string hex_hash(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentReport::ExperimentReport(const ExperimentConfig& cfg)
    : kind(cfg.kind.value_or(ExperimentKind::gibbs)), label(cfg.label), config_hash(cfg.hash), seed(cfg.seed) {}

ordered_json& ExperimentReport::add_row(ordered_json row) {
    row["config_hash"] = hex_hash(config_hash);
    row["seed"] = seed;
    for (const auto& [key, _] : row.items()) {
        if (std::find(schema.begin(), schema.end(), key) == schema.end()) schema.push_back(key);
    }
    rows.push_back(std::move(row));
    return rows.back();
}

double ExperimentReport::tol(const ExperimentConfig& cfg, const std::string& name, double fallback) {
    const double v = cfg.tolerance(name, fallback);
    tolerances[name] = v;
    return v;
}

bool ExperimentReport::pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

namespace {

ordered_json number(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

}  // namespace

ordered_json ExperimentReport::to_json() const {
    ordered_json j;
    j["experiment"] = to_string(kind);
    j["label"] = label;
    j["version"] = kVersion;
    j["modules"] = {{"convex_toolkit", kVersion},
                    {"particle_engine", kVersion},
                    {"rho_functional", kVersion},
                    {"deterministic_limit", kVersion},
                    {"experiments_cli", kVersion}};
    j["config_hash"] = hex_hash(config_hash);
    j["seed"] = seed;
    j["tolerances"] = ordered_json::object();
    for (const auto& [k, v] : tolerances) j["tolerances"][k] = v;
    j["schema"] = schema;
    j["rows"] = rows;
    j["checks"] = ordered_json::array();
    for (const auto& c : checks) {
        j["checks"].push_back({{"name", c.name},
                               {"observed", number(c.observed)},
                               {"limit", number(c.limit)},
                               {"relation", c.relation},
                               {"pass", c.pass}});
    }
    j["artifacts"] = ordered_json::array();
    for (const auto& a : artifacts) j["artifacts"].push_back(a.name);
    j["pass"] = pass();
    return j;
}

namespace {

std::string csv_cell(const ordered_json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    }
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_float()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
        return buf;
    }
    return v.dump();
}

}  // namespace

std::string ExperimentReport::to_csv() const {
    std::ostringstream os;
    os << "# experiment=" << to_string(kind) << " version=" << kVersion << " config_hash=" << hex_hash(config_hash)
       << " seed=" << seed << " pass=" << (pass() ? "true" : "false") << "\n";
    os << "# schema:";
    for (std::size_t i = 0; i < schema.size(); ++i) os << (i ? "," : "") << schema[i];
    os << "\n";
    for (const auto& c : checks) {
        os << "# check " << c.name << ": " << csv_cell(number(c.observed)) << " " << c.relation << " "
           << csv_cell(number(c.limit)) << " -> " << (c.pass ? "pass" : "fail") << "\n";
    }
    for (std::size_t i = 0; i < schema.size(); ++i) os << (i ? "," : "") << schema[i];
    os << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < schema.size(); ++i) {
            if (i) os << ",";
            if (row.contains(schema[i])) os << csv_cell(row.at(schema[i]));
        }
        os << "\n";
    }
    return os.str();
}

std::filesystem::path ExperimentReport::write(const std::filesystem::path& dir, ReportFormat format) const {
    std::filesystem::create_directories(dir);
    const auto path = dir / (to_string(kind) + (format == ReportFormat::json ? "_report.json" : "_report.csv"));
    {
        std::ofstream os(path, std::ios::binary);
        if (format == ReportFormat::json) {
            os << to_json().dump(2) << "\n";
        } else {
            os << to_csv();
        }
        if (!os) throw std::runtime_error("cannot write " + path.string());
    }
    for (const auto& a : artifacts) {
        std::ofstream os(dir / a.name, std::ios::binary);
        os << a.content;
        if (!os) throw std::runtime_error("cannot write " + (dir / a.name).string());
    }
    return path;
}

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError({message});
}

bool plain_quadratic(const CostFunction& g) {
    return g.kind() == CostKind::quadratic && !g.offset() && g.time_factors().empty();
}

long ladder_index(double n) {
    require(n >= 1.0 && std::floor(n) == n, "[run] ladder: noise indices must be integers >= 1 for this experiment");
    return static_cast<long>(n);
}

ControlField build_template(const ExperimentConfig& cfg) {
    return cfg.control.build(cfg.coeffs.noise_dim, cfg.coeffs.state_dim, cfg.start);
}

std::string field_csv(const ControlField& field) {
    std::ostringstream os;
    os << "cell,time";
    const std::size_t k = field.params_per_cell();
    for (std::size_t j = 0; j < k; ++j) os << ",p_" << (j + 1);
    os << "\n";
    const double h = (1.0 - field.start()) / static_cast<double>(field.cells());
    char buf[32];
    for (std::size_t c = 0; c < field.cells(); ++c) {
        os << c << ",";
        std::snprintf(buf, sizeof buf, "%.17g", field.start() + h * static_cast<double>(c));
        os << buf;
        for (std::size_t j = 0; j < k; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", field.params()[c * k + j]);
            os << "," << buf;
        }
        os << "\n";
    }
    return os.str();
}

std::string trace_csv(const std::vector<TracePoint>& trace) {
    std::ostringstream os;
    os << "start,iteration,objective\n";
    char buf[32];
    for (const auto& t : trace) {
        std::snprintf(buf, sizeof buf, "%.17g", t.objective);
        os << t.start << "," << t.iteration << "," << buf << "\n";
    }
    return os.str();
}

ordered_json estimate_row(const std::string& method, const RhoEstimate& e) {
    return ordered_json{{"method", method},
                        {"value", e.value},
                        {"half_width", e.half_width},
                        {"samples", e.samples},
                        {"lower_bound", e.lower_bound}};
}

/// Checks that a gap sequence shrinks: at most `allowed` increases, each within `ci_multiple`
/// combined half widths.
void trend_checks(ExperimentReport& rep, const std::vector<double>& gaps, const std::vector<double>& hws,
                  double ci_multiple, double allowed) {
    double increases = 0.0;
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < gaps.size(); ++i) {
        if (gaps[i + 1] > gaps[i]) increases += 1.0;
        worst = std::max(worst, gaps[i + 1] - gaps[i] - ci_multiple * std::hypot(hws[i], hws[i + 1]));
    }
    if (gaps.size() < 2) worst = 0.0;
    if (allowed >= 0.0) rep.add_check(Check::at_most("gap_increases", increases, allowed));
    rep.add_check(Check::at_most("gap_increase_beyond_ci", worst, 0.0));
}

}  // namespace

double gaussian_reference(const ExperimentConfig& cfg) {
    const auto& c = cfg.coeffs;
    std::vector<std::string> why;
    if (c.state_dim != 1 || c.noise_dim != 1) why.push_back("[dynamics] state_dim/noise_dim must be 1");
    if (c.drift.kind == DriftKind::clipped_polynomial) why.push_back("[dynamics] drift must be zero or linear");
    for (const auto* t : {&c.drift.alpha, &c.drift.beta, &c.drift.gamma}) {
        if (std::adjacent_find(t->values.begin(), t->values.end(), std::not_equal_to<>()) != t->values.end()) {
            why.push_back("[dynamics] alpha/beta/gamma must be constant in time");
            break;
        }
    }
    if (c.diffusion.kind != DiffusionKind::constant) why.push_back("[dynamics] diffusion must be constant");
    if (cfg.init.kind == InitKind::atoms) why.push_back("[dynamics] init must be point or gaussian");
    if (!plain_quadratic(cfg.cost)) why.push_back("[cost] kind must be a plain quadratic");
    const double x0 = 0.0;
    const std::vector<double> z{0.0};
    auto F = [&](double x, double m) { return cfg.terminal(std::span<const double>(&x, 1), std::span<const double>(&m, 1)); };
    const double c0 = F(x0, 0.0);
    const double c1 = F(1.0, 0.0) - c0;
    const double mc = F(0.0, 1.0) - c0;
    for (double x : {-2.0, -0.5, 2.0, 3.0}) {
        if (std::abs(F(x, 0.0) - (c0 + c1 * x)) > 1e-12 * (1.0 + std::abs(x))) {
            why.push_back("[terminal] must be affine in x for the Gaussian reference");
            break;
        }
    }
    if (!why.empty()) {
        for (auto& w : why) w = "reference = gaussian: " + w;
        throw ConfigError(why);
    }
    const bool linear = c.drift.kind == DriftKind::linear;
    const double alpha = linear ? c.drift.alpha.values[0] : 0.0;
    const double beta = linear ? c.drift.beta.values[0] : 0.0;
    const double gamma = linear ? c.drift.gamma.values[0] : 0.0;
    const double sigma = c.diffusion.matrix[0];
    const double T = 1.0 - cfg.start;
    const double m0 = cfg.init.location[0];
    const double v0 = cfg.init.kind == InitKind::gaussian ? cfg.init.stddev[0] * cfg.init.stddev[0] : 0.0;
    const double k = beta + gamma;
    // m' = alpha + k m, v' = 2 beta v + sigma^2 / n with n = 1
    const double m = k == 0.0 ? m0 + alpha * T : m0 * std::exp(k * T) + alpha * std::expm1(k * T) / k;
    const double v = beta == 0.0 ? v0 + sigma * sigma * T
                                 : v0 * std::exp(2 * beta * T) + sigma * sigma * std::expm1(2 * beta * T) / (2 * beta);
    const double theta = 1.0 / cfg.cost.scale();
    return c0 + (c1 + mc) * m + theta * c1 * c1 * v / 2.0;
}

ExperimentReport run_gibbs_check(const ExperimentConfig& cfg) {
    require(plain_quadratic(cfg.cost), "[cost] kind: the gibbs check needs a plain quadratic cost");
    ExperimentReport rep(cfg);
    const double tol_primal = rep.tol(cfg, "primal", 2e-2);
    const double tol_dual = rep.tol(cfg, "dual", 2e-2);
    const double tol_lsmc = rep.tol(cfg, "lsmc", 2e-2);
    const double certificate = rep.tol(cfg, "certificate", 3.0);

    std::optional<double> reference;
    if (cfg.reference_mode == ReferenceMode::value) reference = cfg.reference_value;
    if (cfg.reference_mode == ReferenceMode::gaussian) reference = gaussian_reference(cfg);

    const auto coeffs = cfg.coeffs.with_noise_index(1);
    const auto grid = cfg.grid();
    DualBudget budget = cfg.dual;
    budget.particles = cfg.particles;
    const auto report = dual_gap_report(cfg.terminal, coeffs, grid, cfg.init, cfg.cost, build_template(cfg),
                                        cfg.particles, budget, derive_seed(cfg.seed, 1));

    auto with_ref = [&](ordered_json row, double value) {
        row["reference"] = reference ? ordered_json(*reference) : ordered_json();
        row["gap_to_reference"] = reference ? ordered_json(value - *reference) : ordered_json();
        row["gap_to_primal"] = value - report.primal.value;
        return row;
    };
    rep.add_row(with_ref(estimate_row("primal", report.primal), report.primal.value));
    auto dual_row = with_ref(estimate_row("dual", report.dual.estimate), report.dual.estimate.value);
    dual_row["train_objective"] = report.dual.train_objective;
    dual_row["feasible_starts"] = report.dual.feasible_starts;
    dual_row["combined_half_width"] = report.combined_half_width;
    rep.add_row(dual_row);

    if (reference) {
        rep.add_check(Check::at_most("primal_vs_reference", std::abs(report.primal.value - *reference), tol_primal));
        rep.add_check(Check::at_most("dual_vs_reference", std::abs(report.dual.estimate.value - *reference), tol_dual));
    }
    rep.add_check(Check::at_most("dual_vs_primal", std::abs(report.gap), tol_dual));
    rep.add_check(Check::at_most("dual_certificate", report.dual.estimate.value - report.primal.value,
                                 certificate * report.combined_half_width));

    if (cfg.lsmc) {
        const auto generator = truncate_closed_form(cfg.cost, cfg.truncation).primal;
        const auto est = bsde_lsmc(cfg.terminal, coeffs, grid, cfg.init, generator, cfg.basis, cfg.particles,
                                   derive_seed(cfg.seed, 2));
        auto row = with_ref(estimate_row("lsmc", est), est.value);
        row["truncation"] = cfg.truncation;
        row["residual"] = est.residual;
        rep.add_row(row);
        const double target = reference.value_or(report.primal.value);
        rep.add_check(Check::at_most(reference ? "lsmc_vs_reference" : "lsmc_vs_primal", std::abs(est.value - target),
                                     tol_lsmc));
    }
    rep.artifacts.push_back({"gibbs_dual_control.csv", field_csv(report.dual.control)});
    rep.artifacts.push_back({"gibbs_dual_trace.csv", trace_csv(report.dual.trace)});
    return rep;
}

ExperimentReport run_fw_sweep(const ExperimentConfig& cfg) {
    require(cfg.cost.kind() == CostKind::quadratic && !cfg.cost.offset(),
            "[cost] kind: the fw sweep needs a quadratic cost");
    require(cfg.init.kind == InitKind::point, "[dynamics] init: the fw sweep needs a point initial condition");
    ExperimentReport rep(cfg);
    const double tol_final = rep.tol(cfg, "final_gap", 4e-2);
    const double inversion = rep.tol(cfg, "inversion", 1.0);
    const auto grid = cfg.grid();

    const auto det = maximize_action(cfg.coeffs, grid, cfg.init.location, cfg.terminal, cfg.cost,
                                     cfg.control.cells, cfg.action, derive_seed(cfg.seed, 2));
    const double reference = det.value.total;
    rep.add_row({{"method", "deterministic"},
                 {"n", nullptr},
                 {"particles", nullptr},
                 {"value", reference},
                 {"half_width", 0.0},
                 {"reference", reference},
                 {"gap", 0.0},
                 {"restart_spread", det.restart_spread}});

    std::vector<double> gaps, hws;
    for (std::size_t i = 0; i < cfg.ladder.size(); ++i) {
        const long n = ladder_index(cfg.ladder[i]);
        const std::size_t N = std::max(cfg.particles, cfg.particle_scale * static_cast<std::size_t>(n));
        const auto coeffs = cfg.coeffs.with_noise_index(n);
        const auto ens = simulate_mckv(coeffs, grid, cfg.init, N, nullptr, derive_seed(cfg.seed, 10 + i));
        const auto values = terminal_values(cfg.terminal, ens);
        const auto est = log_mean_exp(values, static_cast<double>(n) / cfg.cost.scale());
        const double gap = std::abs(est.value - reference);
        gaps.push_back(gap);
        hws.push_back(est.half_width);
        rep.add_row({{"method", "log_mean_exp"},
                     {"n", n},
                     {"particles", N},
                     {"value", est.value},
                     {"half_width", est.half_width},
                     {"reference", reference},
                     {"gap", gap},
                     {"restart_spread", nullptr}});
    }
    trend_checks(rep, gaps, hws, inversion, 1.0);
    rep.add_check(Check::at_most("final_gap", gaps.back(), tol_final));

    const auto path = integrate_ode(cfg.coeffs, grid, cfg.init.location, det.control);
    std::ostringstream c, p;
    write_control_csv(c, det.control);
    write_path_csv(p, path);
    rep.artifacts.push_back({"fw_control.csv", c.str()});
    rep.artifacts.push_back({"fw_path.csv", p.str()});
    return rep;
}

ExperimentReport run_vanish_sweep(const ExperimentConfig& cfg) {
    require(cfg.coeffs.diffusion.kind == DiffusionKind::constant,
            "[dynamics] diffusion: the vanish sweep needs a constant diffusion");
    require(cfg.cost.closed_form() && cfg.cost.time_factors().empty() && !cfg.cost.offset(),
            "[cost] kind: the vanish sweep needs a radial closed-form cost without time factors or offset");
    ExperimentReport rep(cfg);
    const double tol_final = rep.tol(cfg, "final_gap", 5e-2);
    const double inversion = rep.tol(cfg, "inversion", 2.0);
    const auto grid = cfg.grid();
    const auto tmpl = build_template(cfg);

    double reference = 0.0;
    const bool point = cfg.init.kind == InitKind::point;
    if (point) {
        const auto det = maximize_action(cfg.coeffs, grid, cfg.init.location, cfg.terminal, cfg.cost,
                                         cfg.control.cells, cfg.action, derive_seed(cfg.seed, 2));
        reference = det.value.total;
        rep.add_row({{"method", "deterministic"}, {"value", reference}, {"reference", reference}, {"gap", 0.0}});
        std::ostringstream c, p;
        write_control_csv(c, det.control);
        write_path_csv(p, integrate_ode(cfg.coeffs, grid, cfg.init.location, det.control));
        rep.artifacts.push_back({"vanish_control.csv", c.str()});
        rep.artifacts.push_back({"vanish_path.csv", p.str()});
    } else {
        require(tmpl.is_feedback(), "[run] control: random initial laws need a feedback template");
        const auto flow = flow_value_random_init(cfg.coeffs, grid, cfg.init, cfg.terminal, cfg.cost, tmpl,
                                                 cfg.flow_particles, cfg.action, derive_seed(cfg.seed, 3));
        reference = flow.value;
        rep.add_row({{"method", "flow"},
                     {"value", flow.value},
                     {"reference", reference},
                     {"gap", 0.0},
                     {"particles", cfg.flow_particles}});
        rep.artifacts.push_back({"vanish_flow_control.csv", field_csv(flow.field)});
        if (cfg.init.kind == InitKind::atoms && !cfg.coeffs.measure_dependent()) {
            const double tol_flow = rep.tol(cfg, "flow", 5e-2);
            double avg = 0.0;
            for (std::size_t a = 0; a < cfg.init.atoms.size(); ++a) {
                const auto det = maximize_action(cfg.coeffs, grid, cfg.init.atoms[a], cfg.terminal, cfg.cost,
                                                 cfg.control.cells, cfg.action, derive_seed(cfg.seed, 4, a));
                avg += det.value.total;
                rep.add_row({{"method", "atom_" + std::to_string(a)}, {"value", det.value.total}});
            }
            avg /= static_cast<double>(cfg.init.atoms.size());
            rep.add_row({{"method", "per_point_average"}, {"value", avg}, {"reference", reference},
                         {"gap", std::abs(flow.value - avg)}});
            rep.add_check(Check::at_most("flow_vs_per_point_average", std::abs(flow.value - avg), tol_flow));
        }
    }

    std::vector<double> gaps, hws;
    for (std::size_t i = 0; i < cfg.ladder.size(); ++i) {
        const long n = ladder_index(cfg.ladder[i]);
        const std::size_t N = std::max(cfg.particles, cfg.particle_scale * static_cast<std::size_t>(n));
        const auto coeffs = cfg.coeffs.with_noise_index(n);
        const auto gn = viscosity_scale(cfg.cost, n);
        DualBudget budget = cfg.dual;
        budget.particles = N;
        const auto dual = rho_dual_lower(cfg.terminal, coeffs, grid, cfg.init, gn, tmpl, budget,
                                         derive_seed(cfg.seed, 20 + i));
        const double gap = std::abs(dual.estimate.value - reference);
        gaps.push_back(gap);
        hws.push_back(dual.estimate.half_width);
        auto row = estimate_row("dual", dual.estimate);
        row["n"] = n;
        row["particles"] = N;
        row["reference"] = reference;
        row["gap"] = gap;
        row["train_objective"] = dual.train_objective;
        row["feasible_starts"] = dual.feasible_starts;
        rep.add_row(row);
        rep.artifacts.push_back({"vanish_dual_control_n" + std::to_string(n) + ".csv", field_csv(dual.control)});
        rep.artifacts.push_back({"vanish_dual_trace_n" + std::to_string(n) + ".csv", trace_csv(dual.trace)});

        if (cfg.lsmc) {
            const auto generator = truncate_closed_form(gn, cfg.truncation).primal;
            try {
                const auto est = bsde_lsmc(cfg.terminal, coeffs, grid, cfg.init, generator, cfg.basis, N,
                                           derive_seed(cfg.seed, 40 + i));
                auto lrow = estimate_row("lsmc", est);
                lrow["n"] = n;
                lrow["particles"] = N;
                lrow["reference"] = reference;
                lrow["gap"] = std::abs(est.value - reference);
                lrow["truncation"] = cfg.truncation;
                lrow["residual"] = est.residual;
                rep.add_row(lrow);
            } catch (const RegressionError& e) {
                rep.add_row({{"method", "lsmc"}, {"n", n}, {"error", e.what()}});
            }
        }
    }
    trend_checks(rep, gaps, hws, inversion, -1.0);
    rep.add_check(Check::at_most("final_gap", gaps.back(), tol_final));
    return rep;
}

ExperimentReport run_chaos_sweep(const ExperimentConfig& cfg) {
    ExperimentReport rep(cfg);
    const double slope_min = rep.tol(cfg, "slope_min", -0.7);
    const double slope_max = rep.tol(cfg, "slope_max", -0.3);
    const auto report = chaos_report(cfg.coeffs, cfg.grid(), cfg.init, cfg.particle_counts, cfg.reference_particles,
                                     derive_seed(cfg.seed, 1), cfg.replicates);
    for (const auto& r : report.rows) {
        rep.add_row({{"particles", r.particles},
                     {"reference_particles", report.reference_particles},
                     {"replicates", cfg.replicates},
                     {"distance", r.distance}});
    }
    rep.add_check(Check::at_least("strictly_decreasing", report.strictly_decreasing || report.all_zero ? 1.0 : 0.0,
                                  1.0));
    if (!report.all_zero) {
        const double s = report.slope.value_or(std::numeric_limits<double>::quiet_NaN());
        rep.add_check(Check::at_least("slope_lower", s, slope_min));
        rep.add_check(Check::at_most("slope_upper", s, slope_max));
    }
    return rep;
}

double bump_integral(std::span<const double> sample, double a, double c) {
    if (sample.empty()) throw std::invalid_argument("bump_integral: empty sample");
    double acc = 0.0;
    for (double x : sample) acc += std::exp(-a * (x - c) * (x - c));
    return acc / static_cast<double>(sample.size());
}

double pl_relative_slack(std::span<const double> sample, double a, double c1, double c2, double c3, double lambda) {
    const double i1 = bump_integral(sample, a, c1);
    const double i2 = bump_integral(sample, a, c2);
    const double i3 = bump_integral(sample, a, c3);
    const double rhs = std::pow(i1, 1.0 - lambda) * std::pow(i2, lambda);
    return (i3 - rhs) / rhs;
}

ExperimentReport run_pl_check(const ExperimentConfig& cfg) {
    const auto& c = cfg.coeffs;
    require(c.state_dim == 1 && c.noise_dim == 1, "[dynamics] state_dim: the pl check is one-dimensional");
    require(c.drift.kind != DriftKind::clipped_polynomial, "[dynamics] drift: the pl check needs a linear drift");
    require(c.diffusion.kind == DiffusionKind::constant && c.diffusion.matrix[0] != 0.0,
            "[dynamics] sigma: the pl check needs a constant non-zero diffusion");
    require(plain_quadratic(cfg.cost), "[cost] kind: the pl check needs a plain quadratic cost");
    ExperimentReport rep(cfg);
    const double tol_slack = rep.tol(cfg, "pl_slack", -1e-6);
    const double tol_rho = rep.tol(cfg, "rho_slack", -1e-6);

    const auto coeffs = c.with_noise_index(1);
    const auto ens = simulate_mckv(coeffs, cfg.grid(), cfg.init, cfg.particles, nullptr, derive_seed(cfg.seed, 1));
    const auto sample = ens.final_states();
    double mean = 0.0, var = 0.0;
    for (double x : sample) mean += x;
    mean /= static_cast<double>(sample.size());
    for (double x : sample) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(sample.size() - 1));
    const double theta = 1.0 / cfg.cost.scale();
    const auto& b = cfg.bumps;

    const CounterRng rng{derive_seed(cfg.seed, 2)};
    double worst = std::numeric_limits<double>::infinity();
    double worst_rho = std::numeric_limits<double>::infinity();
    std::size_t rejected = 0, draw = 0, rho_done = 0;
    std::vector<double> u(4), probe(2), logv(sample.size());
    for (std::size_t li = 0; li < b.lambdas.size(); ++li) {
        const double lambda = b.lambdas[li];
        for (std::size_t t = 0; t < b.triples; ++t) {
            double a = 0.0, c1 = 0.0, c2 = 0.0, c3 = 0.0;
            for (;;) {
                rng.uniforms(draw++, li, StreamTag::experiment, u);
                a = b.width_min + (b.width_max - b.width_min) * u[0];
                c1 = mean + b.center_spread * sd * (2.0 * u[1] - 1.0);
                c2 = mean + b.center_spread * sd * (2.0 * u[2] - 1.0);
                c3 = (1.0 - lambda) * c1 + lambda * c2;
                // pointwise condition l3((1-l) x + l y) >= l1(x)^(1-l) l2(y)^l on random probes
                bool admissible = true;
                for (std::size_t p = 0; p < b.probes && admissible; ++p) {
                    rng.normals(draw, 1000 + p, StreamTag::probe, probe);
                    const double x = mean + 3.0 * sd * probe[0];
                    const double y = mean + 3.0 * sd * probe[1];
                    const double z = (1.0 - lambda) * x + lambda * y;
                    const double lhs = -a * (z - c3) * (z - c3);
                    const double rhs = -(1.0 - lambda) * a * (x - c1) * (x - c1) - lambda * a * (y - c2) * (y - c2);
                    admissible = lhs >= rhs - 1e-12 * (1.0 + std::abs(rhs));
                }
                if (admissible) break;
                ++rejected;
            }
            const double i1 = bump_integral(sample, a, c1);
            const double i2 = bump_integral(sample, a, c2);
            const double i3 = bump_integral(sample, a, c3);
            const double rhs = std::pow(i1, 1.0 - lambda) * std::pow(i2, lambda);
            const double slack = (i3 - rhs) / rhs;
            worst = std::min(worst, slack);
            ordered_json row{{"form", "integral"}, {"lambda", lambda}, {"width", a}, {"c1", c1}, {"c2", c2},
                             {"c3", c3},          {"lhs", i3},        {"rhs", rhs}, {"slack", slack}};
            if (t < b.rho_triples) {
                // rho^g(log l) with quadratic g: (1/theta) log mean exp(theta log l)
                double r[3];
                const double cs[3] = {c1, c2, c3};
                for (int k = 0; k < 3; ++k) {
                    for (std::size_t j = 0; j < sample.size(); ++j) {
                        logv[j] = -a * (sample[j] - cs[k]) * (sample[j] - cs[k]);
                    }
                    r[k] = log_mean_exp(logv, theta).value;
                }
                const double rho_slack = r[2] - ((1.0 - lambda) * r[0] + lambda * r[1]);
                worst_rho = std::min(worst_rho, rho_slack);
                row["rho_lhs"] = r[2];
                row["rho_rhs"] = (1.0 - lambda) * r[0] + lambda * r[1];
                row["rho_slack"] = rho_slack;
                ++rho_done;
            }
            rep.add_row(row);
        }
    }
    rep.add_row({{"form", "summary"},
                 {"particles", sample.size()},
                 {"sample_mean", mean},
                 {"sample_sd", sd},
                 {"rejected", rejected},
                 {"rho_triples", rho_done}});
    rep.add_check(Check::at_least("min_relative_slack", worst, tol_slack));
    if (rho_done > 0) rep.add_check(Check::at_least("min_rho_slack", worst_rho, tol_rho));
    return rep;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    require(cfg.kind.has_value(), "[run] experiment: missing");
    switch (*cfg.kind) {
        case ExperimentKind::gibbs: return run_gibbs_check(cfg);
        case ExperimentKind::fw: return run_fw_sweep(cfg);
        case ExperimentKind::vanish: return run_vanish_sweep(cfg);
        case ExperimentKind::chaos: return run_chaos_sweep(cfg);
        case ExperimentKind::pl: return run_pl_check(cfg);
    }
    throw ConfigError({"[run] experiment: unknown"});
}

}  // namespace mkv
