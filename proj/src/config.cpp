#include "mkvrisk/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace mkv {

std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::gibbs: return "gibbs";
        case ExperimentKind::fw: return "fw";
        case ExperimentKind::vanish: return "vanish";
        case ExperimentKind::chaos: return "chaos";
        case ExperimentKind::pl: return "pl";
    }
    return "?";
}

std::optional<ExperimentKind> parse_experiment_kind(std::string_view name) {
    for (auto k : {ExperimentKind::gibbs, ExperimentKind::fw, ExperimentKind::vanish, ExperimentKind::chaos,
                   ExperimentKind::pl}) {
        if (to_string(k) == name) return k;
    }
    return std::nullopt;
}

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
    std::string out = "invalid configuration:";
    for (const auto& l : lines) out += "\n  " + l;
    return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::runtime_error(join_lines(diagnostics)), diagnostics_(std::move(diagnostics)) {}

ControlField ControlTemplateSpec::build(std::size_t noise_dim, std::size_t state_dim, double start) const {
    switch (mode) {
        case ControlMode::feedback_affine: return ControlField::feedback_affine(cells, noise_dim, state_dim, start);
        case ControlMode::feedback_radial: {
            std::vector<std::vector<double>> c;
            for (double v : radial_centers) c.push_back(std::vector<double>(state_dim, v));
            return ControlField::feedback_radial(cells, noise_dim, std::move(c), radial_width, start);
        }
        default: return ControlField::open_loop(cells, noise_dim, start);
    }
}

double ExperimentConfig::tolerance(const std::string& name, double fallback) const {
    auto it = tolerances.find(name);
    return it == tolerances.end() ? fallback : it->second;
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

struct Entry {
    std::string value;
    std::size_t line = 0;
};

using Section = std::map<std::string, Entry>;

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys{
        {"dynamics",
         {"drift", "alpha", "beta", "gamma", "poly", "poly_bound", "sigma", "state_dim", "noise_dim", "diffusion",
          "amplitude", "x_slope", "mean_slope", "lipschitz", "ellipticity", "init", "x0", "init_sd", "atoms",
          "balanced"}},
        {"cost",
         {"kind", "scale", "exponent", "radius", "time_factors", "table", "offset_constant", "offset_x",
          "offset_mean", "offset_bound", "offset_sign"}},
        {"terminal",
         {"kind", "value", "coeffs", "clip", "center", "weight", "floor", "amplitude", "slope", "offset",
          "mean_coeff", "shift"}},
        {"run",
         {"experiment", "label", "seed", "start", "steps", "particles", "particle_scale", "flow_particles", "ladder",
          "particle_counts", "reference_particles", "replicates", "out", "control", "control_cells",
          "radial_centers", "radial_width", "opt_particles", "starts", "iterations", "fd_step", "start_spread",
          "restarts", "max_evaluations", "restart_spread", "polish", "truncation", "lsmc", "basis", "degree",
          "centers", "ridge", "reference", "lambdas", "triples", "rho_triples", "pl_width_min", "pl_width_max",
          "pl_center_spread", "pl_probes"}},
    };
    return keys;
}

const std::set<std::string>& known_tolerances() {
    static const std::set<std::string> t{"primal",   "dual",      "lsmc",      "certificate", "final_gap",
                                         "flow",     "inversion", "slope_min", "slope_max",   "pl_slack",
                                         "rho_slack"};
    return t;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.push_back({});
    return out;
}

class Resolver {
public:
    Resolver(const std::string& source, std::map<std::string, Section>& sections, std::vector<std::string>& diags)
        : source_(source), sections_(sections), diags_(diags) {}

    const Entry* find(const std::string& sec, const std::string& key) const {
        auto s = sections_.find(sec);
        if (s == sections_.end()) return nullptr;
        auto e = s->second.find(key);
        return e == s->second.end() ? nullptr : &e->second;
    }
    bool has(const std::string& sec, const std::string& key) const { return find(sec, key) != nullptr; }

    void error(const Entry* e, const std::string& sec, const std::string& key, const std::string& msg) {
        const std::string where = e ? source_ + ":" + std::to_string(e->line) : source_;
        diags_.push_back(where + ": [" + sec + "] " + key + ": " + msg);
    }

    static std::optional<double> to_double(const std::string& s) {
        if (s.empty()) return std::nullopt;
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
        return v;
    }

    double real(const std::string& sec, const std::string& key, double fallback,
                const std::function<bool(double)>& ok = {}, const char* rule = nullptr) {
        const Entry* e = find(sec, key);
        if (!e) return fallback;
        auto v = to_double(e->value);
        if (!v) {
            error(e, sec, key, "malformed number '" + e->value + "'");
            return fallback;
        }
        if (ok && !ok(*v)) {
            error(e, sec, key, std::string("must be ") + rule);
            return fallback;
        }
        return *v;
    }

    std::size_t count(const std::string& sec, const std::string& key, std::size_t fallback, std::size_t min = 0) {
        const Entry* e = find(sec, key);
        if (!e) return fallback;
        auto v = to_double(e->value);
        if (!v || *v < 0.0 || std::floor(*v) != *v || *v > 1e15) {
            error(e, sec, key, "expected a non-negative integer, got '" + e->value + "'");
            return fallback;
        }
        if (*v < static_cast<double>(min)) {
            error(e, sec, key, "must be at least " + std::to_string(min));
            return fallback;
        }
        return static_cast<std::size_t>(*v);
    }

    bool flag(const std::string& sec, const std::string& key, bool fallback) {
        const Entry* e = find(sec, key);
        if (!e) return fallback;
        if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
        if (e->value == "false" || e->value == "0" || e->value == "no") return false;
        error(e, sec, key, "expected true or false, got '" + e->value + "'");
        return fallback;
    }

    std::vector<double> reals(const std::string& sec, const std::string& key, std::vector<double> fallback) {
        const Entry* e = find(sec, key);
        if (!e) return fallback;
        std::vector<double> out;
        for (const auto& item : split(e->value, ',')) {
            auto v = to_double(item);
            if (!v) {
                error(e, sec, key, "malformed number '" + item + "' in list");
                return fallback;
            }
            out.push_back(*v);
        }
        if (out.empty()) {
            error(e, sec, key, "empty list");
            return fallback;
        }
        return out;
    }

    std::string word(const std::string& sec, const std::string& key, const std::string& fallback,
                     std::initializer_list<const char*> allowed) {
        const Entry* e = find(sec, key);
        if (!e) return fallback;
        std::string list;
        for (const char* a : allowed) {
            if (e->value == a) return e->value;
            list += list.empty() ? a : std::string(" | ") + a;
        }
        error(e, sec, key, "unknown entry '" + e->value + "' (expected " + list + ")");
        return fallback;
    }

    std::string text(const std::string& sec, const std::string& key, const std::string& fallback) {
        const Entry* e = find(sec, key);
        return e ? e->value : fallback;
    }

    void require_increasing(const std::string& sec, const std::string& key, const std::vector<double>& v) {
        for (std::size_t i = 1; i < v.size(); ++i) {
            if (!(v[i] > v[i - 1])) {
                error(find(sec, key), sec, key, "must be strictly increasing");
                return;
            }
        }
    }

private:
    const std::string& source_;
    std::map<std::string, Section>& sections_;
    std::vector<std::string>& diags_;
};

bool positive(double v) { return v > 0.0; }
bool non_negative(double v) { return v >= 0.0; }

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t s) {
    seed = s;
    std::istringstream is(canonical);
    std::string line, rebuilt;
    bool replaced = false;
    while (std::getline(is, line)) {
        if (line.rfind("run.seed = ", 0) == 0) {
            line = "run.seed = " + std::to_string(s);
            replaced = true;
        }
        rebuilt += line + "\n";
    }
    if (!replaced) rebuilt += "run.seed = " + std::to_string(s) + "\n";
    canonical = rebuilt;
    hash = fnv1a(canonical);
}

ExperimentConfig parse_config(std::string_view text, const std::string& source,
                              const std::filesystem::path& base_dir) {
    std::vector<std::string> diags;
    std::map<std::string, Section> sections;
    const auto& keys = known_keys();

    std::string current;
    std::istringstream is{std::string(text)};
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        const auto hash_at = raw.find('#');
        std::string line = trim(hash_at == std::string::npos ? raw : raw.substr(0, hash_at));
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') {
                diags.push_back(where + "malformed section header '" + line + "'");
                continue;
            }
            current = trim(line.substr(1, line.size() - 2));
            if (!keys.count(current)) {
                diags.push_back(where + "unknown section [" + current + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            diags.push_back(where + "expected 'key = value', got '" + line + "'");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (current.empty()) {
            diags.push_back(where + "key '" + key + "' outside any section");
            continue;
        }
        if (!keys.count(current)) continue;
        const bool tol = current == "run" && key.rfind("tol_", 0) == 0;
        if (tol ? !known_tolerances().count(key.substr(4)) : !keys.at(current).count(key)) {
            diags.push_back(where + "unknown key '" + key + "' in [" + current + "]");
            continue;
        }
        if (value.empty()) {
            diags.push_back(where + "[" + current + "] " + key + ": missing value");
            continue;
        }
        auto& sec = sections[current];
        if (sec.count(key)) {
            diags.push_back(where + "duplicate key '" + key + "' (first on line " +
                            std::to_string(sec[key].line) + ")");
            continue;
        }
        sec[key] = Entry{value, lineno};
    }

    Resolver r(source, sections, diags);
    ExperimentConfig cfg;

    // [run]
    if (r.has("run", "experiment")) {
        const auto* e = r.find("run", "experiment");
        cfg.kind = parse_experiment_kind(e->value);
        if (!cfg.kind) r.error(e, "run", "experiment", "unknown experiment '" + e->value + "'");
    }
    cfg.label = r.text("run", "label", "");
    if (const auto* e = r.find("run", "seed")) {
        std::uint64_t s = 0;
        const auto res = std::from_chars(e->value.data(), e->value.data() + e->value.size(), s);
        if (res.ec != std::errc() || res.ptr != e->value.data() + e->value.size()) {
            r.error(e, "run", "seed", "expected an unsigned 64-bit integer, got '" + e->value + "'");
        }
        cfg.seed = s;
    } else {
        diags.push_back(source + ": [run] seed: required (runs must be reproducible)");
    }
    cfg.start = r.real("run", "start", 0.0, [](double v) { return v >= 0.0 && v < 1.0; }, "in [0, 1)");
    cfg.steps = r.count("run", "steps", 512, 1);
    cfg.particles = r.count("run", "particles", 200000, 2);
    cfg.particle_scale = r.count("run", "particle_scale", 10000);
    cfg.flow_particles = r.count("run", "flow_particles", 100, kMinFlowParticles);
    cfg.ladder = r.reals("run", "ladder", cfg.ladder);
    r.require_increasing("run", "ladder", cfg.ladder);
    for (double n : cfg.ladder) {
        if (!(n >= 1.0)) {
            r.error(r.find("run", "ladder"), "run", "ladder", "entries must be >= 1");
            break;
        }
    }
    {
        const auto counts = r.reals("run", "particle_counts", {100, 1000, 10000});
        r.require_increasing("run", "particle_counts", counts);
        cfg.particle_counts.clear();
        for (double c : counts) {
            if (c < 2.0 || std::floor(c) != c) {
                r.error(r.find("run", "particle_counts"), "run", "particle_counts", "entries must be integers >= 2");
                cfg.particle_counts = {100, 1000, 10000};
                break;
            }
            cfg.particle_counts.push_back(static_cast<std::size_t>(c));
        }
    }
    cfg.reference_particles = r.count("run", "reference_particles", 100000, 2);
    if (cfg.kind == ExperimentKind::chaos && !cfg.particle_counts.empty() &&
        cfg.reference_particles <= cfg.particle_counts.back()) {
        r.error(r.find("run", "reference_particles"), "run", "reference_particles",
                "must exceed the largest particle count");
    }
    cfg.replicates = r.count("run", "replicates", 1, 1);
    cfg.out = r.text("run", "out", "");

    const std::string control = r.word("run", "control", "open_loop", {"open_loop", "feedback_affine", "feedback_radial"});
    cfg.control.mode = control == "feedback_affine"   ? ControlMode::feedback_affine
                       : control == "feedback_radial" ? ControlMode::feedback_radial
                                                      : ControlMode::open_loop;
    cfg.control.cells = r.count("run", "control_cells", 20, 1);
    cfg.control.radial_centers = r.reals("run", "radial_centers", cfg.control.radial_centers);
    cfg.control.radial_width = r.real("run", "radial_width", 1.0, positive, "positive");

    cfg.dual.opt_particles = r.count("run", "opt_particles", 4096, 2);
    cfg.dual.particles = cfg.particles;
    cfg.dual.starts = r.count("run", "starts", 5, 1);
    cfg.dual.iterations = r.count("run", "iterations", 30, 1);
    cfg.dual.fd_step = r.real("run", "fd_step", 1e-3, positive, "positive");
    cfg.dual.start_spread = r.real("run", "start_spread", 0.5, non_negative, "non-negative");

    cfg.action.restarts = r.count("run", "restarts", 5, 1);
    cfg.action.max_evaluations = r.count("run", "max_evaluations", 20000, 1);
    cfg.action.spread = r.real("run", "restart_spread", 1.0, non_negative, "non-negative");
    cfg.action.polish = r.flag("run", "polish", true);

    cfg.truncation = r.real("run", "truncation", 8.0, positive, "positive");
    cfg.lsmc = r.flag("run", "lsmc", true);
    cfg.basis.family = r.word("run", "basis", "polynomial", {"polynomial", "radial"}) == "radial"
                           ? BasisFamily::radial
                           : BasisFamily::polynomial;
    cfg.basis.degree = r.count("run", "degree", 3);
    cfg.basis.centers = r.count("run", "centers", 8);
    cfg.basis.ridge = r.real("run", "ridge", 1e-8, non_negative, "non-negative");
    try {
        cfg.basis.validate();
    } catch (const std::exception& ex) {
        diags.push_back(source + ": [run] basis: " + ex.what());
    }

    if (const auto* e = r.find("run", "reference")) {
        if (e->value == "gaussian") {
            cfg.reference_mode = ReferenceMode::gaussian;
        } else if (e->value == "none") {
            cfg.reference_mode = ReferenceMode::none;
        } else if (auto v = Resolver::to_double(e->value)) {
            cfg.reference_mode = ReferenceMode::value;
            cfg.reference_value = *v;
        } else {
            r.error(e, "run", "reference", "expected a number, 'gaussian' or 'none'");
        }
    }

    cfg.bumps.lambdas = r.reals("run", "lambdas", cfg.bumps.lambdas);
    for (double l : cfg.bumps.lambdas) {
        if (!(l > 0.0 && l < 1.0)) {
            r.error(r.find("run", "lambdas"), "run", "lambdas", "entries must lie in (0, 1)");
            break;
        }
    }
    cfg.bumps.triples = r.count("run", "triples", 100, 1);
    cfg.bumps.rho_triples = r.count("run", "rho_triples", 20);
    cfg.bumps.width_min = r.real("run", "pl_width_min", 0.25, positive, "positive");
    cfg.bumps.width_max = r.real("run", "pl_width_max", 2.0, positive, "positive");
    if (cfg.bumps.width_max < cfg.bumps.width_min) {
        r.error(r.find("run", "pl_width_max"), "run", "pl_width_max", "must be >= pl_width_min");
    }
    cfg.bumps.center_spread = r.real("run", "pl_center_spread", 1.5, non_negative, "non-negative");
    cfg.bumps.probes = r.count("run", "pl_probes", 64, 1);

    if (auto s = sections.find("run"); s != sections.end()) {
        for (const auto& [key, entry] : s->second) {
            if (key.rfind("tol_", 0) != 0) continue;
            auto v = Resolver::to_double(entry.value);
            if (!v) {
                r.error(&entry, "run", key, "malformed number '" + entry.value + "'");
                continue;
            }
            cfg.tolerances[key.substr(4)] = *v;
        }
    }

    // [dynamics]
    auto& c = cfg.coeffs;
    c.state_dim = r.count("dynamics", "state_dim", 1, 1);
    c.noise_dim = r.count("dynamics", "noise_dim", c.state_dim, 1);
    if (c.state_dim > kMaxStateDim || c.noise_dim > kMaxStateDim) {
        diags.push_back(source + ": [dynamics] dimensions must lie in 1.." + std::to_string(kMaxStateDim));
        c.state_dim = std::min(c.state_dim, kMaxStateDim);
        c.noise_dim = std::min(c.noise_dim, kMaxStateDim);
    }
    const std::string drift = r.word("dynamics", "drift", "zero", {"zero", "linear", "polynomial"});
    c.drift.kind = drift == "linear"       ? DriftKind::linear
                   : drift == "polynomial" ? DriftKind::clipped_polynomial
                                           : DriftKind::zero;
    c.drift.alpha.values = r.reals("dynamics", "alpha", {0.0});
    c.drift.beta.values = r.reals("dynamics", "beta", {0.0});
    c.drift.gamma.values = r.reals("dynamics", "gamma", {0.0});
    c.drift.poly = r.reals("dynamics", "poly", {0.0});
    c.drift.poly_bound = r.real("dynamics", "poly_bound", 1.0, positive, "positive");
    for (const char* k : {"alpha", "beta", "gamma"}) {
        if (r.has("dynamics", k) && c.drift.kind != DriftKind::linear) {
            r.error(r.find("dynamics", k), "dynamics", k, "only used by drift = linear");
        }
    }
    if (r.has("dynamics", "poly") && c.drift.kind != DriftKind::clipped_polynomial) {
        r.error(r.find("dynamics", "poly"), "dynamics", "poly", "only used by drift = polynomial");
    }
    {
        std::vector<double> id(c.state_dim * c.noise_dim, 0.0);
        for (std::size_t i = 0; i < std::min(c.state_dim, c.noise_dim); ++i) id[i * c.noise_dim + i] = 1.0;
        auto sig = r.reals("dynamics", "sigma", id);
        if (sig.size() == 1 && id.size() > 1) {
            for (auto& v : id) v *= sig[0];
            sig = id;
        }
        if (sig.size() != id.size()) {
            r.error(r.find("dynamics", "sigma"), "dynamics", "sigma",
                    "expected 1 or state_dim * noise_dim = " + std::to_string(id.size()) + " entries");
            sig = id;
        }
        c.diffusion.matrix = sig;
    }
    c.diffusion.kind = r.word("dynamics", "diffusion", "constant", {"constant", "modulated"}) == "modulated"
                           ? DiffusionKind::modulated
                           : DiffusionKind::constant;
    c.diffusion.amplitude = r.real("dynamics", "amplitude", 0.0,
                                   [](double v) { return v >= 0.0 && v < 1.0; }, "in [0, 1)");
    c.diffusion.x_slope = r.real("dynamics", "x_slope", 0.0);
    c.diffusion.mean_slope = r.real("dynamics", "mean_slope", 0.0);
    c.lipschitz = r.real("dynamics", "lipschitz", 1.0, non_negative, "non-negative");
    c.ellipticity = r.real("dynamics", "ellipticity", 0.0, non_negative, "non-negative");
    if (c.ellipticity > 0.0) {
        try {
            check_ellipticity(c);
        } catch (const EllipticityError& ex) {
            r.error(r.find("dynamics", "ellipticity"), "dynamics", "ellipticity", ex.what());
        }
    }

    const std::string init = r.word("dynamics", "init", "point", {"point", "gaussian", "atoms"});
    const auto x0 = r.reals("dynamics", "x0", std::vector<double>(c.state_dim, 0.0));
    if (x0.size() != c.state_dim) {
        r.error(r.find("dynamics", "x0"), "dynamics", "x0", "expected state_dim entries");
    }
    if (init == "gaussian") {
        const auto sd = r.reals("dynamics", "init_sd", std::vector<double>(c.state_dim, 1.0));
        if (sd.size() != x0.size() || std::any_of(sd.begin(), sd.end(), [](double v) { return v < 0.0; })) {
            r.error(r.find("dynamics", "init_sd"), "dynamics", "init_sd",
                    "expected state_dim non-negative entries");
        } else {
            cfg.init = InitialCondition::gaussian(x0, sd);
        }
    } else if (init == "atoms") {
        const auto* e = r.find("dynamics", "atoms");
        std::vector<std::vector<double>> atoms;
        if (!e) {
            diags.push_back(source + ": [dynamics] atoms: required when init = atoms");
        } else {
            for (const auto& chunk : split(e->value, ';')) {
                std::vector<double> a;
                for (const auto& item : split(chunk, ',')) {
                    if (auto v = Resolver::to_double(item)) a.push_back(*v);
                }
                if (a.size() != c.state_dim) {
                    r.error(e, "dynamics", "atoms", "atom '" + chunk + "' must have state_dim coordinates");
                    atoms.clear();
                    break;
                }
                atoms.push_back(a);
            }
            if (!atoms.empty()) {
                cfg.init = InitialCondition::uniform_atoms(atoms, r.flag("dynamics", "balanced", true));
            }
        }
    } else if (x0.size() == c.state_dim) {
        cfg.init = InitialCondition::point(x0);
    }
    if (init != "gaussian" && r.has("dynamics", "init_sd")) {
        r.error(r.find("dynamics", "init_sd"), "dynamics", "init_sd", "only used by init = gaussian");
    }
    if (init != "atoms" && r.has("dynamics", "atoms")) {
        r.error(r.find("dynamics", "atoms"), "dynamics", "atoms", "only used by init = atoms");
    }
    try {
        c.validate();
    } catch (const std::exception& ex) {
        diags.push_back(source + ": [dynamics] " + ex.what());
    }

    // [cost]
    {
        const std::string kind =
            r.word("cost", "kind", "quadratic", {"quadratic", "power", "truncated", "restricted", "grid"});
        const double scale = r.real("cost", "scale", 1.0, positive, "positive");
        const double p = r.real("cost", "exponent", 2.0, [](double v) { return v > 1.0; }, "> 1");
        const double radius = r.real("cost", "radius", 1.0, positive, "positive");
        try {
            if (kind == "quadratic") {
                cfg.cost = CostFunction::quadratic(scale);
            } else if (kind == "power") {
                cfg.cost = CostFunction::power(p, scale);
            } else if (kind == "truncated") {
                cfg.cost = CostFunction::truncated(p, scale, radius);
            } else if (kind == "restricted") {
                cfg.cost = CostFunction::restricted(p, scale, radius);
            } else {
                const auto* e = r.find("cost", "table");
                if (!e) {
                    diags.push_back(source + ": [cost] table: required when kind = grid");
                } else {
                    const auto path = base_dir / e->value;
                    std::ifstream in(path);
                    if (!in) {
                        r.error(e, "cost", "table", "cannot open '" + path.string() + "'");
                    } else {
                        cfg.cost = CostFunction::grid(read_grid_csv(in));
                    }
                }
            }
            if (r.has("cost", "time_factors")) {
                cfg.cost = cfg.cost.with_time_factors(r.reals("cost", "time_factors", {1.0}));
            }
            if (r.has("cost", "offset_constant") || r.has("cost", "offset_x") || r.has("cost", "offset_mean")) {
                OffsetTerm off;
                off.constant = r.real("cost", "offset_constant", 0.0);
                if (r.has("cost", "offset_x")) off.x_weights = r.reals("cost", "offset_x", {});
                if (r.has("cost", "offset_mean")) off.mean_weights = r.reals("cost", "offset_mean", {});
                off.bound = r.real("cost", "offset_bound", 1.0, positive, "positive");
                cfg.cost = cfg.cost.with_offset(off, r.real("cost", "offset_sign", 1.0));
            }
        } catch (const std::exception& ex) {
            diags.push_back(source + ": [cost] " + ex.what());
        }
    }

    // [terminal]
    {
        const std::string kind =
            r.word("terminal", "kind", "constant", {"constant", "polynomial", "neg_sq_dist", "tanh"});
        const std::map<std::string, std::string> owner{
            {"value", "constant"}, {"coeffs", "polynomial"}, {"clip", "polynomial"}, {"center", "neg_sq_dist"},
            {"weight", "neg_sq_dist"}, {"floor", "neg_sq_dist"}, {"amplitude", "tanh"}, {"slope", "tanh"},
            {"offset", "tanh"}};
        for (const auto& [key, k] : owner) {
            if (k != kind && r.has("terminal", key)) {
                r.error(r.find("terminal", key), "terminal", key, "only used by kind = " + k);
            }
        }
        try {
            if (kind == "constant") {
                cfg.terminal = TerminalFunctional::constant(r.real("terminal", "value", 0.0));
            } else if (kind == "polynomial") {
                cfg.terminal = TerminalFunctional::polynomial(r.reals("terminal", "coeffs", {0.0, 1.0}),
                                                              r.real("terminal", "clip", 1e6, positive, "positive"));
            } else if (kind == "neg_sq_dist") {
                cfg.terminal = TerminalFunctional::neg_sq_dist(
                    r.reals("terminal", "center", std::vector<double>(c.state_dim, 0.0)),
                    r.real("terminal", "weight", 1.0, positive, "positive"));
                if (r.has("terminal", "floor")) cfg.terminal = cfg.terminal.with_floor(r.real("terminal", "floor", 0.0));
            } else {
                cfg.terminal = TerminalFunctional::tanh(r.real("terminal", "amplitude", 1.0),
                                                        r.real("terminal", "slope", 1.0),
                                                        r.real("terminal", "offset", 0.0));
            }
            const double mc = r.real("terminal", "mean_coeff", 0.0);
            if (mc != 0.0) cfg.terminal = cfg.terminal.with_mean_term(mc);
            const double shift = r.real("terminal", "shift", 0.0);
            if (shift != 0.0) cfg.terminal = cfg.terminal.plus(shift);
        } catch (const std::exception& ex) {
            diags.push_back(source + ": [terminal] " + ex.what());
        }
    }

    if (!diags.empty()) throw ConfigError(std::move(diags));

    std::vector<std::string> lines;
    for (const auto& [sec, entries] : sections) {
        for (const auto& [key, entry] : entries) lines.push_back(sec + "." + key + " = " + entry.value);
    }
    std::sort(lines.begin(), lines.end());
    for (const auto& l : lines) cfg.canonical += l + "\n";
    cfg.hash = fnv1a(cfg.canonical);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError({path.string() + ": cannot open file"});
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string(), path.parent_path());
}

}  // namespace mkv
