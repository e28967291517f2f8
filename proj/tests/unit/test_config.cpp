#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mkvrisk/config.hpp"
#include "mkvrisk/experiments.hpp"

using namespace mkv;

namespace {

const char* kMinimal = R"(
[run]
experiment = gibbs
seed = 11
)";

std::vector<std::string> diagnostics_of(const std::string& text) {
    try {
        parse_config(text, "cfg");
    } catch (const ConfigError& e) {
        return e.diagnostics();
    }
    return {};
}

bool mentions(const std::vector<std::string>& d, const std::string& needle) {
    for (const auto& s : d) {
        if (s.find(needle) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("minimal config resolves documented defaults") {
    const auto cfg = parse_config(kMinimal);
    REQUIRE(cfg.kind);
    CHECK(*cfg.kind == ExperimentKind::gibbs);
    CHECK(cfg.seed == 11);
    CHECK(cfg.steps == 512);
    CHECK(cfg.particles == 200000);
    CHECK(cfg.dual.particles == 200000);
    CHECK(cfg.control.cells == 20);
    CHECK(cfg.truncation == 8.0);
    CHECK(cfg.cost.kind() == CostKind::quadratic);
    CHECK(cfg.terminal.is_constant());
    CHECK(cfg.coeffs.drift.kind == DriftKind::zero);
    CHECK(cfg.coeffs.diffusion.matrix == std::vector<double>{1.0});
    CHECK(cfg.init.kind == InitKind::point);
    CHECK(cfg.ladder == std::vector<double>{1, 2, 4, 8, 16, 32});
}

TEST_CASE("seed is required") {
    const auto d = diagnostics_of("[run]\nexperiment = fw\n");
    REQUIRE(d.size() == 1);
    CHECK(mentions(d, "seed"));
}

TEST_CASE("ladder must increase") {
    const auto d = diagnostics_of("[run]\nexperiment = fw\nseed = 1\nladder = 4, 2\n");
    REQUIRE(d.size() == 1);
    CHECK(mentions(d, "cfg:4"));
    CHECK(mentions(d, "strictly increasing"));
    CHECK(diagnostics_of("[run]\nseed = 1\nparticle_counts = 100, 100\n").size() == 1);
}

TEST_CASE("diagnostics are itemized with line numbers") {
    const std::string text =
        "[dynamics]\n"
        "sigma = one\n"        // line 2
        "wobble = 3\n"         // line 3
        "[cost]\n"
        "kind = cubic\n"       // line 5
        "[extra]\n"            // line 6
        "[run]\n"
        "seed = 5\n"
        "steps = 2.5\n"        // line 9
        "seed = 6\n"           // line 10
        "ladder = 1, x\n"      // line 11
        "tol_bogus = 1\n"      // line 12
        "orphan\n";            // line 13
    const auto d = diagnostics_of(text);
    CHECK(d.size() == 9);
    CHECK(mentions(d, "cfg:2: [dynamics] sigma: malformed number"));
    CHECK(mentions(d, "cfg:3: unknown key 'wobble'"));
    CHECK(mentions(d, "cfg:5: [cost] kind: unknown entry 'cubic'"));
    CHECK(mentions(d, "cfg:6: unknown section [extra]"));
    CHECK(mentions(d, "cfg:9: [run] steps"));
    CHECK(mentions(d, "cfg:10: duplicate key 'seed' (first on line 8)"));
    CHECK(mentions(d, "cfg:11: [run] ladder: malformed number 'x'"));
    CHECK(mentions(d, "cfg:12: unknown key 'tol_bogus'"));
    CHECK(mentions(d, "cfg:13: expected 'key = value'"));
}

TEST_CASE("catalog cross-field rules") {
    CHECK(mentions(diagnostics_of("[dynamics]\nalpha = 1\n[run]\nseed = 1\n"), "only used by drift = linear"));
    CHECK(mentions(diagnostics_of("[dynamics]\ninit = atoms\n[run]\nseed = 1\n"), "atoms: required"));
    CHECK(mentions(diagnostics_of("[dynamics]\nsigma = 0.5\nellipticity = 1\n[run]\nseed = 1\n"), "ellipticity"));
    CHECK(mentions(diagnostics_of("[cost]\nkind = grid\n[run]\nseed = 1\n"), "table: required"));
    CHECK(mentions(diagnostics_of("[terminal]\nkind = constant\nfloor = 1\n[run]\nseed = 1\n"), "[terminal]"));
    CHECK(mentions(diagnostics_of("[run]\nseed = 1\nexperiment = chaos\nparticle_counts = 10, 100\n"
                                  "reference_particles = 100\n"),
                   "must exceed"));
    CHECK(mentions(diagnostics_of("[run]\nseed = -3\n"), "unsigned 64-bit"));
}

TEST_CASE("dynamics, cost and terminal entries are built") {
    const auto cfg = parse_config(R"(
[dynamics]
state_dim = 2
drift = linear
alpha = 0.1
beta = -1, -0.5
gamma = 0.5
sigma = 0.5
init = atoms
atoms = -1, 0; 1, 2   # two atoms in the plane
[cost]
kind = power
exponent = 3
scale = 2
time_factors = 1, 2
[terminal]
kind = neg_sq_dist
center = 1, 1
weight = 2
mean_coeff = 0.5
shift = -1
[run]
seed = 18446744073709551615
)");
    CHECK(cfg.seed == 18446744073709551615ULL);
    CHECK(cfg.coeffs.state_dim == 2);
    CHECK(cfg.coeffs.noise_dim == 2);
    CHECK(cfg.coeffs.diffusion.matrix == std::vector<double>{0.5, 0.0, 0.0, 0.5});
    CHECK(cfg.coeffs.drift.beta.values == std::vector<double>{-1, -0.5});
    CHECK(cfg.init.kind == InitKind::atoms);
    REQUIRE(cfg.init.atoms.size() == 2);
    CHECK(cfg.init.atoms[1] == std::vector<double>{1, 2});
    CHECK(cfg.cost.kind() == CostKind::power);
    CHECK(cfg.cost.exponent() == 3.0);
    CHECK(cfg.cost.time_factor(0.75) == 2.0);
    const std::vector<double> x{1.0, 0.0}, m{2.0, 0.0};
    CHECK(cfg.terminal(x, m) == doctest::Approx(-2.0 + 1.0 - 1.0));
}

TEST_CASE("grid cost tables are read relative to the config file") {
    const auto dir = std::filesystem::temp_directory_path() / "mkvrisk_cfg_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream t(dir / "cost.csv");
        t << "z,value\n-1,0.5\n0,0\n1,0.5\n";
        std::ofstream c(dir / "exp.ini");
        c << "[cost]\nkind = grid\ntable = cost.csv\n[run]\nseed = 3\n";
    }
    const auto cfg = load_config(dir / "exp.ini");
    CHECK(cfg.cost.kind() == CostKind::grid);
    CHECK(cfg.cost(0.5) == doctest::Approx(0.25));
    CHECK_THROWS_AS(load_config(dir / "missing.ini"), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("hash follows content, not layout") {
    const auto a = parse_config("[run]\nseed = 4\nsteps = 64\n[dynamics]\nsigma = 2\n");
    const auto b = parse_config("# comment\n[dynamics]\n  sigma=2  \n\n[run]\nsteps = 64\nseed = 4\n");
    const auto c = parse_config("[run]\nseed = 4\nsteps = 65\n[dynamics]\nsigma = 2\n");
    CHECK(a.canonical == b.canonical);
    CHECK(a.hash == b.hash);
    CHECK(a.hash != c.hash);
    CHECK(a.hash == fnv1a(a.canonical));

    auto d = parse_config("[run]\nseed = 9\nsteps = 64\n[dynamics]\nsigma = 2\n");
    CHECK(d.hash != a.hash);
    d.set_seed(4);
    CHECK(d.seed == 4);
    CHECK(d.hash == a.hash);
}

TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("tolerance keys override experiment defaults") {
    const auto cfg = parse_config("[run]\nseed = 1\ntol_final_gap = 0.01\n");
    CHECK(cfg.tolerance("final_gap", 0.05) == 0.01);
    CHECK(cfg.tolerance("flow", 0.05) == 0.05);
}

TEST_CASE("gaussian reference against moment oracles") {
    auto cfg = parse_config("[terminal]\nkind = polynomial\ncoeffs = 0, 1\n[run]\nseed = 1\n");
    CHECK(gaussian_reference(cfg) == doctest::Approx(0.5).epsilon(1e-14));

    cfg = parse_config("[dynamics]\ndrift = linear\nbeta = -1\nx0 = 1\n[terminal]\nkind = polynomial\n"
                       "coeffs = 0, 1\n[run]\nseed = 1\n");
    CHECK(gaussian_reference(cfg) == doctest::Approx(std::exp(-1.0) + (1.0 - std::exp(-2.0)) / 4.0).epsilon(1e-14));

    // scale 2 halves the variance term; mean term and shift enter linearly
    cfg = parse_config("[dynamics]\ndrift = linear\nalpha = 1\ninit = gaussian\nx0 = 0\ninit_sd = 1\n"
                       "[cost]\nscale = 2\n[terminal]\nkind = polynomial\ncoeffs = 1, 2\nmean_coeff = 3\n"
                       "shift = 0.5\n[run]\nseed = 1\n");
    // m = 1, v = 2, F = 1 + 2x + 3m + 0.5 -> 1 + 2 + 3 + 0.5 + (1/2) * 4 * 2 / 2
    CHECK(gaussian_reference(cfg) == doctest::Approx(8.5).epsilon(1e-14));

    cfg = parse_config("[terminal]\nkind = tanh\n[run]\nseed = 1\n");
    CHECK_THROWS_AS(gaussian_reference(cfg), ConfigError);
}
