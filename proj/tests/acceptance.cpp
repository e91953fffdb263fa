/// Acceptance run: one PASS, FAIL or SKIP line per criterion, exit status 1
/// when any criterion fails.

#include "mortens/eval.hpp"
#include "mortens/io.hpp"
#include "mortens/pipeline.hpp"

#include "test_util.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

using namespace mortens;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    enum Kind { pass, fail, skip } kind = pass;
    std::string detail;
};

Outcome check(bool ok, std::string detail) {
    return {ok ? Outcome::pass : Outcome::fail, std::move(detail)};
}

std::vector<ModelId> first_models(int n) { return {kAllModels.begin(), kAllModels.begin() + n}; }

// ---------------------------------------------------------------- 1

Eigen::VectorXd permutation_oracle(const CoalitionGame &g) {
    const int n = g.n_players();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(n);
    double count = 0;
    do {
        std::uint32_t mask = 0;
        for (int p : order) {
            const std::uint32_t next = mask | (1u << p);
            phi(p) += g(next) - g(mask);
            mask = next;
        }
        ++count;
    } while (std::next_permutation(order.begin(), order.end()));
    return phi / count;
}

CoalitionGame random_game(int n, std::mt19937_64 &rng) {
    std::normal_distribution<double> n01;
    return CoalitionGame::tabulate(first_models(n), [&](std::uint32_t) { return n01(rng); });
}

std::uint32_t swap_bits(std::uint32_t s, int i, int j) {
    const bool bi = s >> i & 1u;
    const bool bj = s >> j & 1u;
    if (bi != bj) {
        s ^= (1u << i) | (1u << j);
    }
    return s;
}

Outcome criterion_shapley() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    int games = 0;
    for (int g = 0; g < 200; ++g) {
        const int n = 2 + g % 7;
        const CoalitionGame game = random_game(n, rng);
        const Eigen::VectorXd phi = shapley_values(game);
        const std::uint32_t full = (1u << n) - 1;
        worst = std::max(worst, (phi - permutation_oracle(game)).cwiseAbs().maxCoeff());
        worst = std::max(worst, std::abs(phi.sum() - game(full)));

        // Symmetry: average the game with its i<->j relabelling.
        std::uniform_int_distribution<int> pick(0, n - 1);
        const int i = pick(rng);
        const int j = (i + 1 + pick(rng) % (n - 1)) % n;
        CoalitionGame sym = game;
        for (std::uint32_t s = 0; s <= full; ++s) {
            sym.value[s] = 0.5 * (game(s) + game(swap_bits(s, i, j)));
        }
        const Eigen::VectorXd phi_sym = shapley_values(sym);
        worst = std::max(worst, std::abs(phi_sym(i) - phi_sym(j)));

        // Dummy: player i adds nothing to any coalition.
        CoalitionGame dummy = game;
        for (std::uint32_t s = 0; s <= full; ++s) {
            if (s >> i & 1u) {
                dummy.value[s] = dummy.value[s & ~(1u << i)];
            }
        }
        worst = std::max(worst, std::abs(shapley_values(dummy)(i)));

        // Additivity.
        const CoalitionGame other = random_game(n, rng);
        CoalitionGame sum = game;
        for (std::uint32_t s = 0; s <= full; ++s) {
            sum.value[s] += other.value[s];
        }
        worst = std::max(worst,
                         (shapley_values(sum) - phi - shapley_values(other)).cwiseAbs().maxCoeff());
        ++games;
    }

    // Full 15-model game built from a forecast panel, checked on 8-player restrictions.
    const ForecastPanel panel = testutil::random_panel(15, 2, 6, 99);
    const CoalitionGame big = build_game(panel, 0);
    const Eigen::VectorXd phi15 = shapley_values(big);
    worst = std::max(worst, std::abs(phi15.sum() - big((1u << 15) - 1)));
    double worst_restricted = 0.0;
    std::vector<int> players(15);
    std::iota(players.begin(), players.end(), 0);
    for (int r = 0; r < 5; ++r) {
        std::shuffle(players.begin(), players.end(), rng);
        const CoalitionGame sub = big.restrict_to({players.begin(), players.begin() + 8});
        worst_restricted = std::max(
            worst_restricted, (shapley_values(sub) - permutation_oracle(sub)).cwiseAbs().maxCoeff());
    }
    const double elapsed = seconds_since(t0);
    std::ostringstream d;
    d << games << " games, max deviation " << std::max(worst, worst_restricted) << ", "
      << std::fixed << std::setprecision(1) << elapsed << " s";
    return check(worst < 1e-9 && worst_restricted < 1e-9 && elapsed < 120.0, d.str());
}

// ---------------------------------------------------------------- 2

Outcome criterion_constraints() {
    const std::vector<std::string> generators{"three_regime", "apc_cohort", "noisy_plateau",
                                              "lc_rank1"};
    double worst = 0.0;
    int checked = 0;
    int skipped = 0;
    std::string worst_where;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const std::string &gen = generators[(seed - 1) % generators.size()];
        const MortalitySurface female =
            testutil::synth(gen, seed, {1960, 1999}, Gender::female, {{"poisson_noise", 1.0}});
        const MortalitySurface male =
            testutil::synth(gen, seed + 50, {1960, 1999}, Gender::male, {{"poisson_noise", 1.0}});
        FitOptions opts;
        opts.partner = &male;
        opts.max_iterations = 3000;
        for (ModelId m : kAllModels) {
            const ModelFit f = fit(m, female, opts);
            if (!f.meta.converged) {
                ++skipped;
                continue;
            }
            ++checked;
            for (const auto &[name, value] : constraint_residuals(f)) {
                if (!(std::abs(value) <= worst)) {
                    worst = std::abs(value);
                    worst_where = std::string(label(m)) + " " + name;
                }
            }
        }
    }
    double lc_dev = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const ModelFit lc = fit(ModelId::lc, testutil::synth("lc_rank1", seed, {1960, 1999}));
        lc_dev = std::max(lc_dev, lc.meta.converged ? lc.meta.deviance : INFINITY);
    }
    std::ostringstream d;
    d << checked << " converged fits (" << skipped << " not converged), max residual " << worst;
    if (!worst_where.empty()) {
        d << " (" << worst_where << ")";
    }
    d << "; noiseless lc deviance " << lc_dev;
    return check(worst <= 1e-8 && lc_dev < 1e-6 && checked > 0, d.str());
}

// ---------------------------------------------------------------- 3

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) {
        out(i++) = x;
    }
    return out;
}

Outcome criterion_intervals() {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n01;
    int violations = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        Eigen::VectorXd lo(15), hi(15);
        for (int i = 0; i < 15; ++i) {
            const double mid = -4.0 + n01(rng);
            const double half = 0.05 + std::abs(n01(rng));
            lo(i) = mid - half;
            hi(i) = mid + half;
        }
        const Interval sa = combine_interval(lo, hi, IntervalMethod::sa);
        const Interval it = combine_interval(lo, hi, IntervalMethod::it, {}, 3);
        if (!(it.lower <= sa.lower && sa.lower <= sa.upper && sa.upper <= it.upper)) {
            ++violations;
        }
    }
    const Interval sa = combine_interval(vec({1, 3}), vec({3, 5}), IntervalMethod::sa);
    const Interval it =
        combine_interval(vec({0, 1, 2, 3, 9}), vec({10, 11, 12, 13, 4}), IntervalMethod::it, {}, 1);
    const WeightVector w = mse_weights(first_models(2), {0.0, std::log(2.0)});
    const bool hand = sa.lower == 2.0 && sa.upper == 4.0 && it.lower == 1.5 && it.upper == 11.5 &&
                      std::abs(w.weights(0) - 2.0 / 3.0) < 1e-15 &&
                      std::abs(w.weights(1) - 1.0 / 3.0) < 1e-15;
    std::ostringstream d;
    d << violations << " containment violations in 1000 sets (N=15, d=3); hand examples "
      << (hand ? "match" : "differ");
    return check(violations == 0 && hand, d.str());
}

// ---------------------------------------------------------------- 4

Outcome criterion_interval_score() {
    const double inside = interval_score(-4, -3, -3.5, 0.2);
    const double above = interval_score(-4, -3, -2.8, 0.2);
    const double boundary = interval_score(-4, -3, -3.0, 0.2);
    std::ostringstream d;
    d << "inside " << inside << ", penalised " << above << ", boundary " << boundary;
    return check(std::abs(inside - 1.0) < 1e-12 && std::abs(above - 3.0) < 1e-12 &&
                     std::abs(boundary - 1.0) < 1e-12,
                 d.str());
}

// ---------------------------------------------------------------- 5

/// Mean-zero noise orthogonal to the columns of `f`, with variance `sigma2`.
Eigen::VectorXd orthogonal_noise(const Eigen::MatrixXd &f, double sigma2, std::mt19937_64 &rng) {
    std::normal_distribution<double> n01;
    Eigen::MatrixXd basis(f.rows(), f.cols() + 1);
    basis.col(0).setOnes();
    basis.rightCols(f.cols()) = f;
    Eigen::VectorXd e(f.rows());
    for (Eigen::Index i = 0; i < e.size(); ++i) {
        e(i) = n01(rng);
    }
    e -= basis * basis.colPivHouseholderQr().solve(e);
    return e * std::sqrt(sigma2 / (e.squaredNorm() / static_cast<double>(e.size())));
}

Outcome criterion_decomposition() {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> n01;

    // Linear system y = F w* + e with e orthogonal to F: Sigma, w*, sigma^2 known.
    const int n = 400;
    const int k = 6;
    Eigen::MatrixXd f(n, k);
    for (int r = 0; r < n; ++r) {
        const double common = n01(rng);
        for (int i = 0; i < k; ++i) {
            f(r, i) = common + (0.3 + 0.1 * i) * n01(rng);
        }
    }
    Eigen::VectorXd w_star(k);
    w_star << 0.3, 0.25, 0.2, 0.1, 0.1, 0.05;
    const double sigma2 = 0.15;
    const Eigen::VectorXd y = (f * w_star).array() - 4.0 + orthogonal_noise(f, sigma2, rng).array();
    const RegressionSolution sol = regression_weights(f, y);
    const Eigen::MatrixXd fc = f.rowwise() - f.colwise().mean();
    const Eigen::MatrixXd sigma = fc.transpose() * fc / n;
    double quad = std::abs(sol.noise - sigma2) + (sol.weights - w_star).cwiseAbs().maxCoeff();
    int dominated = 0;
    const double best = conditional_mse(f, y, w_star);
    for (int t = 0; t < 1000; ++t) {
        Eigen::VectorXd w(k);
        for (int i = 0; i < k; ++i) {
            w(i) = n01(rng);
        }
        const double direct = conditional_mse(f, y, w);
        quad = std::max(quad, std::abs(direct - sigma2 - (w - w_star).dot(sigma * (w - w_star))));
        dominated += direct > best;
    }

    // Bias^2 + Var + sigma^2 against the empirical MSE over replications.
    const int reps = 1000;
    Eigen::VectorXd w = Eigen::VectorXd::Constant(k, 1.0 / k);
    std::vector<ReplicatedCell> cells;
    double empirical = 0.0;
    for (int c = 0; c < 4; ++c) {
        ReplicatedCell cell;
        cell.target = -4.0 + n01(rng);
        cell.forecasts.resize(reps, k);
        for (int r = 0; r < reps; ++r) {
            const double common = 0.2 * n01(rng);
            for (int i = 0; i < k; ++i) {
                cell.forecasts(r, i) = cell.target + 0.05 * (i - 2) + common + 0.1 * n01(rng);
            }
        }
        const Eigen::VectorXd observed =
            cell.target + orthogonal_noise(cell.forecasts, sigma2, rng).array();
        empirical += (cell.forecasts * w - observed).squaredNorm() / reps;
        cells.push_back(std::move(cell));
    }
    empirical /= static_cast<double>(cells.size());
    const double recon = std::abs(decompose_mse(w, cells, sigma2).total() - empirical);

    // Equal weights on two independent members: Var = sd^2 / 2.
    const double sd = 0.2;
    ReplicatedCell pair;
    pair.forecasts.resize(100000, 2);
    for (Eigen::Index r = 0; r < pair.forecasts.rows(); ++r) {
        pair.forecasts(r, 0) = sd * n01(rng);
        pair.forecasts(r, 1) = sd * n01(rng);
    }
    const double formula = decompose_mse(vec({0.5, 0.5}), {pair}).variance;
    const Eigen::VectorXd avg = pair.forecasts.rowwise().mean();
    const double direct = (avg.array() - avg.mean()).square().mean();
    const double mc = std::max(std::abs(formula - direct), std::abs(formula - sd * sd / 2));

    std::ostringstream d;
    d << "quadratic form " << quad << ", reconstruction " << recon << ", w* dominates "
      << dominated << "/1000, equal-weight variance gap " << mc;
    return check(quad < 1e-8 && recon < 1e-8 && dominated == 1000 && mc < 1e-3, d.str());
}

// ---------------------------------------------------------------- 6

struct SeedResult {
    double sma[2] = {0, 0};
    double shap[2] = {0, 0};
    int dropped = 0;
    bool nesting = true;
    std::string error;
};

ForecastPanel window_panel(const MortalitySurface &s, const MortalitySurface &partner, Phase phase,
                           std::vector<ModelId> &models) {
    const SplitConfig split;
    std::map<ModelId, std::vector<ForecastGrid>> runs;
    std::vector<ModelId> kept;
    for (ModelId m : models) {
        WindowOptions o;
        o.fit.partner = &partner;
        o.fit.max_iterations = 3000;
        try {
            std::vector<ForecastGrid> grids = expanding_window_run(m, s, split, phase, o);
            const bool ok = std::all_of(grids.begin(), grids.end(),
                                        [](const ForecastGrid &g) { return g.converged; });
            if (ok) {
                runs[m] = std::move(grids);
                kept.push_back(m);
            }
        } catch (const FitError &) {
        }
    }
    models = kept;
    return ForecastPanel::assemble(runs, s);
}

SeedResult run_seed(std::uint64_t seed) {
    SeedResult out;
    try {
        GeneratorSpec spec;
        spec.name = "three_regime";
        spec.params["poisson_noise"] = 1.0;
        const MortalitySurface female = synthesize_surface(spec, seed);
        spec.gender = Gender::male;
        const MortalitySurface male = synthesize_surface(spec, seed);

        std::vector<ModelId> models(kAllModels.begin(), kAllModels.end());
        ForecastPanel validation = window_panel(female, male, Phase::validation, models);
        const std::vector<ModelId> after_validation = models;
        ForecastPanel test = window_panel(female, male, Phase::test, models);
        if (models != after_validation) {
            validation = validation.subset(models);
        }
        out.dropped = static_cast<int>(kAllModels.size() - models.size());

        const ShapReport rep = shap_report(validation);
        const Eigen::MatrixXd sma = combine_point(test, WeightVector::equal(test.models));
        const int horizons[2] = {6, 10};
        for (int k = 0; k < 2; ++k) {
            const AlphaSelection sel = select_alpha(validation, rep, small_alpha_grid(), horizons[k]);
            const Eigen::MatrixXd shap = combine_point(test, shap_weights_by_age(rep, sel.alpha));
            out.sma[k] = point_scores(sma, test, horizons[k]).mse;
            out.shap[k] = point_scores(shap, test, horizons[k]).mse;
        }
        for (int a = 0; a < rep.n_ages(); ++a) {
            std::vector<ModelId> previous = rep.models;
            for (double alpha : small_alpha_grid()) {
                const WeightVector w = shap_weights(rep, a, alpha);
                for (ModelId m : w.selected) {
                    if (std::find(previous.begin(), previous.end(), m) == previous.end()) {
                        out.nesting = false;
                    }
                }
                if (std::abs(w.weights.sum() - 1.0) > 1e-12 || (w.weights.array() < 0).any()) {
                    out.nesting = false;
                }
                previous = w.selected;
            }
        }
    } catch (const std::exception &e) {
        out.error = e.what();
    }
    return out;
}

Outcome criterion_benchmark() {
    const auto t0 = Clock::now();
    const int n_seeds = 10;
    std::vector<SeedResult> results(n_seeds);
    std::atomic<int> next{0};
    const unsigned workers = std::max(1u, std::min<unsigned>(n_seeds, std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (int i = next++; i < n_seeds; i = next++) {
                results[static_cast<std::size_t>(i)] = run_seed(static_cast<std::uint64_t>(i + 1));
            }
        });
    }
    for (std::thread &t : pool) {
        t.join();
    }
    int wins[2] = {0, 0};
    int errors = 0;
    int dropped = 0;
    bool nesting = true;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const SeedResult &r = results[i];
        if (!r.error.empty()) {
            ++errors;
            std::cout << "  seed " << i + 1 << " error: " << r.error << '\n';
            continue;
        }
        std::cout << "  seed " << std::setw(2) << i + 1 << std::setprecision(5)
                  << "  h=6 SMA " << r.sma[0] << " SHAP " << r.shap[0] << "   h=10 SMA "
                  << r.sma[1] << " SHAP " << r.shap[1] << '\n';
        for (int k = 0; k < 2; ++k) {
            wins[k] += r.shap[k] <= r.sma[k];
        }
        dropped += r.dropped;
        nesting = nesting && r.nesting;
    }
    const double elapsed = seconds_since(t0);
    std::ostringstream d;
    d << "SHAP <= SMA in " << wins[0] << "/10 seeds at h=6 and " << wins[1]
      << "/10 at h=10; nesting " << (nesting ? "holds" : "broken") << ", " << errors
      << " errors, " << dropped << " model drops, " << std::fixed << std::setprecision(0)
      << elapsed << " s";
    return check(wins[0] >= 8 && wins[1] >= 8 && nesting && errors == 0 && elapsed < 900.0,
                 d.str());
}

// ---------------------------------------------------------------- 7

/// Reference MSE values for Austria (HMD): h = 1, 6, 10 rows; columns are
/// (Average, AIC, SHAP, SHAP α=50%) x (F, M).
constexpr double kAustria[3][8] = {
    {0.0049, 0.0137, 0.0044, 0.0139, 0.0048, 0.0138, 0.0052, 0.0160},
    {0.0106, 0.0368, 0.0073, 0.0160, 0.0134, 0.0222, 0.0250, 0.0169},
    {0.0424, 0.0415, 0.0184, 0.0201, 0.0133, 0.0286, 0.0109, 0.0478},
};

Outcome criterion_hmd() {
    const char *root = std::getenv("MORTENS_HMD_PATH");
    if (root == nullptr || *root == '\0') {
        return {Outcome::skip, "set MORTENS_HMD_PATH to an HMD country directory (Austria)"};
    }
    const fs::path dir(root);
    RunConfig cfg;
    if (fs::exists(dir / "Deaths_1x1.txt") && fs::exists(dir / "Exposures_1x1.txt")) {
        for (const char *g : {"F", "M"}) {
            cfg.set(std::string("counts.AUT.") + g,
                    (dir / "Deaths_1x1.txt").string() + ", " + (dir / "Exposures_1x1.txt").string());
        }
    } else if (fs::exists(dir / "Mx_1x1.txt")) {
        cfg.set("population.AUT.F", (dir / "Mx_1x1.txt").string());
        cfg.set("population.AUT.M", (dir / "Mx_1x1.txt").string());
    } else {
        return {Outcome::fail, dir.string() + " holds neither Mx_1x1.txt nor Deaths/Exposures_1x1.txt"};
    }
    testutil::TempDir out("hmd");
    cfg.output_dir = out.path();
    cfg.max_iterations = 3000;
    cfg.n_paths = 200;
    RunOptions opts;
    opts.allow_partial = true;
    opts.jobs = 2;
    const RunStatus status = run_stages(cfg, pipeline_stages(), opts);
    if (status == RunStatus::failed) {
        return {Outcome::fail, "pipeline failed on the HMD data"};
    }
    const std::vector<std::string> methods{"Average", "AIC", "SHAP", shap_label(0.5)};
    const int horizons[3] = {1, 6, 10};
    double worst_ratio = 1.0;
    std::cout << "  h  method        gender  MSE       reference  MSEx100\n";
    for (int gi = 0; gi < 2; ++gi) {
        const std::string gender = gi == 0 ? "F" : "M";
        const CsvTable t = read_csv(out.path() / ("AUT_" + gender) / "scores.csv");
        for (int hi = 0; hi < 3; ++hi) {
            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                double mse = NAN;
                double x100 = NAN;
                for (const auto &r : t.rows) {
                    if (r[static_cast<std::size_t>(t.column("method"))] == methods[mi] &&
                        std::stoi(r[static_cast<std::size_t>(t.column("horizon"))]) == horizons[hi]) {
                        mse = std::stod(r[static_cast<std::size_t>(t.column("mse"))]);
                        x100 = std::stod(r[static_cast<std::size_t>(t.column("mse_x100"))]);
                    }
                }
                const double ref = kAustria[hi][mi * 2 + static_cast<std::size_t>(gi)];
                const double ratio = std::isfinite(mse) ? std::max(mse / ref, ref / mse) : INFINITY;
                worst_ratio = std::max(worst_ratio, ratio);
                // Pad by characters, not bytes: labels may hold a two-byte alpha.
                const auto chars = std::count_if(methods[mi].begin(), methods[mi].end(),
                                                 [](char c) { return (c & 0xC0) != 0x80; });
                std::cout << "  " << std::setw(2) << horizons[hi] << " " << methods[mi]
                          << std::string(static_cast<std::size_t>(std::max<long>(1, 14 - chars)), ' ')
                          << gender << "      " << std::setw(9)
                          << mse << " " << std::setw(9) << ref << "  " << x100 << '\n';
            }
        }
    }
    std::ostringstream d;
    d << "largest ratio to the Austria reference values " << worst_ratio << " (limit 3)";
    return check(worst_ratio <= 3.0, d.str());
}

} // namespace

int main() {
    const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria{
        {"Shapley axioms and exact engine", criterion_shapley},
        {"Model identifiability constraints", criterion_constraints},
        {"Interval combination", criterion_intervals},
        {"Interval score", criterion_interval_score},
        {"MSE decomposition", criterion_decomposition},
        {"Synthetic end-to-end benchmark", criterion_benchmark},
        {"HMD order of magnitude", criterion_hmd},
    };
    bool failed = false;
    int index = 1;
    for (const auto &[name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception &e) {
            o = {Outcome::fail, std::string("exception: ") + e.what()};
        }
        const char *tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::fail ? "FAIL" : "SKIP";
        failed = failed || o.kind == Outcome::fail;
        std::cout << tag << " " << index++ << " " << name << ": " << o.detail << std::endl;
    }
    return failed ? 1 : 0;
}
