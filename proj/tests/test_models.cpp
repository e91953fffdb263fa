#include "mortens/models.hpp"
#include "mortens/synth.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace mortens;

namespace {

/// A one-factor fit with hand-set dynamics: ln m = alpha + beta * kappa.
ModelFit manual_fit(const Eigen::VectorXd &kappa, double drift, double variance, int n_ages = 3) {
    ModelFit f;
    f.model = ModelId::lc;
    for (int a = 0; a < n_ages; ++a) {
        f.ages.push_back(a);
    }
    for (int t = 0; t < kappa.size(); ++t) {
        f.years.push_back(2000 + t);
    }
    f.alpha = Eigen::VectorXd::LinSpaced(n_ages, -6.0, -4.0);
    f.beta = {Eigen::VectorXd::Constant(n_ages, 1.0 / n_ages)};
    f.kappa = {kappa};
    f.period_dynamics.process = {FactorProcess::random_walk_drift};
    f.period_dynamics.drift = Eigen::VectorXd::Constant(1, drift);
    f.period_dynamics.ar = Eigen::VectorXd::Zero(1);
    f.period_dynamics.innovation_cov = Eigen::MatrixXd::Constant(1, 1, variance);
    f.meta.converged = true;
    return f;
}

MortalitySurface noisy(const std::string &generator, std::uint64_t seed,
                       Gender gender = Gender::female) {
    return testutil::synth(generator, seed, {1960, 1999}, gender, {{"poisson_noise", 1.0}});
}

} // namespace

TEST(ModelIds, LabelsRoundTrip) {
    EXPECT_EQ(kAllModels.size(), 15u);
    for (ModelId m : kAllModels) {
        EXPECT_EQ(parse_model_id(label(m)), m);
    }
    EXPECT_EQ(parse_model_list("lc,cbd"), (std::vector<ModelId>{ModelId::lc, ModelId::cbd}));
    EXPECT_EQ(parse_model_list("").size(), 15u);
    EXPECT_THROW(parse_model_id("lee_carter"), std::invalid_argument);
}

TEST(Fit, ConstraintsHoldOnSyntheticSurfaces) {
    for (std::uint64_t seed : {1u, 2u}) {
        const MortalitySurface female = noisy("three_regime", seed);
        const MortalitySurface male = noisy("three_regime", seed + 50, Gender::male);
        FitOptions opts;
        opts.partner = &male;
        for (ModelId m : kAllModels) {
            const ModelFit f = fit(m, female, opts);
            ASSERT_TRUE(f.meta.converged) << label(m) << ": " << f.meta.diagnostic;
            for (const auto &[name, value] : constraint_residuals(f)) {
                EXPECT_LT(std::abs(value), 1e-8) << label(m) << " " << name;
            }
            EXPECT_GT(f.meta.n_params, 0) << label(m);
            EXPECT_TRUE(f.fitted_log_rates().allFinite()) << label(m);
        }
    }
}

TEST(Fit, LeeCarterRecoversNoiselessRankOne) {
    const MortalitySurface s = testutil::synth("lc_rank1", 4, {1960, 1999});
    const ModelFit f = fit(ModelId::lc, s);
    ASSERT_TRUE(f.meta.converged);
    EXPECT_LT(f.meta.deviance, 1e-6);
    EXPECT_LT((f.fitted_log_rates() - s.log_rates()).cwiseAbs().maxCoeff(), 1e-6);
    // The true age loading spans the first singular vector of the centred logs.
    const Eigen::MatrixXd lr = s.log_rates();
    const Eigen::MatrixXd centred = lr.colwise() - lr.rowwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinU);
    const Eigen::VectorXd u = svd.matrixU().col(0);
    const Eigen::VectorXd b = f.beta[0];
    const double cosine = std::abs(u.dot(b)) / (u.norm() * b.norm());
    EXPECT_NEAR(cosine, 1.0, 1e-9);
}

TEST(Fit, GaugeTransformLeavesFittedRatesUnchanged) {
    const ModelFit f = fit(ModelId::lc, noisy("lc_rank1", 7));
    ModelFit g = f;
    const double c = 3.7;
    g.kappa[0] *= c;
    g.beta[0] /= c;
    EXPECT_LT((g.fitted_log_rates() - f.fitted_log_rates()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Fit, CbdMatchesPerYearLeastSquaresOnToy) {
    const std::vector<int> ages{60, 61, 62};
    std::vector<int> years;
    Eigen::MatrixXd rates(3, 24);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    Eigen::VectorXd k1(24), k2(24);
    for (int t = 0; t < 24; ++t) {
        years.push_back(1980 + t);
        k1(t) = -4.0 - 0.02 * t + 0.01 * n01(rng);
        k2(t) = 0.09 + 0.001 * t + 0.002 * n01(rng);
        for (int a = 0; a < 3; ++a) {
            rates(a, t) = std::exp(k1(t) + k2(t) * (ages[a] - 61.0));
        }
    }
    const MortalitySurface s =
        MortalitySurface::from_rates(ages, years, rates, Gender::female, "toy");
    const ModelFit f = fit(ModelId::cbd, s);
    ASSERT_TRUE(f.meta.converged);
    // Oracle: ordinary least squares of ln m on (1, x - xbar), year by year.
    Eigen::MatrixXd design(3, 2);
    design << 1, -1, 1, 0, 1, 1;
    for (int t = 0; t < 24; ++t) {
        const Eigen::Vector2d ols =
            design.colPivHouseholderQr().solve(Eigen::VectorXd(rates.col(t).array().log()));
        EXPECT_NEAR(f.kappa[0](t), ols(0), 1e-8);
        EXPECT_NEAR(f.kappa[1](t), ols(1), 1e-8);
    }
}

TEST(Fit, M7WithoutQuadraticFactorHasM6Structure) {
    const MortalitySurface s = noisy("apc_cohort", 5);
    const ModelFit m6 = fit(ModelId::m6, s);
    const ModelFit m7 = fit(ModelId::m7, s);
    ASSERT_EQ(m6.beta.size(), 2u);
    ASSERT_EQ(m7.beta.size(), 3u);
    for (int k = 0; k < 2; ++k) {
        EXPECT_LT((m6.beta[k] - m7.beta[k]).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_LT((m6.cohort_loading - m7.cohort_loading).cwiseAbs().maxCoeff(), 1e-12);
    // Dropping kappa3 from m7 leaves alpha + beta1 k1 + beta2 k2 + gamma, the m6 predictor.
    ModelFit reduced = m7;
    reduced.kappa[2].setZero();
    const Eigen::MatrixXd diff = m7.fitted_log_rates() - reduced.fitted_log_rates();
    for (int t = 0; t < s.n_years(); ++t) {
        EXPECT_LT((diff.col(t) - m7.beta[2] * m7.kappa[2](t)).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Fit, FpcaBasisIsOrthonormal) {
    const MortalitySurface s = noisy("three_regime", 3);
    for (ModelId m : {ModelId::fdm, ModelId::robust_fdm}) {
        const ModelFit f = fit(m, s);
        ASSERT_TRUE(f.fpca.has_value());
        const Eigen::MatrixXd &b = f.fpca->basis;
        EXPECT_EQ(b.cols(), 6);
        EXPECT_LT((b.transpose() * b - Eigen::MatrixXd::Identity(b.cols(), b.cols()))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-8);
    }
}

TEST(Fit, RobustFdmMatchesFdmWithoutOutliers) {
    // A surface on which the median + 3 MAD rule flags no year.
    const MortalitySurface s = testutil::synth("lc_rank1", 4, {1960, 1999}, Gender::female,
                                               {{"poisson_noise", 1.0}});
    const ModelFit plain = fit(ModelId::fdm, s);
    const ModelFit robust = fit(ModelId::robust_fdm, s);
    ASSERT_TRUE(robust.fpca->excluded_years.empty());
    const Eigen::MatrixXd &b0 = plain.fpca->basis;
    const Eigen::MatrixXd &b1 = robust.fpca->basis;
    for (Eigen::Index k = 0; k < b0.cols(); ++k) {
        const double sign = b0.col(k).dot(b1.col(k)) < 0 ? -1.0 : 1.0;
        EXPECT_LT((b0.col(k) - sign * b1.col(k)).cwiseAbs().maxCoeff(), 1e-8) << k;
        EXPECT_LT((plain.fpca->scores.col(k) - sign * robust.fpca->scores.col(k))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-8)
            << k;
    }
}

TEST(Fit, RobustFdmDropsAnOutlierYear) {
    const MortalitySurface s = testutil::synth("lc_rank1", 4, {1960, 1999}, Gender::female,
                                               {{"poisson_noise", 1.0}});
    Eigen::MatrixXd rates = s.rates();
    // A mortality shock in 1985 at working ages.
    for (int a = 20; a <= 60; ++a) {
        rates(a, s.year_index(1985)) *= 2.5;
    }
    const MortalitySurface shocked =
        MortalitySurface::from_rates(s.ages(), s.years(), rates, Gender::female, "shock");
    const ModelFit robust = fit(ModelId::robust_fdm, shocked);
    const auto &excluded = robust.fpca->excluded_years;
    EXPECT_NE(std::find(excluded.begin(), excluded.end(), 1985), excluded.end());
}

TEST(Fit, ProductRatioNeedsPartner) {
    EXPECT_THROW(fit(ModelId::pr, noisy("lc_rank1", 1)), FitError);
}

TEST(Fit, TooFewYearsIsAnError) {
    const MortalitySurface s = testutil::synth("lc_rank1", 1, {1960, 1970});
    EXPECT_THROW(fit(ModelId::lc, s), FitError);
}

TEST(Forecast, DriftOneExtrapolatesLinearly) {
    Eigen::VectorXd kappa(5);
    kappa << 1, 2, 3, 4, 5;
    const ModelFit f = manual_fit(kappa, 1.0, 0.0);
    const ForecastGrid g = forecast_point(f, 3);
    ASSERT_EQ(g.horizons(), 3);
    for (int a = 0; a < 3; ++a) {
        EXPECT_NEAR(g.point(a, 3), f.alpha(a) + f.beta[0](a) * 8.0, 1e-12);
    }
    EXPECT_THROW(forecast_point(f, 0), std::invalid_argument);
}

TEST(Forecast, EstimatedDriftIsAverageStep) {
    const ModelFit f = fit(ModelId::lc, noisy("lc_rank1", 12));
    const Eigen::VectorXd &k = f.kappa[0];
    EXPECT_NEAR(f.period_dynamics.drift(0), (k(k.size() - 1) - k(0)) / (k.size() - 1), 1e-12);
}

TEST(Forecast, ZeroDriftRepeatsLastFittedRates) {
    ModelFit f = fit(ModelId::lc, noisy("lc_rank1", 13));
    f.period_dynamics.drift.setZero();
    const ForecastGrid g = forecast_point(f, 10);
    const Eigen::VectorXd last = f.fitted_log_rates().col(f.n_years() - 1);
    for (int h = 1; h <= 10; ++h) {
        EXPECT_LT((g.log_point.col(h - 1) - last).cwiseAbs().maxCoeff(), 1e-12) << h;
    }
}

TEST(Forecast, ProductRatioRecombines) {
    const MortalitySurface female = noisy("three_regime", 21);
    const MortalitySurface male = noisy("three_regime", 22, Gender::male);
    FitOptions fo;
    fo.partner = &male;
    const ModelFit ff = fit(ModelId::pr, female, fo);
    fo.partner = &female;
    const ModelFit fm = fit(ModelId::pr, male, fo);
    const ForecastGrid gf = forecast_point(ff, 10);
    const ForecastGrid gm = forecast_point(fm, 10);

    // Rebuild the product and ratio forecasts from the stored components.
    auto component = [](const ModelFit &f, const Fpca &part, std::size_t first, double sign) {
        ModelFit c = f;
        const auto k = static_cast<std::size_t>(part.basis.cols());
        c.alpha = part.mean;
        c.beta.assign(f.beta.begin() + static_cast<long>(first),
                      f.beta.begin() + static_cast<long>(first + k));
        for (auto &b : c.beta) {
            b *= sign;
        }
        c.kappa.assign(f.kappa.begin() + static_cast<long>(first),
                       f.kappa.begin() + static_cast<long>(first + k));
        PeriodDynamics &pd = c.period_dynamics;
        pd.process.assign(f.period_dynamics.process.begin() + static_cast<long>(first),
                          f.period_dynamics.process.begin() + static_cast<long>(first + k));
        pd.drift = f.period_dynamics.drift.segment(static_cast<Eigen::Index>(first),
                                                   static_cast<Eigen::Index>(k));
        pd.ar = f.period_dynamics.ar.segment(static_cast<Eigen::Index>(first),
                                             static_cast<Eigen::Index>(k));
        return forecast_point(c, 10).log_point;
    };
    const auto kp = static_cast<std::size_t>(fm.fpca->basis.cols());
    const Eigen::MatrixXd log_p = component(fm, *fm.fpca, 0, 1.0);
    const Eigen::MatrixXd log_r = component(fm, *fm.ratio_fpca, kp, 1.0);
    EXPECT_LT((gm.log_point + gf.log_point - 2.0 * log_p).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((gm.log_point - gf.log_point - 2.0 * log_r).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Intervals, SinglePathCollapses) {
    const ModelFit f = fit(ModelId::lc, noisy("lc_rank1", 3));
    const ForecastGrid g = simulate_intervals(f, 5, 0.8, 1, 42);
    EXPECT_EQ((g.log_upper - g.log_lower).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Intervals, ZeroInnovationVarianceGivesPoint) {
    Eigen::VectorXd kappa = Eigen::VectorXd::LinSpaced(25, 3.0, -3.0);
    const ModelFit f = manual_fit(kappa, -0.25, 0.0);
    const ForecastGrid g = simulate_intervals(f, 10, 0.8, 200, 1);
    EXPECT_LT((g.log_lower - g.log_point).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((g.log_upper - g.log_point).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Intervals, DeterministicInSeedAndOrdered) {
    const ModelFit f = fit(ModelId::apc, noisy("apc_cohort", 3));
    const ForecastGrid a = simulate_intervals(f, 10, 0.8, 300, 9);
    const ForecastGrid b = simulate_intervals(f, 10, 0.8, 300, 9);
    EXPECT_TRUE(a.log_lower == b.log_lower);
    EXPECT_TRUE(a.log_upper == b.log_upper);
    EXPECT_TRUE((a.log_lower.array() < a.log_upper.array()).all());
    EXPECT_THROW(simulate_intervals(f, 10, 1.0, 300, 9), std::invalid_argument);
}

TEST(Intervals, CoverageOfKnownRandomWalk) {
    // Truth follows the same drift and variance the fit carries; 80% bands
    // should cover about 80% of independent futures at every horizon.
    const double drift = -0.5;
    const double sd = 0.8;
    Eigen::VectorXd kappa = Eigen::VectorXd::LinSpaced(30, 10.0, 10.0 + 29 * drift);
    const ModelFit f = manual_fit(kappa, drift, sd * sd, 1);
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> n01;
    std::vector<int> covered(10, 0);
    const int reps = 500;
    for (int r = 0; r < reps; ++r) {
        const ForecastGrid g = simulate_intervals(f, 10, 0.8, 1000, 100 + r);
        double k = kappa(29);
        for (int h = 1; h <= 10; ++h) {
            k += drift + sd * n01(rng);
            const double truth = f.alpha(0) + f.beta[0](0) * k;
            covered[h - 1] += truth > g.log_lower(0, h - 1) && truth < g.log_upper(0, h - 1);
        }
    }
    for (int h = 0; h < 10; ++h) {
        EXPECT_NEAR(covered[h] / static_cast<double>(reps), 0.8, 0.05) << "h=" << h + 1;
    }
}

TEST(Window, TenYearWindowGivesFiftyFiveCells) {
    const MortalitySurface s = noisy("lc_rank1", 2).slice_years({1960, 1999});
    const MortalitySurface full = testutil::synth("lc_rank1", 2, {1960, 2019}, Gender::female,
                                                  {{"poisson_noise", 1.0}});
    const std::vector<ForecastGrid> runs =
        expanding_window_run(ModelId::lc, full, SplitConfig{}, Phase::validation);
    ASSERT_EQ(runs.size(), 10u);
    int cells = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        EXPECT_EQ(runs[i].origin_year, 1999 + static_cast<int>(i));
        EXPECT_EQ(runs[i].horizons(), 10 - static_cast<int>(i));
        EXPECT_FALSE(runs[i].has_intervals());
        cells += runs[i].horizons();
    }
    EXPECT_EQ(cells, 55);
    EXPECT_EQ(s.n_years(), 40);
}

TEST(Window, SingleYearWindow) {
    const MortalitySurface s = testutil::synth("lc_rank1", 2, {1960, 1985});
    SplitConfig cfg{{1960, 1983}, {1984, 1984}, {1985, 1985}};
    WindowOptions wo;
    wo.intervals = true;
    wo.n_paths = 100;
    const auto runs = expanding_window_run(ModelId::lc, s, cfg, Phase::test, wo);
    ASSERT_EQ(runs.size(), 1u);
    EXPECT_EQ(runs[0].horizons(), 1);
    EXPECT_EQ(runs[0].origin_year, 1984);
    EXPECT_TRUE(runs[0].has_intervals());
}

TEST(Window, NoiselessLeeCarterOneStepIsExact) {
    // No period noise either, so the drift extrapolation is exact.
    const MortalitySurface s = testutil::synth("lc_rank1", 6, {1960, 2019}, Gender::female,
                                               {{"kappa_sigma", 0.0}});
    const auto runs = expanding_window_run(ModelId::lc, s, SplitConfig{}, Phase::test);
    const Eigen::MatrixXd lr = s.log_rates();
    for (const ForecastGrid &g : runs) {
        const Eigen::VectorXd truth = lr.col(s.year_index(g.origin_year + 1));
        EXPECT_LT((g.log_point.col(0) - truth).cwiseAbs().maxCoeff(), 1e-6) << g.origin_year;
    }
}

TEST(Window, TaskSeedsDiffer) {
    EXPECT_NE(task_seed(1, ModelId::lc, 2009), task_seed(1, ModelId::lc, 2010));
    EXPECT_NE(task_seed(1, ModelId::lc, 2009), task_seed(1, ModelId::rh, 2009));
    EXPECT_NE(task_seed(1, ModelId::lc, 2009), task_seed(2, ModelId::lc, 2009));
    EXPECT_EQ(task_seed(1, ModelId::lc, 2009), task_seed(1, ModelId::lc, 2009));
}
