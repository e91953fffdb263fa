#include "mortens/io.hpp"
#include "mortens/pipeline.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace mortens;

namespace {

MortalitySurface noisy(std::uint64_t seed, Gender gender = Gender::female) {
    return testutil::synth("apc_cohort", seed, {1960, 1999}, gender, {{"poisson_noise", 1.0}});
}

} // namespace

class FitRoundTrip : public ::testing::TestWithParam<ModelId> {};

TEST_P(FitRoundTrip, JsonPreservesFittedAndForecastRates) {
    const MortalitySurface f = noisy(3);
    const MortalitySurface m = noisy(103, Gender::male);
    FitOptions opts;
    opts.partner = &m;
    opts.max_iterations = 2000;
    const ModelFit original = fit(GetParam(), f, opts);

    testutil::TempDir dir("fitjson");
    write_fit(original, dir / "fit.json");
    const ModelFit back = read_fit(dir / "fit.json");

    EXPECT_EQ(back.model, original.model);
    EXPECT_EQ(back.ages, original.ages);
    EXPECT_EQ(back.years, original.years);
    EXPECT_EQ(back.meta.converged, original.meta.converged);
    EXPECT_LT((back.fitted_log_rates() - original.fitted_log_rates()).cwiseAbs().maxCoeff(), 1e-12);
    const ForecastGrid a = forecast_point(original, 10);
    const ForecastGrid b = forecast_point(back, 10);
    EXPECT_LT((a.log_point - b.log_point).cwiseAbs().maxCoeff(), 1e-12);
    const ForecastGrid ia = simulate_intervals(original, 5, 0.8, 50, 9);
    const ForecastGrid ib = simulate_intervals(back, 5, 0.8, 50, 9);
    EXPECT_LT((ia.log_upper - ib.log_upper).cwiseAbs().maxCoeff(), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Models, FitRoundTrip,
                         ::testing::Values(ModelId::lc, ModelId::rh, ModelId::cbd, ModelId::plat,
                                           ModelId::lca_e0, ModelId::robust_fdm, ModelId::pr),
                         [](const auto &info) { return std::string(label(info.param)); });

TEST(FitJson, RejectsUnknownModel) {
    nlohmann::json j = fit_to_json(fit(ModelId::lc, noisy(4)));
    j["model"] = "nonesuch";
    EXPECT_ANY_THROW(fit_from_json(j));
    testutil::TempDir dir("badjson");
    testutil::write_text(dir / "x.json", "{ not json");
    EXPECT_ANY_THROW(read_fit(dir / "x.json"));
}

TEST(ForecastCsv, RoundTrip) {
    const MortalitySurface s = noisy(5).slice_ages(40, 60);
    const ModelFit lc = fit(ModelId::lc, s);
    const ModelFit cbd = fit(ModelId::cbd, s);
    WindowRuns runs;
    ForecastGrid g = simulate_intervals(lc, 3, 0.8, 40, 1);
    g.origin_year = 1999;
    runs[ModelId::lc].push_back(g);
    ForecastGrid p = forecast_point(cbd, 2);
    p.origin_year = 2000;
    runs[ModelId::cbd].push_back(p);

    testutil::TempDir dir("fcsv");
    write_forecasts(runs, dir / "f.csv");
    const WindowRuns back = read_forecasts(dir / "f.csv");
    ASSERT_EQ(back.size(), 2u);
    const ForecastGrid &bg = back.at(ModelId::lc).front();
    EXPECT_EQ(bg.origin_year, 1999);
    EXPECT_EQ(bg.ages, g.ages);
    EXPECT_EQ(bg.n_params, g.n_params);
    ASSERT_TRUE(bg.has_intervals());
    EXPECT_LT((bg.log_point - g.log_point).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((bg.log_lower - g.log_lower).cwiseAbs().maxCoeff(), 1e-12);
    const ForecastGrid &bp = back.at(ModelId::cbd).front();
    EXPECT_FALSE(bp.has_intervals());
    EXPECT_EQ(bp.horizons(), 2);
}

TEST(Csv, QuotingAndLookup) {
    testutil::TempDir dir("csv");
    {
        CsvWriter w(dir / "t.csv", {"name", "value"});
        w << "a,b" << 1.5;
        w.end_row();
        w << "SHAP α=5%" << 3;
        w.end_row();
    }
    const CsvTable t = read_csv(dir / "t.csv");
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0][static_cast<std::size_t>(t.column("name"))], "a,b");
    EXPECT_EQ(t.rows[1][0], "SHAP α=5%");
    EXPECT_EQ(std::stod(t.rows[0][1]), 1.5);
    EXPECT_THROW(t.column("missing"), std::invalid_argument);
}

TEST(Config, ParseDumpAndReload) {
    testutil::TempDir dir("cfg");
    testutil::write_text(dir / "f.csv", "");
    testutil::write_text(dir / "run.cfg", "# comment\n"
                                          "population.AUS.F = f.csv\n"
                                          "split.train = 1960-1999\n"
                                          "models = lc, cbd\n"
                                          "alpha_mode = fixed\n"
                                          "alpha_value = 0.2\n"
                                          "seed = 11\n"
                                          "trim_d = 0\n");
    const RunConfig cfg = load_config(dir / "run.cfg");
    ASSERT_EQ(cfg.populations.size(), 1u);
    EXPECT_EQ(cfg.populations[0].rates, dir / "f.csv");
    EXPECT_EQ(cfg.models, (std::vector<ModelId>{ModelId::lc, ModelId::cbd}));
    EXPECT_EQ(cfg.alpha_mode, AlphaMode::fixed);
    EXPECT_DOUBLE_EQ(*cfg.alpha_value, 0.2);
    EXPECT_EQ(cfg.seed, 11u);
    EXPECT_EQ(cfg.trim_for(2), 0);

    testutil::write_text(dir / "echo.cfg", cfg.dump());
    const RunConfig again = load_config(dir / "echo.cfg");
    EXPECT_EQ(again.dump(), cfg.dump());
}

TEST(Config, DefaultTrimFollowsModelCount) {
    RunConfig cfg;
    EXPECT_EQ(cfg.trim_for(15), 3);
    EXPECT_EQ(cfg.trim_for(2), 0);
    EXPECT_EQ(cfg.trim_for(5), 1);
    cfg.trim_d = 4;
    EXPECT_EQ(cfg.trim_for(15), 4);
}

TEST(Config, Errors) {
    RunConfig cfg;
    EXPECT_THROW(cfg.set("nonsense", "1"), std::invalid_argument);
    EXPECT_THROW(cfg.set("seed", "abc"), std::invalid_argument);
    EXPECT_THROW(cfg.set("models", "lc,xyz"), std::invalid_argument);
    EXPECT_THROW(cfg.set("population.AUS", "f.csv"), std::invalid_argument);
    EXPECT_THROW(cfg.set("alpha_mode", "sometimes"), std::invalid_argument);
    EXPECT_THROW(cfg.validate(), std::invalid_argument);

    testutil::TempDir dir("cfgerr");
    testutil::write_text(dir / "run.cfg", "population.AUS.F = missing.csv\n");
    EXPECT_THROW(load_config(dir / "run.cfg").validate(), std::invalid_argument);
    testutil::write_text(dir / "bad.cfg", "no equals sign here\n");
    try {
        load_config(dir / "bad.cfg");
        ADD_FAILURE() << "malformed line accepted";
    } catch (const ParseError &e) {
        EXPECT_NE(std::string(e.what()).find("bad.cfg:1"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_config(dir / "absent.cfg"), std::exception);
}

TEST(Labels, ShapAlpha) {
    EXPECT_EQ(shap_label(0.5), "SHAP α=50%");
    EXPECT_EQ(shap_label(0.05), "SHAP α=5%");
}
