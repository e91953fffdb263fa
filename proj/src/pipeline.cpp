#include "mortens/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace mortens {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

YearRange parse_years(const std::string &text) {
    const auto dash = text.find('-');
    if (dash == std::string::npos) {
        throw std::invalid_argument("year range '" + text + "' must look like 1960-1999");
    }
    return {std::stoi(trim(text.substr(0, dash))), std::stoi(trim(text.substr(dash + 1)))};
}

std::string format_years(YearRange r) {
    return std::to_string(r.first) + "-" + std::to_string(r.last);
}

bool parse_bool(const std::string &text) {
    if (text == "true" || text == "1" || text == "yes") {
        return true;
    }
    if (text == "false" || text == "0" || text == "no") {
        return false;
    }
    throw std::invalid_argument("expected a boolean, got '" + text + "'");
}

double parse_real(const std::string &key, const std::string &text) {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) {
        throw std::invalid_argument(key + ": not a number: '" + text + "'");
    }
    return v;
}

long long parse_integer(const std::string &key, const std::string &text) {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) {
        throw std::invalid_argument(key + ": not an integer: '" + text + "'");
    }
    return v;
}

std::string join_models(const std::vector<ModelId> &models) {
    std::string out;
    for (ModelId m : models) {
        out += (out.empty() ? "" : ",") + std::string(label(m));
    }
    return out;
}

std::string format_real(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

/// Writes only when the content differs, so reruns leave files untouched.
void write_if_changed(const fs::path &path, const std::string &content) {
    if (fs::exists(path) && read_file(path) == content) {
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << content;
}

class StageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One population's run. Holds no state shared with other jobs.
class Job {
public:
    Job(const RunConfig &cfg, const PopulationSource &source, const PopulationSource *partner,
        const RunOptions &options, std::mutex &log_mutex)
        : cfg_(cfg), source_(source), partner_source_(partner), options_(options),
          log_mutex_(log_mutex), dir_(cfg.output_dir / source.key()) {}

    RunStatus run(const std::vector<Stage> &stages) {
        Stage current = stages.empty() ? Stage::fit : stages.front();
        try {
            fs::create_directories(dir_);
            const fs::path echo = dir_ / "config.resolved";
            const std::string resolved = cfg_.dump();
            // Outputs are reused only when the last completed run used these
            // exact settings; the echo is written once every stage succeeds.
            stale_ = !fs::exists(echo) || read_file(echo) != resolved;
            if (stale_ && fs::exists(echo)) {
                log("info", "settings changed since the last run; recomputing every stage");
            }
            for (Stage s : stages) {
                current = s;
                run_stage(s);
            }
            write_if_changed(echo, resolved);
        } catch (const std::exception &e) {
            log("error", std::string("stage ") + std::string(to_string(current)) + ": " +
                             e.what());
            return RunStatus::failed;
        }
        return partial_ ? RunStatus::partial : RunStatus::ok;
    }

private:
    void log(const std::string &level, const std::string &message) {
        if (options_.log == nullptr) {
            return;
        }
        std::lock_guard<std::mutex> lock(log_mutex_);
        *options_.log << level << " [" << source_.key() << "] " << message << '\n';
    }

    /// Drops `model` under --allow-partial, otherwise fails the stage.
    void model_failure(ModelId model, const std::string &why) {
        if (!options_.allow_partial) {
            throw StageError(std::string(label(model)) + ": " + why);
        }
        partial_ = true;
        log("warning", std::string(label(model)) + " dropped: " + why);
    }

    bool outputs_exist(const std::vector<fs::path> &files) const {
        return std::all_of(files.begin(), files.end(),
                           [&](const fs::path &f) { return fs::exists(dir_ / f); });
    }

    void run_stage(Stage stage) {
        const std::vector<fs::path> outputs = stage_outputs(stage);
        if (!options_.force && !stale_ && outputs_exist(outputs)) {
            log("info", std::string(to_string(stage)) + " up to date");
            return;
        }
        log("info", std::string(to_string(stage)) + " running");
        switch (stage) {
        case Stage::fit:
            stage_fit();
            break;
        case Stage::forecast:
            stage_forecast();
            break;
        case Stage::shap:
            stage_shap();
            break;
        case Stage::combine:
            stage_combine();
            break;
        case Stage::evaluate:
            stage_evaluate();
            break;
        }
    }

    static std::vector<fs::path> stage_outputs(Stage stage) {
        switch (stage) {
        case Stage::fit:
            return {"fits/summary.csv"};
        case Stage::forecast:
            return {"forecasts_validation.csv", "forecasts_test.csv"};
        case Stage::shap:
            return {"shap_phi.csv", "shap_mean.csv", "alpha_selection.csv", "shap_weights.csv"};
        case Stage::combine:
            return {"combined.csv", "ensemble_weights.csv"};
        case Stage::evaluate:
            return {"scores.csv",  "model_scores.csv", "interval_scores.csv",
                    "dm.csv",      "age_mse.csv",      "selection.csv",
                    "decomposition.csv", "summary.json"};
        }
        return {};
    }

    YearRange window() const { return {cfg_.split.train.first, cfg_.split.test.last}; }

    static MortalitySurface load(const PopulationSource &src, YearRange window) {
        if (!src.rates.empty()) {
            return load_surface(src.rates, src.gender, window, src.country);
        }
        return load_hmd_counts(src.deaths, src.exposures, src.gender, window, src.country);
    }

    const MortalitySurface &surface() {
        if (!surface_) {
            surface_ = load(source_, window());
        }
        return *surface_;
    }

    const MortalitySurface *partner() {
        if (partner_source_ == nullptr) {
            return nullptr;
        }
        if (!partner_) {
            partner_ = load(*partner_source_, window());
        }
        return &*partner_;
    }

    void stage_fit() {
        const fs::path fit_dir = dir_ / "fits";
        fs::create_directories(fit_dir);
        const MortalitySurface train = surface().slice_years(cfg_.split.train);
        FitOptions fo = cfg_.fit_options();
        const MortalitySurface *other = partner();
        std::optional<MortalitySurface> other_train;
        if (other != nullptr) {
            other_train = other->slice_years(cfg_.split.train);
            fo.partner = &*other_train;
        }
        CsvWriter summary(fit_dir / "summary.csv",
                          {"model", "status", "converged", "iterations", "deviance", "n_params",
                           "diagnostic"});
        for (ModelId m : cfg_.models) {
            std::string status = "ok";
            // A failed refit must not leave an earlier run's file behind.
            fs::remove(fit_dir / (std::string(label(m)) + ".json"));
            try {
                const ModelFit f = fit(m, train, fo);
                summary << label(m);
                if (!f.meta.converged) {
                    status = "not converged";
                    model_failure(m, "fit did not converge: " + f.meta.diagnostic);
                    summary << status;
                } else {
                    write_fit(f, fit_dir / (std::string(label(m)) + ".json"));
                    summary << status;
                }
                summary << (f.meta.converged ? 1 : 0) << f.meta.iterations << f.meta.deviance
                        << f.meta.n_params << f.meta.diagnostic;
                summary.end_row();
            } catch (const StageError &) {
                throw;
            } catch (const std::exception &e) {
                model_failure(m, e.what());
                summary << label(m) << "failed" << 0 << 0 << std::nan("") << 0 << e.what();
                summary.end_row();
            }
        }
    }

    WindowRuns window_runs(Phase phase, std::set<ModelId> &failed) {
        WindowRuns runs;
        WindowOptions wo;
        wo.fit = cfg_.fit_options();
        wo.fit.partner = partner();
        wo.intervals = phase == Phase::test;
        wo.level = 1.0 - cfg_.theta;
        wo.n_paths = cfg_.n_paths;
        wo.seed = cfg_.seed;
        const char *name = phase == Phase::test ? "test" : "validation";
        for (ModelId m : cfg_.models) {
            if (failed.count(m) != 0) {
                continue;
            }
            try {
                std::vector<ForecastGrid> grids =
                    expanding_window_run(m, surface(), cfg_.split, phase, wo);
                const auto bad = std::find_if(grids.begin(), grids.end(),
                                              [](const ForecastGrid &g) { return !g.converged; });
                if (bad != grids.end()) {
                    failed.insert(m);
                    model_failure(m, std::string(name) + " fit at origin " +
                                         std::to_string(bad->origin_year) + " did not converge");
                    continue;
                }
                runs[m] = std::move(grids);
            } catch (const StageError &) {
                throw;
            } catch (const std::exception &e) {
                failed.insert(m);
                model_failure(m, std::string(name) + " window: " + e.what());
            }
        }
        return runs;
    }

    void stage_forecast() {
        std::set<ModelId> failed;
        WindowRuns validation = window_runs(Phase::validation, failed);
        WindowRuns test = window_runs(Phase::test, failed);
        for (ModelId m : failed) {
            validation.erase(m);
            test.erase(m);
        }
        if (validation.size() < 2) {
            throw StageError("fewer than two models produced forecasts");
        }
        write_forecasts(validation, dir_ / "forecasts_validation.csv");
        write_forecasts(test, dir_ / "forecasts_test.csv");
    }

    ForecastPanel panel(const char *file) {
        return ForecastPanel::assemble(read_forecasts(dir_ / file), surface());
    }

    ShapReport report() {
        return read_shap_report(dir_ / "shap_phi.csv", dir_ / "shap_mean.csv", source_.gender);
    }

    std::vector<double> alpha_grid() const {
        switch (cfg_.alpha_mode) {
        case AlphaMode::fixed:
            return {*cfg_.alpha_value};
        case AlphaMode::small_grid:
            return small_alpha_grid();
        case AlphaMode::fine_grid:
            return fine_alpha_grid();
        }
        return {};
    }

    void stage_shap() {
        const ForecastPanel validation = panel("forecasts_validation.csv");
        ShapReport rep = shap_report(validation, cfg_.game_mode);
        rep.gender = source_.gender;
        write_shap_phi(rep, dir_ / "shap_phi.csv");
        write_shap_mean(rep, dir_ / "shap_mean.csv");

        CsvWriter csv(dir_ / "alpha_selection.csv", {"horizon", "alpha", "mse", "selected"});
        std::set<double> chosen{0.0};
        for (int h = 1; h <= validation.max_horizon(); ++h) {
            const AlphaSelection sel =
                select_alpha(validation, rep, alpha_grid(), h, cfg_.aggregate_ages);
            for (std::size_t k = 0; k < sel.grid.size(); ++k) {
                csv << h << sel.grid[k] << sel.mse[k] << (sel.grid[k] == sel.alpha ? 1 : 0);
                csv.end_row();
            }
            chosen.insert(sel.alpha);
        }
        bool append = false;
        for (double a : chosen) {
            write_weights(rep.ages, shap_weights_by_age(rep, a, cfg_.aggregate_ages),
                          dir_ / "shap_weights.csv", append);
            append = true;
        }
    }

    /// Selected alpha per horizon, read back from alpha_selection.csv.
    std::map<int, double> selected_alpha() {
        const CsvTable t = read_csv(dir_ / "alpha_selection.csv");
        std::map<int, double> out;
        for (const auto &r : t.rows) {
            if (r[static_cast<std::size_t>(t.column("selected"))] == "1") {
                out[std::stoi(r[static_cast<std::size_t>(t.column("horizon"))])] =
                    std::stod(r[static_cast<std::size_t>(t.column("alpha"))]);
            }
        }
        return out;
    }

    std::string tuned_label() const {
        return cfg_.alpha_mode == AlphaMode::fixed ? shap_label(*cfg_.alpha_value)
                                                   : std::string("SHAP α=grid");
    }

    struct Ensembles {
        std::vector<std::string> point_names;
        std::vector<Eigen::MatrixXd> point;
        std::vector<std::string> interval_names;
        std::vector<CombinedIntervals> intervals;
        std::vector<std::pair<std::string, std::vector<WeightVector>>> weights;
    };

    Ensembles build_ensembles(const ForecastPanel &validation, const ForecastPanel &test,
                              const ShapReport &rep) {
        Ensembles out;
        if (rep.models != test.models || validation.models != test.models) {
            throw StageError("validation and test panels hold different models");
        }
        auto add_point = [&](const std::string &name, const std::vector<WeightVector> &w) {
            out.point_names.push_back(name);
            out.point.push_back(combine_point(test, w));
            out.weights.emplace_back(name, w);
        };
        const WeightVector equal = WeightVector::equal(test.models);
        WeightVector aic = equal;
        try {
            aic = aic_weights(test.models, panel_aic(validation));
        } catch (const std::invalid_argument &e) {
            log("warning", std::string("AIC weights fall back to equal weights: ") + e.what());
        }
        const WeightVector mse = mse_weights(test.models, panel_mse(validation));
        const bool agg = cfg_.aggregate_ages;
        add_point("Average", {equal});
        add_point("AIC", {aic});
        add_point("SHAP", shap_weights_by_age(rep, 0.0, agg));
        for (double a : small_alpha_grid()) {
            add_point(shap_label(a), shap_weights_by_age(rep, a, agg));
        }

        // The tuned ensemble may use a different alpha at each horizon.
        const std::map<int, double> alpha = selected_alpha();
        std::map<double, std::vector<WeightVector>> by_alpha;
        for (const auto &[h, a] : alpha) {
            by_alpha.emplace(a, shap_weights_by_age(rep, a, agg));
        }
        Eigen::MatrixXd tuned(test.n_ages(), test.n_cells());
        CombinedIntervals tuned_iv;
        tuned_iv.lower.resize(test.n_ages(), test.n_cells());
        tuned_iv.upper.resize(test.n_ages(), test.n_cells());
        IntervalEnsembleSpec spec;
        spec.theta = cfg_.theta;
        spec.trim_d = cfg_.trim_for(test.n_models());
        spec.method = IntervalMethod::shap;
        for (const auto &[a, w] : by_alpha) {
            const Eigen::MatrixXd p = combine_point(test, w);
            const CombinedIntervals iv = combine_intervals(test, spec, w);
            for (int c = 0; c < test.n_cells(); ++c) {
                const auto it = alpha.find(test.cell_horizon[static_cast<std::size_t>(c)]);
                if (it == alpha.end()) {
                    throw StageError("no alpha selected for horizon " +
                                     std::to_string(test.cell_horizon[static_cast<std::size_t>(c)]));
                }
                if (it->second == a) {
                    tuned.col(c) = p.col(c);
                    tuned_iv.lower.col(c) = iv.lower.col(c);
                    tuned_iv.upper.col(c) = iv.upper.col(c);
                }
            }
        }
        out.point_names.push_back(tuned_label());
        out.point.push_back(tuned);
        for (const auto &[a, w] : by_alpha) {
            out.weights.emplace_back(tuned_label() + " " + shap_label(a), w);
        }

        auto add_interval = [&](const std::string &name, IntervalMethod m,
                                const std::vector<WeightVector> &w) {
            spec.method = m;
            out.interval_names.push_back(name);
            out.intervals.push_back(combine_intervals(test, spec, w));
        };
        add_interval("SA", IntervalMethod::sa, {});
        add_interval("IT", IntervalMethod::it, {});
        add_interval("AIC", IntervalMethod::aic, {aic});
        add_interval("MSE", IntervalMethod::mse, {mse});
        out.weights.emplace_back("MSE", std::vector<WeightVector>{mse});
        add_interval("SHAP", IntervalMethod::shap, shap_weights_by_age(rep, 0.0, agg));
        out.interval_names.push_back(tuned_label());
        out.intervals.push_back(tuned_iv);
        return out;
    }

    void stage_combine() {
        const ForecastPanel validation = panel("forecasts_validation.csv");
        const ForecastPanel test = panel("forecasts_test.csv");
        const ShapReport rep = report();
        const Ensembles e = build_ensembles(validation, test, rep);

        CsvWriter csv(dir_ / "combined.csv",
                      {"kind", "method", "origin", "age", "horizon", "point", "lower", "upper"});
        auto cell_prefix = [&](const char *kind, const std::string &name, int a, int c) {
            csv << kind << name << test.cell_origin[static_cast<std::size_t>(c)]
                << test.ages[static_cast<std::size_t>(a)]
                << test.cell_horizon[static_cast<std::size_t>(c)];
        };
        for (std::size_t k = 0; k < e.point.size(); ++k) {
            for (int c = 0; c < test.n_cells(); ++c) {
                for (int a = 0; a < test.n_ages(); ++a) {
                    cell_prefix("point", e.point_names[k], a, c);
                    csv << std::exp(e.point[k](a, c)) << "" << "";
                    csv.end_row();
                }
            }
        }
        for (std::size_t k = 0; k < e.intervals.size(); ++k) {
            for (int c = 0; c < test.n_cells(); ++c) {
                for (int a = 0; a < test.n_ages(); ++a) {
                    cell_prefix("interval", e.interval_names[k], a, c);
                    csv << "" << std::exp(e.intervals[k].lower(a, c))
                        << std::exp(e.intervals[k].upper(a, c));
                    csv.end_row();
                }
            }
        }

        CsvWriter wcsv(dir_ / "ensemble_weights.csv", {"method", "model", "age", "alpha", "weight"});
        for (const auto &[name, by_age] : e.weights) {
            for (std::size_t a = 0; a < by_age.size(); ++a) {
                const WeightVector &w = by_age[a];
                for (std::size_t i = 0; i < w.models.size(); ++i) {
                    wcsv << name << label(w.models[i])
                         << (by_age.size() == 1 ? std::string("all")
                                                : std::to_string(test.ages[a]))
                         << w.threshold << w.weights(static_cast<Eigen::Index>(i));
                    wcsv.end_row();
                }
            }
        }
    }

    struct Combined {
        std::vector<std::string> point_names;
        std::vector<Eigen::MatrixXd> point;
        std::vector<std::string> interval_names;
        std::vector<CombinedIntervals> intervals;
    };

    Combined read_combined(const ForecastPanel &test) {
        const CsvTable t = read_csv(dir_ / "combined.csv");
        const int c_kind = t.column("kind");
        const int c_method = t.column("method");
        const int c_origin = t.column("origin");
        const int c_age = t.column("age");
        const int c_h = t.column("horizon");
        std::map<std::pair<int, int>, int> cell_index;
        for (int c = 0; c < test.n_cells(); ++c) {
            cell_index[{test.cell_origin[static_cast<std::size_t>(c)],
                        test.cell_horizon[static_cast<std::size_t>(c)]}] = c;
        }
        std::map<int, int> age_index;
        for (int a = 0; a < test.n_ages(); ++a) {
            age_index[test.ages[static_cast<std::size_t>(a)]] = a;
        }
        Combined out;
        const Eigen::MatrixXd blank = Eigen::MatrixXd::Constant(
            test.n_ages(), test.n_cells(), std::numeric_limits<double>::quiet_NaN());
        for (const auto &r : t.rows) {
            const bool point = r[static_cast<std::size_t>(c_kind)] == "point";
            const std::string &name = r[static_cast<std::size_t>(c_method)];
            auto &names = point ? out.point_names : out.interval_names;
            auto pos = std::find(names.begin(), names.end(), name);
            if (pos == names.end()) {
                names.push_back(name);
                pos = names.end() - 1;
                if (point) {
                    out.point.push_back(blank);
                } else {
                    out.intervals.push_back({blank, blank});
                }
            }
            const auto k = static_cast<std::size_t>(pos - names.begin());
            const int a = age_index.at(std::stoi(r[static_cast<std::size_t>(c_age)]));
            const int c = cell_index.at({std::stoi(r[static_cast<std::size_t>(c_origin)]),
                                         std::stoi(r[static_cast<std::size_t>(c_h)])});
            if (point) {
                out.point[k](a, c) = std::log(std::stod(r[static_cast<std::size_t>(t.column("point"))]));
            } else {
                out.intervals[k].lower(a, c) =
                    std::log(std::stod(r[static_cast<std::size_t>(t.column("lower"))]));
                out.intervals[k].upper(a, c) =
                    std::log(std::stod(r[static_cast<std::size_t>(t.column("upper"))]));
            }
        }
        return out;
    }

    void stage_evaluate() {
        const ForecastPanel test = panel("forecasts_test.csv");
        const ShapReport rep = report();
        const Combined comb = read_combined(test);
        const std::string gender = to_string(source_.gender);
        const int max_h = test.max_horizon();
        json summary;
        summary["population"] = source_.key();
        summary["models"] = join_models(test.models);

        {
            CsvWriter csv(dir_ / "scores.csv", {"method", "gender", "horizon", "mse", "mae", "mse_x100"});
            for (std::size_t k = 0; k < comb.point.size(); ++k) {
                for (int h = 1; h <= max_h; ++h) {
                    const PointScore s = point_scores(comb.point[k], test, h);
                    csv << comb.point_names[k] << gender << h << s.mse << s.mae << 100.0 * s.mse;
                    csv.end_row();
                    summary["mse_x100"][comb.point_names[k]][std::to_string(h)] = 100.0 * s.mse;
                }
            }
        }
        {
            CsvWriter csv(dir_ / "model_scores.csv", {"model", "gender", "horizon", "mse", "mae"});
            for (int i = 0; i < test.n_models(); ++i) {
                for (int h = 1; h <= max_h; ++h) {
                    const PointScore s = point_scores(test.point[static_cast<std::size_t>(i)], test, h);
                    csv << label(test.models[static_cast<std::size_t>(i)]) << gender << h << s.mse
                        << s.mae;
                    csv.end_row();
                }
            }
        }
        {
            CsvWriter csv(dir_ / "interval_scores.csv", {"method", "gender", "horizon", "score"});
            for (std::size_t k = 0; k < comb.intervals.size(); ++k) {
                for (int h = 1; h <= max_h; ++h) {
                    const double s = mean_interval_score(comb.intervals[k].lower,
                                                         comb.intervals[k].upper, test, h,
                                                         cfg_.theta);
                    csv << comb.interval_names[k] << gender << h << s;
                    csv.end_row();
                    summary["interval_score"][comb.interval_names[k]][std::to_string(h)] = s;
                }
            }
        }
        auto point_of = [&](const std::string &name) -> const Eigen::MatrixXd & {
            const auto it = std::find(comb.point_names.begin(), comb.point_names.end(), name);
            if (it == comb.point_names.end()) {
                throw StageError("combined.csv lacks the '" + name + "' ensemble");
            }
            return comb.point[static_cast<std::size_t>(it - comb.point_names.begin())];
        };
        {
            CsvWriter csv(dir_ / "dm.csv", {"age", "pair", "statistic", "p_value", "degenerate"});
            const std::vector<std::pair<std::string, std::string>> pairs{
                {"SHAP", "Average"},
                {"SHAP", "AIC"},
                {tuned_label(), "Average"},
                {tuned_label(), "AIC"}};
            for (const auto &[a_name, b_name] : pairs) {
                const Eigen::MatrixXd ea = test.truth - point_of(a_name);
                const Eigen::MatrixXd eb = test.truth - point_of(b_name);
                int below = 0;
                for (int a = 0; a < test.n_ages(); ++a) {
                    const DmResult r = dm_test(ea.row(a).transpose(), eb.row(a).transpose(), 1);
                    csv << test.ages[static_cast<std::size_t>(a)] << a_name + " vs " + b_name
                        << r.statistic << r.p_value << (r.degenerate ? 1 : 0);
                    csv.end_row();
                    below += !r.degenerate && r.p_value < 0.05;
                }
                summary["dm_share_below_0.05"][a_name + " vs " + b_name] =
                    static_cast<double>(below) / test.n_ages();
            }
        }
        {
            std::vector<std::string> names{"Average", "AIC", "SHAP"};
            for (double a : small_alpha_grid()) {
                names.push_back(shap_label(a));
            }
            std::vector<Eigen::MatrixXd> forecasts;
            for (const std::string &n : names) {
                forecasts.push_back(point_of(n));
            }
            const Eigen::MatrixXd std_mse = age_stratified_mse(forecasts, test);
            const std::vector<AgeGroup> groups = hmd_age_groups(test.ages);
            CsvWriter csv(dir_ / "age_mse.csv", {"group", "method", "std_mse"});
            for (std::size_t g = 0; g < groups.size(); ++g) {
                for (std::size_t m = 0; m < names.size(); ++m) {
                    csv << groups[g].name() << names[m]
                        << std_mse(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(m));
                    csv.end_row();
                }
            }
        }
        {
            const std::vector<int> counts = selection_frequency(rep, cfg_.selection_alpha);
            CsvWriter csv(dir_ / "selection.csv", {"country", "model", "count"});
            for (int i = 0; i < rep.n_models(); ++i) {
                csv << source_.key() << label(rep.models[static_cast<std::size_t>(i)])
                    << counts[static_cast<std::size_t>(i)];
                csv.end_row();
                summary["selection_frequency"][std::string(label(rep.models[static_cast<std::size_t>(i)]))] =
                    counts[static_cast<std::size_t>(i)];
            }
        }
        {
            CsvWriter csv(dir_ / "decomposition.csv",
                          {"method", "horizon", "bias_sq", "variance", "noise", "mse"});
            const std::vector<std::pair<std::string, std::vector<WeightVector>>> schemes{
                {"Average", {WeightVector::equal(test.models)}},
                {"SHAP", shap_weights_by_age(rep, 0.0, cfg_.aggregate_ages)},
                {shap_label(0.5), shap_weights_by_age(rep, 0.5, cfg_.aggregate_ages)}};
            for (const auto &[name, w] : schemes) {
                for (int h = 1; h < max_h; ++h) {
                    const DecompositionReport d = decompose_panel(test, w, h);
                    csv << name << h << d.bias_sq << d.variance << d.noise << d.total();
                    csv.end_row();
                }
            }
        }
        std::ofstream(dir_ / "summary.json") << summary.dump(2) << '\n';
    }

    const RunConfig &cfg_;
    const PopulationSource &source_;
    const PopulationSource *partner_source_;
    const RunOptions &options_;
    std::mutex &log_mutex_;
    fs::path dir_;
    std::optional<MortalitySurface> surface_;
    std::optional<MortalitySurface> partner_;
    bool partial_ = false;
    bool stale_ = false;
};

/// Cross-population tables in the layout of the published MSE tables.
void write_root_tables(const RunConfig &cfg) {
    std::vector<std::string> methods{"Average", "AIC", "SHAP"};
    const std::string tuned = cfg.alpha_mode == AlphaMode::fixed ? shap_label(*cfg.alpha_value)
                                                                 : "SHAP α=grid";
    methods.push_back(tuned);
    if (tuned != shap_label(0.5)) {
        methods.push_back(shap_label(0.5));
    }
    // country -> gender -> method -> horizon -> mse_x100
    std::map<std::string, std::map<std::string, std::map<std::string, std::map<int, double>>>>
        values;
    std::ostringstream selection;
    selection << "country,model,count\n";
    bool any = false;
    for (const PopulationSource &p : cfg.populations) {
        const fs::path dir = cfg.output_dir / p.key();
        if (!fs::exists(dir / "scores.csv") || !fs::exists(dir / "selection.csv")) {
            continue;
        }
        any = true;
        const CsvTable scores = read_csv(dir / "scores.csv");
        for (const auto &r : scores.rows) {
            values[p.country][to_string(p.gender)][r[static_cast<std::size_t>(scores.column("method"))]]
                  [std::stoi(r[static_cast<std::size_t>(scores.column("horizon"))])] =
                std::stod(r[static_cast<std::size_t>(scores.column("mse_x100"))]);
        }
        std::ifstream in(dir / "selection.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            selection << line << '\n';
        }
    }
    if (!any) {
        return;
    }
    std::ostringstream table;
    table << "horizon,country";
    for (const std::string &m : methods) {
        table << ',' << m << " F," << m << " M";
    }
    table << '\n';
    for (int h : {1, 6, 10}) {
        for (const auto &[country, by_gender] : values) {
            table << h << ',' << country;
            for (const std::string &m : methods) {
                for (const char *g : {"F", "M"}) {
                    table << ',';
                    const auto gi = by_gender.find(g);
                    if (gi == by_gender.end()) {
                        continue;
                    }
                    const auto mi = gi->second.find(m);
                    if (mi == gi->second.end() || mi->second.count(h) == 0) {
                        continue;
                    }
                    table << format_real(mi->second.at(h));
                }
            }
            table << '\n';
        }
    }
    write_if_changed(cfg.output_dir / "table_mse_x100.csv", table.str());
    write_if_changed(cfg.output_dir / "selection_frequency.csv", selection.str());
}

} // namespace

AlphaMode parse_alpha_mode(std::string_view text) {
    if (text == "fixed") {
        return AlphaMode::fixed;
    }
    if (text == "small_grid") {
        return AlphaMode::small_grid;
    }
    if (text == "fine_grid") {
        return AlphaMode::fine_grid;
    }
    throw std::invalid_argument("unknown alpha_mode '" + std::string(text) + "'");
}

std::string_view to_string(AlphaMode mode) {
    switch (mode) {
    case AlphaMode::fixed:
        return "fixed";
    case AlphaMode::small_grid:
        return "small_grid";
    case AlphaMode::fine_grid:
        return "fine_grid";
    }
    return "";
}

std::string_view to_string(Stage stage) {
    switch (stage) {
    case Stage::fit:
        return "fit";
    case Stage::forecast:
        return "forecast";
    case Stage::shap:
        return "shap";
    case Stage::combine:
        return "combine";
    case Stage::evaluate:
        return "evaluate";
    }
    return "";
}

std::string PopulationSource::key() const { return country + "_" + to_string(gender); }

std::string shap_label(double alpha) {
    std::ostringstream s;
    s << "SHAP α=" << std::setprecision(6) << alpha * 100.0 << "%";
    return s.str();
}

void RunConfig::set(const std::string &raw_key, const std::string &raw_value,
                    const fs::path &base) {
    const std::string key = trim(raw_key);
    const std::string value = trim(raw_value);
    auto path_of = [&](const std::string &p) {
        const fs::path path(trim(p));
        return path.is_absolute() || base.empty() ? path : base / path;
    };
    auto population = [&](const std::string &rest) -> PopulationSource & {
        const auto dot = rest.rfind('.');
        if (dot == std::string::npos || dot == 0) {
            throw std::invalid_argument(key + ": expected <country>.<F|M>");
        }
        const std::string country = rest.substr(0, dot);
        const Gender gender = parse_gender(rest.substr(dot + 1));
        for (PopulationSource &p : populations) {
            if (p.country == country && p.gender == gender) {
                return p;
            }
        }
        populations.push_back({country, gender, {}, {}, {}});
        return populations.back();
    };
    try {
        if (key.rfind("population.", 0) == 0) {
            PopulationSource &p = population(key.substr(11));
            p.rates = path_of(value);
            p.deaths.clear();
            p.exposures.clear();
        } else if (key.rfind("counts.", 0) == 0) {
            const auto comma = value.find(',');
            if (comma == std::string::npos) {
                throw std::invalid_argument("expected '<deaths file>, <exposures file>'");
            }
            PopulationSource &p = population(key.substr(7));
            p.rates.clear();
            p.deaths = path_of(value.substr(0, comma));
            p.exposures = path_of(value.substr(comma + 1));
        } else if (key == "split.train") {
            split.train = parse_years(value);
        } else if (key == "split.validation") {
            split.validation = parse_years(value);
        } else if (key == "split.test") {
            split.test = parse_years(value);
        } else if (key == "models") {
            models = parse_model_list(value == "all" ? "" : value);
        } else if (key == "alpha_mode") {
            alpha_mode = parse_alpha_mode(value);
        } else if (key == "alpha_value") {
            alpha_value = value.empty() ? std::nullopt : std::optional<double>(parse_real(key, value));
        } else if (key == "selection_alpha") {
            selection_alpha = parse_real(key, value);
        } else if (key == "theta") {
            theta = parse_real(key, value);
        } else if (key == "trim_d") {
            trim_d = value.empty() ? std::nullopt
                                   : std::optional<int>(static_cast<int>(parse_integer(key, value)));
        } else if (key == "n_paths") {
            n_paths = static_cast<int>(parse_integer(key, value));
        } else if (key == "seed") {
            seed = static_cast<std::uint64_t>(parse_integer(key, value));
        } else if (key == "game_mode") {
            game_mode = parse_game_mode(value);
        } else if (key == "aggregate_ages") {
            aggregate_ages = parse_bool(value);
        } else if (key == "max_iterations") {
            max_iterations = static_cast<int>(parse_integer(key, value));
        } else if (key == "tolerance") {
            tolerance = parse_real(key, value);
        } else if (key == "fpca_components") {
            fpca_components = static_cast<int>(parse_integer(key, value));
        } else if (key == "output_dir") {
            output_dir = path_of(value);
        } else {
            throw std::invalid_argument("unknown setting");
        }
    } catch (const std::invalid_argument &e) {
        throw std::invalid_argument("config key '" + key + "': " + e.what());
    } catch (const std::out_of_range &) {
        throw std::invalid_argument("config key '" + key + "': value out of range");
    }
}

void RunConfig::validate() const {
    split.validate();
    if (populations.empty()) {
        throw std::invalid_argument("config lists no populations");
    }
    for (const PopulationSource &p : populations) {
        for (const fs::path &f : {p.rates, p.deaths, p.exposures}) {
            if (!f.empty() && !fs::exists(f)) {
                throw std::invalid_argument("population " + p.key() + ": file not found: " +
                                            f.string());
            }
        }
    }
    if (models.size() < 2) {
        throw std::invalid_argument("at least two models are needed for an ensemble");
    }
    if (std::find(models.begin(), models.end(), ModelId::pr) != models.end()) {
        for (const PopulationSource &p : populations) {
            const bool paired = std::any_of(populations.begin(), populations.end(), [&](const auto &q) {
                return q.country == p.country && q.gender != p.gender;
            });
            if (!paired) {
                throw std::invalid_argument("model pr needs both genders of population " +
                                            p.country + "; add the other gender or drop pr");
            }
        }
    }
    if ((alpha_mode == AlphaMode::fixed) != alpha_value.has_value()) {
        throw std::invalid_argument("alpha_value is required with alpha_mode = fixed and only then");
    }
    if (alpha_value && !(*alpha_value >= 0.0 && *alpha_value < 1.0)) {
        throw std::invalid_argument("alpha_value must lie in [0, 1)");
    }
    if (!(theta > 0.0 && theta < 1.0)) {
        throw std::invalid_argument("theta must lie in (0, 1)");
    }
    if (n_paths < 1) {
        throw std::invalid_argument("n_paths must be at least 1");
    }
    if (trim_d && *trim_d < 0) {
        throw std::invalid_argument("trim_d must be non-negative");
    }
}

std::string RunConfig::dump() const {
    std::ostringstream out;
    std::vector<const PopulationSource *> sorted;
    for (const PopulationSource &p : populations) {
        sorted.push_back(&p);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const auto *a, const auto *b) { return a->key() < b->key(); });
    for (const PopulationSource *p : sorted) {
        if (!p->rates.empty()) {
            out << "population." << p->country << '.' << to_string(p->gender) << " = "
                << fs::absolute(p->rates).lexically_normal().string() << '\n';
        } else {
            out << "counts." << p->country << '.' << to_string(p->gender) << " = "
                << fs::absolute(p->deaths).lexically_normal().string() << ", "
                << fs::absolute(p->exposures).lexically_normal().string() << '\n';
        }
    }
    out << "split.train = " << format_years(split.train) << '\n'
        << "split.validation = " << format_years(split.validation) << '\n'
        << "split.test = " << format_years(split.test) << '\n'
        << "models = " << join_models(models) << '\n'
        << "alpha_mode = " << to_string(alpha_mode) << '\n'
        << "alpha_value = " << (alpha_value ? format_real(*alpha_value) : std::string()) << '\n'
        << "selection_alpha = " << format_real(selection_alpha) << '\n'
        << "theta = " << format_real(theta) << '\n'
        << "trim_d = " << (trim_d ? std::to_string(*trim_d) : std::string()) << '\n'
        << "n_paths = " << n_paths << '\n'
        << "seed = " << seed << '\n'
        << "game_mode = " << to_string(game_mode) << '\n'
        << "aggregate_ages = " << (aggregate_ages ? "true" : "false") << '\n'
        << "max_iterations = " << max_iterations << '\n'
        << "tolerance = " << format_real(tolerance) << '\n'
        << "fpca_components = " << fpca_components << '\n'
        << "output_dir = " << fs::absolute(output_dir).lexically_normal().string() << '\n';
    return out.str();
}

int RunConfig::trim_for(int n_models) const {
    if (trim_d) {
        return *trim_d;
    }
    const int d = static_cast<int>(std::floor(n_models * theta + 1e-9));
    return std::min(d, (n_models - 1) / 2);
}

FitOptions RunConfig::fit_options() const {
    FitOptions fo;
    fo.max_iterations = max_iterations;
    fo.tolerance = tolerance;
    fo.fpca_components = fpca_components;
    return fo;
}

RunConfig load_config(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw std::invalid_argument("cannot read config " + path.string());
    }
    RunConfig cfg;
    const fs::path base = fs::absolute(path).parent_path();
    cfg.output_dir = base / "mortens_out";
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        if (trim(line).empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(path.string(), row, 1, "expected 'key = value'");
        }
        cfg.set(line.substr(0, eq), line.substr(eq + 1), base);
    }
    return cfg;
}

std::vector<Stage> pipeline_stages() {
    return {Stage::forecast, Stage::shap, Stage::combine, Stage::evaluate};
}

RunStatus run_stages(const RunConfig &cfg, const std::vector<Stage> &stages,
                     const RunOptions &options) {
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    write_if_changed(cfg.output_dir / "config.resolved", cfg.dump());

    std::mutex log_mutex;
    std::vector<RunStatus> status(cfg.populations.size(), RunStatus::ok);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < cfg.populations.size(); i = next++) {
            const PopulationSource &p = cfg.populations[i];
            const PopulationSource *partner = nullptr;
            for (const PopulationSource &q : cfg.populations) {
                if (q.country == p.country && q.gender != p.gender) {
                    partner = &q;
                }
            }
            Job job(cfg, p, partner, options, log_mutex);
            status[i] = job.run(stages);
        }
    };
    const int n_threads =
        std::max(1, std::min(options.jobs, static_cast<int>(cfg.populations.size())));
    std::vector<std::thread> threads;
    for (int t = 1; t < n_threads; ++t) {
        threads.emplace_back(worker);
    }
    worker();
    for (std::thread &t : threads) {
        t.join();
    }
    if (std::find(stages.begin(), stages.end(), Stage::evaluate) != stages.end()) {
        write_root_tables(cfg);
    }
    RunStatus overall = RunStatus::ok;
    for (RunStatus s : status) {
        if (s == RunStatus::failed) {
            return RunStatus::failed;
        }
        if (s == RunStatus::partial) {
            overall = RunStatus::partial;
        }
    }
    return overall;
}

} // namespace mortens
