#include "mortens/eval.hpp"
#include "mortens/pipeline.hpp"
#include "mortens/synth.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace mortens;

namespace {

std::vector<ModelId> first_models(Eigen::Index n) {
    if (n < 1 || n > static_cast<Eigen::Index>(kAllModels.size())) {
        throw std::invalid_argument("between 1 and 15 models expected");
    }
    return {kAllModels.begin(), kAllModels.begin() + n};
}

/// One-age panel whose cells are the rows of `forecasts` (cells x models).
ForecastPanel single_age_panel(const Eigen::VectorXd &truth, const Eigen::MatrixXd &forecasts) {
    if (truth.size() != forecasts.rows()) {
        throw std::invalid_argument("truth and forecasts need the same number of rows");
    }
    ForecastPanel p;
    p.models = first_models(forecasts.cols());
    p.ages = {0};
    p.truth = truth.transpose();
    for (Eigen::Index c = 0; c < truth.size(); ++c) {
        p.cell_origin.push_back(static_cast<int>(c));
        p.cell_horizon.push_back(1);
    }
    for (Eigen::Index i = 0; i < forecasts.cols(); ++i) {
        p.point.push_back(forecasts.col(i).transpose());
        p.n_params.push_back(0);
    }
    return p;
}

MortalitySurface make_surface(std::vector<int> ages, std::vector<int> years,
                              const Eigen::MatrixXd &deaths, const Eigen::MatrixXd &exposures,
                              const std::string &gender, const std::string &id) {
    return {std::move(ages), std::move(years), deaths, exposures, parse_gender(gender), id};
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Mortality forecasting models combined with Shapley-value weights";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);

    m.def("model_labels", [] {
        std::vector<std::string> out;
        for (ModelId id : kAllModels) {
            out.emplace_back(label(id));
        }
        return out;
    });

    py::class_<MortalitySurface>(m, "Surface")
        .def(py::init(&make_surface), py::arg("ages"), py::arg("years"), py::arg("deaths"),
             py::arg("exposures"), py::arg("gender") = "F", py::arg("population_id") = "PY")
        .def_static(
            "from_rates",
            [](std::vector<int> ages, std::vector<int> years, const Eigen::MatrixXd &rates,
               const std::string &gender, const std::string &id) {
                return MortalitySurface::from_rates(std::move(ages), std::move(years), rates,
                                                    parse_gender(gender), id);
            },
            py::arg("ages"), py::arg("years"), py::arg("rates"), py::arg("gender") = "F",
            py::arg("population_id") = "PY")
        .def_static(
            "load",
            [](const std::filesystem::path &path, const std::string &gender) {
                return load_surface(path, parse_gender(gender));
            },
            py::arg("path"), py::arg("gender") = "F")
        .def_property_readonly("ages", &MortalitySurface::ages)
        .def_property_readonly("years", &MortalitySurface::years)
        .def_property_readonly("deaths", &MortalitySurface::deaths)
        .def_property_readonly("exposures", &MortalitySurface::exposures)
        .def_property_readonly("rates", &MortalitySurface::rates)
        .def_property_readonly("log_rates", &MortalitySurface::log_rates)
        .def_property_readonly("gender", [](const MortalitySurface &s) { return to_string(s.gender()); })
        .def("slice_years", [](const MortalitySurface &s, int first, int last) {
            return s.slice_years({first, last});
        })
        .def("save", [](const MortalitySurface &s, const std::filesystem::path &path) {
            write_surface(s, path);
        });

    m.def(
        "synthesize",
        [](const std::string &generator, std::uint64_t seed, const std::string &gender,
           std::pair<int, int> years, std::pair<int, int> ages,
           const std::map<std::string, double> &params) {
            GeneratorSpec spec;
            spec.name = generator;
            spec.gender = parse_gender(gender);
            spec.years = {years.first, years.second};
            spec.first_age = ages.first;
            spec.last_age = ages.second;
            spec.params = params;
            return synthesize_surface(spec, seed);
        },
        py::arg("generator") = "lc_rank1", py::arg("seed") = 1, py::arg("gender") = "F",
        py::arg("years") = std::pair<int, int>{1960, 2019},
        py::arg("ages") = std::pair<int, int>{0, 100},
        py::arg("params") = std::map<std::string, double>{});

    py::class_<ModelFit>(m, "Fit")
        .def_property_readonly("model", [](const ModelFit &f) { return std::string(label(f.model)); })
        .def_property_readonly("converged", [](const ModelFit &f) { return f.meta.converged; })
        .def_property_readonly("deviance", [](const ModelFit &f) { return f.meta.deviance; })
        .def_property_readonly("n_params", [](const ModelFit &f) { return f.meta.n_params; })
        .def_property_readonly("iterations", [](const ModelFit &f) { return f.meta.iterations; })
        .def_readonly("alpha", &ModelFit::alpha)
        .def_readonly("beta", &ModelFit::beta)
        .def_readonly("kappa", &ModelFit::kappa)
        .def_readonly("gamma", &ModelFit::gamma)
        .def("fitted_log_rates", &ModelFit::fitted_log_rates)
        .def("constraint_residuals", [](const ModelFit &f) {
            std::map<std::string, double> out;
            for (const auto &[name, value] : constraint_residuals(f)) {
                out[name] = value;
            }
            return out;
        })
        .def(
            "forecast",
            [](const ModelFit &f, int horizons) { return forecast_point(f, horizons).log_point; },
            py::arg("horizons"), "Log point forecasts, ages x horizons")
        .def(
            "intervals",
            [](const ModelFit &f, int horizons, double level, int n_paths, std::uint64_t seed) {
                const ForecastGrid g = simulate_intervals(f, horizons, level, n_paths, seed);
                return py::make_tuple(g.log_lower, g.log_point, g.log_upper);
            },
            py::arg("horizons"), py::arg("level") = 0.8, py::arg("n_paths") = 1000,
            py::arg("seed") = 1, "Log (lower, point, upper), each ages x horizons");

    m.def(
        "fit",
        [](const std::string &model, const MortalitySurface &train,
           const MortalitySurface *partner, int max_iterations) {
            FitOptions opts;
            opts.partner = partner;
            opts.max_iterations = max_iterations;
            py::gil_scoped_release release;
            return fit(parse_model_id(model), train, opts);
        },
        py::arg("model"), py::arg("train"), py::arg("partner") = nullptr,
        py::arg("max_iterations") = 500);

    m.def(
        "shapley_values",
        [](const std::vector<double> &values) {
            std::size_t n = 0;
            while ((std::size_t{1} << n) < values.size()) {
                ++n;
            }
            CoalitionGame g;
            g.players = first_models(static_cast<Eigen::Index>(n));
            g.value = values;
            return shapley_values(g);
        },
        py::arg("values"), "Exact Shapley values of a game tabulated over all 2^n coalitions");

    m.def(
        "combination_game",
        [](const Eigen::VectorXd &truth, const Eigen::MatrixXd &forecasts) {
            return build_game(single_age_panel(truth, forecasts), 0).value;
        },
        py::arg("truth"), py::arg("forecasts"),
        "Worth of every coalition of forecast columns: variance explained by the best "
        "sum-to-one combination");

    m.def(
        "shap_weights",
        [](const Eigen::VectorXd &phi, double alpha) {
            return shap_weights(first_models(phi.size()), min_max_normalize(phi), alpha).weights;
        },
        py::arg("phi"), py::arg("alpha") = 0.0,
        "Min-max scaled contributions truncated at alpha and renormalised");

    m.def(
        "combine_interval",
        [](const Eigen::VectorXd &lower, const Eigen::VectorXd &upper, const std::string &method,
           const Eigen::VectorXd &weights, int trim_d) {
            const Interval iv =
                combine_interval(lower, upper, parse_interval_method(method), weights, trim_d);
            return py::make_tuple(iv.lower, iv.upper);
        },
        py::arg("lower"), py::arg("upper"), py::arg("method") = "sa",
        py::arg("weights") = Eigen::VectorXd(), py::arg("trim_d") = kDefaultTrim);

    m.def("interval_score", &interval_score, py::arg("lower"), py::arg("upper"), py::arg("log_y"),
          py::arg("theta") = 0.2);

    m.def(
        "dm_test",
        [](const Eigen::VectorXd &a, const Eigen::VectorXd &b, int h) {
            const DmResult r = dm_test(a, b, h);
            py::dict out;
            out["statistic"] = r.statistic;
            out["p_value"] = r.p_value;
            out["degenerate"] = r.degenerate;
            return out;
        },
        py::arg("errors_a"), py::arg("errors_b"), py::arg("h") = 1);

    m.def(
        "run",
        [](const std::filesystem::path &config, const std::vector<std::string> &stages,
           bool force, bool allow_partial, int jobs) {
            const RunConfig cfg = load_config(config);
            std::vector<Stage> list;
            for (const std::string &s : stages) {
                bool found = false;
                for (Stage st : {Stage::fit, Stage::forecast, Stage::shap, Stage::combine,
                                 Stage::evaluate}) {
                    if (to_string(st) == s) {
                        list.push_back(st);
                        found = true;
                    }
                }
                if (!found) {
                    throw std::invalid_argument("unknown stage '" + s + "'");
                }
            }
            RunOptions opts;
            opts.force = force;
            opts.allow_partial = allow_partial;
            opts.jobs = jobs;
            py::gil_scoped_release release;
            return static_cast<int>(run_stages(cfg, list, opts));
        },
        py::arg("config"),
        py::arg("stages") = std::vector<std::string>{"forecast", "shap", "combine", "evaluate"},
        py::arg("force") = false, py::arg("allow_partial") = false, py::arg("jobs") = 1,
        "Runs pipeline stages from a config file; returns 0 (ok), 1 (failed) or 2 (partial)");
}
