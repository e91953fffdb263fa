#include "internal.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mortens {

namespace {

constexpr std::array<std::string_view, 15> kLabels{
    "lc",     "rh",      "apc",     "cbd",      "m6",  "m7",         "m8", "plat",
    "lca_dt", "lca_dxt", "lca_e0", "lca_none", "fdm", "robust_fdm", "pr",
};

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

long double weighted_cohort_sum(const ModelFit &fit, int power) {
    long double total = 0.0L;
    for (Eigen::Index c = 0; c < fit.gamma.size(); ++c) {
        const long double year = fit.first_cohort + static_cast<long double>(c);
        long double w = 1.0L;
        for (int p = 0; p < power; ++p) {
            w *= year;
        }
        total += w * fit.gamma(c);
    }
    return total;
}

} // namespace

std::string_view label(ModelId model) { return kLabels[static_cast<std::size_t>(model)]; }

ModelId parse_model_id(std::string_view text) {
    for (std::size_t i = 0; i < kLabels.size(); ++i) {
        if (kLabels[i] == text) {
            return kAllModels[i];
        }
    }
    throw std::invalid_argument("unknown model '" + std::string(text) + "'");
}

std::vector<ModelId> parse_model_list(std::string_view text) {
    if (text.empty()) {
        return {kAllModels.begin(), kAllModels.end()};
    }
    std::vector<ModelId> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::size_t end = comma == std::string_view::npos ? text.size() : comma;
        std::string_view token = text.substr(start, end - start);
        while (!token.empty() && token.front() == ' ') {
            token.remove_prefix(1);
        }
        while (!token.empty() && token.back() == ' ') {
            token.remove_suffix(1);
        }
        const ModelId id = parse_model_id(token);
        if (std::find(out.begin(), out.end(), id) != out.end()) {
            throw std::invalid_argument("model '" + std::string(token) + "' listed twice");
        }
        out.push_back(id);
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

Eigen::MatrixXd ModelFit::fitted_log_rates() const {
    Eigen::MatrixXd eta = alpha.replicate(1, n_years());
    for (std::size_t k = 0; k < beta.size(); ++k) {
        eta.noalias() += beta[k] * kappa[k].transpose();
    }
    if (has_cohort()) {
        for (int j = 0; j < n_years(); ++j) {
            for (int i = 0; i < n_ages(); ++i) {
                const int c = years[static_cast<std::size_t>(j)] - ages[static_cast<std::size_t>(i)];
                eta(i, j) += cohort_loading(i) * cohort_effect(c);
            }
        }
    }
    return eta;
}

ModelFit fit(ModelId model, const MortalitySurface &train, const FitOptions &options) {
    if (train.n_years() < kMinTrainingYears) {
        throw FitError(std::string(label(model)) + ": needs at least " +
                       std::to_string(kMinTrainingYears) + " training years, got " +
                       std::to_string(train.n_years()));
    }
    if (train.n_ages() < 3) {
        throw FitError(std::string(label(model)) + ": needs at least 3 ages");
    }
    ModelFit out;
    switch (model) {
    case ModelId::lca_dt:
    case ModelId::lca_dxt:
    case ModelId::lca_e0:
    case ModelId::lca_none:
        out = detail::fit_lca(model, train, options);
        break;
    case ModelId::fdm:
    case ModelId::robust_fdm:
    case ModelId::pr:
        out = detail::fit_functional(model, train, options);
        break;
    default:
        out = detail::fit_poisson(model, train, options);
        break;
    }
    detail::estimate_dynamics(out);
    return out;
}

std::vector<std::pair<std::string, double>> constraint_residuals(const ModelFit &fit) {
    std::vector<std::pair<std::string, double>> out;
    auto beta_sum = [&](std::size_t k) {
        out.emplace_back("sum_beta" + std::to_string(k + 1) + " - 1", fit.beta[k].sum() - 1.0);
    };
    auto kappa_sum = [&](std::size_t k) {
        out.emplace_back("sum_kappa" + std::to_string(k + 1), fit.kappa[k].sum());
    };
    auto gamma_sum = [&](int power) {
        static const char *names[] = {"sum_gamma", "sum_c_gamma", "sum_c2_gamma"};
        out.emplace_back(names[power], static_cast<double>(weighted_cohort_sum(fit, power)));
    };
    switch (fit.model) {
    case ModelId::lc:
    case ModelId::lca_dt:
    case ModelId::lca_e0:
    case ModelId::lca_none:
        beta_sum(0);
        kappa_sum(0);
        break;
    case ModelId::lca_dxt:
        beta_sum(0);
        beta_sum(1);
        kappa_sum(0);
        kappa_sum(1);
        break;
    case ModelId::rh:
        beta_sum(0);
        kappa_sum(0);
        out.emplace_back("sum_beta0 - 1", fit.cohort_loading.sum() - 1.0);
        gamma_sum(0);
        break;
    case ModelId::apc:
        kappa_sum(0);
        gamma_sum(0);
        gamma_sum(1);
        break;
    case ModelId::m6:
        gamma_sum(0);
        gamma_sum(1);
        break;
    case ModelId::m7:
        gamma_sum(0);
        gamma_sum(1);
        gamma_sum(2);
        break;
    case ModelId::m8:
        gamma_sum(0);
        break;
    case ModelId::plat:
        kappa_sum(0);
        kappa_sum(1);
        kappa_sum(2);
        gamma_sum(0);
        gamma_sum(1);
        gamma_sum(2);
        break;
    case ModelId::cbd:
        break;
    case ModelId::fdm:
    case ModelId::robust_fdm:
    case ModelId::pr:
        for (const Fpca *f : {fit.fpca ? &*fit.fpca : nullptr,
                              fit.ratio_fpca ? &*fit.ratio_fpca : nullptr}) {
            if (f == nullptr) {
                continue;
            }
            const Eigen::MatrixXd gram = f->basis.transpose() * f->basis;
            const double off = (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols()))
                                   .cwiseAbs()
                                   .maxCoeff();
            out.emplace_back(f == &*fit.fpca ? "basis_orthonormality" : "ratio_basis_orthonormality",
                             off);
        }
        break;
    }
    return out;
}

std::uint64_t task_seed(std::uint64_t seed, ModelId model, int origin) {
    const auto key = (static_cast<std::uint64_t>(model) << 32) ^ static_cast<std::uint32_t>(origin);
    return mix(seed ^ mix(key));
}

std::vector<ForecastGrid> expanding_window_run(ModelId model, const MortalitySurface &surface,
                                               const SplitConfig &cfg, Phase phase,
                                               const WindowOptions &options) {
    cfg.validate();
    const YearRange window = phase == Phase::validation ? cfg.validation : cfg.test;
    const int first_origin = window.first - 1;
    if (!surface.year_range().contains(cfg.train.first) ||
        !surface.year_range().contains(window.last)) {
        throw std::invalid_argument("surface does not cover the split years");
    }
    std::vector<ForecastGrid> out;
    for (int origin = first_origin; origin < window.last; ++origin) {
        const int horizons = window.last - origin;
        try {
            const MortalitySurface train = surface.slice_years({cfg.train.first, origin});
            const ModelFit fitted = fit(model, train, options.fit);
            out.push_back(options.intervals
                              ? simulate_intervals(fitted, horizons, options.level,
                                                   options.n_paths,
                                                   task_seed(options.seed, model, origin))
                              : forecast_point(fitted, horizons));
        } catch (const std::exception &e) {
            std::ostringstream msg;
            msg << label(model) << " at origin " << origin << ": " << e.what();
            throw FitError(msg.str());
        }
    }
    return out;
}

} // namespace mortens
