#include "mortens/ensembles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace mortens {

namespace {

/// Panel-ordered weights; models absent from `w` get zero.
Eigen::VectorXd aligned(const ForecastPanel &panel, const WeightVector &w) {
    if (static_cast<Eigen::Index>(w.models.size()) != w.weights.size()) {
        throw std::invalid_argument("weight vector has mismatched models and weights");
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(panel.n_models());
    for (std::size_t i = 0; i < w.models.size(); ++i) {
        const double value = w.weights(static_cast<Eigen::Index>(i));
        if (value == 0.0) {
            continue;
        }
        const auto it = std::find(panel.models.begin(), panel.models.end(), w.models[i]);
        if (it == panel.models.end()) {
            throw std::invalid_argument("weighted model '" + std::string(label(w.models[i])) +
                                        "' has no forecasts");
        }
        out(it - panel.models.begin()) = value;
    }
    return out;
}

std::vector<Eigen::VectorXd> aligned_by_age(const ForecastPanel &panel,
                                            const std::vector<WeightVector> &by_age) {
    if (by_age.size() != 1 && static_cast<int>(by_age.size()) != panel.n_ages()) {
        throw std::invalid_argument("need one weight vector per age or a single shared one, got " +
                                    std::to_string(by_age.size()));
    }
    std::vector<Eigen::VectorXd> out;
    for (const WeightVector &w : by_age) {
        out.push_back(aligned(panel, w));
    }
    return out;
}

const Eigen::VectorXd &for_age(const std::vector<Eigen::VectorXd> &w, int a) {
    return w.size() == 1 ? w.front() : w[static_cast<std::size_t>(a)];
}

std::vector<double> per_model(const ForecastPanel &panel,
                              const std::function<double(double, int)> &reduce) {
    if (panel.n_cells() == 0 || panel.n_ages() == 0) {
        throw std::invalid_argument("panel has no cells");
    }
    std::vector<double> out;
    const double n = static_cast<double>(panel.n_ages()) * panel.n_cells();
    for (int i = 0; i < panel.n_models(); ++i) {
        const double rss = (panel.truth - panel.point[static_cast<std::size_t>(i)]).squaredNorm();
        out.push_back(reduce(rss / n, panel.n_params[static_cast<std::size_t>(i)]));
    }
    return out;
}

WeightVector from_raw(const std::vector<ModelId> &models, const std::vector<double> &raw) {
    WeightVector out;
    out.models = models;
    out.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(models.size()));
    double total = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] > 0.0) {
            out.weights(static_cast<Eigen::Index>(i)) = raw[i];
            out.selected.push_back(models[i]);
            total += raw[i];
        }
    }
    out.weights /= total;
    return out;
}

} // namespace

std::string_view to_string(PointMethod method) {
    switch (method) {
    case PointMethod::shap:
        return "shap";
    case PointMethod::shap_truncated:
        return "shap_truncated";
    case PointMethod::sma:
        return "sma";
    case PointMethod::aic:
        return "aic";
    case PointMethod::mse:
        return "mse";
    }
    return "";
}

std::string_view to_string(IntervalMethod method) {
    switch (method) {
    case IntervalMethod::sa:
        return "sa";
    case IntervalMethod::it:
        return "it";
    case IntervalMethod::aic:
        return "aic";
    case IntervalMethod::mse:
        return "mse";
    case IntervalMethod::shap:
        return "shap";
    }
    return "";
}

IntervalMethod parse_interval_method(std::string_view text) {
    for (IntervalMethod m : {IntervalMethod::sa, IntervalMethod::it, IntervalMethod::aic,
                             IntervalMethod::mse, IntervalMethod::shap}) {
        if (to_string(m) == text) {
            return m;
        }
    }
    throw std::invalid_argument("unknown interval method '" + std::string(text) + "'");
}

void IntervalEnsembleSpec::validate(int n_models) const {
    if (trim_d < 0 || 2 * trim_d >= n_models) {
        throw std::invalid_argument("trim count " + std::to_string(trim_d) +
                                    " must satisfy 0 <= d < N/2 with N = " +
                                    std::to_string(n_models));
    }
    if (!(theta > 0.0 && theta < 1.0)) {
        throw std::invalid_argument("theta must lie in (0, 1)");
    }
}

double combine_values(const Eigen::VectorXd &values, const Eigen::VectorXd &weights) {
    if (values.size() != weights.size()) {
        throw std::invalid_argument("values and weights differ in length");
    }
    return values.dot(weights);
}

Eigen::MatrixXd combine_point(const ForecastPanel &panel,
                              const std::vector<WeightVector> &by_age) {
    const std::vector<Eigen::VectorXd> w = aligned_by_age(panel, by_age);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(panel.n_ages(), panel.n_cells());
    for (int i = 0; i < panel.n_models(); ++i) {
        const Eigen::MatrixXd &f = panel.point[static_cast<std::size_t>(i)];
        for (int a = 0; a < panel.n_ages(); ++a) {
            const double wi = for_age(w, a)(i);
            if (wi == 0.0) {
                continue;
            }
            for (int c = 0; c < panel.n_cells(); ++c) {
                if (!std::isfinite(f(a, c))) {
                    throw std::invalid_argument(
                        "model '" + std::string(label(panel.models[static_cast<std::size_t>(i)])) +
                        "' has no forecast at age " +
                        std::to_string(panel.ages[static_cast<std::size_t>(a)]) + ", horizon " +
                        std::to_string(panel.cell_horizon[static_cast<std::size_t>(c)]));
                }
                out(a, c) += wi * f(a, c);
            }
        }
    }
    return out;
}

Eigen::MatrixXd combine_point(const ForecastPanel &panel, const WeightVector &weights) {
    return combine_point(panel, std::vector<WeightVector>{weights});
}

std::vector<double> panel_aic(const ForecastPanel &panel) {
    const double n = static_cast<double>(panel.n_ages()) * panel.n_cells();
    return per_model(panel, [n](double mse, int k) { return n * std::log(mse) + 2.0 * k; });
}

WeightVector aic_weights(const std::vector<ModelId> &models, const std::vector<double> &aic) {
    if (models.size() != aic.size() || models.empty()) {
        throw std::invalid_argument("one AIC value per model expected");
    }
    std::vector<double> raw;
    for (double v : aic) {
        raw.push_back(v < 0.0 ? -v : 0.0);
    }
    if (std::none_of(raw.begin(), raw.end(), [](double v) { return v > 0.0; })) {
        throw std::invalid_argument("no model has a negative AIC; use equal weights instead");
    }
    return from_raw(models, raw);
}

std::vector<double> panel_mse(const ForecastPanel &panel) {
    return per_model(panel, [](double mse, int) { return mse; });
}

WeightVector mse_weights(const std::vector<ModelId> &models, const std::vector<double> &mse) {
    if (models.size() != mse.size() || models.empty()) {
        throw std::invalid_argument("one MSE value per model expected");
    }
    // Shifting by the smallest MSE leaves the ratios unchanged and avoids underflow.
    const double lowest = *std::min_element(mse.begin(), mse.end());
    std::vector<double> raw;
    for (double v : mse) {
        if (!(v >= 0.0)) {
            throw std::invalid_argument("MSE values must be nonnegative");
        }
        raw.push_back(std::exp(-(v - lowest)));
    }
    return from_raw(models, raw);
}

Interval combine_interval(const Eigen::VectorXd &lower, const Eigen::VectorXd &upper,
                          IntervalMethod method, const Eigen::VectorXd &weights, int trim_d) {
    const Eigen::Index n = lower.size();
    if (n == 0 || upper.size() != n) {
        throw std::invalid_argument("lower and upper endpoints must be nonempty and paired");
    }
    Interval out;
    switch (method) {
    case IntervalMethod::sa:
        out = {lower.mean(), upper.mean()};
        break;
    case IntervalMethod::it: {
        if (trim_d < 0 || 2 * trim_d >= n) {
            throw std::invalid_argument("trim count must satisfy 0 <= d < N/2");
        }
        std::vector<double> lo(lower.data(), lower.data() + n);
        std::vector<double> hi(upper.data(), upper.data() + n);
        std::sort(lo.begin(), lo.end());
        std::sort(hi.begin(), hi.end());
        double sum_lo = 0.0;
        double sum_hi = 0.0;
        for (Eigen::Index i = 0; i < n - trim_d; ++i) {
            sum_lo += lo[static_cast<std::size_t>(i)];
            sum_hi += hi[static_cast<std::size_t>(i + trim_d)];
        }
        out = {sum_lo / static_cast<double>(n - trim_d), sum_hi / static_cast<double>(n - trim_d)};
        break;
    }
    case IntervalMethod::aic:
    case IntervalMethod::mse:
    case IntervalMethod::shap:
        if (weights.size() != n) {
            throw std::invalid_argument(std::string(to_string(method)) +
                                        " interval combination needs one weight per model");
        }
        out = {lower.dot(weights), upper.dot(weights)};
        if (!(out.lower < out.upper)) {
            throw std::invalid_argument(std::string(to_string(method)) +
                                        " combination gives lower >= upper");
        }
        break;
    }
    return out;
}

CombinedIntervals combine_intervals(const ForecastPanel &panel, const IntervalEnsembleSpec &spec,
                                    const std::vector<WeightVector> &by_age) {
    if (!panel.has_intervals()) {
        throw std::invalid_argument("panel has no interval forecasts");
    }
    spec.validate(panel.n_models());
    const bool weighted = spec.method != IntervalMethod::sa && spec.method != IntervalMethod::it;
    std::vector<Eigen::VectorXd> w;
    if (weighted) {
        w = aligned_by_age(panel, by_age);
    }
    CombinedIntervals out;
    out.lower.resize(panel.n_ages(), panel.n_cells());
    out.upper.resize(panel.n_ages(), panel.n_cells());
    Eigen::VectorXd lo(panel.n_models());
    Eigen::VectorXd hi(panel.n_models());
    const Eigen::VectorXd none;
    for (int a = 0; a < panel.n_ages(); ++a) {
        for (int c = 0; c < panel.n_cells(); ++c) {
            for (int i = 0; i < panel.n_models(); ++i) {
                lo(i) = panel.lower[static_cast<std::size_t>(i)](a, c);
                hi(i) = panel.upper[static_cast<std::size_t>(i)](a, c);
            }
            Interval cell;
            try {
                cell = combine_interval(lo, hi, spec.method, weighted ? for_age(w, a) : none,
                                        spec.trim_d);
            } catch (const std::invalid_argument &e) {
                throw std::invalid_argument(
                    std::string(e.what()) + " at age " +
                    std::to_string(panel.ages[static_cast<std::size_t>(a)]) + ", origin " +
                    std::to_string(panel.cell_origin[static_cast<std::size_t>(c)]) +
                    ", horizon " + std::to_string(panel.cell_horizon[static_cast<std::size_t>(c)]));
            }
            out.lower(a, c) = cell.lower;
            out.upper(a, c) = cell.upper;
        }
    }
    return out;
}

} // namespace mortens
