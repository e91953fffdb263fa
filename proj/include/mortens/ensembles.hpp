#pragma once

#include "mortens/shapley.hpp"

#include <optional>

namespace mortens {

enum class PointMethod { shap, shap_truncated, sma, aic, mse };
enum class IntervalMethod { sa, it, aic, mse, shap };

std::string_view to_string(PointMethod method);
std::string_view to_string(IntervalMethod method);
IntervalMethod parse_interval_method(std::string_view text);

/// Default number of endpoints trimmed from each side by interior trimming.
inline constexpr int kDefaultTrim = 3;

struct IntervalEnsembleSpec {
    IntervalMethod method = IntervalMethod::sa;
    int trim_d = kDefaultTrim;
    double theta = 0.2;
    std::optional<double> alpha;

    /// Throws unless 0 <= trim_d < n_models / 2 and theta lies in (0, 1).
    void validate(int n_models) const;
};

/// Weighted combination of one value per model.
double combine_values(const Eigen::VectorXd &values, const Eigen::VectorXd &weights);

/// Log-scale combination of the panel's point forecasts (a weighted geometric
/// mean of rates), one weight vector per age. Returns ages x cells.
Eigen::MatrixXd combine_point(const ForecastPanel &panel,
                              const std::vector<WeightVector> &by_age);
Eigen::MatrixXd combine_point(const ForecastPanel &panel, const WeightVector &weights);

/// Gaussian AIC n ln(RSS / n) + 2k of each model's log-rate residuals over
/// every panel cell, with k the model's free parameter count.
std::vector<double> panel_aic(const ForecastPanel &panel);

/// Weights proportional to |AIC| over the models whose AIC is negative.
/// Throws when no model qualifies; fall back to equal weights in that case.
WeightVector aic_weights(const std::vector<ModelId> &models, const std::vector<double> &aic);

/// Mean squared log-rate error of each model over every panel cell.
std::vector<double> panel_mse(const ForecastPanel &panel);

/// Softmax weights exp(-MSE_i) / sum_j exp(-MSE_j).
WeightVector mse_weights(const std::vector<ModelId> &models, const std::vector<double> &mse);

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

/// Combines the endpoints of one cell. Weighted methods use `weights`
/// (aligned with the endpoint vectors); sa and it ignore it.
Interval combine_interval(const Eigen::VectorXd &lower, const Eigen::VectorXd &upper,
                          IntervalMethod method, const Eigen::VectorXd &weights = {},
                          int trim_d = kDefaultTrim);

struct CombinedIntervals {
    Eigen::MatrixXd lower;
    Eigen::MatrixXd upper;
};

/// Combines every cell of the panel; `by_age` is required for aic, mse and
/// shap, one entry per age or a single entry shared by all ages.
CombinedIntervals combine_intervals(const ForecastPanel &panel, const IntervalEnsembleSpec &spec,
                                    const std::vector<WeightVector> &by_age = {});

} // namespace mortens
