#pragma once

#include "mortens/ensembles.hpp"

#include <string>

namespace mortens {

struct PointScore {
    double mse = 0.0;
    double mae = 0.0;
    int n_values = 0;
};

/// MSE and MAE of log-rate forecasts (ages x cells) over every age and every
/// cell at horizon `h`. Throws when the panel has no cells at `h`.
PointScore point_scores(const Eigen::MatrixXd &forecast, const ForecastPanel &panel, int h);

/// Interval score (U - L) + (2/theta)(L - y)[y < L] + (2/theta)(y - U)[y > U].
double interval_score(double lower, double upper, double log_y, double theta = 0.2);

/// Interval score averaged over every age and every cell at horizon `h`.
double mean_interval_score(const Eigen::MatrixXd &lower, const Eigen::MatrixXd &upper,
                           const ForecastPanel &panel, int h, double theta = 0.2);

struct DmResult {
    double statistic = 0.0;
    double p_value = 1.0;
    /// Set when the loss differential has no variance; statistic and
    /// p-value are then meaningless.
    bool degenerate = false;
};

/// Diebold-Mariano test on squared loss, d_t = a_t^2 - b_t^2, with a
/// rectangular long-run variance over h - 1 lags. The one-sided p-value is
/// for the alternative that `a` is more accurate, from Student t with n - 1
/// degrees of freedom.
DmResult dm_test(const Eigen::VectorXd &errors_a, const Eigen::VectorXd &errors_b, int h);

struct AgeGroup {
    int first = 0;
    int last = 0;
    std::string name() const;
};

/// 0, 1-4, 5-9, ..., 95-99, 100, limited to the ages present.
std::vector<AgeGroup> hmd_age_groups(const std::vector<int> &ages);

/// MSE of each method within each age group (groups x methods), then scaled
/// per group so the worst method is 1 and the best 0. Groups where every
/// method ties are all 0. `cells` restricts the cells used; empty means all.
Eigen::MatrixXd age_stratified_mse(const std::vector<Eigen::MatrixXd> &forecasts,
                                   const ForecastPanel &panel,
                                   const std::vector<int> &cells = {});

/// Number of ages at which each model is in S(alpha).
std::vector<int> selection_frequency(const ShapReport &report, double alpha);

/// Squared bias, (co)variance and noise of a weighted combination.
struct DecompositionReport {
    double bias_sq = 0.0;
    double variance = 0.0;
    double noise = 0.0;
    /// Estimation-variance and weight-bias terms for estimated weights.
    double estimation_variance = 0.0;
    double weight_bias = 0.0;
    /// E[w_hat] - w*, when a reference solution was supplied.
    Eigen::VectorXd weight_gap;
    Eigen::VectorXd optimal_weights;

    double total() const { return bias_sq + variance + noise; }
};

/// Replicated forecasts of one target: rows are replications, columns models.
struct ReplicatedCell {
    Eigen::MatrixXd forecasts;
    double target = 0.0;
};

/// Averages over cells of (w'E[f] - y)^2 and w' Cov(f) w, with moments taken
/// over replications (divisor R). `noise` is the known irreducible variance.
DecompositionReport decompose_mse(const Eigen::VectorXd &weights,
                                  const std::vector<ReplicatedCell> &cells, double noise = 0.0);

/// Least-squares combination of centred forecasts (rows are observations).
struct RegressionSolution {
    Eigen::VectorXd weights;
    /// Within-sample covariance of the forecasts (divisor n).
    Eigen::MatrixXd covariance;
    /// Conditional MSE at the solution.
    double noise = 0.0;
};

RegressionSolution regression_weights(const Eigen::MatrixXd &forecasts, const Eigen::VectorXd &y);

/// Centred conditional MSE, mean((y - ybar) - (F - Fbar) w)^2, computed directly.
double conditional_mse(const Eigen::MatrixXd &forecasts, const Eigen::VectorXd &y,
                       const Eigen::VectorXd &w);

/// sigma^2 + (w - w*)' Sigma (w - w*).
double conditional_mse(const RegressionSolution &solution, const Eigen::VectorXd &w);

/// Estimation-variance tr(Sigma Var(w_hat)) and weight-bias terms from a set
/// of estimated weight vectors (one per row).
DecompositionReport estimated_weight_terms(const Eigen::MatrixXd &weight_draws,
                                           const RegressionSolution &solution);

/// Error-based decomposition on a panel at horizon `h`: for each age the
/// replications are the origins, and Bias^2 and Var are taken over the
/// combined log errors, then averaged across ages. Noise is not identifiable
/// here and stays 0.
DecompositionReport decompose_panel(const ForecastPanel &panel,
                                    const std::vector<WeightVector> &by_age, int h);

} // namespace mortens
