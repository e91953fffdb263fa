#pragma once

#include "mortens/panel.hpp"

#include <cstdint>
#include <functional>

namespace mortens {

/// Characteristic function over N players, stored for every subset.
/// Bit i of a coalition mask is player i.
struct CoalitionGame {
    std::vector<ModelId> players;
    std::vector<double> value;

    int n_players() const { return static_cast<int>(players.size()); }
    double operator()(std::uint32_t mask) const { return value.at(mask); }

    /// Tabulates `v` over all 2^N coalitions; v(empty) is forced to zero.
    static CoalitionGame tabulate(std::vector<ModelId> players,
                                  const std::function<double(std::uint32_t)> &v);

    /// Sub-game on the listed player positions, in the given order.
    CoalitionGame restrict_to(const std::vector<int> &positions) const;
};

inline constexpr int kMaxExactPlayers = 20;

/// Exact Shapley values; throws when the table does not hold 2^N values.
Eigen::VectorXd shapley_values(const CoalitionGame &game);

/// Monte-Carlo Shapley values from `draws` random orderings.
Eigen::VectorXd sampled_shapley_values(int n_players,
                                       const std::function<double(std::uint32_t)> &v, int draws,
                                       std::uint64_t seed);

/// Which forecast cells feed one game.
enum class GameMode {
    /// One game per age over every validation cell.
    pooled,
    /// One game per (age, horizon); Shapley values are averaged over horizons.
    per_horizon,
};

GameMode parse_game_mode(std::string_view text);
std::string_view to_string(GameMode mode);

/// Accuracy game for one age of a validation panel.
///
/// With E the cells x models matrix of log errors and M = E'E / n, the value
/// of S is Var(y) - min over w (sum w = 1) of w' M_S w: the drop in mean
/// squared error from an intercept-only predictor to the best affine
/// combination of the models in S. `horizon` 0 uses all cells.
CoalitionGame build_game(const ForecastPanel &panel, int age_index, int horizon = 0);

/// Shapley values for every model and age, plus their normalised means.
struct ShapReport {
    std::vector<ModelId> models;
    std::vector<int> ages;
    /// Horizons of the games; a single 0 in pooled mode.
    std::vector<int> horizons;
    Gender gender = Gender::female;
    /// phi[h](model, age).
    std::vector<Eigen::MatrixXd> phi;
    /// models x ages, min-max scaled to [0, 1] within each age.
    Eigen::MatrixXd phi_mean;

    int n_models() const { return static_cast<int>(models.size()); }
    int n_ages() const { return static_cast<int>(ages.size()); }

    /// Column of phi_mean for one age.
    Eigen::VectorXd normalized(int age_index) const { return phi_mean.col(age_index); }

    /// phi_mean averaged over ages, rescaled to [0, 1].
    Eigen::VectorXd aggregated() const;
};

/// Min-max scaling to [0, 1]; a constant vector maps to all ones.
Eigen::VectorXd min_max_normalize(const Eigen::VectorXd &raw);

/// Averages phi over horizons and min-max scales within each age.
Eigen::MatrixXd mean_normalized_shap(const std::vector<Eigen::MatrixXd> &phi);

/// Builds and solves every game of the panel.
ShapReport shap_report(const ForecastPanel &panel, GameMode mode = GameMode::pooled);

/// Combination weights over a model list; zero outside `selected`.
struct WeightVector {
    std::vector<ModelId> models;
    Eigen::VectorXd weights;
    std::vector<ModelId> selected;
    double threshold = 0.0;

    double weight(ModelId model) const;
    static WeightVector equal(const std::vector<ModelId> &models);
};

/// Truncated weights: S = {i : phi_i > alpha}, w_i = phi_i / sum over S.
WeightVector shap_weights(const std::vector<ModelId> &models, const Eigen::VectorXd &phi_mean,
                          double alpha);
WeightVector shap_weights(const ShapReport &report, int age_index, double alpha);

/// One weight vector per age of the report. With `aggregate`, every age gets
/// the weights of the age-averaged contributions.
std::vector<WeightVector> shap_weights_by_age(const ShapReport &report, double alpha,
                                              bool aggregate = false);

std::vector<double> small_alpha_grid();
std::vector<double> fine_alpha_grid();

struct AlphaSelection {
    double alpha = 0.0;
    std::vector<double> grid;
    std::vector<double> mse;
};

/// Grid value with the lowest validation MSE of the truncated ensemble at
/// `horizon` (0 for all cells). Ties go to the smallest alpha.
AlphaSelection select_alpha(const ForecastPanel &panel, const ShapReport &report,
                            const std::vector<double> &grid, int horizon,
                            bool aggregate = false);

} // namespace mortens
