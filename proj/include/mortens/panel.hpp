#pragma once

#include "mortens/models.hpp"

#include <map>

namespace mortens {

/// Forecasts of several models on one expanding window, laid out as
/// ages x cells, with the matching observed log rates.
///
/// A cell is one (origin, horizon) pair. Cells are ordered by origin, then
/// horizon, so a window of W origins has W(W+1)/2 cells.
struct ForecastPanel {
    std::vector<ModelId> models;
    std::vector<int> ages;
    std::vector<int> cell_origin;
    std::vector<int> cell_horizon;
    /// One ages x cells matrix per model, log scale.
    std::vector<Eigen::MatrixXd> point;
    std::vector<Eigen::MatrixXd> lower;
    std::vector<Eigen::MatrixXd> upper;
    Eigen::MatrixXd truth;
    /// Free parameters of each model's fit at the last origin.
    std::vector<int> n_params;

    int n_models() const { return static_cast<int>(models.size()); }
    int n_ages() const { return static_cast<int>(ages.size()); }
    int n_cells() const { return static_cast<int>(cell_origin.size()); }
    bool has_intervals() const { return !lower.empty(); }
    int max_horizon() const;

    /// Index of `model` in `models`; throws if absent.
    int model_index(ModelId model) const;

    /// Cell indices whose horizon is `h`, or every cell when `h` is 0.
    std::vector<int> cells_for(int h) const;

    /// Keeps only the listed models, in the given order.
    ForecastPanel subset(const std::vector<ModelId> &keep) const;

    /// Builds the panel from per-model window runs. All models must share
    /// origins, horizons and ages; `observed` must cover every target year.
    static ForecastPanel assemble(const std::map<ModelId, std::vector<ForecastGrid>> &runs,
                                  const MortalitySurface &observed);
};

} // namespace mortens
