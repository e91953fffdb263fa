#include "mortens/panel.hpp"

#include <algorithm>
#include <stdexcept>

namespace mortens {

int ForecastPanel::max_horizon() const {
    return cell_horizon.empty() ? 0 : *std::max_element(cell_horizon.begin(), cell_horizon.end());
}

int ForecastPanel::model_index(ModelId model) const {
    const auto it = std::find(models.begin(), models.end(), model);
    if (it == models.end()) {
        throw std::invalid_argument("model '" + std::string(label(model)) + "' not in panel");
    }
    return static_cast<int>(it - models.begin());
}

std::vector<int> ForecastPanel::cells_for(int h) const {
    std::vector<int> out;
    for (int c = 0; c < n_cells(); ++c) {
        if (h == 0 || cell_horizon[static_cast<std::size_t>(c)] == h) {
            out.push_back(c);
        }
    }
    return out;
}

ForecastPanel ForecastPanel::subset(const std::vector<ModelId> &keep) const {
    ForecastPanel out;
    out.ages = ages;
    out.cell_origin = cell_origin;
    out.cell_horizon = cell_horizon;
    out.truth = truth;
    for (ModelId m : keep) {
        const auto i = static_cast<std::size_t>(model_index(m));
        out.models.push_back(m);
        out.point.push_back(point[i]);
        out.n_params.push_back(n_params[i]);
        if (has_intervals()) {
            out.lower.push_back(lower[i]);
            out.upper.push_back(upper[i]);
        }
    }
    return out;
}

ForecastPanel ForecastPanel::assemble(const std::map<ModelId, std::vector<ForecastGrid>> &runs,
                                      const MortalitySurface &observed) {
    if (runs.empty()) {
        throw std::invalid_argument("no model forecasts to assemble");
    }
    ForecastPanel panel;
    const auto &[first_model, first_run] = *runs.begin();
    if (first_run.empty()) {
        throw std::invalid_argument("model '" + std::string(label(first_model)) +
                                    "' has no forecast origins");
    }
    panel.ages = first_run.front().ages;
    for (const ForecastGrid &g : first_run) {
        for (int h = 1; h <= g.horizons(); ++h) {
            panel.cell_origin.push_back(g.origin_year);
            panel.cell_horizon.push_back(h);
        }
    }
    const bool intervals = std::all_of(runs.begin(), runs.end(), [](const auto &kv) {
        return std::all_of(kv.second.begin(), kv.second.end(),
                           [](const ForecastGrid &g) { return g.has_intervals(); });
    });

    const auto n_ages = static_cast<Eigen::Index>(panel.ages.size());
    const auto n_cells = static_cast<Eigen::Index>(panel.cell_origin.size());
    // Models are kept in M1..M15 order regardless of map order.
    for (ModelId m : kAllModels) {
        const auto it = runs.find(m);
        if (it == runs.end()) {
            continue;
        }
        const std::vector<ForecastGrid> &run = it->second;
        Eigen::MatrixXd point(n_ages, n_cells);
        Eigen::MatrixXd lower;
        Eigen::MatrixXd upper;
        if (intervals) {
            lower.resize(n_ages, n_cells);
            upper.resize(n_ages, n_cells);
        }
        Eigen::Index cell = 0;
        std::size_t origin_index = 0;
        for (const ForecastGrid &g : run) {
            const std::string where = std::string(label(m)) + " origin " +
                                      std::to_string(g.origin_year);
            if (g.ages != panel.ages) {
                throw std::invalid_argument(where + ": age grid differs");
            }
            for (int h = 1; h <= g.horizons(); ++h, ++cell) {
                if (cell >= n_cells || panel.cell_origin[static_cast<std::size_t>(cell)] !=
                                           g.origin_year ||
                    panel.cell_horizon[static_cast<std::size_t>(cell)] != h) {
                    throw std::invalid_argument(where + ": horizon " + std::to_string(h) +
                                                " does not match the panel layout");
                }
                point.col(cell) = g.log_point.col(h - 1);
                if (intervals) {
                    lower.col(cell) = g.log_lower.col(h - 1);
                    upper.col(cell) = g.log_upper.col(h - 1);
                }
            }
            ++origin_index;
        }
        if (cell != n_cells) {
            throw std::invalid_argument(std::string(label(m)) + ": missing forecast cells (" +
                                        std::to_string(cell) + " of " + std::to_string(n_cells) +
                                        ")");
        }
        for (Eigen::Index c = 0; c < n_cells; ++c) {
            for (Eigen::Index a = 0; a < n_ages; ++a) {
                if (!std::isfinite(point(a, c))) {
                    throw std::invalid_argument(
                        std::string(label(m)) + ": non-finite forecast at age " +
                        std::to_string(panel.ages[static_cast<std::size_t>(a)]) + ", horizon " +
                        std::to_string(panel.cell_horizon[static_cast<std::size_t>(c)]));
                }
            }
        }
        panel.models.push_back(m);
        panel.point.push_back(std::move(point));
        if (intervals) {
            panel.lower.push_back(std::move(lower));
            panel.upper.push_back(std::move(upper));
        }
        panel.n_params.push_back(run.back().n_params);
    }

    panel.truth.resize(n_ages, n_cells);
    const Eigen::MatrixXd log_rates = observed.log_rates();
    std::vector<Eigen::Index> age_rows;
    for (int age : panel.ages) {
        const auto it = std::find(observed.ages().begin(), observed.ages().end(), age);
        if (it == observed.ages().end()) {
            throw std::invalid_argument("observed surface lacks age " + std::to_string(age));
        }
        age_rows.push_back(it - observed.ages().begin());
    }
    for (Eigen::Index c = 0; c < n_cells; ++c) {
        const int year = panel.cell_origin[static_cast<std::size_t>(c)] +
                         panel.cell_horizon[static_cast<std::size_t>(c)];
        const int j = observed.year_index(year);
        for (Eigen::Index a = 0; a < n_ages; ++a) {
            panel.truth(a, c) = log_rates(age_rows[static_cast<std::size_t>(a)], j);
        }
    }
    return panel;
}

} // namespace mortens
