#include "mortens/eval.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mortens {

namespace {

std::vector<int> horizon_cells(const ForecastPanel &panel, int h) {
    std::vector<int> cells = panel.cells_for(h);
    if (h < 1 || cells.empty()) {
        throw std::invalid_argument("no forecast cells at horizon " + std::to_string(h));
    }
    return cells;
}

void check_shape(const Eigen::MatrixXd &m, const ForecastPanel &panel, const char *what) {
    if (m.rows() != panel.n_ages() || m.cols() != panel.n_cells()) {
        throw std::invalid_argument(std::string(what) + " is " + std::to_string(m.rows()) + "x" +
                                    std::to_string(m.cols()) + ", panel is " +
                                    std::to_string(panel.n_ages()) + "x" +
                                    std::to_string(panel.n_cells()));
    }
}

/// Population covariance (divisor n) of the columns of x.
Eigen::MatrixXd covariance(const Eigen::MatrixXd &x) {
    const Eigen::MatrixXd centred = x.rowwise() - x.colwise().mean();
    return centred.transpose() * centred / static_cast<double>(x.rows());
}

} // namespace

PointScore point_scores(const Eigen::MatrixXd &forecast, const ForecastPanel &panel, int h) {
    check_shape(forecast, panel, "forecast");
    PointScore out;
    double sse = 0.0;
    double sae = 0.0;
    for (int c : horizon_cells(panel, h)) {
        for (int a = 0; a < panel.n_ages(); ++a) {
            const double e = panel.truth(a, c) - forecast(a, c);
            if (!std::isfinite(e)) {
                throw std::invalid_argument(
                    "missing forecast at age " +
                    std::to_string(panel.ages[static_cast<std::size_t>(a)]) + ", origin " +
                    std::to_string(panel.cell_origin[static_cast<std::size_t>(c)]) +
                    ", horizon " + std::to_string(h));
            }
            sse += e * e;
            sae += std::fabs(e);
            ++out.n_values;
        }
    }
    out.mse = sse / out.n_values;
    out.mae = sae / out.n_values;
    return out;
}

double interval_score(double lower, double upper, double log_y, double theta) {
    if (!(lower < upper)) {
        throw std::invalid_argument("interval lower bound must be below the upper bound");
    }
    if (!(theta > 0.0 && theta < 1.0)) {
        throw std::invalid_argument("theta must lie in (0, 1)");
    }
    double score = upper - lower;
    if (log_y < lower) {
        score += 2.0 / theta * (lower - log_y);
    } else if (log_y > upper) {
        score += 2.0 / theta * (log_y - upper);
    }
    return score;
}

double mean_interval_score(const Eigen::MatrixXd &lower, const Eigen::MatrixXd &upper,
                           const ForecastPanel &panel, int h, double theta) {
    check_shape(lower, panel, "lower bounds");
    check_shape(upper, panel, "upper bounds");
    double total = 0.0;
    int count = 0;
    for (int c : horizon_cells(panel, h)) {
        for (int a = 0; a < panel.n_ages(); ++a) {
            total += interval_score(lower(a, c), upper(a, c), panel.truth(a, c), theta);
            ++count;
        }
    }
    return total / count;
}

DmResult dm_test(const Eigen::VectorXd &errors_a, const Eigen::VectorXd &errors_b, int h) {
    const Eigen::Index n = errors_a.size();
    if (errors_b.size() != n) {
        throw std::invalid_argument("DM test needs paired error series of equal length");
    }
    if (n < 5) {
        throw std::invalid_argument("DM test needs at least 5 paired errors");
    }
    if (h < 1) {
        throw std::invalid_argument("DM horizon must be at least 1");
    }
    const Eigen::VectorXd d = errors_a.cwiseAbs2() - errors_b.cwiseAbs2();
    const double mean = d.mean();
    const Eigen::VectorXd centred = d.array() - mean;
    auto autocov = [&](Eigen::Index lag) {
        return centred.head(n - lag).dot(centred.tail(n - lag)) / static_cast<double>(n);
    };
    const double gamma0 = autocov(0);
    DmResult out;
    if (!(gamma0 > 1e-300)) {
        out.degenerate = true;
        out.p_value = std::numeric_limits<double>::quiet_NaN();
        out.statistic = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    double long_run = gamma0;
    for (Eigen::Index k = 1; k < std::min<Eigen::Index>(h, n); ++k) {
        long_run += 2.0 * autocov(k);
    }
    // The truncated kernel can go negative; fall back to the lag-0 variance.
    if (!(long_run > 0.0)) {
        long_run = gamma0;
    }
    out.statistic = mean / std::sqrt(long_run / static_cast<double>(n));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    out.p_value = boost::math::cdf(dist, out.statistic);
    return out;
}

std::string AgeGroup::name() const {
    return first == last ? std::to_string(first)
                         : std::to_string(first) + "-" + std::to_string(last);
}

std::vector<AgeGroup> hmd_age_groups(const std::vector<int> &ages) {
    std::vector<AgeGroup> full{{0, 0}, {1, 4}};
    for (int start = 5; start < 100; start += 5) {
        full.push_back({start, start + 4});
    }
    full.push_back({100, 100});
    std::vector<AgeGroup> out;
    for (const AgeGroup &g : full) {
        const bool present = std::any_of(ages.begin(), ages.end(),
                                         [&](int a) { return a >= g.first && a <= g.last; });
        if (present) {
            out.push_back(g);
        }
    }
    return out;
}

Eigen::MatrixXd age_stratified_mse(const std::vector<Eigen::MatrixXd> &forecasts,
                                   const ForecastPanel &panel, const std::vector<int> &cells) {
    if (forecasts.size() < 2) {
        throw std::invalid_argument("age-group standardisation needs at least two methods");
    }
    std::vector<int> used = cells;
    if (used.empty()) {
        used = panel.cells_for(0);
    }
    const std::vector<AgeGroup> groups = hmd_age_groups(panel.ages);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(groups.size()),
                        static_cast<Eigen::Index>(forecasts.size()));
    for (std::size_t m = 0; m < forecasts.size(); ++m) {
        check_shape(forecasts[m], panel, "forecast");
        for (std::size_t g = 0; g < groups.size(); ++g) {
            double sse = 0.0;
            int count = 0;
            for (int a = 0; a < panel.n_ages(); ++a) {
                const int age = panel.ages[static_cast<std::size_t>(a)];
                if (age < groups[g].first || age > groups[g].last) {
                    continue;
                }
                for (int c : used) {
                    const double e = panel.truth(a, c) - forecasts[m](a, c);
                    sse += e * e;
                    ++count;
                }
            }
            out(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(m)) = sse / count;
        }
    }
    for (Eigen::Index g = 0; g < out.rows(); ++g) {
        const double lo = out.row(g).minCoeff();
        const double hi = out.row(g).maxCoeff();
        if (hi > lo) {
            out.row(g) = (out.row(g).array() - lo) / (hi - lo);
        } else {
            out.row(g).setZero();
        }
    }
    return out;
}

std::vector<int> selection_frequency(const ShapReport &report, double alpha) {
    std::vector<int> counts(static_cast<std::size_t>(report.n_models()), 0);
    for (int a = 0; a < report.n_ages(); ++a) {
        for (int i = 0; i < report.n_models(); ++i) {
            if (report.phi_mean(i, a) > alpha) {
                ++counts[static_cast<std::size_t>(i)];
            }
        }
    }
    return counts;
}

DecompositionReport decompose_mse(const Eigen::VectorXd &weights,
                                  const std::vector<ReplicatedCell> &cells, double noise) {
    if (cells.empty()) {
        throw std::invalid_argument("decomposition needs at least one cell");
    }
    DecompositionReport out;
    out.noise = noise;
    for (const ReplicatedCell &cell : cells) {
        if (cell.forecasts.rows() < 2) {
            throw std::invalid_argument("decomposition needs at least 2 replications");
        }
        if (cell.forecasts.cols() != weights.size()) {
            throw std::invalid_argument("one weight per forecasting model expected");
        }
        const Eigen::VectorXd mean = cell.forecasts.colwise().mean().transpose();
        const double bias = weights.dot(mean) - cell.target;
        out.bias_sq += bias * bias;
        out.variance += weights.dot(covariance(cell.forecasts) * weights);
    }
    out.bias_sq /= static_cast<double>(cells.size());
    out.variance /= static_cast<double>(cells.size());
    return out;
}

RegressionSolution regression_weights(const Eigen::MatrixXd &forecasts, const Eigen::VectorXd &y) {
    if (forecasts.rows() != y.size() || forecasts.rows() < 2) {
        throw std::invalid_argument("regression needs at least 2 paired observations");
    }
    const Eigen::MatrixXd fc = forecasts.rowwise() - forecasts.colwise().mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    RegressionSolution out;
    out.covariance = fc.transpose() * fc / static_cast<double>(fc.rows());
    out.weights = fc.colPivHouseholderQr().solve(yc);
    out.noise = (yc - fc * out.weights).squaredNorm() / static_cast<double>(fc.rows());
    return out;
}

double conditional_mse(const Eigen::MatrixXd &forecasts, const Eigen::VectorXd &y,
                       const Eigen::VectorXd &w) {
    const Eigen::MatrixXd fc = forecasts.rowwise() - forecasts.colwise().mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    return (yc - fc * w).squaredNorm() / static_cast<double>(fc.rows());
}

double conditional_mse(const RegressionSolution &solution, const Eigen::VectorXd &w) {
    const Eigen::VectorXd gap = w - solution.weights;
    return solution.noise + gap.dot(solution.covariance * gap);
}

DecompositionReport estimated_weight_terms(const Eigen::MatrixXd &weight_draws,
                                           const RegressionSolution &solution) {
    if (weight_draws.rows() < 2) {
        throw std::invalid_argument("need at least 2 weight draws");
    }
    if (weight_draws.cols() != solution.weights.size()) {
        throw std::invalid_argument("weight draws and solution differ in length");
    }
    DecompositionReport out;
    out.noise = solution.noise;
    out.optimal_weights = solution.weights;
    out.weight_gap = weight_draws.colwise().mean().transpose() - solution.weights;
    out.estimation_variance = (solution.covariance * covariance(weight_draws)).trace();
    out.weight_bias = out.weight_gap.dot(solution.covariance * out.weight_gap);
    return out;
}

DecompositionReport decompose_panel(const ForecastPanel &panel,
                                    const std::vector<WeightVector> &by_age, int h) {
    const std::vector<int> cells = horizon_cells(panel, h);
    if (cells.size() < 2) {
        throw std::invalid_argument("decomposition at horizon " + std::to_string(h) +
                                    " needs at least 2 replications");
    }
    if (by_age.size() != 1 && static_cast<int>(by_age.size()) != panel.n_ages()) {
        throw std::invalid_argument("need one weight vector per age or a single shared one");
    }
    DecompositionReport out;
    const auto n_rep = static_cast<Eigen::Index>(cells.size());
    Eigen::MatrixXd errors(n_rep, panel.n_models());
    for (int a = 0; a < panel.n_ages(); ++a) {
        const WeightVector &wv = by_age.size() == 1 ? by_age.front()
                                                    : by_age[static_cast<std::size_t>(a)];
        Eigen::VectorXd w(panel.n_models());
        for (int i = 0; i < panel.n_models(); ++i) {
            w(i) = wv.weight(panel.models[static_cast<std::size_t>(i)]);
        }
        for (Eigen::Index r = 0; r < n_rep; ++r) {
            const int c = cells[static_cast<std::size_t>(r)];
            for (int i = 0; i < panel.n_models(); ++i) {
                errors(r, i) = panel.truth(a, c) - panel.point[static_cast<std::size_t>(i)](a, c);
            }
        }
        const double bias = w.dot(errors.colwise().mean().transpose());
        out.bias_sq += bias * bias;
        out.variance += w.dot(covariance(errors) * w);
    }
    out.bias_sq /= panel.n_ages();
    out.variance /= panel.n_ages();
    return out;
}

} // namespace mortens
