#include "mortens/shapley.hpp"

#include "mortens/ensembles.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mortens {

namespace {

void check_player_count(int n, int limit) {
    if (n < 1 || n > limit) {
        throw std::invalid_argument("coalition games need 1.." + std::to_string(limit) +
                                    " players, got " + std::to_string(n));
    }
}

/// Enumerates all coalitions of an error second-moment matrix depth first,
/// extending one Cholesky factor row by row so each subset costs O(|S|^2).
class GameEnumerator {
public:
    GameEnumerator(const Eigen::MatrixXd &moments, double baseline, std::vector<double> &out)
        : m_(moments), baseline_(baseline), out_(out), n_(static_cast<int>(moments.rows())) {
        const double scale = m_.trace() / n_;
        ridge_ = std::max(1e-8 * scale, std::numeric_limits<double>::min());
        levels_.resize(static_cast<std::size_t>(n_ + 1));
        for (Level &level : levels_) {
            level.chol = Eigen::MatrixXd::Zero(n_, n_);
            level.z = Eigen::VectorXd::Zero(n_);
        }
    }

    void run() {
        out_[0] = 0.0;
        visit(0, 0, 0);
    }

private:
    struct Level {
        Eigen::MatrixXd chol;
        Eigen::VectorXd z;
        double zz = 0.0;
        double ridge = 0.0;
        std::vector<int> members;
    };

    void visit(std::uint32_t mask, int next, int depth) {
        for (int j = next; j < n_; ++j) {
            extend(depth, j);
            const std::uint32_t child = mask | (1U << j);
            out_[child] = baseline_ - 1.0 / levels_[static_cast<std::size_t>(depth + 1)].zz;
            visit(child, j + 1, depth + 1);
        }
    }

    /// Level depth+1 = level depth plus player j.
    void extend(int depth, int j) {
        const Level &parent = levels_[static_cast<std::size_t>(depth)];
        Level &child = levels_[static_cast<std::size_t>(depth + 1)];
        child.members.assign(parent.members.begin(), parent.members.end());
        child.members.push_back(j);
        child.ridge = parent.ridge;
        const int k = depth;
        // Rows 0..k-1 are shared with the parent.
        child.chol.topLeftCorner(k, k) = parent.chol.topLeftCorner(k, k);
        child.z.head(k) = parent.z.head(k);

        Eigen::VectorXd l(k);
        for (int r = 0; r < k; ++r) {
            double s = m_(parent.members[static_cast<std::size_t>(r)], j);
            for (int c = 0; c < r; ++c) {
                s -= child.chol(r, c) * l(c);
            }
            l(r) = s / child.chol(r, r);
        }
        double pivot = m_(j, j) + child.ridge - l.squaredNorm();
        if (pivot <= 1e-10 * m_(j, j) || pivot <= 0.0) {
            if (child.ridge == 0.0) {
                refactor(child);
                return;
            }
            pivot = child.ridge;
        }
        const double root = std::sqrt(pivot);
        child.chol.row(k).head(k) = l.transpose();
        child.chol(k, k) = root;
        child.z(k) = (1.0 - l.dot(child.z.head(k))) / root;
        child.zz = parent.zz + child.z(k) * child.z(k);
    }

    /// Ridge-regularised factor of the child's block, rebuilt from scratch.
    void refactor(Level &child) {
        child.ridge = ridge_;
        const auto k = static_cast<Eigen::Index>(child.members.size());
        Eigen::MatrixXd block(k, k);
        for (Eigen::Index r = 0; r < k; ++r) {
            for (Eigen::Index c = 0; c < k; ++c) {
                block(r, c) = m_(child.members[static_cast<std::size_t>(r)],
                                 child.members[static_cast<std::size_t>(c)]);
            }
            block(r, r) += child.ridge;
        }
        const Eigen::LLT<Eigen::MatrixXd> llt(block);
        child.chol.topLeftCorner(k, k) = llt.matrixL();
        child.z.head(k) = llt.matrixL().solve(Eigen::VectorXd::Ones(k));
        child.zz = child.z.head(k).squaredNorm();
    }

    const Eigen::MatrixXd &m_;
    double baseline_;
    std::vector<double> &out_;
    int n_;
    double ridge_ = 0.0;
    std::vector<Level> levels_;
};

} // namespace

CoalitionGame CoalitionGame::tabulate(std::vector<ModelId> players,
                                      const std::function<double(std::uint32_t)> &v) {
    check_player_count(static_cast<int>(players.size()), kMaxExactPlayers);
    CoalitionGame game;
    game.players = std::move(players);
    const std::uint32_t count = 1U << game.players.size();
    game.value.resize(count);
    game.value[0] = 0.0;
    for (std::uint32_t mask = 1; mask < count; ++mask) {
        game.value[mask] = v(mask);
    }
    return game;
}

CoalitionGame CoalitionGame::restrict_to(const std::vector<int> &positions) const {
    std::vector<ModelId> sub_players;
    for (int p : positions) {
        if (p < 0 || p >= n_players()) {
            throw std::out_of_range("player position " + std::to_string(p) + " out of range");
        }
        sub_players.push_back(players[static_cast<std::size_t>(p)]);
    }
    return tabulate(std::move(sub_players), [&](std::uint32_t sub) {
        std::uint32_t mask = 0;
        for (std::size_t b = 0; b < positions.size(); ++b) {
            if (sub & (1U << b)) {
                mask |= 1U << positions[b];
            }
        }
        return value[mask];
    });
}

Eigen::VectorXd shapley_values(const CoalitionGame &game) {
    const int n = game.n_players();
    check_player_count(n, kMaxExactPlayers);
    const std::uint32_t count = 1U << n;
    if (game.value.size() != count) {
        throw std::invalid_argument("game table has " + std::to_string(game.value.size()) +
                                    " values, expected " + std::to_string(count));
    }
    // weight[s] = s! (n - s - 1)! / n!
    std::vector<double> weight(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        weight[static_cast<std::size_t>(s)] =
            std::exp(std::lgamma(s + 1.0) + std::lgamma(n - s + 0.0) - std::lgamma(n + 1.0));
    }
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(n);
    for (std::uint32_t mask = 0; mask < count; ++mask) {
        const double base = game.value[mask];
        const double w = weight[static_cast<std::size_t>(std::popcount(mask))];
        for (int i = 0; i < n; ++i) {
            const std::uint32_t bit = 1U << i;
            if (!(mask & bit)) {
                phi(i) += w * (game.value[mask | bit] - base);
            }
        }
    }
    return phi;
}

Eigen::VectorXd sampled_shapley_values(int n_players,
                                       const std::function<double(std::uint32_t)> &v, int draws,
                                       std::uint64_t seed) {
    check_player_count(n_players, 32);
    if (draws < 1) {
        throw std::invalid_argument("need at least one sampled ordering");
    }
    std::mt19937_64 rng(seed);
    std::vector<int> order(static_cast<std::size_t>(n_players));
    std::iota(order.begin(), order.end(), 0);
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(n_players);
    for (int d = 0; d < draws; ++d) {
        std::shuffle(order.begin(), order.end(), rng);
        std::uint32_t mask = 0;
        double previous = 0.0;
        for (int player : order) {
            mask |= 1U << player;
            const double current = v(mask);
            phi(player) += current - previous;
            previous = current;
        }
    }
    return phi / draws;
}

GameMode parse_game_mode(std::string_view text) {
    if (text == "pooled") {
        return GameMode::pooled;
    }
    if (text == "per_horizon") {
        return GameMode::per_horizon;
    }
    throw std::invalid_argument("unknown game mode '" + std::string(text) + "'");
}

std::string_view to_string(GameMode mode) {
    return mode == GameMode::pooled ? "pooled" : "per_horizon";
}

CoalitionGame build_game(const ForecastPanel &panel, int age_index, int horizon) {
    const int n = panel.n_models();
    check_player_count(n, kMaxExactPlayers);
    if (age_index < 0 || age_index >= panel.n_ages()) {
        throw std::out_of_range("age index " + std::to_string(age_index) + " out of range");
    }
    const std::vector<int> cells = panel.cells_for(horizon);
    if (cells.empty()) {
        throw std::invalid_argument("no validation cells at horizon " + std::to_string(horizon));
    }
    const auto n_cells = static_cast<Eigen::Index>(cells.size());
    Eigen::MatrixXd errors(n_cells, n);
    Eigen::VectorXd y(n_cells);
    for (Eigen::Index r = 0; r < n_cells; ++r) {
        const int c = cells[static_cast<std::size_t>(r)];
        y(r) = panel.truth(age_index, c);
        for (int i = 0; i < n; ++i) {
            errors(r, i) = y(r) - panel.point[static_cast<std::size_t>(i)](age_index, c);
        }
    }
    const Eigen::MatrixXd moments = errors.transpose() * errors / static_cast<double>(n_cells);
    const double baseline = (y.array() - y.mean()).square().mean();

    CoalitionGame game;
    game.players = panel.models;
    game.value.assign(std::size_t{1} << n, 0.0);
    GameEnumerator(moments, baseline, game.value).run();
    return game;
}

Eigen::VectorXd min_max_normalize(const Eigen::VectorXd &raw) {
    if (raw.size() == 0) {
        return raw;
    }
    const double lo = raw.minCoeff();
    const double hi = raw.maxCoeff();
    const double range = hi - lo;
    if (!(range > 1e-14 * std::max(std::fabs(lo), std::fabs(hi)))) {
        return Eigen::VectorXd::Ones(raw.size());
    }
    return ((raw.array() - lo) / range).matrix();
}

Eigen::MatrixXd mean_normalized_shap(const std::vector<Eigen::MatrixXd> &phi) {
    if (phi.empty()) {
        throw std::invalid_argument("no Shapley values to average");
    }
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(phi.front().rows(), phi.front().cols());
    for (const Eigen::MatrixXd &p : phi) {
        if (p.rows() != mean.rows() || p.cols() != mean.cols()) {
            throw std::invalid_argument("Shapley value tables differ in shape");
        }
        mean += p;
    }
    mean /= static_cast<double>(phi.size());
    for (Eigen::Index a = 0; a < mean.cols(); ++a) {
        mean.col(a) = min_max_normalize(mean.col(a));
    }
    return mean;
}

Eigen::VectorXd ShapReport::aggregated() const {
    return min_max_normalize(phi_mean.rowwise().mean());
}

ShapReport shap_report(const ForecastPanel &panel, GameMode mode) {
    ShapReport report;
    report.models = panel.models;
    report.ages = panel.ages;
    if (mode == GameMode::pooled) {
        report.horizons = {0};
    } else {
        for (int h = 1; h <= panel.max_horizon(); ++h) {
            report.horizons.push_back(h);
        }
    }
    for (int h : report.horizons) {
        Eigen::MatrixXd phi(panel.n_models(), panel.n_ages());
        for (int a = 0; a < panel.n_ages(); ++a) {
            phi.col(a) = shapley_values(build_game(panel, a, h));
        }
        report.phi.push_back(std::move(phi));
    }
    report.phi_mean = mean_normalized_shap(report.phi);
    return report;
}

double WeightVector::weight(ModelId model) const {
    const auto it = std::find(models.begin(), models.end(), model);
    return it == models.end() ? 0.0 : weights(it - models.begin());
}

WeightVector WeightVector::equal(const std::vector<ModelId> &models) {
    if (models.empty()) {
        throw std::invalid_argument("equal weights need at least one model");
    }
    WeightVector out;
    out.models = models;
    out.selected = models;
    out.weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(models.size()),
                                            1.0 / static_cast<double>(models.size()));
    return out;
}

WeightVector shap_weights(const std::vector<ModelId> &models, const Eigen::VectorXd &phi_mean,
                          double alpha) {
    if (static_cast<Eigen::Index>(models.size()) != phi_mean.size()) {
        throw std::invalid_argument("one normalised Shapley value per model expected");
    }
    if (!(alpha >= 0.0)) {
        throw std::invalid_argument("threshold must be nonnegative");
    }
    WeightVector out;
    out.models = models;
    out.threshold = alpha;
    out.weights = Eigen::VectorXd::Zero(phi_mean.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < phi_mean.size(); ++i) {
        if (phi_mean(i) > alpha) {
            out.selected.push_back(models[static_cast<std::size_t>(i)]);
            out.weights(i) = phi_mean(i);
            total += phi_mean(i);
        }
    }
    if (out.selected.empty() || !(total > 0.0)) {
        throw std::invalid_argument("threshold removes all models");
    }
    out.weights /= total;
    return out;
}

WeightVector shap_weights(const ShapReport &report, int age_index, double alpha) {
    if (age_index < 0 || age_index >= report.n_ages()) {
        throw std::out_of_range("age index " + std::to_string(age_index) + " out of range");
    }
    return shap_weights(report.models, report.normalized(age_index), alpha);
}

std::vector<WeightVector> shap_weights_by_age(const ShapReport &report, double alpha,
                                              bool aggregate) {
    std::vector<WeightVector> out;
    out.reserve(static_cast<std::size_t>(report.n_ages()));
    if (aggregate) {
        const WeightVector w = shap_weights(report.models, report.aggregated(), alpha);
        out.assign(static_cast<std::size_t>(report.n_ages()), w);
        return out;
    }
    for (int a = 0; a < report.n_ages(); ++a) {
        out.push_back(shap_weights(report, a, alpha));
    }
    return out;
}

std::vector<double> small_alpha_grid() { return {0.05, 0.10, 0.15, 0.20, 0.50}; }

std::vector<double> fine_alpha_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 99; ++i) {
        grid.push_back(i / 100.0);
    }
    return grid;
}

AlphaSelection select_alpha(const ForecastPanel &panel, const ShapReport &report,
                            const std::vector<double> &grid, int horizon, bool aggregate) {
    if (grid.empty()) {
        throw std::invalid_argument("alpha grid is empty");
    }
    for (double alpha : grid) {
        if (!(alpha >= 0.0 && alpha < 1.0)) {
            throw std::invalid_argument("alpha grid values must lie in [0, 1)");
        }
    }
    if (report.models != panel.models || report.ages != panel.ages) {
        throw std::invalid_argument("Shapley report and panel cover different models or ages");
    }
    AlphaSelection out;
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    out.grid = sorted;
    double best = std::numeric_limits<double>::infinity();
    for (double alpha : sorted) {
        const Eigen::MatrixXd combined =
            combine_point(panel, shap_weights_by_age(report, alpha, aggregate));
        double sse = 0.0;
        int count = 0;
        for (int c : panel.cells_for(horizon)) {
            sse += (panel.truth.col(c) - combined.col(c)).squaredNorm();
            count += panel.n_ages();
        }
        if (count == 0) {
            throw std::invalid_argument("no validation cells at horizon " +
                                        std::to_string(horizon));
        }
        const double mse = sse / count;
        out.mse.push_back(mse);
        if (mse < best) {
            best = mse;
            out.alpha = alpha;
        }
    }
    return out;
}

} // namespace mortens
