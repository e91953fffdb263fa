#include "internal.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mortens {

namespace detail {

namespace {

constexpr double kMaxAr = 0.99;

double ar1_coefficient(const Eigen::VectorXd &x) {
    double num = 0.0;
    double den = 0.0;
    for (Eigen::Index t = 1; t < x.size(); ++t) {
        num += x(t) * x(t - 1);
        den += x(t - 1) * x(t - 1);
    }
    if (den <= 0.0) {
        return 0.0;
    }
    return std::clamp(num / den, -kMaxAr, kMaxAr);
}

void estimate_cohort(ModelFit &fit) {
    CohortDynamics &cd = fit.cohort_dynamics;
    const auto n = static_cast<int>(fit.gamma.size());
    const int lo = 0;
    const int hi = n - 1;
    if (hi - lo + 1 < 3) {
        cd = {};
        cd.intercept = n > 0 ? fit.gamma.mean() : 0.0;
        cd.anchor_cohort = fit.last_cohort();
        return;
    }
    const int m = hi - lo + 1;
    Eigen::MatrixXd design(m, 2);
    Eigen::VectorXd y(m);
    for (int r = 0; r < m; ++r) {
        design(r, 0) = 1.0;
        design(r, 1) = fit.first_cohort + lo + r;
        y(r) = fit.gamma(lo + r);
    }
    const Eigen::Vector2d coef = design.colPivHouseholderQr().solve(y);
    const Eigen::VectorXd u = y - design * coef;
    cd.intercept = coef(0);
    cd.slope = coef(1);
    cd.phi = ar1_coefficient(u);
    double ss = 0.0;
    for (int r = 1; r < m; ++r) {
        const double e = u(r) - cd.phi * u(r - 1);
        ss += e * e;
    }
    cd.sigma2 = ss / (m - 1);
    cd.anchor_cohort = fit.first_cohort + hi;
    cd.anchor_residual = u(m - 1);
}

} // namespace

void estimate_dynamics(ModelFit &fit) {
    PeriodDynamics &pd = fit.period_dynamics;
    const auto k_count = fit.kappa.size();
    if (pd.process.size() != k_count) {
        pd.process.assign(k_count, FactorProcess::random_walk_drift);
    }
    const int n = fit.n_years();
    pd.drift = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k_count));
    pd.ar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k_count));
    Eigen::MatrixXd residuals = Eigen::MatrixXd::Zero(std::max(n - 1, 1),
                                                      static_cast<Eigen::Index>(k_count));
    for (std::size_t k = 0; k < k_count; ++k) {
        const Eigen::VectorXd &x = fit.kappa[k];
        const auto col = static_cast<Eigen::Index>(k);
        if (pd.process[k] == FactorProcess::random_walk_drift) {
            pd.drift(col) = n > 1 ? (x(n - 1) - x(0)) / (n - 1) : 0.0;
            for (int t = 1; t < n; ++t) {
                residuals(t - 1, col) = x(t) - x(t - 1) - pd.drift(col);
            }
        } else {
            const double mu = x.mean();
            const Eigen::VectorXd centred = x.array() - mu;
            const double phi = ar1_coefficient(centred);
            pd.drift(col) = mu;
            pd.ar(col) = phi;
            for (int t = 1; t < n; ++t) {
                residuals(t - 1, col) = centred(t) - phi * centred(t - 1);
            }
        }
    }
    pd.innovation_cov = n > 1 ? Eigen::MatrixXd(residuals.transpose() * residuals / (n - 1))
                              : Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k_count),
                                                      static_cast<Eigen::Index>(k_count));
    if (fit.has_cohort()) {
        estimate_cohort(fit);
    }
}

} // namespace detail

double ModelFit::cohort_effect(int cohort) const {
    if (cohort >= first_cohort && cohort <= last_cohort()) {
        return gamma(cohort - first_cohort);
    }
    const CohortDynamics &cd = cohort_dynamics;
    if (cohort < first_cohort) {
        return cd.intercept + cd.slope * cohort;
    }
    const int steps = cohort - cd.anchor_cohort;
    return cd.intercept + cd.slope * cohort + std::pow(cd.phi, steps) * cd.anchor_residual;
}

namespace {

/// Period factor means at horizons 1..H (K x H).
Eigen::MatrixXd mean_factors(const ModelFit &fit, int horizons) {
    const PeriodDynamics &pd = fit.period_dynamics;
    const auto k_count = static_cast<Eigen::Index>(fit.kappa.size());
    Eigen::MatrixXd out(k_count, horizons);
    const int last = fit.n_years() - 1;
    for (Eigen::Index k = 0; k < k_count; ++k) {
        const double x = fit.kappa[static_cast<std::size_t>(k)](last);
        for (int h = 1; h <= horizons; ++h) {
            if (pd.process[static_cast<std::size_t>(k)] == FactorProcess::random_walk_drift) {
                out(k, h - 1) = x + h * pd.drift(k);
            } else {
                out(k, h - 1) = pd.drift(k) + std::pow(pd.ar(k), h) * (x - pd.drift(k));
            }
        }
    }
    return out;
}

void check_forecastable(const ModelFit &fit, int horizons) {
    if (horizons < 1) {
        throw std::invalid_argument("forecast horizon must be at least 1");
    }
    if (fit.period_dynamics.process.size() != fit.kappa.size()) {
        throw std::invalid_argument("fit has no estimated dynamics");
    }
}

/// Type-7 sample quantile of sorted data.
double quantile_sorted(const std::vector<double> &sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

} // namespace

ForecastGrid forecast_point(const ModelFit &fit, int horizons) {
    check_forecastable(fit, horizons);
    ForecastGrid grid;
    grid.model = fit.model;
    grid.origin_year = fit.years.back();
    grid.ages = fit.ages;
    grid.converged = fit.meta.converged;
    grid.n_params = fit.meta.n_params;
    const Eigen::MatrixXd factors = mean_factors(fit, horizons);
    grid.log_point = fit.alpha.replicate(1, horizons);
    for (std::size_t k = 0; k < fit.beta.size(); ++k) {
        grid.log_point.noalias() += fit.beta[k] * factors.row(static_cast<Eigen::Index>(k));
    }
    if (fit.has_cohort()) {
        for (int h = 1; h <= horizons; ++h) {
            for (int i = 0; i < fit.n_ages(); ++i) {
                const int c = grid.origin_year + h - fit.ages[static_cast<std::size_t>(i)];
                grid.log_point(i, h - 1) += fit.cohort_loading(i) * fit.cohort_effect(c);
            }
        }
    }
    return grid;
}

ForecastGrid simulate_intervals(const ModelFit &fit, int horizons, double level, int n_paths,
                                std::uint64_t seed) {
    if (!(level > 0.0 && level < 1.0)) {
        throw std::invalid_argument("interval level must lie in (0, 1)");
    }
    if (n_paths < 1) {
        throw std::invalid_argument("n_paths must be at least 1");
    }
    ForecastGrid grid = forecast_point(fit, horizons);
    grid.level = level;

    const PeriodDynamics &pd = fit.period_dynamics;
    const auto k_count = static_cast<Eigen::Index>(fit.kappa.size());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(pd.innovation_cov);
    const Eigen::MatrixXd root = eig.eigenvectors() *
                                 eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    const int n_ages = fit.n_ages();
    const int origin = grid.origin_year;
    const CohortDynamics &cd = fit.cohort_dynamics;
    const int newest_needed = origin + horizons - fit.ages.front();
    const int cohort_steps = fit.has_cohort() ? std::max(0, newest_needed - cd.anchor_cohort) : 0;
    const double cohort_sd = std::sqrt(std::max(cd.sigma2, 0.0));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    // samples[(h-1) * n_ages + i] holds the path values for one cell.
    std::vector<std::vector<double>> samples(static_cast<std::size_t>(n_ages * horizons));
    for (auto &s : samples) {
        s.reserve(static_cast<std::size_t>(n_paths));
    }
    Eigen::VectorXd state(k_count);
    Eigen::VectorXd z(k_count);
    std::vector<double> cohort_path(static_cast<std::size_t>(cohort_steps));
    for (int path = 0; path < n_paths; ++path) {
        for (Eigen::Index k = 0; k < k_count; ++k) {
            state(k) = fit.kappa[static_cast<std::size_t>(k)](fit.n_years() - 1);
        }
        double u = cd.anchor_residual;
        for (int s = 0; s < cohort_steps; ++s) {
            u = cd.phi * u + cohort_sd * normal(rng);
            const int c = cd.anchor_cohort + s + 1;
            cohort_path[static_cast<std::size_t>(s)] = cd.intercept + cd.slope * c + u;
        }
        for (int h = 1; h <= horizons; ++h) {
            for (Eigen::Index k = 0; k < k_count; ++k) {
                z(k) = normal(rng);
            }
            const Eigen::VectorXd shock = root * z;
            for (Eigen::Index k = 0; k < k_count; ++k) {
                if (pd.process[static_cast<std::size_t>(k)] == FactorProcess::random_walk_drift) {
                    state(k) += pd.drift(k) + shock(k);
                } else {
                    state(k) = pd.drift(k) + pd.ar(k) * (state(k) - pd.drift(k)) + shock(k);
                }
            }
            for (int i = 0; i < n_ages; ++i) {
                double eta = fit.alpha(i);
                for (Eigen::Index k = 0; k < k_count; ++k) {
                    eta += fit.beta[static_cast<std::size_t>(k)](i) * state(k);
                }
                if (fit.has_cohort()) {
                    const int c = origin + h - fit.ages[static_cast<std::size_t>(i)];
                    const double g =
                        c <= fit.last_cohort()
                            ? fit.gamma(c - fit.first_cohort)
                            : cohort_path[static_cast<std::size_t>(c - cd.anchor_cohort - 1)];
                    eta += fit.cohort_loading(i) * g;
                }
                samples[static_cast<std::size_t>((h - 1) * n_ages + i)].push_back(eta);
            }
        }
    }
    grid.log_lower.resize(n_ages, horizons);
    grid.log_upper.resize(n_ages, horizons);
    const double p_lo = (1.0 - level) / 2.0;
    const double p_hi = (1.0 + level) / 2.0;
    for (int h = 0; h < horizons; ++h) {
        for (int i = 0; i < n_ages; ++i) {
            auto &s = samples[static_cast<std::size_t>(h * n_ages + i)];
            std::sort(s.begin(), s.end());
            grid.log_lower(i, h) = quantile_sorted(s, p_lo);
            grid.log_upper(i, h) = quantile_sorted(s, p_hi);
        }
    }
    return grid;
}

} // namespace mortens
