#include "internal.hpp"

#include "mortens/life_table.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace mortens::detail {

namespace {

struct SvdTerms {
    Eigen::VectorXd alpha;
    std::vector<Eigen::VectorXd> beta;
    std::vector<Eigen::VectorXd> kappa;
};

/// Rank-`terms` SVD of the age-centred log rates, each loading scaled to sum to one.
SvdTerms svd_terms(const Eigen::MatrixXd &log_m, int terms) {
    SvdTerms out;
    out.alpha = log_m.rowwise().mean();
    const Eigen::MatrixXd centred = log_m.colwise() - out.alpha;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinU | Eigen::ComputeThinV);
    for (int k = 0; k < terms; ++k) {
        Eigen::VectorXd u = svd.matrixU().col(k);
        double total = u.sum();
        if (std::fabs(total) < 1e-12) {
            // Loading with no net level; fall back to unit norm with a positive peak.
            Eigen::Index peak = 0;
            u.cwiseAbs().maxCoeff(&peak);
            total = u(peak) > 0 ? 1.0 : -1.0;
        }
        out.beta.push_back(u / total);
        out.kappa.push_back(svd.singularValues()(k) * total * svd.matrixV().col(k));
    }
    return out;
}

Eigen::VectorXd year_log_rates(const SvdTerms &p, Eigen::Index j) {
    Eigen::VectorXd eta = p.alpha;
    for (std::size_t k = 0; k < p.beta.size(); ++k) {
        eta += p.beta[k] * p.kappa[k](j);
    }
    return eta;
}

void adjust_total_deaths(SvdTerms &p, const MortalitySurface &train) {
    const auto &d = train.deaths();
    const auto &e = train.exposures();
    for (Eigen::Index j = 0; j < train.n_years(); ++j) {
        const double observed = d.col(j).sum();
        auto gap = [&](double k) {
            const Eigen::VectorXd eta = p.alpha + p.beta[0] * k;
            return e.col(j).dot(eta.array().exp().matrix()) - observed;
        };
        double root = 0.0;
        if (!find_root(gap, p.kappa[0](j), 1.0, 1e-10, root)) {
            throw FitError("lca_dt: cannot match total deaths in " +
                           std::to_string(train.years()[static_cast<std::size_t>(j)]));
        }
        p.kappa[0](j) = root;
    }
}

void adjust_life_expectancy(SvdTerms &p, const MortalitySurface &train) {
    const Eigen::MatrixXd &rates = train.rates();
    for (Eigen::Index j = 0; j < train.n_years(); ++j) {
        const double target = life_expectancy_at_birth(rates.col(j));
        auto gap = [&](double k) {
            const Eigen::VectorXd eta = p.alpha + p.beta[0] * k;
            return life_expectancy_at_birth(eta.array().exp().matrix()) - target;
        };
        double root = 0.0;
        if (!find_root(gap, p.kappa[0](j), 1.0, 1e-9, root)) {
            throw FitError("lca_e0: cannot match life expectancy in " +
                           std::to_string(train.years()[static_cast<std::size_t>(j)]));
        }
        p.kappa[0](j) = root;
    }
}

/// Per-year Poisson Newton refit of the first period index, with the other
/// terms held as an offset.
void refit_first_index(SvdTerms &p, const MortalitySurface &train) {
    const auto &d = train.deaths();
    const auto &e = train.exposures();
    for (Eigen::Index j = 0; j < train.n_years(); ++j) {
        Eigen::VectorXd offset = p.alpha;
        for (std::size_t k = 1; k < p.beta.size(); ++k) {
            offset += p.beta[k] * p.kappa[k](j);
        }
        double k1 = p.kappa[0](j);
        for (int it = 0; it < 100; ++it) {
            const Eigen::VectorXd fitted =
                e.col(j).cwiseProduct((offset + p.beta[0] * k1).array().exp().matrix());
            const double gradient = (d.col(j) - fitted).dot(p.beta[0]);
            const double hessian = fitted.dot(p.beta[0].cwiseAbs2());
            if (hessian <= 0.0) {
                break;
            }
            const double step = gradient / hessian;
            k1 += step;
            if (std::fabs(step) < 1e-12 * (1.0 + std::fabs(k1))) {
                break;
            }
        }
        p.kappa[0](j) = k1;
    }
}

} // namespace

ModelFit fit_lca(ModelId model, const MortalitySurface &train, const FitOptions &) {
    const int terms = model == ModelId::lca_dxt ? 2 : 1;
    if (train.n_ages() < terms + 1) {
        throw FitError(std::string(label(model)) + ": too few ages");
    }
    SvdTerms p = svd_terms(train.log_rates(), terms);
    switch (model) {
    case ModelId::lca_dt:
        adjust_total_deaths(p, train);
        break;
    case ModelId::lca_e0:
        if (train.ages().front() != 0) {
            throw FitError("lca_e0: life expectancy at birth needs age 0");
        }
        adjust_life_expectancy(p, train);
        break;
    case ModelId::lca_dxt:
        refit_first_index(p, train);
        break;
    default:
        break;
    }
    for (std::size_t k = 0; k < p.kappa.size(); ++k) {
        const double m = p.kappa[k].mean();
        p.kappa[k].array() -= m;
        p.alpha += p.beta[k] * m;
    }

    ModelFit fit;
    fit.model = model;
    fit.gender = train.gender();
    fit.ages = train.ages();
    fit.years = train.years();
    fit.centering = age_centering(train.ages());
    fit.alpha = p.alpha;
    fit.beta = p.beta;
    fit.kappa = p.kappa;

    Eigen::MatrixXd eta(train.n_ages(), train.n_years());
    for (Eigen::Index j = 0; j < eta.cols(); ++j) {
        eta.col(j) = year_log_rates(p, j);
    }
    fit.meta.deviance = poisson_deviance(train.deaths(), train.exposures(), eta);
    fit.meta.converged = std::isfinite(fit.meta.deviance);
    const int a = train.n_ages();
    const int t = train.n_years();
    fit.meta.n_params = terms == 1 ? 2 * a + t - 2 : 3 * a + 2 * t - 4;
    return fit;
}

bool find_root(const std::function<double(double)> &f, double x0, double step, double tolerance,
               double &root) {
    double lo = x0;
    double hi = x0;
    const double f0 = f(x0);
    if (f0 == 0.0) {
        root = x0;
        return true;
    }
    double f_lo = f0;
    double f_hi = f0;
    bool bracketed = false;
    for (int it = 0; it < 80 && !bracketed; ++it) {
        lo = x0 - step;
        hi = x0 + step;
        f_lo = f(lo);
        f_hi = f(hi);
        if (std::signbit(f_lo) != std::signbit(f0)) {
            hi = x0;
            f_hi = f0;
            bracketed = true;
        } else if (std::signbit(f_hi) != std::signbit(f0)) {
            lo = x0;
            f_lo = f0;
            bracketed = true;
        } else {
            step *= 2.0;
        }
    }
    if (!bracketed || !std::isfinite(f_lo) || !std::isfinite(f_hi)) {
        return false;
    }
    for (int it = 0; it < 400 && hi - lo > tolerance; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f_mid = f(mid);
        if (f_mid == 0.0) {
            lo = hi = mid;
            break;
        }
        if (std::signbit(f_mid) == std::signbit(f_lo)) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    root = 0.5 * (lo + hi);
    return true;
}

} // namespace mortens::detail
