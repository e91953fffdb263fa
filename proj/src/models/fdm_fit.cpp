#include "internal.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace mortens::detail {

AgeSmoother::AgeSmoother(int n_ages, bool free_first) {
    const int first = free_first ? 1 : 0;
    const int rows = std::max(0, n_ages - first - 2);
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rows, n_ages);
    for (int r = 0; r < rows; ++r) {
        d(r, first + r) = 1.0;
        d(r, first + r + 1) = -2.0;
        d(r, first + r + 2) = 1.0;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(d.transpose() * d);
    eigenvectors_ = eig.eigenvectors();
    eigenvalues_ = eig.eigenvalues().cwiseMax(0.0);
}

Eigen::VectorXd AgeSmoother::smooth(const Eigen::VectorXd &y, double *lambda) const {
    const Eigen::VectorXd coef = eigenvectors_.transpose() * y;
    const double n = static_cast<double>(y.size());
    double best_gcv = std::numeric_limits<double>::infinity();
    double best_lambda = 0.0;
    // Log-spaced grid; GCV = n * RSS / (n - trace)^2.
    for (int g = 0; g <= 100; ++g) {
        const double lam = std::pow(10.0, -4.0 + 0.1 * g);
        double rss = 0.0;
        double trace = 0.0;
        for (Eigen::Index k = 0; k < coef.size(); ++k) {
            const double shrink = 1.0 / (1.0 + lam * eigenvalues_(k));
            const double r = (1.0 - shrink) * coef(k);
            rss += r * r;
            trace += shrink;
        }
        const double denom = n - trace;
        if (denom <= 1e-9) {
            continue;
        }
        const double gcv = n * rss / (denom * denom);
        if (gcv < best_gcv) {
            best_gcv = gcv;
            best_lambda = lam;
        }
    }
    if (lambda != nullptr) {
        *lambda = best_lambda;
    }
    const Eigen::VectorXd shrink =
        (1.0 + best_lambda * eigenvalues_.array()).inverse().matrix();
    return eigenvectors_ * shrink.cwiseProduct(coef);
}

namespace {

/// Mean curve and leading principal components of smoothed curves (ages x years).
/// Years listed in `excluded` are left out of the mean and basis but still scored.
Fpca principal_components(const Eigen::MatrixXd &smoothed, const std::vector<int> &years,
                          const std::vector<int> &excluded, int components) {
    std::vector<Eigen::Index> kept;
    for (Eigen::Index j = 0; j < smoothed.cols(); ++j) {
        if (std::find(excluded.begin(), excluded.end(), years[static_cast<std::size_t>(j)]) ==
            excluded.end()) {
            kept.push_back(j);
        }
    }
    Eigen::MatrixXd basis_data(smoothed.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t c = 0; c < kept.size(); ++c) {
        basis_data.col(static_cast<Eigen::Index>(c)) = smoothed.col(kept[c]);
    }
    Fpca out;
    out.excluded_years = excluded;
    out.mean = basis_data.rowwise().mean();
    const Eigen::MatrixXd centred = basis_data.colwise() - out.mean;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinU);
    const int k = std::min<int>(components, static_cast<int>(svd.matrixU().cols()));
    out.basis = svd.matrixU().leftCols(k);
    for (int c = 0; c < k; ++c) {
        Eigen::Index peak = 0;
        out.basis.col(c).cwiseAbs().maxCoeff(&peak);
        if (out.basis(peak, c) < 0.0) {
            out.basis.col(c) *= -1.0;
        }
    }
    out.scores = (smoothed.colwise() - out.mean).transpose() * out.basis;
    return out;
}

struct FunctionalPart {
    Fpca fpca;
    int n_params = 0;
};

FunctionalPart functional_fit(const Eigen::MatrixXd &log_m, const std::vector<int> &years,
                              int components, bool robust) {
    const int n_ages = static_cast<int>(log_m.rows());
    const int n_years = static_cast<int>(log_m.cols());
    const int k = std::max(1, std::min({components, n_years - 1, n_ages}));
    const AgeSmoother smoother(n_ages);
    Eigen::MatrixXd smoothed(log_m.rows(), log_m.cols());
    std::vector<double> penalties;
    for (Eigen::Index j = 0; j < log_m.cols(); ++j) {
        double lam = 0.0;
        smoothed.col(j) = smoother.smooth(log_m.col(j), &lam);
        penalties.push_back(lam);
    }
    std::nth_element(penalties.begin(), penalties.begin() + penalties.size() / 2, penalties.end());
    const double median_penalty = penalties[penalties.size() / 2];

    FunctionalPart part;
    part.fpca = principal_components(smoothed, years, {}, k);
    if (robust) {
        // Each year is scored against components fitted without it, so a
        // shocked year cannot claim a component of its own.
        std::vector<double> loss(static_cast<std::size_t>(n_years));
        for (int j = 0; j < n_years; ++j) {
            const Fpca held_out =
                principal_components(smoothed, years, {years[static_cast<std::size_t>(j)]}, k);
            const Eigen::VectorXd fitted =
                held_out.mean + held_out.basis * held_out.scores.row(j).transpose();
            loss[static_cast<std::size_t>(j)] = (log_m.col(j) - fitted).squaredNorm();
        }
        auto median = [](std::vector<double> v) {
            const auto mid = v.size() / 2;
            std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
            double m = v[mid];
            if (v.size() % 2 == 0) {
                m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
            }
            return m;
        };
        const double centre = median(loss);
        std::vector<double> deviations;
        for (double l : loss) {
            deviations.push_back(std::fabs(l - centre));
        }
        const double threshold = centre + 3.0 * 1.4826 * median(deviations);
        std::vector<int> excluded;
        for (int j = 0; j < n_years; ++j) {
            if (loss[static_cast<std::size_t>(j)] > threshold) {
                excluded.push_back(years[static_cast<std::size_t>(j)]);
            }
        }
        if (!excluded.empty() && n_years - static_cast<int>(excluded.size()) > k) {
            part.fpca = principal_components(smoothed, years, excluded, k);
        }
    }
    part.fpca.smoothing = median_penalty;
    const int kk = static_cast<int>(part.fpca.basis.cols());
    part.n_params = n_ages + kk * (n_ages + n_years) - kk * (kk + 1) / 2;
    return part;
}

void store(ModelFit &fit, const Fpca &f, double sign) {
    for (Eigen::Index k = 0; k < f.basis.cols(); ++k) {
        fit.beta.push_back(sign * f.basis.col(k));
        fit.kappa.push_back(f.scores.col(k));
    }
}

} // namespace

ModelFit fit_functional(ModelId model, const MortalitySurface &train, const FitOptions &options) {
    ModelFit fit;
    fit.model = model;
    fit.gender = train.gender();
    fit.ages = train.ages();
    fit.years = train.years();
    fit.centering = age_centering(train.ages());
    const Eigen::MatrixXd log_m = train.log_rates();

    if (model == ModelId::pr) {
        if (options.partner == nullptr) {
            throw FitError("pr: needs the other gender's surface");
        }
        const MortalitySurface &partner_full = *options.partner;
        if (partner_full.gender() == train.gender()) {
            throw FitError("pr: partner surface has the same gender");
        }
        if (partner_full.ages() != train.ages()) {
            throw FitError("pr: partner surface has different ages");
        }
        const MortalitySurface partner = partner_full.slice_years(train.year_range());
        const bool male = train.gender() == Gender::male;
        const Eigen::MatrixXd log_male = male ? log_m : partner.log_rates();
        const Eigen::MatrixXd log_female = male ? partner.log_rates() : log_m;
        const Eigen::MatrixXd log_product = 0.5 * (log_male + log_female);
        const Eigen::MatrixXd log_ratio = 0.5 * (log_male - log_female);
        const double sign = male ? 1.0 : -1.0;

        const FunctionalPart product = functional_fit(log_product, fit.years,
                                                      options.fpca_components, false);
        const FunctionalPart ratio = functional_fit(log_ratio, fit.years,
                                                    options.fpca_components, false);
        fit.alpha = product.fpca.mean + sign * ratio.fpca.mean;
        store(fit, product.fpca, 1.0);
        store(fit, ratio.fpca, sign);
        fit.fpca = product.fpca;
        fit.ratio_fpca = ratio.fpca;
        fit.period_dynamics.process.assign(product.fpca.basis.cols(),
                                           FactorProcess::random_walk_drift);
        fit.period_dynamics.process.resize(fit.kappa.size(), FactorProcess::ar1_mean);
        fit.meta.n_params = product.n_params + ratio.n_params;
    } else {
        const FunctionalPart part = functional_fit(log_m, fit.years, options.fpca_components,
                                                   model == ModelId::robust_fdm);
        fit.alpha = part.fpca.mean;
        store(fit, part.fpca, 1.0);
        fit.fpca = part.fpca;
        fit.meta.n_params = part.n_params;
    }
    fit.meta.deviance = poisson_deviance(train.deaths(), train.exposures(), fit.fitted_log_rates());
    fit.meta.converged = std::isfinite(fit.meta.deviance);
    return fit;
}

} // namespace mortens::detail
