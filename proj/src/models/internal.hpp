#pragma once

#include "mortens/models.hpp"

#include <functional>

namespace mortens::detail {

ModelFit fit_poisson(ModelId model, const MortalitySurface &train, const FitOptions &options);
ModelFit fit_lca(ModelId model, const MortalitySurface &train, const FitOptions &options);
ModelFit fit_functional(ModelId model, const MortalitySurface &train, const FitOptions &options);

/// Fills period and cohort dynamics from the fitted factors.
void estimate_dynamics(ModelFit &fit);

/// Poisson deviance of a log-rate surface against observed counts. Cells with
/// zero weight are skipped.
double poisson_deviance(const Eigen::MatrixXd &deaths, const Eigen::MatrixXd &exposures,
                        const Eigen::MatrixXd &log_rates,
                        const Eigen::MatrixXd *weights = nullptr);

AgeCentering age_centering(const std::vector<int> &ages);

/// Whittaker-type penalized smoother over age with a GCV-chosen penalty.
/// The second-difference penalty skips age 0 so the infant rate is left free.
struct AgeSmoother {
    explicit AgeSmoother(int n_ages, bool free_first = true);

    /// Smooths one curve; returns the chosen penalty through `lambda`.
    Eigen::VectorXd smooth(const Eigen::VectorXd &y, double *lambda = nullptr) const;

private:
    Eigen::MatrixXd eigenvectors_;
    Eigen::VectorXd eigenvalues_;
};

/// Finds x with f(x) = 0 by bracketing outward from x0 and bisecting.
/// Returns false when no sign change is found.
bool find_root(const std::function<double(double)> &f, double x0, double step, double tolerance,
               double &root);

} // namespace mortens::detail
