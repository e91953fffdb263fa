#pragma once

#include "mortens/data.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mortens {

/// The fifteen base models, in M1..M15 order.
enum class ModelId {
    lc,
    rh,
    apc,
    cbd,
    m6,
    m7,
    m8,
    plat,
    lca_dt,
    lca_dxt,
    lca_e0,
    lca_none,
    fdm,
    robust_fdm,
    pr,
};

inline constexpr std::array<ModelId, 15> kAllModels{
    ModelId::lc,     ModelId::rh,      ModelId::apc,    ModelId::cbd,      ModelId::m6,
    ModelId::m7,     ModelId::m8,      ModelId::plat,   ModelId::lca_dt,   ModelId::lca_dxt,
    ModelId::lca_e0, ModelId::lca_none, ModelId::fdm,   ModelId::robust_fdm, ModelId::pr,
};

std::string_view label(ModelId model);
ModelId parse_model_id(std::string_view text);
/// Comma-separated labels, e.g. "lc,cbd". An empty string yields all models.
std::vector<ModelId> parse_model_list(std::string_view text);

/// Time-series process attached to a period factor.
enum class FactorProcess { random_walk_drift, ar1_mean };

/// Dynamics of the period factors. Innovations are jointly Gaussian.
struct PeriodDynamics {
    std::vector<FactorProcess> process;
    /// Drift for random walks, long-run mean for AR(1) factors.
    Eigen::VectorXd drift;
    /// AR coefficient; unused for random walks.
    Eigen::VectorXd ar;
    Eigen::MatrixXd innovation_cov;
};

/// gamma_c = intercept + slope * c + u_c, u_c = phi * u_{c-1} + e_c.
/// Cohorts after `anchor_cohort` that were not fitted are projected from
/// `anchor_residual`.
struct CohortDynamics {
    double intercept = 0.0;
    double slope = 0.0;
    double phi = 0.0;
    double sigma2 = 0.0;
    int anchor_cohort = 0;
    double anchor_residual = 0.0;
};

struct AgeCentering {
    double mean_age = 0.0;
    double age_variance = 0.0;
    double cohort_pivot = 0.0;
};

struct Fpca {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;  // ages x K, orthonormal columns
    Eigen::MatrixXd scores; // years x K
    std::vector<int> excluded_years;
    double smoothing = 0.0; // chosen penalty (median across years)
};

struct FitMeta {
    double deviance = 0.0;
    int n_params = 0;
    bool converged = false;
    int iterations = 0;
    std::string diagnostic;
};

/// Fitted parameters of one base model.
///
/// Every model is stored in the common predictor form
///   ln m(x, t) = alpha_x + sum_k beta_k(x) kappa_k(t) + cohort_loading(x) gamma_{t-x}
/// FDM variants keep mean/basis/scores in alpha/beta/kappa and repeat them in
/// `fpca`; product-ratio stacks product and ratio components, with the ratio
/// loadings signed by gender.
struct ModelFit {
    ModelId model = ModelId::lc;
    Gender gender = Gender::female;
    std::vector<int> ages;
    std::vector<int> years;

    Eigen::VectorXd alpha;
    std::vector<Eigen::VectorXd> beta;
    std::vector<Eigen::VectorXd> kappa;
    Eigen::VectorXd cohort_loading;
    Eigen::VectorXd gamma;
    int first_cohort = 0;

    AgeCentering centering;
    std::optional<Fpca> fpca;
    std::optional<Fpca> ratio_fpca;

    PeriodDynamics period_dynamics;
    CohortDynamics cohort_dynamics;
    FitMeta meta;

    bool has_cohort() const { return cohort_loading.size() > 0; }
    int n_ages() const { return static_cast<int>(ages.size()); }
    int n_years() const { return static_cast<int>(years.size()); }
    int last_cohort() const { return first_cohort + static_cast<int>(gamma.size()) - 1; }

    /// Fitted gamma inside the fitted cohort range, the cohort dynamics' mean
    /// path outside it.
    double cohort_effect(int cohort) const;

    Eigen::MatrixXd fitted_log_rates() const;
};

struct FitOptions {
    int max_iterations = 500;
    double tolerance = 1e-8;
    int fpca_components = 6;
    /// Other-gender surface on the same grid; required by the product-ratio model.
    const MortalitySurface *partner = nullptr;
};

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kMinTrainingYears = 20;

/// Fits one model. Poisson models iterate coordinate-wise Newton updates until
/// the relative deviance change drops below `tolerance`; non-convergence is
/// reported in `meta`, not thrown.
ModelFit fit(ModelId model, const MortalitySurface &train, const FitOptions &options = {});

/// Constraint residuals for the model's identifiability conditions, by name.
std::vector<std::pair<std::string, double>> constraint_residuals(const ModelFit &fit);

/// Point forecasts (and optional interval endpoints) on the log scale, ages x horizons.
struct ForecastGrid {
    ModelId model = ModelId::lc;
    int origin_year = 0;
    std::vector<int> ages;
    Eigen::MatrixXd log_point;
    Eigen::MatrixXd log_lower;
    Eigen::MatrixXd log_upper;
    double level = 0.0;
    bool converged = true;
    int n_params = 0;

    int horizons() const { return static_cast<int>(log_point.cols()); }
    bool has_intervals() const { return log_lower.size() > 0; }
    /// Log point forecast; `horizon` starts at 1.
    double point(int age_index, int horizon) const { return log_point(age_index, horizon - 1); }
};

ForecastGrid forecast_point(const ModelFit &fit, int horizons);

/// Central `level` intervals from Monte-Carlo factor paths. Deterministic in `seed`.
ForecastGrid simulate_intervals(const ModelFit &fit, int horizons, double level, int n_paths,
                                std::uint64_t seed);

enum class Phase { validation, test };

struct WindowOptions {
    FitOptions fit;
    bool intervals = false;
    double level = 0.8;
    int n_paths = 1000;
    std::uint64_t seed = 1;
};

/// Refits at every origin of the phase window and forecasts to the window end,
/// giving W one-step, W-1 two-step, ..., one W-step forecast. Errors are
/// rethrown as FitError tagged with the origin year.
std::vector<ForecastGrid> expanding_window_run(ModelId model, const MortalitySurface &surface,
                                               const SplitConfig &cfg, Phase phase,
                                               const WindowOptions &options = {});

/// Stream seed for one (seed, model, origin) task.
std::uint64_t task_seed(std::uint64_t seed, ModelId model, int origin);

} // namespace mortens
