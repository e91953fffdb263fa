#include "internal.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <optional>

namespace mortens::detail {

namespace {

constexpr int kMinCohortCells = 3;
/// Relative weight of the gamma penalty for the cohort model with an estimated
/// cohort loading. Without it, cohorts seen only at ages with a near-zero
/// loading take arbitrarily large values.
constexpr double kCohortPenalty = 1e-2;

enum class CohortKind { none, fixed, estimated };

/// Which parts of the common predictor a model uses. A missing period loading
/// means it is estimated (bilinear term).
struct Structure {
    bool has_alpha = false;
    std::vector<std::optional<Eigen::VectorXd>> loadings;
    CohortKind cohort = CohortKind::none;
    Eigen::VectorXd cohort_fixed;
};

Structure structure_for(ModelId model, const std::vector<int> &ages, const AgeCentering &c) {
    const auto n = static_cast<Eigen::Index>(ages.size());
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        z(i) = ages[static_cast<std::size_t>(i)] - c.mean_age;
    }
    Eigen::VectorXd quadratic = z.array().square() - c.age_variance;
    Eigen::VectorXd positive = z.cwiseMax(0.0);
    Eigen::VectorXd pivot(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        pivot(i) = c.cohort_pivot - ages[static_cast<std::size_t>(i)];
    }

    Structure s;
    switch (model) {
    case ModelId::lc:
        s.has_alpha = true;
        s.loadings = {std::nullopt};
        break;
    case ModelId::rh:
        s.has_alpha = true;
        s.loadings = {std::nullopt};
        s.cohort = CohortKind::estimated;
        break;
    case ModelId::apc:
        s.has_alpha = true;
        s.loadings = {ones};
        s.cohort = CohortKind::fixed;
        s.cohort_fixed = ones;
        break;
    case ModelId::cbd:
        s.loadings = {ones, z};
        break;
    case ModelId::m6:
        s.loadings = {ones, z};
        s.cohort = CohortKind::fixed;
        s.cohort_fixed = ones;
        break;
    case ModelId::m7:
        s.loadings = {ones, z, quadratic};
        s.cohort = CohortKind::fixed;
        s.cohort_fixed = ones;
        break;
    case ModelId::m8:
        s.loadings = {ones, z};
        s.cohort = CohortKind::fixed;
        s.cohort_fixed = pivot;
        break;
    case ModelId::plat:
        s.has_alpha = true;
        s.loadings = {ones, z, positive};
        s.cohort = CohortKind::fixed;
        s.cohort_fixed = ones;
        break;
    default:
        throw std::logic_error("not a Poisson model: " + std::string(label(model)));
    }
    return s;
}

/// Least-squares polynomial trend of `values` in `u`, evaluated in long double.
/// Returns coefficients of 1, u, u^2, ... up to `degree`.
std::vector<long double> polynomial_trend(const Eigen::VectorXd &values,
                                          const std::vector<long double> &u, int degree) {
    const int p = degree + 1;
    std::vector<long double> normal(static_cast<std::size_t>(p * p), 0.0L);
    std::vector<long double> rhs(static_cast<std::size_t>(p), 0.0L);
    for (std::size_t c = 0; c < u.size(); ++c) {
        long double basis[3] = {1.0L, u[c], u[c] * u[c]};
        for (int a = 0; a < p; ++a) {
            rhs[static_cast<std::size_t>(a)] += basis[a] * values(static_cast<Eigen::Index>(c));
            for (int b = 0; b < p; ++b) {
                normal[static_cast<std::size_t>(a * p + b)] += basis[a] * basis[b];
            }
        }
    }
    // Gaussian elimination with partial pivoting on the small system.
    for (int col = 0; col < p; ++col) {
        int best = col;
        for (int r = col + 1; r < p; ++r) {
            if (std::fabs(normal[static_cast<std::size_t>(r * p + col)]) >
                std::fabs(normal[static_cast<std::size_t>(best * p + col)])) {
                best = r;
            }
        }
        for (int k = 0; k < p; ++k) {
            std::swap(normal[static_cast<std::size_t>(col * p + k)],
                      normal[static_cast<std::size_t>(best * p + k)]);
        }
        std::swap(rhs[static_cast<std::size_t>(col)], rhs[static_cast<std::size_t>(best)]);
        for (int r = col + 1; r < p; ++r) {
            const long double f = normal[static_cast<std::size_t>(r * p + col)] /
                                  normal[static_cast<std::size_t>(col * p + col)];
            for (int k = col; k < p; ++k) {
                normal[static_cast<std::size_t>(r * p + k)] -=
                    f * normal[static_cast<std::size_t>(col * p + k)];
            }
            rhs[static_cast<std::size_t>(r)] -= f * rhs[static_cast<std::size_t>(col)];
        }
    }
    std::vector<long double> coef(static_cast<std::size_t>(p), 0.0L);
    for (int r = p - 1; r >= 0; --r) {
        long double acc = rhs[static_cast<std::size_t>(r)];
        for (int k = r + 1; k < p; ++k) {
            acc -= normal[static_cast<std::size_t>(r * p + k)] * coef[static_cast<std::size_t>(k)];
        }
        coef[static_cast<std::size_t>(r)] = acc / normal[static_cast<std::size_t>(r * p + r)];
    }
    return coef;
}

class PoissonFitter {
public:
    PoissonFitter(ModelId model, const MortalitySurface &train)
        : model_(model), deaths_(train.deaths()), exposures_(train.exposures()),
          ages_(train.ages()), years_(train.years()), centering_(age_centering(train.ages())),
          structure_(structure_for(model, train.ages(), centering_)) {
        n_ages_ = train.n_ages();
        n_years_ = train.n_years();
        // Cohorts seen in fewer than kMinCohortCells cells carry no weight.
        const bool clip = structure_.cohort != CohortKind::none;
        cohort_offset_ = clip ? kMinCohortCells - 1 : 0;
        n_cohorts_ = n_ages_ + n_years_ - 1 - 2 * cohort_offset_;
        first_cohort_ = years_.front() - ages_.back() + cohort_offset_;
        weights_ = Eigen::MatrixXd::Ones(n_ages_, n_years_);
        for (Eigen::Index j = 0; j < n_years_; ++j) {
            for (Eigen::Index i = 0; i < n_ages_; ++i) {
                if (!in_fit(i, j)) {
                    weights_(i, j) = 0.0;
                }
            }
        }
        const long double cbar = first_cohort_ + (n_cohorts_ - 1) / 2.0L;
        cohort_u_.resize(static_cast<std::size_t>(n_cohorts_));
        for (int c = 0; c < n_cohorts_; ++c) {
            cohort_u_[static_cast<std::size_t>(c)] = first_cohort_ + c - cbar;
        }
        cohort_mean_ = static_cast<double>(cbar);
        initialise(train.log_rates());
    }

    /// Replaces the age-period part with another fit's and re-seeds the cohort
    /// effect from the remaining residuals.
    void warm_start(const PoissonFitter &other, const Eigen::MatrixXd &log_m) {
        alpha_ = other.alpha_;
        for (std::size_t k = 0; k < beta_.size() && k < other.beta_.size(); ++k) {
            beta_[k] = other.beta_[k];
            kappa_[k] = other.kappa_[k];
        }
        initialise_cohort(log_m);
        project();
    }

    /// Ridge on gamma as a fraction of the median cohort information at the
    /// current parameters.
    void set_cohort_ridge(double relative) {
        refresh();
        Eigen::VectorXd info = Eigen::VectorXd::Zero(n_cohorts_);
        for (Eigen::Index j = 0; j < n_years_; ++j) {
            for (Eigen::Index i = 0; i < n_ages_; ++i) {
                if (in_fit(i, j)) {
                    info(cohort_index(i, j)) += fitted_(i, j) * cohort_loading_(i) * cohort_loading_(i);
                }
            }
        }
        std::vector<double> v(info.data(), info.data() + info.size());
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        gamma_penalty_ = relative * v[v.size() / 2] / cohort_loading_.squaredNorm();
    }

    FitMeta run(int max_iterations, double tolerance) {
        FitMeta meta;
        refresh();
        double dev = objective();
        const double floor = 1e-6 * static_cast<double>(n_ages_ * n_years_);
        for (int it = 1; it <= max_iterations; ++it) {
            sweep();
            project();
            refresh();
            const double next = objective();
            meta.iterations = it;
            if (!std::isfinite(next)) {
                meta.diagnostic = "deviance became non-finite at iteration " + std::to_string(it);
                meta.deviance = next;
                return meta;
            }
            const double change = std::fabs(dev - next);
            dev = next;
            if (change <= tolerance * std::max(dev, floor)) {
                meta.converged = true;
                break;
            }
        }
        meta.deviance = deviance();
        if (!meta.converged) {
            meta.diagnostic = "relative deviance change above tolerance after " +
                              std::to_string(max_iterations) + " iterations";
        }
        return meta;
    }

    void export_to(ModelFit &fit) const {
        fit.model = model_;
        fit.ages = ages_;
        fit.years = years_;
        fit.centering = centering_;
        fit.alpha = structure_.has_alpha ? alpha_ : Eigen::VectorXd::Zero(n_ages_);
        fit.beta = beta_;
        fit.kappa = kappa_;
        if (structure_.cohort != CohortKind::none) {
            fit.cohort_loading = cohort_loading_;
            fit.gamma = gamma_;
            fit.first_cohort = first_cohort_;
        }
    }

    int parameter_count() const {
        const int a = n_ages_;
        const int t = n_years_;
        const int c = n_cohorts_;
        switch (model_) {
        case ModelId::lc:
            return 2 * a + t - 2;
        case ModelId::rh:
            return 3 * a + t + c - 4;
        case ModelId::apc:
            return a + t + c - 3;
        case ModelId::cbd:
            return 2 * t;
        case ModelId::m6:
            return 2 * t + c - 2;
        case ModelId::m7:
            return 3 * t + c - 3;
        case ModelId::m8:
            return 2 * t + c - 1;
        case ModelId::plat:
            return a + 3 * t + c - 6;
        default:
            return 0;
        }
    }

private:
    int cohort_index(Eigen::Index i, Eigen::Index j) const {
        return static_cast<int>(j - i) + n_ages_ - 1 - cohort_offset_;
    }

    bool in_fit(Eigen::Index i, Eigen::Index j) const {
        const int c = cohort_index(i, j);
        return c >= 0 && c < n_cohorts_;
    }

    void initialise(const Eigen::MatrixXd &log_m) {
        const auto k_count = structure_.loadings.size();
        alpha_ = Eigen::VectorXd::Zero(n_ages_);
        if (structure_.has_alpha) {
            alpha_ = log_m.rowwise().mean();
        }
        const Eigen::MatrixXd centred = log_m.colwise() - alpha_;
        beta_.assign(k_count, Eigen::VectorXd());
        kappa_.assign(k_count, Eigen::VectorXd());

        bool any_free = false;
        for (std::size_t k = 0; k < k_count; ++k) {
            if (structure_.loadings[k]) {
                beta_[k] = *structure_.loadings[k];
            } else {
                any_free = true;
            }
        }
        if (any_free) {
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred,
                                                  Eigen::ComputeThinU | Eigen::ComputeThinV);
            Eigen::VectorXd u = svd.matrixU().col(0);
            double total = u.sum();
            if (std::fabs(total) < 1e-12) {
                total = 1.0;
            }
            beta_[0] = u / total;
            kappa_[0] = svd.singularValues()(0) * total * svd.matrixV().col(0);
        }
        // Fixed-loading factors start from per-year least squares.
        std::vector<std::size_t> fixed;
        for (std::size_t k = 0; k < k_count; ++k) {
            if (structure_.loadings[k]) {
                fixed.push_back(k);
            }
        }
        if (!fixed.empty()) {
            Eigen::MatrixXd design(n_ages_, static_cast<Eigen::Index>(fixed.size()));
            for (std::size_t f = 0; f < fixed.size(); ++f) {
                design.col(static_cast<Eigen::Index>(f)) = beta_[fixed[f]];
            }
            const Eigen::MatrixXd coef = design.colPivHouseholderQr().solve(centred);
            for (std::size_t f = 0; f < fixed.size(); ++f) {
                kappa_[fixed[f]] = coef.row(static_cast<Eigen::Index>(f)).transpose();
            }
        }

        initialise_cohort(log_m);
        project();
    }

    void initialise_cohort(const Eigen::MatrixXd &log_m) {
        const Eigen::MatrixXd centred = log_m.colwise() - alpha_;
        gamma_ = Eigen::VectorXd::Zero(n_cohorts_);
        if (structure_.cohort == CohortKind::fixed) {
            cohort_loading_ = structure_.cohort_fixed;
        } else if (structure_.cohort == CohortKind::estimated) {
            cohort_loading_ = Eigen::VectorXd::Constant(n_ages_, 1.0 / n_ages_);
            Eigen::MatrixXd residual = centred;
            for (std::size_t k = 0; k < beta_.size(); ++k) {
                residual -= beta_[k] * kappa_[k].transpose();
            }
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_cohorts_);
            Eigen::VectorXd count = Eigen::VectorXd::Zero(n_cohorts_);
            for (Eigen::Index j = 0; j < n_years_; ++j) {
                for (Eigen::Index i = 0; i < n_ages_; ++i) {
                    if (in_fit(i, j)) {
                        sum(cohort_index(i, j)) += residual(i, j);
                        count(cohort_index(i, j)) += 1.0;
                    }
                }
            }
            gamma_ = n_ages_ * sum.cwiseQuotient(count);
        }
    }

    void refresh() {
        eta_ = alpha_.replicate(1, n_years_);
        for (std::size_t k = 0; k < beta_.size(); ++k) {
            eta_.noalias() += beta_[k] * kappa_[k].transpose();
        }
        if (structure_.cohort != CohortKind::none) {
            for (Eigen::Index j = 0; j < n_years_; ++j) {
                for (Eigen::Index i = 0; i < n_ages_; ++i) {
                    if (in_fit(i, j)) {
                        eta_(i, j) += cohort_loading_(i) * gamma_(cohort_index(i, j));
                    }
                }
            }
        }
        fitted_ = exposures_.cwiseProduct(eta_.array().exp().matrix());
    }

    double deviance() const { return poisson_deviance(deaths_, exposures_, eta_, &weights_); }

    /// Deviance plus the cohort penalty, the quantity each step decreases. The
    /// penalty is unchanged by rescaling gamma against its loading.
    double objective() const {
        double value = deviance();
        if (gamma_penalty_ > 0.0) {
            value += gamma_penalty_ * cohort_loading_.squaredNorm() * gamma_.squaredNorm();
        }
        return value;
    }

    /// One Fisher-scoring step on all parameters jointly, with step halving.
    /// For the models without estimated loadings this is the exact Newton step.
    void sweep() {
        const auto k_count = static_cast<Eigen::Index>(beta_.size());
        std::vector<Eigen::Index> free_at(beta_.size(), -1);
        const Eigen::Index alpha_at = 0;
        const Eigen::Index kappa_at = structure_.has_alpha ? n_ages_ : 0;
        Eigen::Index next = kappa_at + k_count * n_years_;
        for (std::size_t k = 0; k < beta_.size(); ++k) {
            if (!structure_.loadings[k]) {
                free_at[k] = next;
                next += n_ages_;
            }
        }
        const bool cohort = structure_.cohort != CohortKind::none;
        const Eigen::Index gamma_at = next;
        next += cohort ? n_cohorts_ : 0;
        const bool cohort_free = structure_.cohort == CohortKind::estimated;
        const Eigen::Index loading_at = next;
        next += cohort_free ? n_ages_ : 0;
        const Eigen::Index p = next;

        Eigen::MatrixXd hessian = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd gradient = Eigen::VectorXd::Zero(p);
        std::vector<Eigen::Index> idx;
        std::vector<double> val;
        for (Eigen::Index j = 0; j < n_years_; ++j) {
            for (Eigen::Index i = 0; i < n_ages_; ++i) {
                if (weights_(i, j) == 0.0) {
                    continue;
                }
                idx.clear();
                val.clear();
                if (structure_.has_alpha) {
                    idx.push_back(alpha_at + i);
                    val.push_back(1.0);
                }
                for (Eigen::Index k = 0; k < k_count; ++k) {
                    const auto kk = static_cast<std::size_t>(k);
                    idx.push_back(kappa_at + k * n_years_ + j);
                    val.push_back(beta_[kk](i));
                    if (free_at[kk] >= 0) {
                        idx.push_back(free_at[kk] + i);
                        val.push_back(kappa_[kk](j));
                    }
                }
                if (cohort) {
                    idx.push_back(gamma_at + cohort_index(i, j));
                    val.push_back(cohort_loading_(i));
                    if (cohort_free) {
                        idx.push_back(loading_at + i);
                        val.push_back(gamma_(cohort_index(i, j)));
                    }
                }
                const double f = fitted_(i, j);
                const double r = deaths_(i, j) - f;
                for (std::size_t a = 0; a < idx.size(); ++a) {
                    gradient(idx[a]) += r * val[a];
                    for (std::size_t b = 0; b < idx.size(); ++b) {
                        if (idx[b] <= idx[a]) {
                            hessian(idx[a], idx[b]) += f * val[a] * val[b];
                        }
                    }
                }
            }
        }
        if (cohort_free && gamma_penalty_ > 0.0) {
            const double on_gamma = gamma_penalty_ * cohort_loading_.squaredNorm();
            const double on_loading = gamma_penalty_ * gamma_.squaredNorm();
            for (int c = 0; c < n_cohorts_; ++c) {
                gradient(gamma_at + c) -= on_gamma * gamma_(c);
                hessian(gamma_at + c, gamma_at + c) += on_gamma;
            }
            for (Eigen::Index i = 0; i < n_ages_; ++i) {
                gradient(loading_at + i) -= on_loading * cohort_loading_(i);
                hessian(loading_at + i, loading_at + i) += on_loading;
            }
        }
        // Only the lower triangle was accumulated. The relative ridge keeps the
        // solve defined along the unidentified directions.
        for (Eigen::Index a = 0; a < p; ++a) {
            hessian(a, a) *= 1.0 + 1e-9;
            hessian(a, a) += 1e-300;
        }
        const Eigen::VectorXd delta =
            hessian.selfadjointView<Eigen::Lower>().ldlt().solve(gradient);
        if (!delta.allFinite()) {
            return;
        }

        const Eigen::VectorXd alpha0 = alpha_;
        const std::vector<Eigen::VectorXd> beta0 = beta_;
        const std::vector<Eigen::VectorXd> kappa0 = kappa_;
        const Eigen::VectorXd gamma0 = gamma_;
        const Eigen::VectorXd loading0 = cohort_loading_;
        const double dev0 = objective();
        double scale = 1.0;
        for (int halving = 0; halving < 30; ++halving, scale *= 0.5) {
            if (structure_.has_alpha) {
                alpha_ = alpha0 + scale * delta.segment(alpha_at, n_ages_);
            }
            for (Eigen::Index k = 0; k < k_count; ++k) {
                const auto kk = static_cast<std::size_t>(k);
                kappa_[kk] = kappa0[kk] + scale * delta.segment(kappa_at + k * n_years_, n_years_);
                if (free_at[kk] >= 0) {
                    beta_[kk] = beta0[kk] + scale * delta.segment(free_at[kk], n_ages_);
                }
            }
            if (cohort) {
                gamma_ = gamma0 + scale * delta.segment(gamma_at, n_cohorts_);
            }
            if (cohort_free) {
                cohort_loading_ = loading0 + scale * delta.segment(loading_at, n_ages_);
            }
            refresh();
            const double dev = objective();
            if (std::isfinite(dev) && dev <= dev0 * (1.0 + 1e-12) + 1e-12) {
                return;
            }
        }
        alpha_ = alpha0;
        beta_ = beta0;
        kappa_ = kappa0;
        gamma_ = gamma0;
        cohort_loading_ = loading0;
        refresh();
    }

    /// Moves the parameters to the identified representative without changing
    /// the predictor.
    void project() {
        switch (model_) {
        case ModelId::lc:
            normalise_loading(0);
            centre_period(0);
            break;
        case ModelId::rh: {
            normalise_loading(0);
            centre_period(0);
            const double s0 = cohort_loading_.sum();
            if (std::fabs(s0) > 1e-12) {
                cohort_loading_ /= s0;
                gamma_ *= s0;
            }
            const double gbar = gamma_.mean();
            alpha_ += cohort_loading_ * gbar;
            gamma_.array() -= gbar;
            break;
        }
        case ModelId::apc:
            for (int pass = 0; pass < 2; ++pass) {
                const auto phi = polynomial_trend(gamma_, cohort_u_, 1);
                remove_trend(phi);
                for (Eigen::Index j = 0; j < n_years_; ++j) {
                    const long double s = years_[static_cast<std::size_t>(j)] - cohort_mean_;
                    kappa_[0](j) += static_cast<double>(phi[0] + phi[1] * s);
                }
                for (Eigen::Index i = 0; i < n_ages_; ++i) {
                    alpha_(i) -= static_cast<double>(phi[1] * ages_[static_cast<std::size_t>(i)]);
                }
            }
            centre_period(0);
            break;
        case ModelId::m6:
            for (int pass = 0; pass < 2; ++pass) {
                const auto phi = polynomial_trend(gamma_, cohort_u_, 1);
                remove_trend(phi);
                for (Eigen::Index j = 0; j < n_years_; ++j) {
                    const long double tau =
                        years_[static_cast<std::size_t>(j)] - cohort_mean_ - centering_.mean_age;
                    kappa_[0](j) += static_cast<double>(phi[0] + phi[1] * tau);
                    kappa_[1](j) -= static_cast<double>(phi[1]);
                }
            }
            break;
        case ModelId::m7:
            for (int pass = 0; pass < 2; ++pass) {
                const auto phi = polynomial_trend(gamma_, cohort_u_, 2);
                remove_trend(phi);
                const long double s2 = centering_.age_variance;
                for (Eigen::Index j = 0; j < n_years_; ++j) {
                    const long double tau =
                        years_[static_cast<std::size_t>(j)] - cohort_mean_ - centering_.mean_age;
                    kappa_[0](j) +=
                        static_cast<double>(phi[0] + phi[1] * tau + phi[2] * (tau * tau + s2));
                    kappa_[1](j) += static_cast<double>(-phi[1] - 2.0L * phi[2] * tau);
                    kappa_[2](j) += static_cast<double>(phi[2]);
                }
            }
            break;
        case ModelId::m8: {
            const double gbar = gamma_.mean();
            gamma_.array() -= gbar;
            kappa_[0].array() += (centering_.cohort_pivot - centering_.mean_age) * gbar;
            kappa_[1].array() -= gbar;
            break;
        }
        case ModelId::plat:
            for (int pass = 0; pass < 2; ++pass) {
                const auto phi = polynomial_trend(gamma_, cohort_u_, 2);
                remove_trend(phi);
                const long double xbar = centering_.mean_age;
                for (Eigen::Index j = 0; j < n_years_; ++j) {
                    const long double s = years_[static_cast<std::size_t>(j)] - cohort_mean_;
                    kappa_[0](j) += static_cast<double>(phi[0] + phi[1] * s + phi[2] * s * s -
                                                        2.0L * phi[2] * xbar * s);
                    kappa_[1](j) += static_cast<double>(-2.0L * phi[2] * s);
                }
                for (Eigen::Index i = 0; i < n_ages_; ++i) {
                    const long double x = ages_[static_cast<std::size_t>(i)];
                    alpha_(i) += static_cast<double>(-phi[1] * x + phi[2] * x * x);
                }
            }
            for (std::size_t k = 0; k < 3; ++k) {
                const double m = kappa_[k].mean();
                kappa_[k].array() -= m;
                alpha_ += m * beta_[k];
            }
            break;
        default:
            break;
        }
    }

    void normalise_loading(std::size_t k) {
        const double s = beta_[k].sum();
        if (std::fabs(s) > 1e-12) {
            beta_[k] /= s;
            kappa_[k] *= s;
        }
    }

    void centre_period(std::size_t k) {
        const double m = kappa_[k].mean();
        kappa_[k].array() -= m;
        alpha_ += beta_[k] * m;
    }

    void remove_trend(const std::vector<long double> &phi) {
        for (int c = 0; c < n_cohorts_; ++c) {
            const long double u = cohort_u_[static_cast<std::size_t>(c)];
            long double trend = phi[0] + phi[1] * u;
            if (phi.size() > 2) {
                trend += phi[2] * u * u;
            }
            gamma_(c) = static_cast<double>(gamma_(c) - trend);
        }
    }

    ModelId model_;
    const Eigen::MatrixXd &deaths_;
    const Eigen::MatrixXd &exposures_;
    std::vector<int> ages_;
    std::vector<int> years_;
    AgeCentering centering_;
    Structure structure_;
    int n_ages_ = 0;
    int n_years_ = 0;
    int n_cohorts_ = 0;
    int first_cohort_ = 0;
    int cohort_offset_ = 0;
    Eigen::MatrixXd weights_;
    double gamma_penalty_ = 0.0;
    double cohort_mean_ = 0.0;
    std::vector<long double> cohort_u_;

    Eigen::VectorXd alpha_;
    std::vector<Eigen::VectorXd> beta_;
    std::vector<Eigen::VectorXd> kappa_;
    Eigen::VectorXd cohort_loading_;
    Eigen::VectorXd gamma_;
    Eigen::MatrixXd eta_;
    Eigen::MatrixXd fitted_;
};

} // namespace

AgeCentering age_centering(const std::vector<int> &ages) {
    AgeCentering c;
    double sum = 0.0;
    for (int a : ages) {
        sum += a;
    }
    c.mean_age = sum / static_cast<double>(ages.size());
    double var = 0.0;
    for (int a : ages) {
        var += (a - c.mean_age) * (a - c.mean_age);
    }
    c.age_variance = var / static_cast<double>(ages.size());
    c.cohort_pivot = ages.back() + 1.0;
    return c;
}

double poisson_deviance(const Eigen::MatrixXd &deaths, const Eigen::MatrixXd &exposures,
                        const Eigen::MatrixXd &log_rates, const Eigen::MatrixXd *weights) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < deaths.cols(); ++j) {
        for (Eigen::Index i = 0; i < deaths.rows(); ++i) {
            if (weights != nullptr && (*weights)(i, j) == 0.0) {
                continue;
            }
            const double fitted = exposures(i, j) * std::exp(log_rates(i, j));
            const double d = deaths(i, j);
            if (d > 0.0) {
                const double r = (d - fitted) / fitted;
                total += d * std::log1p(r) - fitted * r;
            } else {
                total += fitted;
            }
        }
    }
    return 2.0 * total;
}

ModelFit fit_poisson(ModelId model, const MortalitySurface &train, const FitOptions &options) {
    ModelFit fit;
    fit.gender = train.gender();
    PoissonFitter fitter(model, train);
    if (model == ModelId::rh) {
        PoissonFitter lc(ModelId::lc, train);
        lc.run(options.max_iterations, options.tolerance);
        fitter.warm_start(lc, train.log_rates());
        fitter.set_cohort_ridge(kCohortPenalty);
    }
    fit.meta = fitter.run(options.max_iterations, options.tolerance);
    fitter.export_to(fit);
    fit.meta.n_params = fitter.parameter_count();
    return fit;
}

} // namespace mortens::detail
