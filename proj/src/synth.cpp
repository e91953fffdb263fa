#include "mortens/synth.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mortens {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent engine per (seed, component) so that adding a component never
/// shifts the draws of another.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t component) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(component)));
}

enum Component : std::uint64_t {
    kBaseLevel = 1,
    kBaseLoading = 2,
    kPeriod = 3,
    kCohort = 4,
    kCellNoise = 5,
    kDeathNoise = 6,
};

struct Base {
    Eigen::VectorXd alpha;
    Eigen::VectorXd beta;
    Eigen::VectorXd kappa;
    Eigen::VectorXd kappa_innovation;
};

Base base_components(const GeneratorSpec &spec, std::uint64_t seed) {
    const int n_ages = spec.last_age - spec.first_age + 1;
    const int n_years = spec.years.size();
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool male = spec.gender == Gender::male;

    Base base;
    base.alpha.resize(n_ages);
    auto level_rng = stream(seed, kBaseLevel);
    for (int i = 0; i < n_ages; ++i) {
        const double x = spec.first_age + i;
        double m = 0.0055 * std::exp(-1.1 * x) + 0.00025 * std::exp(-1.1 * x) +
                   0.00045 * std::exp(-std::pow((x - 23.0) / 9.0, 2.0)) +
                   0.000035 * std::exp(0.094 * x);
        if (male) {
            m *= 1.0 + 0.9 * std::exp(-std::pow((x - 45.0) / 30.0, 2.0)) + 0.25;
        }
        base.alpha(i) = std::log(m) + 0.02 * normal(level_rng);
    }

    base.beta.resize(n_ages);
    auto loading_rng = stream(seed, kBaseLoading);
    for (int i = 0; i < n_ages; ++i) {
        const double x = spec.first_age + i;
        const double shape = std::exp(-x / 55.0) + 0.35;
        base.beta(i) = shape * std::max(0.2, 1.0 + 0.08 * normal(loading_rng));
    }
    base.beta /= base.beta.sum();

    const double drift = spec.param("kappa_drift") * (male ? 0.85 : 1.0);
    const double sigma = spec.param("kappa_sigma");
    auto period_rng = stream(seed, kPeriod);
    base.kappa.resize(n_years);
    base.kappa_innovation.resize(n_years);
    double level = 0.0;
    for (int j = 0; j < n_years; ++j) {
        const double e = normal(period_rng);
        base.kappa_innovation(j) = e;
        if (j > 0) {
            level += drift + sigma * e;
        }
        base.kappa(j) = level;
    }
    base.kappa.array() -= base.kappa.mean();
    return base;
}

Eigen::MatrixXd lc_log_rates(const Base &base) { return base.alpha.replicate(1, base.kappa.size()) + base.beta * base.kappa.transpose(); }

Eigen::VectorXd cohort_series(const GeneratorSpec &spec, std::uint64_t seed) {
    const int first_cohort = spec.years.first - spec.last_age;
    const int last_cohort = spec.years.last - spec.first_age;
    const int n = last_cohort - first_cohort + 1;
    auto rng = stream(seed, kCohort);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd g(n);
    const double phi = 0.85;
    double state = normal(rng) / std::sqrt(1.0 - phi * phi);
    for (int c = 0; c < n; ++c) {
        state = phi * state + normal(rng);
        g(c) = state * std::sqrt(1.0 - phi * phi);
    }
    return g;
}

Eigen::MatrixXd apc_log_rates(const GeneratorSpec &spec, const Base &base, std::uint64_t seed) {
    Eigen::MatrixXd log_m = lc_log_rates(base);
    const double amplitude = spec.param("gamma_amplitude");
    if (amplitude == 0.0) {
        return log_m;
    }
    const Eigen::VectorXd g = cohort_series(spec, seed);
    const int first_cohort = spec.years.first - spec.last_age;
    for (int i = 0; i < log_m.rows(); ++i) {
        for (int j = 0; j < log_m.cols(); ++j) {
            const int cohort = spec.years.first + j - (spec.first_age + i);
            log_m(i, j) += amplitude * g(cohort - first_cohort);
        }
    }
    return log_m;
}

Eigen::MatrixXd plateau_log_rates(const GeneratorSpec &spec, const Base &base,
                                  std::uint64_t seed) {
    const bool male = spec.gender == Gender::male;
    const double drift = spec.param("kappa_drift") * (male ? 0.85 : 1.0);
    const double sigma = spec.param("kappa_sigma");
    const double factor = spec.param("plateau_factor");
    const int plateau_year = static_cast<int>(spec.param("plateau_year"));
    Eigen::VectorXd kappa(base.kappa.size());
    double level = 0.0;
    for (Eigen::Index j = 0; j < kappa.size(); ++j) {
        if (j > 0) {
            const int year = spec.years.first + static_cast<int>(j);
            const double d = year > plateau_year ? drift * factor : drift;
            level += d + sigma * base.kappa_innovation(j);
        }
        kappa(j) = level;
    }
    kappa.array() -= kappa.mean();
    Eigen::MatrixXd log_m = base.alpha.replicate(1, kappa.size()) + base.beta * kappa.transpose();
    const double noise = spec.param("cell_noise");
    if (noise > 0.0) {
        auto rng = stream(seed ^ (male ? 0x55ULL : 0x0ULL), kCellNoise);
        std::normal_distribution<double> normal(0.0, noise);
        for (Eigen::Index j = 0; j < log_m.cols(); ++j) {
            for (Eigen::Index i = 0; i < log_m.rows(); ++i) {
                log_m(i, j) += normal(rng);
            }
        }
    }
    return log_m;
}

/// Linear ramp from 0 below `lo` to 1 above `hi`.
double ramp(double x, double lo, double hi) {
    if (x <= lo) {
        return 0.0;
    }
    if (x >= hi) {
        return 1.0;
    }
    return (x - lo) / (hi - lo);
}

} // namespace

const std::map<std::string, double> &default_generator_params() {
    static const std::map<std::string, double> defaults{
        {"kappa_drift", -1.5},    {"kappa_sigma", 1.0},    {"gamma_amplitude", 0.1},
        {"plateau_year", 1990.0}, {"plateau_factor", 0.3}, {"cell_noise", 0.03},
        {"poisson_noise", 0.0},   {"exposure_scale", 1.0e5},
    };
    return defaults;
}

double GeneratorSpec::param(const std::string &key) const {
    if (auto it = params.find(key); it != params.end()) {
        return it->second;
    }
    const auto &defaults = default_generator_params();
    if (auto it = defaults.find(key); it != defaults.end()) {
        return it->second;
    }
    throw std::invalid_argument("unknown generator parameter '" + key + "'");
}

MortalitySurface synthesize_surface(const GeneratorSpec &spec, std::uint64_t seed) {
    for (const auto &[key, value] : spec.params) {
        if (!default_generator_params().contains(key)) {
            throw std::invalid_argument("unknown generator parameter '" + key + "'");
        }
    }
    if (spec.last_age < spec.first_age || spec.years.empty()) {
        throw std::invalid_argument("generator: empty age or year range");
    }
    const Base base = base_components(spec, seed);

    Eigen::MatrixXd log_m;
    if (spec.name == "lc_rank1") {
        log_m = lc_log_rates(base);
    } else if (spec.name == "apc_cohort") {
        log_m = apc_log_rates(spec, base, seed);
    } else if (spec.name == "noisy_plateau") {
        log_m = plateau_log_rates(spec, base, seed);
    } else if (spec.name == "three_regime") {
        const Eigen::MatrixXd young = lc_log_rates(base);
        const Eigen::MatrixXd working = apc_log_rates(spec, base, seed);
        const Eigen::MatrixXd old = plateau_log_rates(spec, base, seed);
        log_m.resize(young.rows(), young.cols());
        for (Eigen::Index i = 0; i < young.rows(); ++i) {
            const double x = spec.first_age + static_cast<double>(i);
            const double w_old = ramp(x, 62.0, 67.0);
            const double w_working = ramp(x, 27.0, 32.0) - w_old;
            const double w_young = 1.0 - w_working - w_old;
            log_m.row(i) = w_young * young.row(i) + w_working * working.row(i) +
                           w_old * old.row(i);
        }
    } else {
        throw std::invalid_argument("unknown generator '" + spec.name + "'");
    }

    std::vector<int> ages;
    for (int a = spec.first_age; a <= spec.last_age; ++a) {
        ages.push_back(a);
    }
    std::vector<int> years;
    for (int y = spec.years.first; y <= spec.years.last; ++y) {
        years.push_back(y);
    }

    const double scale = spec.param("exposure_scale");
    Eigen::MatrixXd exposures(log_m.rows(), log_m.cols());
    for (Eigen::Index i = 0; i < exposures.rows(); ++i) {
        const double x = spec.first_age + static_cast<double>(i);
        const double survivors = std::exp(-6.0e-5 * std::pow(x, 2.5));
        for (Eigen::Index j = 0; j < exposures.cols(); ++j) {
            exposures(i, j) = scale * survivors * (1.0 + 0.004 * static_cast<double>(j));
        }
    }
    Eigen::MatrixXd deaths = log_m.array().exp().matrix().cwiseProduct(exposures);
    if (spec.param("poisson_noise") != 0.0) {
        auto rng = stream(seed ^ (spec.gender == Gender::male ? 0xaaULL : 0x0ULL), kDeathNoise);
        for (Eigen::Index j = 0; j < deaths.cols(); ++j) {
            for (Eigen::Index i = 0; i < deaths.rows(); ++i) {
                std::poisson_distribution<long long> poisson(deaths(i, j));
                deaths(i, j) = static_cast<double>(poisson(rng));
            }
        }
    }
    return MortalitySurface(std::move(ages), std::move(years), std::move(deaths),
                            std::move(exposures), spec.gender, spec.population_id);
}

} // namespace mortens
