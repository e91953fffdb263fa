#pragma once

#include "mortens/data.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace mortens {

/// Parameters of a synthetic mortality generator.
///
/// Recognised generators:
///   lc_rank1       ln m = a_x + b_x k_t exactly (Poisson death noise optional)
///   apc_cohort     lc_rank1 plus g_{t-x}, scaled by `gamma_amplitude`
///   noisy_plateau  lc_rank1 whose period trend stalls after `plateau_year`,
///                  with extra iid noise of sd `cell_noise` on ln m
///   three_regime   lc_rank1 at young ages, apc_cohort at working ages and
///                  noisy_plateau at old ages, blended over 5-year bands
///
/// Unknown keys in `params` are rejected.
struct GeneratorSpec {
    std::string name = "lc_rank1";
    int first_age = 0;
    int last_age = 100;
    YearRange years{1960, 2019};
    Gender gender = Gender::female;
    std::string population_id = "SYN";
    std::map<std::string, double> params;

    double param(const std::string &key) const;
};

/// Default values for every recognised parameter key.
const std::map<std::string, double> &default_generator_params();

/// Deterministic for a given (spec, seed). The same seed drives the shared
/// a_x, b_x, k_t draws across generators, so apc_cohort with zero amplitude
/// reproduces lc_rank1.
MortalitySurface synthesize_surface(const GeneratorSpec &spec, std::uint64_t seed);

} // namespace mortens
