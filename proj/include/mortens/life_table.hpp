#pragma once

#include <Eigen/Dense>

namespace mortens {

/// Period life table from radix 1.
struct LifeTable {
    Eigen::VectorXd q;
    Eigen::VectorXd l;
    Eigen::VectorXd e;

    double e0() const { return e(0); }
};

/// Infant separation factor a_0; older single ages use 0.5.
inline constexpr double kInfantSeparation = 0.1;
/// Upper bound on remaining life expectancy in the open closing age group.
inline constexpr double kMaxClosingExpectancy = 1.0;

/// Builds a single-year life table from central rates starting at age 0. The
/// last entry is the open closing group with q = 1 and
/// e = min(1 / m, kMaxClosingExpectancy).
LifeTable life_table(const Eigen::VectorXd &rates);

/// Shortcut for life_table(rates).e0() without allocating the full table.
double life_expectancy_at_birth(const Eigen::VectorXd &rates);

} // namespace mortens
