#include "mortens/life_table.hpp"

#include <algorithm>
#include <stdexcept>

namespace mortens {

namespace {

double separation(Eigen::Index age) { return age == 0 ? kInfantSeparation : 0.5; }

void check_rates(const Eigen::VectorXd &rates) {
    if (rates.size() == 0) {
        throw std::invalid_argument("life_table: empty rate vector");
    }
    for (Eigen::Index i = 0; i < rates.size(); ++i) {
        if (!(rates(i) > 0.0)) {
            throw std::invalid_argument("life_table: rate at age " + std::to_string(i) +
                                        " is not positive");
        }
    }
}

} // namespace

LifeTable life_table(const Eigen::VectorXd &rates) {
    check_rates(rates);
    const Eigen::Index n = rates.size();
    const Eigen::Index last = n - 1;

    LifeTable table;
    table.q.resize(n);
    table.l.resize(n);
    table.e.resize(n);
    Eigen::VectorXd person_years(n);

    table.l(0) = 1.0;
    for (Eigen::Index x = 0; x < last; ++x) {
        const double m = rates(x);
        const double a = separation(x);
        const double q = std::min(1.0, m / (1.0 + (1.0 - a) * m));
        table.q(x) = q;
        const double dx = table.l(x) * q;
        table.l(x + 1) = table.l(x) - dx;
        person_years(x) = table.l(x + 1) + a * dx;
    }
    table.q(last) = 1.0;
    person_years(last) = table.l(last) * std::min(1.0 / rates(last), kMaxClosingExpectancy);

    double remaining = 0.0;
    for (Eigen::Index x = last; x >= 0; --x) {
        remaining += person_years(x);
        table.e(x) = table.l(x) > 0.0 ? remaining / table.l(x) : 0.0;
    }
    return table;
}

double life_expectancy_at_birth(const Eigen::VectorXd &rates) {
    const Eigen::Index n = rates.size();
    if (n == 0) {
        throw std::invalid_argument("life_table: empty rate vector");
    }
    double l = 1.0;
    double total = 0.0;
    for (Eigen::Index x = 0; x + 1 < n; ++x) {
        const double m = rates(x);
        if (!(m > 0.0)) {
            throw std::invalid_argument("life_table: rate at age " + std::to_string(x) +
                                        " is not positive");
        }
        const double a = separation(x);
        const double dx = l * std::min(1.0, m / (1.0 + (1.0 - a) * m));
        total += (l - dx) + a * dx;
        l -= dx;
    }
    if (!(rates(n - 1) > 0.0)) {
        throw std::invalid_argument("life_table: closing rate is not positive");
    }
    total += l * std::min(1.0 / rates(n - 1), kMaxClosingExpectancy);
    return total;
}

} // namespace mortens
