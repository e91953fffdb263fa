#include "mortens/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace mortens {

std::string to_string(Gender gender) { return gender == Gender::female ? "F" : "M"; }

Gender parse_gender(std::string_view text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "f" || lower == "female") {
        return Gender::female;
    }
    if (lower == "m" || lower == "male") {
        return Gender::male;
    }
    throw std::invalid_argument("unknown gender '" + std::string(text) + "'");
}

Gender other(Gender gender) { return gender == Gender::female ? Gender::male : Gender::female; }

void SplitConfig::validate() const {
    if (train.empty() || validation.empty() || test.empty()) {
        throw std::invalid_argument("split: train, validation and test ranges must be non-empty");
    }
    if (validation.first != train.last + 1 || test.first != validation.last + 1) {
        throw std::invalid_argument(
            "split: ranges must be contiguous and ordered train < validation < test");
    }
}

ParseError::ParseError(const std::string &file, int row, int column, const std::string &what)
    : DataError(file + ":" + std::to_string(row) + ":" + std::to_string(column) + ": " + what),
      row_(row), column_(column) {}

namespace {

void check_contiguous(const std::vector<int> &axis, const char *name) {
    if (axis.empty()) {
        throw DataError(std::string("surface has no ") + name);
    }
    for (std::size_t i = 1; i < axis.size(); ++i) {
        if (axis[i] != axis[i - 1] + 1) {
            throw DataError(std::string(name) + " must increase by 1, gap at " +
                            std::to_string(axis[i - 1] + 1));
        }
    }
}

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
        ++b;
    }
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_ws(const std::string &line) {
    std::istringstream in(line);
    std::vector<std::string> tokens;
    std::string token;
    while (in >> token) {
        tokens.push_back(token);
    }
    return tokens;
}

std::vector<std::string> split_csv(const std::string &line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        fields.push_back(trim(field));
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

bool parse_double(const std::string &token, double &out) {
    if (token == "." || token == "NA" || token == "NaN" || token == "nan") {
        out = std::numeric_limits<double>::quiet_NaN();
        return true;
    }
    try {
        std::size_t used = 0;
        out = std::stod(token, &used);
        return used == token.size();
    } catch (const std::exception &) {
        return false;
    }
}

bool parse_int(std::string token, int &out) {
    while (!token.empty() && (token.back() == '+' || token.back() == '-')) {
        token.pop_back();
    }
    const auto *first = token.data();
    const auto *last = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last && !token.empty();
}

/// Restricts to ages 0..100 and the requested window, and checks the grid is complete.
HmdTable assemble(const std::map<std::pair<int, int>, double> &cells, YearRange window,
                  const std::string &file) {
    if (cells.empty()) {
        throw DataError(file + ": no data rows");
    }
    int min_year = std::numeric_limits<int>::max();
    int max_year = std::numeric_limits<int>::min();
    int min_age = std::numeric_limits<int>::max();
    int max_age = std::numeric_limits<int>::min();
    for (const auto &[key, value] : cells) {
        min_year = std::min(min_year, key.first);
        max_year = std::max(max_year, key.first);
        min_age = std::min(min_age, key.second);
        max_age = std::max(max_age, key.second);
    }
    max_age = std::min(max_age, 100);
    min_age = std::max(min_age, 0);
    if (min_age > max_age) {
        throw DataError(file + ": no ages in 0..100");
    }
    YearRange years = window.empty() ? YearRange{min_year, max_year} : window;

    HmdTable table;
    for (int a = min_age; a <= max_age; ++a) {
        table.ages.push_back(a);
    }
    for (int y = years.first; y <= years.last; ++y) {
        table.years.push_back(y);
    }
    table.values.resize(static_cast<Eigen::Index>(table.ages.size()),
                        static_cast<Eigen::Index>(table.years.size()));
    for (std::size_t j = 0; j < table.years.size(); ++j) {
        const int year = table.years[j];
        bool any = false;
        for (std::size_t i = 0; i < table.ages.size(); ++i) {
            auto it = cells.find({year, table.ages[i]});
            if (it == cells.end()) {
                table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    std::numeric_limits<double>::quiet_NaN();
            } else {
                any = true;
                table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    it->second;
            }
        }
        if (!any) {
            throw DataError(file + ": gap at " + std::to_string(year));
        }
    }
    return table;
}

} // namespace

MortalitySurface::MortalitySurface(std::vector<int> ages, std::vector<int> years,
                                   Eigen::MatrixXd deaths, Eigen::MatrixXd exposures,
                                   Gender gender, std::string population_id)
    : ages_(std::move(ages)), years_(std::move(years)), deaths_(std::move(deaths)),
      exposures_(std::move(exposures)), gender_(gender),
      population_id_(std::move(population_id)), has_counts_(true) {
    check_axes();
    if (exposures_.rows() != n_ages() || exposures_.cols() != n_years()) {
        throw DataError("exposure matrix does not match the age x year grid");
    }
    for (Eigen::Index i = 0; i < exposures_.size(); ++i) {
        if (!(exposures_.data()[i] > 0.0)) {
            throw DataError("exposures must be positive");
        }
        if (deaths_.data()[i] < 0.0) {
            throw DataError("deaths must be nonnegative");
        }
    }
    rates_ = deaths_.cwiseQuotient(exposures_);
    repair();
}

MortalitySurface MortalitySurface::from_rates(std::vector<int> ages, std::vector<int> years,
                                              Eigen::MatrixXd rates, Gender gender,
                                              std::string population_id) {
    MortalitySurface s;
    s.ages_ = std::move(ages);
    s.years_ = std::move(years);
    s.rates_ = std::move(rates);
    s.gender_ = gender;
    s.population_id_ = std::move(population_id);
    s.has_counts_ = false;
    s.check_axes();
    for (Eigen::Index i = 0; i < s.rates_.size(); ++i) {
        if (s.rates_.data()[i] < 0.0) {
            throw DataError("rates must be nonnegative");
        }
    }
    s.exposures_ = Eigen::MatrixXd::Constant(s.n_ages(), s.n_years(), kPseudoExposure);
    s.deaths_ = s.rates_ * kPseudoExposure;
    s.repair();
    return s;
}

void MortalitySurface::check_axes() const {
    check_contiguous(ages_, "ages");
    check_contiguous(years_, "years");
    const auto &grid = deaths_.size() ? deaths_ : rates_;
    if (grid.rows() != n_ages() || grid.cols() != n_years()) {
        throw DataError("matrix dimensions do not match the age x year grid");
    }
}

void MortalitySurface::repair() {
    for (Eigen::Index x = 0; x < rates_.rows(); ++x) {
        double floor = std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < rates_.cols(); ++t) {
            const double m = rates_(x, t);
            if (std::isfinite(m) && m > 0.0) {
                floor = std::min(floor, m);
            }
        }
        if (!std::isfinite(floor)) {
            throw DataError("age " + std::to_string(ages_[static_cast<std::size_t>(x)]) +
                            " has no positive rate to repair from");
        }
        for (Eigen::Index t = 0; t < rates_.cols(); ++t) {
            const double m = rates_(x, t);
            if (!(std::isfinite(m) && m > 0.0)) {
                rates_(x, t) = floor;
                deaths_(x, t) = floor * exposures_(x, t);
            }
        }
    }
}

int MortalitySurface::year_index(int year) const {
    if (years_.empty() || year < years_.front() || year > years_.back()) {
        throw std::out_of_range("year " + std::to_string(year) + " not in surface");
    }
    return year - years_.front();
}

MortalitySurface MortalitySurface::slice_years(YearRange range) const {
    if (range.empty() || range.first < first_year() || range.last > last_year()) {
        throw std::out_of_range("year range " + std::to_string(range.first) + "-" +
                                std::to_string(range.last) + " outside surface " +
                                std::to_string(first_year()) + "-" +
                                std::to_string(last_year()));
    }
    const int j0 = range.first - first_year();
    const int n = range.size();
    MortalitySurface s = *this;
    s.years_.assign(years_.begin() + j0, years_.begin() + j0 + n);
    s.deaths_ = deaths_.middleCols(j0, n);
    s.exposures_ = exposures_.middleCols(j0, n);
    s.rates_ = rates_.middleCols(j0, n);
    return s;
}

MortalitySurface MortalitySurface::slice_ages(int first_age, int last_age) const {
    if (last_age < first_age || first_age < ages_.front() || last_age > ages_.back()) {
        throw std::out_of_range("age range outside surface");
    }
    const int i0 = first_age - ages_.front();
    const int n = last_age - first_age + 1;
    MortalitySurface s = *this;
    s.ages_.assign(ages_.begin() + i0, ages_.begin() + i0 + n);
    s.deaths_ = deaths_.middleRows(i0, n);
    s.exposures_ = exposures_.middleRows(i0, n);
    s.rates_ = rates_.middleRows(i0, n);
    return s;
}

HmdTable read_hmd_table(const std::filesystem::path &path, Gender gender, YearRange window) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    const std::string file = path.string();
    std::string line;
    int row = 0;
    int value_column = -1;
    std::map<std::pair<int, int>, double> cells;
    while (std::getline(in, line)) {
        ++row;
        auto tokens = split_ws(line);
        if (tokens.empty()) {
            continue;
        }
        if (value_column < 0) {
            if (tokens.size() >= 4 && tokens[0] == "Year" && tokens[1] == "Age") {
                const std::string wanted = gender == Gender::female ? "Female" : "Male";
                for (std::size_t c = 2; c < tokens.size(); ++c) {
                    if (tokens[c] == wanted) {
                        value_column = static_cast<int>(c);
                    }
                }
                if (value_column < 0) {
                    throw ParseError(file, row, 1, "header lacks a " + wanted + " column");
                }
            }
            continue;
        }
        if (static_cast<int>(tokens.size()) <= value_column) {
            throw ParseError(file, row, static_cast<int>(tokens.size()) + 1,
                             "row has too few columns");
        }
        int year = 0;
        int age = 0;
        if (!parse_int(tokens[0], year)) {
            throw ParseError(file, row, 1, "non-numeric year '" + tokens[0] + "'");
        }
        if (!parse_int(tokens[1], age)) {
            throw ParseError(file, row, 2, "non-numeric age '" + tokens[1] + "'");
        }
        double value = 0.0;
        if (!parse_double(tokens[static_cast<std::size_t>(value_column)], value)) {
            throw ParseError(file, row, value_column + 1,
                             "non-numeric cell '" + tokens[static_cast<std::size_t>(value_column)] +
                                 "'");
        }
        if (!window.empty() && !window.contains(year)) {
            continue;
        }
        if (age > 100) {
            continue;
        }
        cells[{year, age}] = value;
    }
    if (value_column < 0) {
        throw ParseError(file, row, 1, "no 'Year Age ...' header found");
    }
    return assemble(cells, window, file);
}

namespace {

MortalitySurface load_fixture_csv(std::istream &in, const std::string &file, Gender gender,
                                  YearRange window, const std::string &population_id) {
    std::string line;
    int row = 0;
    std::map<std::pair<int, int>, double> deaths;
    std::map<std::pair<int, int>, double> exposures;
    bool header = true;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) {
            continue;
        }
        auto fields = split_csv(trim(line));
        if (header) {
            header = false;
            continue;
        }
        if (fields.size() != 4) {
            throw ParseError(file, row, static_cast<int>(fields.size()),
                             "expected 4 fields age,year,deaths,exposure");
        }
        int age = 0;
        int year = 0;
        double d = 0.0;
        double e = 0.0;
        if (!parse_int(fields[0], age)) {
            throw ParseError(file, row, 1, "non-numeric age '" + fields[0] + "'");
        }
        if (!parse_int(fields[1], year)) {
            throw ParseError(file, row, 2, "non-numeric year '" + fields[1] + "'");
        }
        if (!parse_double(fields[2], d)) {
            throw ParseError(file, row, 3, "non-numeric deaths '" + fields[2] + "'");
        }
        if (!parse_double(fields[3], e)) {
            throw ParseError(file, row, 4, "non-numeric exposure '" + fields[3] + "'");
        }
        if ((!window.empty() && !window.contains(year)) || age > 100) {
            continue;
        }
        deaths[{year, age}] = d;
        exposures[{year, age}] = e;
    }
    auto d = assemble(deaths, window, file);
    auto e = assemble(exposures, window, file);
    for (Eigen::Index i = 0; i < e.values.size(); ++i) {
        if (std::isnan(e.values.data()[i])) {
            throw DataError(file + ": missing exposure cell");
        }
    }
    return MortalitySurface(d.ages, d.years, d.values, e.values, gender, population_id);
}

} // namespace

MortalitySurface load_surface(const std::filesystem::path &path, Gender gender,
                              YearRange window, const std::string &population_id) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::string first;
    while (std::getline(in, first) && trim(first).empty()) {
    }
    std::string head = trim(first);
    std::transform(head.begin(), head.end(), head.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (head.rfind("age,year", 0) == 0) {
        in.clear();
        in.seekg(0);
        return load_fixture_csv(in, path.string(), gender, window, population_id);
    }
    in.close();
    auto table = read_hmd_table(path, gender, window);
    return MortalitySurface::from_rates(table.ages, table.years, table.values, gender,
                                        population_id);
}

MortalitySurface load_hmd_counts(const std::filesystem::path &deaths_path,
                                 const std::filesystem::path &exposures_path, Gender gender,
                                 YearRange window, const std::string &population_id) {
    auto d = read_hmd_table(deaths_path, gender, window);
    auto e = read_hmd_table(exposures_path, gender, window);
    if (d.ages != e.ages || d.years != e.years) {
        throw DataError("deaths and exposures files cover different grids");
    }
    for (Eigen::Index i = 0; i < d.values.size(); ++i) {
        double &dv = d.values.data()[i];
        double &ev = e.values.data()[i];
        if (std::isnan(ev) || ev <= 0.0) {
            throw DataError(exposures_path.string() + ": missing or zero exposure");
        }
        if (std::isnan(dv)) {
            dv = 0.0;
        }
    }
    return MortalitySurface(d.ages, d.years, d.values, e.values, gender, population_id);
}

void write_surface(const MortalitySurface &surface, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.precision(17);
    out << "age,year,deaths,exposure\n";
    for (int j = 0; j < surface.n_years(); ++j) {
        for (int i = 0; i < surface.n_ages(); ++i) {
            out << surface.ages()[static_cast<std::size_t>(i)] << ','
                << surface.years()[static_cast<std::size_t>(j)] << ',' << surface.deaths()(i, j)
                << ',' << surface.exposures()(i, j) << '\n';
        }
    }
}

std::tuple<MortalitySurface, MortalitySurface, MortalitySurface>
split(const MortalitySurface &surface, const SplitConfig &cfg) {
    cfg.validate();
    const auto range = surface.year_range();
    for (const auto &r : {cfg.train, cfg.validation, cfg.test}) {
        if (r.first < range.first || r.last > range.last) {
            throw std::out_of_range("split: range " + std::to_string(r.first) + "-" +
                                    std::to_string(r.last) + " outside data " +
                                    std::to_string(range.first) + "-" +
                                    std::to_string(range.last));
        }
    }
    return {surface.slice_years(cfg.train), surface.slice_years(cfg.validation),
            surface.slice_years(cfg.test)};
}

} // namespace mortens
