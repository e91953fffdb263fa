#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace mortens {

enum class Gender { female, male };

std::string to_string(Gender gender);
Gender parse_gender(std::string_view text);
Gender other(Gender gender);

/// Inclusive range of calendar years.
struct YearRange {
    int first = 0;
    int last = -1;

    int size() const { return last >= first ? last - first + 1 : 0; }
    bool empty() const { return last < first; }
    bool contains(int year) const { return year >= first && year <= last; }
    bool operator==(const YearRange &) const = default;
};

struct SplitConfig {
    YearRange train{1960, 1999};
    YearRange validation{2000, 2009};
    YearRange test{2010, 2019};

    /// Throws when ranges are empty, overlap, or are not contiguous and ordered.
    void validate() const;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
public:
    ParseError(const std::string &file, int row, int column, const std::string &what);

    int row() const noexcept { return row_; }
    int column() const noexcept { return column_; }

private:
    int row_;
    int column_;
};

/// Exposure used to derive Poisson counts when only rates are available.
inline constexpr double kPseudoExposure = 1.0e5;

/// Deaths, exposures and central death rates on a contiguous age x year grid.
///
/// Rows are ages, columns are years. Zero or missing rates are repaired on
/// construction by substituting the smallest positive rate of the same age row;
/// implied deaths are recomputed from the repaired rate.
class MortalitySurface {
public:
    MortalitySurface() = default;

    /// Builds from counts; rates are D / E.
    MortalitySurface(std::vector<int> ages, std::vector<int> years, Eigen::MatrixXd deaths,
                     Eigen::MatrixXd exposures, Gender gender, std::string population_id);

    /// Builds from rates only; deaths and exposures are derived from kPseudoExposure.
    static MortalitySurface from_rates(std::vector<int> ages, std::vector<int> years,
                                       Eigen::MatrixXd rates, Gender gender,
                                       std::string population_id);

    const std::vector<int> &ages() const noexcept { return ages_; }
    const std::vector<int> &years() const noexcept { return years_; }
    const Eigen::MatrixXd &deaths() const noexcept { return deaths_; }
    const Eigen::MatrixXd &exposures() const noexcept { return exposures_; }
    const Eigen::MatrixXd &rates() const noexcept { return rates_; }
    Eigen::MatrixXd log_rates() const { return rates_.array().log().matrix(); }
    Gender gender() const noexcept { return gender_; }
    const std::string &population_id() const noexcept { return population_id_; }
    bool has_counts() const noexcept { return has_counts_; }

    int n_ages() const noexcept { return static_cast<int>(ages_.size()); }
    int n_years() const noexcept { return static_cast<int>(years_.size()); }
    int first_year() const { return years_.front(); }
    int last_year() const { return years_.back(); }
    YearRange year_range() const { return {years_.front(), years_.back()}; }

    /// Column index for a calendar year; throws if absent.
    int year_index(int year) const;

    MortalitySurface slice_years(YearRange range) const;
    MortalitySurface slice_ages(int first_age, int last_age) const;

private:
    void check_axes() const;
    void repair();

    std::vector<int> ages_;
    std::vector<int> years_;
    Eigen::MatrixXd deaths_;
    Eigen::MatrixXd exposures_;
    Eigen::MatrixXd rates_;
    Gender gender_ = Gender::female;
    std::string population_id_;
    bool has_counts_ = false;
};

/// One value column of an HMD 1x1 file, ages x years.
struct HmdTable {
    std::vector<int> ages;
    std::vector<int> years;
    Eigen::MatrixXd values;
};

/// Reads the Female or Male column of an HMD 1x1 text file. Open age tokens such
/// as "110+" are read as their lower bound, "." becomes NaN. Ages are cut to
/// 0..100 and years to `window` when it is non-empty.
HmdTable read_hmd_table(const std::filesystem::path &path, Gender gender,
                        YearRange window = {});

/// Loads a rate surface from an HMD Mx file or a fixture CSV
/// (`age,year,deaths,exposure`). The format is detected from the header.
MortalitySurface load_surface(const std::filesystem::path &path, Gender gender,
                              YearRange window = {}, const std::string &population_id = "");

/// Loads deaths and exposures from a pair of HMD 1x1 files.
MortalitySurface load_hmd_counts(const std::filesystem::path &deaths_path,
                                 const std::filesystem::path &exposures_path, Gender gender,
                                 YearRange window = {}, const std::string &population_id = "");

/// Writes the fixture CSV layout, full precision.
void write_surface(const MortalitySurface &surface, const std::filesystem::path &path);

std::tuple<MortalitySurface, MortalitySurface, MortalitySurface>
split(const MortalitySurface &surface, const SplitConfig &cfg);

} // namespace mortens
