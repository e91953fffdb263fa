#pragma once

#include "mortens/io.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>

namespace mortens {

enum class AlphaMode { fixed, small_grid, fine_grid };

AlphaMode parse_alpha_mode(std::string_view text);
std::string_view to_string(AlphaMode mode);

/// One population's input: a rate file (HMD Mx or fixture CSV), or a pair of
/// HMD deaths and exposures files.
struct PopulationSource {
    std::string country;
    Gender gender = Gender::female;
    std::filesystem::path rates;
    std::filesystem::path deaths;
    std::filesystem::path exposures;

    /// Output subdirectory name, `country_gender`.
    std::string key() const;
};

/// Batch configuration, read from `key = value` lines. `#` starts a comment.
///
///   population.<country>.<F|M>            rate file
///   counts.<country>.<F|M>                deaths file, exposures file
///   split.train / split.validation / split.test   first-last years
///   models, alpha_mode, alpha_value, selection_alpha, theta, trim_d,
///   n_paths, seed, game_mode, aggregate_ages, max_iterations, tolerance,
///   fpca_components, output_dir
///
/// Relative paths resolve against the config file's directory.
struct RunConfig {
    std::vector<PopulationSource> populations;
    SplitConfig split;
    std::vector<ModelId> models{kAllModels.begin(), kAllModels.end()};
    AlphaMode alpha_mode = AlphaMode::small_grid;
    std::optional<double> alpha_value;
    double selection_alpha = 0.5;
    double theta = 0.2;
    /// Interval trimming depth; unset means floor(N * theta) for N models.
    std::optional<int> trim_d;
    int n_paths = 1000;
    std::uint64_t seed = 1;
    GameMode game_mode = GameMode::pooled;
    bool aggregate_ages = false;
    int max_iterations = 500;
    double tolerance = 1e-8;
    int fpca_components = 6;
    std::filesystem::path output_dir = "mortens_out";

    /// Applies one `key = value` setting; throws on unknown keys or bad values.
    void set(const std::string &key, const std::string &value,
             const std::filesystem::path &base = {});

    /// Throws unless paths exist and the settings are consistent.
    void validate() const;

    /// Resolved settings, one `key = value` line each, in a fixed order.
    std::string dump() const;

    FitOptions fit_options() const;

    /// Trimming depth used with `n_models` models.
    int trim_for(int n_models) const;
};

RunConfig load_config(const std::filesystem::path &path);

struct RunOptions {
    bool force = false;
    bool allow_partial = false;
    int jobs = 1;
    std::ostream *log = nullptr;
};

enum class Stage { fit, forecast, shap, combine, evaluate };

std::string_view to_string(Stage stage);

/// Exit status of a batch run: 0 success, 1 hard error, 2 partial.
enum class RunStatus { ok = 0, failed = 1, partial = 2 };

/// Runs `stages` in order for every configured population, writing under
/// output_dir/<country_gender>/. Stages whose outputs already exist are
/// skipped unless `force` is set.
RunStatus run_stages(const RunConfig &cfg, const std::vector<Stage> &stages,
                     const RunOptions &options);

/// The four stages after fitting: forecast, shap, combine, evaluate.
std::vector<Stage> pipeline_stages();

/// Point-ensemble label, for example "SHAP α=50%".
std::string shap_label(double alpha);

} // namespace mortens
