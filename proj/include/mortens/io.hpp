#pragma once

#include "mortens/eval.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>

namespace mortens {

/// Fitted parameters, dynamics, constraint residuals and convergence state.
nlohmann::json fit_to_json(const ModelFit &fit);
ModelFit fit_from_json(const nlohmann::json &j);

void write_fit(const ModelFit &fit, const std::filesystem::path &path);
ModelFit read_fit(const std::filesystem::path &path);

using WindowRuns = std::map<ModelId, std::vector<ForecastGrid>>;

/// CSV `model,origin,age,horizon,point,lower,upper,n_params` with rates (not
/// logs); lower and upper are empty for point-only grids.
void write_forecasts(const WindowRuns &runs, const std::filesystem::path &path);
WindowRuns read_forecasts(const std::filesystem::path &path);

/// CSV `model,age,horizon,phi` (horizon 0 marks a pooled game).
void write_shap_phi(const ShapReport &report, const std::filesystem::path &path);
/// CSV `model,age,phi_mean`.
void write_shap_mean(const ShapReport &report, const std::filesystem::path &path);
/// Rebuilds a report from the two files above.
ShapReport read_shap_report(const std::filesystem::path &phi_path,
                            const std::filesystem::path &mean_path, Gender gender);

/// Rows of `model,age,alpha,weight`, one block per weight vector.
void write_weights(const std::vector<int> &ages, const std::vector<WeightVector> &by_age,
                   const std::filesystem::path &path, bool append = false);

/// Small CSV writer that quotes only when needed and prints doubles with
/// 17 significant digits.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path &path, const std::vector<std::string> &header,
              bool append = false);
    ~CsvWriter();
    CsvWriter(const CsvWriter &) = delete;
    CsvWriter &operator=(const CsvWriter &) = delete;

    CsvWriter &operator<<(const std::string &field);
    CsvWriter &operator<<(std::string_view field) { return *this << std::string(field); }
    CsvWriter &operator<<(const char *field) { return *this << std::string(field); }
    CsvWriter &operator<<(double value);
    CsvWriter &operator<<(int value);
    void end_row();

private:
    struct Impl;
    Impl *impl_;
};

/// Header-keyed CSV rows.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string &name) const;
};

CsvTable read_csv(const std::filesystem::path &path);

} // namespace mortens
