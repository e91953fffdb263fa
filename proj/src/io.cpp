#include "mortens/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace mortens {

using nlohmann::json;

namespace {

json vec(const Eigen::VectorXd &v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat(const Eigen::MatrixXd &m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        rows.push_back(vec(m.row(r).transpose()));
    }
    return rows;
}

Eigen::VectorXd to_vec(const json &j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Eigen::MatrixXd to_mat(const json &j) {
    if (j.empty()) {
        return {};
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != static_cast<std::size_t>(m.cols())) {
            throw std::invalid_argument("ragged matrix in fit file");
        }
        m.row(static_cast<Eigen::Index>(r)) = to_vec(j[r]).transpose();
    }
    return m;
}

json fpca_json(const Fpca &f) {
    return {{"mean", vec(f.mean)},
            {"basis", mat(f.basis)},
            {"scores", mat(f.scores)},
            {"excluded_years", f.excluded_years},
            {"smoothing", f.smoothing}};
}

Fpca fpca_from(const json &j) {
    Fpca f;
    f.mean = to_vec(j.at("mean"));
    f.basis = to_mat(j.at("basis"));
    f.scores = to_mat(j.at("scores"));
    f.excluded_years = j.at("excluded_years").get<std::vector<int>>();
    f.smoothing = j.at("smoothing").get<double>();
    return f;
}

std::string process_name(FactorProcess p) {
    return p == FactorProcess::random_walk_drift ? "random_walk_drift" : "ar1_mean";
}

FactorProcess parse_process(const std::string &s) {
    if (s == "random_walk_drift") {
        return FactorProcess::random_walk_drift;
    }
    if (s == "ar1_mean") {
        return FactorProcess::ar1_mean;
    }
    throw std::invalid_argument("unknown factor process '" + s + "'");
}

std::string format_double(double v) {
    if (std::isnan(v)) {
        return "NA";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string &s, const std::filesystem::path &path, int row) {
    if (s == "NA" || s.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ParseError(path.string(), row, 0, "not a number: '" + s + "'");
    }
    return v;
}

int parse_int(const std::string &s, const std::filesystem::path &path, int row) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ParseError(path.string(), row, 0, "not an integer: '" + s + "'");
    }
    return v;
}

std::vector<std::string> split_csv_line(const std::string &line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(std::move(field));
    return out;
}

} // namespace

json fit_to_json(const ModelFit &fit) {
    json j;
    j["model"] = std::string(label(fit.model));
    j["gender"] = to_string(fit.gender);
    j["ages"] = fit.ages;
    j["years"] = fit.years;
    j["alpha"] = vec(fit.alpha);
    j["beta"] = json::array();
    for (const auto &b : fit.beta) {
        j["beta"].push_back(vec(b));
    }
    j["kappa"] = json::array();
    for (const auto &k : fit.kappa) {
        j["kappa"].push_back(vec(k));
    }
    j["cohort_loading"] = vec(fit.cohort_loading);
    j["gamma"] = vec(fit.gamma);
    j["first_cohort"] = fit.first_cohort;
    j["centering"] = {{"mean_age", fit.centering.mean_age},
                      {"age_variance", fit.centering.age_variance},
                      {"cohort_pivot", fit.centering.cohort_pivot}};
    if (fit.fpca) {
        j["fpca"] = fpca_json(*fit.fpca);
    }
    if (fit.ratio_fpca) {
        j["ratio_fpca"] = fpca_json(*fit.ratio_fpca);
    }
    const PeriodDynamics &pd = fit.period_dynamics;
    json processes = json::array();
    for (FactorProcess p : pd.process) {
        processes.push_back(process_name(p));
    }
    j["period_dynamics"] = {{"process", processes},
                            {"drift", vec(pd.drift)},
                            {"ar", vec(pd.ar)},
                            {"innovation_cov", mat(pd.innovation_cov)}};
    const CohortDynamics &cd = fit.cohort_dynamics;
    j["cohort_dynamics"] = {{"intercept", cd.intercept},     {"slope", cd.slope},
                            {"phi", cd.phi},                 {"sigma2", cd.sigma2},
                            {"anchor_cohort", cd.anchor_cohort},
                            {"anchor_residual", cd.anchor_residual}};
    j["meta"] = {{"deviance", fit.meta.deviance},
                 {"n_params", fit.meta.n_params},
                 {"converged", fit.meta.converged},
                 {"iterations", fit.meta.iterations},
                 {"diagnostic", fit.meta.diagnostic}};
    json constraints = json::object();
    for (const auto &[name, value] : constraint_residuals(fit)) {
        constraints[name] = value;
    }
    j["constraints"] = constraints;
    return j;
}

ModelFit fit_from_json(const json &j) {
    ModelFit fit;
    fit.model = parse_model_id(j.at("model").get<std::string>());
    fit.gender = parse_gender(j.at("gender").get<std::string>());
    fit.ages = j.at("ages").get<std::vector<int>>();
    fit.years = j.at("years").get<std::vector<int>>();
    fit.alpha = to_vec(j.at("alpha"));
    for (const auto &b : j.at("beta")) {
        fit.beta.push_back(to_vec(b));
    }
    for (const auto &k : j.at("kappa")) {
        fit.kappa.push_back(to_vec(k));
    }
    fit.cohort_loading = to_vec(j.at("cohort_loading"));
    fit.gamma = to_vec(j.at("gamma"));
    fit.first_cohort = j.at("first_cohort").get<int>();
    const json &c = j.at("centering");
    fit.centering = {c.at("mean_age").get<double>(), c.at("age_variance").get<double>(),
                     c.at("cohort_pivot").get<double>()};
    if (j.contains("fpca")) {
        fit.fpca = fpca_from(j.at("fpca"));
    }
    if (j.contains("ratio_fpca")) {
        fit.ratio_fpca = fpca_from(j.at("ratio_fpca"));
    }
    const json &pd = j.at("period_dynamics");
    for (const auto &p : pd.at("process")) {
        fit.period_dynamics.process.push_back(parse_process(p.get<std::string>()));
    }
    fit.period_dynamics.drift = to_vec(pd.at("drift"));
    fit.period_dynamics.ar = to_vec(pd.at("ar"));
    fit.period_dynamics.innovation_cov = to_mat(pd.at("innovation_cov"));
    if (fit.period_dynamics.innovation_cov.size() == 0) {
        const auto k = static_cast<Eigen::Index>(fit.kappa.size());
        fit.period_dynamics.innovation_cov = Eigen::MatrixXd::Zero(k, k);
    }
    const json &cd = j.at("cohort_dynamics");
    fit.cohort_dynamics.intercept = cd.at("intercept").get<double>();
    fit.cohort_dynamics.slope = cd.at("slope").get<double>();
    fit.cohort_dynamics.phi = cd.at("phi").get<double>();
    fit.cohort_dynamics.sigma2 = cd.at("sigma2").get<double>();
    fit.cohort_dynamics.anchor_cohort = cd.at("anchor_cohort").get<int>();
    fit.cohort_dynamics.anchor_residual = cd.at("anchor_residual").get<double>();
    const json &meta = j.at("meta");
    fit.meta.deviance = meta.at("deviance").get<double>();
    fit.meta.n_params = meta.at("n_params").get<int>();
    fit.meta.converged = meta.at("converged").get<bool>();
    fit.meta.iterations = meta.at("iterations").get<int>();
    fit.meta.diagnostic = meta.at("diagnostic").get<std::string>();
    return fit;
}

void write_fit(const ModelFit &fit, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << fit_to_json(fit).dump(2) << '\n';
}

ModelFit read_fit(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    return fit_from_json(json::parse(in));
}

struct CsvWriter::Impl {
    std::ofstream out;
    bool row_start = true;
};

CsvWriter::CsvWriter(const std::filesystem::path &path, const std::vector<std::string> &header,
                     bool append)
    : impl_(new Impl) {
    const bool fresh = !append || !std::filesystem::exists(path);
    impl_->out.open(path, append ? std::ios::app : std::ios::trunc);
    if (!impl_->out) {
        delete impl_;
        throw std::runtime_error("cannot write " + path.string());
    }
    if (fresh) {
        for (const std::string &h : header) {
            *this << h;
        }
        end_row();
    }
}

CsvWriter::~CsvWriter() { delete impl_; }

CsvWriter &CsvWriter::operator<<(const std::string &field) {
    if (!impl_->row_start) {
        impl_->out << ',';
    }
    impl_->row_start = false;
    if (field.find_first_of(",\"\n") != std::string::npos) {
        std::string quoted = "\"";
        for (char c : field) {
            quoted += c;
            if (c == '"') {
                quoted += '"';
            }
        }
        impl_->out << quoted << '"';
    } else {
        impl_->out << field;
    }
    return *this;
}

CsvWriter &CsvWriter::operator<<(double value) { return *this << format_double(value); }

CsvWriter &CsvWriter::operator<<(int value) { return *this << std::to_string(value); }

void CsvWriter::end_row() {
    impl_->out << '\n';
    impl_->row_start = true;
}

int CsvTable::column(const std::string &name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        throw std::invalid_argument("CSV has no column '" + name + "'");
    }
    return static_cast<int>(it - header.begin());
}

CsvTable read_csv(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(path.string(), 1, 0, "empty file");
    }
    table.header = split_csv_line(line);
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") {
            continue;
        }
        auto fields = split_csv_line(line);
        if (fields.size() != table.header.size()) {
            throw ParseError(path.string(), row, 0,
                             "expected " + std::to_string(table.header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
        }
        table.rows.push_back(std::move(fields));
    }
    return table;
}

void write_forecasts(const WindowRuns &runs, const std::filesystem::path &path) {
    CsvWriter csv(path, {"model", "origin", "age", "horizon", "point", "lower", "upper", "n_params"});
    for (const auto &[model, grids] : runs) {
        for (const ForecastGrid &g : grids) {
            for (int h = 1; h <= g.horizons(); ++h) {
                for (int i = 0; i < static_cast<int>(g.ages.size()); ++i) {
                    csv << label(model) << g.origin_year << g.ages[static_cast<std::size_t>(i)] << h
                        << std::exp(g.log_point(i, h - 1));
                    if (g.has_intervals()) {
                        csv << std::exp(g.log_lower(i, h - 1)) << std::exp(g.log_upper(i, h - 1));
                    } else {
                        csv << "" << "";
                    }
                    csv << g.n_params;
                    csv.end_row();
                }
            }
        }
    }
}

WindowRuns read_forecasts(const std::filesystem::path &path) {
    const CsvTable t = read_csv(path);
    const int c_model = t.column("model");
    const int c_origin = t.column("origin");
    const int c_age = t.column("age");
    const int c_h = t.column("horizon");
    const int c_point = t.column("point");
    const int c_lower = t.column("lower");
    const int c_upper = t.column("upper");
    const int c_params = t.column("n_params");

    // (model, origin) -> age -> horizon -> (point, lower, upper)
    struct Cell {
        double point, lower, upper;
    };
    std::map<std::pair<ModelId, int>, std::map<int, std::map<int, Cell>>> cells;
    std::map<std::pair<ModelId, int>, int> params;
    int row = 1;
    for (const auto &r : t.rows) {
        ++row;
        const ModelId m = parse_model_id(r[static_cast<std::size_t>(c_model)]);
        const int origin = parse_int(r[static_cast<std::size_t>(c_origin)], path, row);
        const int age = parse_int(r[static_cast<std::size_t>(c_age)], path, row);
        const int h = parse_int(r[static_cast<std::size_t>(c_h)], path, row);
        params[{m, origin}] = parse_int(r[static_cast<std::size_t>(c_params)], path, row);
        cells[{m, origin}][age][h] = {parse_double(r[static_cast<std::size_t>(c_point)], path, row),
                                      parse_double(r[static_cast<std::size_t>(c_lower)], path, row),
                                      parse_double(r[static_cast<std::size_t>(c_upper)], path, row)};
    }
    WindowRuns runs;
    for (const auto &[key, by_age] : cells) {
        ForecastGrid g;
        g.model = key.first;
        g.origin_year = key.second;
        g.n_params = params.at(key);
        for (const auto &kv : by_age) {
            g.ages.push_back(kv.first);
        }
        const int horizons = static_cast<int>(by_age.begin()->second.size());
        const bool intervals = !std::isnan(by_age.begin()->second.begin()->second.lower);
        g.log_point.resize(static_cast<Eigen::Index>(g.ages.size()), horizons);
        if (intervals) {
            g.log_lower.resize(g.log_point.rows(), horizons);
            g.log_upper.resize(g.log_point.rows(), horizons);
        }
        Eigen::Index i = 0;
        for (const auto &[age, by_h] : by_age) {
            if (static_cast<int>(by_h.size()) != horizons || by_h.begin()->first != 1 ||
                by_h.rbegin()->first != horizons) {
                throw DataError(path.string() + ": " + std::string(label(key.first)) +
                                " origin " + std::to_string(key.second) + " age " +
                                std::to_string(age) + " lacks horizons 1.." +
                                std::to_string(horizons));
            }
            for (const auto &[h, cell] : by_h) {
                g.log_point(i, h - 1) = std::log(cell.point);
                if (intervals) {
                    g.log_lower(i, h - 1) = std::log(cell.lower);
                    g.log_upper(i, h - 1) = std::log(cell.upper);
                }
            }
            ++i;
        }
        runs[key.first].push_back(std::move(g));
    }
    return runs;
}

void write_shap_phi(const ShapReport &report, const std::filesystem::path &path) {
    CsvWriter csv(path, {"model", "age", "horizon", "phi"});
    for (std::size_t k = 0; k < report.horizons.size(); ++k) {
        for (int i = 0; i < report.n_models(); ++i) {
            for (int a = 0; a < report.n_ages(); ++a) {
                csv << label(report.models[static_cast<std::size_t>(i)])
                    << report.ages[static_cast<std::size_t>(a)] << report.horizons[k]
                    << report.phi[k](i, a);
                csv.end_row();
            }
        }
    }
}

void write_shap_mean(const ShapReport &report, const std::filesystem::path &path) {
    CsvWriter csv(path, {"model", "age", "phi_mean"});
    for (int i = 0; i < report.n_models(); ++i) {
        for (int a = 0; a < report.n_ages(); ++a) {
            csv << label(report.models[static_cast<std::size_t>(i)])
                << report.ages[static_cast<std::size_t>(a)] << report.phi_mean(i, a);
            csv.end_row();
        }
    }
}

ShapReport read_shap_report(const std::filesystem::path &phi_path,
                            const std::filesystem::path &mean_path, Gender gender) {
    ShapReport report;
    report.gender = gender;
    const CsvTable phi = read_csv(phi_path);
    const int c_model = phi.column("model");
    const int c_age = phi.column("age");
    const int c_h = phi.column("horizon");
    const int c_phi = phi.column("phi");
    std::set<int> ages;
    std::set<int> horizons;
    for (const auto &r : phi.rows) {
        const ModelId m = parse_model_id(r[static_cast<std::size_t>(c_model)]);
        if (std::find(report.models.begin(), report.models.end(), m) == report.models.end()) {
            report.models.push_back(m);
        }
        ages.insert(parse_int(r[static_cast<std::size_t>(c_age)], phi_path, 0));
        horizons.insert(parse_int(r[static_cast<std::size_t>(c_h)], phi_path, 0));
    }
    report.ages.assign(ages.begin(), ages.end());
    report.horizons.assign(horizons.begin(), horizons.end());
    auto model_pos = [&](const std::string &s) {
        const ModelId m = parse_model_id(s);
        return static_cast<Eigen::Index>(
            std::find(report.models.begin(), report.models.end(), m) - report.models.begin());
    };
    auto age_pos = [&](int age) {
        return static_cast<Eigen::Index>(
            std::lower_bound(report.ages.begin(), report.ages.end(), age) - report.ages.begin());
    };
    report.phi.assign(report.horizons.size(),
                      Eigen::MatrixXd::Constant(report.n_models(), report.n_ages(),
                                                std::numeric_limits<double>::quiet_NaN()));
    int row = 1;
    for (const auto &r : phi.rows) {
        ++row;
        const int h = parse_int(r[static_cast<std::size_t>(c_h)], phi_path, row);
        const auto k = static_cast<std::size_t>(
            std::lower_bound(report.horizons.begin(), report.horizons.end(), h) -
            report.horizons.begin());
        report.phi[k](model_pos(r[static_cast<std::size_t>(c_model)]),
                      age_pos(parse_int(r[static_cast<std::size_t>(c_age)], phi_path, row))) =
            parse_double(r[static_cast<std::size_t>(c_phi)], phi_path, row);
    }
    for (const Eigen::MatrixXd &p : report.phi) {
        if (p.hasNaN()) {
            throw DataError(phi_path.string() + ": Shapley table is incomplete");
        }
    }
    const CsvTable mean = read_csv(mean_path);
    const int m_model = mean.column("model");
    const int m_age = mean.column("age");
    const int m_value = mean.column("phi_mean");
    report.phi_mean = Eigen::MatrixXd::Constant(report.n_models(), report.n_ages(),
                                                std::numeric_limits<double>::quiet_NaN());
    row = 1;
    for (const auto &r : mean.rows) {
        ++row;
        report.phi_mean(model_pos(r[static_cast<std::size_t>(m_model)]),
                        age_pos(parse_int(r[static_cast<std::size_t>(m_age)], mean_path, row))) =
            parse_double(r[static_cast<std::size_t>(m_value)], mean_path, row);
    }
    if (report.phi_mean.hasNaN()) {
        throw DataError(mean_path.string() + ": normalised Shapley table is incomplete");
    }
    return report;
}

void write_weights(const std::vector<int> &ages, const std::vector<WeightVector> &by_age,
                   const std::filesystem::path &path, bool append) {
    CsvWriter csv(path, {"model", "age", "alpha", "weight"}, append);
    for (std::size_t a = 0; a < by_age.size(); ++a) {
        const WeightVector &w = by_age[a];
        for (std::size_t i = 0; i < w.models.size(); ++i) {
            csv << label(w.models[i]) << ages[a] << w.threshold
                << w.weights(static_cast<Eigen::Index>(i));
            csv.end_row();
        }
    }
}

} // namespace mortens
