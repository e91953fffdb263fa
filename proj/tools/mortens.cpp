#include "mortens/pipeline.hpp"
#include "mortens/synth.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace mortens;

struct CommonFlags {
    std::string config;
    std::vector<std::string> sets;
    std::string models;
    std::optional<std::uint64_t> seed;
    std::string alpha_mode;
    std::optional<double> alpha;
    std::string output;
    int jobs = 1;
    bool allow_partial = false;
    bool force = false;
};

void add_common(CLI::App &cmd, CommonFlags &f) {
    cmd.add_option("-c,--config", f.config, "Configuration file (key = value lines)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd.add_option("--set", f.sets, "Override a setting, key=value (repeatable)");
    cmd.add_option("--models", f.models, "Comma-separated model list, e.g. lc,cbd");
    cmd.add_option("--seed", f.seed, "Master seed");
    cmd.add_option("--alpha-mode", f.alpha_mode, "fixed, small_grid or fine_grid");
    cmd.add_option("--alpha", f.alpha, "Threshold for alpha-mode fixed");
    cmd.add_option("-o,--output", f.output, "Output directory");
    cmd.add_option("-j,--jobs", f.jobs, "Populations processed in parallel")
        ->check(CLI::PositiveNumber);
    cmd.add_flag("--allow-partial", f.allow_partial,
                 "Drop models that fail to fit instead of stopping (exit code 2)");
    cmd.add_flag("--force", f.force, "Recompute stages whose outputs already exist");
}

RunConfig resolve(const CommonFlags &f) {
    RunConfig cfg = load_config(f.config);
    for (const std::string &kv : f.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1), std::filesystem::current_path());
    }
    if (!f.models.empty()) {
        cfg.set("models", f.models);
    }
    if (f.seed) {
        cfg.seed = *f.seed;
    }
    if (!f.alpha_mode.empty()) {
        cfg.set("alpha_mode", f.alpha_mode);
    }
    if (f.alpha) {
        cfg.alpha_value = *f.alpha;
        if (f.alpha_mode.empty()) {
            cfg.alpha_mode = AlphaMode::fixed;
        }
    }
    if (!f.output.empty()) {
        cfg.output_dir = std::filesystem::absolute(f.output);
    }
    return cfg;
}

int run(const CommonFlags &f, const std::vector<Stage> &stages) {
    try {
        const RunConfig cfg = resolve(f);
        RunOptions opts;
        opts.force = f.force;
        opts.allow_partial = f.allow_partial;
        opts.jobs = f.jobs;
        opts.log = &std::cerr;
        return static_cast<int>(run_stages(cfg, stages, opts));
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(RunStatus::failed);
    }
}

struct SynthFlags {
    std::string generator = "lc_rank1";
    std::uint64_t seed = 1;
    std::string output;
    std::string gender = "F";
    std::string years = "1960-2019";
    int first_age = 0;
    int last_age = 100;
    std::string id = "SYN";
    std::vector<std::string> params;
};

int run_synth(const SynthFlags &f) {
    try {
        GeneratorSpec spec;
        spec.name = f.generator;
        spec.gender = parse_gender(f.gender);
        const auto dash = f.years.find('-');
        if (dash == std::string::npos) {
            throw std::invalid_argument("--years expects first-last");
        }
        spec.years = {std::stoi(f.years.substr(0, dash)), std::stoi(f.years.substr(dash + 1))};
        spec.first_age = f.first_age;
        spec.last_age = f.last_age;
        spec.population_id = f.id;
        for (const std::string &kv : f.params) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw std::invalid_argument("--param expects key=value, got '" + kv + "'");
            }
            spec.params[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
        }
        write_surface(synthesize_surface(spec, f.seed), f.output);
        return 0;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Mortality model ensembles weighted by Shapley values"};
    app.require_subcommand(1);

    struct Sub {
        const char *name;
        const char *help;
        std::vector<Stage> stages;
    };
    const std::vector<Sub> subs{
        {"fit", "Fit every configured model on the training years", {Stage::fit}},
        {"forecast", "Expanding-window forecasts for validation and test years", {Stage::forecast}},
        {"shap", "Shapley values and alpha selection on validation forecasts", {Stage::shap}},
        {"combine", "Point and interval ensembles on the test forecasts", {Stage::combine}},
        {"evaluate", "Scores, tests and tables for the combined forecasts", {Stage::evaluate}},
        {"pipeline", "forecast, shap, combine and evaluate in one go", pipeline_stages()},
    };
    std::vector<CommonFlags> flags(subs.size());
    int status = 0;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        CLI::App *cmd = app.add_subcommand(subs[i].name, subs[i].help);
        add_common(*cmd, flags[i]);
        cmd->callback([&, i]() { status = run(flags[i], subs[i].stages); });
    }

    SynthFlags sf;
    CLI::App *synth = app.add_subcommand("synth", "Write a synthetic surface as fixture CSV");
    synth->add_option("-g,--generator", sf.generator,
                      "lc_rank1, apc_cohort, noisy_plateau or three_regime");
    synth->add_option("--seed", sf.seed, "Generator seed");
    synth->add_option("-o,--output", sf.output, "Output CSV")->required();
    synth->add_option("--gender", sf.gender, "F or M");
    synth->add_option("--years", sf.years, "first-last");
    synth->add_option("--first-age", sf.first_age);
    synth->add_option("--last-age", sf.last_age);
    synth->add_option("--id", sf.id, "Population id");
    synth->add_option("--param", sf.params, "Generator parameter key=value (repeatable)");
    synth->callback([&]() { status = run_synth(sf); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    return status;
}
