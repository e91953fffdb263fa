#include "mortens/io.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <memory>

namespace fs = std::filesystem;

namespace {

/// Runs the CLI with `args` from `cwd`, returning its exit code. Output goes
/// to `log` inside `cwd`.
int run_cli(const fs::path &cwd, const std::string &args, const std::string &log = "log.txt") {
    const std::string cmd = "cd '" + cwd.string() + "' && '" MORTENS_CLI "' " + args + " > " +
                            log + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int count_json(const fs::path &dir) {
    int n = 0;
    if (!fs::exists(dir)) {
        return 0;
    }
    for (const auto &e : fs::directory_iterator(dir)) {
        n += e.path().extension() == ".json";
    }
    return n;
}

/// Every regular file under `root`, relative, excluding the settings echo
/// (it names the output directory).
std::vector<fs::path> output_files(const fs::path &root) {
    std::vector<fs::path> out;
    for (const auto &e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().filename() != "config.resolved") {
            out.push_back(fs::relative(e.path(), root));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

double score(const fs::path &scores, const std::string &method, int h) {
    const mortens::CsvTable t = mortens::read_csv(scores);
    const int m = t.column("method");
    const int hc = t.column("horizon");
    const int mse = t.column("mse");
    for (const auto &row : t.rows) {
        if (row[static_cast<std::size_t>(m)] == method &&
            std::stoi(row[static_cast<std::size_t>(hc)]) == h) {
            return std::stod(row[static_cast<std::size_t>(mse)]);
        }
    }
    throw std::runtime_error("no score for " + method + " at h=" + std::to_string(h));
}

} // namespace

/// Short two-population fixture: 20 training years and three-year validation
/// and test windows, with large exposures so every model but rh converges
/// within a few iterations.
class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = std::make_unique<testutil::TempDir>("cli");
        const fs::path d = dir_->path();
        ASSERT_EQ(run_cli(d, "synth -g lc_rank1 --seed 1 --years 1980-2005 -o f.csv "
                             "--param poisson_noise=1 --param exposure_scale=1e5"),
                  0);
        ASSERT_EQ(run_cli(d, "synth -g lc_rank1 --seed 101 --gender M --years 1980-2005 -o m.csv "
                             "--param poisson_noise=1 --param exposure_scale=1e5"),
                  0);
        testutil::write_text(d / "c.cfg", "population.S.F = f.csv\n"
                                          "population.S.M = m.csv\n"
                                          "split.train = 1980-1999\n"
                                          "split.validation = 2000-2002\n"
                                          "split.test = 2003-2005\n"
                                          "n_paths = 50\n");
    }
    static void TearDownTestSuite() { dir_.reset(); }

    static fs::path dir() { return dir_->path(); }

    static std::unique_ptr<testutil::TempDir> dir_;
};

std::unique_ptr<testutil::TempDir> Cli::dir_;

TEST_F(Cli, FitWritesOneFilePerModel) {
    ASSERT_EQ(run_cli(dir(), "fit -c c.cfg -o fit_all"), 0);
    EXPECT_EQ(count_json(dir() / "fit_all/S_F/fits"), 15);
    EXPECT_EQ(count_json(dir() / "fit_all/S_M/fits"), 15);
    const mortens::CsvTable summary = mortens::read_csv(dir() / "fit_all/S_F/fits/summary.csv");
    EXPECT_EQ(summary.rows.size(), 15u);

    ASSERT_EQ(run_cli(dir(), "fit -c c.cfg -o fit_two --models lc,cbd"), 0);
    EXPECT_EQ(count_json(dir() / "fit_two/S_F/fits"), 2);
    EXPECT_TRUE(fs::exists(dir() / "fit_two/S_F/fits/cbd.json"));
}

TEST_F(Cli, NonConvergenceFailsUnlessPartialAllowed) {
    EXPECT_EQ(run_cli(dir(), "fit -c c.cfg -o stall_strict --set max_iterations=30"), 1);
    EXPECT_NE(testutil::read_text(dir() / "log.txt").find("rh"), std::string::npos);

    EXPECT_EQ(run_cli(dir(), "fit -c c.cfg -o stall --set max_iterations=30 --allow-partial"), 2);
    const std::string log = testutil::read_text(dir() / "log.txt");
    EXPECT_NE(log.find("warning [S_F] rh dropped"), std::string::npos) << log;
    EXPECT_EQ(count_json(dir() / "stall/S_F/fits"), 14);
    EXPECT_FALSE(fs::exists(dir() / "stall/S_F/fits/rh.json"));
}

TEST_F(Cli, PipelineIsDeterministicAndIdempotent) {
    ASSERT_EQ(run_cli(dir(), "pipeline -c c.cfg -o run1 -j 1"), 0);
    ASSERT_EQ(run_cli(dir(), "pipeline -c c.cfg -o run2 -j 2"), 0);
    const std::vector<fs::path> files = output_files(dir() / "run1");
    ASSERT_EQ(files, output_files(dir() / "run2"));
    for (const char *name : {"S_F/scores.csv", "S_F/combined.csv", "S_M/dm.csv",
                             "S_F/summary.json", "table_mse_x100.csv"}) {
        EXPECT_NE(std::find(files.begin(), files.end(), fs::path(name)), files.end()) << name;
    }
    for (const fs::path &f : files) {
        EXPECT_EQ(testutil::read_text(dir() / "run1" / f), testutil::read_text(dir() / "run2" / f))
            << f;
    }

    std::map<fs::path, fs::file_time_type> stamps;
    for (const fs::path &f : files) {
        stamps[f] = fs::last_write_time(dir() / "run1" / f);
    }
    ASSERT_EQ(run_cli(dir(), "pipeline -c c.cfg -o run1"), 0);
    const std::string log = testutil::read_text(dir() / "log.txt");
    EXPECT_EQ(log.find("running"), std::string::npos) << log;
    for (const fs::path &f : files) {
        EXPECT_EQ(fs::last_write_time(dir() / "run1" / f), stamps[f]) << f;
    }
}

TEST_F(Cli, ChangedSettingsAreRecomputedAndEchoed) {
    ASSERT_EQ(run_cli(dir(), "pipeline -c c.cfg -o alpha"), 0);
    ASSERT_EQ(run_cli(dir(), "pipeline -c c.cfg -o alpha --alpha 0.5"), 0);
    EXPECT_NE(testutil::read_text(dir() / "log.txt").find("settings changed"), std::string::npos);
    const std::string echo = testutil::read_text(dir() / "alpha/S_F/config.resolved");
    EXPECT_NE(echo.find("alpha_mode = fixed"), std::string::npos) << echo;
    EXPECT_NE(echo.find("alpha_value = 0.5"), std::string::npos) << echo;
    EXPECT_EQ(echo, testutil::read_text(dir() / "alpha/config.resolved"));
    EXPECT_NO_THROW(score(dir() / "alpha/S_F/scores.csv", "SHAP α=50%", 3));
    EXPECT_THROW(score(dir() / "alpha/S_F/scores.csv", "SHAP α=grid", 1), std::runtime_error);
}

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(run_cli(dir(), "pipeline -c absent.cfg"), 1);
    EXPECT_EQ(run_cli(dir(), "pipeline -c c.cfg --no-such-flag"), 1);
    EXPECT_EQ(run_cli(dir(), "fit -c c.cfg -o bad --set nonsense=1"), 1);
    EXPECT_NE(testutil::read_text(dir() / "log.txt").find("nonsense"), std::string::npos);
    EXPECT_EQ(run_cli(dir(), "fit -c c.cfg -o bad --models lc,unknown"), 1);
    EXPECT_EQ(run_cli(dir(), ""), 1);
}

TEST(CliLongWindow, ShapBeatsSimpleAverageAtLongHorizons) {
    testutil::TempDir d("cli_long");
    ASSERT_EQ(run_cli(d.path(), "synth -g lc_rank1 --seed 1 -o f.csv --param poisson_noise=1"), 0);
    testutil::write_text(d / "c.cfg", "population.SYN.F = f.csv\n"
                                      "n_paths = 100\n"
                                      "seed = 3\n");
    // The product-ratio model cannot run on one gender alone.
    EXPECT_EQ(run_cli(d.path(), "pipeline -c c.cfg -o out"), 1);
    EXPECT_NE(testutil::read_text(d / "log.txt").find("pr needs both genders"), std::string::npos);

    ASSERT_EQ(run_cli(d.path(), "synth -g lc_rank1 --seed 101 --gender M -o m.csv "
                                "--param poisson_noise=1"),
              0);
    testutil::write_text(d / "c.cfg", testutil::read_text(d / "c.cfg") + "population.SYN.M = m.csv\n");
    // rh needs a long iteration budget on cohort-free data.
    ASSERT_EQ(run_cli(d.path(), "pipeline -c c.cfg -o out -j 2 --set max_iterations=3000"), 0)
        << testutil::read_text(d / "log.txt");
    for (const char *pop : {"SYN_F", "SYN_M"}) {
        const fs::path scores = d / "out" / pop / "scores.csv";
        for (int h : {6, 10}) {
            EXPECT_LE(score(scores, "SHAP α=grid", h), score(scores, "Average", h))
                << pop << " h=" << h;
        }
    }
    const mortens::CsvTable intervals = mortens::read_csv(d / "out/SYN_F/interval_scores.csv");
    EXPECT_EQ(intervals.rows.size(), 6u * 10u);
}
