#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const std::string cli = NEUROVE_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

fs::path work_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("neurove_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string tiny_sine_args(const fs::path& out) {
    return "--out " + out.string() +
           " --set sine.sequences=8 --set sine.train=6 --set sine.val=2"
           " --set sine.steps=60 --set sine.forecast_steps=60 gen-data --kind sine";
}

}  // namespace

TEST_CASE("gen-data sine writes a receipt, manifest, and is byte-deterministic") {
    const fs::path a = work_dir("gen_a");
    const fs::path b = work_dir("gen_b");
    REQUIRE(run("--seed 5 " + tiny_sine_args(a)) == 0);
    REQUIRE(run("--seed 5 " + tiny_sine_args(b)) == 0);
    CHECK(fs::exists(a / "config_resolved.txt"));
    CHECK(fs::exists(a / "manifest.json"));
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(slurp(a / "seq_003.csv") == slurp(b / "seq_003.csv"));
    // resolved receipt reflects overrides
    CHECK(slurp(a / "config_resolved.txt").find("sine.steps = 60") != std::string::npos);
}

TEST_CASE("gen-data fails nonzero on an unwritable output dir without partial outputs") {
    // a regular file as parent defeats create_directories even for root
    const fs::path parent = work_dir("gen_ro");
    std::ofstream(parent / "blocker") << "x";
    const fs::path dir = parent / "blocker" / "out";
    CHECK(run(tiny_sine_args(dir)) != 0);
    CHECK_FALSE(fs::exists(dir / "manifest.json"));
}

TEST_CASE("train / eval / predict / resume round trip on a tiny sine task") {
    const fs::path data = work_dir("sine_data");
    REQUIRE(run("--seed 3 " + tiny_sine_args(data)) == 0);

    const fs::path train_out = work_dir("sine_train");
    const std::string train_cfg =
        " --set model.hidden=12 --set train.epochs=2 --set train.batch=6 --set train.tbptt=30"
        " --set train.closed_loop_epochs=0";
    REQUIRE(run("--seed 3 --out " + train_out.string() + train_cfg + " train --task sine --data " +
                data.string()) == 0);
    CHECK(fs::exists(train_out / "best.nvck"));
    CHECK(fs::exists(train_out / "last.nvck"));
    CHECK(fs::exists(train_out / "report.json"));

    // epoch log is NDJSON: every line parses as a json object
    std::ifstream log(train_out / "epochs.ndjson");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("train_loss"));
        ++lines;
    }
    CHECK(lines == 2);

    const fs::path eval_out = work_dir("sine_eval");
    REQUIRE(run("--out " + eval_out.string() + " eval --task sine --checkpoint " +
                (train_out / "best.nvck").string() + " --data " + data.string()) == 0);
    CHECK(fs::exists(eval_out / "metrics.json"));
    const auto metrics = nlohmann::json::parse(slurp(eval_out / "metrics.json"));
    CHECK(metrics.at("fit_rmse").size() == 2);
    // curve csv spans fit and forecast phases
    bool found_curve = false;
    for (const auto& entry : fs::directory_iterator(eval_out))
        if (entry.path().filename().string().rfind("curve_seq_", 0) == 0) {
            found_curve = true;
            const std::string curve = slurp(entry.path());
            CHECK(curve.find("fit") != std::string::npos);
            CHECK(curve.find("forecast") != std::string::npos);
        }
    CHECK(found_curve);

    const fs::path pred_out = work_dir("sine_pred");
    REQUIRE(run("--out " + pred_out.string() + " predict --task sine --checkpoint " +
                (train_out / "best.nvck").string() + " --data " + data.string()) == 0);
    CHECK(fs::exists(pred_out / "predictions.csv"));

    // resume from last.nvck with lr=0: the restored model's validation
    // metric continues within 1% of the pre-interrupt value
    const fs::path resume_out = work_dir("sine_resume");
    const std::string resume_cfg =
        " --set model.hidden=12 --set train.epochs=1 --set train.batch=6 --set train.tbptt=30"
        " --set train.lr=0 --set train.closed_loop_epochs=0";
    REQUIRE(run("--seed 3 --out " + resume_out.string() + resume_cfg + " train --task sine --data " +
                data.string() + " --resume " + (train_out / "last.nvck").string()) == 0);
    std::ifstream log1(train_out / "epochs.ndjson");
    std::string last_line, cur;
    while (std::getline(log1, cur))
        if (!cur.empty()) last_line = cur;
    const double pre = nlohmann::json::parse(last_line).at("val_fit_rmse").get<double>();
    std::ifstream log2(resume_out / "epochs.ndjson");
    std::getline(log2, cur);
    const double post = nlohmann::json::parse(cur).at("val_fit_rmse").get<double>();
    CHECK(std::abs(post - pre) <= 0.01 * std::abs(pre));

    // missing checkpoint -> nonzero exit
    CHECK(run("--out " + work_dir("missing").string() + " eval --task sine --checkpoint /nonexistent.nvck --data " +
              data.string()) != 0);
}

TEST_CASE("slstm baseline flag trains the spike-recurrence d=0 variant") {
    const fs::path data = work_dir("sine_data_b");
    REQUIRE(run("--seed 4 " + tiny_sine_args(data)) == 0);
    const fs::path out = work_dir("slstm_train");
    REQUIRE(run("--seed 4 --out " + out.string() +
                " --set model.hidden=10 --set train.epochs=1 --set train.batch=6 --set train.tbptt=30"
                " --set train.closed_loop_epochs=0 train --task sine --data " +
                data.string() + " --baseline slstm") == 0);
    const auto report = nlohmann::json::parse(slurp(out / "report.json"));
    CHECK(report.at("baseline_slstm").get<bool>());
}

TEST_CASE("analyze-neurons emits input, lif, alif traces and a rate summary") {
    const fs::path out = work_dir("neurons");
    REQUIRE(run("--seed 11 --out " + out.string() + " --set analyze.steps=600 analyze-neurons") == 0);
    CHECK(fs::exists(out / "input.csv"));
    CHECK(fs::exists(out / "lif.csv"));
    CHECK(fs::exists(out / "alif.csv"));
    const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
    CHECK(summary.at("alif_rate").get<double>() >= summary.at("lif_rate").get<double>());

    // identical seeds give identical input traces
    const fs::path out2 = work_dir("neurons2");
    REQUIRE(run("--seed 11 --out " + out2.string() + " --set analyze.steps=600 analyze-neurons") == 0);
    CHECK(slurp(out / "input.csv") == slurp(out2 / "input.csv"));
}
