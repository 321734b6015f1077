// Drives the installed CLI end to end: synth -> fit -> apply -> eval ->
// reliability, plus exit-code and flag-validation checks.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "voxcal/volume.hpp"

namespace fs = std::filesystem;

namespace {

int failures = 0;

void check(bool ok, const std::string& what) {
    std::cout << (ok ? "ok: " : "FAILED: ") << what << "\n";
    if (!ok) ++failures;
}

int run(const std::string& args) {
    std::string cmd = std::string(VOXCAL_CLI_PATH) + " " + args;
    int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

int main() {
    auto dir = fs::temp_directory_path() / "voxcal_cli_pipeline";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto data = (dir / "data").string();
    auto quiet = " > /dev/null 2>&1";

    check(run("synth --out " + data +
              " --dims 14 --raters 3 --calib-cases 3 --test-cases 2"
              " --distortion power:2.0 --rater-model bernoulli --seed 5" + quiet) == 0,
          "synth exits 0");
    check(fs::exists(dir / "data" / "manifest.json"), "synth writes manifest.json");
    check(fs::exists(dir / "data" / "synth_config.json"), "synth writes synth_config.json");

    auto map_path = (dir / "map.json").string();
    check(run("fit --manifest " + data + "/manifest.json --target mhr --bins 40 --out " +
              map_path + quiet) == 0,
          "fit exits 0");
    {
        std::ifstream in(map_path);
        nlohmann::json j;
        in >> j;
        check(j.at("kind") == "mhr", "fit writes an mhr calibrator");
        check(!j.at("train_manifest_hash").get<std::string>().empty(),
              "calibrator records the manifest hash");
    }

    auto pred_in = data + "/cases/case_003_pred.raw";
    auto pred_out = (dir / "calibrated.raw").string();
    check(run("apply --map " + map_path + " --in " + pred_in + " --out " + pred_out + quiet) == 0,
          "apply exits 0");
    {
        auto calibrated = voxcal::read_volume(pred_out);
        auto original = voxcal::read_volume(pred_in);
        check(calibrated.header.dims == original.header.dims, "apply preserves dims");
    }

    auto metrics_csv = (dir / "metrics.csv").string();
    check(run("eval --manifest " + data + "/manifest.json --split test --map " + map_path +
              " --resamples 200 --out-csv " + metrics_csv + quiet) == 0,
          "eval exits 0");
    {
        auto csv = slurp(metrics_csv);
        check(csv.rfind("case_id,tdsc,ece,crps,soft_volume\n", 0) == 0,
              "eval CSV header matches the documented column order");
        check(csv.find("case_003") != std::string::npos, "eval CSV contains test cases");
    }

    auto curve_csv = (dir / "curve.csv").string();
    check(run("reliability --manifest " + data + "/manifest.json --split test --map " + map_path +
              " --bins 20 --out " + curve_csv + quiet) == 0,
          "reliability exits 0");
    check(slurp(curve_csv).rfind("bin_lo,bin_hi,occupied,weight,mean_confidence,empirical_mhr\n",
                                 0) == 0,
          "reliability CSV header matches");

    check(run("--json fit --manifest " + data + "/manifest.json --target hard_label --bins 30"
              " --out " + (dir / "hard.json").string() + " > " + (dir / "fit.json").string() +
              " 2> /dev/null") == 0,
          "--json fit exits 0");
    {
        std::ifstream in(dir / "fit.json");
        nlohmann::json j;
        in >> j;
        check(j.at("maps") == 3, "--json reports one map per rater for hard_label");
    }

    // VOXCAL_THREADS env default must not change output bytes
    {
        auto eval_env = (dir / "metrics_env.csv").string();
        std::string cmd = std::string("VOXCAL_THREADS=3 ") + VOXCAL_CLI_PATH + " eval --manifest " +
                          data + "/manifest.json --split test --map " + map_path +
                          " --resamples 200 --out-csv " + eval_env + quiet;
        int rc = std::system(cmd.c_str());
        check(rc != -1 && WEXITSTATUS(rc) == 0, "VOXCAL_THREADS env is honored");
        check(slurp(eval_env) == slurp(metrics_csv), "thread count does not change outputs");
    }

    // error paths: unknown flag -> usage error 1; missing data -> error 2
    check(run("fit --manifest " + data + "/manifest.json --bogus-flag 1 --out x.json" + quiet) == 1,
          "unknown flag is a usage error (exit 1)");
    check(run("fit --manifest " + (dir / "missing.json").string() + " --out x.json" + quiet) == 2,
          "missing manifest is a data error (exit 2)");
    check(run("apply --map " + map_path + " --in " + (dir / "nope.raw").string() + " --out " +
              (dir / "x.raw").string() + quiet) == 2,
          "missing volume is a data error (exit 2)");
    check(run("synth --out " + (dir / "bad").string() + " --dims 8 --raters 0" + quiet) == 2,
          "invalid config is a data error (exit 2)");

    if (failures > 0) {
        std::cout << failures << " CLI check(s) failed\n";
        return 1;
    }
    std::cout << "all CLI checks passed\n";
    return 0;
}
