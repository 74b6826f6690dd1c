#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace cgistereo;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "cgistereo_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Small model so each command finishes in well under a second.
const char* kSmall =
    " --set backbone.stem_channels=4 --set backbone.channels=6,6,8,8 --set matching.max_disparity=16"
    " --set matching.corr_channels=2 --set model.upsample_hidden=4 --set data.height=32 --set data.width=64"
    " --set eval.samples=2 --set train.steps=3";

int run(const std::string& args) {
  const std::string cmd = "cd '" + workdir().string() + "' && '" CGISTEREO_CLI "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return read_file(workdir() / p); }

}  // namespace

TEST_CASE("cli: synth, train, infer and eval") {
  REQUIRE(run(std::string("synth --out data --count 2 --seed 5") + kSmall) == 0);
  CHECK(fs::exists(workdir() / "data/sample_001/disp.pfm"));

  REQUIRE(run(std::string("train --out run") + kSmall) == 0);
  for (const char* f : {"checkpoint.bin", "loss.log", "metrics.txt", "config.txt", "manifest.json"}) {
    INFO(f);
    CHECK(fs::exists(workdir() / "run" / f));
  }
  const auto manifest = nlohmann::json::parse(slurp("run/manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["config"]["train.steps"] == "3");
  CHECK(manifest["timings_s"].contains("train"));

  const std::string infer = "infer data/sample_000/left.ppm data/sample_000/right.ppm --checkpoint run/checkpoint.bin"
                            " --gt data/sample_000/disp.pfm --d0" + std::string(kSmall);
  REQUIRE(run(infer + " --out inf1") == 0);
  REQUIRE(run(infer + " --out inf2") == 0);
  CHECK(slurp("inf1/disp.pfm") == slurp("inf2/disp.pfm"));
  CHECK(read_pfm(slurp("inf1/disp.pfm")).field.width == 64);
  CHECK(read_pfm(slurp("inf1/d0.pfm")).field.width == 16);
  CHECK(nlohmann::json::parse(slurp("inf1/manifest.json"))["result"]["metrics"].contains("epe_px"));

  REQUIRE(run(std::string("eval data --checkpoint run/checkpoint.bin --out ev") + kSmall) == 0);
  const auto metrics = nlohmann::json::parse(slurp("ev/metrics.json"));
  CHECK(metrics["samples"].size() == 2);
  CHECK(slurp("ev/metrics.txt").find("aggregate") != std::string::npos);
}

TEST_CASE("cli: scoring ground truth against itself") {
  REQUIRE(run(std::string("synth --out gtdata --count 1 --seed 6") + kSmall) == 0);
  REQUIRE(run(std::string("eval gtdata --pred disp.pfm --out evgt") + kSmall) == 0);
  const auto agg = nlohmann::json::parse(slurp("evgt/metrics.json"))["aggregate"];
  CHECK(agg["epe_px"] == 0.0);
  CHECK(agg["d1_percent"] == 0.0);
}

TEST_CASE("cli: replay reproduces outputs byte for byte") {
  REQUIRE(run(std::string("train --out orig --seed 9") + kSmall) == 0);
  REQUIRE(run("replay orig/manifest.json --out again") == 0);
  for (const char* f : {"checkpoint.bin", "loss.log", "metrics.txt", "config.txt"}) {
    INFO(f);
    CHECK(slurp(fs::path("orig") / f) == slurp(fs::path("again") / f));
  }
}

TEST_CASE("cli: ablation table") {
  REQUIRE(run(std::string("ablate --axis cgf_position --out abl --set train.steps=1 --set eval.samples=1") + kSmall) ==
          0);
  const std::string table = slurp("abl/ablation.txt");
  std::istringstream lines(table);
  int rows = 0;
  for (std::string line; std::getline(lines, line);) rows += line.empty() ? 0 : 1;
  CHECK(rows == 5);  // header + 4 placements
  REQUIRE(run(std::string("ablate --axis detach --out abld --set train.steps=1 --set eval.samples=1") + kSmall) == 0);
  CHECK(slurp("abld/ablation.txt").find("zero") != std::string::npos);
}

TEST_CASE("cli: exit codes") {
  REQUIRE(run("synth --out narrow --count 1 --set data.width=64") == 0);
  REQUIRE(run("synth --out wide --count 1 --set data.width=96") == 0);
  CHECK(run("train --set no.such.key=1") == 2);
  CHECK(run("infer missing_l.ppm missing_r.ppm") == 2);
  CHECK(run("infer narrow/sample_000/left.ppm wide/sample_000/right.ppm") == 2);
  CHECK(run("ablate --axis nowhere") == 2);
  CHECK(run("eval narrow --checkpoint narrow/sample_000/disp.pfm") == 2);
  CHECK(run("train --set train.steps=-4") == 2);
  CHECK(run("replay does_not_exist.json") == 2);
  CHECK(run("") == 2);
}
