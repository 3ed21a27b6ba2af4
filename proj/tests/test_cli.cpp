#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aot/storage.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const fs::path out = fs::temp_directory_path() / "aot_cli_out.txt";
  const std::string cmd = std::string(AOT_CLI_PATH) + " " + args + " > " +
                          out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::ostringstream buf;
  buf << in.rdbuf();
  return {WEXITSTATUS(status), buf.str()};
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "aot_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run_cli("--no-such-flag").exit_code == 2);
  CHECK(run_cli("stage1 --out /tmp/x").exit_code == 2);  // missing --input
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);  // subcommand required
}

TEST_CASE("config errors exit 2") {
  Workspace ws;
  const fs::path cfg = ws.dir / "bad.json";
  std::ofstream(cfg) << R"({"tau_ssim": 1.5})";
  const CliResult r = run_cli("coevolve --config " + cfg.string() + " --out " +
                              (ws.dir / "out").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("tau_ssim") != std::string::npos);

  // shard flags are validated even without a config file
  CHECK(run_cli("synth --shard-index 3 --shard-count 2 --out " +
                (ws.dir / "o2").string())
            .exit_code == 2);

  // coevolve with neither --pool nor synthetic config
  CHECK(run_cli("coevolve --out " + (ws.dir / "o3").string()).exit_code == 2);
}

TEST_CASE("run errors exit 1") {
  Workspace ws;
  const CliResult r = run_cli("eval --input " +
                              (ws.dir / "missing.jsonl").string() + " --out " +
                              (ws.dir / "out").string());
  CHECK(r.exit_code == 1);
}

TEST_CASE("help exits 0") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("coevolve --help").exit_code == 0);
}

TEST_CASE("synth then eval on the sim backend reports full accuracy") {
  Workspace ws;
  const fs::path pool = ws.dir / "pool";
  const fs::path cfg = ws.dir / "cfg.json";
  std::ofstream(cfg)
      << R"({"synthetic": {"count": 8, "image_size": 64}, "sim": {"threshold": 0.5}})";
  REQUIRE(run_cli("synth --config " + cfg.string() + " --seed 4 --out " +
                  pool.string())
              .exit_code == 0);
  REQUIRE(fs::exists(pool / "dataset.jsonl"));

  // clean images have difficulty 0; a defender with theta 0.5 is always right
  const CliResult r =
      run_cli("eval --config " + cfg.string() + " --backend sim --seed 4 " +
              "--input " + (pool / "dataset.jsonl").string() + " --out " +
              (ws.dir / "eval").string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("accuracy: 1.0000 (8/8)") != std::string::npos);
  CHECK(aot::read_jsonl(ws.dir / "eval" / "eval.jsonl").size() == 8);
}

TEST_CASE("report recomputes metrics matching the run's report.json") {
  Workspace ws;
  const fs::path cfg = ws.dir / "cfg.json";
  std::ofstream(cfg) << R"({"backend": "sim", "seed": 9, "rounds": 1,
    "subset_size": 4, "probe_count": 4, "workers": 2,
    "synthetic": {"count": 10, "image_size": 64}})";
  const fs::path out = ws.dir / "run";
  REQUIRE(run_cli("coevolve --config " + cfg.string() + " --out " +
                  out.string())
              .exit_code == 0);

  const CliResult r = run_cli("report --out " + out.string());
  CHECK(r.exit_code == 0);
  const nlohmann::json recomputed = nlohmann::json::parse(r.output);
  const nlohmann::json original = aot::read_json(out / "report.json");
  CHECK(recomputed["rounds"] == original["rounds"]);
}
