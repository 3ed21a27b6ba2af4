// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit code 0 iff all pass.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "aot/coevolution.hpp"
#include "aot/mock_client.hpp"
#include "aot/report.hpp"
#include "aot/rewards.hpp"
#include "aot/ssim.hpp"
#include "aot/stage1.hpp"
#include "aot/stage2.hpp"
#include "aot/storage.hpp"
#include "aot/synthetic.hpp"
#include "ssim_oracle.hpp"

namespace fs = std::filesystem;
using namespace aot;

namespace {

int g_failures = 0;
std::vector<std::string> g_notes;

void note(const std::string& message) { g_notes.push_back(message); }

bool expect(bool ok, const std::string& what) {
  if (!ok) note("FAILED: " + what);
  return ok;
}

void criterion(int number, const char* name, bool ok) {
  std::printf("[%s] criterion %2d: %s\n", ok ? "PASS" : "FAIL", number, name);
  if (!ok) {
    ++g_failures;
    for (const auto& n : g_notes) std::printf("         %s\n", n.c_str());
  }
  g_notes.clear();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

const SleepFn no_sleep = [](std::chrono::milliseconds) {};

ImageBuffer noise_image(int w, int h, std::uint64_t seed) {
  ImageBuffer img(w, h, 1);
  RngStream rng(seed);
  for (auto& p : img.pixels)
    p = static_cast<std::uint8_t>(rng.next_below(256));
  return img;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AOT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

// 1. windowed SSIM vs direct-summation oracle, identity, symmetry
bool criterion_ssim() {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const ImageBuffer a = noise_image(24, 24, 1000 + i);
    ImageBuffer b = a;
    RngStream rng(2000 + i);
    for (auto& p : b.pixels) {
      const int delta = static_cast<int>(rng.next_int(-int(4 + i), int(4 + i)));
      p = static_cast<std::uint8_t>(std::clamp(int(p) + delta, 0, 255));
    }
    const double got = ssim(a, b);
    const double want = oracle::ssim_reference(a, b);
    ok &= expect(std::abs(got - want) < 1e-6,
                 "pair " + std::to_string(i) + ": " + std::to_string(got) +
                     " vs oracle " + std::to_string(want));
    ok &= expect(std::abs(ssim(a, a) - 1.0) < 1e-12, "identity");
    ok &= expect(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12, "symmetry");
  }
  ok &= expect(seconds_since(start) < 5.0, "runtime under 5 s");
  return ok;
}

// 2. attacker-reward truth table over the full grid
bool criterion_attacker_reward() {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  const VerdictPair pairs[4] = {
      {false, false}, {false, true}, {true, false}, {true, true}};
  for (int i = 0; i <= 20; ++i) {
    const double min_ssim = i * 0.05;
    for (const auto& v : pairs) {
      const double r = attacker_reward(min_ssim, 0.3, v);
      const double want = min_ssim < 0.3 ? 0.0
                          : v.both_incorrect() ? 1.0
                                               : 0.2;
      ok &= expect(r == want, "grid point ssim=" + std::to_string(min_ssim));
    }
  }
  ok &= expect(attacker_reward(0.30, 0.3, {false, false}) == 1.0,
               "boundary min_ssim == tau passes the gate");
  ok &= expect(seconds_since(start) < 1.0, "runtime under 1 s");
  return ok;
}

// 3. extraction cascade and defender reward values
bool criterion_defender_reward() {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  struct Case {
    const char* text;
    char truth;
    double want;
  };
  const Case cases[] = {
      {"reasoning... \\boxed{B}", 'B', 1.0},
      {"\\boxed{ A }", 'A', 1.0},
      {"first \\boxed{C} then \\boxed{D}", 'C', 1.0},
      {"the answer is boxed{B}", 'B', 0.8},
      {"The final answer is: B", 'B', 0.8},
      {"the final answer is D", 'D', 0.8},
      {"I pick (B) here", 'B', 0.8},
      {"answer: (A)", 'A', 0.8},
      {"\\boxed{C}", 'B', 0.0},
      {"The final answer is: A", 'B', 0.0},
      {"I think it is near the window.", 'B', 0.0},
      {"\\boxed{b}", 'B', 0.0},
      {"(a)side remark", 'A', 0.0},
      {"", 'A', 0.0},
  };
  int n = 0;
  for (const auto& c : cases) {
    const double got = defender_reward(extract_answer(c.text), c.truth);
    ok &= expect(got == c.want, std::string("fixture: ") + c.text);
    ++n;
  }
  ok &= expect(n >= 12, "at least 12 fixtures");
  ok &= expect(seconds_since(start) < 1.0, "runtime under 1 s");
  return ok;
}

// 4. curation window and disjoint round subsets
bool criterion_curation() {
  bool ok = true;
  std::vector<int> selected;
  for (int n = 0; n <= 10; ++n) {
    TrialSummary s;
    s.n_trials = 10;
    s.n_correct = n;
    if (curate(s, 3, 7).verdict == CurationVerdict::Selected)
      selected.push_back(n);
  }
  ok &= expect(selected == std::vector<int>{3, 4, 5, 6, 7},
               "selected set is {3,4,5,6,7}");

  std::vector<std::string> pool;
  for (int i = 0; i < 20; ++i) pool.push_back("p" + std::to_string(i));
  std::set<std::string> consumed;
  std::size_t total = 0;
  for (int r = 0; r < 3; ++r) {
    RngStream rng = RngStream::derive(3, "subset", static_cast<std::uint64_t>(r));
    const auto subset = sample_round_subset(pool, 5, consumed, rng);
    total += subset.size();
    consumed.insert(subset.begin(), subset.end());
  }
  ok &= expect(consumed.size() == total && total == 15,
               "3 rounds of 5 are pairwise disjoint");
  return ok;
}

// 5. short-circuiting and conservative failure, verified by call counters
bool criterion_short_circuit() {
  bool ok = true;
  const fs::path dir = fs::temp_directory_path() / "aot_acc_sc";
  fs::remove_all(dir);
  SyntheticSpec spec;
  spec.count = 2;
  spec.image_size = 64;
  const auto dataset = make_synthetic_pool(spec, 3, dir);
  RunConfig cfg;
  cfg.canvas = 96;
  cfg.workers = 1;

  {  // composition failure: exactly one check call, nothing after it
    std::atomic<int> comp{0}, dup{0}, real{0};
    MockVqaClient verifier([&](const ChatQuery& q) -> ChatReply {
      if (q.prompt.find("stitched collage") != std::string::npos) {
        ++comp;
        return ChatReply{"Yes", {{"Yes", std::log(0.9)}, {"No", std::log(0.1)}}, true};
      }
      if (q.prompt.find("detections") != std::string::npos) ++dup;
      if (q.prompt.find("Real Photo") != std::string::npos) ++real;
      return ChatReply{"a scene", {}, false};
    });
    MockEditClient generator;
    run_stage1({dataset[0]}, dir, {&verifier, &generator}, PromptSet{}, cfg,
               dir / "s1", no_sleep);
    ok &= expect(comp.load() == 1, "one composition call");
    ok &= expect(dup.load() == 0 && real.load() == 0,
                 "later checks never invoked");
  }
  {  // rejected stage-2 proposals never reach the edit endpoint
    const SampleRecord& sample = dataset[1];
    const BBox t = sample.targets[0].boxes[0];
    std::ostringstream overlapping;
    overlapping << "[" << t.x1 + 1 << ", " << t.y1 + 1 << ", " << t.x2 + 1
                << ", " << t.y2 + 1 << "] | a woven basket";
    MockVqaClient vqa([&](const ChatQuery& q) -> ChatReply {
      if (q.prompt.find("distractor") != std::string::npos)
        return ChatReply{overlapping.str(), {}, false};
      return ChatReply{"\\boxed{" + std::string(1, sample.answer) + "}", {}, false};
    });
    MockEditClient generator;
    run_stage2({sample}, dir, {&vqa, &vqa, &generator}, PromptSet{}, cfg,
               dir / "s2", no_sleep);
    ok &= expect(generator.calls() == 0, "edit endpoint never called");
  }
  {  // check_failed samples are absent from outputs
    MockVqaClient verifier([&](const ChatQuery& q) -> ChatReply {
      if (q.prompt.find("Real Photo") != std::string::npos)
        return ChatReply{"Probably real", {}, false};
      if (q.prompt.find("stitched collage") != std::string::npos)
        return ChatReply{"No", {{"Yes", std::log(0.1)}, {"No", std::log(0.9)}}, true};
      if (q.prompt.find("detections") != std::string::npos)
        return ChatReply{R"({"detections": []})", {}, false};
      return ChatReply{"a scene", {}, false};
    });
    MockEditClient generator;
    run_stage1({dataset[0]}, dir, {&verifier, &generator}, PromptSet{}, cfg,
               dir / "s3", no_sleep);
    ok &= expect(read_jsonl(dir / "s3" / "extended.jsonl").empty(),
                 "check_failed sample not in output");
    const auto rows = read_jsonl(dir / "s3" / "stage1_manifest.jsonl");
    ok &= expect(rows.size() == 1 && rows[0]["status"] == "discarded",
                 "conservative discard recorded");
  }
  fs::remove_all(dir);
  return ok;
}

// 6. geometry fixtures, transform round-trip, placement frequencies
bool criterion_geometry() {
  bool ok = true;
  ok &= expect(std::abs(iou({0, 0, 10, 10}, {5, 5, 15, 15}) - 25.0 / 175.0) <
                   1e-9,
               "iou 25/175 fixture");
  ok &= expect(iou({0, 0, 10, 10}, {20, 20, 30, 30}) == 0.0, "disjoint iou");
  ok &= expect(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0, "identity iou");

  RngStream rng(17);
  for (int i = 0; i < 200; ++i) {
    const BBox b{rng.next_range(0, 100), rng.next_range(0, 100),
                 rng.next_range(101, 300), rng.next_range(101, 300)};
    const double s = rng.next_range(0.2, 1.8);
    const double ox = rng.next_range(-40, 40);
    const double oy = rng.next_range(-40, 40);
    const BBox fwd = transform_bbox(b, s, ox, oy);
    const BBox back = transform_bbox(fwd, 1.0 / s, -ox / s, -oy / s);
    ok &= expect(std::abs(back.x1 - b.x1) < 1e-9 &&
                     std::abs(back.y1 - b.y1) < 1e-9 &&
                     std::abs(back.x2 - b.x2) < 1e-9 &&
                     std::abs(back.y2 - b.y2) < 1e-9,
                 "transform round-trip within 1e-9");
  }

  std::array<int, 3> counts{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    RngStream stream = RngStream::derive(42, "placement", static_cast<std::uint64_t>(i));
    const Placement p =
        sample_placement(1536, 1536, 512, 512, {0.4, 0.4, 0.2}, stream);
    counts[static_cast<int>(p.kind)]++;
  }
  ok &= expect(std::abs(counts[0] / double(n) - 0.4) < 0.02 &&
                   std::abs(counts[1] / double(n) - 0.4) < 0.02 &&
                   std::abs(counts[2] / double(n) - 0.2) < 0.02,
               "placement frequencies within +-0.02");
  return ok;
}

// 7. retry policy behaviour and attempt accounting
bool criterion_retries() {
  bool ok = true;
  int calls = 0;
  const int result = with_retries(
      [&] {
        ++calls;
        if (calls < 3) throw TransportError("flaky");
        return 7;
      },
      3, no_sleep);
  ok &= expect(result == 7 && calls == 3, "fail-fail-succeed in 3 calls");

  calls = 0;
  bool exhausted = false;
  try {
    with_retries([&]() -> int {
      ++calls;
      throw TransportError("down");
    }, 3, no_sleep);
  } catch (const RetriesExhausted&) {
    exhausted = true;
  }
  ok &= expect(exhausted && calls == 3, "three failures surface exhaustion");

  for (int attempts = 1; attempts <= 6; ++attempts) {
    calls = 0;
    try {
      with_retries([&]() -> int {
        ++calls;
        throw TransportError("x");
      }, attempts, no_sleep);
    } catch (const RetriesExhausted&) {
    }
    ok &= expect(calls == attempts, "attempt count never exceeded");
  }
  return ok;
}

// 8. desk-scale co-evolution analog through the CLI
bool criterion_coevolution(const fs::path& work) {
  bool ok = true;
  const fs::path out = work / "coev";
  const fs::path cfg_path = work / "coev.json";
  atomic_write_json(cfg_path,
                    {{"backend", "sim"},
                     {"seed", 7},
                     {"rounds", 3},
                     {"subset_size", 10},
                     {"trials", 10},
                     {"probe_count", 12},
                     {"workers", 4},
                     {"synthetic", {{"count", 60}, {"image_size", 128}}}});
  const auto start = std::chrono::steady_clock::now();
  const int rc = run_cli("coevolve --config " + cfg_path.string() +
                         " --backend sim --seed 7 --out " + out.string());
  const double elapsed = seconds_since(start);
  ok &= expect(rc == 0, "CLI exit code 0");
  ok &= expect(elapsed < 60.0,
               "completed in " + std::to_string(elapsed) + " s (< 60)");
  if (!fs::exists(out / "report.json")) return expect(false, "report.json missing");

  const nlohmann::json report = read_json(out / "report.json");
  const auto& rounds = report["rounds"];
  ok &= expect(rounds.size() == 4, "baseline + 3 round rows");

  double prev_theta = 0.0;
  bool theta_ok = true;
  for (const auto& m : rounds) {
    if (!m.contains("sim_threshold")) continue;
    const double theta = m["sim_threshold"].get<double>();
    theta_ok &= theta >= prev_theta - 1e-12;
    prev_theta = theta;
  }
  ok &= expect(theta_ok, "defender threshold non-decreasing");
  ok &= expect(rounds[3]["probe_accuracy"].get<double>() >
                   rounds[0]["probe_accuracy"].get<double>(),
               "round-3 probe accuracy exceeds round 0");

  for (int r = 1; r <= 3; ++r) {
    for (const auto& row : read_jsonl(
             out / "rounds" / ("defender_batch_" + std::to_string(r) + ".jsonl"))) {
      const int n = row["n_correct"].get<int>();
      ok &= expect(n >= 3 && n <= 7, "curated n_correct inside [3,7]");
    }
    for (const auto& row : read_jsonl(
             out / "rounds" / ("attacker_batch_" + std::to_string(r) + ".jsonl"))) {
      if (row.contains("error")) continue;
      const double reward = row["reward"].get<double>();
      ok &= expect(reward == 0.0 || reward == 0.2 || reward == 1.0,
                   "reward in {0, 0.2, 1.0}");
    }
  }
  return ok;
}

// 9. crash-resume determinism through the CLI
bool criterion_resume(const fs::path& work) {
  bool ok = true;
  const fs::path cfg_path = work / "resume.json";
  atomic_write_json(cfg_path,
                    {{"backend", "sim"},
                     {"seed", 7},
                     {"rounds", 2},
                     {"subset_size", 5},
                     {"trials", 10},
                     {"probe_count", 6},
                     {"workers", 2},
                     {"synthetic", {{"count", 24}, {"image_size", 96}}}});

  const fs::path full = work / "resume_full";
  ok &= expect(run_cli("coevolve --config " + cfg_path.string() + " --out " +
                       full.string()) == 0,
               "uninterrupted run exits 0");

  const fs::path steps = work / "resume_steps";
  for (int i = 0; i < 12; ++i) {
    const int rc = run_cli("coevolve --config " + cfg_path.string() +
                           " --halt-after-phases 1 --out " + steps.string());
    if (rc != 0) return expect(false, "stepped run failed");
    if (fs::exists(steps / "report.json")) break;
  }
  ok &= expect(fs::exists(steps / "report.json"), "stepped run completed");
  ok &= expect(slurp(steps / "report.json") == slurp(full / "report.json"),
               "report.json byte-identical after kill/resume");
  return ok;
}

// 10. sharded stage1 equals the unsharded run
bool criterion_sharding(const fs::path& work) {
  bool ok = true;
  const fs::path pool_dir = work / "shard_pool";
  const fs::path cfg_path = work / "shard.json";
  atomic_write_json(cfg_path, {{"backend", "sim"},
                               {"canvas", 256},
                               {"synthetic", {{"count", 40}, {"image_size", 96}}}});
  ok &= expect(run_cli("synth --config " + cfg_path.string() + " --seed 3 --out " +
                       pool_dir.string()) == 0,
               "synth pool");
  const std::string input = (pool_dir / "dataset.jsonl").string();
  const std::string base_flags = " --config " + cfg_path.string() +
                                 " --backend sim --seed 11 --workers 2 --input " +
                                 input;

  const fs::path whole = work / "shard_whole";
  ok &= expect(run_cli("stage1 --out " + whole.string() + base_flags) == 0,
               "unsharded run");

  auto record_set = [](const fs::path& manifest) {
    std::map<std::string, nlohmann::json> records;
    for (auto& row : read_jsonl(manifest))
      records[row["id"].get<std::string>()] = row;
    return records;
  };

  std::map<std::string, nlohmann::json> merged;
  for (int shard = 0; shard < 4; ++shard) {
    const fs::path out = work / ("shard_" + std::to_string(shard));
    ok &= expect(run_cli("stage1 --out " + out.string() + base_flags +
                         " --shard-index " + std::to_string(shard) +
                         " --shard-count 4") == 0,
                 "shard run " + std::to_string(shard));
    for (auto& [id, row] : record_set(out / "stage1_manifest.jsonl")) {
      ok &= expect(!merged.count(id), "shards are disjoint");
      merged[id] = row;
    }
  }
  const auto whole_set = record_set(whole / "stage1_manifest.jsonl");
  ok &= expect(merged == whole_set,
               "union of 4 shards equals the unsharded record set");
  return ok;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "aot_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  criterion(1, "SSIM oracle equivalence, identity, symmetry", criterion_ssim());
  criterion(2, "attacker-reward truth table with tau boundary",
            criterion_attacker_reward());
  criterion(3, "extraction cascade and defender reward values",
            criterion_defender_reward());
  criterion(4, "curation window and disjoint round subsets", criterion_curation());
  criterion(5, "pipeline short-circuit and conservative failure",
            criterion_short_circuit());
  criterion(6, "geometry fixtures, round-trips, placement frequencies",
            criterion_geometry());
  criterion(7, "retry policy attempt accounting", criterion_retries());
  criterion(8, "desk-scale co-evolution analog (sim, seed 7)",
            criterion_coevolution(work));
  criterion(9, "crash-resume determinism", criterion_resume(work));
  criterion(10, "sharded stage1 equivalence", criterion_sharding(work));

  fs::remove_all(work);
  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria FAILED\n", g_failures);
  return 1;
}
