#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aot/mock_client.hpp"
#include "aot/stage1.hpp"
#include "aot/storage.hpp"
#include "aot/synthetic.hpp"

using namespace aot;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {
const SleepFn no_sleep = [](std::chrono::milliseconds) {};

// Per-check-kind call counters for short-circuit assertions.
struct CheckCounters {
  std::atomic<int> describe{0}, composition{0}, duplication{0}, realism{0};
};

ChatReply text_reply(std::string t) { return ChatReply{std::move(t), {}, false}; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ChatReply yes_no_reply(double p_yes) {
  ChatReply r;
  r.text = p_yes > 0.5 ? "Yes" : "No";
  r.first_token_logprobs = {{"Yes", std::log(p_yes)},
                            {"No", std::log(1.0 - p_yes)}};
  r.has_logprobs = true;
  return r;
}

// A benign verifier: describes scenes, keeps everything.
MockVqaClient::Handler benign_handler(CheckCounters& counters,
                                      double p_composite = 0.1) {
  return [&counters, p_composite](const ChatQuery& q) -> ChatReply {
    if (q.prompt.find("stitched collage") != std::string::npos) {
      ++counters.composition;
      return yes_no_reply(p_composite);
    }
    if (q.prompt.find("detections") != std::string::npos) {
      ++counters.duplication;
      return text_reply(R"({"detections": []})");
    }
    if (q.prompt.find("Real Photo") != std::string::npos) {
      ++counters.realism;
      return text_reply("Real Photo");
    }
    ++counters.describe;
    return text_reply("a tiled floor, wooden crates, a painted doorway");
  };
}

struct Fixture {
  fs::path dir;
  fs::path out;
  std::vector<SampleRecord> dataset;

  explicit Fixture(const std::string& tag, int count = 3) {
    dir = fs::temp_directory_path() / ("aot_stage1_" + tag);
    fs::remove_all(dir);
    SyntheticSpec spec;
    spec.count = count;
    spec.image_size = 64;
    dataset = make_synthetic_pool(spec, 3, dir);
    out = dir / "out";
  }
  ~Fixture() { fs::remove_all(dir); }

  RunConfig config() const {
    RunConfig cfg;
    cfg.canvas = 96;
    cfg.retries = 3;
    cfg.workers = 2;
    cfg.seed = 13;
    return cfg;
  }
};
}  // namespace

TEST_CASE("preprocess standardizes geometry onto the canvas") {
  SampleRecord sample;
  sample.id = "p1";
  sample.question = "?";
  sample.answer = 'A';
  sample.options = {{'A', "x"}};
  sample.targets = {{"kettle", {{10, 10, 30, 30}}, 1}};

  SECTION("small image, forced center placement") {
    const ImageBuffer img(512, 512, 3, 100);
    RngStream rng(1);
    const PaddedSample p =
        preprocess(sample, img, 1536, {1.0, 0.0, 0.0}, rng);
    CHECK(p.placement.offset_x == 512);
    CHECK(p.placement.offset_y == 512);
    CHECK(p.placement.scale == 1.0);
    CHECK(p.targets[0].boxes[0] == BBox{522, 522, 542, 542});
    CHECK(p.outpaint_mask.count(0) == 512u * 512u);
    CHECK(p.canvas.width == 1536);
  }
  SECTION("oversized image is scaled then placed; boxes follow") {
    const ImageBuffer img(2000, 1000, 1, 50);
    RngStream rng(2);
    const PaddedSample p =
        preprocess(sample, img, 1536, {1.0, 0.0, 0.0}, rng);
    CHECK(p.placement.scale == Approx(0.768));
    const BBox& b = p.targets[0].boxes[0];
    CHECK(b.x1 == Approx(10 * 0.768 + p.placement.offset_x));
    CHECK(b.y2 == Approx(30 * 0.768 + p.placement.offset_y));
    // transformed boxes stay inside the placed-image rectangle
    CHECK(b.x1 >= p.placement.offset_x);
    CHECK(b.y2 <= p.placement.offset_y + 768);
  }
}

TEST_CASE("build_outpaint_prompt substitutes the bolded exclusion list") {
  const std::string tmpl = "describe around: **{exclusion_list}** please";
  const std::vector<std::string> names{"cell phone", "bottle"};
  CHECK(build_outpaint_prompt(tmpl, names) ==
        "describe around: **cell phone, bottle** please");
  CHECK_THROWS_AS(build_outpaint_prompt(tmpl, {}), ConfigError);
  CHECK_THROWS_AS(build_outpaint_prompt("no placeholder", names), ConfigError);
}

TEST_CASE("composition_check thresholds strictly at 0.5") {
  const ImageBuffer img(16, 16, 1, 0);
  const PromptSet prompts;
  auto with_p = [&](double p) {
    MockVqaClient mock([p](const ChatQuery&) { return yes_no_reply(p); });
    return composition_check(mock, img, prompts, 3, no_sleep);
  };
  CHECK_FALSE(with_p(0.6).keep);
  CHECK(with_p(0.4).keep);
  CHECK(with_p(0.5).keep);  // boundary: strictly exceeds
  MockVqaClient down([](const ChatQuery&) -> ChatReply {
    throw TransportError("down");
  });
  const CheckResult r = composition_check(down, img, prompts, 2, no_sleep);
  CHECK(r.failed);
  CHECK_FALSE(r.keep);
}

TEST_CASE("duplication_check compares detected count to the original") {
  const ImageBuffer img(16, 16, 1, 0);
  const PromptSet prompts;
  auto with_reply = [&](const std::string& text, int original) {
    MockVqaClient mock([text](const ChatQuery&) { return text_reply(text); });
    return duplication_check(mock, img, "kettle", original, prompts, 3, no_sleep);
  };
  CHECK_FALSE(with_reply(
      R"({"detections": [{"box": [1,1,4,4]}, {"box": [8,8,4,4]}]})", 1).keep);
  CHECK(with_reply(
      R"({"detections": [{"box": [1,1,4,4]}, {"box": [8,8,4,4]}]})", 2).keep);
  CHECK(with_reply(R"({"detections": []})", 1).keep);
  CHECK(with_reply(R"(Sure! here: {"detections": []})", 1).keep);

  SECTION("unparseable replies get exactly one re-ask, then fail") {
    int calls = 0;
    MockVqaClient garbled([&](const ChatQuery&) {
      ++calls;
      return text_reply("I see two kettles");
    });
    const CheckResult r =
        duplication_check(garbled, img, "kettle", 1, prompts, 3, no_sleep);
    CHECK(r.failed);
    CHECK(calls == 2);
  }
  SECTION("re-ask succeeds when the second reply parses") {
    int calls = 0;
    MockVqaClient flaky([&](const ChatQuery&) {
      ++calls;
      return text_reply(calls == 1 ? "hmm" : R"({"detections": []})");
    });
    const CheckResult r =
        duplication_check(flaky, img, "kettle", 1, prompts, 3, no_sleep);
    CHECK(r.keep);
    CHECK(calls == 2);
  }
}

TEST_CASE("realism_check reads the leading literal") {
  const ImageBuffer img(16, 16, 1, 0);
  const PromptSet prompts;
  auto with_reply = [&](const std::string& text) {
    MockVqaClient mock([text](const ChatQuery&) { return text_reply(text); });
    return realism_check(mock, img, prompts, 3, no_sleep);
  };
  CHECK_FALSE(with_reply("AI-Generated: The text on the sign is garbled.").keep);
  CHECK(with_reply("Real Photo").keep);
  const CheckResult r = with_reply("Probably real");
  CHECK(r.failed);
  CHECK_FALSE(r.keep);
}

TEST_CASE("run_stage1 short-circuits on the first failing check") {
  Fixture fx("short_circuit", 1);
  CheckCounters counters;
  // composition always flags the image
  MockVqaClient verifier(benign_handler(counters, 0.9));
  MockEditClient generator;
  RunConfig cfg = fx.config();
  const PromptSet prompts;

  const Stage1Stats stats =
      run_stage1(fx.dataset, fx.dir, {&verifier, &generator}, prompts, cfg,
                 fx.out, no_sleep);
  CHECK(stats.discarded == 1);
  CHECK(counters.composition.load() == 1);
  CHECK(counters.duplication.load() == 0);
  CHECK(counters.realism.load() == 0);

  const auto rows = read_jsonl(fx.out / "stage1_manifest.jsonl");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0]["status"] == "discarded");
  const auto& checks = rows[0]["trace"];
  REQUIRE(checks.size() == 1);
  CHECK(checks[0]["name"] == "composition");
  CHECK(checks[0]["verdict"] == "discard");
}

TEST_CASE("run_stage1 passes clean samples and records traces in order") {
  Fixture fx("pass", 3);
  CheckCounters counters;
  MockVqaClient verifier(benign_handler(counters));
  MockEditClient generator;
  RunConfig cfg = fx.config();
  const PromptSet prompts;

  const Stage1Stats stats =
      run_stage1(fx.dataset, fx.dir, {&verifier, &generator}, prompts, cfg,
                 fx.out, no_sleep);
  CHECK(stats.passed == 3);
  CHECK(counters.describe.load() == 3);
  CHECK(counters.composition.load() == 3);
  CHECK(counters.duplication.load() == 3);  // one distinct target name each
  CHECK(counters.realism.load() == 3);

  const auto rows = read_jsonl(fx.out / "stage1_manifest.jsonl");
  REQUIRE(rows.size() == 3);
  for (const auto& row : rows) {
    CHECK(row["status"] == "passed");
    const auto& checks = row["trace"];
    REQUIRE(checks.size() == 3);
    CHECK(checks[0]["name"] == "composition");
    CHECK(checks[1]["name"] == "duplication");
    CHECK(checks[2]["name"] == "realism");
  }

  // extended pool is loadable and every transformed box is inside the canvas
  const auto extended = load_dataset(fx.out / "extended.jsonl");
  REQUIRE(extended.size() == 3);
  for (const auto& s : extended) {
    const ImageBuffer img = read_png(fx.out / s.image);
    CHECK(img.width == cfg.canvas);
    for (const auto& b : s.all_target_boxes())
      CHECK(validate_bbox(b, cfg.canvas, cfg.canvas, 0.0) == BoxVerdict::Ok);
  }

  SECTION("rerunning over a complete manifest makes zero model calls") {
    const int vqa_before = verifier.calls();
    const int edit_before = generator.calls();
    const std::string manifest_before =
        slurp(fx.out / "stage1_manifest.jsonl");
    const Stage1Stats again =
        run_stage1(fx.dataset, fx.dir, {&verifier, &generator}, prompts, cfg,
                   fx.out, no_sleep);
    CHECK(again.skipped_resume == 3);
    CHECK(again.processed == 0);
    CHECK(verifier.calls() == vqa_before);
    CHECK(generator.calls() == edit_before);
    CHECK(slurp(fx.out / "stage1_manifest.jsonl") == manifest_before);
  }
}

TEST_CASE("check_failed samples never appear in stage1 output") {
  Fixture fx("conservative", 2);
  CheckCounters counters;
  MockVqaClient verifier([&counters](const ChatQuery& q) -> ChatReply {
    if (q.prompt.find("Real Photo") != std::string::npos) {
      ++counters.realism;
      return text_reply("Probably real");  // never parses -> check_failed
    }
    return benign_handler(counters)(q);
  });
  MockEditClient generator;
  const Stage1Stats stats =
      run_stage1(fx.dataset, fx.dir, {&verifier, &generator}, PromptSet{},
                 fx.config(), fx.out, no_sleep);
  CHECK(stats.passed == 0);
  CHECK(stats.discarded == 2);
  CHECK_FALSE(fs::exists(fx.out / "images" / (fx.dataset[0].id + ".png")));
  for (const auto& row : read_jsonl(fx.out / "stage1_manifest.jsonl")) {
    const auto& checks = row["trace"];
    CHECK(checks[checks.size() - 1]["verdict"] == "check_failed");
  }
  CHECK(read_jsonl(fx.out / "extended.jsonl").empty());
}

TEST_CASE("unreadable input is a sample error, the run continues") {
  Fixture fx("ioerr", 2);
  fx.dataset[0].image = "images/missing.png";
  CheckCounters counters;
  MockVqaClient verifier(benign_handler(counters));
  MockEditClient generator;
  const Stage1Stats stats =
      run_stage1(fx.dataset, fx.dir, {&verifier, &generator}, PromptSet{},
                 fx.config(), fx.out, no_sleep);
  CHECK(stats.errors == 1);
  CHECK(stats.passed == 1);
}

TEST_CASE("sharding processes a strict partition") {
  Fixture fx("shard", 8);
  RunConfig cfg = fx.config();
  cfg.shard_count = 3;
  int processed_total = 0;
  for (int shard = 0; shard < 3; ++shard) {
    CheckCounters counters;
    MockVqaClient verifier(benign_handler(counters));
    MockEditClient generator;
    cfg.shard_index = shard;
    const fs::path out = fx.dir / ("out_shard" + std::to_string(shard));
    const Stage1Stats stats =
        run_stage1(fx.dataset, fx.dir, {&verifier, &generator}, PromptSet{},
                   cfg, out, no_sleep);
    processed_total += stats.processed;
  }
  CHECK(processed_total == 8);
}
