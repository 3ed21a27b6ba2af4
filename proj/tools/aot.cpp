// Command-line surface for the adversarial data pipeline: scene extension
// (stage1), distractor implantation (stage2), the co-evolution loop, a
// defender evaluation harness and report recomputation.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "aot/backends.hpp"
#include "aot/coevolution.hpp"
#include "aot/config.hpp"
#include "aot/dataset.hpp"
#include "aot/report.hpp"
#include "aot/stage1.hpp"
#include "aot/stage2.hpp"
#include "aot/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string backend;
  long long seed = -1;
  int shard_index = -1;
  int shard_count = -1;
  int workers = -1;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON run configuration");
  cmd->add_option("--backend", flags.backend, "sim | mock | http");
  cmd->add_option("--seed", flags.seed, "global random seed");
  cmd->add_option("--shard-index", flags.shard_index, "shard to process");
  cmd->add_option("--shard-count", flags.shard_count, "total shards");
  cmd->add_option("--workers", flags.workers, "parallel workers");
  cmd->add_option("--out", flags.out_dir, "output directory")->required();
}

aot::RunConfig resolve_config(const CommonFlags& flags) {
  aot::RunConfig cfg;
  if (!flags.config_path.empty()) {
    cfg = aot::load_config(flags.config_path);
  } else {
    aot::apply_env_overrides(cfg);
  }
  if (!flags.backend.empty()) cfg.backend = flags.backend;
  if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
  if (flags.shard_index >= 0) cfg.shard_index = flags.shard_index;
  if (flags.shard_count >= 0) cfg.shard_count = flags.shard_count;
  if (flags.workers >= 0) cfg.workers = flags.workers;
  if (cfg.shard_index >= cfg.shard_count)
    throw aot::ConfigError("shard_index must be below shard_count");
  return cfg;
}

void warn_if_nondeterministic(const aot::RunConfig& cfg, aot::Backends& b) {
  if (cfg.backend != "http") return;
  try {
    if (!aot::temp0_canary_ok(*b.defender))
      std::fprintf(stderr,
                   "warning: backend is not deterministic at temperature 0; "
                   "two-verdict attack rewards may be unstable\n");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "warning: canary query failed: %s\n", e.what());
  }
}

int run_stage1_cmd(const CommonFlags& flags, const std::string& input) {
  aot::RunConfig cfg = resolve_config(flags);
  const auto dataset = aot::load_dataset(input);
  aot::Backends backends = aot::make_backends(cfg);
  warn_if_nondeterministic(cfg, backends);
  const aot::PromptSet prompts = aot::load_prompt_set(cfg);
  const auto stats = aot::run_stage1(
      dataset, fs::path(input).parent_path(),
      {backends.verifier.get(), backends.generator.get()}, prompts, cfg,
      flags.out_dir);
  std::printf("stage1: %d processed, %d passed, %d discarded, %d errors "
              "(%d resumed, %d other shards)\n",
              stats.processed, stats.passed, stats.discarded, stats.errors,
              stats.skipped_resume, stats.skipped_shard);
  return 0;
}

int run_stage2_cmd(const CommonFlags& flags, const std::string& input) {
  aot::RunConfig cfg = resolve_config(flags);
  const auto pool = aot::load_dataset(input);
  aot::Backends backends = aot::make_backends(cfg);
  warn_if_nondeterministic(cfg, backends);
  const aot::PromptSet prompts = aot::load_prompt_set(cfg);
  const auto stats = aot::run_stage2(
      pool, fs::path(input).parent_path(),
      {backends.verifier.get(), backends.defender.get(),
       backends.generator.get()},
      prompts, cfg, flags.out_dir);
  std::printf("stage2: pool %d -> kept %d; %d proposals, %d edits, "
              "%d effective triplets\n",
              stats.pool_in, stats.pool_kept, stats.proposals_requested,
              stats.edits, stats.effective);
  return 0;
}

int run_coevolve_cmd(const CommonFlags& flags, const std::string& pool_path,
                     int halt_after) {
  aot::RunConfig cfg = resolve_config(flags);
  if (halt_after >= 0) cfg.halt_after_phases = halt_after;

  aot::CoevContext ctx{.cfg = cfg,
                       .prompts = aot::load_prompt_set(cfg),
                       .pool = {},
                       .pool_dir = {},
                       .out_dir = flags.out_dir,
                       .backends = aot::make_backends(cfg),
                       .trainers = {},
                       .sleep = aot::real_sleep};
  ctx.trainers = aot::make_trainers(cfg, ctx.backends);

  if (!pool_path.empty()) {
    ctx.pool = aot::load_dataset(pool_path);
    ctx.pool_dir = fs::path(pool_path).parent_path();
  } else if (cfg.synthetic.count > 0) {
    ctx.pool_dir = fs::path(flags.out_dir) / "pool";
    ctx.pool = aot::make_synthetic_pool(cfg.synthetic, cfg.seed, ctx.pool_dir);
    aot::save_dataset(ctx.pool_dir / "dataset.jsonl", ctx.pool);
  } else {
    throw aot::ConfigError(
        "coevolve needs --pool or a synthetic.count in the config");
  }
  warn_if_nondeterministic(cfg, ctx.backends);

  const auto report = aot::run_coevolution(ctx);
  if (report.contains("rounds")) {
    for (const auto& m : report["rounds"]) {
      std::printf("round %d:", m.at("round").get<int>());
      if (m.contains("attack_success_rate"))
        std::printf(" attack_success=%.3f valid_edit=%.3f",
                    m["attack_success_rate"].get<double>(),
                    m["valid_edit_rate"].get<double>());
      if (m.contains("probe_accuracy"))
        std::printf(" probe_accuracy=%.3f", m["probe_accuracy"].get<double>());
      std::printf("\n");
    }
  } else {
    std::printf("halted after %d phase(s); rerun to continue\n",
                cfg.halt_after_phases);
  }
  return 0;
}

int run_eval_cmd(const CommonFlags& flags, const std::string& input) {
  aot::RunConfig cfg = resolve_config(flags);
  const auto dataset = aot::load_dataset(input);
  aot::Backends backends = aot::make_backends(cfg);
  const aot::PromptSet prompts = aot::load_prompt_set(cfg);
  const fs::path dataset_dir = fs::path(input).parent_path();

  fs::create_directories(flags.out_dir);
  aot::JsonlWriter rows(fs::path(flags.out_dir) / "eval.jsonl", false);
  int correct = 0;
  for (const auto& s : dataset) {
    aot::ChatQuery query;
    query.prompt = aot::build_vqa_prompt(prompts.vqa, s.question, s.options);
    query.images.push_back(aot::read_png(dataset_dir / s.image));
    query.temperature = 0.0;
    query.max_tokens = cfg.max_tokens;
    const auto reply = aot::with_retries(
        [&] { return backends.defender->vqa_answer(query); }, cfg.retries);
    const auto extracted = aot::extract_answer(reply.text);
    const bool ok = extracted.letter && *extracted.letter == s.answer;
    correct += ok;
    rows.append({{"id", s.id},
                 {"answer", std::string(1, s.answer)},
                 {"extracted", extracted.letter
                                   ? std::string(1, *extracted.letter)
                                   : std::string()},
                 {"tier", aot::to_string(extracted.tier)},
                 {"correct", ok}});
  }
  std::printf("accuracy: %.4f (%d/%zu)\n",
              dataset.empty() ? 0.0 : double(correct) / dataset.size(),
              correct, dataset.size());
  return 0;
}

int run_report_cmd(const CommonFlags& flags) {
  const auto report = aot::recompute_report(flags.out_dir);
  std::printf("%s\n", report.dump(2).c_str());
  return 0;
}

int run_synth_cmd(const CommonFlags& flags) {
  aot::RunConfig cfg = resolve_config(flags);
  if (cfg.synthetic.count <= 0) cfg.synthetic.count = 60;
  const auto pool =
      aot::make_synthetic_pool(cfg.synthetic, cfg.seed, flags.out_dir);
  aot::save_dataset(fs::path(flags.out_dir) / "dataset.jsonl", pool);
  std::printf("wrote %zu samples under %s\n", pool.size(),
              flags.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial VQA data pipeline"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string input, pool_path;
  int halt_after = -1;

  auto* stage1 = app.add_subcommand(
      "stage1", "extend scenes onto the canvas and run the three filters");
  add_common(stage1, flags);
  stage1->add_option("--input", input, "dataset JSONL")->required();

  auto* stage2 = app.add_subcommand(
      "stage2", "implant validated distractors and keep effective triplets");
  add_common(stage2, flags);
  stage2->add_option("--input", input, "extended pool JSONL")->required();

  auto* coevolve = app.add_subcommand(
      "coevolve", "run attacker/defender co-evolution rounds");
  add_common(coevolve, flags);
  coevolve->add_option("--pool", pool_path, "clean pool JSONL");
  coevolve->add_option("--halt-after-phases", halt_after,
                       "stop after N committed phases (testing aid)");

  auto* eval = app.add_subcommand("eval", "defender accuracy over a JSONL set");
  add_common(eval, flags);
  eval->add_option("--input", input, "dataset JSONL")->required();

  auto* report =
      app.add_subcommand("report", "recompute metrics from emitted artifacts");
  report->add_option("--out", flags.out_dir, "run output directory")->required();

  auto* synth =
      app.add_subcommand("synth", "generate a deterministic synthetic pool");
  add_common(synth, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (stage1->parsed()) return run_stage1_cmd(flags, input);
    if (stage2->parsed()) return run_stage2_cmd(flags, input);
    if (coevolve->parsed()) return run_coevolve_cmd(flags, pool_path, halt_after);
    if (eval->parsed()) return run_eval_cmd(flags, input);
    if (report->parsed()) return run_report_cmd(flags);
    if (synth->parsed()) return run_synth_cmd(flags);
  } catch (const aot::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
