#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aot/backends.hpp"
#include "aot/client.hpp"
#include "aot/config.hpp"
#include "aot/curriculum.hpp"
#include "aot/dataset.hpp"
#include "aot/parallel.hpp"
#include "aot/png_io.hpp"
#include "aot/prompts.hpp"
#include "aot/rewards.hpp"
#include "aot/ssim.hpp"
#include "aot/stage2.hpp"
#include "aot/storage.hpp"

namespace aot {

// Round bookkeeping, committed to round_state.json after every phase via a
// staged write. attacker_rounds_done may run one ahead of
// defender_rounds_done; anything not reflected here is recomputed on resume.
struct RoundState {
  int schema = 1;
  std::string run_id;
  std::uint64_t seed = 0;
  int attacker_rounds_done = 0;
  int defender_rounds_done = 0;
  std::set<std::string> consumed;
  std::string attacker_tag = "atk-0";
  std::string defender_tag = "def-0";
  sim::SimState sim_state;
  // one object per round; round 0 carries only the baseline probe accuracy
  std::vector<nlohmann::json> metrics;
};

inline nlohmann::json round_state_to_json(const RoundState& s) {
  return {{"schema", s.schema},
          {"run_id", s.run_id},
          {"seed", s.seed},
          {"attacker_rounds_done", s.attacker_rounds_done},
          {"defender_rounds_done", s.defender_rounds_done},
          {"consumed", s.consumed},
          {"attacker_tag", s.attacker_tag},
          {"defender_tag", s.defender_tag},
          {"sim_state",
           {{"strength", s.sim_state.strength},
            {"inside_rate", s.sim_state.inside_rate},
            {"threshold", s.sim_state.threshold},
            {"slope", s.sim_state.slope}}},
          {"metrics", s.metrics}};
}

inline RoundState round_state_from_json(const nlohmann::json& j) {
  RoundState s;
  s.schema = j.at("schema").get<int>();
  s.run_id = j.at("run_id").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.attacker_rounds_done = j.at("attacker_rounds_done").get<int>();
  s.defender_rounds_done = j.at("defender_rounds_done").get<int>();
  for (const auto& id : j.at("consumed")) s.consumed.insert(id.get<std::string>());
  s.attacker_tag = j.at("attacker_tag").get<std::string>();
  s.defender_tag = j.at("defender_tag").get<std::string>();
  const auto& sim = j.at("sim_state");
  s.sim_state.strength = sim.at("strength").get<double>();
  s.sim_state.inside_rate = sim.at("inside_rate").get<double>();
  s.sim_state.threshold = sim.at("threshold").get<double>();
  s.sim_state.slope = sim.at("slope").get<double>();
  for (const auto& m : j.at("metrics")) s.metrics.push_back(m);
  return s;
}

struct CoevContext {
  RunConfig cfg;
  PromptSet prompts;
  std::vector<SampleRecord> pool;
  std::filesystem::path pool_dir;
  std::filesystem::path out_dir;
  Backends backends;
  Trainers trainers;
  SleepFn sleep = real_sleep;
};

namespace coev_detail {

// Editable region for an attack: everything except the critical boxes.
inline Mask attack_mask(const ImageBuffer& img, std::span<const BBox> targets) {
  Mask mask(img.width, img.height, 255);
  for (const auto& box : targets) {
    const PixelRect r = rasterize_box(box);
    const int x2 = std::min(r.x + r.w, img.width);
    const int y2 = std::min(r.y + r.h, img.height);
    for (int y = std::max(r.y, 0); y < y2; ++y)
      for (int x = std::max(r.x, 0); x < x2; ++x) mask.at(x, y) = 0;
  }
  return mask;
}

inline nlohmann::json* metrics_row(RoundState& state, int round) {
  for (auto& m : state.metrics)
    if (m.at("round").get<int>() == round) return &m;
  state.metrics.push_back({{"round", round}});
  return &state.metrics.back();
}

inline void commit_state(const CoevContext& ctx, RoundState& state) {
  if (ctx.backends.sim) state.sim_state = ctx.backends.sim->state();
  atomic_write_json(ctx.out_dir / "round_state.json",
                    round_state_to_json(state));
}

inline std::string jsonl_dump(const std::vector<nlohmann::json>& rows) {
  std::string body;
  for (const auto& r : rows) body += r.dump() + "\n";
  return body;
}

// One adversarial candidate from the current attacker.
struct Candidate {
  const SampleRecord* sample = nullptr;
  ImageBuffer clean;
  ImageBuffer adv;
  double min_ssim = 1.0;
};

inline Candidate make_candidate(const CoevContext& ctx,
                                const SampleRecord& sample) {
  Candidate c;
  c.sample = &sample;
  c.clean = read_png(ctx.pool_dir / sample.image);
  const std::vector<BBox> targets = sample.all_target_boxes();
  EditQuery edit;
  edit.image = c.clean;
  edit.mask = attack_mask(c.clean, targets);
  edit.prompt = build_proposal_prompt(ctx.prompts.attack, sample.question);
  edit.preserve_boxes = targets;
  c.adv = with_retries(
      [&] { return ctx.backends.generator->edit_image(edit); },
      ctx.cfg.retries, ctx.sleep);
  c.min_ssim = min_patch_ssim(c.clean, c.adv, targets);
  return c;
}

inline bool defender_verdict_correct(const CoevContext& ctx,
                                     const Candidate& c, std::uint64_t trial) {
  ChatQuery query;
  query.prompt = build_vqa_prompt(ctx.prompts.vqa, c.sample->question,
                                  c.sample->options);
  query.images.push_back(c.adv);
  query.temperature = 0.0;
  query.max_tokens = ctx.cfg.max_tokens;
  query.trial = trial;
  const ChatReply reply = with_retries(
      [&] { return ctx.backends.defender->vqa_answer(query); },
      ctx.cfg.retries, ctx.sleep);
  const ExtractionResult r = extract_answer(reply.text);
  return r.letter && *r.letter == c.sample->answer;
}

inline nlohmann::json sim_provenance(const CoevContext& ctx,
                                     const ImageBuffer& adv) {
  if (!ctx.backends.sim) return nullptr;
  const auto info = ctx.backends.sim->lookup(adv);
  return {{"realized_strength", info.realized_strength},
          {"inside_critical", info.inside_critical},
          {"difficulty", sim::effective_difficulty(info.realized_strength,
                                                   info.inside_critical)}};
}

// Probe candidates are frozen at a fixed perturbation strength and
// regenerated deterministically at startup, which also repopulates the sim
// backend's difficulty registry after a resume.
inline std::vector<std::pair<const SampleRecord*, ImageBuffer>> ensure_probe_set(
    const CoevContext& ctx) {
  namespace fs = std::filesystem;
  fs::create_directories(ctx.out_dir / "probe");
  std::vector<std::pair<const SampleRecord*, ImageBuffer>> probe;
  const int n = std::min<int>(ctx.cfg.probe_count,
                              static_cast<int>(ctx.pool.size()));
  for (int i = 0; i < n; ++i) {
    const SampleRecord& sample = ctx.pool[static_cast<std::size_t>(i)];
    const fs::path png = ctx.out_dir / "probe" / (sample.id + ".png");
    ImageBuffer candidate;
    if (ctx.backends.sim) {
      const ImageBuffer clean = read_png(ctx.pool_dir / sample.image);
      const std::vector<BBox> targets = sample.all_target_boxes();
      const Mask mask = attack_mask(clean, targets);
      candidate = clean;
      RngStream rng = RngStream::derive(ctx.cfg.seed, "probe",
                                        static_cast<std::uint64_t>(i));
      const int amplitude = static_cast<int>(std::lround(
          sim::kNoiseAmplitudePerStrength * ctx.cfg.probe_strength));
      for (int y = 0; y < candidate.height; ++y)
        for (int x = 0; x < candidate.width; ++x)
          if (mask.at(x, y) == 255)
            for (int c = 0; c < candidate.channels; ++c) {
              const int delta =
                  static_cast<int>(rng.next_int(-amplitude, amplitude));
              auto& px = candidate.at(x, y, c);
              px = static_cast<std::uint8_t>(
                  std::clamp(int(px) + delta, 0, 255));
            }
      ctx.backends.sim->register_difficulty(candidate, ctx.cfg.probe_strength,
                                            false);
      if (!fs::exists(png)) write_png(png, candidate);
    } else if (fs::exists(png)) {
      candidate = read_png(png);
    } else {
      const ImageBuffer clean = read_png(ctx.pool_dir / sample.image);
      EditQuery edit;
      edit.image = clean;
      edit.mask = attack_mask(clean, sample.all_target_boxes());
      edit.prompt =
          build_proposal_prompt(ctx.prompts.attack, sample.question);
      edit.preserve_boxes = sample.all_target_boxes();
      candidate = with_retries(
          [&] { return ctx.backends.generator->edit_image(edit); },
          ctx.cfg.retries, ctx.sleep);
      write_png(png, candidate);
    }
    probe.emplace_back(&sample, std::move(candidate));
  }
  return probe;
}

inline double probe_eval(const CoevContext& ctx, int round,
                         std::span<const std::pair<const SampleRecord*,
                                                   ImageBuffer>> probe) {
  std::vector<nlohmann::json> rows;
  long correct = 0, total = 0;
  for (const auto& [sample, image] : probe) {
    EvalOptions opts;
    opts.n_trials = ctx.cfg.trials;
    opts.temperature = ctx.cfg.trial_temperature;
    opts.retries = ctx.cfg.retries;
    opts.max_tokens = ctx.cfg.max_tokens;
    opts.sleep = ctx.sleep;
    const TrialSummary summary = evaluate_candidate(
        *ctx.backends.defender, image,
        build_vqa_prompt(ctx.prompts.vqa, sample->question, sample->options),
        sample->answer, sample->id, opts);
    correct += summary.n_correct;
    total += summary.n_trials;
    rows.push_back({{"round", round},
                    {"id", sample->id},
                    {"n_correct", summary.n_correct},
                    {"n_trials", summary.n_trials}});
  }
  atomic_write(ctx.out_dir / "rounds" /
                   ("probe_" + std::to_string(round) + ".jsonl"),
               jsonl_dump(rows));
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

}  // namespace coev_detail

// Attacker phase of round i: draw this round's disjoint subset, generate
// candidates with the current attacker, score them with the SSIM-gated
// two-verdict reward and hand the emitted batch to the attacker trainer.
inline RoundState run_attacker_phase(const CoevContext& ctx, RoundState state,
                                     int round) {
  namespace fs = std::filesystem;
  fs::create_directories(ctx.out_dir / "rounds" /
                         ("r" + std::to_string(round)) / "atk");

  std::vector<std::string> pool_ids;
  for (const auto& s : ctx.pool) pool_ids.push_back(s.id);
  RngStream subset_rng = RngStream::derive(ctx.cfg.seed, "round-subset",
                                           static_cast<std::uint64_t>(round));
  const std::vector<std::string> subset = sample_round_subset(
      pool_ids, ctx.cfg.subset_size, state.consumed, subset_rng);

  std::vector<const SampleRecord*> samples;
  for (const auto& id : subset)
    for (const auto& s : ctx.pool)
      if (s.id == id) samples.push_back(&s);

  auto score = [&](const SampleRecord* sample) -> nlohmann::json {
    try {
      coev_detail::Candidate c = coev_detail::make_candidate(ctx, *sample);
      const VerdictPair verdicts{
          coev_detail::defender_verdict_correct(ctx, c, 0),
          coev_detail::defender_verdict_correct(ctx, c, 1)};
      const double reward =
          attacker_reward(c.min_ssim, ctx.cfg.tau_ssim, verdicts);
      const std::string rel = "rounds/r" + std::to_string(round) + "/atk/" +
                              sample->id + ".png";
      write_png(ctx.out_dir / rel, c.adv);
      nlohmann::json row{{"id", sample->id},
                         {"adv_image", rel},
                         {"min_ssim", c.min_ssim},
                         {"verdicts",
                          {verdicts.first_correct, verdicts.second_correct}},
                         {"reward", reward}};
      if (const auto prov = coev_detail::sim_provenance(ctx, c.adv);
          !prov.is_null())
        row["sim"] = prov;
      return row;
    } catch (const RetriesExhausted& e) {
      return {{"id", sample->id}, {"error", e.what()}};
    }
  };
  const auto rows = parallel_map(samples, ctx.cfg.workers, score);

  int success = 0, valid = 0, scored = 0;
  for (const auto& row : rows) {
    if (row.contains("error")) continue;
    ++scored;
    const double r = row.at("reward").get<double>();
    if (r == 1.0) ++success;
    if (r > 0.0) ++valid;
  }

  const fs::path batch_path =
      ctx.out_dir / "rounds" /
      ("attacker_batch_" + std::to_string(round) + ".jsonl");
  atomic_write(batch_path, coev_detail::jsonl_dump(rows));

  state.attacker_tag = ctx.trainers.attacker(batch_path, state.attacker_tag);

  auto* metrics = coev_detail::metrics_row(state, round);
  (*metrics)["attack_success_rate"] =
      scored == 0 ? 0.0 : static_cast<double>(success) / scored;
  (*metrics)["valid_edit_rate"] =
      scored == 0 ? 0.0 : static_cast<double>(valid) / scored;
  for (const auto& id : subset) state.consumed.insert(id);
  state.attacker_rounds_done = round;
  coev_detail::commit_state(ctx, state);
  return state;
}

// Defender phase of round i: the updated attacker sweeps the entire clean
// pool, candidates are evaluated over stochastic trials and curated into
// the difficulty window, and the curated batch goes to the defender
// trainer. The probe evaluation runs after training.
inline RoundState run_defender_phase(const CoevContext& ctx, RoundState state,
                                     int round) {
  namespace fs = std::filesystem;
  fs::create_directories(ctx.out_dir / "rounds" /
                         ("r" + std::to_string(round)) / "def");

  std::vector<const SampleRecord*> samples;
  for (const auto& s : ctx.pool) samples.push_back(&s);

  struct Row {
    nlohmann::json curation;
    nlohmann::json batch;  // null unless selected
  };
  auto evaluate = [&](const SampleRecord* sample) -> Row {
    Row out;
    try {
      coev_detail::Candidate c = coev_detail::make_candidate(ctx, *sample);
      const std::string rel = "rounds/r" + std::to_string(round) + "/def/" +
                              sample->id + ".png";
      write_png(ctx.out_dir / rel, c.adv);

      EvalOptions opts;
      opts.n_trials = ctx.cfg.trials;
      opts.temperature = ctx.cfg.trial_temperature;
      opts.retries = ctx.cfg.retries;
      opts.max_tokens = ctx.cfg.max_tokens;
      opts.sleep = ctx.sleep;
      const TrialSummary summary = evaluate_candidate(
          *ctx.backends.defender, c.adv,
          build_vqa_prompt(ctx.prompts.vqa, sample->question, sample->options),
          sample->answer, sample->id, opts);

      nlohmann::json prov = coev_detail::sim_provenance(ctx, c.adv);
      if (summary.evaluation_failed) {
        out.curation = {{"id", sample->id},
                        {"adv_image", rel},
                        {"verdict", "evaluation_failed"},
                        {"n_correct", summary.n_correct},
                        {"n_trials", summary.n_trials}};
        return out;
      }
      const CurationDecision decision =
          curate(summary, ctx.cfg.curation_min(), ctx.cfg.curation_max());
      out.curation = {{"id", sample->id},
                      {"adv_image", rel},
                      {"verdict", to_string(decision.verdict)},
                      {"n_correct", decision.n_correct},
                      {"n_trials", summary.n_trials},
                      {"letters", summary.letters}};
      if (decision.verdict == CurationVerdict::Selected) {
        nlohmann::json options = nlohmann::json::object();
        for (const auto& [letter, text] : sample->options)
          options[std::string(1, letter)] = text;
        out.batch = {{"id", sample->id},
                     {"adv_image", rel},
                     {"question", sample->question},
                     {"options", options},
                     {"answer", std::string(1, sample->answer)},
                     {"n_correct", summary.n_correct},
                     {"trials", summary.letters}};
        if (!prov.is_null()) out.batch["sim"] = prov;
      }
      return out;
    } catch (const RetriesExhausted& e) {
      out.curation = {{"id", sample->id},
                      {"verdict", "evaluation_failed"},
                      {"error", e.what()}};
      return out;
    }
  };
  const auto rows = parallel_map(samples, ctx.cfg.workers, evaluate);

  std::vector<nlohmann::json> curation_rows, batch_rows;
  int selected = 0, too_easy = 0, too_hard = 0, failed = 0;
  for (const auto& row : rows) {
    curation_rows.push_back(row.curation);
    const std::string verdict = row.curation.at("verdict").get<std::string>();
    if (verdict == "selected")
      ++selected;
    else if (verdict == "too_easy")
      ++too_easy;
    else if (verdict == "too_hard")
      ++too_hard;
    else
      ++failed;
    if (!row.batch.is_null()) batch_rows.push_back(row.batch);
  }

  const fs::path curation_path =
      ctx.out_dir / "rounds" / ("curation_" + std::to_string(round) + ".jsonl");
  atomic_write(curation_path, coev_detail::jsonl_dump(curation_rows));
  const fs::path batch_path =
      ctx.out_dir / "rounds" /
      ("defender_batch_" + std::to_string(round) + ".jsonl");
  atomic_write(batch_path, coev_detail::jsonl_dump(batch_rows));

  state.defender_tag = ctx.trainers.defender(batch_path, state.defender_tag);

  const auto probe = coev_detail::ensure_probe_set(ctx);
  const double accuracy = coev_detail::probe_eval(ctx, round, probe);

  auto* metrics = coev_detail::metrics_row(state, round);
  (*metrics)["curation"] = {{"selected", selected},
                            {"too_easy", too_easy},
                            {"too_hard", too_hard},
                            {"failed", failed}};
  (*metrics)["probe_accuracy"] = accuracy;
  if (ctx.backends.sim) {
    const sim::SimState post = ctx.backends.sim->state();
    atomic_write_json(ctx.out_dir / "rounds" /
                          ("sim_state_" + std::to_string(round) + ".json"),
                      {{"round", round},
                       {"strength", post.strength},
                       {"inside_rate", post.inside_rate},
                       {"threshold", post.threshold},
                       {"slope", post.slope}});
    (*metrics)["sim_threshold"] = post.threshold;
  }
  state.defender_rounds_done = round;
  coev_detail::commit_state(ctx, state);
  return state;
}

inline nlohmann::json build_report(const CoevContext& ctx,
                                   const RoundState& state) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& m : state.metrics) rounds.push_back(m);
  return {
      {"header",
       {{"run_id", state.run_id},
        {"seed", ctx.cfg.seed},
        {"backend", ctx.cfg.backend},
        {"rounds", ctx.cfg.rounds},
        {"subset_size", ctx.cfg.subset_size},
        {"pool_size", ctx.pool.size()},
        {"tau_ssim", ctx.cfg.tau_ssim},
        {"window", {ctx.cfg.curation_min(), ctx.cfg.curation_max()}},
        {"attacker_tag", state.attacker_tag},
        {"defender_tag", state.defender_tag},
        {"data_flow",
         "defender batches cover the full clean pool; the per-round subset "
         "feeds attacker-reward training only"}}},
      {"rounds", rounds}};
}

inline std::string report_csv(const nlohmann::json& report) {
  std::ostringstream csv;
  csv << "round,attack_success_rate,valid_edit_rate,selected,too_easy,"
         "too_hard,failed,probe_accuracy\n";
  for (const auto& m : report.at("rounds")) {
    csv << m.at("round").get<int>() << ',';
    if (m.contains("attack_success_rate"))
      csv << m["attack_success_rate"].get<double>();
    csv << ',';
    if (m.contains("valid_edit_rate")) csv << m["valid_edit_rate"].get<double>();
    csv << ',';
    if (m.contains("curation")) {
      const auto& c = m["curation"];
      csv << c["selected"].get<int>() << ',' << c["too_easy"].get<int>() << ','
          << c["too_hard"].get<int>() << ',' << c["failed"].get<int>();
    } else {
      csv << ",,,";
    }
    csv << ',';
    if (m.contains("probe_accuracy")) csv << m["probe_accuracy"].get<double>();
    csv << '\n';
  }
  return csv.str();
}

// Runs rounds 1..R, alternating attacker and defender phases, resumable
// from the last committed phase. Returns the final report (also written to
// report.json / report.csv).
inline nlohmann::json run_coevolution(const CoevContext& ctx) {
  namespace fs = std::filesystem;
  if (ctx.pool.empty()) throw Error("coevolution: empty clean pool");
  fs::create_directories(ctx.out_dir / "rounds");
  const fs::path state_path = ctx.out_dir / "round_state.json";
  const fs::path report_path = ctx.out_dir / "report.json";

  RoundState state;
  if (fs::exists(state_path)) {
    state = round_state_from_json(read_json(state_path));
    if (state.seed != ctx.cfg.seed)
      throw ConfigError("round_state.json was produced with a different seed");
    if (ctx.backends.sim) ctx.backends.sim->set_state(state.sim_state);
  } else {
    std::ostringstream run_id;
    run_id << "run-" << std::hex << fnv1a64(ctx.cfg.seed, kFnvOffset);
    state.run_id = run_id.str();
    state.seed = ctx.cfg.seed;
    if (ctx.backends.sim) state.sim_state = ctx.backends.sim->state();
  }

  // completed run: recompute nothing, touch no backend
  if (state.defender_rounds_done >= ctx.cfg.rounds && fs::exists(report_path))
    return read_json(report_path);

  int phases_this_run = 0;
  const auto halted = [&] {
    return ctx.cfg.halt_after_phases > 0 &&
           phases_this_run >= ctx.cfg.halt_after_phases;
  };

  // baseline probe accuracy before any training
  if (state.metrics.empty()) {
    const auto probe = coev_detail::ensure_probe_set(ctx);
    const double accuracy = coev_detail::probe_eval(ctx, 0, probe);
    auto* metrics = coev_detail::metrics_row(state, 0);
    (*metrics)["probe_accuracy"] = accuracy;
    coev_detail::commit_state(ctx, state);
    ++phases_this_run;
  }

  for (int round = 1; round <= ctx.cfg.rounds; ++round) {
    if (halted()) return round_state_to_json(state);
    if (state.attacker_rounds_done < round) {
      state = run_attacker_phase(ctx, state, round);
      ++phases_this_run;
    }
    if (halted()) return round_state_to_json(state);
    if (state.defender_rounds_done < round) {
      state = run_defender_phase(ctx, state, round);
      ++phases_this_run;
    }
  }

  const nlohmann::json report = build_report(ctx, state);
  atomic_write_json(report_path, report);
  atomic_write(ctx.out_dir / "report.csv", report_csv(report));
  return report;
}

}  // namespace aot
