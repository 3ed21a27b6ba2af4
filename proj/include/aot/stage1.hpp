#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "aot/client.hpp"
#include "aot/config.hpp"
#include "aot/dataset.hpp"
#include "aot/image.hpp"
#include "aot/parallel.hpp"
#include "aot/png_io.hpp"
#include "aot/prompts.hpp"
#include "aot/ssim.hpp"
#include "aot/storage.hpp"

namespace aot {

// A sample standardized onto the working canvas: resized, placed, with the
// outpainting mask and the annotation boxes moved along.
struct PaddedSample {
  std::string id;
  ImageBuffer canvas;
  Mask outpaint_mask;
  Placement placement;
  std::vector<TargetInstance> targets;  // boxes in canvas coordinates
};

struct CheckOutcome {
  std::string name;     // composition | duplication | realism
  std::string verdict;  // keep | discard | check_failed
  double confidence = 0.0;
  std::string detail;
};

// Ordered record of the filtering pipeline for one sample. Nothing follows
// a discard, and a check_failed sample never reaches the output.
struct FilterTrace {
  std::vector<CheckOutcome> checks;
  std::string status;  // passed | discarded | error
};

inline PaddedSample preprocess(const SampleRecord& sample,
                               const ImageBuffer& source, int canvas_size,
                               const std::array<double, 3>& weights,
                               RngStream& rng) {
  auto [resized, scale] = resize_to_fit(source, canvas_size, canvas_size);
  Placement placement = sample_placement(canvas_size, canvas_size,
                                         resized.width, resized.height,
                                         weights, rng, scale);
  auto [canvas, mask] =
      compose_on_canvas(resized, canvas_size, canvas_size, placement);
  PaddedSample out;
  out.id = sample.id;
  out.canvas = std::move(canvas);
  out.outpaint_mask = std::move(mask);
  out.placement = placement;
  for (const auto& t : sample.targets) {
    TargetInstance moved{t.name, {}, t.effective_count()};
    for (const auto& b : t.boxes)
      moved.boxes.push_back(
          transform_bbox(b, scale, placement.offset_x, placement.offset_y));
    out.targets.push_back(std::move(moved));
  }
  return out;
}

struct CheckResult {
  bool keep = false;
  bool failed = false;  // the verifier itself errored; discard conservatively
  double confidence = 0.0;
  std::string detail;
};

// Collage screening: ask for a Yes/No with logprobs, discard when the yes
// probability strictly exceeds 0.5.
inline CheckResult composition_check(VqaClient& verifier, const ImageBuffer& image,
                                     const PromptSet& prompts, int retries,
                                     const SleepFn& sleep = real_sleep) {
  ChatQuery query;
  query.prompt = prompts.composition;
  query.images.push_back(image);
  query.want_logprobs = true;
  CheckResult result;
  try {
    const ChatReply reply = with_retries(
        [&] { return verifier.vqa_answer(query); }, retries, sleep);
    result.confidence = yes_probability(reply);
    result.keep = !(result.confidence > 0.5);
    result.detail = reply.text.substr(0, 120);
  } catch (const RetriesExhausted& e) {
    result.failed = true;
    result.detail = e.what();
  }
  return result;
}

// Detection responses use [x, y, width, height]; converted to corner form
// here at the client boundary.
inline std::optional<std::vector<BBox>> parse_detections(const std::string& text) {
  // the reply may wrap the JSON in prose; take the outermost braces
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open)
    return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(text.substr(open, close - open + 1));
    std::vector<BBox> boxes;
    for (const auto& det : j.at("detections")) {
      const auto& b = det.at("box");
      if (!b.is_array() || b.size() != 4) return std::nullopt;
      boxes.push_back(bbox_from_xywh(b[0].get<double>(), b[1].get<double>(),
                                     b[2].get<double>(), b[3].get<double>()));
    }
    return boxes;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

// Counts detected instances of one target class; more than the original
// count means outpainting duplicated question-relevant objects. An
// unparseable reply earns one re-ask before the conservative failure.
inline CheckResult duplication_check(VqaClient& verifier, const ImageBuffer& image,
                                     const std::string& target_name,
                                     int original_count, const PromptSet& prompts,
                                     int retries, const SleepFn& sleep = real_sleep) {
  if (original_count < 1)
    throw ContractViolation("duplication_check: original_count must be >= 1");
  ChatQuery query;
  query.prompt = build_duplication_prompt(prompts.duplication, target_name);
  query.images.push_back(image);
  CheckResult result;
  for (int ask = 0; ask < 2; ++ask) {
    query.trial = static_cast<std::uint64_t>(ask);
    std::string text;
    try {
      text = with_retries([&] { return verifier.vqa_answer(query); }, retries,
                          sleep)
                 .text;
    } catch (const RetriesExhausted& e) {
      result.failed = true;
      result.detail = e.what();
      return result;
    }
    if (const auto boxes = parse_detections(text)) {
      result.confidence = static_cast<double>(boxes->size());
      result.keep = static_cast<int>(boxes->size()) <= original_count;
      result.detail = target_name + ": detected " +
                      std::to_string(boxes->size()) + " of " +
                      std::to_string(original_count);
      return result;
    }
    result.detail = "unparseable detections reply";
  }
  result.failed = true;
  return result;
}

// The realism verdict is textual: a reply beginning with "AI-Generated"
// discards. Anything that starts with neither literal gets one re-ask.
inline CheckResult realism_check(VqaClient& verifier, const ImageBuffer& image,
                                 const PromptSet& prompts, int retries,
                                 const SleepFn& sleep = real_sleep) {
  ChatQuery query;
  query.prompt = prompts.realism;
  query.images.push_back(image);
  CheckResult result;
  for (int ask = 0; ask < 2; ++ask) {
    query.trial = static_cast<std::uint64_t>(ask);
    std::string text;
    try {
      text = with_retries([&] { return verifier.vqa_answer(query); }, retries,
                          sleep)
                 .text;
    } catch (const RetriesExhausted& e) {
      result.failed = true;
      result.detail = e.what();
      return result;
    }
    if (text.rfind("Real Photo", 0) == 0) {
      result.keep = true;
      result.detail = text.substr(0, 120);
      return result;
    }
    if (text.rfind("AI-Generated", 0) == 0) {
      result.keep = false;
      result.confidence = 1.0;
      result.detail = text.substr(0, 120);
      return result;
    }
    result.detail = "malformed verdict: " + text.substr(0, 60);
  }
  result.failed = true;
  return result;
}

struct Stage1Clients {
  VqaClient* verifier = nullptr;
  EditClient* generator = nullptr;
};

struct Stage1Stats {
  int total = 0;
  int processed = 0;
  int skipped_resume = 0;
  int skipped_shard = 0;
  int passed = 0;
  int discarded = 0;
  int errors = 0;
};

// Cumulative counters recomputed from the manifest, so the stats file always
// agrees with the rows regardless of resume history.
inline nlohmann::json recompute_stage1_stats(
    const std::filesystem::path& manifest_path, std::uint64_t seed) {
  int passed = 0, discarded = 0, errors = 0;
  std::map<std::string, int> discarded_at;
  for (const auto& row : read_jsonl(manifest_path)) {
    const std::string status = row.at("status").get<std::string>();
    if (status == "passed") {
      ++passed;
    } else if (status == "discarded") {
      ++discarded;
      const auto& checks = row.at("trace");
      if (!checks.empty())
        ++discarded_at[checks[checks.size() - 1]["name"].get<std::string>()];
    } else {
      ++errors;
    }
  }
  return {{"schema", 1},
          {"seed", seed},
          {"records", passed + discarded + errors},
          {"passed", passed},
          {"discarded", discarded},
          {"discarded_at", discarded_at},
          {"errors", errors}};
}

namespace stage1_detail {

inline nlohmann::json trace_to_json(const FilterTrace& trace) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : trace.checks)
    checks.push_back({{"name", c.name},
                      {"verdict", c.verdict},
                      {"confidence", round2(c.confidence)},
                      {"detail", c.detail}});
  return checks;
}

struct SampleOutcome {
  nlohmann::json manifest_row;
  std::optional<SampleRecord> extended;  // set only for passed samples
  std::string status;
};

}  // namespace stage1_detail

// Scene-extension pipeline over one dataset shard. Checks run in order
// (composition, duplication per target class, realism) and the sample is
// discarded at the first failure; a check that itself fails discards
// conservatively. Completed ids in the manifest are skipped on rerun.
inline Stage1Stats run_stage1(const std::vector<SampleRecord>& dataset,
                              const std::filesystem::path& dataset_dir,
                              Stage1Clients clients, const PromptSet& prompts,
                              const RunConfig& cfg,
                              const std::filesystem::path& out_dir,
                              const SleepFn& sleep = real_sleep) {
  namespace fs = std::filesystem;
  if (!clients.verifier || !clients.generator)
    throw ContractViolation("run_stage1: missing clients");
  fs::create_directories(out_dir / "images");
  const fs::path manifest_path = out_dir / "stage1_manifest.jsonl";
  const fs::path extended_path = out_dir / "extended.jsonl";

  Stage1Stats stats;
  stats.total = static_cast<int>(dataset.size());
  const auto done = jsonl_ids(manifest_path);

  // a crash may leave extended rows whose manifest commit never landed;
  // drop them so their samples are reprocessed exactly once
  if (fs::exists(extended_path)) {
    const auto rows = read_jsonl(extended_path);
    std::string kept;
    std::size_t n_kept = 0;
    for (const auto& row : rows) {
      if (done.count(row.at("id").get<std::string>())) {
        kept += row.dump() + "\n";
        ++n_kept;
      }
    }
    if (n_kept != rows.size()) atomic_write(extended_path, kept);
  }

  std::vector<const SampleRecord*> todo;
  for (const auto& s : dataset) {
    if (!shard_filter(s.id, cfg.shard_index, cfg.shard_count)) {
      ++stats.skipped_shard;
      continue;
    }
    if (done.count(s.id)) {
      ++stats.skipped_resume;
      continue;
    }
    todo.push_back(&s);
  }

  auto process = [&](const SampleRecord* sample_ptr) {
    const SampleRecord& sample = *sample_ptr;
    stage1_detail::SampleOutcome outcome;
    FilterTrace trace;
    nlohmann::json row{{"id", sample.id}};

    // unreadable inputs are sample-level errors; the run continues
    ImageBuffer source;
    try {
      source = read_png(dataset_dir / sample.image);
    } catch (const StorageError& e) {
      trace.status = "error";
      row["error"] = e.what();
      row["status"] = trace.status;
      row["trace"] = stage1_detail::trace_to_json(trace);
      outcome.manifest_row = std::move(row);
      outcome.status = trace.status;
      return outcome;
    }

    try {
      RngStream rng = RngStream::derive(cfg.seed, "stage1/" + sample.id);
      PaddedSample padded = preprocess(sample, source, cfg.canvas,
                                       cfg.placement_weights, rng);

      row["placement"] = {{"kind", to_string(padded.placement.kind)},
                          {"offset", {padded.placement.offset_x,
                                      padded.placement.offset_y}},
                          {"scale", round2(padded.placement.scale)}};
      nlohmann::json boxes = nlohmann::json::array();
      for (const auto& t : padded.targets)
        for (const auto& b : t.boxes) boxes.push_back(bbox_to_json(b));
      row["boxes"] = boxes;

      // scene description from the verifier, then the generator extends
      std::vector<std::string> names;
      for (const auto& t : sample.targets) names.push_back(t.name);
      ChatQuery describe;
      describe.prompt = build_outpaint_prompt(prompts.outpaint, names);
      describe.images.push_back(padded.canvas);
      const std::string description =
          with_retries([&] { return clients.verifier->vqa_answer(describe); },
                       cfg.retries, sleep)
              .text;

      EditQuery edit;
      edit.image = padded.canvas;
      edit.mask = padded.outpaint_mask;
      edit.prompt = description;
      for (const auto& t : padded.targets)
        edit.preserve_boxes.insert(edit.preserve_boxes.end(), t.boxes.begin(),
                                   t.boxes.end());
      const ImageBuffer extended =
          with_retries([&] { return clients.generator->edit_image(edit); },
                       cfg.retries, sleep);

      bool keep = true;
      const auto record_check = [&](const char* name, const CheckResult& r) {
        trace.checks.push_back({name,
                                r.failed ? "check_failed"
                                         : (r.keep ? "keep" : "discard"),
                                r.confidence, r.detail});
        keep = r.keep && !r.failed;
        return keep;
      };

      if (record_check("composition",
                       composition_check(*clients.verifier, extended, prompts,
                                         cfg.retries, sleep))) {
        // one duplication query per distinct target class
        std::vector<std::string> seen_names;
        for (const auto& t : padded.targets) {
          if (std::find(seen_names.begin(), seen_names.end(), t.name) !=
              seen_names.end())
            continue;
          seen_names.push_back(t.name);
          if (!record_check("duplication",
                            duplication_check(*clients.verifier, extended,
                                              t.name, t.effective_count(),
                                              prompts, cfg.retries, sleep)))
            break;
        }
      }
      if (keep)
        record_check("realism", realism_check(*clients.verifier, extended,
                                              prompts, cfg.retries, sleep));

      if (keep) {
        const std::string rel = "images/" + sample.id + ".png";
        write_png(out_dir / rel, extended);
        row["image"] = rel;
        trace.status = "passed";

        SampleRecord out = sample;
        out.image = rel;
        out.targets = padded.targets;
        outcome.extended = std::move(out);
      } else {
        trace.status = "discarded";
      }
    } catch (const RetriesExhausted& e) {
      trace.status = "error";
      row["error"] = e.what();
    }
    row["status"] = trace.status;
    row["trace"] = stage1_detail::trace_to_json(trace);
    outcome.manifest_row = std::move(row);
    outcome.status = trace.status;
    return outcome;
  };

  // chunked so a crash loses at most one chunk; rows land in input order
  // regardless of worker interleaving
  JsonlWriter manifest(manifest_path);
  JsonlWriter extended_out(extended_path);
  const std::size_t chunk = std::max<std::size_t>(16, cfg.workers * 4u);
  for (std::size_t begin = 0; begin < todo.size(); begin += chunk) {
    const std::size_t end = std::min(begin + chunk, todo.size());
    const std::vector<const SampleRecord*> slice(todo.begin() + begin,
                                                 todo.begin() + end);
    const auto outcomes = parallel_map(slice, cfg.workers, process);
    for (const auto& o : outcomes) {
      // extended row first: on crash the reconciliation pass above drops it
      if (o.extended) extended_out.append(sample_to_json(*o.extended));
      manifest.append(o.manifest_row);
      ++stats.processed;
      if (o.status == "passed")
        ++stats.passed;
      else if (o.status == "discarded")
        ++stats.discarded;
      else
        ++stats.errors;
    }
  }
  atomic_write_json(out_dir / "stage1_stats.json",
                    recompute_stage1_stats(manifest_path, cfg.seed));
  return stats;
}

}  // namespace aot
