#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "aot/client.hpp"
#include "aot/config.hpp"
#include "aot/dataset.hpp"
#include "aot/parallel.hpp"
#include "aot/png_io.hpp"
#include "aot/prompts.hpp"
#include "aot/rewards.hpp"
#include "aot/storage.hpp"

namespace aot {

// A parsed distractor proposal: where to inpaint and what to put there.
struct Proposal {
  BBox box;
  std::string description;
  std::string source_id;
  std::string fingerprint;
};

// Expected response line: "[x1, y1, x2, y2] | A short English description."
// Takes the first bracketed 4-number group and the text after the first
// pipe; anything else is a parse error and the proposal is skipped.
inline std::optional<Proposal> parse_proposal(const std::string& line) {
  static const std::regex box_re(
      R"(\[\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\])");
  std::smatch m;
  if (!std::regex_search(line, m, box_re)) return std::nullopt;
  const auto pipe = line.find('|');
  if (pipe == std::string::npos) return std::nullopt;
  std::string desc = line.substr(pipe + 1);
  const auto first = desc.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return std::nullopt;
  const auto last = desc.find_last_not_of(" \t\r\n");
  Proposal p;
  p.box = {std::stod(m[1]), std::stod(m[2]), std::stod(m[3]), std::stod(m[4])};
  p.description = desc.substr(first, last - first + 1);
  return p;
}

// Stable dedup digest over (image id, integer-rounded box, normalized
// description).
inline std::string proposal_fingerprint(const std::string& image_id,
                                        const BBox& box,
                                        const std::string& description) {
  std::ostringstream canon;
  canon << image_id << '|' << std::llround(box.x1) << ',' << std::llround(box.y1)
        << ',' << std::llround(box.x2) << ',' << std::llround(box.y2) << '|';
  bool pending_space = false;
  for (char c : description) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !canon.str().empty();
      continue;
    }
    if (pending_space) {
      canon << ' ';
      pending_space = false;
    }
    canon << static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  std::ostringstream hex;
  hex << std::hex << fnv1a64(canon.str());
  return hex.str();
}

// The fixed stopword list shipped with the pipeline; config may override it
// with a file of one word per line.
inline const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words{
      "a",    "an",   "and",  "are",  "as",    "at",    "be",    "by",
      "for",  "from", "had",  "has",  "have",  "he",    "her",   "his",
      "i",    "in",   "into", "is",   "it",    "its",   "near",  "next",
      "of",   "on",   "or",   "our",  "she",   "small", "some",  "that",
      "the",  "their", "them", "then", "there", "these", "they",  "this",
      "to",   "under", "up",   "was",  "we",    "were",  "with",  "you",
      "your", "over"};
  return words;
}

inline std::set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read stopword list: " + path.string());
  std::set<std::string> words;
  std::string word;
  while (in >> word) {
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    words.insert(word);
  }
  return words;
}

namespace stage2_detail {

inline std::vector<std::string> letter_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

}  // namespace stage2_detail

// Whole-token, case-insensitive keyword screen: after stopword removal, no
// token of any target name may appear in the description. Returns the
// matched keyword on rejection.
inline std::optional<std::string> description_check(
    const std::string& description, std::span<const std::string> target_names,
    const std::set<std::string>& stopwords = default_stopwords()) {
  if (target_names.empty())
    throw ContractViolation("description_check: no target names");
  std::unordered_set<std::string> desc_tokens;
  for (auto& t : stage2_detail::letter_tokens(description))
    if (!stopwords.count(t)) desc_tokens.insert(t);
  for (const auto& name : target_names) {
    for (const auto& token : stage2_detail::letter_tokens(name)) {
      if (stopwords.count(token)) continue;
      if (desc_tokens.count(token)) return token;
    }
  }
  return std::nullopt;
}

struct Stage2Clients {
  VqaClient* proposer = nullptr;  // the verifier MLLM suggesting distractors
  VqaClient* defender = nullptr;  // the model under attack
  EditClient* generator = nullptr;
};

struct Stage2Stats {
  int pool_in = 0;
  int pool_kept = 0;
  int pool_rejected = 0;
  int pool_failed = 0;
  int proposals_requested = 0;
  int parse_errors = 0;
  int duplicates = 0;
  int bbox_invalid = 0;
  int overlap_rejected = 0;
  int description_rejected = 0;
  int edits = 0;
  int effective = 0;
  int ineffective = 0;
  int sample_errors = 0;

  nlohmann::json to_json() const {
    return {{"pool_in", pool_in},
            {"pool_kept", pool_kept},
            {"pool_rejected", pool_rejected},
            {"pool_failed", pool_failed},
            {"proposals_requested", proposals_requested},
            {"parse_errors", parse_errors},
            {"duplicates", duplicates},
            {"bbox_invalid", bbox_invalid},
            {"overlap_rejected", overlap_rejected},
            {"description_rejected", description_rejected},
            {"edits", edits},
            {"effective", effective},
            {"ineffective", ineffective},
            {"sample_errors", sample_errors}};
  }
};

// Cumulative rejection/effectiveness counters recomputed from the manifest
// and triplet files.
inline nlohmann::json recompute_stage2_stats(
    const std::filesystem::path& manifest_path,
    const std::filesystem::path& triplets_path, std::uint64_t seed) {
  namespace fs = std::filesystem;
  int processed = 0, pool_rejected = 0, errors = 0;
  std::map<std::string, int> rejections;
  for (const auto& row : read_jsonl(manifest_path)) {
    const std::string status = row.at("status").get<std::string>();
    if (status == "processed") {
      ++processed;
      for (const auto& check : row.value("checks", nlohmann::json::array()))
        if (check.contains("rejected"))
          ++rejections[check.at("rejected").get<std::string>()];
    } else if (status == "pool_rejected") {
      ++pool_rejected;
    } else {
      ++errors;
    }
  }
  const int effective =
      fs::exists(triplets_path)
          ? static_cast<int>(read_jsonl(triplets_path).size())
          : 0;
  return {{"schema", 1},
          {"seed", seed},
          {"records", processed + pool_rejected + errors},
          {"pool_kept", processed},
          {"pool_rejected", pool_rejected},
          {"errors", errors},
          {"rejections", rejections},
          {"effective_triplets", effective}};
}

// Clean-pool membership: the defender must answer the extended image
// correctly at temperature 0 before it is worth attacking.
inline bool clean_pool_keep(VqaClient& defender, const ImageBuffer& image,
                            const SampleRecord& sample, const PromptSet& prompts,
                            int retries, int max_tokens,
                            const SleepFn& sleep = real_sleep) {
  ChatQuery query;
  query.prompt = build_vqa_prompt(prompts.vqa, sample.question, sample.options);
  query.images.push_back(image);
  query.temperature = 0.0;
  query.max_tokens = max_tokens;
  const ChatReply reply = with_retries(
      [&] { return defender.vqa_answer(query); }, retries, sleep);
  const ExtractionResult r = extract_answer(reply.text);
  return r.letter && *r.letter == sample.answer;
}

struct CleanPool {
  std::vector<SampleRecord> kept;
  std::vector<std::string> rejected_ids;
  std::vector<std::string> failed_ids;  // evaluation failed after retries
};

// Filters extended samples down to those the defender answers correctly.
inline CleanPool form_clean_pool(VqaClient& defender,
                                 const std::vector<SampleRecord>& extended,
                                 const std::filesystem::path& dir,
                                 const PromptSet& prompts, const RunConfig& cfg,
                                 const SleepFn& sleep = real_sleep) {
  CleanPool pool;
  std::vector<const SampleRecord*> items;
  for (const auto& s : extended) items.push_back(&s);
  struct Row {
    const SampleRecord* sample;
    int outcome;  // 1 keep, 0 reject, -1 failed
  };
  const auto rows = parallel_map(items, cfg.workers, [&](const SampleRecord* s) {
    try {
      const ImageBuffer image = read_png(dir / s->image);
      return Row{s, clean_pool_keep(defender, image, *s, prompts, cfg.retries,
                                    cfg.max_tokens, sleep)
                        ? 1
                        : 0};
    } catch (const RetriesExhausted&) {
      return Row{s, -1};
    }
  });
  for (const auto& row : rows) {
    if (row.outcome == 1)
      pool.kept.push_back(*row.sample);
    else if (row.outcome == 0)
      pool.rejected_ids.push_back(row.sample->id);
    else
      pool.failed_ids.push_back(row.sample->id);
  }
  return pool;
}

// Adversarial implantation over the extended pool. Per sample: propose up to
// k distractors, dedup by fingerprint, run the integrity checks (validity,
// zero-tolerance overlap, description keywords), inpaint the survivors and
// keep only candidates that actually flip the defender at temperature 0.
inline Stage2Stats run_stage2(const std::vector<SampleRecord>& pool,
                              const std::filesystem::path& pool_dir,
                              Stage2Clients clients, const PromptSet& prompts,
                              const RunConfig& cfg,
                              const std::filesystem::path& out_dir,
                              const SleepFn& sleep = real_sleep) {
  namespace fs = std::filesystem;
  if (!clients.proposer || !clients.defender || !clients.generator)
    throw ContractViolation("run_stage2: missing clients");
  fs::create_directories(out_dir / "images");
  const fs::path manifest_path = out_dir / "stage2_manifest.jsonl";
  const fs::path triplets_path = out_dir / "aot_sft.jsonl";

  const std::set<std::string> stopwords =
      cfg.stopwords_path.empty() ? default_stopwords()
                                 : load_stopwords(cfg.stopwords_path);

  Stage2Stats stats;
  stats.pool_in = static_cast<int>(pool.size());
  const auto done = jsonl_ids(manifest_path);

  // drop triplets whose sample never committed to the manifest (crash
  // between the two appends), then reload fingerprints from what survives
  if (fs::exists(triplets_path)) {
    const auto rows = read_jsonl(triplets_path);
    std::string kept;
    std::size_t n_kept = 0;
    for (const auto& row : rows) {
      if (done.count(row.at("id").get<std::string>())) {
        kept += row.dump() + "\n";
        ++n_kept;
      }
    }
    if (n_kept != rows.size()) atomic_write(triplets_path, kept);
  }

  std::vector<const SampleRecord*> todo;
  for (const auto& s : pool) {
    if (!shard_filter(s.id, cfg.shard_index, cfg.shard_count)) continue;
    if (!done.count(s.id)) todo.push_back(&s);
  }

  // fingerprints seen across the whole run, insert-if-absent
  std::mutex fp_mu;
  std::unordered_set<std::string> fingerprints;
  for (const auto& row : fs::exists(triplets_path)
                             ? read_jsonl(triplets_path)
                             : std::vector<nlohmann::json>{}) {
    if (row.contains("proposal") && row["proposal"].contains("fingerprint"))
      fingerprints.insert(row["proposal"]["fingerprint"].get<std::string>());
  }

  struct Outcome {
    nlohmann::json manifest_row;
    std::vector<nlohmann::json> triplet_rows;
    Stage2Stats delta;
  };

  auto process = [&](const SampleRecord* sample_ptr) {
    const SampleRecord& sample = *sample_ptr;
    Outcome out;
    out.delta = Stage2Stats{};
    nlohmann::json row{{"id", sample.id}};
    try {
      const ImageBuffer clean = read_png(pool_dir / sample.image);
      const std::vector<BBox> target_boxes = sample.all_target_boxes();
      std::vector<std::string> target_names;
      for (const auto& t : sample.targets) target_names.push_back(t.name);

      if (!clean_pool_keep(*clients.defender, clean, sample, prompts,
                           cfg.retries, cfg.max_tokens, sleep)) {
        ++out.delta.pool_rejected;
        row["status"] = "pool_rejected";
        out.manifest_row = std::move(row);
        return out;
      }
      ++out.delta.pool_kept;

      int emitted = 0;
      std::string clean_rel;  // clean image copied once beside its triplets
      nlohmann::json checks_log = nlohmann::json::array();
      for (int k = 0; k < cfg.proposals_per_sample; ++k) {
        ++out.delta.proposals_requested;
        ChatQuery ask;
        ask.prompt = build_proposal_prompt(prompts.proposal, sample.question);
        ask.images.push_back(clean);
        ask.temperature = cfg.proposal_temperature;
        ask.trial = static_cast<std::uint64_t>(k);
        std::string line;
        try {
          line = with_retries(
                     [&] { return clients.proposer->vqa_answer(ask); },
                     cfg.retries, sleep)
                     .text;
        } catch (const RetriesExhausted&) {
          ++out.delta.parse_errors;
          checks_log.push_back({{"proposal", k}, {"rejected", "proposer_error"}});
          continue;
        }

        auto parsed = parse_proposal(line);
        if (!parsed) {
          ++out.delta.parse_errors;
          checks_log.push_back({{"proposal", k}, {"rejected", "parse_error"}});
          continue;
        }
        parsed->source_id = sample.id;
        parsed->fingerprint =
            proposal_fingerprint(sample.id, parsed->box, parsed->description);

        {
          std::lock_guard lock(fp_mu);
          if (!fingerprints.insert(parsed->fingerprint).second) {
            ++out.delta.duplicates;
            checks_log.push_back({{"proposal", k}, {"rejected", "duplicate"}});
            continue;
          }
        }
        const BoxVerdict verdict = validate_bbox(parsed->box, clean.width,
                                                 clean.height, cfg.min_box_area);
        if (verdict != BoxVerdict::Ok) {
          ++out.delta.bbox_invalid;
          checks_log.push_back(
              {{"proposal", k}, {"rejected", to_string(verdict)}});
          continue;
        }
        if (overlaps_any(parsed->box, target_boxes, 0.0)) {
          ++out.delta.overlap_rejected;
          checks_log.push_back({{"proposal", k}, {"rejected", "overlap"}});
          continue;
        }
        if (const auto keyword =
                description_check(parsed->description, target_names, stopwords)) {
          ++out.delta.description_rejected;
          checks_log.push_back({{"proposal", k},
                                {"rejected", "description"},
                                {"keyword", *keyword}});
          continue;
        }

        EditQuery edit;
        edit.image = clean;
        edit.mask = make_inpaint_mask(clean.width, clean.height, parsed->box);
        edit.prompt = parsed->description;
        edit.preserve_boxes = target_boxes;
        ImageBuffer adv;
        try {
          adv = with_retries(
              [&] { return clients.generator->edit_image(edit); }, cfg.retries,
              sleep);
        } catch (const RetriesExhausted&) {
          checks_log.push_back({{"proposal", k}, {"rejected", "edit_error"}});
          continue;
        }
        ++out.delta.edits;

        ChatQuery probe;
        probe.prompt =
            build_vqa_prompt(prompts.vqa, sample.question, sample.options);
        probe.images.push_back(adv);
        probe.temperature = 0.0;
        probe.max_tokens = cfg.max_tokens;
        const ChatReply reply = with_retries(
            [&] { return clients.defender->vqa_answer(probe); }, cfg.retries,
            sleep);
        const ExtractionResult extracted = extract_answer(reply.text);
        const bool still_correct =
            extracted.letter && *extracted.letter == sample.answer;
        if (still_correct) {
          ++out.delta.ineffective;
          checks_log.push_back({{"proposal", k}, {"rejected", "ineffective"}});
          continue;
        }

        ++out.delta.effective;
        ++emitted;
        if (clean_rel.empty()) {
          clean_rel = "images/" + sample.id + "_clean.png";
          write_png(out_dir / clean_rel, clean);
        }
        const std::string adv_rel =
            "images/" + sample.id + "_adv" + std::to_string(k) + ".png";
        write_png(out_dir / adv_rel, adv);
        nlohmann::json options = nlohmann::json::object();
        for (const auto& [letter, text] : sample.options)
          options[std::string(1, letter)] = text;
        out.triplet_rows.push_back(
            {{"id", sample.id},
             {"clean_image", clean_rel},
             {"adv_image", adv_rel},
             {"question", sample.question},
             {"options", options},
             {"answer", std::string(1, sample.answer)},
             {"proposal",
              {{"box", bbox_to_json(parsed->box)},
               {"desc", parsed->description},
               {"fingerprint", parsed->fingerprint}}},
             {"checks",
              {{"bbox", "ok"}, {"overlap", "ok"}, {"description", "ok"}}},
             {"effective", true}});
      }
      row["status"] = "processed";
      row["triplets"] = emitted;
      row["checks"] = std::move(checks_log);
    } catch (const RetriesExhausted& e) {
      ++out.delta.pool_failed;
      ++out.delta.sample_errors;
      row["status"] = "error";
      row["error"] = e.what();
    } catch (const StorageError& e) {
      ++out.delta.sample_errors;
      row["status"] = "error";
      row["error"] = e.what();
    }
    out.manifest_row = std::move(row);
    return out;
  };

  JsonlWriter manifest(manifest_path);
  JsonlWriter triplets(triplets_path);
  std::vector<Outcome> outcomes;
  const std::size_t chunk = std::max<std::size_t>(16, cfg.workers * 4u);
  for (std::size_t begin = 0; begin < todo.size(); begin += chunk) {
    const std::size_t end = std::min(begin + chunk, todo.size());
    const std::vector<const SampleRecord*> slice(todo.begin() + begin,
                                                 todo.begin() + end);
    auto batch = parallel_map(slice, cfg.workers, process);
    for (auto& o : batch) {
      // triplets first; the startup reconciliation drops uncommitted ones
      for (const auto& t : o.triplet_rows) triplets.append(t);
      manifest.append(o.manifest_row);
      outcomes.push_back(std::move(o));
    }
  }
  for (const auto& o : outcomes) {
    stats.pool_kept += o.delta.pool_kept;
    stats.pool_rejected += o.delta.pool_rejected;
    stats.pool_failed += o.delta.pool_failed;
    stats.proposals_requested += o.delta.proposals_requested;
    stats.parse_errors += o.delta.parse_errors;
    stats.duplicates += o.delta.duplicates;
    stats.bbox_invalid += o.delta.bbox_invalid;
    stats.overlap_rejected += o.delta.overlap_rejected;
    stats.description_rejected += o.delta.description_rejected;
    stats.edits += o.delta.edits;
    stats.effective += o.delta.effective;
    stats.ineffective += o.delta.ineffective;
    stats.sample_errors += o.delta.sample_errors;
  }
  atomic_write_json(out_dir / "stage2_stats.json",
                    recompute_stage2_stats(manifest_path, triplets_path,
                                           cfg.seed));
  return stats;
}

}  // namespace aot
