#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "aot/errors.hpp"
#include "aot/storage.hpp"

namespace aot {

// Rebuilds the per-round metrics purely from the emitted batch files, so
// the report can always be audited against the artifacts it summarizes.
inline nlohmann::json recompute_round_metrics(
    const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const fs::path rounds_dir = out_dir / "rounds";
  if (!fs::exists(rounds_dir))
    throw StorageError("no rounds directory under " + out_dir.string());

  nlohmann::json metrics = nlohmann::json::array();
  for (int round = 0;; ++round) {
    const fs::path probe_path =
        rounds_dir / ("probe_" + std::to_string(round) + ".jsonl");
    const fs::path attacker_path =
        rounds_dir / ("attacker_batch_" + std::to_string(round) + ".jsonl");
    const fs::path curation_path =
        rounds_dir / ("curation_" + std::to_string(round) + ".jsonl");
    if (!fs::exists(probe_path) && !fs::exists(attacker_path)) {
      if (round == 0) continue;  // round 0 may hold only the probe baseline
      break;
    }

    nlohmann::json row{{"round", round}};
    if (fs::exists(attacker_path)) {
      int success = 0, valid = 0, scored = 0;
      for (const auto& r : read_jsonl(attacker_path)) {
        if (r.contains("error")) continue;
        ++scored;
        const double reward = r.at("reward").get<double>();
        if (reward == 1.0) ++success;
        if (reward > 0.0) ++valid;
      }
      row["attack_success_rate"] =
          scored == 0 ? 0.0 : static_cast<double>(success) / scored;
      row["valid_edit_rate"] =
          scored == 0 ? 0.0 : static_cast<double>(valid) / scored;
    }
    if (fs::exists(curation_path)) {
      int selected = 0, too_easy = 0, too_hard = 0, failed = 0;
      for (const auto& r : read_jsonl(curation_path)) {
        const std::string verdict = r.at("verdict").get<std::string>();
        if (verdict == "selected")
          ++selected;
        else if (verdict == "too_easy")
          ++too_easy;
        else if (verdict == "too_hard")
          ++too_hard;
        else
          ++failed;
      }
      row["curation"] = {{"selected", selected},
                         {"too_easy", too_easy},
                         {"too_hard", too_hard},
                         {"failed", failed}};
    }
    if (fs::exists(probe_path)) {
      long correct = 0, total = 0;
      for (const auto& r : read_jsonl(probe_path)) {
        correct += r.at("n_correct").get<int>();
        total += r.at("n_trials").get<int>();
      }
      row["probe_accuracy"] =
          total == 0 ? 0.0 : static_cast<double>(correct) / total;
    }
    const fs::path sim_path =
        rounds_dir / ("sim_state_" + std::to_string(round) + ".json");
    if (fs::exists(sim_path))
      row["sim_threshold"] = read_json(sim_path).at("threshold").get<double>();
    metrics.push_back(std::move(row));
  }
  return metrics;
}

inline nlohmann::json recompute_report(const std::filesystem::path& out_dir) {
  nlohmann::json report;
  const auto state_path = out_dir / "round_state.json";
  if (std::filesystem::exists(out_dir / "report.json")) {
    report = read_json(out_dir / "report.json");
  } else if (std::filesystem::exists(state_path)) {
    report["header"] = {{"run_id",
                         read_json(state_path).at("run_id").get<std::string>()}};
  }
  report["rounds"] = recompute_round_metrics(out_dir);
  return report;
}

}  // namespace aot
