#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "aot/errors.hpp"
#include "aot/prompts.hpp"
#include "aot/sim.hpp"
#include "aot/sim_client.hpp"
#include "aot/storage.hpp"

namespace aot {

struct SimSettings {
  sim::SimState init;
  double attacker_lr = 0.3;
  double inside_lr = 0.2;
  double defender_lr = 0.5;
  SimRates rates;
};

// Synthetic desk-scale pool; count 0 means "use the dataset on disk".
struct SyntheticSpec {
  int count = 0;
  int image_size = 128;
  int n_options = 4;
};

struct PromptPaths {
  std::string outpaint, composition, duplication, realism, proposal, attack, vqa;
};

struct RunConfig {
  std::string backend = "sim";  // sim | mock | http
  std::string vqa_url;
  std::string edit_url;
  std::string api_key;
  std::string model = "default";
  std::string verifier_model;  // empty: same as model

  int canvas = 1536;
  std::array<double, 3> placement_weights{0.4, 0.4, 0.2};
  double tau_ssim = 0.3;
  int trials = 10;
  int window_min = -1;  // -1 derives ceil(0.3 * trials)
  int window_max = -1;  // -1 derives floor(0.7 * trials)
  int proposals_per_sample = 3;
  int retries = 3;
  int workers = 16;
  int rounds = 3;
  int subset_size = 300;
  double min_box_area = 100.0;
  std::uint64_t seed = 0;
  int shard_index = 0;
  int shard_count = 1;
  int probe_count = 12;
  double probe_strength = 0.6;
  int max_tokens = 1024;
  double proposal_temperature = 1.0;
  double trial_temperature = 1.0;
  int halt_after_phases = 0;  // 0 = run to completion; used by resume tests

  SimSettings sim;
  SyntheticSpec synthetic;
  PromptPaths prompts;
  std::string stopwords_path;
  std::string mock_fixtures;
  std::string attacker_trainer_cmd;  // external trainer plug-points
  std::string defender_trainer_cmd;

  int curation_min() const {
    return window_min >= 0 ? window_min
                           : static_cast<int>(std::ceil(0.3 * trials));
  }
  int curation_max() const {
    return window_max >= 0 ? window_max
                           : static_cast<int>(std::floor(0.7 * trials));
  }
};

namespace config_detail {

// Strict field reader: every key in the object must be consumed.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& obj, std::string scope)
      : obj_(obj), scope_(std::move(scope)) {
    if (!obj.is_object())
      throw ConfigError(scope_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (auto it = obj_.find(key); it != obj_.end()) {
      try {
        out = it->get<T>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError(scope_ + "." + key + ": wrong type");
      }
      seen_.push_back(key);
    }
  }

  const nlohmann::json* object(const char* key) {
    if (auto it = obj_.find(key); it != obj_.end()) {
      seen_.push_back(key);
      return &*it;
    }
    return nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
        throw ConfigError(scope_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string scope_;
  std::vector<std::string> seen_;
};

inline void check_range(bool ok, const std::string& field,
                        const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace config_detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  using config_detail::check_range;
  RunConfig cfg;
  config_detail::FieldReader root(j, "config");
  root.get("backend", cfg.backend);
  root.get("vqa_url", cfg.vqa_url);
  root.get("edit_url", cfg.edit_url);
  root.get("api_key", cfg.api_key);
  root.get("model", cfg.model);
  root.get("verifier_model", cfg.verifier_model);
  root.get("canvas", cfg.canvas);
  root.get("placement_weights", cfg.placement_weights);
  root.get("tau_ssim", cfg.tau_ssim);
  root.get("trials", cfg.trials);
  root.get("window_min", cfg.window_min);
  root.get("window_max", cfg.window_max);
  root.get("proposals_per_sample", cfg.proposals_per_sample);
  root.get("retries", cfg.retries);
  root.get("workers", cfg.workers);
  root.get("rounds", cfg.rounds);
  root.get("subset_size", cfg.subset_size);
  root.get("min_box_area", cfg.min_box_area);
  root.get("seed", cfg.seed);
  root.get("shard_index", cfg.shard_index);
  root.get("shard_count", cfg.shard_count);
  root.get("probe_count", cfg.probe_count);
  root.get("probe_strength", cfg.probe_strength);
  root.get("max_tokens", cfg.max_tokens);
  root.get("proposal_temperature", cfg.proposal_temperature);
  root.get("trial_temperature", cfg.trial_temperature);
  root.get("halt_after_phases", cfg.halt_after_phases);
  root.get("stopwords_path", cfg.stopwords_path);
  root.get("mock_fixtures", cfg.mock_fixtures);
  root.get("attacker_trainer_cmd", cfg.attacker_trainer_cmd);
  root.get("defender_trainer_cmd", cfg.defender_trainer_cmd);

  if (const auto* s = root.object("sim")) {
    config_detail::FieldReader sim_reader(*s, "config.sim");
    sim_reader.get("strength", cfg.sim.init.strength);
    sim_reader.get("inside_rate", cfg.sim.init.inside_rate);
    sim_reader.get("threshold", cfg.sim.init.threshold);
    sim_reader.get("slope", cfg.sim.init.slope);
    sim_reader.get("attacker_lr", cfg.sim.attacker_lr);
    sim_reader.get("inside_lr", cfg.sim.inside_lr);
    sim_reader.get("defender_lr", cfg.sim.defender_lr);
    sim_reader.get("composition_fail_rate", cfg.sim.rates.composition_fail);
    sim_reader.get("duplication_fail_rate", cfg.sim.rates.duplication_fail);
    sim_reader.get("realism_fail_rate", cfg.sim.rates.realism_fail);
    sim_reader.finish();
  }
  if (const auto* s = root.object("synthetic")) {
    config_detail::FieldReader syn(*s, "config.synthetic");
    syn.get("count", cfg.synthetic.count);
    syn.get("image_size", cfg.synthetic.image_size);
    syn.get("n_options", cfg.synthetic.n_options);
    syn.finish();
  }
  if (const auto* p = root.object("prompts")) {
    config_detail::FieldReader pr(*p, "config.prompts");
    pr.get("outpaint", cfg.prompts.outpaint);
    pr.get("composition", cfg.prompts.composition);
    pr.get("duplication", cfg.prompts.duplication);
    pr.get("realism", cfg.prompts.realism);
    pr.get("proposal", cfg.prompts.proposal);
    pr.get("attack", cfg.prompts.attack);
    pr.get("vqa", cfg.prompts.vqa);
    pr.finish();
  }
  root.finish();

  check_range(cfg.backend == "sim" || cfg.backend == "mock" ||
                  cfg.backend == "http",
              "backend", "must be sim, mock or http");
  check_range(cfg.canvas >= 16, "canvas", "must be >= 16");
  check_range(cfg.tau_ssim >= 0.0 && cfg.tau_ssim <= 1.0, "tau_ssim",
              "must be in [0,1]");
  double weight_sum = 0.0;
  for (double w : cfg.placement_weights) {
    check_range(w >= 0.0, "placement_weights", "weights must be >= 0");
    weight_sum += w;
  }
  check_range(std::abs(weight_sum - 1.0) < 1e-9, "placement_weights",
              "must sum to 1");
  check_range(cfg.trials >= 1, "trials", "must be >= 1");
  check_range(cfg.window_min == -1 ||
                  (cfg.window_min >= 0 && cfg.window_min <= cfg.trials),
              "window_min", "must be in [0, trials]");
  check_range(cfg.window_max == -1 ||
                  (cfg.window_max >= cfg.curation_min() &&
                   cfg.window_max <= cfg.trials),
              "window_max", "must be in [window_min, trials]");
  check_range(cfg.proposals_per_sample >= 1, "proposals_per_sample",
              "must be >= 1");
  check_range(cfg.retries >= 1, "retries", "must be >= 1");
  check_range(cfg.workers >= 1, "workers", "must be >= 1");
  check_range(cfg.rounds >= 0, "rounds", "must be >= 0");
  check_range(cfg.subset_size >= 1, "subset_size", "must be >= 1");
  check_range(cfg.min_box_area >= 0.0, "min_box_area", "must be >= 0");
  check_range(cfg.shard_count >= 1 && cfg.shard_index >= 0 &&
                  cfg.shard_index < cfg.shard_count,
              "shard_index", "must be in [0, shard_count)");
  check_range(cfg.probe_count >= 1, "probe_count", "must be >= 1");
  check_range(cfg.probe_strength >= 0.0 && cfg.probe_strength <= 1.0,
              "probe_strength", "must be in [0,1]");
  check_range(cfg.sim.init.strength >= 0.0 && cfg.sim.init.strength <= 1.0,
              "sim.strength", "must be in [0,1]");
  check_range(cfg.sim.init.inside_rate >= 0.0 && cfg.sim.init.inside_rate <= 1.0,
              "sim.inside_rate", "must be in [0,1]");
  check_range(cfg.sim.init.threshold >= 0.0 && cfg.sim.init.threshold <= 1.0,
              "sim.threshold", "must be in [0,1]");
  check_range(cfg.sim.init.slope > 0.0, "sim.slope", "must be > 0");
  check_range(cfg.synthetic.count >= 0, "synthetic.count", "must be >= 0");
  check_range(cfg.synthetic.image_size >= 32, "synthetic.image_size",
              "must be >= 32");
  check_range(cfg.synthetic.n_options >= 2 && cfg.synthetic.n_options <= 26,
              "synthetic.n_options", "must be in [2,26]");
  return cfg;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  return {
      {"backend", c.backend},
      {"vqa_url", c.vqa_url},
      {"edit_url", c.edit_url},
      {"api_key", c.api_key},
      {"model", c.model},
      {"verifier_model", c.verifier_model},
      {"canvas", c.canvas},
      {"placement_weights", c.placement_weights},
      {"tau_ssim", c.tau_ssim},
      {"trials", c.trials},
      {"window_min", c.window_min},
      {"window_max", c.window_max},
      {"proposals_per_sample", c.proposals_per_sample},
      {"retries", c.retries},
      {"workers", c.workers},
      {"rounds", c.rounds},
      {"subset_size", c.subset_size},
      {"min_box_area", c.min_box_area},
      {"seed", c.seed},
      {"shard_index", c.shard_index},
      {"shard_count", c.shard_count},
      {"probe_count", c.probe_count},
      {"probe_strength", c.probe_strength},
      {"max_tokens", c.max_tokens},
      {"proposal_temperature", c.proposal_temperature},
      {"trial_temperature", c.trial_temperature},
      {"halt_after_phases", c.halt_after_phases},
      {"stopwords_path", c.stopwords_path},
      {"mock_fixtures", c.mock_fixtures},
      {"attacker_trainer_cmd", c.attacker_trainer_cmd},
      {"defender_trainer_cmd", c.defender_trainer_cmd},
      {"sim",
       {{"strength", c.sim.init.strength},
        {"inside_rate", c.sim.init.inside_rate},
        {"threshold", c.sim.init.threshold},
        {"slope", c.sim.init.slope},
        {"attacker_lr", c.sim.attacker_lr},
        {"inside_lr", c.sim.inside_lr},
        {"defender_lr", c.sim.defender_lr},
        {"composition_fail_rate", c.sim.rates.composition_fail},
        {"duplication_fail_rate", c.sim.rates.duplication_fail},
        {"realism_fail_rate", c.sim.rates.realism_fail}}},
      {"synthetic",
       {{"count", c.synthetic.count},
        {"image_size", c.synthetic.image_size},
        {"n_options", c.synthetic.n_options}}},
      {"prompts",
       {{"outpaint", c.prompts.outpaint},
        {"composition", c.prompts.composition},
        {"duplication", c.prompts.duplication},
        {"realism", c.prompts.realism},
        {"proposal", c.prompts.proposal},
        {"attack", c.prompts.attack},
        {"vqa", c.prompts.vqa}}},
  };
}

// Endpoint environment overrides beat config file values.
inline void apply_env_overrides(RunConfig& cfg) {
  if (const char* v = std::getenv("AOT_VQA_URL"); v && *v) cfg.vqa_url = v;
  if (const char* v = std::getenv("AOT_EDIT_URL"); v && *v) cfg.edit_url = v;
  if (const char* v = std::getenv("AOT_API_KEY"); v && *v) cfg.api_key = v;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = read_json(path);
  } catch (const StorageError& e) {
    throw ConfigError(e.what());
  }
  RunConfig cfg = config_from_json(j);
  apply_env_overrides(cfg);
  return cfg;
}

// Prompt templates from the configured paths, built-in defaults otherwise.
inline PromptSet load_prompt_set(const RunConfig& cfg) {
  PromptSet prompts;
  const auto load = [](const std::string& path, std::string& slot) {
    if (!path.empty()) slot = prompt_detail::read_text_file(path);
  };
  load(cfg.prompts.outpaint, prompts.outpaint);
  load(cfg.prompts.composition, prompts.composition);
  load(cfg.prompts.duplication, prompts.duplication);
  load(cfg.prompts.realism, prompts.realism);
  load(cfg.prompts.proposal, prompts.proposal);
  load(cfg.prompts.attack, prompts.attack);
  load(cfg.prompts.vqa, prompts.vqa);
  validate_prompts(prompts);
  return prompts;
}

}  // namespace aot
