#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "aot/client.hpp"
#include "aot/config.hpp"
#include "aot/http_client.hpp"
#include "aot/mock_client.hpp"
#include "aot/sim_client.hpp"
#include "aot/storage.hpp"

namespace aot {

// The three client roles a run needs. With the simulation backend one
// object fills every role; with HTTP the verifier may be a different model
// behind the same endpoint.
struct Backends {
  std::shared_ptr<VqaClient> defender;
  std::shared_ptr<VqaClient> verifier;
  std::shared_ptr<EditClient> generator;
  std::shared_ptr<SimBackend> sim;  // set only for the sim backend
};

inline Backends make_backends(const RunConfig& cfg) {
  Backends b;
  if (cfg.backend == "sim") {
    auto sim = std::make_shared<SimBackend>(cfg.sim.init, cfg.sim.rates, cfg.seed);
    b.sim = sim;
    b.defender = sim;
    b.verifier = sim;
    b.generator = sim;
  } else if (cfg.backend == "mock") {
    auto vqa = std::make_shared<MockVqaClient>();
    if (!cfg.mock_fixtures.empty()) {
      const auto fixtures = read_json(cfg.mock_fixtures);
      std::string fallback;
      for (const auto& [key, value] : fixtures.items()) {
        if (key == "*")
          fallback = value.get<std::string>();
        else
          vqa->add_fixture(key, ChatReply{value.get<std::string>(), {}, false});
      }
      if (!fallback.empty())
        vqa->set_handler([fallback](const ChatQuery&) {
          return ChatReply{fallback, {}, false};
        });
    }
    b.defender = vqa;
    b.verifier = vqa;
    b.generator = std::make_shared<MockEditClient>();
  } else if (cfg.backend == "http") {
    if (cfg.vqa_url.empty() || cfg.edit_url.empty())
      throw ConfigError("http backend requires vqa_url and edit_url "
                        "(or AOT_VQA_URL / AOT_EDIT_URL)");
    b.defender = std::make_shared<HttpVqaClient>(cfg.vqa_url, cfg.model,
                                                 cfg.api_key, cfg.workers);
    const std::string verifier_model =
        cfg.verifier_model.empty() ? cfg.model : cfg.verifier_model;
    b.verifier = std::make_shared<HttpVqaClient>(cfg.vqa_url, verifier_model,
                                                 cfg.api_key, cfg.workers);
    b.generator = std::make_shared<HttpEditClient>(cfg.edit_url, cfg.api_key,
                                                   cfg.workers);
  } else {
    throw ConfigError("unknown backend: " + cfg.backend);
  }
  return b;
}

// Trainer plug-point: receives the emitted batch file and the current
// generation tag, returns the next generation tag. Real policy-optimization
// integrations attach here; the simulation trainers and a no-op tag bump
// are built in.
using TrainerHook =
    std::function<std::string(const std::filesystem::path&, const std::string&)>;

struct Trainers {
  TrainerHook attacker;
  TrainerHook defender;
};

inline std::string next_generation_tag(const std::string& tag) {
  const auto dash = tag.rfind('-');
  if (dash != std::string::npos) {
    try {
      const int n = std::stoi(tag.substr(dash + 1));
      return tag.substr(0, dash + 1) + std::to_string(n + 1);
    } catch (...) {
    }
  }
  return tag + "-1";
}

// Shells out to a user-supplied training command: `cmd <batch> <tag>`; the
// last line of stdout is the new generation tag.
inline TrainerHook command_trainer(const std::string& cmd) {
  return [cmd](const std::filesystem::path& batch, const std::string& tag) {
    const std::string full = cmd + " " + batch.string() + " " + tag;
    std::FILE* pipe = popen(full.c_str(), "r");
    if (!pipe) throw Error("trainer command failed to start: " + cmd);
    std::string output;
    char buf[256];
    while (std::fgets(buf, sizeof buf, pipe)) output += buf;
    const int status = pclose(pipe);
    if (status != 0)
      throw Error("trainer command exited with status " +
                  std::to_string(status) + ": " + cmd);
    while (!output.empty() && (output.back() == '\n' || output.back() == '\r'))
      output.pop_back();
    const auto line = output.rfind('\n');
    std::string new_tag =
        line == std::string::npos ? output : output.substr(line + 1);
    if (new_tag.empty()) throw Error("trainer command returned no tag: " + cmd);
    return new_tag;
  };
}

inline Trainers make_trainers(const RunConfig& cfg, Backends& backends) {
  Trainers t;
  if (!cfg.attacker_trainer_cmd.empty())
    t.attacker = command_trainer(cfg.attacker_trainer_cmd);
  if (!cfg.defender_trainer_cmd.empty())
    t.defender = command_trainer(cfg.defender_trainer_cmd);

  if (backends.sim) {
    auto sim = backends.sim;
    const double attacker_lr = cfg.sim.attacker_lr;
    const double inside_lr = cfg.sim.inside_lr;
    const double defender_lr = cfg.sim.defender_lr;
    if (!t.attacker) {
      t.attacker = [sim, attacker_lr, inside_lr](
                       const std::filesystem::path& batch,
                       const std::string& tag) {
        std::vector<double> rewards;
        for (const auto& row : read_jsonl(batch))
          if (row.contains("reward")) rewards.push_back(row["reward"].get<double>());
        sim->set_state(sim::train_attacker(sim->state(), rewards, attacker_lr,
                                           inside_lr));
        return next_generation_tag(tag);
      };
    }
    if (!t.defender) {
      t.defender = [sim, defender_lr](const std::filesystem::path& batch,
                                      const std::string& tag) {
        std::vector<double> difficulties;
        for (const auto& row : read_jsonl(batch))
          if (row.contains("sim") && row["sim"].contains("difficulty"))
            difficulties.push_back(row["sim"]["difficulty"].get<double>());
        sim->set_state(
            sim::train_defender(sim->state(), difficulties, defender_lr));
        return next_generation_tag(tag);
      };
    }
  }
  if (!t.attacker)
    t.attacker = [](const std::filesystem::path&, const std::string& tag) {
      return next_generation_tag(tag);
    };
  if (!t.defender)
    t.defender = [](const std::filesystem::path&, const std::string& tag) {
      return next_generation_tag(tag);
    };
  return t;
}

}  // namespace aot
