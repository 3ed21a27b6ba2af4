#pragma once

#include <cmath>
#include <mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "aot/client.hpp"
#include "aot/sim.hpp"

namespace aot {

// Per-check failure rates for the simulated verifier; default 0 keeps every
// sample flowing, positive values exercise the rejection paths.
struct SimRates {
  double composition_fail = 0.0;
  double duplication_fail = 0.0;
  double realism_fail = 0.0;
};

// Non-network backend implementing both client contracts against the
// analytic simulation laws. Prompt kinds are recognized by markers from the
// prompt templates; determinism is keyed on (seed, image digest, trial), so
// results never depend on worker count or call order.
//
// Edited images are remembered by content digest together with their
// realized strength, which is how a later VQA call on the same raster knows
// its difficulty. Unknown rasters count as clean (difficulty 0).
class SimBackend : public VqaClient, public EditClient {
 public:
  SimBackend(sim::SimState state, SimRates rates, std::uint64_t seed)
      : state_(state), rates_(rates), seed_(seed) {}

  sim::SimState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }
  void set_state(const sim::SimState& s) {
    std::lock_guard lock(mu_);
    state_ = s;
  }

  ImageBuffer edit_image(const EditQuery& query) override {
    const sim::SimState st = state();
    RngStream rng = RngStream::derive(seed_, "sim-edit",
                                      image_digest(query.image) ^
                                          fnv1a64(query.prompt));
    sim::EditOutcome outcome =
        sim::attacker_edit(query.image, query.mask, query.preserve_boxes, st, rng);
    {
      std::lock_guard lock(mu_);
      edits_[image_digest(outcome.image)] = {outcome.realized_strength,
                                             outcome.inside_critical};
    }
    return std::move(outcome.image);
  }

  ChatReply vqa_answer(const ChatQuery& query) override {
    const std::string& p = query.prompt;
    if (p.find("stitched collage") != std::string::npos)
      return composition_reply(query);
    if (p.find("detections") != std::string::npos)
      return duplication_reply(query);
    if (p.find("Real Photo") != std::string::npos) return realism_reply(query);
    if (p.find("distractor") != std::string::npos) return proposal_reply(query);
    if (p.find("outpaint") != std::string::npos) return scene_reply(query);
    if (p.find("Question:") != std::string::npos) return answer_reply(query);
    throw ContractViolation("sim backend: unrecognized prompt kind");
  }

  // Difficulty bookkeeping for an image produced by this backend.
  struct EditInfo {
    double realized_strength = 0.0;
    bool inside_critical = false;
  };

  EditInfo lookup(const ImageBuffer& img) const {
    std::lock_guard lock(mu_);
    if (auto it = edits_.find(image_digest(img)); it != edits_.end())
      return it->second;
    return {};
  }

  // Probe candidates need a pinned difficulty independent of the evolving
  // attacker state.
  void register_difficulty(const ImageBuffer& img, double realized_strength,
                           bool inside_critical) {
    std::lock_guard lock(mu_);
    edits_[image_digest(img)] = {realized_strength, inside_critical};
  }

 private:
  std::uint64_t query_key(const ChatQuery& q, std::string_view kind) const {
    std::uint64_t h = fnv1a64(kind);
    for (const auto& img : q.images) h = fnv1a64(image_digest(img), h);
    return fnv1a64(q.trial, h);
  }

  ChatReply composition_reply(const ChatQuery& q) {
    RngStream rng = RngStream::derive(seed_, "sim-comp", query_key(q, "comp"));
    const bool flag = rng.next_double() < rates_.composition_fail;
    const double p_yes = flag ? 0.85 : 0.15;
    ChatReply reply;
    reply.text = flag ? "Yes" : "No";
    if (q.want_logprobs) {
      reply.first_token_logprobs = {{"Yes", std::log(p_yes)},
                                    {"No", std::log(1.0 - p_yes)}};
      reply.has_logprobs = true;
    }
    return reply;
  }

  ChatReply duplication_reply(const ChatQuery& q) {
    RngStream rng = RngStream::derive(seed_, "sim-dup", query_key(q, "dup"));
    const bool flag = rng.next_double() < rates_.duplication_fail;
    ChatReply reply;
    if (!flag) {
      reply.text = R"({"detections": []})";
      return reply;
    }
    // An implausibly large detection count, guaranteed above any original.
    std::ostringstream body;
    body << R"({"detections": [)";
    for (int i = 0; i < 9; ++i) {
      if (i) body << ", ";
      const int x = static_cast<int>(rng.next_below(64));
      const int y = static_cast<int>(rng.next_below(64));
      body << R"({"box": [)" << x << ", " << y << ", 16, 16]}";
    }
    body << "]}";
    reply.text = body.str();
    return reply;
  }

  ChatReply realism_reply(const ChatQuery& q) {
    RngStream rng = RngStream::derive(seed_, "sim-real", query_key(q, "real"));
    const bool flag = rng.next_double() < rates_.realism_fail;
    ChatReply reply;
    reply.text = flag ? "AI-Generated: The textures look uniformly synthetic."
                      : "Real Photo";
    return reply;
  }

  ChatReply proposal_reply(const ChatQuery& q) {
    if (q.images.empty())
      throw ContractViolation("sim backend: proposal query without image");
    RngStream rng = RngStream::derive(seed_, "sim-prop", query_key(q, "prop"));
    const int W = q.images[0].width;
    const int H = q.images[0].height;
    const int side = std::max(11, static_cast<int>(
                                      std::min(W, H) *
                                      rng.next_range(0.15, 0.3)));
    const int x1 = static_cast<int>(rng.next_below(
        static_cast<std::uint64_t>(std::max(1, W - side))));
    const int y1 = static_cast<int>(rng.next_below(
        static_cast<std::uint64_t>(std::max(1, H - side))));
    static const char* kObjects[] = {
        "a woven basket", "a rusty metal canister", "a folded umbrella",
        "a stack of books", "a potted fern",         "a cardboard box",
        "a glass pitcher", "a striped towel"};
    const char* obj = kObjects[rng.next_below(std::size(kObjects))];
    std::ostringstream line;
    line << "[" << x1 << ", " << y1 << ", " << x1 + side << ", " << y1 + side
         << "] | " << "A plausible addition: " << obj << ".";
    ChatReply reply;
    reply.text = line.str();
    return reply;
  }

  ChatReply scene_reply(const ChatQuery& q) {
    RngStream rng = RngStream::derive(seed_, "sim-scene", query_key(q, "scene"));
    static const char* kScenery[] = {
        "a tiled floor",      "shelves along the wall", "a wide window",
        "scattered crates",   "a workbench",            "hanging lamps",
        "a painted doorway",  "stacked containers"};
    std::ostringstream text;
    for (int i = 0; i < 4; ++i) {
      if (i) text << ", ";
      text << kScenery[rng.next_below(std::size(kScenery))];
    }
    ChatReply reply;
    reply.text = text.str();
    return reply;
  }

  ChatReply answer_reply(const ChatQuery& q) {
    const std::string question = parse_question(q.prompt);
    const std::vector<char> letters = parse_option_letters(q.prompt);
    if (letters.empty())
      throw ContractViolation("sim backend: VQA prompt without options");
    const char truth =
        sim::truth_letter(question, static_cast<int>(letters.size()));

    double difficulty = 0.0;
    if (!q.images.empty()) {
      const EditInfo info = lookup(q.images[0]);
      difficulty =
          sim::effective_difficulty(info.realized_strength, info.inside_critical);
    }
    RngStream rng = RngStream::derive(seed_, "sim-vqa", query_key(q, "vqa"));
    const bool correct =
        sim::defender_correct(state(), difficulty, q.temperature, rng);

    ChatReply reply;
    if (correct) {
      reply.text = std::string("The scene supports option \\boxed{") + truth + "}";
    } else {
      std::vector<char> wrong;
      for (char c : letters)
        if (c != truth) wrong.push_back(c);
      const char pick =
          wrong.empty() ? truth : wrong[rng.next_below(wrong.size())];
      reply.text = std::string("The final answer is: ") + pick;
    }
    return reply;
  }

  static std::string parse_question(const std::string& prompt) {
    const auto pos = prompt.find("Question:");
    if (pos == std::string::npos)
      throw ContractViolation("sim backend: missing Question marker");
    const auto start = pos + 9;
    const auto end = prompt.find('\n', start);
    std::string q = prompt.substr(
        start, end == std::string::npos ? std::string::npos : end - start);
    const auto first = q.find_first_not_of(" \t");
    const auto last = q.find_last_not_of(" \t\r");
    if (first == std::string::npos) return "";
    return q.substr(first, last - first + 1);
  }

  static std::vector<char> parse_option_letters(const std::string& prompt) {
    std::vector<char> letters;
    std::istringstream lines(prompt);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.size() >= 2 && line[0] >= 'A' && line[0] <= 'Z' && line[1] == '.')
        letters.push_back(line[0]);
    }
    return letters;
  }

  mutable std::mutex mu_;
  sim::SimState state_;
  SimRates rates_;
  std::uint64_t seed_;
  std::unordered_map<std::uint64_t, EditInfo> edits_;
};

}  // namespace aot
