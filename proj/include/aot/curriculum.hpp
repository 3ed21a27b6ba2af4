#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "aot/client.hpp"
#include "aot/errors.hpp"
#include "aot/rewards.hpp"
#include "aot/rng.hpp"

namespace aot {

// Result of the stochastic evaluation trials for one candidate. letters
// holds one character per trial: the extracted option letter, '?' when
// nothing could be extracted, '!' when the trial errored out after retries
// (errored trials count as incorrect).
struct TrialSummary {
  std::string candidate_id;
  int n_trials = 0;
  int n_correct = 0;
  std::string letters;
  int n_errors = 0;
  bool evaluation_failed = false;  // every trial errored; excluded from curation
};

enum class CurationVerdict { Selected, TooEasy, TooHard };

inline const char* to_string(CurationVerdict v) {
  switch (v) {
    case CurationVerdict::Selected: return "selected";
    case CurationVerdict::TooEasy: return "too_easy";
    case CurationVerdict::TooHard: return "too_hard";
  }
  return "?";
}

struct CurationDecision {
  CurationVerdict verdict = CurationVerdict::TooHard;
  int n_correct = 0;
};

struct EvalOptions {
  int n_trials = 10;
  double temperature = 1.0;
  int retries = 3;
  int max_tokens = 1024;
  SleepFn sleep = real_sleep;
};

// Runs n_trials independent VQA calls on the candidate and counts correct
// answers via the extraction cascade. Trials carry distinct nonces so
// stochastic backends decorrelate them.
inline TrialSummary evaluate_candidate(VqaClient& defender,
                                       const ImageBuffer& image,
                                       const std::string& vqa_prompt,
                                       char truth, std::string candidate_id,
                                       const EvalOptions& opts = {}) {
  if (opts.n_trials < 1)
    throw ContractViolation("evaluate_candidate: n_trials must be >= 1");
  TrialSummary summary;
  summary.candidate_id = std::move(candidate_id);
  summary.n_trials = opts.n_trials;
  for (int trial = 0; trial < opts.n_trials; ++trial) {
    ChatQuery query;
    query.prompt = vqa_prompt;
    query.images.push_back(image);
    query.temperature = opts.temperature;
    query.max_tokens = opts.max_tokens;
    query.trial = static_cast<std::uint64_t>(trial);
    try {
      const ChatReply reply = with_retries(
          [&] { return defender.vqa_answer(query); }, opts.retries, opts.sleep);
      const ExtractionResult r = extract_answer(reply.text);
      if (r.letter && *r.letter == truth) {
        ++summary.n_correct;
        summary.letters.push_back(*r.letter);
      } else {
        summary.letters.push_back(r.letter ? *r.letter : '?');
      }
    } catch (const RetriesExhausted&) {
      ++summary.n_errors;
      summary.letters.push_back('!');
    }
  }
  summary.evaluation_failed = summary.n_errors == summary.n_trials;
  return summary;
}

// Difficulty window: keep candidates the defender answers correctly between
// min_correct and max_correct times, inclusive.
inline CurationDecision curate(const TrialSummary& summary, int min_correct = 3,
                               int max_correct = 7) {
  if (min_correct < 0 || max_correct < min_correct ||
      max_correct > summary.n_trials)
    throw ContractViolation("curate: bad window");
  CurationDecision d;
  d.n_correct = summary.n_correct;
  if (summary.n_correct < min_correct)
    d.verdict = CurationVerdict::TooHard;
  else if (summary.n_correct > max_correct)
    d.verdict = CurationVerdict::TooEasy;
  else
    d.verdict = CurationVerdict::Selected;
  return d;
}

// Draws n ids uniformly from pool minus consumed. The caller adds the result
// to consumed, which keeps round subsets pairwise disjoint.
inline std::vector<std::string> sample_round_subset(
    std::span<const std::string> pool, int n,
    const std::set<std::string>& consumed, RngStream& rng) {
  std::vector<std::string> available;
  for (const auto& id : pool)
    if (!consumed.count(id)) available.push_back(id);
  if (static_cast<int>(available.size()) < n)
    throw Error("round subset needs " + std::to_string(n) +
                " samples but only " + std::to_string(available.size()) +
                " remain in the pool");
  for (int i = 0; i < n; ++i) {
    const auto j =
        i + static_cast<std::size_t>(rng.next_below(available.size() - i));
    std::swap(available[static_cast<std::size_t>(i)], available[j]);
  }
  available.resize(static_cast<std::size_t>(n));
  return available;
}

}  // namespace aot
