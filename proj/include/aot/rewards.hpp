#pragma once

#include <optional>
#include <regex>
#include <string>
#include <string_view>

namespace aot {

// Outcome of the two temperature-0 defender calls used by the attacker
// reward's high-confidence failure criterion.
struct VerdictPair {
  bool first_correct = false;
  bool second_correct = false;

  bool both_incorrect() const { return !first_correct && !second_correct; }
};

// Attacker reward. The integrity gate uses >=, so a score exactly at the
// threshold passes. Values are only ever 0.0, 0.2 or 1.0.
inline double attacker_reward(double min_ssim, double tau,
                              const VerdictPair& verdicts) {
  if (min_ssim < tau) return 0.0;
  return verdicts.both_incorrect() ? 1.0 : 0.2;
}

enum class ExtractionTier { PrimaryBoxed, Fallback, None };

inline const char* to_string(ExtractionTier t) {
  switch (t) {
    case ExtractionTier::PrimaryBoxed: return "primary_boxed";
    case ExtractionTier::Fallback: return "fallback";
    case ExtractionTier::None: return "none";
  }
  return "?";
}

struct ExtractionResult {
  std::optional<char> letter;
  ExtractionTier tier = ExtractionTier::None;
};

// Cascaded answer extraction. Priority: the canonical \boxed{L} pattern,
// then the fallbacks (bare boxed{L}, "The final answer is: L", a standalone
// "(L)" choice marker). Within a pattern the first occurrence wins. Only
// capital letters count; lowercase inside \boxed is deliberately not
// normalized so the format bonus stays meaningful.
inline ExtractionResult extract_answer(std::string_view text) {
  static const std::regex primary(R"(\\boxed\s*\{\s*([A-Z])\s*\})");
  static const std::regex bare_boxed(R"(boxed\s*\{\s*([A-Z])\s*\})");
  static const std::regex final_answer(R"([Tt]he final answer is:?\s*([A-Z])\b)");
  static const std::regex parenthesized(R"((?:^|[\s:])\(([A-Z])\))",
                                        std::regex::multiline);

  const std::string s(text);
  std::smatch m;
  if (std::regex_search(s, m, primary))
    return {m[1].str()[0], ExtractionTier::PrimaryBoxed};
  for (const auto* re : {&bare_boxed, &final_answer, &parenthesized}) {
    if (std::regex_search(s, m, *re))
      return {m[1].str()[0], ExtractionTier::Fallback};
  }
  return {std::nullopt, ExtractionTier::None};
}

// Defender reward: 0.8 for a correct answer in any recognized format, plus
// the 0.2 format bonus only for the canonical \boxed{L} pattern. Anything
// else is 0.
inline double defender_reward(const ExtractionResult& extraction, char truth) {
  if (!extraction.letter || *extraction.letter != truth) return 0.0;
  return extraction.tier == ExtractionTier::PrimaryBoxed ? 1.0 : 0.8;
}

}  // namespace aot
