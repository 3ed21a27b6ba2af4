#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>

#include "aot/geometry.hpp"
#include "aot/hash.hpp"
#include "aot/image.hpp"
#include "aot/rng.hpp"

// Analytic attacker/defender stand-ins. Everything here is desk-scale
// plumbing: the constants are artifact knobs declared in config, not
// measured quantities. The laws are chosen so that every real code path
// (pixel edits, SSIM gating, rewards, trials, curation, training rounds)
// runs deterministically on a laptop.
namespace aot::sim {

// The evolving part of the simulation, serialized into round checkpoints.
//   strength    - attacker edit intensity s in [0,1]
//   inside_rate - probability q of an invalid edit landing on a critical box
//   threshold   - defender skill theta in [0,1]
//   slope       - sensitivity k of the defender's accuracy to difficulty
struct SimState {
  double strength = 0.2;
  double inside_rate = 0.5;
  double threshold = 0.2;
  double slope = 1.0;
};

struct EditOutcome {
  ImageBuffer image;
  double realized_strength = 0.0;
  bool inside_critical = false;
};

// Noise amplitude per unit strength. 96 puts the SSIM-gate crossing (tau
// 0.3) in the middle of the strength range; the measured crossing is frozen
// in the test suite.
inline constexpr double kNoiseAmplitudePerStrength = 96.0;

// Applies zero-mean uniform noise of amplitude round(96 * s') inside the
// editable region. The realized strength jitters +-0.1 around the state's
// strength; strength 0 disables the edit entirely. With probability
// inside_rate the perturbation instead lands on a randomly chosen critical
// box - an invalid edit the SSIM gate is meant to catch.
inline EditOutcome attacker_edit(const ImageBuffer& image, const Mask& mask,
                                 std::span<const BBox> critical,
                                 const SimState& state, RngStream& rng) {
  if (mask.width != image.width || mask.height != image.height)
    throw ContractViolation("attacker_edit: mask dims must match image");
  EditOutcome out{image, 0.0, false};
  if (state.strength <= 0.0) return out;

  out.realized_strength = rng.next_range(std::max(0.0, state.strength - 0.1),
                                         std::min(1.0, state.strength + 0.1));
  out.inside_critical = !critical.empty() && rng.next_double() < state.inside_rate;

  const int amplitude = static_cast<int>(
      std::lround(kNoiseAmplitudePerStrength * out.realized_strength));
  if (amplitude == 0) return out;

  auto perturb = [&](int x, int y) {
    for (int c = 0; c < out.image.channels; ++c) {
      const int delta = static_cast<int>(rng.next_int(-amplitude, amplitude));
      auto& p = out.image.at(x, y, c);
      p = static_cast<std::uint8_t>(std::clamp(int(p) + delta, 0, 255));
    }
  };

  if (out.inside_critical) {
    const BBox& box = critical[rng.next_below(critical.size())];
    const PixelRect r = rasterize_box(box);
    const int x2 = std::min(r.x + r.w, image.width);
    const int y2 = std::min(r.y + r.h, image.height);
    for (int y = std::max(r.y, 0); y < y2; ++y)
      for (int x = std::max(r.x, 0); x < x2; ++x) perturb(x, y);
  } else {
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        if (mask.at(x, y) == 255) perturb(x, y);
  }
  return out;
}

// Difficulty seen by the defender: the realized strength when the edit is
// outside the critical evidence, else 0 (occluded evidence is the SSIM
// gate's job to catch, not the defender's).
inline double effective_difficulty(double realized_strength,
                                   bool inside_critical) {
  return inside_critical ? 0.0 : realized_strength;
}

inline double correct_probability(const SimState& state, double difficulty) {
  return std::clamp(0.5 + state.slope * (state.threshold - difficulty), 0.0, 1.0);
}

// Temperature 0 is deterministic (correct iff p >= 0.5); positive
// temperature draws from the indexed stream.
inline bool defender_correct(const SimState& state, double difficulty,
                             double temperature, RngStream& rng) {
  const double p = correct_probability(state, difficulty);
  if (temperature <= 0.0) return p >= 0.5;
  return rng.next_double() < p;
}

// Shared rule tying a question's text to its ground-truth letter. The
// synthetic pool generator assigns answers with this rule and the simulated
// defender recovers them from the prompt, so grading stays end-to-end real.
inline char truth_letter(std::string_view question, int n_options) {
  if (n_options < 1) throw ContractViolation("truth_letter: no options");
  return static_cast<char>('A' + fnv1a64(question) % n_options);
}

// Toy attacker update: push strength toward whatever earns more than the
// base reward, unlearn invalid edits. Mean is over valid candidates
// (reward > 0); an empty batch leaves the state unchanged.
inline SimState train_attacker(SimState state, std::span<const double> rewards,
                               double strength_lr = 0.3,
                               double inside_lr = 0.2) {
  if (rewards.empty()) return state;
  double sum = 0.0;
  int valid = 0;
  for (double r : rewards)
    if (r > 0.0) {
      sum += r;
      ++valid;
    }
  if (valid > 0) {
    const double mean = sum / valid;
    state.strength =
        std::clamp(state.strength + strength_lr * (mean - 0.2), 0.0, 1.0);
  }
  state.inside_rate = std::max(0.0, state.inside_rate - inside_lr);
  return state;
}

// Toy defender update: move the skill threshold toward the mean difficulty
// of the curated batch. Monotone - training on harder data never lowers it
// below the batch mean direction.
inline SimState train_defender(SimState state,
                               std::span<const double> difficulties,
                               double defender_lr = 0.5) {
  if (difficulties.empty()) return state;
  double sum = 0.0;
  for (double d : difficulties) sum += d;
  const double mean = sum / static_cast<double>(difficulties.size());
  state.threshold = std::clamp(
      state.threshold + defender_lr * (mean - state.threshold), 0.0, 1.0);
  return state;
}

}  // namespace aot::sim
