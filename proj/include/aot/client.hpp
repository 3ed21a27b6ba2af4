#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "aot/errors.hpp"
#include "aot/geometry.hpp"
#include "aot/image.hpp"

namespace aot {

// One multimodal chat request. `trial` is a nonce distinguishing repeated
// stochastic calls on identical content; network backends ignore it, the
// mock and simulation backends key their determinism on it.
struct ChatQuery {
  std::string prompt;
  std::vector<ImageBuffer> images;  // at most 2
  double temperature = 0.0;
  bool want_logprobs = false;
  int max_tokens = 1024;
  std::uint64_t trial = 0;
};

struct ChatReply {
  std::string text;
  // First-token alternatives as (token, logprob); present only when
  // requested and supported by the backend.
  std::vector<std::pair<std::string, double>> first_token_logprobs;
  bool has_logprobs = false;
};

// Inpaint/outpaint request. Mask value 255 marks the editable region.
// preserve_boxes are regions whose content must survive the edit; backends
// may use or ignore them.
struct EditQuery {
  ImageBuffer image;
  Mask mask;
  std::string prompt;
  std::vector<BBox> preserve_boxes;
};

class VqaClient {
 public:
  virtual ~VqaClient() = default;
  virtual ChatReply vqa_answer(const ChatQuery& query) = 0;
};

class EditClient {
 public:
  virtual ~EditClient() = default;
  virtual ImageBuffer edit_image(const EditQuery& query) = 0;
};

// Probability that the model's first token is "yes". Alternatives whose
// text normalizes (trim + lowercase) to "yes" have their probabilities
// summed. Without logprobs the reply text is the proxy: starts with "yes"
// => 1.0, else 0.0.
inline double yes_probability(const ChatReply& reply) {
  auto normalize = [](std::string_view raw) {
    std::string out;
    for (char c : raw)
      if (!std::isspace(static_cast<unsigned char>(c)))
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
  };
  if (reply.has_logprobs) {
    double p = 0.0;
    for (const auto& [token, logprob] : reply.first_token_logprobs)
      if (normalize(token) == "yes") p += std::exp(logprob);
    return std::clamp(p, 0.0, 1.0);
  }
  const std::string head = normalize(reply.text.substr(0, 8));
  return head.rfind("yes", 0) == 0 ? 1.0 : 0.0;
}

using SleepFn = std::function<void(std::chrono::milliseconds)>;

inline void real_sleep(std::chrono::milliseconds d) {
  std::this_thread::sleep_for(d);
}

// Re-invokes `op` on TransportError with jittered exponential backoff
// (base 0.5s, cap 8s). Tests inject a no-op sleeper. Throws
// RetriesExhausted wrapping the final cause once `attempts` are consumed.
template <typename Op>
auto with_retries(Op&& op, int attempts = 3, const SleepFn& sleep = real_sleep)
    -> decltype(op()) {
  if (attempts < 1) throw ContractViolation("with_retries: attempts must be >= 1");
  static std::atomic<std::uint64_t> jitter_state{0x7c9d4b2e01f8a356ull};
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    try {
      return op();
    } catch (const TransportError& e) {
      last_error = e.what();
      if (attempt == attempts) break;
      const double base = std::min(500.0 * std::pow(2.0, attempt - 1), 8000.0);
      const auto j = jitter_state.fetch_add(0x9e3779b97f4a7c15ull);
      const double factor = 0.75 + 0.5 * static_cast<double>(j % 1000) / 1000.0;
      sleep(std::chrono::milliseconds(static_cast<long>(base * factor)));
    }
  }
  throw RetriesExhausted(attempts, last_error);
}

}  // namespace aot
