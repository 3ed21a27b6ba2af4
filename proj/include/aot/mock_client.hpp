#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>

#include "aot/client.hpp"
#include "aot/hash.hpp"
#include "aot/image.hpp"

namespace aot {

// Key identifying a chat query for fixture lookup: image content, prompt,
// temperature and trial nonce.
inline std::string fixture_key(const ChatQuery& q) {
  std::uint64_t h = fnv1a64(q.prompt);
  for (const auto& img : q.images) h = fnv1a64(image_digest(img), h);
  std::ostringstream key;
  key << std::hex << h << ":t" << q.temperature << ":n" << q.trial;
  return key.str();
}

// Scriptable non-network VQA backend. Replies come from an exact fixture
// map or, failing that, a handler function; call counts are tracked for
// short-circuit assertions. A pure handler makes the mock referentially
// transparent.
class MockVqaClient : public VqaClient {
 public:
  using Handler = std::function<ChatReply(const ChatQuery&)>;

  MockVqaClient() = default;
  explicit MockVqaClient(Handler handler) : handler_(std::move(handler)) {}

  void add_fixture(const std::string& key, ChatReply reply) {
    fixtures_[key] = std::move(reply);
  }
  void set_handler(Handler handler) { handler_ = std::move(handler); }

  ChatReply vqa_answer(const ChatQuery& query) override {
    calls_.fetch_add(1);
    if (auto it = fixtures_.find(fixture_key(query)); it != fixtures_.end())
      return it->second;
    if (handler_) return handler_(query);
    throw TransportError("mock: no fixture for query");
  }

  int calls() const { return calls_.load(); }

 private:
  std::unordered_map<std::string, ChatReply> fixtures_;
  Handler handler_;
  std::atomic<int> calls_{0};
};

class MockEditClient : public EditClient {
 public:
  using Handler = std::function<ImageBuffer(const EditQuery&)>;

  // Default behaviour: return the input unchanged.
  MockEditClient()
      : handler_([](const EditQuery& q) { return q.image; }) {}
  explicit MockEditClient(Handler handler) : handler_(std::move(handler)) {}

  ImageBuffer edit_image(const EditQuery& query) override {
    calls_.fetch_add(1);
    return handler_(query);
  }

  int calls() const { return calls_.load(); }

 private:
  Handler handler_;
  std::atomic<int> calls_{0};
};

}  // namespace aot
