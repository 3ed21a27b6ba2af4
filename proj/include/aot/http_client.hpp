#pragma once

#include <httplib.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <nlohmann/json.hpp>
#include <semaphore>
#include <string>

#include "aot/client.hpp"
#include "aot/png_io.hpp"

namespace aot {

namespace b64 {

inline constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(std::string_view in) {
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= in.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(in[i]) << 16) |
                       (static_cast<unsigned char>(in[i + 1]) << 8) |
                       static_cast<unsigned char>(in[i + 2]);
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back(kAlphabet[v & 63]);
  }
  if (i + 1 == in.size()) {
    const unsigned v = static_cast<unsigned char>(in[i]) << 16;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.append("==");
  } else if (i + 2 == in.size()) {
    const unsigned v = (static_cast<unsigned char>(in[i]) << 16) |
                       (static_cast<unsigned char>(in[i + 1]) << 8);
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::string decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  int buffer = 0, bits = 0;
  for (char c : in) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = value(c);
    if (v < 0) throw TransportError("invalid base64 payload");
    buffer = (buffer << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buffer >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace b64

namespace http_detail {

inline bool debug_enabled() {
  static const bool on = [] {
    const char* v = std::getenv("AOT_DEBUG");
    return v != nullptr && *v != '\0';
  }();
  return on;
}

// Request/response bodies at debug level, with base64 image payloads elided.
inline void debug_log(const char* direction, nlohmann::json body) {
  if (!debug_enabled()) return;
  auto elide = [](nlohmann::json& node, auto&& self) -> void {
    if (node.is_object()) {
      for (auto& [key, value] : node.items()) {
        if (value.is_string() && value.dump().size() > 258)
          value = "<elided>";
        else
          self(value, self);
      }
    } else if (node.is_array()) {
      for (auto& value : node) self(value, self);
    }
  };
  elide(body, elide);
  std::fprintf(stderr, "[aot:http] %s %s\n", direction, body.dump().c_str());
}

// Splits "http://host:port/base" into client target and path prefix.
struct Endpoint {
  std::string origin;
  std::string path;
};

inline Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos)
    throw ConfigError("endpoint URL must include a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace http_detail

inline constexpr int kDefaultMaxConcurrency = 16;

// OpenAI-compatible chat-completions client with base64 PNG image parts.
// Transport failures, non-2xx statuses and malformed bodies all surface as
// retryable TransportError; the retry policy wraps calls at the call site.
class HttpVqaClient : public VqaClient {
 public:
  HttpVqaClient(const std::string& url, std::string model,
                std::string api_key = {},
                int max_concurrency = kDefaultMaxConcurrency)
      : endpoint_(http_detail::split_url(url)),
        model_(std::move(model)),
        api_key_(std::move(api_key)),
        slots_(max_concurrency) {}

  ChatReply vqa_answer(const ChatQuery& query) override {
    if (query.temperature < 0.0)
      throw ContractViolation("vqa_answer: negative temperature");
    if (query.prompt.empty() && query.images.empty())
      throw ContractViolation("vqa_answer: query carries no text and no image");
    if (query.images.size() > 2)
      throw ContractViolation("vqa_answer: at most 2 images per query");
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", query.prompt}});
    for (const auto& img : query.images) {
      content.push_back(
          {{"type", "image_url"},
           {"image_url",
            {{"url", "data:image/png;base64," + b64::encode(encode_png(img))}}}});
    }
    nlohmann::json body{
        {"model", model_},
        {"messages",
         nlohmann::json::array(
             {{{"role", "user"}, {"content", std::move(content)}}})},
        {"temperature", query.temperature},
        {"max_tokens", query.max_tokens},
    };
    if (query.want_logprobs) {
      body["logprobs"] = true;
      body["top_logprobs"] = 5;
    }
    http_detail::debug_log("request", body);

    const nlohmann::json reply_body = post_json(
        endpoint_.path.empty() ? "/v1/chat/completions" : endpoint_.path,
        body);
    http_detail::debug_log("response", reply_body);

    ChatReply reply;
    try {
      const auto& choice = reply_body.at("choices").at(0);
      reply.text = choice.at("message").at("content").get<std::string>();
      if (query.want_logprobs && choice.contains("logprobs") &&
          !choice["logprobs"].is_null()) {
        const auto& lp = choice["logprobs"].at("content");
        if (!lp.empty()) {
          for (const auto& alt : lp.at(0).at("top_logprobs")) {
            reply.first_token_logprobs.emplace_back(
                alt.at("token").get<std::string>(),
                alt.at("logprob").get<double>());
          }
          reply.has_logprobs = true;
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("malformed chat response: ") + e.what());
    }
    return reply;
  }

  int calls() const { return calls_.load(); }

 private:
  nlohmann::json post_json(const std::string& path, const nlohmann::json& body) {
    calls_.fetch_add(1);
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    httplib::Client client(endpoint_.origin);
    client.set_read_timeout(300, 0);
    httplib::Headers headers;
    if (!api_key_.empty())
      headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
      throw TransportError("connection failed: " + endpoint_.origin);
    if (res->status < 200 || res->status >= 300)
      throw TransportError("HTTP " + std::to_string(res->status) + " from " +
                           endpoint_.origin + path);
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("malformed JSON body: ") + e.what());
    }
  }

  http_detail::Endpoint endpoint_;
  std::string model_;
  std::string api_key_;
  std::counting_semaphore<> slots_;
  std::atomic<int> calls_{0};
};

// Image edit endpoint: posts base64 image + mask + prompt, decodes the
// returned base64 image and enforces the dimension contract.
class HttpEditClient : public EditClient {
 public:
  HttpEditClient(const std::string& url, std::string api_key = {},
                 int max_concurrency = kDefaultMaxConcurrency)
      : endpoint_(http_detail::split_url(url)),
        api_key_(std::move(api_key)),
        slots_(max_concurrency) {}

  ImageBuffer edit_image(const EditQuery& query) override {
    if (query.mask.width != query.image.width ||
        query.mask.height != query.image.height)
      throw ContractViolation("edit_image: mask dims must match image");
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : query.preserve_boxes)
      boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    ImageBuffer mask_img(query.mask.width, query.mask.height, 1);
    mask_img.pixels = query.mask.values;
    nlohmann::json body{
        {"image", b64::encode(encode_png(query.image))},
        {"mask", b64::encode(encode_png(mask_img))},
        {"prompt", query.prompt},
        {"preserve_boxes", std::move(boxes)},
    };
    http_detail::debug_log("request", body);

    calls_.fetch_add(1);
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    httplib::Client client(endpoint_.origin);
    client.set_read_timeout(600, 0);
    httplib::Headers headers;
    if (!api_key_.empty())
      headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(endpoint_.path.empty() ? "/edit" : endpoint_.path,
                           headers, body.dump(), "application/json");
    if (!res) throw TransportError("connection failed: " + endpoint_.origin);
    if (res->status < 200 || res->status >= 300)
      throw TransportError("HTTP " + std::to_string(res->status) + " from " +
                           endpoint_.origin);
    ImageBuffer out;
    try {
      const auto reply_body = nlohmann::json::parse(res->body);
      http_detail::debug_log("response", reply_body);
      out = decode_png(b64::decode(reply_body.at("image").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("malformed edit response: ") + e.what());
    } catch (const StorageError& e) {
      throw TransportError(std::string("undecodable edit payload: ") + e.what());
    }
    if (out.width != query.image.width || out.height != query.image.height)
      throw TransportError("edit backend returned wrong image size");
    return out;
  }

  int calls() const { return calls_.load(); }

 private:
  http_detail::Endpoint endpoint_;
  std::string api_key_;
  std::counting_semaphore<> slots_;
  std::atomic<int> calls_{0};
};

// Temperature-0 determinism is a stated requirement on real backends; this
// canary runs the same query twice and reports whether the texts agree.
inline bool temp0_canary_ok(VqaClient& client) {
  ChatQuery canary;
  canary.prompt = "Reply with the single word: ready";
  canary.temperature = 0.0;
  const std::string a = client.vqa_answer(canary).text;
  const std::string b = client.vqa_answer(canary).text;
  return a == b;
}

}  // namespace aot
