#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <condition_variable>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "tfevolve/evaluator.hpp"

namespace tfevolve {

namespace prompts {
extern const char* const kVersion;
extern const char* const kSystem;
extern const char* const kUser;
extern const char* const kRepair;
}  // namespace prompts

struct MllmConfig {
  std::string url;  // full chat-completions endpoint, e.g. http://host:8000/v1/chat/completions
  std::string model;
  std::string api_key;
  int max_in_flight = 4;
  std::chrono::milliseconds timeout{60000};
  int max_attempts = 3;
  std::chrono::milliseconds backoff{500};  // doubled after each failed attempt

  bool configured() const { return !url.empty() && !model.empty() && !api_key.empty(); }
};

// Reads TFEVOLVE_MLLM_URL / _KEY / _MODEL.
MllmConfig mllm_config_from_env();

struct HttpResponse {
  int status = 0;
  std::string body;
  std::map<std::string, std::string> headers;
};

// Thrown by transports when no HTTP response was received.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post_json(const std::string& url, const std::string& body,
                                 const std::map<std::string, std::string>& headers,
                                 std::chrono::milliseconds timeout) = 0;
};

std::unique_ptr<HttpTransport> make_http_transport();

// OpenAI-compatible chat-completions request for one pairwise comparison.
nlohmann::json build_comparison_request(const MllmConfig& config, const RenderedImage& a, const RenderedImage& b,
                                        std::span<const Aspect> aspects, const Intent& intent);

// Parses the model's reply text. Accepts a bare JSON object or one wrapped in
// a ``` fence; every requested aspect must map to "A", "B" or "Tie".
std::optional<std::map<AspectId, Winner>> parse_comparison_reply(const std::string& content,
                                                                 std::span<const Aspect> aspects,
                                                                 std::string* rationale = nullptr);

class MllmJudge : public Judge {
 public:
  // Throws Error(judge_unavailable) when the config is incomplete.
  MllmJudge(MllmConfig config, std::shared_ptr<HttpTransport> transport = nullptr);

  ComparisonResult compare(const RenderedImage& a, const RenderedImage& b, std::span<const Aspect> aspects,
                           const Intent& intent) override;
  bool concurrent() const override { return true; }
  std::string name() const override { return "mllm"; }

 private:
  class Slot;
  void acquire();
  void release();

  MllmConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  std::mutex mutex_;
  std::condition_variable cv_;
  int in_flight_ = 0;
};

}  // namespace tfevolve
