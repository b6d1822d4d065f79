#include "tfevolve/mllm.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "tfevolve/error.hpp"

namespace tfevolve {

using nlohmann::json;

MllmConfig mllm_config_from_env() {
  MllmConfig config;
  const auto read = [](const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
  };
  config.url = read("TFEVOLVE_MLLM_URL");
  config.api_key = read("TFEVOLVE_MLLM_KEY");
  config.model = read("TFEVOLVE_MLLM_MODEL");
  return config;
}

namespace {

class HttplibTransport : public HttpTransport {
 public:
  HttpResponse post_json(const std::string& url, const std::string& body,
                         const std::map<std::string, std::string>& headers,
                         std::chrono::milliseconds timeout) override {
    // Split scheme://host[:port] from the path.
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("malformed endpoint url: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client client(origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(path, h, body, "application/json");
    if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
    HttpResponse out;
    out.status = res->status;
    out.body = res->body;
    for (const auto& [k, v] : res->headers) out.headers[k] = v;
    return out;
  }
};

std::string replace_all(std::string text, const std::string& key, const std::string& value) {
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

std::string reply_keys(std::span<const Aspect> aspects) {
  std::string keys;
  for (const Aspect& a : aspects) keys += std::string("- ") + to_string(a.id) + "\n";
  return keys;
}

std::string aspect_rubric(std::span<const Aspect> aspects) {
  std::string rubric;
  for (const Aspect& a : aspects) {
    char weight[32];
    std::snprintf(weight, sizeof weight, "%g", a.weight);
    rubric += std::string("- ") + to_string(a.id) + " (weight " + weight + "): " + a.prompt_text + "\n";
  }
  if (!rubric.empty()) rubric.pop_back();
  return rubric;
}

std::string intent_block(const Intent& intent) {
  std::string block;
  if (!intent.text.empty()) block += "The user describes the desired visualization as follows:\n" + intent.text + "\n";
  if (intent.reference) block += "The user supplied a reference image; it is attached after the two candidates.\n";
  if (block.empty()) block = "The user has not stated an intent; judge formal quality only.\n";
  return block;
}

json image_part(const RenderedImage& image) {
  return {{"type", "image_url"},
          {"image_url", {{"url", "data:image/png;base64," + base64_encode(encode_png(image))}}}};
}

json text_part(const std::string& text) { return {{"type", "text"}, {"text", text}}; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::optional<Winner> parse_winner(std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  v = trim(v);
  if (v == "a") return Winner::A;
  if (v == "b") return Winner::B;
  if (v == "tie") return Winner::Tie;
  return std::nullopt;
}

ComparisonResult degraded_result(std::span<const Aspect> aspects, const std::string& why) {
  ComparisonResult r;
  for (const Aspect& a : aspects) r.per_aspect[a.id] = Winner::Tie;
  r.overall = Winner::Tie;
  r.degraded = true;
  r.rationale = why;
  return r;
}

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport() { return std::make_unique<HttplibTransport>(); }

json build_comparison_request(const MllmConfig& config, const RenderedImage& a, const RenderedImage& b,
                              std::span<const Aspect> aspects, const Intent& intent) {
  std::string system = replace_all(prompts::kSystem, "{{ASPECT_RUBRIC}}", aspect_rubric(aspects));
  system = replace_all(system, "{{REPLY_KEYS}}", reply_keys(aspects));
  const std::string user = replace_all(prompts::kUser, "{{INTENT_BLOCK}}", intent_block(intent));

  json content = json::array();
  content.push_back(text_part(user));
  content.push_back(text_part("Image A:"));
  content.push_back(image_part(a));
  content.push_back(text_part("Image B:"));
  content.push_back(image_part(b));
  if (intent.reference) {
    content.push_back(text_part("Reference image:"));
    content.push_back(image_part(*intent.reference));
  }
  return {{"model", config.model},
          {"temperature", 0},
          {"response_format", {{"type", "json_object"}}},
          {"messages", json::array({{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", content}}})}};
}

std::optional<std::map<AspectId, Winner>> parse_comparison_reply(const std::string& content,
                                                                 std::span<const Aspect> aspects,
                                                                 std::string* rationale) {
  std::string text = trim(content);
  if (text.rfind("```", 0) == 0) {
    const auto first_newline = text.find('\n');
    const auto fence_end = text.rfind("```");
    if (first_newline == std::string::npos || fence_end <= first_newline) return std::nullopt;
    text = trim(text.substr(first_newline + 1, fence_end - first_newline - 1));
  }
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  std::map<AspectId, Winner> winners;
  for (const Aspect& a : aspects) {
    const auto it = j.find(to_string(a.id));
    if (it == j.end() || !it->is_string()) return std::nullopt;
    const auto w = parse_winner(it->get<std::string>());
    if (!w) return std::nullopt;
    winners[a.id] = *w;
  }
  if (rationale) {
    const auto it = j.find("rationale");
    if (it != j.end() && it->is_string()) *rationale = it->get<std::string>();
  }
  return winners;
}

MllmJudge::MllmJudge(MllmConfig config, std::shared_ptr<HttpTransport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  if (!config_.configured()) {
    throw Error(ErrorCode::judge_unavailable, "MLLM judge is not configured",
                "set TFEVOLVE_MLLM_URL, TFEVOLVE_MLLM_MODEL and TFEVOLVE_MLLM_KEY");
  }
  if (!transport_) transport_ = make_http_transport();
  config_.max_in_flight = std::max(config_.max_in_flight, 1);
  config_.max_attempts = std::max(config_.max_attempts, 1);
}

void MllmJudge::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
  ++in_flight_;
}

void MllmJudge::release() {
  {
    std::lock_guard lock(mutex_);
    --in_flight_;
  }
  cv_.notify_one();
}

class MllmJudge::Slot {
 public:
  explicit Slot(MllmJudge& judge) : judge_(judge) { judge_.acquire(); }
  ~Slot() { judge_.release(); }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;

 private:
  MllmJudge& judge_;
};

ComparisonResult MllmJudge::compare(const RenderedImage& a, const RenderedImage& b, std::span<const Aspect> aspects,
                                    const Intent& intent) {
  check_comparable(a, b, aspects);
  validate(intent);
  json request = build_comparison_request(config_, a, b, aspects, intent);
  const std::map<std::string, std::string> headers{{"Authorization", "Bearer " + config_.api_key}};

  std::string last_problem = "no attempt made";
  auto delay = config_.backoff;
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    HttpResponse response;
    try {
      Slot slot(*this);
      response = transport_->post_json(config_.url, request.dump(), headers, config_.timeout);
    } catch (const TransportError& e) {
      last_problem = e.what();
      continue;
    }
    if (response.status == 401 || response.status == 403) {
      throw Error(ErrorCode::judge_unavailable, "MLLM endpoint rejected the credentials",
                  "HTTP " + std::to_string(response.status));
    }
    if (response.status == 429) {
      // Honour Retry-After (seconds) when the server sends one.
      const auto it = response.headers.find("Retry-After");
      if (it != response.headers.end()) {
        const int secs = std::atoi(it->second.c_str());
        if (secs > 0) delay = std::max(delay, std::chrono::milliseconds(1000L * std::min(secs, 60)));
      }
      last_problem = "rate limited";
      continue;
    }
    if (response.status != 200) {
      last_problem = "HTTP " + std::to_string(response.status);
      continue;
    }

    const json body = json::parse(response.body, nullptr, false);
    std::string content;
    if (!body.is_discarded()) {
      try {
        content = body.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception&) {
        content.clear();
      }
    }
    ComparisonResult result;
    if (auto winners = parse_comparison_reply(content, aspects, &result.rationale)) {
      result.per_aspect = std::move(*winners);
      result.overall = aggregate(result.per_aspect, aspects);
      return result;
    }
    last_problem = "unparseable reply";
    // Ask once more, showing the model its own reply.
    auto& messages = request["messages"];
    if (messages.size() == 2) {
      messages.push_back({{"role", "assistant"}, {"content", content}});
      messages.push_back(
          {{"role", "user"}, {"content", replace_all(prompts::kRepair, "{{REPLY_KEYS}}", reply_keys(aspects))}});
    }
  }
  return degraded_result(aspects, last_problem);
}

}  // namespace tfevolve
