#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "support.hpp"
#include "tfevolve/mllm.hpp"

using namespace tfevolve;
using nlohmann::json;

namespace {

MllmConfig test_config(const std::string& url = "http://mock.invalid/v1/chat/completions") {
  MllmConfig c;
  c.url = url;
  c.model = "mock-vision-1";
  c.api_key = "sk-test";
  c.backoff = std::chrono::milliseconds(1);
  c.timeout = std::chrono::milliseconds(2000);
  return c;
}

RenderedImage tiny(std::uint8_t shade) {
  RenderedImage img(2, 2);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = (i % 4 == 3) ? 255 : shade;
  return img;
}

std::string chat_reply(const std::string& content) {
  return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})}}.dump();
}

// Replays scripted responses and records each request body.
class ScriptedTransport : public HttpTransport {
 public:
  using Step = std::function<HttpResponse()>;

  void then(Step step) { script_.push_back(std::move(step)); }
  void then_reply(const std::string& content) {
    then([content] { return HttpResponse{200, chat_reply(content), {}}; });
  }

  HttpResponse post_json(const std::string& url, const std::string& body,
                         const std::map<std::string, std::string>& headers, std::chrono::milliseconds) override {
    std::lock_guard lock(mutex_);
    urls.push_back(url);
    bodies.push_back(json::parse(body));
    last_headers = headers;
    REQUIRE(!script_.empty());
    Step step = std::move(script_.front());
    script_.pop_front();
    return step();
  }

  std::vector<std::string> urls;
  std::vector<json> bodies;
  std::map<std::string, std::string> last_headers;

 private:
  std::mutex mutex_;
  std::deque<Step> script_;
};

int count_images(const json& request) {
  int n = 0;
  for (const auto& message : request.at("messages")) {
    if (!message.at("content").is_array()) continue;
    for (const auto& part : message.at("content")) n += part.at("type") == "image_url";
  }
  return n;
}

std::string all_text(const json& request) {
  std::string out;
  for (const auto& message : request.at("messages")) {
    if (message.at("content").is_string()) {
      out += message.at("content").get<std::string>();
    } else {
      for (const auto& part : message.at("content")) {
        if (part.at("type") == "text") out += part.at("text").get<std::string>();
      }
    }
    out += "\n";
  }
  return out;
}

void check_golden(const json& request, const std::string& name) {
  const std::filesystem::path path = std::filesystem::path(TFEVOLVE_GOLDEN_DIR) / name;
  const std::string text = request.dump(2) + "\n";
  if (std::getenv("TFEVOLVE_UPDATE_GOLDEN")) testing::spit(path, text);
  REQUIRE(std::filesystem::exists(path));
  CHECK(testing::slurp(path) == text);
}

}  // namespace

TEST_CASE("request for a text intent") {
  const std::string text = "Make the \"inner core\" stand out in warm colours; hide the shell.";
  const Intent intent{IntentKind::text, text, std::nullopt};
  const auto aspects = aspects_for(intent, true);
  const json request = build_comparison_request(test_config(), tiny(10), tiny(200), aspects, intent);
  CHECK(request.at("model") == "mock-vision-1");
  CHECK(count_images(request) == 2);
  CHECK(all_text(request).find(text) != std::string::npos);
  const std::string system = request.at("messages").at(0).at("content");
  for (const Aspect& a : aspects) CHECK(system.find(to_string(a.id)) != std::string::npos);
  CHECK(system.find("{{") == std::string::npos);
  // Image A precedes image B.
  const auto& parts = request.at("messages").at(1).at("content");
  CHECK(parts.at(1).at("text") == "Image A:");
  CHECK(parts.at(2).at("image_url").at("url") == "data:image/png;base64," + base64_encode(encode_png(tiny(10))));
  CHECK(parts.at(4).at("image_url").at("url") == "data:image/png;base64," + base64_encode(encode_png(tiny(200))));
  check_golden(request, "mllm_request_text.json");
}

TEST_CASE("request for an image intent") {
  const Intent intent{IntentKind::image, "", tiny(90)};
  const json request = build_comparison_request(test_config(), tiny(10), tiny(200), aspects_for(intent, true), intent);
  CHECK(count_images(request) == 3);
  CHECK(all_text(request).find("visual_intent") != std::string::npos);
  check_golden(request, "mllm_request_image.json");
}

TEST_CASE("request without intent") {
  const json request = build_comparison_request(test_config(), tiny(1), tiny(2), formal_aspects(), Intent{});
  CHECK(count_images(request) == 2);
  CHECK(all_text(request).find("text_intent") == std::string::npos);
  check_golden(request, "mllm_request_formal.json");
}

TEST_CASE("reply parsing") {
  const auto aspects = formal_aspects();
  std::string rationale;
  auto r = parse_comparison_reply(
      R"({"information_richness":"A","feature_discrimination":"b","color_harmony":"Tie","rationale":"why"})", aspects,
      &rationale);
  REQUIRE(r);
  CHECK(r->at(AspectId::information_richness) == Winner::A);
  CHECK(r->at(AspectId::feature_discrimination) == Winner::B);
  CHECK(r->at(AspectId::color_harmony) == Winner::Tie);
  CHECK(rationale == "why");

  CHECK(parse_comparison_reply(
      "```json\n{\"information_richness\":\"A\",\"feature_discrimination\":\"A\",\"color_harmony\":\"A\"}\n```",
      aspects));
  CHECK_FALSE(parse_comparison_reply(R"({"information_richness":"A","feature_discrimination":"A"})", aspects));
  CHECK_FALSE(parse_comparison_reply(
      R"({"information_richness":"A","feature_discrimination":"A","color_harmony":"C"})", aspects));
  CHECK_FALSE(parse_comparison_reply("Image A is better.", aspects));
  CHECK_FALSE(parse_comparison_reply("[1,2]", aspects));
}

TEST_CASE("all-A reply aggregates to A") {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->then_reply(R"({"information_richness":"A","feature_discrimination":"A","color_harmony":"A"})");
  MllmJudge judge(test_config(), transport);
  const auto result = judge.compare(tiny(1), tiny(2), formal_aspects(), Intent{});
  CHECK(result.overall == Winner::A);
  CHECK_FALSE(result.degraded);
  CHECK(transport->bodies.size() == 1);
  CHECK(transport->last_headers.at("Authorization") == "Bearer sk-test");
}

TEST_CASE("weighted reply aggregation") {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->then_reply(
      R"({"information_richness":"A","feature_discrimination":"A","color_harmony":"Tie","text_intent":"B"})");
  MllmJudge judge(test_config(), transport);
  const Intent intent{IntentKind::text, "x", std::nullopt};
  // A: 1 + 1 + 0.5 = 2.5, B: 3 + 0.5 = 3.5.
  CHECK(judge.compare(tiny(1), tiny(2), aspects_for(intent, true), intent).overall == Winner::B);
}

TEST_CASE("malformed replies degrade to an all-Tie result") {
  auto transport = std::make_shared<ScriptedTransport>();
  for (int i = 0; i < 3; ++i) transport->then_reply("I prefer the first one.");
  MllmJudge judge(test_config(), transport);
  const auto result = judge.compare(tiny(1), tiny(2), formal_aspects(), Intent{});
  CHECK(result.degraded);
  CHECK(result.overall == Winner::Tie);
  REQUIRE(result.per_aspect.size() == 3);
  for (const auto& [id, w] : result.per_aspect) CHECK(w == Winner::Tie);
  REQUIRE(transport->bodies.size() == 3);
  // The second attempt carries the repair turn.
  CHECK(transport->bodies[0].at("messages").size() == 2);
  CHECK(transport->bodies[1].at("messages").size() == 4);
  CHECK(transport->bodies[1].at("messages").at(2).at("content") == "I prefer the first one.");
}

TEST_CASE("repair turn recovers") {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->then_reply("nope");
  transport->then_reply(R"({"information_richness":"B","feature_discrimination":"B","color_harmony":"A"})");
  MllmJudge judge(test_config(), transport);
  const auto result = judge.compare(tiny(1), tiny(2), formal_aspects(), Intent{});
  CHECK_FALSE(result.degraded);
  CHECK(result.overall == Winner::B);
}

TEST_CASE("transport failures retry then degrade") {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->then([]() -> HttpResponse { throw TransportError("connection refused"); });
  transport->then([] { return HttpResponse{500, "oops", {}}; });
  transport->then([] { return HttpResponse{429, "", {}}; });
  MllmJudge judge(test_config(), transport);
  const auto result = judge.compare(tiny(1), tiny(2), formal_aspects(), Intent{});
  CHECK(result.degraded);
  CHECK(transport->bodies.size() == 3);

  auto flaky = std::make_shared<ScriptedTransport>();
  flaky->then([]() -> HttpResponse { throw TransportError("timeout"); });
  flaky->then_reply(R"({"information_richness":"A","feature_discrimination":"A","color_harmony":"A"})");
  MllmJudge recovering(test_config(), flaky);
  CHECK(recovering.compare(tiny(1), tiny(2), formal_aspects(), Intent{}).overall == Winner::A);
}

TEST_CASE("rejected credentials are a configuration error") {
  auto transport = std::make_shared<ScriptedTransport>();
  transport->then([] { return HttpResponse{401, "{}", {}}; });
  MllmJudge judge(test_config(), transport);
  CHECK(testing::error_code([&] { judge.compare(tiny(1), tiny(2), formal_aspects(), Intent{}); }) ==
        ErrorCode::judge_unavailable);
  CHECK(transport->bodies.size() == 1);
}

TEST_CASE("unconfigured judge is unavailable") {
  MllmConfig c = test_config();
  c.api_key.clear();
  CHECK(testing::error_code([&] { MllmJudge judge(c); }) == ErrorCode::judge_unavailable);
}

TEST_CASE("in-flight limit") {
  class SlowTransport : public HttpTransport {
   public:
    HttpResponse post_json(const std::string&, const std::string&, const std::map<std::string, std::string>&,
                           std::chrono::milliseconds) override {
      const int now = ++active;
      int seen = peak.load();
      while (now > seen && !peak.compare_exchange_weak(seen, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      --active;
      return {200, chat_reply(R"({"information_richness":"A","feature_discrimination":"A","color_harmony":"A"})"), {}};
    }
    std::atomic<int> active{0}, peak{0};
  };
  auto transport = std::make_shared<SlowTransport>();
  MllmConfig c = test_config();
  c.max_in_flight = 2;
  MllmJudge judge(c, transport);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] { judge.compare(tiny(1), tiny(2), formal_aspects(), Intent{}); });
  }
  for (auto& t : threads) t.join();
  CHECK(transport->peak.load() <= 2);
  CHECK(transport->peak.load() >= 1);
}

TEST_CASE("end to end against a local mock endpoint") {
  httplib::Server server;
  std::mutex mutex;
  json seen;
  std::string auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(mutex);
      seen = json::parse(req.body);
      auth = req.get_header_value("Authorization");
    }
    res.set_content(chat_reply(R"({"information_richness":"B","feature_discrimination":"B","color_harmony":"B"})"),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  MllmJudge judge(test_config("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"));
  const Intent intent{IntentKind::text, "emphasize the core", std::nullopt};
  const auto result = judge.compare(tiny(1), tiny(2), aspects_for(intent, false), intent);
  server.stop();
  thread.join();

  CHECK(result.overall == Winner::B);
  CHECK(auth == "Bearer sk-test");
  CHECK(count_images(seen) == 2);
  CHECK(all_text(seen).find("emphasize the core") != std::string::npos);
}

TEST_CASE("unreachable endpoint degrades") {
  MllmConfig c = test_config("http://127.0.0.1:1/v1/chat/completions");
  c.timeout = std::chrono::milliseconds(200);
  MllmJudge judge(c);
  const auto result = judge.compare(tiny(1), tiny(2), formal_aspects(), Intent{});
  CHECK(result.degraded);
}
