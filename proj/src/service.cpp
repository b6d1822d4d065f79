#include "tfevolve/service.hpp"

#include <httplib.h>

#include <atomic>
#include <fstream>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include "tfevolve/image.hpp"

namespace tfevolve {

using nlohmann::json;
namespace fs = std::filesystem;

ServiceConfig service_config_from_env() {
  ServiceConfig c;
  if (const char* dir = std::getenv("TFEVOLVE_DATA_DIR"); dir && *dir) c.data_dir = dir;
  c.mllm = mllm_config_from_env();
  return c;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_request: return 400;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::judge_unavailable: return 503;
    case ErrorCode::internal: break;
  }
  return 500;
}

namespace {

Error conflict(const std::string& message) { return Error(ErrorCode::conflict, message); }

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message, const std::string& detail) {
  send_json(res, http_status(code),
            {{"error", {{"code", to_string(code)}, {"message", message}, {"detail", detail}}}});
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw bad_request("request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw bad_request("malformed JSON body", e.what());
  }
}

template <class T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw bad_request(std::string("missing field: ") + key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw bad_request(std::string("wrong type for field: ") + key);
  }
}

double query_double(const httplib::Request& req, const char* key, double fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::logic_error&) {
    throw bad_request(std::string("query parameter ") + key + " is not a number", v);
  }
}

std::pair<int, int> parse_size(const std::string& text) {
  int w = 0, h = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%dx%d%c", &w, &h, &tail) == 2) {
  } else if (std::sscanf(text.c_str(), "%d%c", &w, &tail) == 1) {
    h = w;
  } else {
    throw bad_request("size must be N or WxH", text);
  }
  if (w < 1 || h < 1 || w > 4096 || h > 4096) throw bad_request("size out of range", text);
  return {w, h};
}

std::string random_session_id() {
  static std::mutex mutex;
  static std::mt19937_64 engine{std::random_device{}()};
  std::lock_guard lock(mutex);
  char buf[20];
  std::snprintf(buf, sizeof buf, "s%012llx", static_cast<unsigned long long>(engine() & 0xffffffffffffULL));
  return buf;
}

bool valid_session_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
  }
  return true;
}

}  // namespace

// One live session. `mutex` guards everything here; a step computes on a
// copy and commits at each generation boundary, so readers never wait on
// a whole generation and writers wait for at most one.
struct SessionSlot {
  std::mutex mutex;
  std::condition_variable cv;
  Session session;
  fs::path dir;
  bool busy = false;
  bool computing = false;
  int waiting_writers = 0;
  StepProgress progress{0, "idle", 0, 0};
  std::optional<json> last_error;
  std::thread worker;

  ~SessionSlot() {
    if (worker.joinable()) worker.join();
  }
};

struct Service::Impl {
  ServiceConfig config;
  httplib::Server server;
  std::shared_ptr<Judge> judge;
  std::string judge_error;
  std::atomic<bool> stopping{false};

  std::mutex registry_mutex;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions;
  std::map<std::string, std::shared_ptr<const VolumeDataset>> volumes;

  explicit Impl(ServiceConfig c) : config(std::move(c)) {
    fs::create_directories(sessions_dir());
    if (config.judge_instance) {
      judge = config.judge_instance;
    } else if (config.judge == "heuristic") {
      judge = std::make_shared<HeuristicJudge>();
    } else if (config.judge == "mllm") {
      try {
        judge = std::make_shared<MllmJudge>(config.mllm);
      } catch (const Error& e) {
        judge_error = e.what();
      }
    } else {
      judge_error = "unknown judge: " + config.judge;
    }
    routes();
  }

  ~Impl() {
    stopping = true;
    std::vector<std::shared_ptr<SessionSlot>> slots;
    {
      std::lock_guard lock(registry_mutex);
      for (auto& [id, slot] : sessions) slots.push_back(slot);
    }
    for (auto& slot : slots) {
      {
        std::lock_guard lock(slot->mutex);
        slot->cv.notify_all();
      }
      if (slot->worker.joinable()) slot->worker.join();
    }
  }

  fs::path sessions_dir() const { return config.data_dir / "sessions"; }

  Judge& require_judge() {
    if (!judge) throw Error(ErrorCode::judge_unavailable, "judge is not configured", judge_error);
    return *judge;
  }

  std::shared_ptr<const VolumeDataset> volume_for(const std::string& ref) {
    {
      std::lock_guard lock(registry_mutex);
      if (auto it = volumes.find(ref); it != volumes.end()) return it->second;
    }
    std::shared_ptr<const VolumeDataset> v;
    try {
      v = std::make_shared<const VolumeDataset>(open_volume(ref));
    } catch (const Error& e) {
      // An unreadable volume is the caller's mistake, whatever the cause.
      throw bad_request(std::string("cannot open volume: ") + e.what(), ref);
    } catch (const std::exception& e) {
      throw bad_request(std::string("cannot open volume: ") + e.what(), ref);
    }
    std::lock_guard lock(registry_mutex);
    return volumes.emplace(ref, v).first->second;
  }

  std::shared_ptr<SessionSlot> slot_for(const std::string& id) {
    if (!valid_session_id(id)) throw not_found("unknown session", id);
    std::lock_guard lock(registry_mutex);
    if (auto it = sessions.find(id); it != sessions.end()) return it->second;
    const fs::path dir = sessions_dir() / id;
    if (!fs::exists(dir / "session.json")) throw not_found("unknown session", id);
    auto slot = std::make_shared<SessionSlot>();
    slot->session = restore(dir);
    slot->dir = dir;
    slot->progress.generation = slot->session.generation_index;
    sessions.emplace(id, slot);
    return slot;
  }

  std::shared_ptr<SessionSlot> add_session(Session session) {
    auto slot = std::make_shared<SessionSlot>();
    slot->dir = sessions_dir() / session.id;
    session.dir = slot->dir;
    slot->session = std::move(session);
    slot->progress.generation = slot->session.generation_index;
    checkpoint(slot->session, slot->dir);
    std::lock_guard lock(registry_mutex);
    sessions[slot->session.id] = slot;
    return slot;
  }

  // Runs `fn` on the live session between generations of any running step.
  template <class Fn>
  auto mutate_session(SessionSlot& slot, Fn&& fn) {
    std::unique_lock lock(slot.mutex);
    ++slot.waiting_writers;
    slot.cv.wait(lock, [&] { return !slot.computing; });
    struct Leave {
      SessionSlot& s;
      ~Leave() {
        --s.waiting_writers;
        s.cv.notify_all();
      }
    } leave{slot};
    auto result = fn(slot.session);
    checkpoint(slot.session, slot.dir);
    return result;
  }

  template <class Fn>
  auto read_session(SessionSlot& slot, Fn&& fn) {
    std::lock_guard lock(slot.mutex);
    return fn(static_cast<const Session&>(slot.session));
  }

  void run_steps(std::shared_ptr<SessionSlot> slot, int count) {
    Judge& j = *judge;
    for (int i = 0; i < count && !stopping; ++i) {
      Session work;
      {
        std::unique_lock lock(slot->mutex);
        slot->cv.wait(lock, [&] { return slot->waiting_writers == 0 || stopping; });
        if (stopping) break;
        slot->computing = true;
        work = slot->session;
      }
      try {
        step_generation(work, j, [&](const StepProgress& p) {
          std::lock_guard lock(slot->mutex);
          slot->progress = p;
        });
      } catch (const std::exception& e) {
        std::lock_guard lock(slot->mutex);
        const auto* err = dynamic_cast<const Error*>(&e);
        ErrorCode code = err ? err->code() : ErrorCode::internal;
        slot->last_error = json{{"code", to_string(code)}, {"message", e.what()}};
        break;
      }
      std::lock_guard lock(slot->mutex);
      slot->session = std::move(work);
      slot->computing = false;
      try {
        checkpoint(slot->session, slot->dir);
      } catch (const std::exception& e) {
        slot->last_error = json{{"code", "internal"}, {"message", e.what()}};
      }
      slot->cv.notify_all();
    }
    std::lock_guard lock(slot->mutex);
    slot->computing = false;
    slot->busy = false;
    slot->progress = {slot->session.generation_index, "idle", 0, 0};
    slot->cv.notify_all();
  }

  json ranked_json(const std::string& session_id, const RankedGenome& e, int rank) {
    json j = {{"rank", rank},
              {"genome_id", e.id},
              {"rating", e.rating},
              {"render_url", "/sessions/" + session_id + "/render?genome=" + e.id},
              {"genome_url", "/sessions/" + session_id + "/genome/" + e.id}};
    if (!e.thumbnail.empty()) j["thumbnail_url"] = "/sessions/" + session_id + "/" + e.thumbnail;
    return j;
  }

  void routes();

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what(), e.detail());
      } catch (const json::exception& e) {
        send_error(res, ErrorCode::bad_request, "malformed request", e.what());
      } catch (const std::exception& e) {
        send_error(res, ErrorCode::internal, e.what(), "");
      }
    };
  }
};

void Service::Impl::routes() {
  server.Get("/healthz", guarded([this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}, {"judge", judge ? judge->name() : "unavailable"}});
  }));

  server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = body_json(req);
    const std::string ref = field<std::string>(body, "volume");
    auto volume = volume_for(ref);
    EvolutionConfig config = body.contains("config") ? evolution_config_from_json(body.at("config")) : EvolutionConfig{};
    std::optional<Camera> camera;
    if (body.contains("camera")) camera = camera_from_json(body.at("camera"), *volume);
    SessionOptions options = this->config.session_options;
    if (body.contains("render")) {
      const json& r = body.at("render");
      options.render_width = r.value("width", options.render_width);
      options.render_height = r.value("height", options.render_height);
      if (r.contains("settings")) options.render_settings = render_settings_from_json(r.at("settings"));
    }
    Session s = create_session(volume, ref, config, camera, options, random_session_id());
    auto slot = add_session(std::move(s));
    send_json(res, 201, {{"session_id", slot->session.id}});
  }));

  server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    json summary = read_session(*slot, [&](const Session& s) {
      json j = session_summary(s);
      j["busy"] = slot->busy;
      return j;
    });
    send_json(res, 200, summary);
  }));

  server.Post(R"(/sessions/([^/]+)/step)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    const json body = body_json(req);
    const int count = body.contains("count") ? field<int>(body, "count") : 1;
    if (count < 1 || count > 1000) throw bad_request("count must be in [1, 1000]");
    require_judge();
    std::lock_guard lock(slot->mutex);
    if (slot->busy) throw conflict("a step is already running for this session");
    if (slot->worker.joinable()) slot->worker.join();
    slot->busy = true;
    slot->last_error.reset();
    slot->progress = {slot->session.generation_index, "rendering", 0, 0};
    slot->worker = std::thread([this, slot, count] { run_steps(slot, count); });
    send_json(res, 202,
              {{"session_id", slot->session.id}, {"generation", slot->session.generation_index}, {"count", count}});
  }));

  server.Get(R"(/sessions/([^/]+)/progress)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    std::lock_guard lock(slot->mutex);
    json j = {{"generation", slot->progress.generation},
              {"phase", slot->progress.phase},
              {"matches_done", slot->progress.matches_done},
              {"matches_total", slot->progress.matches_total},
              {"busy", slot->busy},
              {"completed_generations", slot->session.generation_index}};
    if (slot->last_error) j["error"] = *slot->last_error;
    send_json(res, 200, j);
  }));

  server.Post(R"(/sessions/([^/]+)/intent)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    const json body = body_json(req);
    const std::string kind = field<std::string>(body, "kind");
    Intent intent;
    if (kind == "text") {
      intent.kind = IntentKind::text;
      intent.text = field<std::string>(body, "text");
    } else if (kind == "image") {
      intent.kind = IntentKind::image;
      intent.text = body.value("text", std::string());
      try {
        intent.reference = decode_png(base64_decode(field<std::string>(body, "image_base64")));
      } catch (const Error& e) {
        throw bad_request("unreadable reference image", e.what());
      }
    } else {
      throw bad_request("kind must be text or image", kind);
    }
    json summary = mutate_session(*slot, [&](Session& s) {
      apply_intent(s, std::move(intent));
      return session_summary(s);
    });
    send_json(res, 200, summary);
  }));

  server.Post(R"(/sessions/([^/]+)/pick)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    const json body = body_json(req);
    const int x = field<int>(body, "x"), y = field<int>(body, "y");
    struct View {
      std::shared_ptr<const VolumeDataset> volume;
      Genome genome;
      Camera camera;
      SessionOptions options;
    };
    View v = read_session(*slot, [&](const Session& s) {
      const Genome& g = body.contains("genome") ? find_genome(s, field<std::string>(body, "genome")) : current_best(s);
      return View{s.volume, g, s.camera, s.options};
    });
    int w = v.options.render_width, h = v.options.render_height;
    if (body.contains("size")) std::tie(w, h) = parse_size(body.at("size").is_string() ? body.at("size").get<std::string>()
                                                                                     : std::to_string(body.at("size").get<int>()));
    if (body.contains("yaw") || body.contains("pitch") || body.contains("dist"))
      v.camera = orbit_camera(*v.volume, body.value("yaw", 35.0), body.value("pitch", 25.0), body.value("dist", 3.0));
    if (x < 0 || y < 0 || x >= w || y >= h) throw bad_request("pixel outside the image");
    try {
      std::size_t gene = pick_feature(*v.volume, v.genome, v.camera, v.options.render_settings, w, h, x, y);
      send_json(res, 200, {{"gene_index", gene}, {"genome_id", v.genome.id}});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::not_found) throw;
      send_error(res, ErrorCode::not_found, e.what(), "no_feature");
    }
  }));

  server.Post(R"(/sessions/([^/]+)/refine)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    const json body = body_json(req);
    const int gene = field<int>(body, "gene_index");
    if (gene < 0) throw bad_request("gene_index must be >= 0");
    const std::string directive = body.value("directive", std::string());
    std::optional<GenomeId> target;
    if (body.contains("genome")) target = field<std::string>(body, "genome");
    json summary = mutate_session(*slot, [&](Session& s) {
      refine_feature(s, static_cast<std::size_t>(gene), directive, target);
      return session_summary(s);
    });
    send_json(res, 200, summary);
  }));

  server.Get(R"(/sessions/([^/]+)/gallery)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    const double k_raw = query_double(req, "k", 8);
    if (k_raw < 0 || k_raw != static_cast<int>(k_raw)) throw bad_request("k must be a non-negative integer");
    const std::string id = req.matches[1];
    json out = read_session(*slot, [&](const Session& s) {
      json entries = json::array();
      int generation = -1;
      for (const auto& r : s.history) {
        if (r.evaluated) generation = r.generation_index;
      }
      // Before the first tournament finishes the gallery is simply empty.
      if (generation < 0) return json{{"generation", generation}, {"entries", entries}};
      int rank = 1;
      for (const auto& e : gallery(s, static_cast<std::size_t>(k_raw))) entries.push_back(ranked_json(id, e, rank++));
      return json{{"generation", generation}, {"entries", entries}};
    });
    send_json(res, 200, out);
  }));

  server.Get(R"(/sessions/([^/]+)/history)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    const std::string id = req.matches[1];
    json out = read_session(*slot, [&](const Session& s) {
      json records = json::array();
      const auto k = static_cast<std::size_t>(s.options.gallery_k);
      for (const auto& r : s.history) {
        json j = to_json(r, k);
        json entries = json::array();
        int rank = 1;
        for (const auto& e : r.top_k(k)) entries.push_back(ranked_json(id, e, rank++));
        j["top_k"] = entries;
        records.push_back(j);
      }
      return json{{"records", records}};
    });
    send_json(res, 200, out);
  }));

  server.Post(R"(/sessions/([^/]+)/rollback)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    const json body = body_json(req);
    const int generation = field<int>(body, "generation");
    Session cloned = read_session(*slot, [&](const Session& s) { return rollback(s, generation, random_session_id()); });
    auto fresh = add_session(std::move(cloned));
    send_json(res, 201, {{"new_session_id", fresh->session.id}});
  }));

  server.Get(R"(/sessions/([^/]+)/render)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    struct View {
      std::shared_ptr<const VolumeDataset> volume;
      Genome genome;
      Camera camera;
      SessionOptions options;
    };
    View v = read_session(*slot, [&](const Session& s) {
      const Genome& g = req.has_param("genome") ? find_genome(s, req.get_param_value("genome")) : current_best(s);
      return View{s.volume, g, s.camera, s.options};
    });
    auto [w, h] = req.has_param("size") ? parse_size(req.get_param_value("size")) : std::pair{512, 512};
    if (req.has_param("yaw") || req.has_param("pitch") || req.has_param("dist")) {
      v.camera = orbit_camera(*v.volume, query_double(req, "yaw", 35.0), query_double(req, "pitch", 25.0),
                              query_double(req, "dist", 3.0));
    }
    RenderedImage img = render(*v.volume, bake_lut(v.genome), v.camera, v.options.render_settings, w, h);
    res.status = 200;
    res.set_content(encode_png(img), "image/png");
  }));

  server.Get(R"(/sessions/([^/]+)/renders/(\d+)/([A-Za-z0-9_-]+)\.png)",
             guarded([this](const httplib::Request& req, httplib::Response& res) {
               auto slot = slot_for(req.matches[1]);
               const fs::path path = slot->dir / "renders" / std::string(req.matches[2]) /
                                     (std::string(req.matches[3]) + ".png");
               if (!fs::exists(path)) throw not_found("no such thumbnail", path.filename().string());
               std::ifstream in(path, std::ios::binary);
               std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
               res.status = 200;
               res.set_content(bytes, "image/png");
             }));

  server.Get(R"(/sessions/([^/]+)/features)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    struct View {
      std::shared_ptr<const VolumeDataset> volume;
      Genome genome;
      Camera camera;
      RenderSettings settings;
    };
    View v = read_session(*slot, [&](const Session& s) {
      const Genome& g = req.has_param("genome") ? find_genome(s, req.get_param_value("genome")) : current_best(s);
      return View{s.volume, g, s.camera, s.options.render_settings};
    });
    auto [w, h] = req.has_param("size") ? parse_size(req.get_param_value("size")) : std::pair{64, 64};
    json features = json::array();
    for (std::size_t i = 0; i < v.genome.genes.size(); ++i) {
      const Gene& g = v.genome.genes[i];
      RenderedImage img = render_feature_isolation(*v.volume, v.genome, i, v.camera, v.settings, w, h);
      features.push_back({{"gene_index", i},
                          {"mu", g.mu},
                          {"sigma", g.sigma},
                          {"w", g.w},
                          {"color", g.color},
                          {"frozen", g.frozen},
                          {"image_base64", base64_encode(encode_png(img))}});
    }
    send_json(res, 200, {{"genome_id", v.genome.id}, {"features", features}});
  }));

  server.Get(R"(/sessions/([^/]+)/genome/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    json g = read_session(*slot, [&](const Session& s) { return to_json(find_genome(s, req.matches[2])); });
    send_json(res, 200, g);
  }));

  server.Put(R"(/sessions/([^/]+)/genome/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    auto slot = slot_for(req.matches[1]);
    json body = body_json(req);
    const std::string gid = req.matches[2];
    if (!body.contains("id")) body["id"] = gid;
    Genome genome = genome_from_json(body);
    if (genome.id != gid) throw bad_request("genome id does not match the path", genome.id);
    json out = mutate_session(*slot, [&](Session& s) {
      override_genome(s, genome);
      return to_json(find_genome(s, gid));
    });
    send_json(res, 200, out);
  }));
}

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() {
  impl_->server.stop();
  impl_.reset();
}

bool Service::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int Service::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool Service::listen_after_bind() { return impl_->server.listen_after_bind(); }

void Service::wait_until_ready() { impl_->server.wait_until_ready(); }

void Service::stop() { impl_->server.stop(); }

void Service::wait_idle() {
  std::vector<std::shared_ptr<SessionSlot>> slots;
  {
    std::lock_guard lock(impl_->registry_mutex);
    for (auto& [id, slot] : impl_->sessions) slots.push_back(slot);
  }
  for (auto& slot : slots) {
    std::unique_lock lock(slot->mutex);
    slot->cv.wait(lock, [&] { return !slot->busy; });
  }
}

}  // namespace tfevolve
