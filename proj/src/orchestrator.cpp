#include "tfevolve/orchestrator.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "tfevolve/error.hpp"

namespace tfevolve {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw bad_request("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Error conflict(const std::string& message) { return Error(ErrorCode::conflict, message); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw not_found("missing file", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so readers never observe a partial file.
void write_atomic(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::internal, "cannot write", tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::internal, "short write", tmp.string());
  }
  fs::rename(tmp, path);
}

json parse_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw bad_request("corrupt checkpoint file " + path.filename().string(), e.what());
  }
}

const char* intent_kind_name(IntentKind kind) {
  switch (kind) {
    case IntentKind::none: return "none";
    case IntentKind::text: return "text";
    case IntentKind::image: return "image";
  }
  return "none";
}

IntentKind parse_intent_kind(const std::string& s) {
  if (s == "none") return IntentKind::none;
  if (s == "text") return IntentKind::text;
  if (s == "image") return IntentKind::image;
  throw bad_request("unknown intent kind: " + s);
}

GenerationRecord placeholder_record(const Session& s) {
  GenerationRecord r;
  r.generation_index = s.generation_index;
  r.stage = s.stage;
  r.stage_start = s.stage_start;
  r.intent_text = s.intent.text;
  for (const Genome& g : s.population) r.ranking.push_back({g.id, kInitialRating, {}});
  std::sort(r.ranking.begin(), r.ranking.end(),
            [](const RankedGenome& a, const RankedGenome& b) { return a.id < b.id; });
  return r;
}

// Keeps the trailing unevaluated record in step with the live population.
void refresh_placeholder(Session& s) {
  if (!s.history.empty() && !s.history.back().evaluated && s.history.back().generation_index == s.generation_index) {
    s.history.back() = placeholder_record(s);
  } else {
    s.history.push_back(placeholder_record(s));
  }
  for (const Genome& g : s.population) s.archive[g.id] = g;
}

const GenerationRecord* latest_evaluated(const Session& s) {
  for (auto it = s.history.rbegin(); it != s.history.rend(); ++it) {
    if (it->evaluated) return &*it;
  }
  return nullptr;
}

void prune_render_cache(Session& s) {
  std::set<GenomeId> live;
  for (const Genome& g : s.population) live.insert(g.id);
  std::erase_if(s.render_cache, [&](const auto& kv) { return !live.contains(kv.first); });
}

MutationProbs always() { return {1.0, 1.0, 1.0, 1.0}; }

}  // namespace

json to_json(const Camera& c) {
  return {{"position", vec_json(c.position)},
          {"target", vec_json(c.target)},
          {"up", vec_json(c.up)},
          {"vertical_fov", c.vertical_fov},
          {"projection", c.projection == Projection::perspective ? "perspective" : "orthographic"}};
}

Camera camera_from_json(const json& j, const VolumeDataset& volume) {
  if (!j.is_object()) throw bad_request("camera must be a JSON object");
  try {
    Camera c;
    if (j.contains("position")) {
      c.position = vec_from(j.at("position"));
      c.target = j.contains("target") ? vec_from(j.at("target")) : Vec3{0, 0, 0};
      if (j.contains("up")) c.up = vec_from(j.at("up"));
      c.vertical_fov = j.value("vertical_fov", 40.0);
      std::string proj = j.value("projection", std::string("perspective"));
      if (proj == "orthographic") c.projection = Projection::orthographic;
      else if (proj != "perspective") throw bad_request("unknown projection: " + proj);
    } else {
      c = orbit_camera(volume, j.value("yaw", 35.0), j.value("pitch", 25.0), j.value("dist", 3.0),
                       j.value("fov", 40.0));
    }
    validate(c);
    return c;
  } catch (const json::exception& e) {
    throw bad_request("malformed camera", e.what());
  }
}

json to_json(const RenderSettings& s) {
  return {{"step_world", s.step_world},
          {"background", json::array({s.background[0], s.background[1], s.background[2]})},
          {"shading", s.shading == Shading::lambert ? "lambert" : "none"},
          {"early_termination_alpha", s.early_termination_alpha}};
}

RenderSettings render_settings_from_json(const json& j) {
  RenderSettings s;
  try {
    s.step_world = j.value("step_world", s.step_world);
    if (j.contains("background")) s.background = vec_from(j.at("background"));
    std::string shading = j.value("shading", std::string("lambert"));
    if (shading == "none") s.shading = Shading::none;
    else if (shading != "lambert") throw bad_request("unknown shading: " + shading);
    s.early_termination_alpha = j.value("early_termination_alpha", s.early_termination_alpha);
  } catch (const json::exception& e) {
    throw bad_request("malformed render settings", e.what());
  }
  validate(s);
  return s;
}

std::vector<RankedGenome> GenerationRecord::top_k(std::size_t k) const {
  return {ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(std::min(k, ranking.size()))};
}

json to_json(const GenerationRecord& r, std::size_t top_k) {
  json entries = json::array();
  for (const auto& e : r.top_k(top_k)) {
    json item = {{"id", e.id}, {"rating", e.rating}};
    if (!e.thumbnail.empty()) item["thumbnail"] = e.thumbnail;
    entries.push_back(item);
  }
  return {{"generation", r.generation_index}, {"stage", to_string(r.stage)}, {"stage_start", r.stage_start},
          {"evaluated", r.evaluated},         {"intent_text", r.intent_text}, {"top_k", entries}};
}

GenerationRecord generation_record_from_json(const json& j) {
  try {
    GenerationRecord r;
    r.generation_index = j.at("generation").get<int>();
    r.stage = parse_stage(j.at("stage").get<std::string>());
    r.stage_start = j.at("stage_start").get<int>();
    r.evaluated = j.at("evaluated").get<bool>();
    r.intent_text = j.value("intent_text", std::string());
    for (const auto& e : j.at("top_k"))
      r.ranking.push_back({e.at("id").get<std::string>(), e.at("rating").get<double>(), e.value("thumbnail", "")});
    return r;
  } catch (const json::exception& e) {
    throw bad_request("malformed generation record", e.what());
  }
}

Session create_session(std::shared_ptr<const VolumeDataset> volume, std::string volume_ref,
                       const EvolutionConfig& config, std::optional<Camera> camera, const SessionOptions& options,
                       std::string id) {
  if (!volume) throw bad_request("session needs a volume");
  validate(config);
  validate(options.render_settings);
  if (options.render_width < 1 || options.render_height < 1) throw bad_request("render size must be positive");
  if (options.gallery_k < 0) throw bad_request("gallery_k must be >= 0");

  Session s;
  s.id = std::move(id);
  if (!volume_ref.starts_with("synthetic:") && !volume_ref.empty()) volume_ref = fs::absolute(volume_ref).string();
  s.volume_ref = std::move(volume_ref);
  s.camera = camera ? *camera : default_camera(*volume);
  validate(s.camera);
  s.volume = std::move(volume);
  s.config = config;
  s.options = options;
  s.rng = Rng(config.rng_seed);
  for (int i = 0; i < config.population_size; ++i)
    s.population.push_back(random_genome(config.gene_count, s.rng, s.ids.next()));
  refresh_placeholder(s);
  return s;
}

std::vector<Aspect> stage_aspects(const Session& s) {
  return aspects_for(s.intent, s.stage != Stage::exploration);
}

const RenderedImage& render_member(Session& s, const Genome& genome) {
  auto it = s.render_cache.find(genome.id);
  if (it != s.render_cache.end()) return it->second;
  RenderedImage img = render(*s.volume, bake_lut(genome), s.camera, s.options.render_settings,
                             s.options.render_width, s.options.render_height);
  return s.render_cache.emplace(genome.id, std::move(img)).first->second;
}

GenerationRecord step_generation(Session& s, Judge& judge, const StepObserver& observer) {
  const int g = s.generation_index;
  const int n = static_cast<int>(s.population.size());
  StepProgress progress{g, "rendering", 0, 0};
  if (observer) observer(progress);
  for (const Genome& member : s.population) render_member(s, member);

  progress.phase = "tournament";
  TournamentOptions topts;
  topts.on_progress = [&](const TournamentProgress& p) {
    progress.matches_done = p.matches_done;
    progress.matches_total = p.matches_total;
    if (observer) observer(progress);
  };
  const std::vector<Aspect> aspects = stage_aspects(s);
  TournamentResult result = run_tournament(
      s.population, [&](const Genome& gn) { return s.render_cache.at(gn.id); }, judge, aspects, s.intent, topts);

  progress.phase = "selection";
  if (observer) observer(progress);

  GenerationRecord record;
  record.generation_index = g;
  record.stage = s.stage;
  record.stage_start = s.stage_start;
  record.evaluated = true;
  record.intent_text = s.intent.text;
  for (const auto& id : result.ranking) {
    RankedGenome entry{id, result.state.ratings.at(id), {}};
    if (s.dir) {
      entry.thumbnail = "renders/" + std::to_string(g) + "/" + id + ".png";
      write_png(s.render_cache.at(id), *s.dir / entry.thumbnail);
    }
    record.ranking.push_back(std::move(entry));
  }
  for (const auto& m : result.trace) s.trace.push_back({g, m});

  const auto rank_of = result.ranks();
  std::vector<int> ranks;
  for (const Genome& member : s.population) ranks.push_back(rank_of.at(member.id));
  const int in_stage = g - s.stage_start;
  const double pressure = selection_pressure(in_stage, s.config.max_generations, s.config.pressure);
  const FitnessVector fitness = fitness_from_ranks(ranks, n, pressure);
  std::vector<Genome> next =
      next_generation(s.population, fitness, s.config, stage_defaults(s.stage),
                      stage_progress(in_stage, s.config.max_generations), s.rng, s.ids);

  if (!s.history.empty() && s.history.back().generation_index == g) s.history.back() = record;
  else s.history.push_back(record);
  s.population = std::move(next);
  s.generation_index = g + 1;
  prune_render_cache(s);
  refresh_placeholder(s);
  return record;
}

void apply_intent(Session& s, Intent intent) {
  validate(intent);
  if (intent.kind == IntentKind::none) throw bad_request("intent needs text or a reference image");
  const bool first = s.stage == Stage::exploration;
  s.intent = std::move(intent);
  if (first) {
    s.stage = Stage::customization;
    s.stage_start = s.generation_index;

    // Members carried over from the last tournament rank ahead of new offspring.
    std::map<GenomeId, double> rating;
    if (const GenerationRecord* last = latest_evaluated(s)) {
      for (const auto& e : last->ranking) rating[e.id] = e.rating;
    }
    std::vector<std::size_t> order(s.population.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto score = [&](std::size_t i) {
      auto it = rating.find(s.population[i].id);
      return it == rating.end() ? -std::numeric_limits<double>::infinity() : it->second;
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(a) > score(b); });

    const std::size_t elites = static_cast<std::size_t>(s.config.elitism_count);
    const std::size_t sources = std::max<std::size_t>(1, elites);
    const std::size_t reseed = (s.population.size() - elites) / 3;
    const double position_multiplier = stage_defaults(Stage::customization).position_multiplier;
    for (std::size_t r = 0; r < reseed; ++r) {
      const std::size_t slot = order[order.size() - 1 - r];
      Genome variant = mutate(s.population[order[r % sources]], always(), s.config.mutation_scales,
                              position_multiplier, s.rng);
      variant.id = s.ids.next();
      s.population[slot] = std::move(variant);
    }
    prune_render_cache(s);
  }
  refresh_placeholder(s);
}

const Genome& current_best(const Session& s) {
  if (const GenerationRecord* last = latest_evaluated(s)) return s.archive.at(last->ranking.front().id);
  if (s.population.empty()) throw Error(ErrorCode::internal, "session has no population");
  return s.population.front();
}

const Genome& find_genome(const Session& s, const GenomeId& id) {
  for (const Genome& g : s.population) {
    if (g.id == id) return g;
  }
  auto it = s.archive.find(id);
  if (it == s.archive.end()) throw not_found("unknown genome", id);
  return it->second;
}

void refine_feature(Session& s, std::size_t gene_index, const std::string& directive, std::optional<GenomeId> target) {
  Genome base = target ? find_genome(s, *target) : current_best(s);
  if (gene_index >= base.genes.size()) throw bad_request("gene_index out of range", std::to_string(gene_index));

  s.frozen_gene_indices.clear();
  for (std::size_t i = 0; i < base.genes.size(); ++i) {
    base.genes[i].frozen = i != gene_index;
    if (i != gene_index) s.frozen_gene_indices.insert(i);
  }
  const double position_multiplier = stage_defaults(Stage::refinement).position_multiplier;
  std::vector<Genome> next;
  next.push_back(base);
  while (next.size() < s.population.size()) {
    Genome variant = mutate(base, always(), s.config.mutation_scales, position_multiplier, s.rng);
    variant.id = s.ids.next();
    next.push_back(std::move(variant));
  }
  s.population = std::move(next);
  s.stage = Stage::refinement;
  s.stage_start = s.generation_index;
  if (!directive.empty()) {
    s.intent.text = s.intent.text.empty() ? directive : s.intent.text + "; " + directive;
    if (s.intent.kind == IntentKind::none) s.intent.kind = IntentKind::text;
  }
  prune_render_cache(s);
  refresh_placeholder(s);
}

std::vector<RankedGenome> gallery(const Session& s, std::size_t k) {
  const GenerationRecord* last = latest_evaluated(s);
  if (!last) throw conflict("no generation has been evaluated yet");
  return last->top_k(k);
}

void override_genome(Session& s, const Genome& genome) {
  validate(genome);
  for (Genome& member : s.population) {
    if (member.id != genome.id) continue;
    if (member.genes.size() != genome.genes.size()) throw bad_request("gene count must stay the same");
    member = genome;
    s.render_cache.erase(genome.id);
    s.archive[genome.id] = genome;
    return;
  }
  throw not_found("genome is not in the current population", genome.id);
}

void checkpoint(const Session& s, const fs::path& dir) {
  fs::create_directories(dir / "genomes");
  for (const auto& [id, g] : s.archive) write_atomic(dir / "genomes" / (id + ".json"), serialize(g));

  json history = json::array();
  for (const auto& r : s.history) history.push_back(to_json(r, std::numeric_limits<std::size_t>::max()));
  write_atomic(dir / "history.json", history.dump(2));

  std::string trace;
  for (const auto& t : s.trace) {
    json line = to_json(t.match);
    line["generation"] = t.generation;
    trace += line.dump() + "\n";
  }
  write_atomic(dir / "trace.jsonl", trace);

  const bool has_reference = s.intent.reference.has_value();
  if (has_reference) write_atomic(dir / "intent_reference.png", encode_png(*s.intent.reference));

  json population = json::array();
  for (const Genome& g : s.population) population.push_back(g.id);
  json session = {
      {"version", kCheckpointVersion},
      {"id", s.id},
      {"volume", s.volume_ref},
      {"camera", to_json(s.camera)},
      {"config", to_json(s.config)},
      {"render",
       {{"width", s.options.render_width},
        {"height", s.options.render_height},
        {"settings", to_json(s.options.render_settings)},
        {"gallery_k", s.options.gallery_k}}},
      {"stage", to_string(s.stage)},
      {"stage_start", s.stage_start},
      {"intent", {{"kind", intent_kind_name(s.intent.kind)}, {"text", s.intent.text}, {"has_reference", has_reference}}},
      {"generation", s.generation_index},
      {"population", population},
      {"frozen_gene_indices", s.frozen_gene_indices},
      {"rng_state", s.rng.state()},
      {"next_id", s.ids.peek()},
  };
  write_atomic(dir / "session.json", session.dump(2));
}

Session restore(const fs::path& dir) {
  if (!fs::exists(dir / "session.json")) throw not_found("no checkpoint", dir.string());
  const json j = parse_json_file(dir / "session.json");
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw bad_request("checkpoint version mismatch", std::to_string(j.at("version").get<int>()));
    Session s;
    s.id = j.at("id").get<std::string>();
    s.volume_ref = j.at("volume").get<std::string>();
    s.volume = std::make_shared<const VolumeDataset>(open_volume(s.volume_ref));
    s.camera = camera_from_json(j.at("camera"), *s.volume);
    s.config = evolution_config_from_json(j.at("config"));
    const json& render = j.at("render");
    s.options.render_width = render.at("width").get<int>();
    s.options.render_height = render.at("height").get<int>();
    s.options.render_settings = render_settings_from_json(render.at("settings"));
    s.options.gallery_k = render.value("gallery_k", 8);
    s.stage = parse_stage(j.at("stage").get<std::string>());
    s.stage_start = j.at("stage_start").get<int>();
    const json& intent = j.at("intent");
    s.intent.kind = parse_intent_kind(intent.at("kind").get<std::string>());
    s.intent.text = intent.at("text").get<std::string>();
    if (intent.at("has_reference").get<bool>()) s.intent.reference = read_png(dir / "intent_reference.png");
    s.generation_index = j.at("generation").get<int>();
    s.frozen_gene_indices = j.at("frozen_gene_indices").get<std::set<std::size_t>>();
    s.rng.restore_state(j.at("rng_state").get<std::string>());
    s.ids = IdSource(j.at("next_id").get<std::uint64_t>());

    for (const auto& entry : fs::directory_iterator(dir / "genomes")) {
      if (entry.path().extension() != ".json" || entry.path().string().ends_with(".tmp")) continue;
      Genome g = deserialize(read_file(entry.path()));
      s.archive[g.id] = std::move(g);
    }
    for (const auto& id : j.at("population")) {
      auto it = s.archive.find(id.get<std::string>());
      if (it == s.archive.end()) throw bad_request("checkpoint is missing a genome", id.get<std::string>());
      s.population.push_back(it->second);
    }
    for (const auto& r : parse_json_file(dir / "history.json")) s.history.push_back(generation_record_from_json(r));

    std::istringstream trace(read_file(dir / "trace.jsonl"));
    std::string line;
    while (std::getline(trace, line)) {
      if (line.empty()) continue;
      const json m = json::parse(line);
      MatchRecord rec;
      rec.round = m.at("round").get<int>();
      rec.id_a = m.at("id_a").get<std::string>();
      rec.id_b = m.at("id_b").get<std::string>();
      const std::string outcome = m.at("outcome").get<std::string>();
      rec.outcome = outcome == "A" ? Winner::A : outcome == "B" ? Winner::B : Winner::Tie;
      rec.delta = m.at("delta").get<double>();
      rec.rating_a_after = m.at("ratings_after").at(rec.id_a).get<double>();
      rec.rating_b_after = m.at("ratings_after").at(rec.id_b).get<double>();
      rec.degraded = m.value("degraded", false);
      s.trace.push_back({m.at("generation").get<int>(), rec});
    }
    s.dir = dir;
    return s;
  } catch (const json::exception& e) {
    throw bad_request("corrupt checkpoint", e.what());
  }
}

Session rollback(const Session& src, int generation, std::string new_id) {
  if (generation < 0 || generation >= static_cast<int>(src.history.size()))
    throw not_found("no such generation", std::to_string(generation));
  const GenerationRecord& record = src.history[static_cast<std::size_t>(generation)];

  Session s;
  s.id = std::move(new_id);
  s.volume_ref = src.volume_ref;
  s.volume = src.volume;
  s.camera = src.camera;
  s.config = src.config;
  s.options = src.options;
  s.stage = record.stage;
  s.stage_start = record.stage_start;
  if (!record.intent_text.empty()) {
    s.intent.kind = IntentKind::text;
    s.intent.text = record.intent_text;
  }
  if (record.stage != Stage::exploration && src.intent.reference) {
    s.intent.reference = src.intent.reference;
    if (record.intent_text.empty()) s.intent.kind = IntentKind::image;
  }
  s.generation_index = generation;
  s.archive = src.archive;
  for (const auto& e : record.ranking) s.population.push_back(s.archive.at(e.id));
  if (s.stage == Stage::refinement && !s.population.empty()) {
    const auto& genes = s.population.front().genes;
    for (std::size_t i = 0; i < genes.size(); ++i) {
      if (genes[i].frozen) s.frozen_gene_indices.insert(i);
    }
  }
  s.history.assign(src.history.begin(), src.history.begin() + generation);
  for (const auto& t : src.trace) {
    if (t.generation < generation) s.trace.push_back(t);
  }
  s.rng = Rng(mix_seed(src.config.rng_seed, static_cast<std::uint64_t>(generation) + 1));
  s.ids = src.ids;
  refresh_placeholder(s);
  return s;
}

json session_summary(const Session& s) {
  json intent = {{"kind", intent_kind_name(s.intent.kind)},
                 {"text", s.intent.text},
                 {"has_reference", s.intent.reference.has_value()}};
  const GenerationRecord* last = latest_evaluated(s);
  return {{"session_id", s.id},
          {"volume", s.volume_ref},
          {"stage", to_string(s.stage)},
          {"generation", s.generation_index},
          {"intent", intent},
          {"frozen_gene_indices", s.frozen_gene_indices},
          {"population_size", s.population.size()},
          {"config", to_json(s.config)},
          {"camera", to_json(s.camera)},
          {"render_size", {s.options.render_width, s.options.render_height}},
          {"best_genome", last ? json(last->ranking.front().id) : json(nullptr)}};
}

}  // namespace tfevolve
