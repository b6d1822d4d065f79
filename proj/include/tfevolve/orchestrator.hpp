#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tfevolve/evaluator.hpp"
#include "tfevolve/evolution.hpp"
#include "tfevolve/renderer.hpp"
#include "tfevolve/tournament.hpp"
#include "tfevolve/volume.hpp"

namespace tfevolve {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const Camera& camera);
// Accepts {position, target, up, vertical_fov, projection} or an orbit
// {yaw, pitch, dist, fov?} around `volume`.
Camera camera_from_json(const nlohmann::json& j, const VolumeDataset& volume);

nlohmann::json to_json(const RenderSettings& settings);
RenderSettings render_settings_from_json(const nlohmann::json& j);

struct RankedGenome {
  GenomeId id;
  double rating = kInitialRating;
  std::string thumbnail;  // path relative to the session directory; empty when not written
};

struct GenerationRecord {
  int generation_index = 0;
  Stage stage = Stage::exploration;
  int stage_start = 0;
  bool evaluated = false;  // false until this generation's tournament has run
  std::vector<RankedGenome> ranking;  // whole population, rating descending
  std::string intent_text;

  // First min(k, n) entries of the ranking.
  std::vector<RankedGenome> top_k(std::size_t k) const;
};

nlohmann::json to_json(const GenerationRecord& record, std::size_t top_k);
GenerationRecord generation_record_from_json(const nlohmann::json& j);

struct SessionOptions {
  int render_width = 256;  // tournament renders double as gallery thumbnails
  int render_height = 256;
  RenderSettings render_settings;
  int gallery_k = 8;
};

struct TracedMatch {
  int generation = 0;
  MatchRecord match;
};

struct Session {
  std::string id;
  std::string volume_ref;
  std::shared_ptr<const VolumeDataset> volume;
  Camera camera;
  EvolutionConfig config;
  SessionOptions options;

  Stage stage = Stage::exploration;
  int stage_start = 0;  // generation index at which the current stage began
  Intent intent;
  int generation_index = 0;
  std::vector<Genome> population;
  std::set<std::size_t> frozen_gene_indices;

  std::vector<GenerationRecord> history;
  std::vector<TracedMatch> trace;
  std::map<GenomeId, Genome> archive;  // every genome that appeared in a record

  Rng rng;
  IdSource ids;

  // When set, thumbnails are written under <dir>/renders/<gen>/.
  std::optional<std::filesystem::path> dir;

  // Renders of the current population, keyed by genome id.
  std::map<GenomeId, RenderedImage> render_cache;
};

// Population of config.population_size stratified random genomes, stage
// exploration, history holding the generation-0 record.
Session create_session(std::shared_ptr<const VolumeDataset> volume, std::string volume_ref,
                       const EvolutionConfig& config, std::optional<Camera> camera = std::nullopt,
                       const SessionOptions& options = {}, std::string id = "session");

struct StepProgress {
  int generation = 0;
  std::string phase;  // rendering | tournament | selection
  int matches_done = 0;
  int matches_total = 0;
};

using StepObserver = std::function<void(const StepProgress&)>;

// Aspects the tournament uses in the session's current stage.
std::vector<Aspect> stage_aspects(const Session& session);

const RenderedImage& render_member(Session& session, const Genome& genome);

// One Trial-Insight-Replanning cycle: tournament on the current generation,
// then breed the next. Returns the completed record.
GenerationRecord step_generation(Session& session, Judge& judge, const StepObserver& observer = {});

// Stores the intent (last write wins). The first intent moves an exploring
// session to customization and re-seeds a third of the non-elite members
// from mutated elites.
void apply_intent(Session& session, Intent intent);

// Genome the user is looking at: rank 1 of the latest tournament, or the
// first member before any tournament.
const Genome& current_best(const Session& session);

const Genome& find_genome(const Session& session, const GenomeId& id);

// Freezes every gene except `gene_index` and continues from `target`
// (default current_best): the target is kept and the remaining members are
// variants of it differing only in the selected gene.
void refine_feature(Session& session, std::size_t gene_index, const std::string& directive,
                    std::optional<GenomeId> target = std::nullopt);

// Top-k of the latest completed tournament. Throws conflict before the
// first one.
std::vector<RankedGenome> gallery(const Session& session, std::size_t k);

// Replaces a genome in the current population (manual override).
void override_genome(Session& session, const Genome& genome);

void checkpoint(const Session& session, const std::filesystem::path& dir);
Session restore(const std::filesystem::path& dir);

// New session continuing from the population of `generation`.
Session rollback(const Session& session, int generation, std::string new_id);

nlohmann::json session_summary(const Session& session);

}  // namespace tfevolve
