#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tfevolve/genome.hpp"
#include "tfevolve/rng.hpp"
#include "tfevolve/tournament.hpp"

namespace tfevolve {

enum class Stage { exploration, customization, refinement };

const char* to_string(Stage stage);
Stage parse_stage(const std::string& name);

// Per-operator factors applied to the stage's current mutation rate.
struct MutationProbs {
  double height = 1.0;
  double width = 1.0;
  double position = 1.0;
  double color = 1.0;
};

struct MutationScales {
  double height_sd = 0.1;
  double width_logsd = 0.2;
  double position_sd = 0.05;
  double color_sd = 0.1;
  double channel_shuffle_prob = 0.1;
};

struct EvolutionConfig {
  int population_size = 25;
  int max_generations = 20;
  int elitism_count = 2;
  int gene_count = kDefaultGeneCount;
  double crossover_prob = 1.0;  // factor on the stage's crossover rate
  double gene_swap_prob = 0.5;
  MutationProbs mutation_probs;
  MutationScales mutation_scales;
  PressureSchedule pressure;
  std::uint64_t rng_seed = 1;
};

// Throws bad_request on any out-of-range field.
void validate(const EvolutionConfig& config);

nlohmann::json to_json(const EvolutionConfig& config);
// Missing fields keep their defaults.
EvolutionConfig evolution_config_from_json(const nlohmann::json& j);

struct StageSchedule {
  Stage stage = Stage::exploration;
  double crossover_start = 0.8;
  double crossover_end = 0.4;
  double mutation_start = 0.3;
  double mutation_end = 0.1;
  double position_multiplier = 1.0;

  // progress in [0, 1]; linear interpolation between start and end.
  double crossover_at(double progress) const;
  double mutation_at(double progress) const;
};

StageSchedule stage_defaults(Stage stage);

// min(1, generations_in_stage / max_generations)
double stage_progress(int generations_in_stage, int max_generations);

// Attribute groups exchanged by crossover, as bit flags.
inline constexpr unsigned kSwapColor = 1u;
inline constexpr unsigned kSwapPosition = 2u;
inline constexpr unsigned kSwapShape = 4u;
inline constexpr unsigned kSwapAll = kSwapColor | kSwapPosition | kSwapShape;

// Positional gene-wise exchange. `forced_groups` (nonzero) replaces the
// random subset choice. Indices where either parent's gene is frozen are
// left untouched.
std::pair<Genome, Genome> crossover(const Genome& parent_a, const Genome& parent_b, double gene_swap_prob, Rng& rng,
                                    unsigned forced_groups = 0);

// `probs` are the actual per-gene probabilities of each operator; the
// position probability is further scaled by `position_multiplier`.
Genome mutate(const Genome& genome, const MutationProbs& probs, const MutationScales& scales,
              double position_multiplier, Rng& rng);

// Roulette wheel with replacement; returns population indices.
std::vector<std::size_t> select_parents(std::span<const double> fitness, std::size_t count, Rng& rng);

// Issues fresh offspring ids "g000001", "g000002", ...
class IdSource {
 public:
  explicit IdSource(std::uint64_t next = 1) : next_(next) {}
  GenomeId next();
  std::uint64_t peek() const { return next_; }

 private:
  std::uint64_t next_;
};

// Elites (highest fitness) are copied verbatim, ids included; the rest are
// roulette-bred offspring with fresh ids.
std::vector<Genome> next_generation(std::span<const Genome> population, const FitnessVector& fitness,
                                    const EvolutionConfig& config, const StageSchedule& schedule, double progress,
                                    Rng& rng, IdSource& ids);

}  // namespace tfevolve
