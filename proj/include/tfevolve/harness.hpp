#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfevolve/evaluator.hpp"
#include "tfevolve/orchestrator.hpp"
#include "tfevolve/tournament.hpp"

namespace tfevolve {

struct SweepConfig {
  std::vector<int> population_sizes{10, 25, 50};
  int max_generations = 10;
  int representatives_k = 10;
  std::vector<std::uint64_t> seeds{1};
  EvolutionConfig base;  // population size, generations and seed are overridden per run
  SessionOptions options;
};

void validate(const SweepConfig& sweep);

struct Snapshot {
  int generation = 0;
  std::int64_t cost = 0;  // judge calls spent before this generation's tournament
  std::vector<Genome> top_k;
};

struct RunResult {
  int population_size = 0;
  std::uint64_t seed = 0;
  std::vector<Snapshot> snapshots;  // generations 0..max_generations
  std::vector<Genome> representatives;  // top-k of the final tournament

  std::string label() const;  // "p<n>_s<seed>"
};

// Judge calls one generation of a size-n run issues.
std::int64_t calls_per_generation(int n);

// Headless exploration for every (population size, seed). With `out`, each
// run leaves a checkpoint and snapshots.json under out/<label>/.
std::vector<RunResult> run_sweep(const SweepConfig& sweep, std::shared_ptr<const VolumeDataset> volume,
                                 const std::string& volume_ref, Judge& judge,
                                 const std::optional<std::filesystem::path>& out = std::nullopt);

struct PoolMember {
  std::string group;
  Genome genome;
};

struct PooledRanking {
  std::vector<int> member_ranks;  // aligned with the input pool
  std::map<std::string, double> mean_rank;  // per group, lower is better
  TournamentResult tournament;
};

// One fresh Swiss tournament over the pool (formal aspects, no intent).
PooledRanking pooled_rank(std::span<const PoolMember> pool, const RenderFn& render, Judge& judge);

// Pools the representatives of each population size.
PooledRanking pooled_rank(std::span<const RunResult> runs, const RenderFn& render, Judge& judge);

struct BudgetPoint {
  int population_size = 0;
  std::int64_t budget = 0;
  double best_mean_rank = 0.0;  // seed average of the best snapshot affordable within budget
};

// Pools every snapshot of every run, ranks once, then reports the running
// best per configuration at each budget level that some snapshot costs.
std::vector<BudgetPoint> budget_curve(std::span<const RunResult> runs, const RenderFn& render, Judge& judge);

std::string ranks_csv(const PooledRanking& ranking, std::span<const RunResult> runs);
std::string budget_csv(std::span<const BudgetPoint> points);

// Renders with the default camera of `volume` and the sweep's image options.
RenderFn sweep_renderer(std::shared_ptr<const VolumeDataset> volume, const SessionOptions& options);

}  // namespace tfevolve
