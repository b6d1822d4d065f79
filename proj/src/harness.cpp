#include "tfevolve/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <thread>

#include "tfevolve/error.hpp"

namespace tfevolve {

using nlohmann::json;
namespace fs = std::filesystem;

void validate(const SweepConfig& sweep) {
  if (sweep.population_sizes.empty()) throw bad_request("sweep needs at least one population size");
  if (sweep.seeds.empty()) throw bad_request("sweep needs at least one seed");
  if (sweep.max_generations < 0) throw bad_request("max_generations must be >= 0");
  int smallest = *std::min_element(sweep.population_sizes.begin(), sweep.population_sizes.end());
  if (smallest < 2) throw bad_request("population sizes must be >= 2");
  if (sweep.representatives_k < 1 || sweep.representatives_k > smallest)
    throw bad_request("representatives_k must be in [1, smallest population]");
}

std::string RunResult::label() const { return "p" + std::to_string(population_size) + "_s" + std::to_string(seed); }

std::int64_t calls_per_generation(int n) { return static_cast<std::int64_t>(n / 2) * swiss_rounds(n); }

RenderFn sweep_renderer(std::shared_ptr<const VolumeDataset> volume, const SessionOptions& options) {
  Camera camera = default_camera(*volume);
  return [volume, options, camera](const Genome& g) {
    return render(*volume, bake_lut(g), camera, options.render_settings, options.render_width,
                  options.render_height);
  };
}

namespace {

std::vector<Genome> top_genomes(const Session& s, const std::vector<GenomeId>& ranking, std::size_t k) {
  std::vector<Genome> out;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) out.push_back(find_genome(s, ranking[i]));
  return out;
}

RunResult run_one(const SweepConfig& sweep, int n, std::uint64_t seed, std::shared_ptr<const VolumeDataset> volume,
                  const std::string& volume_ref, Judge& judge, const std::optional<fs::path>& out) {
  EvolutionConfig config = sweep.base;
  config.population_size = n;
  config.max_generations = std::max(1, sweep.max_generations);
  config.rng_seed = seed;
  config.elitism_count = std::min(config.elitism_count, n - 1);
  RunResult run;
  run.population_size = n;
  run.seed = seed;
  Session s = create_session(volume, volume_ref, config, std::nullopt, sweep.options, run.label());
  const auto k = static_cast<std::size_t>(sweep.representatives_k);
  const std::int64_t per_gen = calls_per_generation(n);

  for (int g = 0; g < sweep.max_generations; ++g) {
    GenerationRecord record = step_generation(s, judge);
    std::vector<GenomeId> ids;
    for (const auto& e : record.ranking) ids.push_back(e.id);
    run.snapshots.push_back({g, g * per_gen, top_genomes(s, ids, k)});
  }
  // The final population still needs its own tournament.
  for (const Genome& member : s.population) render_member(s, member);
  TournamentResult last = run_tournament(
      s.population, [&](const Genome& gn) { return s.render_cache.at(gn.id); }, judge, stage_aspects(s), s.intent);
  run.snapshots.push_back({sweep.max_generations, sweep.max_generations * per_gen, top_genomes(s, last.ranking, k)});
  run.representatives = run.snapshots.back().top_k;

  if (out) {
    fs::path dir = *out / run.label();
    checkpoint(s, dir);
    json snaps = json::array();
    for (const auto& snap : run.snapshots) {
      json ids = json::array();
      for (const auto& g : snap.top_k) ids.push_back(g.id);
      snaps.push_back({{"generation", snap.generation}, {"cost", snap.cost}, {"top_k", ids}});
    }
    std::ofstream(dir / "snapshots.json") << snaps.dump(2) << "\n";
  }
  return run;
}

}  // namespace

std::vector<RunResult> run_sweep(const SweepConfig& sweep, std::shared_ptr<const VolumeDataset> volume,
                                 const std::string& volume_ref, Judge& judge, const std::optional<fs::path>& out) {
  validate(sweep);
  if (!volume) throw bad_request("sweep needs a volume");
  std::vector<std::pair<int, std::uint64_t>> jobs;
  for (int n : sweep.population_sizes) {
    for (std::uint64_t seed : sweep.seeds) jobs.emplace_back(n, seed);
  }
  std::vector<RunResult> results(jobs.size());
  if (judge.concurrent() && std::thread::hardware_concurrency() > 1) {
    std::vector<std::future<RunResult>> pending;
    for (const auto& [n, seed] : jobs)
      pending.push_back(std::async(std::launch::async, run_one, std::cref(sweep), n, seed, volume,
                                   std::cref(volume_ref), std::ref(judge), std::cref(out)));
    for (std::size_t i = 0; i < pending.size(); ++i) results[i] = pending[i].get();
  } else {
    for (std::size_t i = 0; i < jobs.size(); ++i)
      results[i] = run_one(sweep, jobs[i].first, jobs[i].second, volume, volume_ref, judge, out);
  }
  return results;
}

PooledRanking pooled_rank(std::span<const PoolMember> pool, const RenderFn& render_fn, Judge& judge) {
  if (pool.size() < 2) throw bad_request("pool needs at least two members");
  std::vector<Genome> entrants;
  entrants.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    Genome g = pool[i].genome;
    char id[24];
    std::snprintf(id, sizeof id, "m%06zu", i);
    g.id = id;
    entrants.push_back(std::move(g));
  }
  PooledRanking out;
  const std::vector<Aspect> aspects = formal_aspects();
  out.tournament = run_tournament(entrants, render_fn, judge, aspects, Intent{});
  const auto ranks = out.tournament.ranks();
  std::map<std::string, std::pair<double, int>> sums;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    int r = ranks.at(entrants[i].id);
    out.member_ranks.push_back(r);
    auto& [sum, count] = sums[pool[i].group];
    sum += r;
    ++count;
  }
  for (const auto& [group, sc] : sums) out.mean_rank[group] = sc.first / sc.second;
  return out;
}

PooledRanking pooled_rank(std::span<const RunResult> runs, const RenderFn& render_fn, Judge& judge) {
  std::vector<PoolMember> pool;
  for (const auto& run : runs) {
    for (const auto& g : run.representatives) pool.push_back({std::to_string(run.population_size), g});
  }
  return pooled_rank(pool, render_fn, judge);
}

std::vector<BudgetPoint> budget_curve(std::span<const RunResult> runs, const RenderFn& render_fn, Judge& judge) {
  // Genomes recur across snapshots of one run (elites), so pool each once.
  std::vector<PoolMember> pool;
  std::map<std::string, std::size_t> slot;
  for (const auto& run : runs) {
    for (const auto& snap : run.snapshots) {
      for (const auto& g : snap.top_k) {
        std::string key = run.label() + "/" + g.id;
        if (slot.emplace(key, pool.size()).second) pool.push_back({key, g});
      }
    }
  }
  const PooledRanking ranking = pooled_rank(pool, render_fn, judge);

  std::set<std::int64_t> budgets;
  for (const auto& run : runs) {
    for (const auto& snap : run.snapshots) budgets.insert(snap.cost);
  }

  std::vector<int> sizes;
  for (const auto& run : runs) {
    if (std::find(sizes.begin(), sizes.end(), run.population_size) == sizes.end()) sizes.push_back(run.population_size);
  }

  std::vector<BudgetPoint> out;
  for (int n : sizes) {
    for (std::int64_t budget : budgets) {
      double total = 0.0;
      int seeds = 0;
      for (const auto& run : runs) {
        if (run.population_size != n) continue;
        double best = 0.0;
        bool any = false;
        for (const auto& snap : run.snapshots) {
          if (snap.cost > budget || snap.top_k.empty()) continue;
          double sum = 0.0;
          for (const auto& g : snap.top_k) sum += ranking.member_ranks[slot.at(run.label() + "/" + g.id)];
          double mean = sum / static_cast<double>(snap.top_k.size());
          if (!any || mean < best) best = mean;
          any = true;
        }
        if (any) {
          total += best;
          ++seeds;
        }
      }
      if (seeds > 0) out.push_back({n, budget, total / seeds});
    }
  }
  return out;
}

std::string ranks_csv(const PooledRanking& ranking, std::span<const RunResult> runs) {
  std::map<std::string, int> members;
  for (const auto& run : runs) members[std::to_string(run.population_size)] += static_cast<int>(run.representatives.size());
  std::vector<std::pair<int, std::string>> order;
  for (const auto& [group, mean] : ranking.mean_rank) order.emplace_back(std::stoi(group), group);
  std::sort(order.begin(), order.end());
  std::ostringstream out;
  out << "population_size,members,mean_rank,pool_size\n";
  for (const auto& [n, group] : order) {
    char mean[32];
    std::snprintf(mean, sizeof mean, "%.4f", ranking.mean_rank.at(group));
    out << n << "," << members[group] << "," << mean << "," << ranking.member_ranks.size() << "\n";
  }
  return out.str();
}

std::string budget_csv(std::span<const BudgetPoint> points) {
  std::ostringstream out;
  out << "population_size,budget,best_mean_rank\n";
  for (const auto& p : points) {
    char mean[32];
    std::snprintf(mean, sizeof mean, "%.4f", p.best_mean_rank);
    out << p.population_size << "," << p.budget << "," << mean << "\n";
  }
  return out.str();
}

}  // namespace tfevolve
