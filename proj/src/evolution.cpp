#include "tfevolve/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tfevolve/error.hpp"

namespace tfevolve {

using nlohmann::json;

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::exploration: return "exploration";
    case Stage::customization: return "customization";
    case Stage::refinement: return "refinement";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  if (name == "exploration") return Stage::exploration;
  if (name == "customization") return Stage::customization;
  if (name == "refinement") return Stage::refinement;
  throw bad_request("unknown stage: " + name);
}

static bool unit(double p) { return p >= 0.0 && p <= 1.0; }

void validate(const EvolutionConfig& c) {
  if (c.population_size < 2) throw bad_request("population_size must be >= 2");
  if (c.max_generations < 1) throw bad_request("max_generations must be >= 1");
  if (c.elitism_count < 0 || c.elitism_count >= c.population_size)
    throw bad_request("elitism_count must be in [0, population_size)");
  if (c.gene_count < 1) throw bad_request("gene_count must be >= 1");
  const auto& m = c.mutation_probs;
  if (!unit(c.crossover_prob) || !unit(c.gene_swap_prob) || !unit(m.height) || !unit(m.width) ||
      !unit(m.position) || !unit(m.color) || !unit(c.mutation_scales.channel_shuffle_prob))
    throw bad_request("probabilities must lie in [0, 1]");
  const auto& s = c.mutation_scales;
  if (s.height_sd < 0 || s.width_logsd < 0 || s.position_sd < 0 || s.color_sd < 0)
    throw bad_request("mutation scales must be non-negative");
  const auto& p = c.pressure;
  if (!(p.min_pressure >= 1.0) || !(p.max_pressure >= p.min_pressure) || !(p.k > 0.0))
    throw bad_request("pressure needs 1 <= min <= max and k > 0");
}

json to_json(const EvolutionConfig& c) {
  return {{"population_size", c.population_size},
          {"max_generations", c.max_generations},
          {"elitism_count", c.elitism_count},
          {"gene_count", c.gene_count},
          {"crossover_prob", c.crossover_prob},
          {"gene_swap_prob", c.gene_swap_prob},
          {"mutation_probs",
           {{"height", c.mutation_probs.height},
            {"width", c.mutation_probs.width},
            {"position", c.mutation_probs.position},
            {"color", c.mutation_probs.color}}},
          {"mutation_scales",
           {{"height_sd", c.mutation_scales.height_sd},
            {"width_logsd", c.mutation_scales.width_logsd},
            {"position_sd", c.mutation_scales.position_sd},
            {"color_sd", c.mutation_scales.color_sd},
            {"channel_shuffle_prob", c.mutation_scales.channel_shuffle_prob}}},
          {"pressure",
           {{"min_p", c.pressure.min_pressure}, {"max_p", c.pressure.max_pressure}, {"k", c.pressure.k}}},
          {"rng_seed", c.rng_seed}};
}

EvolutionConfig evolution_config_from_json(const json& j) {
  if (!j.is_object()) throw bad_request("config must be a JSON object");
  EvolutionConfig c;
  try {
    auto get = [](const json& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get(j, "population_size", c.population_size);
    get(j, "max_generations", c.max_generations);
    get(j, "elitism_count", c.elitism_count);
    get(j, "gene_count", c.gene_count);
    get(j, "crossover_prob", c.crossover_prob);
    get(j, "gene_swap_prob", c.gene_swap_prob);
    get(j, "rng_seed", c.rng_seed);
    if (j.contains("mutation_probs")) {
      const json& m = j.at("mutation_probs");
      get(m, "height", c.mutation_probs.height);
      get(m, "width", c.mutation_probs.width);
      get(m, "position", c.mutation_probs.position);
      get(m, "color", c.mutation_probs.color);
    }
    if (j.contains("mutation_scales")) {
      const json& s = j.at("mutation_scales");
      get(s, "height_sd", c.mutation_scales.height_sd);
      get(s, "width_logsd", c.mutation_scales.width_logsd);
      get(s, "position_sd", c.mutation_scales.position_sd);
      get(s, "color_sd", c.mutation_scales.color_sd);
      get(s, "channel_shuffle_prob", c.mutation_scales.channel_shuffle_prob);
    }
    if (j.contains("pressure")) {
      const json& p = j.at("pressure");
      get(p, "min_p", c.pressure.min_pressure);
      get(p, "max_p", c.pressure.max_pressure);
      get(p, "k", c.pressure.k);
    }
  } catch (const json::exception& e) {
    throw bad_request("malformed config", e.what());
  }
  validate(c);
  return c;
}

double StageSchedule::crossover_at(double progress) const {
  progress = std::clamp(progress, 0.0, 1.0);
  return crossover_start + (crossover_end - crossover_start) * progress;
}

double StageSchedule::mutation_at(double progress) const {
  progress = std::clamp(progress, 0.0, 1.0);
  return mutation_start + (mutation_end - mutation_start) * progress;
}

StageSchedule stage_defaults(Stage stage) {
  switch (stage) {
    case Stage::exploration: return {Stage::exploration, 0.8, 0.4, 0.30, 0.10, 1.0};
    case Stage::customization: return {Stage::customization, 0.6, 0.4, 0.25, 0.15, 0.3};
    case Stage::refinement: return {Stage::refinement, 0.5, 0.5, 0.25, 0.25, 0.3};
  }
  throw bad_request("unknown stage");
}

double stage_progress(int generations_in_stage, int max_generations) {
  if (max_generations < 1) throw bad_request("max_generations must be >= 1");
  return std::min(1.0, std::max(0, generations_in_stage) / static_cast<double>(max_generations));
}

std::pair<Genome, Genome> crossover(const Genome& parent_a, const Genome& parent_b, double gene_swap_prob, Rng& rng,
                                    unsigned forced_groups) {
  if (parent_a.genes.size() != parent_b.genes.size()) throw bad_request("parents differ in gene count");
  if (forced_groups > kSwapAll) throw bad_request("unknown attribute groups");
  Genome a = parent_a, b = parent_b;
  for (std::size_t i = 0; i < a.genes.size(); ++i) {
    if (!rng.bernoulli(gene_swap_prob)) continue;
    unsigned groups = forced_groups != 0 ? forced_groups : static_cast<unsigned>(1 + rng.below(kSwapAll));
    Gene& ga = a.genes[i];
    Gene& gb = b.genes[i];
    if (ga.frozen || gb.frozen) continue;
    if (groups & kSwapColor) std::swap(ga.color, gb.color);
    if (groups & kSwapPosition) std::swap(ga.mu, gb.mu);
    if (groups & kSwapShape) {
      std::swap(ga.sigma, gb.sigma);
      std::swap(ga.w, gb.w);
    }
  }
  return {std::move(a), std::move(b)};
}

Genome mutate(const Genome& genome, const MutationProbs& probs, const MutationScales& scales,
              double position_multiplier, Rng& rng) {
  Genome out = genome;
  for (Gene& g : out.genes) {
    if (g.frozen) continue;
    if (rng.bernoulli(probs.height)) g.w = std::clamp(g.w + rng.normal(0.0, scales.height_sd), 0.0, 1.0);
    if (rng.bernoulli(probs.width))
      g.sigma = std::clamp(g.sigma * std::exp(rng.normal(0.0, scales.width_logsd)), kSigmaMin, kSigmaMax);
    if (rng.bernoulli(probs.position * position_multiplier))
      g.mu = std::clamp(g.mu + rng.normal(0.0, scales.position_sd), 0.0, 1.0);
    if (rng.bernoulli(probs.color)) {
      for (double& ch : g.color) ch = std::clamp(ch + rng.normal(0.0, scales.color_sd), 0.0, 1.0);
      if (rng.bernoulli(scales.channel_shuffle_prob)) {
        for (std::size_t k = 2; k > 0; --k) std::swap(g.color[k], g.color[rng.below(k + 1)]);
      }
    }
  }
  return out;
}

std::vector<std::size_t> select_parents(std::span<const double> fitness, std::size_t count, Rng& rng) {
  if (count == 0) return {};
  if (fitness.empty()) throw bad_request("selection needs a nonempty population");
  std::vector<double> cumulative(fitness.size());
  double total = 0.0;
  for (std::size_t i = 0; i < fitness.size(); ++i) {
    if (!(fitness[i] >= 0.0) || !std::isfinite(fitness[i])) throw bad_request("fitness must be finite and >= 0");
    total += fitness[i];
    cumulative[i] = total;
  }
  if (!(total > 0.0)) throw bad_request("fitness sums to zero");
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    double x = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
    std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), fitness.size() - 1);
    // Skip zero-width slots that upper_bound can land on at the end.
    while (fitness[idx] == 0.0 && idx > 0) --idx;
    out.push_back(idx);
  }
  return out;
}

GenomeId IdSource::next() {
  std::string digits = std::to_string(next_++);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return "g" + digits;
}

std::vector<Genome> next_generation(std::span<const Genome> population, const FitnessVector& fitness,
                                    const EvolutionConfig& config, const StageSchedule& schedule, double progress,
                                    Rng& rng, IdSource& ids) {
  const std::size_t n = population.size();
  if (static_cast<int>(n) != config.population_size) throw bad_request("population size does not match config");
  if (fitness.values.size() != n) throw bad_request("fitness vector does not match population");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fitness.values[a] > fitness.values[b]; });

  std::vector<Genome> next;
  next.reserve(n);
  for (int e = 0; e < config.elitism_count; ++e) next.push_back(population[order[static_cast<std::size_t>(e)]]);

  const double crossover_rate = std::min(1.0, schedule.crossover_at(progress) * config.crossover_prob);
  const double mutation_rate = schedule.mutation_at(progress);
  MutationProbs probs{std::min(1.0, mutation_rate * config.mutation_probs.height),
                      std::min(1.0, mutation_rate * config.mutation_probs.width),
                      std::min(1.0, mutation_rate * config.mutation_probs.position),
                      std::min(1.0, mutation_rate * config.mutation_probs.color)};

  while (next.size() < n) {
    auto parents = select_parents(fitness.values, 2, rng);
    const Genome& pa = population[parents[0]];
    const Genome& pb = population[parents[1]];
    Genome ca, cb;
    if (rng.bernoulli(crossover_rate)) {
      std::tie(ca, cb) = crossover(pa, pb, config.gene_swap_prob, rng);
    } else {
      ca = pa;
      cb = pb;
    }
    for (Genome* child : {&ca, &cb}) {
      if (next.size() >= n) break;
      Genome mutated = mutate(*child, probs, config.mutation_scales, schedule.position_multiplier, rng);
      mutated.id = ids.next();
      next.push_back(std::move(mutated));
    }
  }
  return next;
}

}  // namespace tfevolve
