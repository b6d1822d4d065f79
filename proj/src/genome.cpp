#include "tfevolve/genome.hpp"

#include <algorithm>
#include <cmath>

#include "tfevolve/error.hpp"

namespace tfevolve {

using nlohmann::json;

double Gene::contribution(double v) const {
  const double d = v - mu;
  return w * std::exp(-(d * d) / (2.0 * sigma * sigma));
}

bool satisfies_invariants(const Gene& g) {
  const auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  return unit(g.mu) && g.sigma >= kSigmaMin && g.sigma <= kSigmaMax && unit(g.w) && unit(g.color[0]) &&
         unit(g.color[1]) && unit(g.color[2]);
}

bool same_genes(const Genome& a, const Genome& b) { return a.genes == b.genes; }

void validate(const Genome& genome) {
  if (genome.genes.empty()) throw bad_request("genome has no genes");
  for (std::size_t i = 0; i < genome.genes.size(); ++i) {
    if (!satisfies_invariants(genome.genes[i])) {
      throw bad_request("gene " + std::to_string(i) + " out of range",
                        "mu, w and color in [0,1]; sigma in [0.005, 0.25]");
    }
  }
}

double opacity_at(const Genome& genome, double v) {
  double sum = 0.0;
  for (const Gene& g : genome.genes) sum += g.contribution(v);
  return std::clamp(sum, 0.0, 1.0);
}

Rgb color_at(const Genome& genome, double v) {
  double total = 0.0;
  Rgb c{0.0, 0.0, 0.0};
  for (const Gene& g : genome.genes) {
    const double k = g.contribution(v);
    total += k;
    for (int ch = 0; ch < 3; ++ch) c[ch] += k * g.color[ch];
  }
  if (total < 1e-6) return {0.0, 0.0, 0.0};
  for (double& ch : c) ch = std::clamp(ch / total, 0.0, 1.0);
  return c;
}

TransferFunctionLUT bake_lut(const Genome& genome, int resolution) {
  if (resolution < 2) throw bad_request("LUT resolution must be >= 2");
  TransferFunctionLUT lut;
  lut.entries.resize(static_cast<std::size_t>(resolution));
  for (int k = 0; k < resolution; ++k) {
    const double v = static_cast<double>(k) / (resolution - 1);
    lut.entries[static_cast<std::size_t>(k)] = {color_at(genome, v), opacity_at(genome, v)};
  }
  return lut;
}

Genome random_genome(int n, Rng& rng, GenomeId id) {
  if (n < 1) throw bad_request("a genome needs at least one gene");
  Genome genome{std::move(id), {}};
  genome.genes.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Gene g;
    g.mu = rng.uniform(static_cast<double>(i) / n, static_cast<double>(i + 1) / n);
    g.sigma = rng.uniform(0.02, 0.12);
    g.w = rng.uniform(0.05, 0.9);
    for (double& ch : g.color) ch = rng.uniform();
    genome.genes.push_back(g);
  }
  return genome;
}

Genome random_genome(int n, std::uint64_t seed) {
  Rng rng(seed);
  return random_genome(n, rng, "seed-" + std::to_string(seed));
}

Genome isolate_gene(const Genome& genome, std::size_t gene_index) {
  if (gene_index >= genome.genes.size()) throw bad_request("gene index out of range");
  Genome isolated = genome;
  for (std::size_t i = 0; i < isolated.genes.size(); ++i) {
    if (i != gene_index) isolated.genes[i].w = 0.0;
  }
  return isolated;
}

json to_json(const Genome& genome) {
  json genes = json::array();
  for (const Gene& g : genome.genes) {
    genes.push_back({{"mu", g.mu}, {"sigma", g.sigma}, {"w", g.w}, {"color", g.color}, {"frozen", g.frozen}});
  }
  return {{"id", genome.id}, {"genes", genes}};
}

Genome genome_from_json(const json& j) {
  Genome genome;
  try {
    genome.id = j.at("id").get<std::string>();
    for (const json& jg : j.at("genes")) {
      Gene g;
      g.mu = jg.at("mu").get<double>();
      g.sigma = jg.at("sigma").get<double>();
      g.w = jg.at("w").get<double>();
      g.color = jg.at("color").get<Rgb>();
      g.frozen = jg.value("frozen", false);
      genome.genes.push_back(g);
    }
  } catch (const json::exception& e) {
    throw bad_request("malformed genome", e.what());
  }
  validate(genome);
  return genome;
}

// nlohmann/json prints doubles with round-trip precision, so the text form
// is lossless.
std::string serialize(const Genome& genome) { return to_json(genome).dump(2); }

Genome deserialize(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw bad_request("malformed genome", e.what());
  }
  return genome_from_json(j);
}

}  // namespace tfevolve
