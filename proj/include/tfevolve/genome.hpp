#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfevolve/rng.hpp"

namespace tfevolve {

inline constexpr double kSigmaMin = 0.005;
inline constexpr double kSigmaMax = 0.25;
inline constexpr int kDefaultGeneCount = 5;
inline constexpr int kDefaultLutResolution = 256;

using Rgb = std::array<double, 3>;

// One Gaussian component of the mixture.
struct Gene {
  double mu = 0.5;      // centre, normalized data value
  double sigma = 0.05;  // width
  double w = 0.5;       // peak opacity contribution
  Rgb color{1.0, 1.0, 1.0};
  bool frozen = false;

  double contribution(double v) const;

  friend bool operator==(const Gene&, const Gene&) = default;
};

bool satisfies_invariants(const Gene& gene);

using GenomeId = std::string;

struct Genome {
  GenomeId id;
  std::vector<Gene> genes;

  friend bool operator==(const Genome&, const Genome&) = default;
};

// Same gene values and flags, ignoring the id.
bool same_genes(const Genome& a, const Genome& b);

// Throws bad_request on an empty gene list or any out-of-range field.
void validate(const Genome& genome);

// clamp(sum_i w_i exp(-(v - mu_i)^2 / (2 sigma_i^2)), 0, 1)
double opacity_at(const Genome& genome, double v);

// Contribution-weighted blend of gene colours; black where the total
// contribution is below 1e-6.
Rgb color_at(const Genome& genome, double v);

struct LutEntry {
  Rgb color{0.0, 0.0, 0.0};
  double opacity = 0.0;
};

struct TransferFunctionLUT {
  std::vector<LutEntry> entries;
  int resolution() const { return static_cast<int>(entries.size()); }
};

// Entry k holds the transfer function evaluated at k / (resolution - 1).
TransferFunctionLUT bake_lut(const Genome& genome, int resolution = kDefaultLutResolution);

// Stratified random genome: gene i has mu in [i/n, (i+1)/n].
Genome random_genome(int n, Rng& rng, GenomeId id);
Genome random_genome(int n, std::uint64_t seed);

// Genome with every weight except `gene_index` set to zero.
Genome isolate_gene(const Genome& genome, std::size_t gene_index);

nlohmann::json to_json(const Genome& genome);
Genome genome_from_json(const nlohmann::json& j);

std::string serialize(const Genome& genome);
Genome deserialize(const std::string& text);

}  // namespace tfevolve
