#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tfevolve/evaluator.hpp"
#include "tfevolve/genome.hpp"

namespace tfevolve {

inline constexpr double kInitialRating = 1600.0;
inline constexpr double kEloK = 32.0;

// Probability that i beats j: 1 / (1 + 10^((rating_j - rating_i) / 400)).
double expected_score(double rating_i, double rating_j);

struct RatingUpdate {
  double rating_i;
  double rating_j;
  double delta;  // K * (S - E); i gains it, j loses it
};

// outcome is S for i: 1 win, 0.5 tie, 0 loss.
RatingUpdate update_ratings(double rating_i, double rating_j, double outcome, double k = kEloK);

// ceil(log2 n) + 2
int swiss_rounds(int n);

struct EloState {
  std::map<GenomeId, double> ratings;
  std::set<std::pair<GenomeId, GenomeId>> played;  // stored as (smaller, larger)
  int round = 0;

  bool has_played(const GenomeId& a, const GenomeId& b) const;
  void mark_played(const GenomeId& a, const GenomeId& b);
  double total_rating() const;
};

EloState fresh_elo_state(std::span<const GenomeId> ids);

struct Pairing {
  std::vector<std::pair<GenomeId, GenomeId>> pairs;
  std::optional<GenomeId> bye;
};

// Swiss pairing: rating-descending order (ties by id), odd field gives the
// lowest-rated entry a bye, then each entry meets the nearest-rated unpaired
// entry it has not met yet, or the nearest-rated one if all were met.
Pairing pair_round(const EloState& state, std::span<const GenomeId> ids);

// Ids by rating descending, ties by id ascending.
std::vector<GenomeId> rank_order(const EloState& state);

struct MatchRecord {
  int round = 0;
  GenomeId id_a;
  GenomeId id_b;
  Winner outcome = Winner::Tie;
  double delta = 0.0;
  double rating_a_after = 0.0;
  double rating_b_after = 0.0;
  bool degraded = false;
};

nlohmann::json to_json(const MatchRecord& match);

using RenderFn = std::function<RenderedImage(const Genome&)>;

struct TournamentProgress {
  int matches_done = 0;
  int matches_total = 0;
};

struct TournamentOptions {
  double k = kEloK;
  // Run a round's matches concurrently when the judge allows it.
  bool parallel_matches = true;
  std::function<void(const TournamentProgress&)> on_progress;
};

struct TournamentResult {
  EloState state;
  std::vector<GenomeId> ranking;  // rank 1 first
  std::vector<MatchRecord> trace;
  int comparisons = 0;

  // 1-based rank of each genome id.
  std::map<GenomeId, int> ranks() const;
};

// Fresh Swiss tournament at 1600 over swiss_rounds(n) rounds. Each genome is
// rendered once; matches within a round are independent and ratings are
// applied after the round completes.
TournamentResult run_tournament(std::span<const Genome> population, const RenderFn& render, Judge& judge,
                                std::span<const Aspect> aspects, const Intent& intent,
                                const TournamentOptions& options = {});

struct FitnessVector {
  std::vector<double> values;
  double pressure_used = 1.0;
};

// fitness_i = (n - rank_i + 1)^pressure for a permutation `ranks` of 1..n.
FitnessVector fitness_from_ranks(std::span<const int> ranks, int n, double pressure);

struct PressureSchedule {
  double min_pressure = 1.2;
  double max_pressure = 4.0;
  double k = 2.0;
};

// min + (max - min) * min(1, gen / max_gen)^k
double selection_pressure(int current_gen, int max_gen, const PressureSchedule& schedule = {});

struct AgreementRecord {
  std::string pair_id;
  double p = 0.0;  // machine probability of preferring the first image
  double q = 0.0;  // human probability of preferring the first image
};

// (1/N) sum p q + (1 - p)(1 - q)
double agreement_score(std::span<const AgreementRecord> records);

// Joins `pair_id,p` and `pair_id,q` CSV texts on pair_id.
std::vector<AgreementRecord> join_agreement_csv(const std::string& machine_csv, const std::string& human_csv);

double spearman_correlation(std::span<const double> x, std::span<const double> y);

}  // namespace tfevolve
