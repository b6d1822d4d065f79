#include "tfevolve/tournament.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <sstream>

#include "tfevolve/error.hpp"

namespace tfevolve {

double expected_score(double rating_i, double rating_j) {
  return 1.0 / (1.0 + std::pow(10.0, (rating_j - rating_i) / 400.0));
}

RatingUpdate update_ratings(double rating_i, double rating_j, double outcome, double k) {
  if (outcome != 0.0 && outcome != 0.5 && outcome != 1.0) throw bad_request("outcome must be 0, 0.5 or 1");
  double delta = k * (outcome - expected_score(rating_i, rating_j));
  return {rating_i + delta, rating_j - delta, delta};
}

int swiss_rounds(int n) {
  if (n < 2) throw bad_request("a tournament needs at least two entries");
  int bits = 0;
  while ((1LL << bits) < n) ++bits;
  return bits + 2;
}

namespace {

std::pair<GenomeId, GenomeId> key(const GenomeId& a, const GenomeId& b) {
  return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
}

double score_of(Winner w) {
  switch (w) {
    case Winner::A: return 1.0;
    case Winner::B: return 0.0;
    case Winner::Tie: break;
  }
  return 0.5;
}

}  // namespace

bool EloState::has_played(const GenomeId& a, const GenomeId& b) const { return played.contains(key(a, b)); }

void EloState::mark_played(const GenomeId& a, const GenomeId& b) { played.insert(key(a, b)); }

double EloState::total_rating() const {
  double total = 0.0;
  for (const auto& [id, r] : ratings) total += r;
  return total;
}

EloState fresh_elo_state(std::span<const GenomeId> ids) {
  EloState state;
  for (const auto& id : ids) {
    if (!state.ratings.emplace(id, kInitialRating).second) throw bad_request("duplicate genome id", id);
  }
  return state;
}

static std::vector<GenomeId> sorted_by_rating(const EloState& state, std::span<const GenomeId> ids) {
  std::vector<GenomeId> order(ids.begin(), ids.end());
  auto rating = [&](const GenomeId& id) {
    auto it = state.ratings.find(id);
    return it == state.ratings.end() ? kInitialRating : it->second;
  };
  std::stable_sort(order.begin(), order.end(), [&](const GenomeId& a, const GenomeId& b) {
    double ra = rating(a), rb = rating(b);
    if (ra != rb) return ra > rb;
    return a < b;
  });
  return order;
}

Pairing pair_round(const EloState& state, std::span<const GenomeId> ids) {
  if (ids.size() < 2) throw bad_request("pairing needs at least two ids");
  std::vector<GenomeId> order = sorted_by_rating(state, ids);
  Pairing out;
  if (order.size() % 2 == 1) {
    out.bye = order.back();
    order.pop_back();
  }
  auto rating = [&](const GenomeId& id) {
    auto it = state.ratings.find(id);
    return it == state.ratings.end() ? kInitialRating : it->second;
  };
  std::vector<bool> used(order.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (used[i]) continue;
    used[i] = true;
    double ri = rating(order[i]);
    std::size_t fresh = order.size(), any = order.size();
    double fresh_gap = 0.0, any_gap = 0.0;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (used[j]) continue;
      double gap = std::abs(rating(order[j]) - ri);
      if (any == order.size() || gap < any_gap) {
        any = j;
        any_gap = gap;
      }
      if (!state.has_played(order[i], order[j]) && (fresh == order.size() || gap < fresh_gap)) {
        fresh = j;
        fresh_gap = gap;
      }
    }
    std::size_t pick = fresh != order.size() ? fresh : any;
    used[pick] = true;
    out.pairs.emplace_back(order[i], order[pick]);
  }
  return out;
}

std::vector<GenomeId> rank_order(const EloState& state) {
  std::vector<GenomeId> ids;
  ids.reserve(state.ratings.size());
  for (const auto& [id, r] : state.ratings) ids.push_back(id);
  return sorted_by_rating(state, ids);
}

nlohmann::json to_json(const MatchRecord& m) {
  nlohmann::json j = {{"round", m.round},
                      {"id_a", m.id_a},
                      {"id_b", m.id_b},
                      {"outcome", to_string(m.outcome)},
                      {"delta", m.delta},
                      {"ratings_after", {{m.id_a, m.rating_a_after}, {m.id_b, m.rating_b_after}}}};
  if (m.degraded) j["degraded"] = true;
  return j;
}

std::map<GenomeId, int> TournamentResult::ranks() const {
  std::map<GenomeId, int> out;
  for (std::size_t i = 0; i < ranking.size(); ++i) out[ranking[i]] = static_cast<int>(i) + 1;
  return out;
}

TournamentResult run_tournament(std::span<const Genome> population, const RenderFn& render, Judge& judge,
                                std::span<const Aspect> aspects, const Intent& intent,
                                const TournamentOptions& options) {
  const int n = static_cast<int>(population.size());
  const int rounds = swiss_rounds(n);
  validate(aspects);

  std::vector<GenomeId> ids;
  std::map<GenomeId, std::size_t> index;
  for (std::size_t i = 0; i < population.size(); ++i) {
    ids.push_back(population[i].id);
    index[population[i].id] = i;
  }

  TournamentResult result;
  result.state = fresh_elo_state(ids);

  TournamentProgress progress;
  progress.matches_total = rounds * (n / 2);
  if (options.on_progress) options.on_progress(progress);

  std::vector<RenderedImage> images;
  images.reserve(population.size());
  for (const auto& g : population) images.push_back(render(g));

  const bool parallel = options.parallel_matches && judge.concurrent();
  for (int round = 1; round <= rounds; ++round) {
    Pairing pairing = pair_round(result.state, ids);
    std::vector<ComparisonResult> outcomes(pairing.pairs.size());
    auto play = [&](std::size_t m) {
      const auto& [a, b] = pairing.pairs[m];
      return judge.compare(images[index.at(a)], images[index.at(b)], aspects, intent);
    };
    if (parallel && pairing.pairs.size() > 1) {
      std::vector<std::future<ComparisonResult>> pending;
      for (std::size_t m = 0; m < pairing.pairs.size(); ++m) pending.push_back(std::async(std::launch::async, play, m));
      for (std::size_t m = 0; m < pending.size(); ++m) {
        outcomes[m] = pending[m].get();
        ++progress.matches_done;
        if (options.on_progress) options.on_progress(progress);
      }
    } else {
      for (std::size_t m = 0; m < pairing.pairs.size(); ++m) {
        outcomes[m] = play(m);
        ++progress.matches_done;
        if (options.on_progress) options.on_progress(progress);
      }
    }

    // Pairs are disjoint, so applying updates in order equals applying them at once.
    for (std::size_t m = 0; m < pairing.pairs.size(); ++m) {
      const auto& [a, b] = pairing.pairs[m];
      double& ra = result.state.ratings.at(a);
      double& rb = result.state.ratings.at(b);
      RatingUpdate u = update_ratings(ra, rb, score_of(outcomes[m].overall), options.k);
      ra = u.rating_i;
      rb = u.rating_j;
      result.state.mark_played(a, b);
      result.trace.push_back({round, a, b, outcomes[m].overall, u.delta, ra, rb, outcomes[m].degraded});
      ++result.comparisons;
    }
    result.state.round = round;
  }
  result.ranking = rank_order(result.state);
  return result;
}

FitnessVector fitness_from_ranks(std::span<const int> ranks, int n, double pressure) {
  if (n < 1 || static_cast<int>(ranks.size()) != n) throw bad_request("ranks must have n entries");
  if (!(pressure >= 1.0)) throw bad_request("pressure must be at least 1");
  std::vector<bool> seen(n + 1, false);
  FitnessVector out;
  out.pressure_used = pressure;
  for (int r : ranks) {
    if (r < 1 || r > n || seen[r]) throw bad_request("ranks must be a permutation of 1..n");
    seen[r] = true;
    out.values.push_back(std::pow(static_cast<double>(n - r + 1), pressure));
  }
  return out;
}

double selection_pressure(int current_gen, int max_gen, const PressureSchedule& s) {
  if (max_gen < 1 || current_gen < 0) throw bad_request("invalid generation counters");
  double progress = std::min(1.0, static_cast<double>(current_gen) / max_gen);
  return s.min_pressure + (s.max_pressure - s.min_pressure) * std::pow(progress, s.k);
}

double agreement_score(std::span<const AgreementRecord> records) {
  if (records.empty()) throw bad_request("agreement needs at least one record");
  double sum = 0.0;
  for (const auto& r : records) {
    if (!(r.p >= 0.0 && r.p <= 1.0 && r.q >= 0.0 && r.q <= 1.0))
      throw bad_request("probabilities must lie in [0, 1]", r.pair_id);
    sum += r.p * r.q + (1.0 - r.p) * (1.0 - r.q);
  }
  return sum / static_cast<double>(records.size());
}

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// pair_id -> value, in file order; skips a header row whose value is not numeric.
std::vector<std::pair<std::string, double>> read_probability_csv(const std::string& text, const char* column) {
  std::vector<std::pair<std::string, double>> rows;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw bad_request("expected pair_id," + std::string(column), "line " + std::to_string(line_no));
    std::string id = trim(line.substr(0, comma));
    std::string value = trim(line.substr(comma + 1));
    if (line_no == 1 && id == "pair_id") continue;
    try {
      std::size_t used = 0;
      double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      rows.emplace_back(id, v);
    } catch (const std::logic_error&) {
      throw bad_request("not a probability: " + value, "line " + std::to_string(line_no));
    }
  }
  return rows;
}

}  // namespace

std::vector<AgreementRecord> join_agreement_csv(const std::string& machine_csv, const std::string& human_csv) {
  auto machine = read_probability_csv(machine_csv, "p");
  auto human = read_probability_csv(human_csv, "q");
  std::map<std::string, double> q_by_id;
  for (const auto& [id, q] : human) {
    if (!q_by_id.emplace(id, q).second) throw bad_request("duplicate pair_id in human file", id);
  }
  std::vector<AgreementRecord> out;
  std::set<std::string> seen;
  for (const auto& [id, p] : machine) {
    if (!seen.insert(id).second) throw bad_request("duplicate pair_id in machine file", id);
    auto it = q_by_id.find(id);
    if (it == q_by_id.end()) continue;
    out.push_back({id, p, it->second});
  }
  return out;
}

static std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw bad_request("spearman needs two equal-length samples");
  auto rx = average_ranks(x), ry = average_ranks(y);
  double n = static_cast<double>(x.size());
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace tfevolve
