#include <doctest.h>

#include <cmath>
#include <map>
#include <mutex>
#include <set>

#include "support.hpp"
#include "tfevolve/tournament.hpp"

using namespace tfevolve;

namespace {

std::vector<GenomeId> make_ids(int n) {
  std::vector<GenomeId> ids;
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "id%03d", i);
    ids.push_back(buf);
  }
  return ids;
}

// Population whose genomes render to images carrying their quality score.
struct ScoredPopulation {
  std::vector<Genome> genomes;
  std::map<GenomeId, std::uint32_t> score;

  ScoredPopulation(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::uint32_t> scores(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i + 1);
    for (int i = n - 1; i > 0; --i) std::swap(scores[static_cast<std::size_t>(i)], scores[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    for (int i = 0; i < n; ++i) {
      Genome g = random_genome(3, rng, make_ids(n)[static_cast<std::size_t>(i)]);
      score[g.id] = scores[static_cast<std::size_t>(i)];
      genomes.push_back(std::move(g));
    }
  }

  RenderFn render() const {
    return [this](const Genome& g) { return testing::score_image(score.at(g.id)); };
  }
};

}  // namespace

TEST_CASE("expected score") {
  CHECK(expected_score(1600, 1600) == 0.5);
  CHECK(std::abs(expected_score(2000, 1600) - 10.0 / 11.0) < 1e-12);
  for (double a : {1200.0, 1550.5, 1600.0, 1999.0}) {
    for (double b : {1000.0, 1600.0, 2400.0}) {
      CHECK(std::abs(expected_score(a, b) + expected_score(b, a) - 1.0) < 1e-12);
      CHECK(std::abs(expected_score(a, b) - 1.0 / (1.0 + std::pow(10.0, (b - a) / 400.0))) < 1e-12);
    }
  }
  CHECK(expected_score(1601, 1600) > expected_score(1600, 1600));
}

TEST_CASE("rating updates") {
  const RatingUpdate win = update_ratings(1600, 1600, 1.0);
  CHECK(win.delta == 16.0);
  CHECK(win.rating_i == 1616.0);
  CHECK(win.rating_j == 1584.0);
  const RatingUpdate tie = update_ratings(1600, 1600, 0.5);
  CHECK(tie.rating_i == 1600.0);
  CHECK(tie.rating_j == 1600.0);
  const RatingUpdate loss = update_ratings(1700, 1500, 0.0);
  CHECK(loss.rating_i + loss.rating_j == doctest::Approx(3200.0));
  CHECK(loss.delta < -16.0);
  CHECK(testing::error_code([] { update_ratings(1600, 1600, 0.7); }) == ErrorCode::bad_request);
}

TEST_CASE("round count") {
  CHECK(swiss_rounds(2) == 3);
  CHECK(swiss_rounds(3) == 4);
  CHECK(swiss_rounds(8) == 5);
  CHECK(swiss_rounds(10) == 6);
  CHECK(swiss_rounds(16) == 6);
  CHECK(swiss_rounds(25) == 7);
  CHECK(swiss_rounds(50) == 8);
  CHECK(testing::error_code([] { swiss_rounds(1); }) == ErrorCode::bad_request);
}

TEST_CASE("pairing") {
  SUBCASE("equal ratings pair in id order") {
    const auto ids = make_ids(4);
    const EloState s = fresh_elo_state(ids);
    const Pairing p = pair_round(s, ids);
    REQUIRE(p.pairs.size() == 2);
    CHECK(p.pairs[0] == std::pair<GenomeId, GenomeId>{"id000", "id001"});
    CHECK(p.pairs[1] == std::pair<GenomeId, GenomeId>{"id002", "id003"});
    CHECK_FALSE(p.bye);
  }
  SUBCASE("odd field gives the lowest-rated a bye") {
    const auto ids = make_ids(3);
    EloState s = fresh_elo_state(ids);
    s.ratings["id000"] = 1500;
    const Pairing p = pair_round(s, ids);
    REQUIRE(p.bye);
    CHECK(*p.bye == "id000");
    REQUIRE(p.pairs.size() == 1);
    CHECK(p.pairs[0] == std::pair<GenomeId, GenomeId>{"id001", "id002"});
  }
  SUBCASE("forced rematch") {
    const auto ids = make_ids(2);
    EloState s = fresh_elo_state(ids);
    s.mark_played("id001", "id000");
    CHECK(s.has_played("id000", "id001"));
    const Pairing p = pair_round(s, ids);
    REQUIRE(p.pairs.size() == 1);
  }
  SUBCASE("fresh opponents are preferred") {
    const auto ids = make_ids(4);
    EloState s = fresh_elo_state(ids);
    s.mark_played("id000", "id001");
    const Pairing p = pair_round(s, ids);
    REQUIRE(p.pairs.size() == 2);
    CHECK(p.pairs[0] == std::pair<GenomeId, GenomeId>{"id000", "id002"});
    CHECK(p.pairs[1] == std::pair<GenomeId, GenomeId>{"id001", "id003"});
  }
  SUBCASE("nearest rating wins") {
    const auto ids = make_ids(4);
    EloState s = fresh_elo_state(ids);
    s.ratings = {{"id000", 1700}, {"id001", 1500}, {"id002", 1690}, {"id003", 1510}};
    const Pairing p = pair_round(s, ids);
    CHECK(p.pairs[0] == std::pair<GenomeId, GenomeId>{"id000", "id002"});
    CHECK(p.pairs[1] == std::pair<GenomeId, GenomeId>{"id003", "id001"});
    CHECK(rank_order(s) == std::vector<GenomeId>{"id000", "id002", "id003", "id001"});
  }
}

TEST_CASE("two genomes, judge prefers one") {
  ScoredPopulation pop(2, 5);
  testing::OrderJudge judge;
  const auto result = run_tournament(pop.genomes, pop.render(), judge, formal_aspects(), Intent{});
  const GenomeId best = pop.score.at("id000") > pop.score.at("id001") ? "id000" : "id001";
  CHECK(result.ranking.front() == best);
  CHECK(result.state.ratings.at(best) > 1600.0);
  CHECK(result.comparisons == 3);
  CHECK(judge.calls == 3);
}

TEST_CASE("an always-tie judge leaves every rating at 1600") {
  ScoredPopulation pop(7, 2);
  testing::ConstantJudge judge(Winner::Tie);
  const auto result = run_tournament(pop.genomes, pop.render(), judge, formal_aspects(), Intent{});
  for (const auto& [id, r] : result.state.ratings) CHECK(r == 1600.0);
  CHECK(result.ranking == make_ids(7));
  const auto ranks = result.ranks();
  CHECK(ranks.at("id000") == 1);
  CHECK(ranks.at("id006") == 7);
}

TEST_CASE("comparison count and conservation") {
  for (int n : {2, 3, 8, 10, 11, 25}) {
    ScoredPopulation pop(n, static_cast<std::uint64_t>(n));
    testing::OrderJudge judge;
    std::vector<TournamentProgress> progress;
    TournamentOptions opts;
    opts.on_progress = [&](const TournamentProgress& p) { progress.push_back(p); };
    const auto result = run_tournament(pop.genomes, pop.render(), judge, formal_aspects(), Intent{}, opts);
    const int expected = swiss_rounds(n) * (n / 2);
    CAPTURE(n);
    CHECK(result.comparisons == expected);
    CHECK(judge.calls == expected);
    CHECK(static_cast<int>(result.trace.size()) == expected);
    CHECK(result.state.total_rating() == doctest::Approx(1600.0 * n).epsilon(1e-12));
    CHECK(result.state.round == swiss_rounds(n));
    REQUIRE_FALSE(progress.empty());
    CHECK(progress.back().matches_done == expected);
    CHECK(progress.back().matches_total == expected);
    std::set<GenomeId> ranked(result.ranking.begin(), result.ranking.end());
    CHECK(ranked.size() == static_cast<std::size_t>(n));
  }
}

TEST_CASE("each genome is rendered once") {
  ScoredPopulation pop(10, 3);
  std::map<GenomeId, int> renders;
  std::mutex mutex;
  const RenderFn base = pop.render();
  const RenderFn counting = [&](const Genome& g) {
    std::lock_guard lock(mutex);
    ++renders[g.id];
    return base(g);
  };
  testing::OrderJudge judge;
  run_tournament(pop.genomes, counting, judge, formal_aspects(), Intent{});
  CHECK(renders.size() == 10);
  for (const auto& [id, count] : renders) CHECK(count == 1);
}

TEST_CASE("sequential and parallel matches agree") {
  ScoredPopulation pop(16, 9);
  testing::OrderJudge a, b;
  TournamentOptions sequential;
  sequential.parallel_matches = false;
  const auto x = run_tournament(pop.genomes, pop.render(), a, formal_aspects(), Intent{}, sequential);
  const auto y = run_tournament(pop.genomes, pop.render(), b, formal_aspects(), Intent{});
  CHECK(x.ranking == y.ranking);
  CHECK(x.state.ratings == y.state.ratings);
}

TEST_CASE("trace records") {
  ScoredPopulation pop(4, 1);
  testing::OrderJudge judge;
  const auto result = run_tournament(pop.genomes, pop.render(), judge, formal_aspects(), Intent{});
  REQUIRE_FALSE(result.trace.empty());
  const MatchRecord& m = result.trace.front();
  CHECK(m.round == 1);
  CHECK(std::abs(m.delta) == doctest::Approx(16.0));
  const auto j = to_json(m);
  CHECK(j.at("round") == 1);
  CHECK(j.at("id_a") == m.id_a);
  CHECK(j.at("outcome").is_string());
  CHECK(j.at("ratings_after").at(m.id_a) == m.rating_a_after);
}

TEST_CASE("ranking fidelity under a strict order") {
  for (int n : {8, 16}) {
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      ScoredPopulation pop(n, seed);
      testing::OrderJudge judge;
      const auto result = run_tournament(pop.genomes, pop.render(), judge, formal_aspects(), Intent{});
      const auto ranks = result.ranks();
      std::vector<double> elo, truth;
      for (const auto& [id, s] : pop.score) {
        elo.push_back(-ranks.at(id));
        truth.push_back(s);
      }
      total += spearman_correlation(elo, truth);
    }
    CAPTURE(n);
    CHECK(total / 20.0 >= 0.9);
  }
}

TEST_CASE("fitness from ranks") {
  const std::vector<int> ranks{3, 1, 2, 5, 4, 6, 7, 8, 9, 10};
  const FitnessVector f = fitness_from_ranks(ranks, 10, 1.2);
  CHECK(std::abs(f.values[1] - std::pow(10.0, 1.2)) < 1e-9);
  CHECK(std::abs(f.values[1] - 15.848931924611133) < 1e-9);
  CHECK(f.values[9] == 1.0);
  CHECK(f.pressure_used == 1.2);
  const FitnessVector linear = fitness_from_ranks(ranks, 10, 1.0);
  for (std::size_t i = 0; i < ranks.size(); ++i) CHECK(linear.values[i] == doctest::Approx(11 - ranks[i]));
  CHECK(f.values[1] > f.values[2]);
  CHECK(f.values[2] > f.values[0]);
  const std::vector<int> bad{1, 1, 2};
  CHECK(testing::error_code([&] { fitness_from_ranks(bad, 3, 1.2); }) == ErrorCode::bad_request);
  const std::vector<int> ok{1, 2, 3};
  CHECK(testing::error_code([&] { fitness_from_ranks(ok, 3, 0.5); }) == ErrorCode::bad_request);
}

TEST_CASE("selection pressure") {
  CHECK(selection_pressure(0, 20) == 1.2);
  CHECK(selection_pressure(20, 20) == 4.0);
  CHECK(selection_pressure(40, 20) == 4.0);
  CHECK(selection_pressure(10, 20) == doctest::Approx(1.9).epsilon(1e-12));
  double last = 0.0;
  for (int g = 0; g <= 25; ++g) {
    const double p = selection_pressure(g, 20);
    CHECK(p >= last);
    CHECK(p >= 1.2);
    CHECK(p <= 4.0);
    last = p;
  }
}

TEST_CASE("agreement score") {
  std::vector<AgreementRecord> same{{"a", 1, 1}, {"b", 0, 0}, {"c", 1, 1}};
  CHECK(agreement_score(same) == 1.0);
  std::vector<AgreementRecord> opposite{{"a", 1, 0}, {"b", 0, 1}};
  CHECK(agreement_score(opposite) == 0.0);
  for (double q : {0.0, 0.3, 1.0}) {
    std::vector<AgreementRecord> half{{"a", 0.5, q}};
    CHECK(agreement_score(half) == 0.5);
  }
  std::vector<AgreementRecord> mixed{{"a", 0.2, 0.9}, {"b", 0.7, 0.4}, {"c", 1.0, 0.5}};
  std::vector<AgreementRecord> flipped;
  for (const auto& r : mixed) flipped.push_back({r.pair_id, 1 - r.p, 1 - r.q});
  CHECK(agreement_score(mixed) == doctest::Approx(agreement_score(flipped)).epsilon(1e-15));
  CHECK(agreement_score(mixed) == doctest::Approx((0.2 * 0.9 + 0.8 * 0.1 + 0.7 * 0.4 + 0.3 * 0.6 + 0.5) / 3.0));
  std::vector<AgreementRecord> none;
  CHECK(testing::error_code([&] { agreement_score(none); }) == ErrorCode::bad_request);
  std::vector<AgreementRecord> out_of_range{{"a", 1.5, 0}};
  CHECK(testing::error_code([&] { agreement_score(out_of_range); }) == ErrorCode::bad_request);
}

TEST_CASE("agreement csv join") {
  const auto records = join_agreement_csv("pair_id,p\nx,1\ny,0.25\nz,0\n", "pair_id,q\ny,0.5\nx,1\n");
  REQUIRE(records.size() == 2);
  std::map<std::string, AgreementRecord> by_id;
  for (const auto& r : records) by_id[r.pair_id] = r;
  CHECK(by_id.at("x").p == 1.0);
  CHECK(by_id.at("y").p == 0.25);
  CHECK(by_id.at("y").q == 0.5);
  CHECK(join_agreement_csv("a,1\n", "a,0\n").size() == 1);
  CHECK(testing::error_code([] { join_agreement_csv("a,1\na,0\n", "a,1\n"); }) == ErrorCode::bad_request);
}

TEST_CASE("spearman") {
  const std::vector<double> x{1, 2, 3, 4}, y{10, 20, 30, 40}, r{4, 3, 2, 1};
  CHECK(spearman_correlation(x, y) == doctest::Approx(1.0));
  CHECK(spearman_correlation(x, r) == doctest::Approx(-1.0));
  const std::vector<double> ties{1, 1, 2, 2};
  CHECK(spearman_correlation(ties, x) == doctest::Approx(0.894427191));
}
