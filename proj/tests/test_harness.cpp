#include <doctest.h>

#include <json.hpp>

#include "support.hpp"
#include "tfevolve/harness.hpp"

using namespace tfevolve;

namespace {

std::shared_ptr<const VolumeDataset> small_volume() {
  static auto volume =
      std::make_shared<const VolumeDataset>(make_synthetic(SyntheticKind::nested_spheres, {20, 20, 20}));
  return volume;
}

SweepConfig small_sweep() {
  SweepConfig sweep;
  sweep.population_sizes = {4, 6};
  sweep.max_generations = 2;
  sweep.representatives_k = 2;
  sweep.seeds = {1, 2};
  sweep.options.render_width = 24;
  sweep.options.render_height = 24;
  return sweep;
}

// Ranks genomes by the first gene's weight, which survives the pool's renaming.
RenderFn weight_renderer() {
  return [](const Genome& g) { return testing::score_image(static_cast<std::uint32_t>(g.genes[0].w * 1e6)); };
}

Genome weighted(double w, std::uint64_t seed) {
  Genome g = random_genome(3, seed);
  g.genes[0].w = w;
  return g;
}

// Counts calls into the heuristic judge.
class CountingJudge : public HeuristicJudge {
 public:
  ComparisonResult compare(const RenderedImage& a, const RenderedImage& b, std::span<const Aspect> aspects,
                           const Intent& intent) override {
    ++calls;
    return HeuristicJudge::compare(a, b, aspects, intent);
  }
  std::atomic<int> calls{0};
};

}  // namespace

TEST_CASE("calls per generation") {
  CHECK(swiss_rounds(10) == 6);
  CHECK(calls_per_generation(10) == 30);
  CHECK(calls_per_generation(25) == 12 * 7);
  CHECK(calls_per_generation(2) == 3);
  CHECK(calls_per_generation(3) == 4);
}

TEST_CASE("sweep validation") {
  SweepConfig ok = small_sweep();
  CHECK_NOTHROW(validate(ok));
  SweepConfig bad = ok;
  bad.population_sizes = {1, 6};
  CHECK(testing::error_code([&] { validate(bad); }) == ErrorCode::bad_request);
  bad = ok;
  bad.representatives_k = 5;
  CHECK(testing::error_code([&] { validate(bad); }) == ErrorCode::bad_request);
  bad = ok;
  bad.seeds.clear();
  CHECK(testing::error_code([&] { validate(bad); }) == ErrorCode::bad_request);
  bad = ok;
  bad.population_sizes.clear();
  CHECK(testing::error_code([&] { validate(bad); }) == ErrorCode::bad_request);
  HeuristicJudge judge;
  CHECK(testing::error_code([&] { run_sweep(ok, nullptr, "x", judge); }) == ErrorCode::bad_request);
}

TEST_CASE("a size-10 run spends 30 judge calls per generation") {
  SweepConfig sweep = small_sweep();
  sweep.population_sizes = {10};
  sweep.seeds = {7};
  sweep.representatives_k = 3;
  CountingJudge judge;
  const auto runs = run_sweep(sweep, small_volume(), "synthetic:nested_spheres:20", judge);
  REQUIRE(runs.size() == 1);
  const RunResult& run = runs[0];
  CHECK(judge.calls == (sweep.max_generations + 1) * 30);
  REQUIRE(run.snapshots.size() == static_cast<std::size_t>(sweep.max_generations + 1));
  for (std::size_t g = 0; g < run.snapshots.size(); ++g) {
    CHECK(run.snapshots[g].generation == static_cast<int>(g));
    CHECK(run.snapshots[g].cost == static_cast<std::int64_t>(g) * 30);
    CHECK(run.snapshots[g].top_k.size() == 3);
  }
  CHECK(run.representatives == run.snapshots.back().top_k);
  CHECK(run.label() == "p10_s7");
}

TEST_CASE("sweep layout and determinism") {
  const SweepConfig sweep = small_sweep();
  testing::TempDir dir;
  HeuristicJudge judge;
  const auto a = run_sweep(sweep, small_volume(), "synthetic:nested_spheres:20", judge, dir.path());
  const auto b = run_sweep(sweep, small_volume(), "synthetic:nested_spheres:20", judge);
  REQUIRE(a.size() == 4);
  REQUIRE(b.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].snapshots.size() == 3);
    CHECK(a[i].representatives == b[i].representatives);
    for (std::size_t g = 0; g < a[i].snapshots.size(); ++g) CHECK(a[i].snapshots[g].top_k == b[i].snapshots[g].top_k);

    const auto run_dir = dir / a[i].label();
    REQUIRE(std::filesystem::exists(run_dir / "snapshots.json"));
    const auto snaps = nlohmann::json::parse(testing::slurp(run_dir / "snapshots.json"));
    REQUIRE(snaps.size() == 3);
    CHECK(snaps[2]["generation"] == 2);
    CHECK(snaps[2]["cost"] == 2 * calls_per_generation(a[i].population_size));
    CHECK(snaps[2]["top_k"].size() == 2);
  }
  int dirs = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir.path())) dirs += entry.is_directory();
  CHECK(dirs == 4);
}

TEST_CASE("pooled rank prefers the dominating group") {
  std::vector<PoolMember> pool;
  for (int i = 0; i < 5; ++i) pool.push_back({"strong", weighted(0.6 + 0.05 * i, 100 + i)});
  for (int i = 0; i < 5; ++i) pool.push_back({"weak", weighted(0.1 + 0.05 * i, 200 + i)});
  testing::OrderJudge judge;
  const PooledRanking ranking = pooled_rank(pool, weight_renderer(), judge);
  CHECK(ranking.mean_rank.at("strong") < ranking.mean_rank.at("weak"));
  CHECK(ranking.member_ranks.size() == 10);
  CHECK(ranking.tournament.state.total_rating() == doctest::Approx(1600.0 * 10));

  testing::OrderJudge inverted(true);
  const PooledRanking flipped = pooled_rank(pool, weight_renderer(), inverted);
  CHECK(flipped.mean_rank.at("strong") > flipped.mean_rank.at("weak"));
}

TEST_CASE("pooled rank edge cases") {
  testing::OrderJudge judge;
  std::vector<PoolMember> same;
  for (int i = 0; i < 6; ++i) same.push_back({"only", weighted(0.1 * (i + 1), 300 + i)});
  CHECK(pooled_rank(same, weight_renderer(), judge).mean_rank.at("only") == doctest::Approx(3.5));

  std::vector<PoolMember> pair{{"a", weighted(0.2, 1)}, {"b", weighted(0.9, 2)}};
  const PooledRanking two = pooled_rank(pair, weight_renderer(), judge);
  CHECK(two.mean_rank.at("b") == 1.0);
  CHECK(two.mean_rank.at("a") == 2.0);

  std::vector<PoolMember> one{{"a", weighted(0.2, 1)}};
  CHECK(testing::error_code([&] { pooled_rank(one, weight_renderer(), judge); }) == ErrorCode::bad_request);
}

TEST_CASE("budget curve is a running best") {
  std::vector<RunResult> runs;
  // Size 4 improves quickly, size 8 slowly but further.
  const double small_w[] = {0.3, 0.5, 0.5};
  const double large_w[] = {0.2, 0.25, 0.9};
  for (std::uint64_t seed : {1u, 2u}) {
    RunResult small{4, seed, {}, {}};
    RunResult large{8, seed, {}, {}};
    for (int g = 0; g < 3; ++g) {
      Genome a = weighted(small_w[g] + 0.01 * seed, seed * 10 + g);
      a.id = "s" + std::to_string(g);
      small.snapshots.push_back({g, g * calls_per_generation(4), {a}});
      Genome b = weighted(large_w[g] + 0.01 * seed, seed * 20 + g);
      b.id = "l" + std::to_string(g);
      large.snapshots.push_back({g, g * calls_per_generation(8), {b}});
    }
    small.representatives = small.snapshots.back().top_k;
    large.representatives = large.snapshots.back().top_k;
    runs.push_back(small);
    runs.push_back(large);
  }
  testing::OrderJudge judge;
  const auto points = budget_curve(runs, weight_renderer(), judge);
  REQUIRE(!points.empty());

  std::map<int, std::vector<BudgetPoint>> by_size;
  for (const auto& p : points) by_size[p.population_size].push_back(p);
  REQUIRE(by_size.size() == 2);
  for (const auto& [n, series] : by_size) {
    for (std::size_t i = 1; i < series.size(); ++i) {
      CHECK(series[i].budget > series[i - 1].budget);
      CHECK(series[i].best_mean_rank <= series[i - 1].best_mean_rank);
    }
  }
  // At budget 0 only the generation-0 snapshots count: the size-4 start is better.
  CHECK(by_size[4].front().budget == 0);
  CHECK(by_size[4].front().best_mean_rank < by_size[8].front().best_mean_rank);
  // With the full budget the size-8 runs hold the two best genomes.
  CHECK(by_size[8].back().best_mean_rank == doctest::Approx(1.5));

  const std::string csv = budget_csv(points);
  CHECK(csv.rfind("population_size,budget,best_mean_rank\n", 0) == 0);
  CHECK(csv.find("\n4,0,") != std::string::npos);
}

TEST_CASE("ranks csv") {
  std::vector<RunResult> runs;
  for (int n : {4, 8}) {
    RunResult run{n, 1, {}, {}};
    for (int i = 0; i < 2; ++i) run.representatives.push_back(weighted(n == 8 ? 0.8 + 0.1 * i : 0.1 + 0.1 * i, n + i));
    runs.push_back(run);
  }
  testing::OrderJudge judge;
  const PooledRanking ranking = pooled_rank(std::span<const RunResult>(runs), weight_renderer(), judge);
  CHECK(ranks_csv(ranking, runs) ==
        "population_size,members,mean_rank,pool_size\n"
        "4,2,3.5000,4\n"
        "8,2,1.5000,4\n");
}
