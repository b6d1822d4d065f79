#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "tfevolve/error.hpp"
#include "tfevolve/harness.hpp"
#include "tfevolve/image.hpp"
#include "tfevolve/kernels/dispatch.hpp"
#include "tfevolve/mllm.hpp"
#include "tfevolve/orchestrator.hpp"
#include "tfevolve/renderer.hpp"
#include "tfevolve/service.hpp"
#include "tfevolve/tournament.hpp"
#include "tfevolve/volume.hpp"

using namespace tfevolve;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::string judge = "heuristic";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--judge", c.judge, "Pairwise judge")
      ->check(CLI::IsMember({"heuristic", "mllm"}))
      ->capture_default_str();
}

std::shared_ptr<Judge> make_judge(const std::string& kind) {
  if (kind == "mllm") return std::make_shared<MllmJudge>(mllm_config_from_env());
  return std::make_shared<HeuristicJudge>();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw not_found("cannot read file", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<int, int> parse_size(const std::string& text) {
  int w = 0, h = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%dx%d%c", &w, &h, &tail) == 2) return {w, h};
  if (std::sscanf(text.c_str(), "%d%c", &w, &tail) == 1) return {w, w};
  throw bad_request("size must be N or WxH", text);
}

Camera parse_camera(const std::string& text, const VolumeDataset& volume) {
  if (text.empty()) return default_camera(volume);
  double yaw = 0, pitch = 0, dist = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf%c", &yaw, &pitch, &dist, &tail) != 3)
    throw bad_request("camera must be yaw,pitch,dist", text);
  return orbit_camera(volume, yaw, pitch, dist);
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_gallery(const Session& s, std::size_t k) {
  for (const auto& e : gallery(s, k)) std::printf("%-10s %9.2f\n", e.id.c_str(), e.rating);
}

void run_steps(Session& s, Judge& judge, int count, bool quiet) {
  for (int i = 0; i < count; ++i) {
    GenerationRecord r = step_generation(s, judge);
    if (!quiet) {
      std::fprintf(stderr, "generation %d (%s): best %s %.2f\n", r.generation_index, to_string(r.stage),
                   r.ranking.front().id.c_str(), r.ranking.front().rating);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intent-driven transfer function evolution for volume rendering"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string isa;
  app.add_option("--isa", isa, "Force a kernel variant (scalar, avx2)");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  // volume info
  Common volume_common;
  auto* volume_cmd = app.add_subcommand("volume", "Volume utilities");
  volume_cmd->require_subcommand(1);
  auto* info_cmd = volume_cmd->add_subcommand("info", "Print dimensions, spacing and a histogram");
  std::string info_ref;
  int info_bins = 16;
  info_cmd->add_option("volume", info_ref, "Descriptor path or synthetic:<kind>:<n>")->required();
  info_cmd->add_option("--bins", info_bins, "Histogram bins")->capture_default_str();
  add_common(info_cmd, volume_common);

  // render
  Common render_common;
  auto* render_cmd = app.add_subcommand("render", "Render one transfer function to PNG");
  std::string render_volume, render_genome, render_camera, render_size = "256x256", render_out = "render.png";
  bool render_no_shading = false;
  render_cmd->add_option("--volume", render_volume, "Volume reference")->required();
  render_cmd->add_option("--genome", render_genome, "Genome JSON (default: random from --seed)");
  render_cmd->add_option("--camera", render_camera, "Orbit as yaw,pitch,dist (degrees, bounding radii)");
  render_cmd->add_option("--size", render_size, "Image size WxH")->capture_default_str();
  render_cmd->add_option("--out", render_out, "Output PNG")->capture_default_str();
  render_cmd->add_flag("--no-shading", render_no_shading, "Disable Lambert shading");
  add_common(render_cmd, render_common);

  // explore
  Common explore_common;
  auto* explore_cmd = app.add_subcommand("explore", "Headless initialization run");
  std::string explore_volume, explore_out = "session", explore_camera, explore_size = "128x128";
  int explore_pop = 25, explore_gens = 20, explore_genes = kDefaultGeneCount, explore_k = 8;
  explore_cmd->add_option("--volume", explore_volume, "Volume reference")->required();
  explore_cmd->add_option("--pop", explore_pop, "Population size")->capture_default_str();
  explore_cmd->add_option("--gens", explore_gens, "Generations")->capture_default_str();
  explore_cmd->add_option("--genes", explore_genes, "Gaussians per genome")->capture_default_str();
  explore_cmd->add_option("--camera", explore_camera, "Orbit as yaw,pitch,dist");
  explore_cmd->add_option("--size", explore_size, "Render size WxH")->capture_default_str();
  explore_cmd->add_option("--k", explore_k, "Gallery size to print")->capture_default_str();
  explore_cmd->add_option("--out", explore_out, "Session directory")->capture_default_str();
  add_common(explore_cmd, explore_common);

  // customize
  Common customize_common;
  auto* customize_cmd = app.add_subcommand("customize", "Apply an intent to a session and evolve");
  std::string customize_session, customize_text, customize_image;
  int customize_gens = 10;
  customize_cmd->add_option("--session", customize_session, "Session directory")->required();
  customize_cmd->add_option("--text", customize_text, "Text intent");
  customize_cmd->add_option("--image", customize_image, "Reference PNG");
  customize_cmd->add_option("--gens", customize_gens, "Generations")->capture_default_str();
  add_common(customize_cmd, customize_common);

  // refine
  Common refine_common;
  auto* refine_cmd = app.add_subcommand("refine", "Freeze all but one feature and evolve it");
  std::string refine_session, refine_directive, refine_pick;
  int refine_gene = -1, refine_gens = 5;
  refine_cmd->add_option("--session", refine_session, "Session directory")->required();
  refine_cmd->add_option("--gene", refine_gene, "Gene index to keep evolving");
  refine_cmd->add_option("--pick", refine_pick, "Pixel x,y on the best render");
  refine_cmd->add_option("--directive", refine_directive, "Short instruction for the selected feature");
  refine_cmd->add_option("--gens", refine_gens, "Generations")->capture_default_str();
  add_common(refine_cmd, refine_common);

  // tournament
  Common tournament_common;
  auto* tournament_cmd = app.add_subcommand("tournament", "One Swiss tournament over a genome directory");
  std::string tournament_dir, tournament_volume, tournament_trace, tournament_size = "128x128", tournament_text;
  tournament_cmd->add_option("--genomes", tournament_dir, "Directory of genome JSON files")->required();
  tournament_cmd->add_option("--volume", tournament_volume, "Volume reference")->required();
  tournament_cmd->add_option("--trace", tournament_trace, "Write the match trace (JSON lines)");
  tournament_cmd->add_option("--size", tournament_size, "Render size WxH")->capture_default_str();
  tournament_cmd->add_option("--text", tournament_text, "Text intent (adds the intent aspect)");
  add_common(tournament_cmd, tournament_common);

  // agreement
  Common agreement_common;
  auto* agreement_cmd = app.add_subcommand("agreement", "Agreement score between machine and human picks");
  std::vector<std::string> agreement_machine, agreement_human;
  agreement_cmd->add_option("--machine", agreement_machine, "CSV pair_id,p (repeatable)")->required();
  agreement_cmd->add_option("--human", agreement_human, "CSV pair_id,q (repeatable, paired by order)")->required();
  add_common(agreement_cmd, agreement_common);

  // harness
  Common harness_common;
  auto* harness_cmd = app.add_subcommand("harness", "Population-size sweep with pooled ranking");
  std::string harness_volume, harness_pops = "10,25,50", harness_seeds = "1", harness_out = "sweep",
                              harness_size = "96x96";
  int harness_gens = 10, harness_k = 10;
  harness_cmd->add_option("--volume", harness_volume, "Volume reference")->required();
  harness_cmd->add_option("--pops", harness_pops, "Population sizes")->capture_default_str();
  harness_cmd->add_option("--gens", harness_gens, "Generations per run")->capture_default_str();
  harness_cmd->add_option("--seeds", harness_seeds, "Seeds")->capture_default_str();
  harness_cmd->add_option("--k", harness_k, "Representatives per run")->capture_default_str();
  harness_cmd->add_option("--size", harness_size, "Render size WxH")->capture_default_str();
  harness_cmd->add_option("--out", harness_out, "Output directory")->capture_default_str();
  add_common(harness_cmd, harness_common);

  // serve
  Common serve_common;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP session API");
  std::string serve_bind = "127.0.0.1", serve_data;
  int serve_port = 8080;
  serve_cmd->add_option("--bind", serve_bind, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", serve_port, "Port")->capture_default_str();
  serve_cmd->add_option("--data-dir", serve_data, "Session storage (default TFEVOLVE_DATA_DIR)");
  add_common(serve_cmd, serve_common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!isa.empty()) kernels::set_active_isa(isa == "avx2" ? kernels::Isa::avx2 : kernels::Isa::scalar);

    if (info_cmd->parsed()) {
      std::cout << describe(open_volume(info_ref), info_bins);
      return 0;
    }

    if (render_cmd->parsed()) {
      VolumeDataset volume = open_volume(render_volume);
      Genome genome = render_genome.empty() ? random_genome(kDefaultGeneCount, render_common.seed)
                                            : deserialize(read_text(render_genome));
      RenderSettings settings;
      if (render_no_shading) settings.shading = Shading::none;
      auto [w, h] = parse_size(render_size);
      write_png(render(volume, bake_lut(genome), parse_camera(render_camera, volume), settings, w, h), render_out);
      if (!quiet) std::fprintf(stderr, "wrote %s\n", render_out.c_str());
      return 0;
    }

    if (explore_cmd->parsed()) {
      auto judge = make_judge(explore_common.judge);
      auto volume = std::make_shared<const VolumeDataset>(open_volume(explore_volume));
      EvolutionConfig config;
      config.population_size = explore_pop;
      config.max_generations = std::max(1, explore_gens);
      config.gene_count = explore_genes;
      config.rng_seed = explore_common.seed;
      SessionOptions options;
      std::tie(options.render_width, options.render_height) = parse_size(explore_size);
      const fs::path dir = explore_out;
      Session s = create_session(volume, explore_volume, config, parse_camera(explore_camera, *volume), options,
                                 dir.filename().string());
      s.dir = dir;
      run_steps(s, *judge, explore_gens, quiet);
      checkpoint(s, dir);
      if (explore_gens > 0) print_gallery(s, static_cast<std::size_t>(explore_k));
      return 0;
    }

    if (customize_cmd->parsed()) {
      auto judge = make_judge(customize_common.judge);
      Session s = restore(customize_session);
      Intent intent;
      intent.text = customize_text;
      if (!customize_image.empty()) {
        intent.kind = IntentKind::image;
        intent.reference = read_png(customize_image);
      } else {
        intent.kind = IntentKind::text;
      }
      apply_intent(s, intent);
      run_steps(s, *judge, customize_gens, quiet);
      checkpoint(s, customize_session);
      if (customize_gens > 0) print_gallery(s, static_cast<std::size_t>(s.options.gallery_k));
      return 0;
    }

    if (refine_cmd->parsed()) {
      auto judge = make_judge(refine_common.judge);
      Session s = restore(refine_session);
      std::size_t gene = 0;
      if (!refine_pick.empty()) {
        int x = 0, y = 0;
        if (std::sscanf(refine_pick.c_str(), "%d,%d", &x, &y) != 2) throw bad_request("pick must be x,y");
        gene = pick_feature(*s.volume, current_best(s), s.camera, s.options.render_settings, s.options.render_width,
                            s.options.render_height, x, y);
        if (!quiet) std::fprintf(stderr, "picked gene %zu\n", gene);
      } else if (refine_gene >= 0) {
        gene = static_cast<std::size_t>(refine_gene);
      } else {
        throw bad_request("refine needs --gene or --pick");
      }
      refine_feature(s, gene, refine_directive);
      run_steps(s, *judge, refine_gens, quiet);
      checkpoint(s, refine_session);
      if (refine_gens > 0) print_gallery(s, static_cast<std::size_t>(s.options.gallery_k));
      return 0;
    }

    if (tournament_cmd->parsed()) {
      auto judge = make_judge(tournament_common.judge);
      VolumeDataset volume = open_volume(tournament_volume);
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(tournament_dir)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      std::vector<Genome> population;
      for (const auto& f : files) {
        Genome g = deserialize(read_text(f));
        if (g.id.empty()) g.id = f.stem().string();
        population.push_back(std::move(g));
      }
      auto [w, h] = parse_size(tournament_size);
      const Camera camera = default_camera(volume);
      Intent intent;
      if (!tournament_text.empty()) {
        intent.kind = IntentKind::text;
        intent.text = tournament_text;
      }
      const auto aspects = aspects_for(intent, !tournament_text.empty());
      TournamentResult result = run_tournament(
          population, [&](const Genome& g) { return render(volume, bake_lut(g), camera, RenderSettings{}, w, h); },
          *judge, aspects, intent);
      if (!tournament_trace.empty()) {
        std::ofstream out(tournament_trace);
        for (const auto& m : result.trace) out << to_json(m).dump() << "\n";
      }
      int rank = 1;
      for (const auto& id : result.ranking) std::printf("%3d %-16s %9.2f\n", rank++, id.c_str(), result.state.ratings.at(id));
      return 0;
    }

    if (agreement_cmd->parsed()) {
      if (agreement_machine.size() != agreement_human.size())
        throw bad_request("--machine and --human must be given the same number of times");
      std::vector<AgreementRecord> all;
      for (std::size_t i = 0; i < agreement_machine.size(); ++i) {
        auto records = join_agreement_csv(read_text(agreement_machine[i]), read_text(agreement_human[i]));
        if (records.empty()) throw bad_request("no shared pair_id", agreement_machine[i]);
        std::printf("%s vs %s: %zu pairs, agreement %.4f\n", agreement_machine[i].c_str(), agreement_human[i].c_str(),
                    records.size(), agreement_score(records));
        all.insert(all.end(), records.begin(), records.end());
      }
      std::printf("overall: %zu pairs, agreement %.4f\n", all.size(), agreement_score(all));
      return 0;
    }

    if (harness_cmd->parsed()) {
      auto judge = make_judge(harness_common.judge);
      auto volume = std::make_shared<const VolumeDataset>(open_volume(harness_volume));
      SweepConfig sweep;
      sweep.population_sizes.clear();
      for (const auto& p : split(harness_pops, ',')) sweep.population_sizes.push_back(std::stoi(p));
      sweep.seeds.clear();
      for (const auto& s : split(harness_seeds, ',')) sweep.seeds.push_back(std::stoull(s));
      sweep.max_generations = harness_gens;
      sweep.representatives_k = harness_k;
      sweep.base.rng_seed = harness_common.seed;
      std::tie(sweep.options.render_width, sweep.options.render_height) = parse_size(harness_size);
      const fs::path out = harness_out;
      fs::create_directories(out);
      auto runs = run_sweep(sweep, volume, harness_volume, *judge, out);
      const RenderFn renderer = sweep_renderer(volume, sweep.options);
      const PooledRanking ranking = pooled_rank(runs, renderer, *judge);
      std::ofstream(out / "ranks.csv") << ranks_csv(ranking, runs);
      const auto curve = budget_curve(runs, renderer, *judge);
      std::ofstream(out / "budget.csv") << budget_csv(curve);
      std::cout << ranks_csv(ranking, runs);
      return 0;
    }

    if (serve_cmd->parsed()) {
      ServiceConfig config = service_config_from_env();
      if (!serve_data.empty()) config.data_dir = serve_data;
      config.judge = serve_common.judge;
      Service service(config);
      std::fprintf(stderr, "listening on %s:%d (data in %s)\n", serve_bind.c_str(), serve_port,
                   config.data_dir.string().c_str());
      if (!service.listen(serve_bind, serve_port)) throw Error(ErrorCode::internal, "cannot bind", serve_bind);
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s%s%s\n", to_string(e.code()), e.what(), e.detail().empty() ? "" : ": ",
                 e.detail().c_str());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
