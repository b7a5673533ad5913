#include "splatshard/checkpoint.hpp"
#include "splatshard/errors.hpp"
#include "splatshard/fixture.hpp"
#include "splatshard/importance.hpp"
#include "splatshard/io.hpp"
#include "splatshard/parallel.hpp"
#include "splatshard/plot.hpp"
#include "splatshard/rasterizer.hpp"
#include "splatshard/seeding.hpp"
#include "splatshard/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <numeric>

namespace fs = std::filesystem;
using namespace splatshard;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  int m_ranks = 0;
  long long seed = -1;
  std::string out;
  bool no_lod_gate = false, no_scoring = false, no_view_mask = false, no_phi = false,
       no_pass1 = false, no_pass2 = false;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_config) {
  auto* c = cmd->add_option("--config", a.config, "training configuration (JSON)");
  if (needs_config) c->required();
  cmd->add_option("--set", a.sets, "override a configuration field, key=value (repeatable)");
  cmd->add_option("--m-ranks", a.m_ranks, "number of simulated ranks");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_flag("--no-lod-gate", a.no_lod_gate, "disable the distance-based LOD gate");
  cmd->add_flag("--no-importance-scoring", a.no_scoring, "disable both scoring passes");
  cmd->add_flag("--no-view-mask", a.no_view_mask, "do not skip culled Gaussians per view");
  cmd->add_flag("--no-phi-reweight", a.no_phi, "do not reweight densification by visibility");
  cmd->add_flag("--no-pass1", a.no_pass1, "skip the stochastic prune");
  cmd->add_flag("--no-pass2", a.no_pass2, "skip the mass-cut prune");
}

TrainConfig resolve_config(const CommonArgs& a) {
  TrainConfig c;
  if (!a.config.empty()) {
    c = config_from_json(read_text(a.config), a.config);
    // Paths inside a config file are relative to that file.
    const fs::path base = fs::path(a.config).parent_path();
    for (std::string* p : {&c.cloud, &c.cameras, &c.images, &c.out})
      if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  for (const auto& s : a.sets) apply_override(c, s);
  if (a.m_ranks > 0) c.m_ranks = a.m_ranks;
  if (a.seed >= 0) c.seed = std::uint64_t(a.seed);
  if (!a.out.empty()) c.out = a.out;
  if (a.no_lod_gate) c.flags.lod_gate = false;
  if (a.no_scoring) c.flags.importance_scoring = false;
  if (a.no_view_mask) c.flags.view_mask = false;
  if (a.no_phi) c.flags.phi_reweight = false;
  if (a.no_pass1) c.flags.pass1 = false;
  if (a.no_pass2) c.flags.pass2 = false;
  c.validate();
  return c;
}

fs::path out_dir(const TrainConfig& c) {
  if (c.out.empty()) throw ContractViolation("no output directory: pass --out or set 'out'");
  return c.out;
}

std::vector<Camera> config_cameras(const TrainConfig& c) {
  if (c.cameras.empty()) throw ContractViolation("config field 'cameras' is empty");
  return read_cameras(c.cameras);
}

std::map<int, Image<float>> read_images(const TrainConfig& c, const std::vector<Camera>& cams) {
  if (c.images.empty()) throw ContractViolation("config field 'images' is empty");
  if (!fs::is_directory(c.images)) throw MissingAssetError(c.images);
  std::map<int, Image<float>> out;
  for (const auto& cam : cams) {
    const auto p = image_path(c.images, cam.id);
    if (fs::exists(p)) out.emplace(cam.id, read_ppm(p));
  }
  return out;
}

RenderOptions render_options(const TrainConfig& c, const TrainState& s, const LodConfig& lod, bool gated) {
  RenderOptions r;
  r.sh_degree = int(std::min<std::int64_t>(c.sh_degree, std::max<std::int64_t>(0, s.step - 1) / c.sh_unlock_interval));
  r.early_termination = c.early_termination;
  r.gate = gated ? &lod : nullptr;
  r.step = s.step;
  return r;
}

std::string tile_grid_json(const TileGrid& grid, const std::vector<ProjectedSplat<float>>& splats) {
  nlohmann::json j;
  j["width"] = grid.layout.width;
  j["height"] = grid.layout.height;
  j["tile_size"] = kTileSize;
  j["tiles_x"] = grid.layout.tiles_x;
  j["tiles_y"] = grid.layout.tiles_y;
  nlohmann::json tiles = nlohmann::json::array();
  for (std::size_t t = 0; t < grid.bins.size(); ++t) {
    std::vector<std::int64_t> ids;
    for (std::int32_t k : grid.bins[t]) ids.push_back(splats[std::size_t(k)].global_id);
    tiles.push_back({{"tile", t}, {"global_ids", ids}});
  }
  j["tiles"] = tiles;
  return j.dump(1) + "\n";
}

int cmd_gen_scene(long long seed, int gaussians, int cameras, int width, int height, int test_count,
                  const std::string& out) {
  if (out.empty()) throw ContractViolation("gen-scene needs --out");
  FixtureOptions opt;
  opt.test_count = test_count;
  const auto fx = gen_fixture_scene(std::uint64_t(seed), gaussians, cameras, width, height, opt);
  save_scene_files(out, fx.cloud, fx.scene.cameras, fx.scene.images);
  TrainConfig c;
  c.cloud = "points.ply";
  c.cameras = "cameras.json";
  c.images = "images";
  c.lod_base_voxel = opt.lod_base_voxel;
  c.lod.levels = opt.lod_levels;
  c.seed = std::uint64_t(seed);
  write_text(fs::path(out) / "config.json", config_to_json(c));
  std::cout << "wrote " << fx.scene.cameras.size() << " cameras and " << fx.cloud.points.size()
            << " points to " << out << "\n";
  return 0;
}

int cmd_train(const CommonArgs& a, const std::string& resume, bool progress) {
  const TrainConfig c = resolve_config(a);
  const fs::path dir = out_dir(c);
  if (c.cloud.empty() || c.cameras.empty() || c.images.empty())
    throw ContractViolation("config needs 'cloud', 'cameras' and 'images'");
  const Scene scene = load_scene(c.cloud, c.cameras, c.images);
  fs::create_directories(dir / "checkpoints");
  TrainOptions opt;
  opt.progress = progress;
  if (!resume.empty()) opt.resume = load_checkpoint(resume);
  opt.on_checkpoint = [&](const TrainState& s) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%07lld.bzgs", static_cast<long long>(s.step));
    save_checkpoint(dir / "checkpoints" / name, s);
  };
  TrainResult r;
  try {
    r = train(scene, c, opt);
  } catch (const NonFiniteLoss& e) {
    write_text(dir / "diagnostic.json", e.dump());
    throw;
  }
  save_checkpoint(dir / "final.bzgs", r.state);
  write_text(dir / "metrics.csv", metrics_csv(r.metrics));
  write_text(dir / "shards.csv", shard_csv(r.shard_rows, c.m_ranks));
  write_text(dir / "events.csv", events_csv(r.events));
  write_text(dir / "counters.json", counters_json(r.state.counters));
  write_text(dir / "config.json", config_to_json(c));
  if (r.state.report) {
    write_text(dir / "report.csv", report_csv(*r.state.report));
    const auto blob = r.state.report->cull.to_blob();
    write_text(dir / "cull.bin", std::string(blob.begin(), blob.end()));
  }
  nlohmann::json summary;
  summary["config_hash"] = hash_hex(config_hash(c));
  summary["steps"] = r.state.step;
  summary["final_gaussians"] = r.state.model.size();
  summary["wall_seconds"] = r.wall_seconds;
  if (r.final_eval) {
    summary["mean_psnr"] = r.final_eval->mean_psnr;
    summary["mean_ssim"] = r.final_eval->mean_ssim;
    summary["eval_views"] = r.final_eval->views.size();
    write_text(dir / "eval.csv", eval_csv(*r.final_eval));
  } else {
    summary["mean_psnr"] = nullptr;
    summary["mean_ssim"] = nullptr;
    summary["eval_views"] = 0;
  }
  nlohmann::json counters;
  for (const auto& [k, v] : r.state.counters.items()) counters[k] = v;
  summary["counters"] = counters;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "trained " << r.state.step << " steps, " << r.state.model.size() << " Gaussians";
  if (r.final_eval) std::cout << ", test PSNR " << r.final_eval->mean_psnr;
  std::cout << "\n";
  return 0;
}

int cmd_render(const CommonArgs& a, const std::string& checkpoint, const std::vector<int>& ids,
               bool dump_tiles, bool gated) {
  const TrainConfig c = resolve_config(a);
  const fs::path dir = out_dir(c);
  const TrainState s = load_checkpoint(checkpoint);
  const auto cams = config_cameras(c);
  const LodConfig lod = effective_lod(c, s.d0);
  const RenderOptions ro = render_options(c, s, lod, gated);
  fs::create_directories(dir);
  int written = 0;
  for (const auto& cam : cams) {
    if (!ids.empty() && std::find(ids.begin(), ids.end(), cam.id) == ids.end()) continue;
    write_ppm(image_path(dir, cam.id), render_view(s.model, cam, ro));
    if (dump_tiles) {
      std::vector<std::int64_t> all(s.model.size());
      std::iota(all.begin(), all.end(), std::int64_t(0));
      if (ro.gate) all = lod_filter(s.model, all, cam, ro.step, lod).ids;
      const auto splats = project<float>(s.model, all, cam, ro.sh_degree);
      const TileGrid grid = bin_splats<float>(splats, TileLayout(cam.width, cam.height));
      write_text(dir / (std::to_string(cam.id) + ".tiles.json"), tile_grid_json(grid, splats));
    }
    ++written;
  }
  for (int id : ids)
    if (std::none_of(cams.begin(), cams.end(), [&](const Camera& cam) { return cam.id == id; }))
      throw ContractViolation("unknown camera id " + std::to_string(id));
  std::cout << "rendered " << written << " views to " << dir.string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& checkpoint, const std::string& split, bool gated) {
  const TrainConfig c = resolve_config(a);
  const TrainState s = load_checkpoint(checkpoint);
  auto cams = config_cameras(c);
  std::vector<Camera> chosen;
  for (const auto& cam : cams) {
    const bool is_test = cam.role == CameraRole::Test;
    if (split == "all" || (split == "test") == is_test) chosen.push_back(cam);
  }
  const auto images = read_images(c, chosen);
  const LodConfig lod = effective_lod(c, s.d0);
  const EvalSummary e = evaluate(s.model, chosen, images, render_options(c, s, lod, gated));
  const std::string csv = eval_csv(e);
  if (!c.out.empty())
    write_text(c.out, csv);
  else
    std::cout << csv;
  std::cout.precision(17);
  std::cout << "mean_psnr " << e.mean_psnr << " mean_ssim " << e.mean_ssim << "\n";
  return 0;
}

int cmd_score(const CommonArgs& a, const std::string& checkpoint) {
  const TrainConfig c = resolve_config(a);
  const fs::path dir = out_dir(c);
  const TrainState s = load_checkpoint(checkpoint);
  const auto cams = config_cameras(c);
  if (std::none_of(cams.begin(), cams.end(), [](const Camera& cam) { return cam.role == CameraRole::Train; }))
    throw ContractViolation("score: the scene has no train camera");
  const ShardMap shards = build_shard_map(std::int64_t(s.model.size()), c.m_ranks);
  const ImportanceReport r = scoring_pass(s.model, cams, shards, s.step);
  write_text(dir / "report.csv", report_csv(r));
  const auto blob = r.cull.to_blob();
  write_text(dir / "cull.bin", std::string(blob.begin(), blob.end()));
  std::cout << "scored " << r.size() << " Gaussians over " << r.view_camera_ids.size() << " views\n";
  return 0;
}

int cmd_simplify(const CommonArgs& a, const std::string& checkpoint, const std::string& rule,
                 double keep_fraction, double target_mass) {
  const TrainConfig c = resolve_config(a);
  if (c.out.empty()) throw ContractViolation("simplify needs --out (the new checkpoint path)");
  TrainState s = load_checkpoint(checkpoint);
  const auto cams = config_cameras(c);
  const ImportanceReport report = scoring_pass(s.model, cams, s.shards, s.step);
  PruneResult pr;
  if (rule == "stochastic")
    pr = prune_stochastic(s.model, report, keep_fraction, derive_seed(c.seed, stream::kPrune, std::uint64_t(s.step)));
  else if (rule == "mass-cut")
    pr = prune_mass_cut(s.model, report, target_mass);
  else
    throw ContractViolation("unknown rule '" + rule + "' (expected stochastic or mass-cut)");
  if (pr.all_zero_scores) std::cerr << "warning: all importance scores are zero\n";
  const std::size_t before = s.model.size();
  s.model = std::move(pr.model);
  s.adam.remap(pr.remap);
  s.stats.grad_accum = apply_remap(s.stats.grad_accum, pr.remap);
  s.stats.count = apply_remap(s.stats.count, pr.remap);
  s.stats.phi = apply_remap(s.stats.phi, pr.remap);
  s.report = report.remap(pr.remap);
  s.shards = remap_shard_map(s.shards, pr.remap);
  save_checkpoint(c.out, s);
  std::cout << "kept " << s.model.size() << " of " << before << " Gaussians\n";
  return 0;
}

int cmd_plot(const std::string& metrics, const std::string& out) {
  if (out.empty()) throw ContractViolation("plot needs --out");
  const auto samples = parse_metrics_csv(read_text(metrics), metrics);
  const PlotOutput p = plot_metrics(samples);
  write_text(out, p.svg);
  fs::path csv = out;
  csv.replace_extension(".csv");
  write_text(csv, p.csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  keep_frame_buffers_on_heap();
  CLI::App app{"splatshard: sharded Gaussian splatting training with importance pruning and LOD gating"};
  app.require_subcommand(1);

  long long gen_seed = 1;
  int gen_gaussians = 50, gen_cameras = 24, gen_width = 128, gen_height = 128, gen_test = -1;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-scene", "write a synthetic fixture scene");
  gen->add_option("--seed", gen_seed, "fixture seed");
  gen->add_option("--gaussians", gen_gaussians, "ground-truth Gaussian count");
  gen->add_option("--cameras", gen_cameras, "camera count");
  gen->add_option("--width", gen_width, "image width");
  gen->add_option("--height", gen_height, "image height");
  gen->add_option("--test-count", gen_test, "test cameras (default: last 10%)");
  gen->add_option("--out", gen_out, "output directory")->required();

  CommonArgs train_args, render_args, eval_args, score_args, simplify_args;
  std::string resume;
  bool progress = false;
  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, train_args, true);
  tr->add_option("--out", train_args.out, "output directory");
  tr->add_option("--resume", resume, "checkpoint to resume from");
  tr->add_flag("--progress", progress, "print progress to stderr");

  std::string render_ckpt;
  std::vector<int> render_ids;
  bool dump_tiles = false, render_gated = false, eval_gated = false;
  auto* re = app.add_subcommand("render", "render views from a checkpoint");
  add_common(re, render_args, true);
  re->add_option("--out", render_args.out, "output directory")->required();
  re->add_option("--checkpoint", render_ckpt, "checkpoint")->required();
  re->add_option("--camera", render_ids, "camera id (repeatable, default all)");
  re->add_flag("--dump-tiles", dump_tiles, "also write <id>.tiles.json with the per-tile splat lists");
  re->add_flag("--gated", render_gated, "apply the LOD gate at the checkpoint's step");

  std::string eval_ckpt, split = "test";
  auto* ev = app.add_subcommand("eval", "per-view PSNR and SSIM of a checkpoint");
  add_common(ev, eval_args, true);
  ev->add_option("--out", eval_args.out, "per-view CSV path (default stdout)");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint")->required();
  ev->add_option("--split", split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));
  ev->add_flag("--gated", eval_gated, "apply the LOD gate at the checkpoint's step");

  std::string score_ckpt;
  auto* sc = app.add_subcommand("score", "importance report of a checkpoint");
  add_common(sc, score_args, true);
  sc->add_option("--out", score_args.out, "output directory")->required();
  sc->add_option("--checkpoint", score_ckpt, "checkpoint")->required();

  std::string simplify_ckpt, rule = "mass-cut";
  double keep_fraction = 0.6, target_mass = 0.99;
  auto* si = app.add_subcommand("simplify", "prune a checkpoint with one rule");
  add_common(si, simplify_args, true);
  si->add_option("--out", simplify_args.out, "output checkpoint")->required();
  si->add_option("--checkpoint", simplify_ckpt, "checkpoint")->required();
  si->add_option("--rule", rule, "stochastic or mass-cut")->check(CLI::IsMember({"stochastic", "mass-cut"}));
  si->add_option("--keep-fraction", keep_fraction, "fraction kept by the stochastic rule");
  si->add_option("--target-mass", target_mass, "score mass kept by the mass-cut rule");

  std::string plot_metrics_path, plot_out;
  auto* pl = app.add_subcommand("plot", "SVG chart of a metrics CSV");
  pl->add_option("--metrics", plot_metrics_path, "metrics.csv from train")->required();
  pl->add_option("--out", plot_out, "output SVG; a companion CSV is written beside it")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) return cmd_gen_scene(gen_seed, gen_gaussians, gen_cameras, gen_width, gen_height, gen_test, gen_out);
    if (*tr) return cmd_train(train_args, resume, progress);
    if (*re) return cmd_render(render_args, render_ckpt, render_ids, dump_tiles, render_gated);
    if (*ev) return cmd_eval(eval_args, eval_ckpt, split, eval_gated);
    if (*sc) return cmd_score(score_args, score_ckpt);
    if (*si) return cmd_simplify(simplify_args, simplify_ckpt, rule, keep_fraction, target_mass);
    if (*pl) return cmd_plot(plot_metrics_path, plot_out);
  } catch (const ParseError& e) {
    std::cerr << "error: parse: " << e.what() << "\n";
  } catch (const MissingAssetError& e) {
    std::cerr << "error: missing: " << e.path() << "\n";
  } catch (const VersionError& e) {
    std::cerr << "error: version: " << e.what() << "\n";
  } catch (const ContractViolation& e) {
    std::cerr << "error: invalid: " << e.what() << "\n";
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: non-finite: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: io: " << e.what() << "\n";
  }
  return 2;
}
