#include "splatshard/trainer.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/loss.hpp"
#include "splatshard/parallel.hpp"
#include "splatshard/rasterizer.hpp"
#include "splatshard/seeding.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

namespace splatshard {

std::vector<std::pair<std::string, std::int64_t>> Counters::items() const {
  return {{"steps", steps},
          {"gate_views", gate_views},
          {"gate_fallbacks", gate_fallbacks},
          {"gate_excluded", gate_excluded},
          {"mask_views", mask_views},
          {"mask_culled", mask_culled},
          {"phi_steps", phi_steps},
          {"scoring_passes", scoring_passes},
          {"pass1_prunes", pass1_prunes},
          {"pass1_removed", pass1_removed},
          {"pass2_prunes", pass2_prunes},
          {"pass2_removed", pass2_removed},
          {"densify_events", densify_events},
          {"clones", clones},
          {"splits", splits},
          {"prunes", prunes},
          {"redistributions", redistributions},
          {"opacity_resets", opacity_resets}};
}

void Counters::set(const std::string& name, std::int64_t value) {
  std::int64_t* fields[] = {&steps,        &gate_views,     &gate_fallbacks, &gate_excluded,
                            &mask_views,   &mask_culled,    &phi_steps,      &scoring_passes,
                            &pass1_prunes, &pass1_removed,  &pass2_prunes,   &pass2_removed,
                            &densify_events, &clones,       &splits,         &prunes,
                            &redistributions, &opacity_resets};
  const auto names = items();
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k].first == name) {
      *fields[k] = value;
      return;
    }
  throw ContractViolation("unknown counter '" + name + "'");
}

bool TrainState::operator==(const TrainState& o) const {
  if (step != o.step || model.size() != o.model.size() || config_hash != o.config_hash ||
      d0 != o.d0 || counters != o.counters || report != o.report || !(adam == o.adam) ||
      shards.owner_of != o.shards.owner_of || shards.m_ranks != o.shards.m_ranks ||
      stats.grad_accum != o.stats.grad_accum || stats.count != o.stats.count ||
      stats.phi != o.stats.phi)
    return false;
  for (std::size_t i = 0; i < model.size(); ++i)
    if (model[i].params != o.model[i].params || model[i].lod_level != o.model[i].lod_level)
      return false;
  return true;
}

Image<float> render_view(const GaussianModel& model, const Camera& camera,
                         const RenderOptions& options) {
  RasterSettings settings;
  settings.sh_degree = options.sh_degree;
  settings.early_termination = options.early_termination;
  std::vector<std::int64_t> ids(model.size());
  std::iota(ids.begin(), ids.end(), std::int64_t(0));
  if (options.gate) ids = lod_filter(model, ids, camera, options.step, *options.gate).ids;
  const auto splats = project<float>(model, ids, camera, options.sh_degree);
  return render_forward<float>(splats, camera.width, camera.height, settings).image;
}

EvalSummary evaluate(const GaussianModel& model, std::span<const Camera> cameras,
                     const std::map<int, Image<float>>& images, const RenderOptions& options) {
  EvalSummary out;
  for (const auto& cam : cameras) {
    const auto it = images.find(cam.id);
    if (it == images.end()) continue;
    const Image<float> img = render_view(model, cam, options);
    out.views.push_back({cam.id, psnr(img, it->second), ssim(img, it->second)});
  }
  for (const auto& v : out.views) {
    out.mean_psnr += v.psnr / double(out.views.size());
    out.mean_ssim += v.ssim / double(out.views.size());
  }
  return out;
}

LodConfig effective_lod(const TrainConfig& config, double d0) {
  LodConfig lod = config.lod;
  lod.d0 = d0;
  return lod;
}

TrainState initial_state(const Scene& scene, const TrainConfig& config) {
  config.validate();
  require(!scene.gaussians.empty(), "train: scene has no Gaussians");
  require(!scene.train_camera_indices().empty(), "train: scene has no train camera");
  for (int idx : scene.train_camera_indices()) {
    const auto& cam = scene.cameras[std::size_t(idx)];
    const auto it = scene.images.find(cam.id);
    require(it != scene.images.end(), "train: train camera " + std::to_string(cam.id) + " has no image");
    require(it->second.width == cam.width && it->second.height == cam.height,
            "train: image size does not match camera " + std::to_string(cam.id));
  }
  TrainState s;
  s.model = scene.gaussians;
  if (config.lod_base_voxel > 0) assign_lod_labels(s.model, config.lod.levels, config.lod_base_voxel);
  for (const auto& g : s.model)
    require(g.lod_level >= 0 && g.lod_level < config.lod.levels, "train: LOD label out of range");
  s.shards = build_shard_map(std::int64_t(s.model.size()), config.m_ranks);
  s.adam = AdamState(s.model.size());
  s.stats = DensifyStats(s.model.size());
  s.config_hash = config_hash(config);
  s.d0 = scene.d0;
  require(s.d0 > 0, "train: scene reference distance must be positive");
  return s;
}

std::vector<int> batch_cameras(std::span<const int> train_indices, int batch, std::int64_t step,
                               std::uint64_t seed) {
  const auto n = std::int64_t(train_indices.size());
  std::vector<int> out;
  std::int64_t cached_epoch = -1;
  std::vector<int> perm;
  for (int b = 0; b < batch; ++b) {
    const std::int64_t k = (step - 1) * batch + b;
    const std::int64_t epoch = k / n;
    if (epoch != cached_epoch) {
      perm.assign(train_indices.begin(), train_indices.end());
      std::mt19937_64 rng(derive_seed(seed, stream::kBatch, std::uint64_t(epoch)));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[std::size_t(k % n)]);
  }
  return out;
}

namespace {

struct Trainer {
  Trainer(const Scene& s, const TrainConfig& c, const TrainOptions& o) : scene(s), cfg(c), opt(o) {}

  const Scene& scene;
  const TrainConfig& cfg;
  const TrainOptions& opt;
  LodConfig lod;
  TrainResult result;
  std::vector<Camera> train_cameras;
  std::vector<int> train_indices;

  TrainState& st() { return result.state; }

  bool phi_active(std::int64_t t) const {
    return cfg.flags.importance_scoring && cfg.flags.phi_reweight && result.state.report &&
           t > cfg.t1;
  }

  void refresh_phi(std::int64_t t) {
    auto& s = result.state;
    if (phi_active(t))
      s.stats.phi = opt.hooks.phi ? opt.hooks.phi(*s.report) : s.report->phi;
    else
      s.stats.phi.assign(s.model.size(), 1.0);
  }

  // Moves every per-Gaussian structure into the id space of `remap`.
  void apply_population(GaussianModel model, const IdRemap& remap) {
    auto& s = st();
    s.model = std::move(model);
    s.adam.remap(remap);
    if (s.report) s.report = s.report->remap(remap);
  }

  void redistribute(const ShardMap& map, std::int64_t t, const char* cause) {
    bool moved = false;
    st().shards = maybe_redistribute(map, cfg.densify.skew_threshold, &moved);
    if (moved) {
      ++st().counters.redistributions;
      result.events.push_back({t, std::string("redistribute_after_") + cause,
                               std::int64_t(st().model.size()), std::int64_t(st().model.size()), 0, 0, 0});
    }
  }

  std::vector<std::int64_t> view_active_set(const Camera& cam, std::int64_t t) {
    auto& s = st();
    std::vector<std::int64_t> all(s.model.size());
    std::iota(all.begin(), all.end(), std::int64_t(0));
    std::vector<std::int64_t> ids = std::move(all);
    if (cfg.flags.lod_gate) {
      GateResult g = opt.hooks.gate ? opt.hooks.gate(s.model, ids, cam, t, lod)
                                    : lod_filter(s.model, ids, cam, t, lod);
      if (g.gate_active) {
        ++s.counters.gate_views;
        if (g.fell_back) ++s.counters.gate_fallbacks;
        s.counters.gate_excluded += std::int64_t(ids.size() - g.ids.size());
      }
      ids = std::move(g.ids);
    }
    if (cfg.flags.importance_scoring && cfg.flags.view_mask && s.report) {
      const int column = s.report->column_of(cam.id);
      if (column >= 0) {
        const std::size_t before = ids.size();
        ids = opt.hooks.mask ? opt.hooks.mask(ids, *s.report, column, s.model.size())
                             : apply_cull(ids, s.report->cull, column, s.model.size());
        ++s.counters.mask_views;
        s.counters.mask_culled += std::int64_t(before - ids.size());
      }
    }
    return ids;
  }

  void scoring_event(std::int64_t t, bool prune_stochastically) {
    auto& s = st();
    std::optional<ImportanceReport> report =
        opt.hooks.scoring ? opt.hooks.scoring(s.model, scene.cameras, s.shards, t)
                          : std::optional(scoring_pass(s.model, scene.cameras, s.shards, t));
    if (!report) return;
    ++s.counters.scoring_passes;
    const auto n_before = std::int64_t(s.model.size());
    result.events.push_back({t, "scoring_pass", n_before, n_before, 0, 0, 0});
    s.report = std::move(report);
    const bool prune = prune_stochastically ? cfg.flags.pass1 : cfg.flags.pass2;
    if (prune) {
      PruneResult pr;
      if (prune_stochastically) {
        const std::uint64_t seed = derive_seed(cfg.seed, stream::kPrune, std::uint64_t(t));
        pr = opt.hooks.pass1 ? opt.hooks.pass1(s.model, *s.report, cfg.keep_fraction, seed)
                             : prune_stochastic(s.model, *s.report, cfg.keep_fraction, seed);
      } else {
        pr = opt.hooks.pass2 ? opt.hooks.pass2(s.model, *s.report, cfg.target_mass)
                             : prune_mass_cut(s.model, *s.report, cfg.target_mass);
        if (pr.all_zero_scores)
          std::cerr << "warning: step " << t << ": all importance scores are zero\n";
      }
      const std::int64_t removed = n_before - std::int64_t(pr.model.size());
      if (prune_stochastically) {
        ++s.counters.pass1_prunes;
        s.counters.pass1_removed += removed;
      } else {
        ++s.counters.pass2_prunes;
        s.counters.pass2_removed += removed;
      }
      result.events.push_back({t, prune_stochastically ? "prune_stochastic" : "prune_mass_cut",
                               n_before, std::int64_t(pr.model.size()), 0, 0, removed});
      const ShardMap remapped = remap_shard_map(s.shards, pr.remap);
      apply_population(std::move(pr.model), pr.remap);
      s.stats.grad_accum = apply_remap(s.stats.grad_accum, pr.remap);
      s.stats.count = apply_remap(s.stats.count, pr.remap);
      redistribute(remapped, t, "prune");
    }
    s.stats.phi.assign(s.model.size(), 1.0);
    refresh_phi(t + 1);
  }

  void densify_event(std::int64_t t) {
    auto& s = st();
    const auto n_before = std::int64_t(s.model.size());
    DensifyOutcome d = apply_density_control(s.model, s.stats, s.shards, cfg.densify, t,
                                             scene_extent(train_cameras), cfg.lod.levels, cfg.seed);
    ++s.counters.densify_events;
    s.counters.clones += d.clones;
    s.counters.splits += d.splits;
    s.counters.prunes += d.prunes;
    result.events.push_back({t, "densify", n_before, std::int64_t(d.model.size()), d.clones,
                             d.splits, d.prunes});
    apply_population(std::move(d.model), d.remap);
    s.shards = std::move(d.shards);
    if (d.redistributed) {
      ++s.counters.redistributions;
      result.events.push_back({t, "redistribute_after_densify", std::int64_t(s.model.size()),
                               std::int64_t(s.model.size()), 0, 0, 0});
    }
    s.stats.reset(s.model.size());
    refresh_phi(t + 1);
  }

  std::string diagnostic(std::int64_t t, const std::vector<int>& batch, const LossTerms& terms) {
    nlohmann::json j;
    j["step"] = t;
    std::vector<int> ids;
    for (int idx : batch) ids.push_back(scene.cameras[std::size_t(idx)].id);
    j["camera_ids"] = ids;
    j["loss"] = std::isfinite(terms.total) ? nlohmann::json(terms.total) : nlohmann::json("non-finite");
    j["l1"] = std::isfinite(terms.l1) ? nlohmann::json(terms.l1) : nlohmann::json("non-finite");
    j["ssim"] = std::isfinite(terms.ssim) ? nlohmann::json(terms.ssim) : nlohmann::json("non-finite");
    j["scale_term"] = std::isfinite(terms.scale_term) ? nlohmann::json(terms.scale_term)
                                                      : nlohmann::json("non-finite");
    j["n_gaussians"] = st().model.size();
    std::int64_t bad = 0;
    for (const auto& g : st().model)
      if (!g.params.allFinite()) ++bad;
    j["non_finite_gaussians"] = bad;
    return j.dump(2) + "\n";
  }

  void step(std::int64_t t) {
    auto& s = st();
    const int sh = int(std::min<std::int64_t>(cfg.sh_degree, (t - 1) / cfg.sh_unlock_interval));
    RasterSettings settings;
    settings.sh_degree = sh;
    settings.early_termination = cfg.early_termination;

    const std::vector<int> batch = batch_cameras(train_indices, cfg.batch, t, cfg.seed);
    std::vector<ViewRequest> views;
    std::vector<Image<float>> targets;
    std::int64_t active = 0;
    for (int idx : batch) {
      const Camera& cam = scene.cameras[std::size_t(idx)];
      const auto ids = view_active_set(cam, t);
      active += std::int64_t(ids.size());
      ViewRequest req;
      req.camera = &cam;
      req.active_ids.assign(std::size_t(cfg.m_ranks), {});
      for (std::int64_t id : ids) req.active_ids[std::size_t(s.shards.owner_of[std::size_t(id)])].push_back(id);
      views.push_back(std::move(req));
      targets.push_back(scene.images.at(cam.id));
    }

    const auto frame = distributed_render<float>(s.model, s.shards, views, settings);
    std::vector<std::int64_t> visible;
    for (const auto& rank : frame.ranks)
      for (const auto& sp : rank.local) visible.push_back(sp.global_id);
    std::sort(visible.begin(), visible.end());
    visible.erase(std::unique(visible.begin(), visible.end()), visible.end());

    const auto loss = compute_loss<float>(frame.images, targets, s.model, visible, cfg.loss);
    if (!std::isfinite(loss.terms.total))
      throw NonFiniteLoss("non-finite loss at step " + std::to_string(t), diagnostic(t, batch, loss.terms));

    DistributedGradients grads = distributed_backward<float>(s.model, frame, loss.grad_images);
    for (std::size_t k = 0; k < visible.size(); ++k)
      grads.params[std::size_t(visible[k])].segment<3>(param::kLogScale) += loss.scale_grads[k];

    if (t <= cfg.densify.stop) {
      if (phi_active(t)) ++s.counters.phi_steps;
      std::vector<std::int64_t> ids;
      std::vector<double> norms;
      ids.reserve(grads.mean2d.size());
      norms.reserve(grads.mean2d.size());
      for (const auto& g : grads.mean2d) {
        const Camera& cam = *frame.cameras[std::size_t(g.view)];
        const double gx = g.grad.x() * 0.5 * cam.width, gy = g.grad.y() * 0.5 * cam.height;
        ids.push_back(g.global_id);
        norms.push_back(std::hypot(gx, gy) * cfg.batch);
      }
      s.stats.accumulate(ids, norms);
    }

    begin_step(s.adam);
    const ParamVector lr = learning_rates(cfg.adam, s.adam.step, scene_extent(train_cameras));
    parallel_for(std::size_t(cfg.m_ranks), [&](std::size_t r) {
      adam_update(s.model, s.adam, s.shards.per_rank_ids[r], grads.params, lr, cfg.adam);
    });

    if (cfg.densify.scheduled(t)) densify_event(t);
    if (cfg.densify.opacity_reset && t >= cfg.densify.start && t <= cfg.densify.stop &&
        t % cfg.densify.opacity_reset_interval == 0) {
      reset_opacity(s.model);
      ++s.counters.opacity_resets;
      result.events.push_back({t, "opacity_reset", std::int64_t(s.model.size()),
                               std::int64_t(s.model.size()), 0, 0, 0});
    }
    if (cfg.flags.importance_scoring && t == cfg.t1) scoring_event(t, true);
    if (cfg.flags.importance_scoring && t == cfg.t2) scoring_event(t, false);

    ++s.counters.steps;
    s.step = t;

    MetricsRow row;
    row.step = t;
    row.loss = loss.terms.total;
    row.l1 = loss.terms.l1;
    row.ssim = loss.terms.ssim;
    row.scale_term = loss.terms.scale_term;
    row.n_gaussians = std::int64_t(s.model.size());
    row.active = active;
    row.visible = std::int64_t(visible.size());
    row.exchange_volume = frame.stats.volume;
    result.metrics.push_back(row);

    ShardRow srow;
    srow.step = t;
    srow.shard_sizes = s.shards.shard_sizes();
    srow.received = frame.stats.received_per_rank;
    srow.volume = frame.stats.volume;
    srow.tile_cost_ratio = frame.stats.tile_cost_ratio;
    result.shard_rows.push_back(std::move(srow));
  }

  RenderOptions eval_options(std::int64_t t) const {
    RenderOptions r;
    r.sh_degree = int(std::min<std::int64_t>(cfg.sh_degree, std::max<std::int64_t>(0, t - 1) / cfg.sh_unlock_interval));
    r.early_termination = cfg.early_termination;
    r.step = t;
    return r;
  }

  std::vector<Camera> test_cameras() const {
    std::vector<Camera> out;
    for (int idx : scene.test_camera_indices()) out.push_back(scene.cameras[std::size_t(idx)]);
    return out;
  }

  void run() {
    const auto start = std::chrono::steady_clock::now();
    result.state = opt.resume ? *opt.resume : initial_state(scene, cfg);
    if (opt.resume) {
      require(opt.resume->config_hash == config_hash(cfg),
              "train: checkpoint was written with a different configuration");
      st().shards.validate(st().model.size());
    }
    lod = effective_lod(cfg, st().d0);
    train_indices = scene.train_camera_indices();
    for (int idx : train_indices) train_cameras.push_back(scene.cameras[std::size_t(idx)]);
    if (!opt.resume) refresh_phi(1);
    const auto tests = test_cameras();

    const std::int64_t last = opt.stop_after >= 0 ? std::min(opt.stop_after, cfg.total_steps)
                                                  : cfg.total_steps;
    auto last_tick = start;
    std::int64_t last_tick_step = st().step;
    for (std::int64_t t = st().step + 1; t <= last; ++t) {
      step(t);
      const auto now = std::chrono::steady_clock::now();
      auto& row = result.metrics.back();
      row.wall_seconds = std::chrono::duration<double>(now - start).count();
      const double dt = std::chrono::duration<double>(now - last_tick).count();
      row.its_per_sec = dt > 0 ? double(t - last_tick_step) / dt : 0;
      last_tick = now;
      last_tick_step = t;
      if (cfg.eval_interval > 0 && t % cfg.eval_interval == 0 && !tests.empty()) {
        const auto e = evaluate(st().model, tests, scene.images, eval_options(t));
        row.test_psnr = e.mean_psnr;
        row.test_ssim = e.mean_ssim;
      }
      if (opt.progress && t % 100 == 0)
        std::cerr << "step " << t << " loss " << row.loss << " #GS " << row.n_gaussians << "\n";
      if (cfg.checkpoint_interval > 0 && t % cfg.checkpoint_interval == 0 && opt.on_checkpoint)
        opt.on_checkpoint(st());
    }
    if (!tests.empty()) result.final_eval = evaluate(st().model, tests, scene.images, eval_options(st().step));
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

}  // namespace

TrainResult train(const Scene& scene, const TrainConfig& config, const TrainOptions& options) {
  Trainer trainer(scene, config, options);
  trainer.run();
  return std::move(trainer.result);
}

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << "step,loss,l1,ssim,scale_term,n_gaussians,active,visible,exchange_volume,wall_seconds,"
         "its_per_sec,test_psnr,test_ssim\n";
  for (const auto& r : rows) {
    out << r.step << ',' << fmt(r.loss) << ',' << fmt(r.l1) << ',' << fmt(r.ssim) << ','
        << fmt(r.scale_term) << ',' << r.n_gaussians << ',' << r.active << ',' << r.visible << ','
        << r.exchange_volume << ',' << fmt(r.wall_seconds) << ',' << fmt(r.its_per_sec) << ','
        << (r.test_psnr ? fmt(*r.test_psnr) : "") << ',' << (r.test_ssim ? fmt(*r.test_ssim) : "")
        << '\n';
  }
  return out.str();
}

std::string shard_csv(const std::vector<ShardRow>& rows, int m_ranks) {
  std::ostringstream out;
  out << "step";
  for (int r = 0; r < m_ranks; ++r) out << ",shard_" << r;
  for (int r = 0; r < m_ranks; ++r) out << ",received_" << r;
  out << ",exchange_volume,tile_cost_ratio\n";
  for (const auto& row : rows) {
    out << row.step;
    for (int r = 0; r < m_ranks; ++r)
      out << ',' << (std::size_t(r) < row.shard_sizes.size() ? row.shard_sizes[std::size_t(r)] : 0);
    for (int r = 0; r < m_ranks; ++r)
      out << ',' << (std::size_t(r) < row.received.size() ? row.received[std::size_t(r)] : 0);
    out << ',' << row.volume << ',' << fmt(row.tile_cost_ratio) << '\n';
  }
  return out.str();
}

std::string events_csv(const std::vector<EventRow>& rows) {
  std::ostringstream out;
  out << "step,event,n_before,n_after,clones,splits,prunes\n";
  for (const auto& r : rows)
    out << r.step << ',' << r.event << ',' << r.n_before << ',' << r.n_after << ',' << r.clones
        << ',' << r.splits << ',' << r.prunes << '\n';
  return out.str();
}

std::string eval_csv(const EvalSummary& summary) {
  std::ostringstream out;
  out << "camera_id,psnr,ssim\n";
  for (const auto& v : summary.views) out << v.camera_id << ',' << fmt(v.psnr) << ',' << fmt(v.ssim) << '\n';
  return out.str();
}

std::string counters_json(const Counters& counters) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, value] : counters.items()) j[name] = value;
  return j.dump(2) + "\n";
}

}  // namespace splatshard
