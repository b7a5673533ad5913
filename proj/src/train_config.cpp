#include "splatshard/train_config.hpp"

#include "splatshard/errors.hpp"

#include <json.hpp>

#include <cstdio>

namespace splatshard {

using nlohmann::json;

namespace {

json to_json(const TrainConfig& c) {
  return json{
      {"total_steps", c.total_steps},
      {"batch", c.batch},
      {"lambda", c.loss.lambda},
      {"beta", c.loss.beta},
      {"t1", c.t1},
      {"t2", c.t2},
      {"keep_fraction", c.keep_fraction},
      {"target_mass", c.target_mass},
      {"m_ranks", c.m_ranks},
      {"seed", c.seed},
      {"sh_degree", c.sh_degree},
      {"sh_unlock_interval", c.sh_unlock_interval},
      {"early_termination", c.early_termination},
      {"densify_start", c.densify.start},
      {"densify_stop", c.densify.stop},
      {"densify_interval", c.densify.interval},
      {"grad_threshold", c.densify.grad_threshold},
      {"scale_fraction", c.densify.scale_fraction},
      {"split_factor", c.densify.split_factor},
      {"min_opacity", c.densify.min_opacity},
      {"opacity_reset", c.densify.opacity_reset},
      {"opacity_reset_interval", c.densify.opacity_reset_interval},
      {"skew_threshold", c.densify.skew_threshold},
      {"position_lr_init", c.adam.position_lr_init},
      {"position_lr_final", c.adam.position_lr_final},
      {"position_lr_max_steps", c.adam.position_lr_max_steps},
      {"sh_dc_lr", c.adam.sh_dc_lr},
      {"sh_rest_lr", c.adam.sh_rest_lr},
      {"opacity_lr", c.adam.opacity_lr},
      {"scale_lr", c.adam.scale_lr},
      {"rotation_lr", c.adam.rotation_lr},
      {"adam_beta1", c.adam.beta1},
      {"adam_beta2", c.adam.beta2},
      {"adam_eps", c.adam.eps},
      {"lod_f", c.lod.f},
      {"lod_levels", c.lod.levels},
      {"lod_unlock_schedule", c.lod.unlock_schedule},
      {"gate_enabled_after", c.lod.gate_enabled_after},
      {"fallback_ratio", c.lod.fallback_ratio},
      {"lod_rounding", c.lod.rounding == LevelRounding::Floor ? "floor" : "nearest_even"},
      {"lod_base_voxel", c.lod_base_voxel},
      {"checkpoint_interval", c.checkpoint_interval},
      {"eval_interval", c.eval_interval},
      {"lod_gate", c.flags.lod_gate},
      {"importance_scoring", c.flags.importance_scoring},
      {"view_mask", c.flags.view_mask},
      {"phi_reweight", c.flags.phi_reweight},
      {"pass1", c.flags.pass1},
      {"pass2", c.flags.pass2},
      {"cloud", c.cloud},
      {"cameras", c.cameras},
      {"images", c.images},
      {"out", c.out},
  };
}

template <typename T>
void read_field(const json& j, const std::string& key, T& target, const std::string& source) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw std::invalid_argument("expected true or false");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw std::invalid_argument("expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0)
          throw std::invalid_argument("expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw std::invalid_argument("expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw std::invalid_argument("expected a string");
    }
    target = j.get<T>();
  } catch (const std::exception& e) {
    throw ParseError(source, 0, key, e.what());
  }
}

void from_json(const json& doc, TrainConfig& c, const std::string& source) {
  if (!doc.is_object()) throw ParseError(source, 0, "<root>", "expected a JSON object");
  const json known = to_json(TrainConfig{});
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw ParseError(source, 0, key, "unknown field");
    auto& k = key;
    auto& v = value;
    if (k == "total_steps") read_field(v, k, c.total_steps, source);
    else if (k == "batch") read_field(v, k, c.batch, source);
    else if (k == "lambda") read_field(v, k, c.loss.lambda, source);
    else if (k == "beta") read_field(v, k, c.loss.beta, source);
    else if (k == "t1") read_field(v, k, c.t1, source);
    else if (k == "t2") read_field(v, k, c.t2, source);
    else if (k == "keep_fraction") read_field(v, k, c.keep_fraction, source);
    else if (k == "target_mass") read_field(v, k, c.target_mass, source);
    else if (k == "m_ranks") read_field(v, k, c.m_ranks, source);
    else if (k == "seed") read_field(v, k, c.seed, source);
    else if (k == "sh_degree") read_field(v, k, c.sh_degree, source);
    else if (k == "sh_unlock_interval") read_field(v, k, c.sh_unlock_interval, source);
    else if (k == "early_termination") read_field(v, k, c.early_termination, source);
    else if (k == "densify_start") read_field(v, k, c.densify.start, source);
    else if (k == "densify_stop") read_field(v, k, c.densify.stop, source);
    else if (k == "densify_interval") read_field(v, k, c.densify.interval, source);
    else if (k == "grad_threshold") read_field(v, k, c.densify.grad_threshold, source);
    else if (k == "scale_fraction") read_field(v, k, c.densify.scale_fraction, source);
    else if (k == "split_factor") read_field(v, k, c.densify.split_factor, source);
    else if (k == "min_opacity") read_field(v, k, c.densify.min_opacity, source);
    else if (k == "opacity_reset") read_field(v, k, c.densify.opacity_reset, source);
    else if (k == "opacity_reset_interval") read_field(v, k, c.densify.opacity_reset_interval, source);
    else if (k == "skew_threshold") read_field(v, k, c.densify.skew_threshold, source);
    else if (k == "position_lr_init") read_field(v, k, c.adam.position_lr_init, source);
    else if (k == "position_lr_final") read_field(v, k, c.adam.position_lr_final, source);
    else if (k == "position_lr_max_steps") read_field(v, k, c.adam.position_lr_max_steps, source);
    else if (k == "sh_dc_lr") read_field(v, k, c.adam.sh_dc_lr, source);
    else if (k == "sh_rest_lr") read_field(v, k, c.adam.sh_rest_lr, source);
    else if (k == "opacity_lr") read_field(v, k, c.adam.opacity_lr, source);
    else if (k == "scale_lr") read_field(v, k, c.adam.scale_lr, source);
    else if (k == "rotation_lr") read_field(v, k, c.adam.rotation_lr, source);
    else if (k == "adam_beta1") read_field(v, k, c.adam.beta1, source);
    else if (k == "adam_beta2") read_field(v, k, c.adam.beta2, source);
    else if (k == "adam_eps") read_field(v, k, c.adam.eps, source);
    else if (k == "lod_f") read_field(v, k, c.lod.f, source);
    else if (k == "lod_levels") read_field(v, k, c.lod.levels, source);
    else if (k == "lod_unlock_schedule") {
      if (!v.is_array()) throw ParseError(source, 0, k, "expected an array of integers");
      c.lod.unlock_schedule.clear();
      for (const auto& e : v) {
        std::int64_t s = 0;
        read_field(e, k, s, source);
        c.lod.unlock_schedule.push_back(s);
      }
    } else if (k == "gate_enabled_after") read_field(v, k, c.lod.gate_enabled_after, source);
    else if (k == "fallback_ratio") read_field(v, k, c.lod.fallback_ratio, source);
    else if (k == "lod_rounding") {
      std::string r;
      read_field(v, k, r, source);
      if (r == "floor") c.lod.rounding = LevelRounding::Floor;
      else if (r == "nearest_even") c.lod.rounding = LevelRounding::NearestEven;
      else throw ParseError(source, 0, k, "expected \"nearest_even\" or \"floor\"");
    } else if (k == "lod_base_voxel") read_field(v, k, c.lod_base_voxel, source);
    else if (k == "checkpoint_interval") read_field(v, k, c.checkpoint_interval, source);
    else if (k == "eval_interval") read_field(v, k, c.eval_interval, source);
    else if (k == "lod_gate") read_field(v, k, c.flags.lod_gate, source);
    else if (k == "importance_scoring") read_field(v, k, c.flags.importance_scoring, source);
    else if (k == "view_mask") read_field(v, k, c.flags.view_mask, source);
    else if (k == "phi_reweight") read_field(v, k, c.flags.phi_reweight, source);
    else if (k == "pass1") read_field(v, k, c.flags.pass1, source);
    else if (k == "pass2") read_field(v, k, c.flags.pass2, source);
    else if (k == "cloud") read_field(v, k, c.cloud, source);
    else if (k == "cameras") read_field(v, k, c.cameras, source);
    else if (k == "images") read_field(v, k, c.images, source);
    else if (k == "out") read_field(v, k, c.out, source);
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto check = [](bool ok, const char* field, const char* what) {
    if (!ok) throw ContractViolation(std::string("config field '") + field + "': " + what);
  };
  check(total_steps >= 0, "total_steps", "must be non-negative");
  check(batch >= 1, "batch", "must be at least 1");
  check(t1 < t2, "t1", "must be below t2");
  check(keep_fraction > 0 && keep_fraction <= 1, "keep_fraction", "must lie in (0, 1]");
  check(target_mass > 0 && target_mass <= 1, "target_mass", "must lie in (0, 1]");
  check(m_ranks >= 1, "m_ranks", "must be at least 1");
  check(sh_degree >= 0 && sh_degree <= kMaxShDegree, "sh_degree", "must lie in [0, 2]");
  check(sh_unlock_interval >= 1, "sh_unlock_interval", "must be positive");
  check(densify.interval >= 1, "densify_interval", "must be positive");
  check(densify.skew_threshold > 1, "skew_threshold", "must exceed 1");
  check(loss.lambda >= 0 && loss.lambda <= 1, "lambda", "must lie in [0, 1]");
  check(lod.f > 1, "lod_f", "must exceed 1");
  check(lod.levels >= 1, "lod_levels", "must be at least 1");
  for (std::size_t k = 1; k < lod.unlock_schedule.size(); ++k)
    check(lod.unlock_schedule[k] > lod.unlock_schedule[k - 1], "lod_unlock_schedule",
          "must be strictly increasing");
  check(lod_base_voxel >= 0, "lod_base_voxel", "must be non-negative");
  check(checkpoint_interval >= 0, "checkpoint_interval", "must be non-negative");
  check(eval_interval >= 0, "eval_interval", "must be non-negative");
}

std::string config_to_json(const TrainConfig& config) { return to_json(config).dump(2) + "\n"; }

TrainConfig config_from_json(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source, 0, "<root>", e.what());
  }
  TrainConfig c;
  from_json(doc, c, source);
  return c;
}

void apply_override(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ParseError("--set", 0, assignment, "expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  from_json(json{{key, value}}, config, "--set");
}

std::uint64_t config_hash(const TrainConfig& config) {
  json j = to_json(config);
  j.erase("out");
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace splatshard
