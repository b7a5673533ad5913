#pragma once

#include "splatshard/density_control.hpp"
#include "splatshard/loss.hpp"
#include "splatshard/lod_gate.hpp"
#include "splatshard/optimizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace splatshard {

struct AblationFlags {
  bool lod_gate = true;
  bool importance_scoring = true;
  bool view_mask = true;
  bool phi_reweight = true;
  bool pass1 = true;
  bool pass2 = true;

  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  std::int64_t total_steps = 45000;
  int batch = 4;
  LossWeights loss;
  std::int64_t t1 = 15000;
  std::int64_t t2 = 40000;
  double keep_fraction = 0.6;
  double target_mass = 0.99;
  int m_ranks = 1;
  std::uint64_t seed = 0;
  int sh_degree = kMaxShDegree;
  std::int64_t sh_unlock_interval = 1000;
  bool early_termination = true;
  DensifyConfig densify;
  AdamConfig adam;
  LodConfig lod;  // d0 comes from the scene
  double lod_base_voxel = 0;  // 0: keep the scene's labels
  std::int64_t checkpoint_interval = 0;
  std::int64_t eval_interval = 0;
  AblationFlags flags;

  // Inputs and outputs used by the command line.
  std::string cloud;
  std::string cameras;
  std::string images;
  std::string out;

  /// Throws ContractViolation naming the offending field.
  void validate() const;
};

/// Every field by name. Paths are included.
std::string config_to_json(const TrainConfig& config);

/// Unknown keys and type mismatches raise ParseError naming the field.
TrainConfig config_from_json(const std::string& text, const std::string& source = "config");

/// Applies "key=value"; the value is read as JSON, falling back to a plain string.
void apply_override(TrainConfig& config, const std::string& assignment);

/// FNV-1a over the canonical JSON of every field except the output directory.
std::uint64_t config_hash(const TrainConfig& config);
std::string hash_hex(std::uint64_t hash);

}  // namespace splatshard
