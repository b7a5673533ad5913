#pragma once

#include "splatshard/errors.hpp"

#include <cstdint>
#include <vector>

namespace splatshard {

/// Population change between two dense id spaces.
struct IdRemap {
  std::vector<std::int64_t> old_to_new;  // -1 for removed ids
  std::vector<std::int64_t> source;      // per new id: the old id it was copied or derived from
  std::vector<bool> fresh;               // per new id: true for Gaussians created by the change

  std::size_t old_size() const { return old_to_new.size(); }
  std::size_t new_size() const { return source.size(); }

  static IdRemap identity(std::size_t n) {
    IdRemap r;
    r.old_to_new.resize(n);
    r.source.resize(n);
    r.fresh.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) r.old_to_new[i] = r.source[i] = std::int64_t(i);
    return r;
  }

  /// Survivors renumbered densely in ascending old-id order.
  static IdRemap from_keep_mask(const std::vector<bool>& keep) {
    IdRemap r;
    r.old_to_new.assign(keep.size(), -1);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (!keep[i]) continue;
      r.old_to_new[i] = std::int64_t(r.source.size());
      r.source.push_back(std::int64_t(i));
      r.fresh.push_back(false);
    }
    return r;
  }

  /// Appends a new Gaussian derived from `parent`; returns its id.
  std::int64_t append(std::int64_t parent) {
    source.push_back(parent);
    fresh.push_back(true);
    return std::int64_t(source.size()) - 1;
  }
};

/// Gathers per-Gaussian values into the new id space (fresh entries copy their source).
template <typename T>
std::vector<T> apply_remap(const std::vector<T>& values, const IdRemap& remap) {
  require(values.size() == remap.old_size(), "apply_remap: value count does not match remap");
  std::vector<T> out;
  out.reserve(remap.new_size());
  for (std::int64_t src : remap.source) out.push_back(values[std::size_t(src)]);
  return out;
}

}  // namespace splatshard
