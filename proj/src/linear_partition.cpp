#include "splatshard/linear_partition.hpp"

#include "splatshard/errors.hpp"

#include <algorithm>
#include <limits>

namespace splatshard {

std::vector<std::size_t> linear_partition(std::span<const std::int64_t> costs, int parts) {
  require(parts >= 1, "linear_partition: need at least one part");
  const std::size_t n = costs.size();
  const auto m = std::size_t(parts);
  std::vector<std::int64_t> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    require(costs[i] >= 0, "linear_partition: negative cost");
    prefix[i + 1] = prefix[i] + costs[i];
  }

  // best[j][i]: minimal max run cost of the first i items split into j + 1 runs.
  std::vector<std::vector<std::int64_t>> best(m, std::vector<std::int64_t>(n + 1));
  std::vector<std::vector<std::size_t>> split(m, std::vector<std::size_t>(n + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) best[0][i] = prefix[i];
  for (std::size_t j = 1; j < m; ++j) {
    for (std::size_t i = 0; i <= n; ++i) {
      std::int64_t value = std::numeric_limits<std::int64_t>::max();
      std::size_t arg = 0;
      for (std::size_t x = 0; x <= i; ++x) {
        const std::int64_t c = std::max(best[j - 1][x], prefix[i] - prefix[x]);
        if (c < value) {
          value = c;
          arg = x;
        }
      }
      best[j][i] = value;
      split[j][i] = arg;
    }
  }

  std::vector<std::size_t> bounds(m + 1, 0);
  bounds[m] = n;
  std::size_t i = n;
  for (std::size_t j = m - 1; j >= 1; --j) {
    i = split[j][i];
    bounds[j] = i;
  }
  return bounds;
}

std::int64_t max_run_cost(std::span<const std::int64_t> costs,
                          std::span<const std::size_t> boundaries) {
  std::int64_t worst = 0;
  for (std::size_t r = 0; r + 1 < boundaries.size(); ++r) {
    std::int64_t sum = 0;
    for (std::size_t k = boundaries[r]; k < boundaries[r + 1]; ++k) sum += costs[k];
    worst = std::max(worst, sum);
  }
  return worst;
}

}  // namespace splatshard
