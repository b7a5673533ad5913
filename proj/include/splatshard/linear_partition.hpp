#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace splatshard {

/// Splits `costs` into `parts` contiguous runs minimising the largest run sum (runs may be
/// empty). Returns parts + 1 offsets, first 0 and last costs.size(); ties take the earliest
/// boundary.
std::vector<std::size_t> linear_partition(std::span<const std::int64_t> costs, int parts);

std::int64_t max_run_cost(std::span<const std::int64_t> costs,
                          std::span<const std::size_t> boundaries);

}  // namespace splatshard
