#pragma once

// Finite-difference audit of every differentiable operation, from primitive
// ops through the attention block, the landmark sampler, and both loss
// heads. Each op runs several randomized instances; the reported number is
// the worst relative error seen.

#include <cstdint>
#include <string>
#include <vector>

namespace lafs {

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;
};

std::vector<GradCheckEntry> run_gradient_battery(uint64_t seed, int instances_per_op);

}  // namespace lafs
