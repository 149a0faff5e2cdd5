#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mrnet {

struct GradCheckItem {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Test hook: perturb one analytic gradient so the harness must fail.
  bool corrupt = false;
};

// Central-difference checks of every differentiable op plus the full
// mrnet loss at desk scale (width scale 1/8, reduced resolution, a couple of
// sampled elements per parameter tensor).
std::vector<GradCheckItem> run_gradient_checks(std::uint64_t seed, const GradCheckOptions& options = {});

bool all_within(const std::vector<GradCheckItem>& items, double tolerance);

}  // namespace mrnet
