#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "anyway/nn.hpp"

namespace anyway {

struct GradcheckOptions {
  std::uint64_t seed = 7;
  std::size_t trials = 50;
  std::size_t max_dim = 8;  // upper bound for randomly drawn layer widths
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Test hook: called with (block name, analytic gradient) before comparison.
  std::function<void(const std::string&, GradientSet&)> corrupt;
};

struct GradcheckBlock {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t trials = 0;
  bool passed = true;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<GradcheckBlock> blocks;
  bool passed() const;
  /// CSV "block,trials,max_rel_error,status"
  std::string to_csv() const;
};

/// Compares every hand-written backward pass against central finite differences on
/// randomly shaped nets: plain cross-entropy (encoder + head), the any-way scatter,
/// the semantic head, the outer objective with semantic routing, and ProtoNet distances
/// with the alignment term.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace anyway
