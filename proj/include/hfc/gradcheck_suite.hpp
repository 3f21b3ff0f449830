#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hfc/model.hpp"

namespace hfc {

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  /// Location of the worst coordinate: input name and flat index.
  std::string worst_input;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// The micro configuration used for block- and model-level checks:
/// 4x4 single-channel images, patch 2 (N = 4), D = 8, H = 2, one MSA and one
/// TSA block, 3 classes.
ModelConfig micro_model_config();

/// Central-difference checks over every tensor op, both attention blocks,
/// the full forward pass, and every loss on the micro model. Deterministic
/// for a given seed.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 7);

}  // namespace hfc
