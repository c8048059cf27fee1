#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mlma::verify {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::string detail;  // worst entry, or the exception text when the case threw
};

// Finite-difference gradient checks in float64 for every differentiable op,
// the selective scan (both kernels), the Mamba, BiMamba, convolution,
// feed-forward and subsampling blocks, CTC, and a two-block ConMamba stack
// (d_model 8, n_state 4, 6 frames) with a CTC head end to end. Single ops
// must reach op_tolerance, composed blocks block_tolerance.
std::vector<CheckOutcome> gradcheck_suite(std::uint64_t seed = 2024, double op_tolerance = 1e-4,
                                          double block_tolerance = 1e-3);

}  // namespace mlma::verify
