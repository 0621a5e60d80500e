#pragma once

#include <string>
#include <vector>

#include "attrec/encoder.hpp"

namespace attrec {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct GradCheckOptions {
  EncoderConfig config;     // vocab_size filled in from the fixture
  int num_items = 6;
  int num_users = 4;
  int examples = 3;         // train pairs fed through the loss
  uint64_t seed = 7;
  double fd_step = 1e-5;
  double tolerance = 1e-4;  // per-tensor relative error bound
};

struct GradCheckReport {
  std::vector<std::pair<std::string, double>> tensor_rel_err;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Full-path gradient check: cross-entropy over MaxSim scores of encoded
// sequences against encoded items, analytic reverse-mode gradients vs
// central finite differences, per parameter tensor.
GradCheckReport gradient_check(const GradCheckOptions& options);

// Oracle suites behind the `selfcheck` CLI command: gradient check on a
// small encoder, brute-force MaxSim equality, metric definitions, loss
// properties. All deterministic.
std::vector<CheckResult> run_selfchecks();

}  // namespace attrec
