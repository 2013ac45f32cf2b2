#pragma once

#include <string>
#include <vector>

namespace dfdg::testing {

struct OracleCase {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Analytic examples for every loss kernel (tolerance 1e-6) plus the
/// exhaustive 3-class gate truth table for all three variants.
std::vector<OracleCase> loss_formula_cases();

/// Central finite differences against analytic gradients for L_fid, L_tran,
/// L_div, L_cd (generator side, d = 4) and L_dmd (student side).
std::vector<OracleCase> gradient_cases(double tolerance = 1e-3);

/// Cover, disjointness, weighting and label-counter properties over `draws`
/// random (N, omega, seed) triples on SYNTH_TOY.
std::vector<OracleCase> partition_property_cases(int draws = 120);

/// The four enumerated N = 10, sigma = 2 budget distributions.
std::vector<OracleCase> budget_cases();

/// First literal-Adam step from zero moments equals -lr * g / (|g| + 1e-8),
/// both for adam_step alone and inside a one-step generator update.
std::vector<OracleCase> adam_cases(double tolerance = 1e-7);

}  // namespace dfdg::testing
