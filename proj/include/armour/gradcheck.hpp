#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "armour/attention.hpp"
#include "armour/levit.hpp"
#include "armour/tensor.hpp"

namespace armour {

// Central-difference gradient oracle: (f(x + h e_i) - f(x - h e_i)) / 2h per
// element. f must be deterministic and smooth at x.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step = 1e-5);

// Worst-case elementwise discrepancy between an analytic and a numeric
// gradient. Elements where both magnitudes fall below `tiny` contribute their
// absolute difference; all others contribute |a - n| / max(|a|, |n|).
double max_rel_err(const Tensor& analytic, const Tensor& numeric, double tiny = 1e-8);

// Full-block gradient verification: a seeded random input and weight bundle,
// a fixed random linear functional on the output as the scalar loss, analytic
// gradients from the tape against central differences for the input and every
// weight tensor.
struct GradCheckReport {
  std::string target;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::vector<std::pair<std::string, double>> per_tensor;  // label, max rel err
  double worst = 0.0;

  bool passed() const { return worst < tolerance; }
  std::string to_jsonl_line() const;
  void print_text(std::ostream& os) const;
};

GradCheckReport gradcheck_attention(const AttentionConfig& cfg, std::uint64_t seed,
                                    double tolerance = 1e-4, double step = 1e-5);
GradCheckReport gradcheck_levit(const LevitBlockConfig& cfg, std::uint64_t seed,
                                double tolerance = 1e-4, double step = 1e-5);

}  // namespace armour
