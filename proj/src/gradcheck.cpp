#include "armour/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "json.hpp"

#include "armour/autograd.hpp"

namespace armour {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step) {
  Tensor grad(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + step;
    const double hi = f(probe);
    probe.data[i] = orig - step;
    const double lo = f(probe);
    probe.data[i] = orig;
    grad.data[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

double max_rel_err(const Tensor& analytic, const Tensor& numeric, double tiny) {
  if (!analytic.same_shape(numeric)) {
    throw ShapeError("max_rel_err: shapes disagree, " + shape_string(analytic) + " vs " +
                     shape_string(numeric));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic.data[i];
    const double n = numeric.data[i];
    const double diff = std::abs(a - n);
    if (std::abs(a) < tiny && std::abs(n) < tiny) {
      worst = std::max(worst, diff);
    } else {
      worst = std::max(worst, diff / std::max(std::abs(a), std::abs(n)));
    }
  }
  return worst;
}

namespace {

double weighted_sum(const Tensor& t, const Tensor& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) acc += t.data[i] * r.data[i];
  return acc;
}

}  // namespace

GradCheckReport gradcheck_attention(const AttentionConfig& cfg, std::uint64_t seed,
                                    double tolerance, double step) {
  cfg.validate();
  Rng rng(seed);
  const Tensor x = rng.uniform_tensor({cfg.seq_len, cfg.model_dim}, -1.0, 1.0);
  AttentionWeights weights = init_attention_weights(cfg, seed + 1000003);
  const Tensor out0 = attention_forward(x, weights, cfg);
  Rng rrng(seed ^ 0x517cc1b727220a95ULL);
  const Tensor r = rrng.uniform_tensor(out0.shape, -1.0, 1.0);

  GradTape tape;
  const GradTape::Var xv = tape.leaf(x);
  const AttentionVars vars = register_attention_weights(tape, weights, cfg);
  const GradTape::Var out = attention_forward(tape, xv, vars, cfg);
  const GradTape::Var loss = tape.sum(tape.hadamard(out, tape.leaf(r)));
  const auto grads = tape.backward(loss);

  GradCheckReport rep;
  rep.target = to_string(cfg.variant) + " L=" + std::to_string(cfg.seq_len) +
               " d=" + std::to_string(cfg.model_dim) + " h=" + std::to_string(cfg.heads);
  rep.seed = seed;
  rep.tolerance = tolerance;

  {
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& probe) { return weighted_sum(attention_forward(probe, weights, cfg), r); },
        x, step);
    rep.per_tensor.emplace_back("x", max_rel_err(grads.at(xv), numeric));
  }
  const auto var_entries = attention_var_entries(vars);
  for (const auto& [name, var] : var_entries) {
    const std::string label = name;
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& probe) {
          AttentionWeights wc = weights;
          for (auto& [n2, t2] : attention_weight_entries(wc)) {
            if (n2 == label) *t2 = probe;
          }
          return weighted_sum(attention_forward(x, wc, cfg), r);
        },
        tape.value(var), step);
    rep.per_tensor.emplace_back(label, max_rel_err(grads.at(var), numeric));
  }
  for (const auto& [label, err] : rep.per_tensor) rep.worst = std::max(rep.worst, err);
  return rep;
}

GradCheckReport gradcheck_levit(const LevitBlockConfig& cfg, std::uint64_t seed,
                                double tolerance, double step) {
  cfg.validate();
  Rng rng(seed);
  const Tensor x = rng.uniform_tensor({cfg.tokens(), cfg.channels}, -1.0, 1.0);
  LevitBlockWeights weights = init_levit_weights(cfg, seed + 1000003);
  const Tensor out0 = levit_block_forward(x, weights, cfg);
  Rng rrng(seed ^ 0x517cc1b727220a95ULL);
  const Tensor r = rrng.uniform_tensor(out0.shape, -1.0, 1.0);

  GradTape tape;
  const GradTape::Var xv = tape.leaf(x);
  const LevitBlockVars vars = register_levit_weights(tape, weights, cfg);
  const GradTape::Var out = levit_block_forward(tape, xv, vars, cfg);
  const GradTape::Var loss = tape.sum(tape.hadamard(out, tape.leaf(r)));
  const auto grads = tape.backward(loss);

  GradCheckReport rep;
  rep.target = to_string(cfg.variant) + " N=" + std::to_string(cfg.heads) +
               " D=" + std::to_string(cfg.key_dim) + " HW=" + std::to_string(cfg.tokens()) +
               " C=" + std::to_string(cfg.channels);
  rep.seed = seed;
  rep.tolerance = tolerance;

  {
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& probe) {
          return weighted_sum(levit_block_forward(probe, weights, cfg), r);
        },
        x, step);
    rep.per_tensor.emplace_back("x", max_rel_err(grads.at(xv), numeric));
  }
  const auto var_entries = levit_var_entries(vars);
  for (const auto& [name, var] : var_entries) {
    const std::string label = name;
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& probe) {
          LevitBlockWeights wc = weights;
          for (auto& [n2, t2] : levit_weight_entries(wc)) {
            if (n2 == label) *t2 = probe;
          }
          return weighted_sum(levit_block_forward(x, wc, cfg), r);
        },
        tape.value(var), step);
    rep.per_tensor.emplace_back(label, max_rel_err(grads.at(var), numeric));
  }
  for (const auto& [label, err] : rep.per_tensor) rep.worst = std::max(rep.worst, err);
  return rep;
}

std::string GradCheckReport::to_jsonl_line() const {
  nlohmann::ordered_json j;
  j["report"] = "gradcheck";
  j["target"] = target;
  j["seed"] = seed;
  j["tolerance"] = tolerance;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& [label, err] : per_tensor) {
    per.push_back({{"tensor", label}, {"max_rel_err", err}});
  }
  j["per_tensor"] = per;
  j["worst"] = worst;
  j["passed"] = passed();
  return j.dump();
}

void GradCheckReport::print_text(std::ostream& os) const {
  os << "gradcheck " << target << "  seed=" << seed << "\n";
  for (const auto& [label, err] : per_tensor) {
    os << "  " << std::left << std::setw(6) << label << std::scientific
       << std::setprecision(3) << err << "\n";
  }
  os << "  worst=" << std::scientific << std::setprecision(3) << worst << "  "
     << (passed() ? "PASS" : "FAIL") << " (tolerance " << tolerance << ")\n";
  os.unsetf(std::ios::scientific);
}

}  // namespace armour
