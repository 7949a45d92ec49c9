#include "armour/levit.hpp"

#include <cmath>

namespace armour {

std::string to_string(LevitVariant v) {
  switch (v) {
    case LevitVariant::Baseline: return "baseline";
    case LevitVariant::HalfVConcatQ: return "half_v_concat_q";
    case LevitVariant::QKReplacesV: return "qk_replaces_v";
  }
  return "baseline";
}

LevitVariant levit_variant_from_string(const std::string& s) {
  if (s == "baseline") return LevitVariant::Baseline;
  if (s == "half_v_concat_q") return LevitVariant::HalfVConcatQ;
  if (s == "qk_replaces_v") return LevitVariant::QKReplacesV;
  throw SpecError("unknown block variant '" + s +
                  "' (expected baseline|half_v_concat_q|qk_replaces_v)");
}

std::vector<LevitVariant> all_levit_variants() {
  return {LevitVariant::Baseline, LevitVariant::HalfVConcatQ, LevitVariant::QKReplacesV};
}

void LevitBlockConfig::validate() const {
  if (heads == 0 || key_dim == 0 || height == 0 || width == 0 || channels == 0) {
    throw SpecError("block config: heads, key_dim, height, width, channels must be positive");
  }
}

namespace {

std::size_t value_proj_width(const LevitBlockConfig& cfg) {
  switch (cfg.variant) {
    case LevitVariant::Baseline: return cfg.heads * 2 * cfg.key_dim;
    case LevitVariant::HalfVConcatQ: return cfg.heads * cfg.key_dim;
    case LevitVariant::QKReplacesV: return 0;
  }
  return 0;
}

struct Slot {
  const char* name;
  std::optional<Tensor> LevitBlockWeights::* member;
  std::optional<GradTape::Var> LevitBlockVars::* var;
  bool is_bias;
};

constexpr Slot kSlots[] = {
    {"p_q", &LevitBlockWeights::p_q, &LevitBlockVars::p_q, false},
    {"b_q", &LevitBlockWeights::b_q, &LevitBlockVars::b_q, true},
    {"p_k", &LevitBlockWeights::p_k, &LevitBlockVars::p_k, false},
    {"b_k", &LevitBlockWeights::b_k, &LevitBlockVars::b_k, true},
    {"p_v", &LevitBlockWeights::p_v, &LevitBlockVars::p_v, false},
    {"b_v", &LevitBlockWeights::b_v, &LevitBlockVars::b_v, true},
    {"p_o", &LevitBlockWeights::p_o, &LevitBlockVars::p_o, false},
    {"b_o", &LevitBlockWeights::b_o, &LevitBlockVars::b_o, true},
};

bool slot_required(const std::string& name, const LevitBlockConfig& cfg) {
  bool base = false;
  if (name == "p_q" || name == "b_q" || name == "p_k" || name == "b_k") base = true;
  if (name == "p_v" || name == "b_v") base = cfg.variant != LevitVariant::QKReplacesV;
  if (name == "p_o" || name == "b_o") base = true;
  if (name[0] == 'b') return base && cfg.use_bias;
  return base;
}

std::vector<std::size_t> slot_shape(const std::string& name, const LevitBlockConfig& cfg) {
  const std::size_t nd = cfg.heads * cfg.key_dim;
  const std::size_t out_w = cfg.heads * 2 * cfg.key_dim;
  if (name == "p_q" || name == "p_k") return {cfg.channels, nd};
  if (name == "b_q" || name == "b_k") return {nd};
  if (name == "p_v") return {cfg.channels, value_proj_width(cfg)};
  if (name == "b_v") return {value_proj_width(cfg)};
  if (name == "p_o") return {out_w, cfg.channels};
  return {cfg.channels};  // b_o
}

}  // namespace

void validate_levit_weights(const LevitBlockWeights& w, const LevitBlockConfig& cfg) {
  cfg.validate();
  for (const Slot& s : kSlots) {
    const auto& member = w.*(s.member);
    const bool required = slot_required(s.name, cfg);
    if (required && !member) {
      throw CensusError("block weights: variant " + to_string(cfg.variant) + " requires " +
                        s.name);
    }
    if (!required && member) {
      throw CensusError("block weights: variant " + to_string(cfg.variant) + " must not carry " +
                        s.name);
    }
    if (member && member->shape != slot_shape(s.name, cfg)) {
      throw CensusError("block weights: " + std::string(s.name) + " expected " +
                        shape_string(slot_shape(s.name, cfg)) + ", got " +
                        shape_string(*member));
    }
  }
}

LevitBlockWeights init_levit_weights(const LevitBlockConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
  Rng rng(seed);
  LevitBlockWeights w;
  for (const Slot& s : kSlots) {
    if (!slot_required(s.name, cfg)) continue;
    w.*(s.member) = rng.uniform_tensor(slot_shape(s.name, cfg), -bound, bound);
  }
  return w;
}

std::size_t levit_block_param_count(const LevitBlockConfig& cfg) {
  cfg.validate();
  std::size_t total = 0;
  for (const Slot& s : kSlots) {
    if (!slot_required(s.name, cfg)) continue;
    const auto shape = slot_shape(s.name, cfg);
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    total += n;
  }
  return total;
}

std::size_t levit_block_param_count(const LevitBlockWeights& w) {
  std::size_t total = 0;
  for (const Slot& s : kSlots) {
    const auto& member = w.*(s.member);
    if (member) total += member->numel();
  }
  return total;
}

LevitBlockVars register_levit_weights(GradTape& tape, const LevitBlockWeights& w,
                                      const LevitBlockConfig& cfg) {
  validate_levit_weights(w, cfg);
  LevitBlockVars vars;
  for (const Slot& s : kSlots) {
    const auto& member = w.*(s.member);
    if (member) vars.*(s.var) = tape.leaf(*member);
  }
  return vars;
}

GradTape::Var levit_block_forward(GradTape& tape, GradTape::Var x, const LevitBlockVars& w,
                                  const LevitBlockConfig& cfg,
                                  std::vector<GradTape::Var>* head_probs) {
  cfg.validate();
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2 || xv.shape[0] != cfg.tokens() || xv.shape[1] != cfg.channels) {
    throw ShapeError("levit_block_forward: input " + shape_string(xv) +
                     " does not match config [" + std::to_string(cfg.tokens()) + " x " +
                     std::to_string(cfg.channels) + "]");
  }
  const std::size_t d = cfg.key_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  auto project = [&](std::optional<GradTape::Var> pm, std::optional<GradTape::Var> bm) {
    GradTape::Var p = tape.matmul(x, *pm);
    if (bm) p = tape.add_row_bias(p, *bm);
    return p;
  };

  const GradTape::Var q = project(w.p_q, w.b_q);
  const GradTape::Var k = project(w.p_k, w.b_k);
  std::optional<GradTape::Var> v;
  if (cfg.variant != LevitVariant::QKReplacesV) v = project(w.p_v, w.b_v);

  std::optional<GradTape::Var> merged;
  for (std::size_t n = 0; n < cfg.heads; ++n) {
    const GradTape::Var qh = tape.slice_cols(q, n * d, (n + 1) * d);
    const GradTape::Var kh = tape.slice_cols(k, n * d, (n + 1) * d);
    const GradTape::Var probs =
        tape.softmax_rows(tape.scale(tape.matmul_transpose_b(qh, kh), inv_sqrt_d));
    if (head_probs) head_probs->push_back(probs);

    GradTape::Var value_h = qh;
    switch (cfg.variant) {
      case LevitVariant::Baseline:
        value_h = tape.slice_cols(*v, n * 2 * d, (n + 1) * 2 * d);
        break;
      case LevitVariant::HalfVConcatQ:
        value_h = tape.concat_last_axis(tape.slice_cols(*v, n * d, (n + 1) * d), qh);
        break;
      case LevitVariant::QKReplacesV:
        value_h = tape.concat_last_axis(qh, kh);
        break;
    }
    const GradTape::Var out_h = tape.matmul(probs, value_h);
    merged = merged ? tape.concat_last_axis(*merged, out_h) : out_h;
  }

  GradTape::Var out = tape.matmul(*merged, *w.p_o);
  if (w.b_o) out = tape.add_row_bias(out, *w.b_o);
  return out;
}

Tensor levit_block_forward(const Tensor& x, const LevitBlockWeights& w,
                           const LevitBlockConfig& cfg) {
  GradTape tape;
  const GradTape::Var xv = tape.leaf(x);
  const LevitBlockVars vars = register_levit_weights(tape, w, cfg);
  return tape.value(levit_block_forward(tape, xv, vars, cfg));
}

Tensor levit_block_probabilities(const Tensor& x, const LevitBlockWeights& w,
                                 const LevitBlockConfig& cfg) {
  GradTape tape;
  const GradTape::Var xv = tape.leaf(x);
  const LevitBlockVars vars = register_levit_weights(tape, w, cfg);
  std::vector<GradTape::Var> probs;
  levit_block_forward(tape, xv, vars, cfg, &probs);
  const std::size_t hw = cfg.tokens();
  Tensor out({cfg.heads, hw, hw});
  for (std::size_t n = 0; n < probs.size(); ++n) {
    const Tensor& p = tape.value(probs[n]);
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + n * hw * hw);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> levit_weight_entries(LevitBlockWeights& w) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (const Slot& s : kSlots) {
    auto& member = w.*(s.member);
    if (member) out.emplace_back(s.name, &*member);
  }
  return out;
}

std::vector<std::pair<std::string, GradTape::Var>> levit_var_entries(const LevitBlockVars& v) {
  std::vector<std::pair<std::string, GradTape::Var>> out;
  for (const Slot& s : kSlots) {
    const auto& member = v.*(s.var);
    if (member) out.emplace_back(s.name, *member);
  }
  return out;
}

void add_levit_weights(WeightContainer& c, const LevitBlockWeights& w,
                       const LevitBlockConfig& cfg, const std::string& prefix, Dtype dtype) {
  validate_levit_weights(w, cfg);
  for (const Slot& s : kSlots) {
    const auto& member = w.*(s.member);
    if (member) c.add(prefix + s.name, *member, dtype);
  }
}

LevitBlockWeights load_levit_weights(const WeightContainer& c, const LevitBlockConfig& cfg,
                                     const std::string& prefix) {
  cfg.validate();
  LevitBlockWeights w;
  for (const Slot& s : kSlots) {
    const std::string full = prefix + s.name;
    const NamedTensor* t = c.find(full);
    if (slot_required(s.name, cfg)) {
      if (!t) {
        throw CensusError("block weights: container lacks '" + full + "' required by " +
                          to_string(cfg.variant));
      }
      w.*(s.member) = t->values;
    } else if (t) {
      throw CensusError("block weights: container holds '" + full + "' which variant " +
                        to_string(cfg.variant) + " forbids");
    }
  }
  for (const auto& t : c.tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    const std::string suffix = t.name.substr(prefix.size());
    if (suffix.find('.') != std::string::npos) continue;
    bool known = false;
    for (const Slot& s : kSlots) known = known || suffix == s.name;
    if (!known) {
      throw CensusError("block weights: container holds unrecognized tensor '" + t.name + "'");
    }
  }
  validate_levit_weights(w, cfg);
  return w;
}

}  // namespace armour
