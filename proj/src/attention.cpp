#include "armour/attention.hpp"

#include <cmath>

namespace armour {

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::Regular: return "regular";
    case AttentionVariant::Armour: return "armour";
    case AttentionVariant::QKShared: return "qk_shared";
    case AttentionVariant::QKSharedDiagMasked: return "qk_shared_diag";
    case AttentionVariant::KVShared: return "kv_shared";
  }
  return "regular";
}

AttentionVariant attention_variant_from_string(const std::string& s) {
  if (s == "regular") return AttentionVariant::Regular;
  if (s == "armour") return AttentionVariant::Armour;
  if (s == "qk_shared") return AttentionVariant::QKShared;
  if (s == "qk_shared_diag") return AttentionVariant::QKSharedDiagMasked;
  if (s == "kv_shared") return AttentionVariant::KVShared;
  throw SpecError("unknown attention variant '" + s +
                  "' (expected regular|armour|qk_shared|qk_shared_diag|kv_shared)");
}

std::vector<AttentionVariant> all_attention_variants() {
  return {AttentionVariant::Regular, AttentionVariant::Armour, AttentionVariant::QKShared,
          AttentionVariant::QKSharedDiagMasked, AttentionVariant::KVShared};
}

void AttentionConfig::validate() const {
  if (seq_len == 0 || model_dim == 0 || heads == 0) {
    throw SpecError("attention config: seq_len, model_dim, heads must be positive");
  }
  if (model_dim % heads != 0) {
    throw SpecError("attention config: model_dim " + std::to_string(model_dim) +
                    " not divisible by heads " + std::to_string(heads));
  }
}

namespace {

struct Slot {
  const char* name;
  std::optional<Tensor> AttentionWeights::* member;
  std::optional<GradTape::Var> AttentionVars::* var;
  bool is_bias;
};

constexpr Slot kSlots[] = {
    {"w_q", &AttentionWeights::w_q, &AttentionVars::w_q, false},
    {"b_q", &AttentionWeights::b_q, &AttentionVars::b_q, true},
    {"w_k", &AttentionWeights::w_k, &AttentionVars::w_k, false},
    {"b_k", &AttentionWeights::b_k, &AttentionVars::b_k, true},
    {"w_v", &AttentionWeights::w_v, &AttentionVars::w_v, false},
    {"b_v", &AttentionWeights::b_v, &AttentionVars::b_v, true},
    {"w_o", &AttentionWeights::w_o, &AttentionVars::w_o, false},
    {"b_o", &AttentionWeights::b_o, &AttentionVars::b_o, true},
};

// Which projections exist for a variant. Shared roles alias the surviving
// projection instead of owning their own.
bool slot_required(const std::string& name, const AttentionConfig& cfg) {
  const AttentionVariant v = cfg.variant;
  const bool has_k = v == AttentionVariant::Regular || v == AttentionVariant::Armour ||
                     v == AttentionVariant::KVShared;
  const bool has_v = v == AttentionVariant::Regular || v == AttentionVariant::QKShared ||
                     v == AttentionVariant::QKSharedDiagMasked;
  bool base = false;
  if (name == "w_q" || name == "b_q") base = true;
  if (name == "w_k" || name == "b_k") base = has_k;
  if (name == "w_v" || name == "b_v") base = has_v;
  if (name == "w_o" || name == "b_o") base = cfg.include_output_proj;
  if (name[0] == 'b') return base && cfg.use_bias;
  return base;
}

void check_slot_shape(const std::string& name, const Tensor& t, const AttentionConfig& cfg) {
  const std::size_t d = cfg.model_dim;
  if (name[0] == 'w') {
    if (t.rank() != 2 || t.shape[0] != d || t.shape[1] != d) {
      throw CensusError("attention weights: " + name + " expected [" + std::to_string(d) +
                        " x " + std::to_string(d) + "], got " + shape_string(t));
    }
  } else {
    if (t.rank() != 1 || t.shape[0] != d) {
      throw CensusError("attention weights: " + name + " expected [" + std::to_string(d) +
                        "], got " + shape_string(t));
    }
  }
}

}  // namespace

void validate_attention_weights(const AttentionWeights& w, const AttentionConfig& cfg) {
  cfg.validate();
  for (const Slot& s : kSlots) {
    const auto& member = w.*(s.member);
    const bool required = slot_required(s.name, cfg);
    if (required && !member) {
      throw CensusError("attention weights: variant " + to_string(cfg.variant) + " requires " +
                        s.name);
    }
    if (!required && member) {
      throw CensusError("attention weights: variant " + to_string(cfg.variant) +
                        " must not carry " + s.name);
    }
    if (member) check_slot_shape(s.name, *member, cfg);
  }
}

AttentionWeights init_attention_weights(const AttentionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(seed);
  AttentionWeights w;
  for (const Slot& s : kSlots) {
    if (!slot_required(s.name, cfg)) continue;
    if (s.is_bias) {
      w.*(s.member) = rng.uniform_tensor({d}, -bound, bound);
    } else {
      w.*(s.member) = rng.uniform_tensor({d, d}, -bound, bound);
    }
  }
  return w;
}

std::size_t attention_param_count(const AttentionConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  std::size_t total = 0;
  for (const Slot& s : kSlots) {
    if (!slot_required(s.name, cfg)) continue;
    total += s.is_bias ? d : d * d;
  }
  return total;
}

std::size_t attention_param_count(const AttentionWeights& w) {
  std::size_t total = 0;
  for (const Slot& s : kSlots) {
    const auto& member = w.*(s.member);
    if (member) total += member->numel();
  }
  return total;
}

AttentionVars register_attention_weights(GradTape& tape, const AttentionWeights& w,
                                         const AttentionConfig& cfg) {
  validate_attention_weights(w, cfg);
  AttentionVars vars;
  for (const Slot& s : kSlots) {
    const auto& member = w.*(s.member);
    if (member) vars.*(s.var) = tape.leaf(*member);
  }
  return vars;
}

GradTape::Var attention_forward(GradTape& tape, GradTape::Var x, const AttentionVars& w,
                                const AttentionConfig& cfg,
                                std::vector<GradTape::Var>* head_probs) {
  cfg.validate();
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2 || xv.shape[0] != cfg.seq_len || xv.shape[1] != cfg.model_dim) {
    throw ShapeError("attention_forward: input " + shape_string(xv) + " does not match config [" +
                     std::to_string(cfg.seq_len) + " x " + std::to_string(cfg.model_dim) + "]");
  }
  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const AttentionVariant variant = cfg.variant;

  auto project = [&](std::optional<GradTape::Var> wm, std::optional<GradTape::Var> bm) {
    GradTape::Var p = tape.matmul(x, *wm);
    if (bm) p = tape.add_row_bias(p, *bm);
    return p;
  };

  const GradTape::Var q = project(w.w_q, w.b_q);
  // QKShared feeds the query projection into both sides of the score product.
  std::optional<GradTape::Var> k;
  if (variant == AttentionVariant::Regular || variant == AttentionVariant::Armour ||
      variant == AttentionVariant::KVShared) {
    k = project(w.w_k, w.b_k);
  } else {
    k = q;
  }
  std::optional<GradTape::Var> v;
  if (variant == AttentionVariant::Regular || variant == AttentionVariant::QKShared ||
      variant == AttentionVariant::QKSharedDiagMasked) {
    v = project(w.w_v, w.b_v);
  }

  const bool diag_masked =
      variant == AttentionVariant::QKSharedDiagMasked && cfg.seq_len >= 2;

  std::optional<GradTape::Var> merged;
  for (std::size_t hi = 0; hi < cfg.heads; ++hi) {
    const std::size_t c0 = hi * dh, c1 = (hi + 1) * dh;
    const GradTape::Var qh = tape.slice_cols(q, c0, c1);
    const GradTape::Var kh = (*k == q) ? qh : tape.slice_cols(*k, c0, c1);

    GradTape::Var scores;
    if (variant == AttentionVariant::KVShared) {
      // K is consumed twice here: transposed for the scores and untransposed
      // as the value matrix, so the transpose must be materialized.
      const GradTape::Var kt = tape.transpose(kh);
      scores = tape.scale(tape.matmul(qh, kt), inv_sqrt_dh);
    } else {
      scores = tape.scale(tape.matmul_transpose_b(qh, kh), inv_sqrt_dh);
    }
    if (diag_masked) scores = tape.mask_diagonal(scores, kMaskSentinel);

    const GradTape::Var probs = tape.softmax_rows(scores);
    if (head_probs) head_probs->push_back(probs);

    GradTape::Var value_h = qh;
    switch (variant) {
      case AttentionVariant::Regular:
      case AttentionVariant::QKShared:
      case AttentionVariant::QKSharedDiagMasked:
        value_h = tape.slice_cols(*v, c0, c1);
        break;
      case AttentionVariant::Armour:
        value_h = qh;
        break;
      case AttentionVariant::KVShared:
        value_h = kh;
        break;
    }
    const GradTape::Var out_h = tape.matmul(probs, value_h);
    merged = merged ? tape.concat_last_axis(*merged, out_h) : out_h;
  }

  GradTape::Var out = *merged;
  if (cfg.include_output_proj) {
    out = tape.matmul(out, *w.w_o);
    if (w.b_o) out = tape.add_row_bias(out, *w.b_o);
  }
  return out;
}

Tensor attention_forward(const Tensor& x, const AttentionWeights& w, const AttentionConfig& cfg) {
  GradTape tape;
  const GradTape::Var xv = tape.leaf(x);
  const AttentionVars vars = register_attention_weights(tape, w, cfg);
  return tape.value(attention_forward(tape, xv, vars, cfg));
}

Tensor attention_probabilities(const Tensor& x, const AttentionWeights& w,
                               const AttentionConfig& cfg) {
  GradTape tape;
  const GradTape::Var xv = tape.leaf(x);
  const AttentionVars vars = register_attention_weights(tape, w, cfg);
  std::vector<GradTape::Var> probs;
  attention_forward(tape, xv, vars, cfg, &probs);
  Tensor out({cfg.heads, cfg.seq_len, cfg.seq_len});
  const std::size_t per_head = cfg.seq_len * cfg.seq_len;
  for (std::size_t hi = 0; hi < probs.size(); ++hi) {
    const Tensor& p = tape.value(probs[hi]);
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + hi * per_head);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> attention_weight_entries(AttentionWeights& w) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (const Slot& s : kSlots) {
    auto& member = w.*(s.member);
    if (member) out.emplace_back(s.name, &*member);
  }
  return out;
}

std::vector<std::pair<std::string, GradTape::Var>> attention_var_entries(
    const AttentionVars& v) {
  std::vector<std::pair<std::string, GradTape::Var>> out;
  for (const Slot& s : kSlots) {
    const auto& member = v.*(s.var);
    if (member) out.emplace_back(s.name, *member);
  }
  return out;
}

void add_attention_weights(WeightContainer& c, const AttentionWeights& w,
                           const AttentionConfig& cfg, const std::string& prefix, Dtype dtype) {
  validate_attention_weights(w, cfg);
  for (const Slot& s : kSlots) {
    const auto& member = w.*(s.member);
    if (member) c.add(prefix + s.name, *member, dtype);
  }
}

AttentionWeights load_attention_weights(const WeightContainer& c, const AttentionConfig& cfg,
                                        const std::string& prefix) {
  cfg.validate();
  AttentionWeights w;
  for (const Slot& s : kSlots) {
    const std::string full = prefix + s.name;
    const NamedTensor* t = c.find(full);
    if (slot_required(s.name, cfg)) {
      if (!t) {
        throw CensusError("attention weights: container lacks '" + full + "' required by " +
                          to_string(cfg.variant));
      }
      w.*(s.member) = t->values;
    } else if (t) {
      throw CensusError("attention weights: container holds '" + full + "' which variant " +
                        to_string(cfg.variant) + " forbids");
    }
  }
  // Unknown flat names under the same prefix are census violations too;
  // nested namespaces (e.g. "layer0.mlp.*") belong to other subsystems.
  for (const auto& t : c.tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    const std::string suffix = t.name.substr(prefix.size());
    if (suffix.find('.') != std::string::npos) continue;
    bool known = false;
    for (const Slot& s : kSlots) known = known || suffix == s.name;
    if (!known) {
      throw CensusError("attention weights: container holds unrecognized tensor '" + t.name +
                        "'");
    }
  }
  validate_attention_weights(w, cfg);
  return w;
}

}  // namespace armour
