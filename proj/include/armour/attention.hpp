#pragma once

#include <optional>
#include <string>
#include <vector>

#include "armour/autograd.hpp"
#include "armour/tensor.hpp"
#include "armour/weights_io.hpp"

namespace armour {

// The single-block self-attention variants. Regular keeps all three
// projections; Armour reuses the query projection as the value matrix;
// QKShared reuses the query projection as the key matrix (optionally with the
// self-attention diagonal suppressed); KVShared reuses the key projection as
// the value matrix.
enum class AttentionVariant {
  Regular,
  Armour,
  QKShared,
  QKSharedDiagMasked,
  KVShared,
};

std::string to_string(AttentionVariant v);
AttentionVariant attention_variant_from_string(const std::string& s);
std::vector<AttentionVariant> all_attention_variants();

struct AttentionConfig {
  AttentionVariant variant = AttentionVariant::Regular;
  std::size_t seq_len = 0;
  std::size_t model_dim = 0;
  std::size_t heads = 1;
  bool use_bias = true;
  bool include_output_proj = true;

  std::size_t head_dim() const { return model_dim / heads; }
  void validate() const;
};

// Weight bundle. Which tensors are present is dictated by the variant; the
// census is strict in both directions.
struct AttentionWeights {
  std::optional<Tensor> w_q, w_k, w_v;
  std::optional<Tensor> b_q, b_k, b_v;
  std::optional<Tensor> w_o;
  std::optional<Tensor> b_o;
};

// Tape handles for a registered weight bundle.
struct AttentionVars {
  std::optional<GradTape::Var> w_q, w_k, w_v, b_q, b_k, b_v, w_o, b_o;
};

// Throws CensusError unless the bundle holds exactly the tensors the config
// requires, with the right shapes.
void validate_attention_weights(const AttentionWeights& w, const AttentionConfig& cfg);

// Seeded uniform(-1/sqrt(d), 1/sqrt(d)) init of every required tensor.
AttentionWeights init_attention_weights(const AttentionConfig& cfg, std::uint64_t seed);

// Analytic parameter total for a config, and the census of an actual bundle.
std::size_t attention_param_count(const AttentionConfig& cfg);
std::size_t attention_param_count(const AttentionWeights& w);

// Registers every present weight as a tape leaf (validates first).
AttentionVars register_attention_weights(GradTape& tape, const AttentionWeights& w,
                                         const AttentionConfig& cfg);

// Differentiable forward pass. When head_probs is non-null it receives one
// L x L probability var per head.
GradTape::Var attention_forward(GradTape& tape, GradTape::Var x, const AttentionVars& w,
                                const AttentionConfig& cfg,
                                std::vector<GradTape::Var>* head_probs = nullptr);

// Value-only forward: runs the same graph on a throwaway tape.
Tensor attention_forward(const Tensor& x, const AttentionWeights& w, const AttentionConfig& cfg);

// Per-head attention probabilities, stacked as h x L x L.
Tensor attention_probabilities(const Tensor& x, const AttentionWeights& w,
                               const AttentionConfig& cfg);

// Present tensors in a fixed slot order (w_q, b_q, w_k, b_k, w_v, b_v, w_o,
// b_o), paired with their conventional names.
std::vector<std::pair<std::string, Tensor*>> attention_weight_entries(AttentionWeights& w);
std::vector<std::pair<std::string, GradTape::Var>> attention_var_entries(
    const AttentionVars& v);

// Container round-trip at a name prefix such as "layer0.". Loading is strict:
// every container name under the prefix must belong to the variant's census.
void add_attention_weights(WeightContainer& c, const AttentionWeights& w,
                           const AttentionConfig& cfg, const std::string& prefix,
                           Dtype dtype = Dtype::f64);
AttentionWeights load_attention_weights(const WeightContainer& c, const AttentionConfig& cfg,
                                        const std::string& prefix);

}  // namespace armour
