#pragma once

#include <optional>
#include <string>
#include <vector>

#include "armour/autograd.hpp"
#include "armour/tensor.hpp"
#include "armour/weights_io.hpp"

namespace armour {

// Attention block over an H x W token map with 1x1-convolution projections
// (modeled as per-token channel maps), Q/K at per-head width D and values at
// width 2D. The compact variants shrink or drop the value projection and
// rebuild the 2D-wide value matrix by concatenation:
//   Baseline      value = V                (V projected at width 2D)
//   HalfVConcatQ  value = [V | Q]          (V projected at width D)
//   QKReplacesV   value = [Q | K]          (no value projection at all)
enum class LevitVariant { Baseline, HalfVConcatQ, QKReplacesV };

std::string to_string(LevitVariant v);
LevitVariant levit_variant_from_string(const std::string& s);
std::vector<LevitVariant> all_levit_variants();

struct LevitBlockConfig {
  LevitVariant variant = LevitVariant::Baseline;
  std::size_t heads = 1;      // N
  std::size_t key_dim = 0;    // D
  std::size_t height = 0;     // H
  std::size_t width = 0;      // W
  std::size_t channels = 0;   // C
  bool use_bias = true;

  std::size_t tokens() const { return height * width; }
  void validate() const;
};

struct LevitBlockWeights {
  std::optional<Tensor> p_q, p_k, p_v;  // C x (N*D), C x (N*D), C x (N*2D or N*D)
  std::optional<Tensor> b_q, b_k, b_v;
  std::optional<Tensor> p_o;            // (N*2D) x C
  std::optional<Tensor> b_o;
};

struct LevitBlockVars {
  std::optional<GradTape::Var> p_q, p_k, p_v, b_q, b_k, b_v, p_o, b_o;
};

void validate_levit_weights(const LevitBlockWeights& w, const LevitBlockConfig& cfg);
LevitBlockWeights init_levit_weights(const LevitBlockConfig& cfg, std::uint64_t seed);

std::size_t levit_block_param_count(const LevitBlockConfig& cfg);
std::size_t levit_block_param_count(const LevitBlockWeights& w);

LevitBlockVars register_levit_weights(GradTape& tape, const LevitBlockWeights& w,
                                      const LevitBlockConfig& cfg);

GradTape::Var levit_block_forward(GradTape& tape, GradTape::Var x, const LevitBlockVars& w,
                                  const LevitBlockConfig& cfg,
                                  std::vector<GradTape::Var>* head_probs = nullptr);

Tensor levit_block_forward(const Tensor& x, const LevitBlockWeights& w,
                           const LevitBlockConfig& cfg);

// Per-head attention probabilities, stacked as N x HW x HW.
Tensor levit_block_probabilities(const Tensor& x, const LevitBlockWeights& w,
                                 const LevitBlockConfig& cfg);

// Present tensors in slot order (p_q, b_q, p_k, b_k, p_v, b_v, p_o, b_o).
std::vector<std::pair<std::string, Tensor*>> levit_weight_entries(LevitBlockWeights& w);
std::vector<std::pair<std::string, GradTape::Var>> levit_var_entries(const LevitBlockVars& v);

void add_levit_weights(WeightContainer& c, const LevitBlockWeights& w,
                       const LevitBlockConfig& cfg, const std::string& prefix = "block.",
                       Dtype dtype = Dtype::f64);
LevitBlockWeights load_levit_weights(const WeightContainer& c, const LevitBlockConfig& cfg,
                                     const std::string& prefix = "block.");

}  // namespace armour
