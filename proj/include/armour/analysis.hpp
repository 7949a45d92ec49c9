#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "armour/attention.hpp"
#include "armour/levit.hpp"
#include "armour/tensor.hpp"
#include "armour/weights_io.hpp"

namespace armour {

// --- weight redundancy ---------------------------------------------------

struct RedundancyEntry {
  std::string label;
  std::size_t element_count = 0;
  std::size_t below_count = 0;
  double fraction_below = 0.0;
};

// Fraction of elementwise differences |a_i - b_i| strictly below epsilon.
// Ties at exactly epsilon count as not-redundant.
struct RedundancyReport {
  std::string pair_label;
  double epsilon = 1e-2;
  double fraction_below = 0.0;
  std::size_t element_count = 0;
  std::vector<RedundancyEntry> per_layer;

  std::string to_jsonl_line() const;
  void print_text(std::ostream& os) const;
};

RedundancyReport redundancy(const Tensor& a, const Tensor& b, double epsilon = 1e-2,
                            std::string pair_label = "");

struct RedundancyOptions {
  double epsilon = 1e-2;
  bool normalize = false;   // scale each matrix to unit RMS before comparing
  std::size_t per_head = 0; // split matrices column-wise into this many heads
};

// Pairs `<prefix><suffix_a>` with `<prefix><suffix_b>` for every prefix in the
// container and aggregates; each matched prefix becomes a breakdown entry.
RedundancyReport container_redundancy(const WeightContainer& c, const std::string& suffix_a,
                                      const std::string& suffix_b,
                                      const RedundancyOptions& opt = {});

// --- analytic parameter accounting ----------------------------------------

enum class LayerKind { Attention, Mlp, Embed, Head, Other };

LayerKind layer_kind_from_string(const std::string& s);
std::string to_string(LayerKind k);

struct LayerEntry {
  LayerKind kind = LayerKind::Other;
  std::string label;
  std::size_t count = 1;
  bool bias = true;
  // attention
  std::size_t d = 0;
  std::size_t heads = 0;
  AttentionVariant variant = AttentionVariant::Regular;
  bool output_proj = true;
  // mlp
  std::size_t hidden = 0;
  // embed (patch projection)
  std::size_t in_channels = 0;
  std::size_t patch = 0;
  // head
  std::size_t classes = 0;
  // other
  std::size_t explicit_params = 0;
};

struct ArchSpec {
  std::string name;
  std::vector<LayerEntry> layers;
};

// Built-in families: deit-ti, deit-s, deit-b (224px, patch 16, 197 tokens).
ArchSpec builtin_arch(const std::string& name);
std::vector<std::string> builtin_arch_names();
ArchSpec arch_from_json_file(const std::filesystem::path& path);
ArchSpec with_attention_variant(ArchSpec spec, AttentionVariant v);

std::size_t layer_param_count(const LayerEntry& e);  // one instance, ignores count
std::size_t model_param_count(const ArchSpec& spec);

struct ParamCountReport {
  std::string arch;
  std::string baseline_variant;
  std::string compact_variant;
  std::size_t baseline_total = 0;
  std::size_t compact_total = 0;
  double delta_percent = 0.0;  // (baseline - compact) / baseline * 100
  std::vector<std::pair<LayerEntry, std::size_t>> rows;  // entry, per-instance params

  std::string to_jsonl_line() const;
  void print_text(std::ostream& os) const;
};

ParamCountReport param_count_report(const ArchSpec& spec, AttentionVariant compact);

// --- analytic compute accounting -------------------------------------------

struct MacCounts {
  std::uint64_t qkv_projection = 0;
  std::uint64_t output_projection = 0;
  std::uint64_t attention_matmul = 0;

  std::uint64_t total() const { return qkv_projection + output_projection + attention_matmul; }
};

MacCounts attention_layer_macs(const AttentionConfig& cfg);
MacCounts levit_block_macs(const LevitBlockConfig& cfg);

struct BlockFlops {
  std::string label;
  std::size_t count = 1;
  MacCounts per_block;
};

struct FlopReport {
  std::string arch;
  std::size_t seq_len = 0;
  std::vector<BlockFlops> blocks;
  MacCounts totals;

  std::string to_jsonl_line() const;
  void print_text(std::ostream& os) const;
};

// Attention-layer MAC accounting for a whole spec at sequence length L.
FlopReport model_flop_count(const ArchSpec& spec, std::size_t seq_len);

}  // namespace armour
