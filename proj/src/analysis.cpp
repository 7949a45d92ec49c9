#include "armour/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>

#include "json.hpp"

namespace armour {

namespace {

using nlohmann::ordered_json;

std::size_t count_below(const Tensor& a, const Tensor& b, double epsilon) {
  std::size_t below = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::abs(a.data[i] - b.data[i]) < epsilon) ++below;
  }
  return below;
}

Tensor rms_normalized(const Tensor& t) {
  double ss = 0.0;
  for (double v : t.data) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(t.numel()));
  return rms > 0.0 ? scale(t, 1.0 / rms) : t;
}

}  // namespace

RedundancyReport redundancy(const Tensor& a, const Tensor& b, double epsilon,
                            std::string pair_label) {
  if (!a.same_shape(b)) {
    throw ShapeError("redundancy: shapes disagree, " + shape_string(a) + " vs " +
                     shape_string(b));
  }
  if (epsilon <= 0.0) throw SpecError("redundancy: epsilon must be positive");
  RedundancyReport r;
  r.pair_label = std::move(pair_label);
  r.epsilon = epsilon;
  r.element_count = a.numel();
  const std::size_t below = count_below(a, b, epsilon);
  r.fraction_below =
      a.numel() == 0 ? 0.0 : static_cast<double>(below) / static_cast<double>(a.numel());
  return r;
}

RedundancyReport container_redundancy(const WeightContainer& c, const std::string& suffix_a,
                                      const std::string& suffix_b,
                                      const RedundancyOptions& opt) {
  if (opt.epsilon <= 0.0) throw SpecError("redundancy: epsilon must be positive");
  RedundancyReport r;
  r.pair_label = suffix_a + "~" + suffix_b;
  r.epsilon = opt.epsilon;
  std::size_t total_below = 0;
  for (const auto& t : c.tensors) {
    if (t.name.size() <= suffix_a.size()) continue;
    if (t.name.compare(t.name.size() - suffix_a.size(), suffix_a.size(), suffix_a) != 0) continue;
    const std::string prefix = t.name.substr(0, t.name.size() - suffix_a.size());
    const NamedTensor* other = c.find(prefix + suffix_b);
    if (!other) continue;
    Tensor a = t.values;
    Tensor b = other->values;
    if (!a.same_shape(b)) {
      throw ShapeError("redundancy: '" + t.name + "' and '" + other->name +
                       "' have different shapes");
    }
    if (opt.normalize) {
      a = rms_normalized(a);
      b = rms_normalized(b);
    }
    auto add_entry = [&](const std::string& label, const Tensor& ea, const Tensor& eb) {
      RedundancyEntry entry;
      entry.label = label;
      entry.element_count = ea.numel();
      entry.below_count = count_below(ea, eb, opt.epsilon);
      entry.fraction_below = entry.element_count == 0
                                 ? 0.0
                                 : static_cast<double>(entry.below_count) /
                                       static_cast<double>(entry.element_count);
      r.per_layer.push_back(entry);
      r.element_count += entry.element_count;
      total_below += entry.below_count;
    };
    if (opt.per_head > 1 && a.rank() == 2 && a.shape[1] % opt.per_head == 0) {
      const std::size_t dh = a.shape[1] / opt.per_head;
      for (std::size_t hi = 0; hi < opt.per_head; ++hi) {
        add_entry(prefix + "head" + std::to_string(hi),
                  slice_cols(a, hi * dh, (hi + 1) * dh), slice_cols(b, hi * dh, (hi + 1) * dh));
      }
    } else {
      add_entry(prefix.empty() ? t.name : prefix, a, b);
    }
  }
  if (r.per_layer.empty()) {
    throw CensusError("redundancy: no tensor pairs matching *" + suffix_a + " / *" + suffix_b);
  }
  r.fraction_below = static_cast<double>(total_below) / static_cast<double>(r.element_count);
  return r;
}

std::string RedundancyReport::to_jsonl_line() const {
  ordered_json j;
  j["report"] = "redundancy";
  j["pair"] = pair_label;
  j["epsilon"] = epsilon;
  j["fraction_below"] = fraction_below;
  j["element_count"] = element_count;
  ordered_json layers = ordered_json::array();
  for (const auto& e : per_layer) {
    layers.push_back({{"label", e.label},
                      {"element_count", e.element_count},
                      {"below_count", e.below_count},
                      {"fraction_below", e.fraction_below}});
  }
  j["per_layer"] = layers;
  return j.dump();
}

void RedundancyReport::print_text(std::ostream& os) const {
  os << "redundancy " << pair_label << "  epsilon=" << epsilon << "\n";
  os << "  fraction_below=" << std::fixed << std::setprecision(4) << fraction_below
     << "  elements=" << element_count << "\n";
  for (const auto& e : per_layer) {
    os << "    " << std::left << std::setw(24) << e.label << std::right << std::setprecision(4)
       << e.fraction_below << "  (" << e.below_count << "/" << e.element_count << ")\n";
  }
  os.unsetf(std::ios::fixed);
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "attention") return LayerKind::Attention;
  if (s == "mlp") return LayerKind::Mlp;
  if (s == "embed") return LayerKind::Embed;
  if (s == "head") return LayerKind::Head;
  if (s == "other") return LayerKind::Other;
  throw SpecError("unknown layer kind '" + s + "'");
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Attention: return "attention";
    case LayerKind::Mlp: return "mlp";
    case LayerKind::Embed: return "embed";
    case LayerKind::Head: return "head";
    case LayerKind::Other: return "other";
  }
  return "other";
}

std::size_t layer_param_count(const LayerEntry& e) {
  switch (e.kind) {
    case LayerKind::Attention: {
      AttentionConfig cfg;
      cfg.variant = e.variant;
      cfg.seq_len = 1;  // irrelevant to the census
      cfg.model_dim = e.d;
      cfg.heads = e.heads ? e.heads : 1;
      cfg.use_bias = e.bias;
      cfg.include_output_proj = e.output_proj;
      return attention_param_count(cfg);
    }
    case LayerKind::Mlp: {
      if (e.d == 0 || e.hidden == 0) throw SpecError("mlp entry needs d and hidden");
      std::size_t p = e.d * e.hidden + e.hidden * e.d;
      if (e.bias) p += e.hidden + e.d;
      return p;
    }
    case LayerKind::Embed: {
      if (e.in_channels == 0 || e.patch == 0 || e.d == 0) {
        throw SpecError("embed entry needs in_channels, patch, d");
      }
      std::size_t p = e.in_channels * e.patch * e.patch * e.d;
      if (e.bias) p += e.d;
      return p;
    }
    case LayerKind::Head: {
      if (e.d == 0 || e.classes == 0) throw SpecError("head entry needs d and classes");
      std::size_t p = e.d * e.classes;
      if (e.bias) p += e.classes;
      return p;
    }
    case LayerKind::Other:
      return e.explicit_params;
  }
  throw SpecError("unknown layer kind");
}

std::size_t model_param_count(const ArchSpec& spec) {
  std::size_t total = 0;
  for (const auto& e : spec.layers) total += e.count * layer_param_count(e);
  return total;
}

namespace {

ArchSpec make_deit(const std::string& name, std::size_t d, std::size_t heads,
                   std::size_t depth = 12, std::size_t tokens = 197,
                   std::size_t classes = 1000) {
  ArchSpec spec;
  spec.name = name;
  LayerEntry embed;
  embed.kind = LayerKind::Embed;
  embed.label = "patch_embed";
  embed.in_channels = 3;
  embed.patch = 16;
  embed.d = d;
  spec.layers.push_back(embed);

  LayerEntry cls;
  cls.kind = LayerKind::Other;
  cls.label = "cls_token";
  cls.explicit_params = d;
  spec.layers.push_back(cls);

  LayerEntry pos;
  pos.kind = LayerKind::Other;
  pos.label = "pos_embed";
  pos.explicit_params = tokens * d;
  spec.layers.push_back(pos);

  LayerEntry norm;
  norm.kind = LayerKind::Other;
  norm.label = "layer_norm";
  norm.explicit_params = 2 * d;
  norm.count = 2 * depth + 1;  // two per encoder layer plus the final one
  spec.layers.push_back(norm);

  LayerEntry attn;
  attn.kind = LayerKind::Attention;
  attn.label = "attention";
  attn.d = d;
  attn.heads = heads;
  attn.count = depth;
  spec.layers.push_back(attn);

  LayerEntry mlp;
  mlp.kind = LayerKind::Mlp;
  mlp.label = "mlp";
  mlp.d = d;
  mlp.hidden = 4 * d;
  mlp.count = depth;
  spec.layers.push_back(mlp);

  LayerEntry head;
  head.kind = LayerKind::Head;
  head.label = "head";
  head.d = d;
  head.classes = classes;
  spec.layers.push_back(head);
  return spec;
}

}  // namespace

ArchSpec builtin_arch(const std::string& name) {
  if (name == "deit-ti") return make_deit(name, 192, 3);
  if (name == "deit-s") return make_deit(name, 384, 6);
  if (name == "deit-b") return make_deit(name, 768, 12);
  throw SpecError("unknown architecture '" + name + "' (builtin: deit-ti|deit-s|deit-b)");
}

std::vector<std::string> builtin_arch_names() { return {"deit-ti", "deit-s", "deit-b"}; }

ArchSpec arch_from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open arch file '" + path.string() + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError("arch file '" + path.string() + "': " + e.what());
  }
  ArchSpec spec;
  spec.name = j.value("name", path.stem().string());
  if (!j.contains("layers") || !j["layers"].is_array()) {
    throw SpecError("arch file '" + path.string() + "': missing layers array");
  }
  for (const auto& lj : j["layers"]) {
    LayerEntry e;
    e.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
    e.label = lj.value("label", to_string(e.kind));
    e.count = lj.value("count", std::size_t{1});
    e.bias = lj.value("bias", true);
    e.d = lj.value("d", std::size_t{0});
    e.heads = lj.value("heads", std::size_t{0});
    if (lj.contains("variant")) {
      e.variant = attention_variant_from_string(lj["variant"].get<std::string>());
    }
    e.output_proj = lj.value("output_proj", true);
    e.hidden = lj.value("hidden", std::size_t{0});
    e.in_channels = lj.value("in_channels", std::size_t{0});
    e.patch = lj.value("patch", std::size_t{0});
    e.classes = lj.value("classes", std::size_t{0});
    e.explicit_params = lj.value("params", std::size_t{0});
    spec.layers.push_back(e);
    layer_param_count(e);  // validate now, not on first use
  }
  return spec;
}

ArchSpec with_attention_variant(ArchSpec spec, AttentionVariant v) {
  for (auto& e : spec.layers) {
    if (e.kind == LayerKind::Attention) e.variant = v;
  }
  return spec;
}

ParamCountReport param_count_report(const ArchSpec& spec, AttentionVariant compact) {
  ParamCountReport r;
  r.arch = spec.name;
  r.baseline_variant = to_string(AttentionVariant::Regular);
  r.compact_variant = to_string(compact);
  for (const auto& e : spec.layers) r.rows.emplace_back(e, layer_param_count(e));
  r.baseline_total = model_param_count(spec);
  r.compact_total = model_param_count(with_attention_variant(spec, compact));
  r.delta_percent = 100.0 *
                    (static_cast<double>(r.baseline_total) - static_cast<double>(r.compact_total)) /
                    static_cast<double>(r.baseline_total);
  return r;
}

std::string ParamCountReport::to_jsonl_line() const {
  ordered_json j;
  j["report"] = "paramcount";
  j["arch"] = arch;
  j["baseline_variant"] = baseline_variant;
  j["compact_variant"] = compact_variant;
  j["baseline_total"] = baseline_total;
  j["compact_total"] = compact_total;
  j["delta_percent"] = delta_percent;
  ordered_json rows_json = ordered_json::array();
  for (const auto& [entry, params] : rows) {
    rows_json.push_back({{"label", entry.label},
                         {"kind", to_string(entry.kind)},
                         {"count", entry.count},
                         {"params_each", params},
                         {"params_total", entry.count * params}});
  }
  j["rows"] = rows_json;
  return j.dump();
}

void ParamCountReport::print_text(std::ostream& os) const {
  os << "parameters: " << arch << "\n";
  for (const auto& [entry, params] : rows) {
    os << "  " << std::left << std::setw(14) << entry.label << std::setw(11)
       << to_string(entry.kind) << "x" << std::setw(4) << entry.count << std::right
       << std::setw(12) << entry.count * params << "\n";
  }
  os << "  total (" << baseline_variant << "): " << baseline_total << "\n";
  os << "  total (" << compact_variant << "):  " << compact_total << "\n";
  os << "  delta: -" << std::fixed << std::setprecision(1) << delta_percent << "%\n";
  os.unsetf(std::ios::fixed);
}

MacCounts attention_layer_macs(const AttentionConfig& cfg) {
  cfg.validate();
  const std::uint64_t L = cfg.seq_len;
  const std::uint64_t d = cfg.model_dim;
  const std::uint64_t projections = cfg.variant == AttentionVariant::Regular ? 3 : 2;
  MacCounts m;
  m.qkv_projection = projections * L * d * d;
  m.output_projection = cfg.include_output_proj ? L * d * d : 0;
  // Scores and the value product each cost L^2 * d_h per head, so L^2 * d in
  // total apiece, identically for every variant.
  m.attention_matmul = 2 * L * L * d;
  return m;
}

MacCounts levit_block_macs(const LevitBlockConfig& cfg) {
  cfg.validate();
  const std::uint64_t hw = cfg.tokens();
  const std::uint64_t c = cfg.channels;
  const std::uint64_t nd = cfg.heads * cfg.key_dim;
  std::uint64_t v_width = 0;
  switch (cfg.variant) {
    case LevitVariant::Baseline: v_width = 2 * nd; break;
    case LevitVariant::HalfVConcatQ: v_width = nd; break;
    case LevitVariant::QKReplacesV: v_width = 0; break;
  }
  MacCounts m;
  m.qkv_projection = hw * c * (2 * nd + v_width);
  m.output_projection = hw * (2 * nd) * c;
  // Per head: scores HW^2 * D, value product HW^2 * 2D.
  m.attention_matmul = cfg.heads * hw * hw * 3 * cfg.key_dim;
  return m;
}

FlopReport model_flop_count(const ArchSpec& spec, std::size_t seq_len) {
  if (seq_len == 0) throw SpecError("model_flop_count: seq_len must be positive");
  FlopReport r;
  r.arch = spec.name;
  r.seq_len = seq_len;
  for (const auto& e : spec.layers) {
    if (e.kind != LayerKind::Attention) continue;
    AttentionConfig cfg;
    cfg.variant = e.variant;
    cfg.seq_len = seq_len;
    cfg.model_dim = e.d;
    cfg.heads = e.heads ? e.heads : 1;
    cfg.use_bias = e.bias;
    cfg.include_output_proj = e.output_proj;
    BlockFlops b;
    b.label = e.label + "(" + to_string(e.variant) + ")";
    b.count = e.count;
    b.per_block = attention_layer_macs(cfg);
    r.blocks.push_back(b);
    r.totals.qkv_projection += e.count * b.per_block.qkv_projection;
    r.totals.output_projection += e.count * b.per_block.output_projection;
    r.totals.attention_matmul += e.count * b.per_block.attention_matmul;
  }
  return r;
}

std::string FlopReport::to_jsonl_line() const {
  ordered_json j;
  j["report"] = "flops";
  j["arch"] = arch;
  j["seq_len"] = seq_len;
  ordered_json blocks_json = ordered_json::array();
  for (const auto& b : blocks) {
    blocks_json.push_back({{"label", b.label},
                           {"count", b.count},
                           {"qkv_projection_macs", b.per_block.qkv_projection},
                           {"output_projection_macs", b.per_block.output_projection},
                           {"attention_matmul_macs", b.per_block.attention_matmul}});
  }
  j["blocks"] = blocks_json;
  j["total_qkv_projection_macs"] = totals.qkv_projection;
  j["total_output_projection_macs"] = totals.output_projection;
  j["total_attention_matmul_macs"] = totals.attention_matmul;
  return j.dump();
}

void FlopReport::print_text(std::ostream& os) const {
  os << "attention MACs: " << arch << "  L=" << seq_len << "\n";
  for (const auto& b : blocks) {
    os << "  " << std::left << std::setw(24) << b.label << "x" << b.count
       << "  qkv=" << b.per_block.qkv_projection << "  out=" << b.per_block.output_projection
       << "  attn=" << b.per_block.attention_matmul << "\n";
  }
  os << "  totals: qkv=" << totals.qkv_projection << "  out=" << totals.output_projection
     << "  attn=" << totals.attention_matmul << "\n";
}

}  // namespace armour
