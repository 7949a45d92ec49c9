#include "armour/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <ostream>
#include <vector>

#include "json.hpp"

namespace armour {

namespace {

using nlohmann::ordered_json;

double percentile(std::vector<double> sorted, double p) {
  const double idx = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = idx - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

template <typename Forward>
BenchReport time_forward(BenchReport rep, std::size_t iters, std::size_t warmup,
                         Forward&& forward) {
  rep.warmup = std::max<std::size_t>(warmup, 5);
  rep.iters = std::max<std::size_t>(iters, 30);
  double sink = 0.0;
  for (std::size_t i = 0; i < rep.warmup; ++i) sink += forward();
  std::vector<double> samples;
  samples.reserve(rep.iters);
  for (std::size_t i = 0; i < rep.iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    sink += forward();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(
        std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  rep.median_ns = percentile(samples, 0.5);
  rep.p10_ns = percentile(samples, 0.1);
  rep.p90_ns = percentile(samples, 0.9);
  rep.output_checksum = sink / static_cast<double>(rep.warmup + rep.iters);
  return rep;
}

}  // namespace

BenchReport run_bench(const AttentionConfig& cfg, std::size_t iters, std::uint64_t seed,
                      std::size_t warmup) {
  cfg.validate();
  Rng rng(seed);
  const Tensor x = rng.uniform_tensor({cfg.seq_len, cfg.model_dim}, -1.0, 1.0);
  const AttentionWeights w = init_attention_weights(cfg, seed + 1);

  BenchReport rep;
  rep.kind = "attention";
  rep.variant = to_string(cfg.variant);
  rep.dims = "L=" + std::to_string(cfg.seq_len) + " d=" + std::to_string(cfg.model_dim) +
             " h=" + std::to_string(cfg.heads);
  rep.macs = attention_layer_macs(cfg);
  return time_forward(std::move(rep), iters, warmup,
                      [&]() { return sum(attention_forward(x, w, cfg)); });
}

BenchReport run_bench(const LevitBlockConfig& cfg, std::size_t iters, std::uint64_t seed,
                      std::size_t warmup) {
  cfg.validate();
  Rng rng(seed);
  const Tensor x = rng.uniform_tensor({cfg.tokens(), cfg.channels}, -1.0, 1.0);
  const LevitBlockWeights w = init_levit_weights(cfg, seed + 1);

  BenchReport rep;
  rep.kind = "levit";
  rep.variant = to_string(cfg.variant);
  rep.dims = "N=" + std::to_string(cfg.heads) + " D=" + std::to_string(cfg.key_dim) +
             " H=" + std::to_string(cfg.height) + " W=" + std::to_string(cfg.width) +
             " C=" + std::to_string(cfg.channels);
  rep.macs = levit_block_macs(cfg);
  return time_forward(std::move(rep), iters, warmup,
                      [&]() { return sum(levit_block_forward(x, w, cfg)); });
}

std::string BenchReport::to_jsonl_line() const {
  ordered_json j;
  j["report"] = "bench";
  j["kind"] = kind;
  j["variant"] = variant;
  j["dims"] = dims;
  j["warmup"] = warmup;
  j["iters"] = iters;
  j["median_ns"] = median_ns;
  j["p10_ns"] = p10_ns;
  j["p90_ns"] = p90_ns;
  j["qkv_projection_macs"] = macs.qkv_projection;
  j["output_projection_macs"] = macs.output_projection;
  j["attention_matmul_macs"] = macs.attention_matmul;
  j["output_checksum"] = output_checksum;
  return j.dump();
}

void BenchReport::print_text(std::ostream& os) const {
  os << "bench " << kind << " " << variant << "  " << dims << "\n";
  os << "  median=" << std::fixed << std::setprecision(0) << median_ns
     << "ns  p10=" << p10_ns << "ns  p90=" << p90_ns << "ns  (" << iters << " iters, "
     << warmup << " warmup)\n";
  os << "  macs: qkv=" << macs.qkv_projection << " out=" << macs.output_projection
     << " attn=" << macs.attention_matmul << "\n";
  os.unsetf(std::ios::fixed);
}

}  // namespace armour
