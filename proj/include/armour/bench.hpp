#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "armour/analysis.hpp"
#include "armour/attention.hpp"
#include "armour/levit.hpp"

namespace armour {

// Forward-pass wall-clock measurement for one config. Inputs and weights are
// generated from the seed before timing starts; the timed region is the
// forward pass alone, single-threaded, identical input every iteration.
struct BenchReport {
  std::string kind;     // "attention" | "levit"
  std::string variant;
  std::string dims;
  std::size_t warmup = 0;
  std::size_t iters = 0;
  double median_ns = 0.0;
  double p10_ns = 0.0;
  double p90_ns = 0.0;
  MacCounts macs;
  double output_checksum = 0.0;  // keeps the optimizer honest, and seeds determinism checks

  std::string to_jsonl_line() const;
  void print_text(std::ostream& os) const;
};

// iters is clamped up to 30 measured iterations and warmup up to 5.
BenchReport run_bench(const AttentionConfig& cfg, std::size_t iters, std::uint64_t seed,
                      std::size_t warmup = 5);
BenchReport run_bench(const LevitBlockConfig& cfg, std::size_t iters, std::uint64_t seed,
                      std::size_t warmup = 5);

}  // namespace armour
