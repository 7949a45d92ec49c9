#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "armour/analysis.hpp"
#include "armour/attention.hpp"
#include "armour/tensor.hpp"
#include "armour/weights_io.hpp"

namespace armour {

// Synthetic permutation-invariant token task: each token belongs to one of
// num_classes groups (token id modulo num_classes); a sample is dominated by
// one group and labeled with it. Same seed, same dataset, byte for byte.
struct ToyTask {
  std::uint64_t seed = 7;
  std::size_t seq_len = 12;
  std::size_t vocab_size = 24;
  std::size_t num_classes = 4;
  double dominant_fraction = 0.6;  // must exceed 0.5 so the label is unique
  std::size_t train_samples = 1024;
  std::size_t eval_samples = 512;

  void validate() const;
};

struct ToySample {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
};

std::vector<ToySample> generate_samples(const ToyTask& task, std::size_t count, Rng& rng);

// Two attention blocks with residual connections and GELU MLPs over token
// embeddings, mean-pooled into a linear classifier head.
struct ToyModelConfig {
  std::size_t model_dim = 32;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 64;
  static constexpr std::size_t blocks = 2;
};

struct EpochStats {
  double mean_loss = 0.0;
  double eval_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct TrainRecord {
  AttentionVariant variant = AttentionVariant::Regular;
  ToyTask task;
  ToyModelConfig model;
  std::size_t epochs = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::size_t trainable_params = 0;
  double initial_loss = 0.0;
  double initial_eval_accuracy = 0.0;
  std::vector<EpochStats> per_epoch;
  double final_loss = 0.0;
  double final_eval_accuracy = 0.0;
  WeightContainer weights;

  // One JSON object; wall-clock fields are omitted when with_wall is false so
  // determinism checks can compare records textually.
  std::string to_jsonl_line(bool with_wall = true) const;
  void print_text(std::ostream& os) const;
};

struct TrainOptions {
  std::size_t epochs = 12;
  double lr = 0.15;
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;
  ToyModelConfig model;
};

// Plain SGD, fixed learning rate, single-threaded. Throws TrainingError when
// the loss stops being finite.
TrainRecord train(AttentionVariant variant, const ToyTask& task, const TrainOptions& opt);

// Redundancy comparison across the trained weight bundles: (w_q, w_k) and
// (w_q, w_v) of the regular model against (w_q, w_k) of the armour model.
struct EntanglementProbe {
  std::vector<RedundancyReport> rows;

  std::string to_jsonl_line() const;
  void print_text(std::ostream& os) const;
};

EntanglementProbe entanglement_probe(const TrainRecord& regular_record,
                                     const TrainRecord& armour_record, double epsilon = 1e-2);
EntanglementProbe entanglement_probe(const WeightContainer& regular_weights,
                                     const WeightContainer& armour_weights,
                                     double epsilon = 1e-2);

}  // namespace armour
