#include "armour/toy_train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "json.hpp"

namespace armour {

namespace {

using nlohmann::ordered_json;

}  // namespace

void ToyTask::validate() const {
  if (seq_len == 0 || vocab_size == 0 || num_classes < 2) {
    throw SpecError("toy task: seq_len, vocab_size positive and num_classes >= 2");
  }
  if (vocab_size % num_classes != 0) {
    throw SpecError("toy task: vocab_size must be divisible by num_classes");
  }
  if (!(dominant_fraction > 0.5 && dominant_fraction <= 1.0)) {
    throw SpecError("toy task: dominant_fraction must lie in (0.5, 1]");
  }
}

std::vector<ToySample> generate_samples(const ToyTask& task, std::size_t count, Rng& rng) {
  task.validate();
  const std::size_t per_class = task.vocab_size / task.num_classes;
  const std::size_t dominant =
      std::min(task.seq_len,
               static_cast<std::size_t>(
                   std::ceil(task.dominant_fraction * static_cast<double>(task.seq_len))));
  std::vector<ToySample> out;
  out.reserve(count);
  for (std::size_t si = 0; si < count; ++si) {
    ToySample s;
    s.label = rng.below(task.num_classes);
    s.tokens.resize(task.seq_len);
    for (std::size_t i = 0; i < dominant; ++i) {
      s.tokens[i] = s.label + task.num_classes * rng.below(per_class);
    }
    for (std::size_t i = dominant; i < task.seq_len; ++i) {
      // any token outside the dominant class
      std::size_t cls = rng.below(task.num_classes - 1);
      if (cls >= s.label) ++cls;
      s.tokens[i] = cls + task.num_classes * rng.below(per_class);
    }
    // Fisher-Yates so the dominant tokens are not positionally encoded.
    for (std::size_t i = task.seq_len; i > 1; --i) {
      std::swap(s.tokens[i - 1], s.tokens[rng.below(i)]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

struct ToyModel {
  AttentionConfig attn_cfg;
  ToyModelConfig dims;
  std::size_t vocab = 0;
  std::size_t num_classes = 0;

  Tensor embed;                                   // vocab x d
  std::vector<AttentionWeights> attn;             // one per block
  std::vector<Tensor> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor head_w, head_b;

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> ps;
    ps.push_back(&embed);
    for (std::size_t b = 0; b < attn.size(); ++b) {
      auto push_opt = [&](std::optional<Tensor>& t) {
        if (t) ps.push_back(&*t);
      };
      push_opt(attn[b].w_q);
      push_opt(attn[b].b_q);
      push_opt(attn[b].w_k);
      push_opt(attn[b].b_k);
      push_opt(attn[b].w_v);
      push_opt(attn[b].b_v);
      push_opt(attn[b].w_o);
      push_opt(attn[b].b_o);
      ps.push_back(&mlp_w1[b]);
      ps.push_back(&mlp_b1[b]);
      ps.push_back(&mlp_w2[b]);
      ps.push_back(&mlp_b2[b]);
    }
    ps.push_back(&head_w);
    ps.push_back(&head_b);
    return ps;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (Tensor* p : parameters()) n += p->numel();
    return n;
  }
};

ToyModel make_model(AttentionVariant variant, const ToyTask& task, const ToyModelConfig& dims,
                    std::uint64_t seed) {
  ToyModel m;
  m.dims = dims;
  m.vocab = task.vocab_size;
  m.num_classes = task.num_classes;
  m.attn_cfg.variant = variant;
  m.attn_cfg.seq_len = task.seq_len;
  m.attn_cfg.model_dim = dims.model_dim;
  m.attn_cfg.heads = dims.heads;
  m.attn_cfg.validate();

  const std::size_t d = dims.model_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(seed);
  m.embed = rng.uniform_tensor({task.vocab_size, d}, -bound, bound);
  for (std::size_t b = 0; b < ToyModelConfig::blocks; ++b) {
    m.attn.push_back(init_attention_weights(m.attn_cfg, rng.next_u64()));
    m.mlp_w1.push_back(rng.uniform_tensor({d, dims.mlp_hidden}, -bound, bound));
    m.mlp_b1.push_back(rng.uniform_tensor({dims.mlp_hidden}, -bound, bound));
    m.mlp_w2.push_back(rng.uniform_tensor({dims.mlp_hidden, d}, -bound, bound));
    m.mlp_b2.push_back(rng.uniform_tensor({d}, -bound, bound));
  }
  m.head_w = rng.uniform_tensor({d, task.num_classes}, -bound, bound);
  m.head_b = rng.uniform_tensor({task.num_classes}, -bound, bound);
  return m;
}

struct TapeModel {
  GradTape::Var embed;
  std::vector<AttentionVars> attn;
  std::vector<GradTape::Var> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  GradTape::Var head_w, head_b;
  std::vector<GradTape::Var> leaves;  // aligned with ToyModel::parameters()
};

TapeModel register_model(GradTape& tape, ToyModel& m) {
  TapeModel t;
  auto reg = [&](Tensor& v) {
    GradTape::Var var = tape.leaf(v);
    t.leaves.push_back(var);
    return var;
  };
  t.embed = reg(m.embed);
  for (std::size_t b = 0; b < m.attn.size(); ++b) {
    AttentionVars av;
    auto reg_opt = [&](std::optional<Tensor>& src, std::optional<GradTape::Var>& dst) {
      if (src) dst = reg(*src);
    };
    reg_opt(m.attn[b].w_q, av.w_q);
    reg_opt(m.attn[b].b_q, av.b_q);
    reg_opt(m.attn[b].w_k, av.w_k);
    reg_opt(m.attn[b].b_k, av.b_k);
    reg_opt(m.attn[b].w_v, av.w_v);
    reg_opt(m.attn[b].b_v, av.b_v);
    reg_opt(m.attn[b].w_o, av.w_o);
    reg_opt(m.attn[b].b_o, av.b_o);
    t.attn.push_back(av);
    t.mlp_w1.push_back(reg(m.mlp_w1[b]));
    t.mlp_b1.push_back(reg(m.mlp_b1[b]));
    t.mlp_w2.push_back(reg(m.mlp_w2[b]));
    t.mlp_b2.push_back(reg(m.mlp_b2[b]));
  }
  t.head_w = reg(m.head_w);
  t.head_b = reg(m.head_b);
  return t;
}

GradTape::Var model_logits(GradTape& tape, const TapeModel& tm, const ToyModel& m,
                           const std::vector<std::size_t>& tokens) {
  GradTape::Var x = tape.lookup_rows(tm.embed, tokens);
  for (std::size_t b = 0; b < tm.attn.size(); ++b) {
    x = tape.add(x, attention_forward(tape, x, tm.attn[b], m.attn_cfg));
    GradTape::Var h =
        tape.gelu(tape.add_row_bias(tape.matmul(x, tm.mlp_w1[b]), tm.mlp_b1[b]));
    x = tape.add(x, tape.add_row_bias(tape.matmul(h, tm.mlp_w2[b]), tm.mlp_b2[b]));
  }
  GradTape::Var pooled = tape.mean_rows(x);
  return tape.add_row_bias(tape.matmul(pooled, tm.head_w), tm.head_b);
}

std::size_t argmax_class(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.numel(); ++j) {
    if (logits.data[j] > logits.data[best]) best = j;
  }
  return best;
}

double eval_accuracy(ToyModel& m, const std::vector<ToySample>& samples) {
  std::size_t hits = 0;
  for (const auto& s : samples) {
    GradTape tape;
    TapeModel tm = register_model(tape, m);
    const Tensor& logits = tape.value(model_logits(tape, tm, m, s.tokens));
    if (argmax_class(logits) == s.label) ++hits;
  }
  return samples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(samples.size());
}

double mean_loss(ToyModel& m, const std::vector<ToySample>& samples) {
  double total = 0.0;
  for (const auto& s : samples) {
    GradTape tape;
    TapeModel tm = register_model(tape, m);
    GradTape::Var loss =
        tape.cross_entropy_with_logits(model_logits(tape, tm, m, s.tokens), {s.label});
    total += tape.value(loss).data[0];
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

WeightContainer pack_model(ToyModel& m) {
  WeightContainer c;
  c.add("embed.table", m.embed);
  for (std::size_t b = 0; b < m.attn.size(); ++b) {
    const std::string prefix = "layer" + std::to_string(b) + ".";
    add_attention_weights(c, m.attn[b], m.attn_cfg, prefix);
    c.add(prefix + "mlp.w1", m.mlp_w1[b]);
    c.add(prefix + "mlp.b1", m.mlp_b1[b]);
    c.add(prefix + "mlp.w2", m.mlp_w2[b]);
    c.add(prefix + "mlp.b2", m.mlp_b2[b]);
  }
  c.add("head.w", m.head_w);
  c.add("head.b", m.head_b);
  return c;
}

}  // namespace

TrainRecord train(AttentionVariant variant, const ToyTask& task, const TrainOptions& opt) {
  task.validate();
  if (opt.batch_size == 0) throw SpecError("train: batch_size must be positive");

  Rng data_rng(task.seed);
  const std::vector<ToySample> train_set = generate_samples(task, task.train_samples, data_rng);
  const std::vector<ToySample> eval_set = generate_samples(task, task.eval_samples, data_rng);

  ToyModel model = make_model(variant, task, opt.model, opt.seed);

  TrainRecord rec;
  rec.variant = variant;
  rec.task = task;
  rec.model = opt.model;
  rec.epochs = opt.epochs;
  rec.lr = opt.lr;
  rec.seed = opt.seed;
  rec.trainable_params = model.param_count();
  rec.initial_loss = mean_loss(model, train_set);
  rec.initial_eval_accuracy = eval_accuracy(model, eval_set);
  rec.final_loss = rec.initial_loss;
  rec.final_eval_accuracy = rec.initial_eval_accuracy;

  Rng shuffle_rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    std::vector<Tensor*> params = model.parameters();
    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += opt.batch_size) {
      const std::size_t batch_end = std::min(order.size(), batch_start + opt.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(batch_end - batch_start);
      std::vector<Tensor> acc(params.size());
      double batch_loss = 0.0;
      try {
        for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
          const ToySample& s = train_set[order[bi]];
          GradTape tape;
          TapeModel tm = register_model(tape, model);
          GradTape::Var loss =
              tape.cross_entropy_with_logits(model_logits(tape, tm, model, s.tokens), {s.label});
          batch_loss += tape.value(loss).data[0];
          auto grads = tape.backward(loss);
          for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Tensor& g = grads.at(tm.leaves[pi]);
            if (acc[pi].numel() == 0) {
              acc[pi] = std::move(g);
            } else {
              for (std::size_t j = 0; j < acc[pi].numel(); ++j) acc[pi].data[j] += g.data[j];
            }
          }
        }
      } catch (const MaskError&) {
        // exploded weights can drive whole score rows to the sentinel
        throw TrainingError("training diverged (degenerate attention scores) at epoch " +
                            std::to_string(epoch + 1));
      }
      batch_loss *= inv_batch;
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("training diverged (non-finite loss) at epoch " +
                            std::to_string(epoch + 1));
      }
      epoch_loss += batch_loss * static_cast<double>(batch_end - batch_start);
      seen += batch_end - batch_start;
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        const double step = opt.lr * inv_batch;
        for (std::size_t j = 0; j < p.numel(); ++j) p.data[j] -= step * acc[pi].data[j];
      }
    }
    EpochStats stats;
    stats.mean_loss = epoch_loss / static_cast<double>(seen);
    stats.eval_accuracy = eval_accuracy(model, eval_set);
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rec.per_epoch.push_back(stats);
    rec.final_loss = stats.mean_loss;
    rec.final_eval_accuracy = stats.eval_accuracy;
  }

  rec.weights = pack_model(model);
  return rec;
}

std::string TrainRecord::to_jsonl_line(bool with_wall) const {
  ordered_json j;
  j["report"] = "train";
  j["variant"] = to_string(variant);
  j["task"] = {{"seed", task.seed},
               {"seq_len", task.seq_len},
               {"vocab_size", task.vocab_size},
               {"num_classes", task.num_classes},
               {"dominant_fraction", task.dominant_fraction},
               {"train_samples", task.train_samples},
               {"eval_samples", task.eval_samples}};
  j["model"] = {{"model_dim", model.model_dim},
                {"heads", model.heads},
                {"mlp_hidden", model.mlp_hidden},
                {"blocks", ToyModelConfig::blocks}};
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["seed"] = seed;
  j["trainable_params"] = trainable_params;
  j["initial_loss"] = initial_loss;
  j["initial_eval_accuracy"] = initial_eval_accuracy;
  ordered_json per = ordered_json::array();
  for (const auto& e : per_epoch) {
    ordered_json ej = {{"mean_loss", e.mean_loss}, {"eval_accuracy", e.eval_accuracy}};
    if (with_wall) ej["wall_seconds"] = e.wall_seconds;
    per.push_back(ej);
  }
  j["per_epoch"] = per;
  j["final_loss"] = final_loss;
  j["final_eval_accuracy"] = final_eval_accuracy;
  return j.dump();
}

void TrainRecord::print_text(std::ostream& os) const {
  os << "train " << to_string(variant) << "  epochs=" << epochs << " lr=" << lr
     << " seed=" << seed << " params=" << trainable_params << "\n";
  os << std::fixed;
  os << "  initial: loss=" << std::setprecision(4) << initial_loss
     << " acc=" << std::setprecision(3) << initial_eval_accuracy << "\n";
  for (std::size_t i = 0; i < per_epoch.size(); ++i) {
    os << "  epoch " << std::setw(3) << (i + 1) << ": loss=" << std::setprecision(4)
       << per_epoch[i].mean_loss << " acc=" << std::setprecision(3)
       << per_epoch[i].eval_accuracy << " (" << std::setprecision(2)
       << per_epoch[i].wall_seconds << "s)\n";
  }
  os << "  final: loss=" << std::setprecision(4) << final_loss << " acc=" << std::setprecision(3)
     << final_eval_accuracy << "\n";
  os.unsetf(std::ios::fixed);
}

EntanglementProbe entanglement_probe(const WeightContainer& regular_weights,
                                     const WeightContainer& armour_weights, double epsilon) {
  RedundancyOptions opt;
  opt.epsilon = epsilon;
  EntanglementProbe probe;
  RedundancyReport r1 = container_redundancy(regular_weights, "w_q", "w_k", opt);
  r1.pair_label = "regular:w_q~w_k";
  RedundancyReport r2 = container_redundancy(regular_weights, "w_q", "w_v", opt);
  r2.pair_label = "regular:w_q~w_v";
  RedundancyReport r3 = container_redundancy(armour_weights, "w_q", "w_k", opt);
  r3.pair_label = "armour:w_q~w_k";
  probe.rows = {std::move(r1), std::move(r2), std::move(r3)};
  return probe;
}

EntanglementProbe entanglement_probe(const TrainRecord& regular_record,
                                     const TrainRecord& armour_record, double epsilon) {
  if (regular_record.variant != AttentionVariant::Regular ||
      armour_record.variant != AttentionVariant::Armour) {
    throw SpecError("entanglement_probe: expects a regular record and an armour record");
  }
  return entanglement_probe(regular_record.weights, armour_record.weights, epsilon);
}

std::string EntanglementProbe::to_jsonl_line() const {
  ordered_json j;
  j["report"] = "entanglement_probe";
  ordered_json rows_json = ordered_json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"pair", r.pair_label},
                         {"epsilon", r.epsilon},
                         {"fraction_below", r.fraction_below},
                         {"element_count", r.element_count}});
  }
  j["rows"] = rows_json;
  return j.dump();
}

void EntanglementProbe::print_text(std::ostream& os) const {
  os << "entanglement probe (fraction of |a-b| under epsilon)\n";
  for (const auto& r : rows) {
    os << "  " << std::left << std::setw(20) << r.pair_label << std::right << std::fixed
       << std::setprecision(4) << r.fraction_below << "  elements=" << r.element_count << "\n";
  }
  os.unsetf(std::ios::fixed);
}

}  // namespace armour
