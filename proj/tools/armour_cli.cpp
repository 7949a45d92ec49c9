// armour: gradient checks, redundancy analysis, parameter/FLOP accounting,
// micro-benchmarks, toy training, and ARMW weight import/export.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "armour/analysis.hpp"
#include "armour/attention.hpp"
#include "armour/bench.hpp"
#include "armour/gradcheck.hpp"
#include "armour/levit.hpp"
#include "armour/tensor.hpp"
#include "armour/toy_train.hpp"
#include "armour/weights_io.hpp"

namespace fs = std::filesystem;
using namespace armour;

namespace {

struct Output {
  std::string format = "text";
  std::string path;
  std::ostringstream buf;

  template <typename R>
  void report(const R& r) {
    if (format == "jsonl") {
      buf << r.to_jsonl_line() << "\n";
    } else {
      r.print_text(buf);
    }
  }

  void text_line(const std::string& s) {
    if (format == "text") buf << s << "\n";
  }

  void flush() {
    if (path.empty()) {
      std::cout << buf.str();
    } else {
      std::ofstream os(path);
      if (!os) throw IoError("cannot open '" + path + "' for writing");
      os << buf.str();
    }
  }
};

AttentionConfig attention_cfg_from(const std::vector<std::size_t>& dims, const std::string& variant) {
  if (dims.size() != 3) throw SpecError("--dims expects L,d,h");
  AttentionConfig cfg;
  cfg.variant = attention_variant_from_string(variant);
  cfg.seq_len = dims[0];
  cfg.model_dim = dims[1];
  cfg.heads = dims[2];
  cfg.validate();
  return cfg;
}

LevitBlockConfig levit_cfg_from(const std::vector<std::size_t>& dims, const std::string& variant) {
  if (dims.size() != 5) throw SpecError("--levit-dims expects N,D,H,W,C");
  LevitBlockConfig cfg;
  cfg.variant = levit_variant_from_string(variant);
  cfg.heads = dims[0];
  cfg.key_dim = dims[1];
  cfg.height = dims[2];
  cfg.width = dims[3];
  cfg.channels = dims[4];
  cfg.validate();
  return cfg;
}

ArchSpec arch_from(const std::string& arch, const std::string& arch_file) {
  if (!arch_file.empty()) return arch_from_json_file(arch_file);
  return builtin_arch(arch);
}

// Accepts both "w_q" and the compact "wq" spelling for pair names.
std::string canonical_suffix(std::string token) {
  std::string bare;
  for (char c : token)
    if (c != '_') bare += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const char* known : {"w_q", "w_k", "w_v", "w_o", "b_q", "b_k", "b_v", "b_o",
                            "p_q", "p_k", "p_v", "p_o"}) {
    std::string known_bare;
    for (const char* p = known; *p; ++p)
      if (*p != '_') known_bare += *p;
    if (bare == known_bare) return known;
  }
  return token;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"compact self-attention toolbox"};
  app.require_subcommand(1);

  Output out;
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "base RNG seed")->capture_default_str();
  app.add_option("--out", out.path, "write the report to this path instead of stdout");
  app.add_option("--format", out.format, "report format")
      ->check(CLI::IsMember({"text", "jsonl"}))
      ->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "analytic gradients vs central finite differences");
  gc->fallthrough();
  std::string gc_variant = "regular";
  std::vector<std::size_t> gc_dims{4, 8, 2};
  std::string gc_levit_variant;
  std::vector<std::size_t> gc_levit_dims;
  std::size_t gc_seeds = 10;
  double gc_tolerance = 1e-4;
  gc->add_option("--variant", gc_variant, "attention variant")->capture_default_str();
  gc->add_option("--dims", gc_dims, "attention dims L,d,h")->delimiter(',')->expected(3);
  gc->add_option("--levit-variant", gc_levit_variant, "check a block variant instead");
  gc->add_option("--levit-dims", gc_levit_dims, "block dims N,D,H,W,C")->delimiter(',')->expected(5);
  gc->add_option("--seeds", gc_seeds, "number of seeds")->capture_default_str();
  gc->add_option("--tolerance", gc_tolerance, "max relative error gate")->capture_default_str();

  // analyze
  auto* an = app.add_subcommand("analyze", "weight redundancy reports");
  an->fallthrough();
  std::string an_weights;
  std::string an_pairs = "wq:wk";
  double an_epsilon = 1e-2;
  bool an_normalize = false;
  std::size_t an_per_head = 0;
  bool an_probe = false;
  std::string an_regular, an_armour;
  an->add_option("--weights", an_weights, "ARMW container to analyze");
  an->add_option("--pairs", an_pairs, "comma list of suffix pairs, e.g. wq:wk,wq:wv")
      ->capture_default_str();
  an->add_option("--epsilon", an_epsilon, "redundancy threshold")->capture_default_str();
  an->add_flag("--normalize", an_normalize, "scale matrices to unit RMS first");
  an->add_option("--per-head", an_per_head, "split matrices into this many heads");
  an->add_flag("--probe", an_probe, "entanglement probe over two trained containers");
  an->add_option("--regular", an_regular, "regular-variant container (probe mode)");
  an->add_option("--armour", an_armour, "armour-variant container (probe mode)");

  // paramcount
  auto* pc = app.add_subcommand("paramcount", "analytic parameter census for a model family");
  pc->fallthrough();
  std::string pc_arch = "deit-ti";
  std::string pc_arch_file;
  std::string pc_variant = "armour";
  pc->add_option("--arch", pc_arch, "builtin family: deit-ti|deit-s|deit-b")
      ->capture_default_str();
  pc->add_option("--arch-file", pc_arch_file, "JSON architecture spec");
  pc->add_option("--variant", pc_variant, "compact variant to compare against regular")
      ->capture_default_str();

  // flops
  auto* fl = app.add_subcommand("flops", "analytic attention MAC accounting");
  fl->fallthrough();
  std::string fl_arch = "deit-ti";
  std::string fl_arch_file;
  std::string fl_variant;
  std::size_t fl_seq_len = 197;
  fl->add_option("--arch", fl_arch, "builtin family")->capture_default_str();
  fl->add_option("--arch-file", fl_arch_file, "JSON architecture spec");
  fl->add_option("--variant", fl_variant, "swap attention layers to this variant first");
  fl->add_option("--seq-len", fl_seq_len, "token count")->capture_default_str();

  // bench
  auto* be = app.add_subcommand("bench", "forward-pass wall-clock comparison");
  be->fallthrough();
  std::string be_variant = "all";
  std::vector<std::size_t> be_dims{197, 192, 3};
  std::string be_levit_variant;
  std::vector<std::size_t> be_levit_dims;
  std::size_t be_iters = 30;
  std::size_t be_warmup = 5;
  be->add_option("--variant", be_variant, "attention variant, comma list, or 'all'")
      ->capture_default_str();
  be->add_option("--dims", be_dims, "attention dims L,d,h")->delimiter(',')->expected(3);
  be->add_option("--levit-variant", be_levit_variant, "bench block variants instead ('all' ok)");
  be->add_option("--levit-dims", be_levit_dims, "block dims N,D,H,W,C")->delimiter(',')->expected(5);
  be->add_option("--iters", be_iters, "measured iterations")->capture_default_str();
  be->add_option("--warmup", be_warmup, "warmup iterations")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "toy-scale deterministic training run");
  tr->fallthrough();
  std::string tr_variant = "regular";
  TrainOptions tr_opt;
  ToyTask tr_task;
  std::string tr_weights_out;
  tr->add_option("--variant", tr_variant, "attention variant")->capture_default_str();
  tr->add_option("--epochs", tr_opt.epochs, "training epochs")->capture_default_str();
  tr->add_option("--lr", tr_opt.lr, "SGD learning rate")->capture_default_str();
  tr->add_option("--batch", tr_opt.batch_size, "batch size")->capture_default_str();
  tr->add_option("--task-seed", tr_task.seed, "dataset seed")->capture_default_str();
  tr->add_option("--train-samples", tr_task.train_samples)->capture_default_str();
  tr->add_option("--eval-samples", tr_task.eval_samples)->capture_default_str();
  tr->add_option("--weights-out", tr_weights_out, "ARMW path for the trained weights");

  // weights
  auto* we = app.add_subcommand("weights", "ARMW container export/import");
  we->fallthrough();
  we->require_subcommand(1);
  auto* wex = we->add_subcommand("export", "write a seeded random weight container");
  wex->fallthrough();
  std::string wex_variant = "regular";
  std::vector<std::size_t> wex_dims{4, 8, 2};
  std::string wex_levit_variant;
  std::vector<std::size_t> wex_levit_dims;
  std::size_t wex_layers = 1;
  std::string wex_dtype = "f64";
  std::string wex_out;
  wex->add_option("--variant", wex_variant, "attention variant")->capture_default_str();
  wex->add_option("--dims", wex_dims, "attention dims L,d,h")->delimiter(',')->expected(3);
  wex->add_option("--levit-variant", wex_levit_variant, "export a block bundle instead");
  wex->add_option("--levit-dims", wex_levit_dims, "block dims N,D,H,W,C")
      ->delimiter(',')
      ->expected(5);
  wex->add_option("--layers", wex_layers, "attention layer count")->capture_default_str();
  wex->add_option("--dtype", wex_dtype, "storage dtype")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  wex->add_option("--out", wex_out, "output path")->required();

  auto* wim = we->add_subcommand("import", "read a container and print its census");
  wim->fallthrough();
  std::string wim_path;
  std::string wim_reexport;
  wim->add_option("path", wim_path, "ARMW container")->required();
  wim->add_option("--reexport", wim_reexport, "write the container back out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  if (gc->parsed()) {
    bool all_passed = true;
    for (std::size_t i = 0; i < gc_seeds; ++i) {
      GradCheckReport rep;
      if (!gc_levit_variant.empty() || !gc_levit_dims.empty()) {
        const auto cfg = levit_cfg_from(gc_levit_dims.empty()
                                            ? std::vector<std::size_t>{2, 2, 2, 2, 3}
                                            : gc_levit_dims,
                                        gc_levit_variant.empty() ? "baseline" : gc_levit_variant);
        rep = gradcheck_levit(cfg, seed + i, gc_tolerance);
      } else {
        rep = gradcheck_attention(attention_cfg_from(gc_dims, gc_variant), seed + i,
                                  gc_tolerance);
      }
      out.report(rep);
      all_passed = all_passed && rep.passed();
    }
    out.flush();
    if (!all_passed) {
      std::cerr << "gradcheck: FAIL (tolerance " << gc_tolerance << ")\n";
      return 1;
    }
    return 0;
  }

  if (an->parsed()) {
    if (an_probe) {
      if (an_regular.empty() || an_armour.empty()) {
        throw SpecError("--probe needs --regular and --armour containers");
      }
      const EntanglementProbe probe =
          entanglement_probe(read_weights(an_regular), read_weights(an_armour), an_epsilon);
      out.report(probe);
      out.flush();
      return 0;
    }
    if (an_weights.empty()) throw SpecError("analyze needs --weights (or --probe)");
    const WeightContainer c = read_weights(an_weights);
    RedundancyOptions opt;
    opt.epsilon = an_epsilon;
    opt.normalize = an_normalize;
    opt.per_head = an_per_head;
    for (const std::string& pair : split(an_pairs, ',')) {
      const auto halves = split(pair, ':');
      if (halves.size() != 2) throw SpecError("pair '" + pair + "' is not of the form a:b");
      out.report(container_redundancy(c, canonical_suffix(halves[0]),
                                      canonical_suffix(halves[1]), opt));
    }
    out.flush();
    return 0;
  }

  if (pc->parsed()) {
    const ArchSpec spec = arch_from(pc_arch, pc_arch_file);
    out.report(param_count_report(spec, attention_variant_from_string(pc_variant)));
    out.flush();
    return 0;
  }

  if (fl->parsed()) {
    ArchSpec spec = arch_from(fl_arch, fl_arch_file);
    if (!fl_variant.empty()) {
      spec = with_attention_variant(spec, attention_variant_from_string(fl_variant));
    }
    out.report(model_flop_count(spec, fl_seq_len));
    out.flush();
    return 0;
  }

  if (be->parsed()) {
    if (!be_levit_variant.empty()) {
      std::vector<std::string> variants = be_levit_variant == "all"
                                              ? std::vector<std::string>{"baseline",
                                                                         "half_v_concat_q",
                                                                         "qk_replaces_v"}
                                              : split(be_levit_variant, ',');
      const auto dims = be_levit_dims.empty() ? std::vector<std::size_t>{4, 16, 14, 14, 128}
                                              : be_levit_dims;
      for (const std::string& v : variants) {
        out.report(run_bench(levit_cfg_from(dims, v), be_iters, seed, be_warmup));
      }
    } else {
      std::vector<std::string> variants;
      if (be_variant == "all") {
        for (AttentionVariant v : all_attention_variants()) variants.push_back(to_string(v));
      } else {
        variants = split(be_variant, ',');
      }
      for (const std::string& v : variants) {
        out.report(run_bench(attention_cfg_from(be_dims, v), be_iters, seed, be_warmup));
      }
    }
    out.flush();
    return 0;
  }

  if (tr->parsed()) {
    tr_opt.seed = seed;
    const TrainRecord rec =
        train(attention_variant_from_string(tr_variant), tr_task, tr_opt);
    if (out.format == "jsonl") {
      out.buf << rec.to_jsonl_line() << "\n";
    } else {
      rec.print_text(out.buf);
    }
    out.flush();
    std::string weights_path = tr_weights_out;
    if (weights_path.empty() && !out.path.empty()) {
      weights_path = (fs::path(out.path).replace_extension(".armw")).string();
    }
    if (!weights_path.empty()) {
      write_weights(weights_path, rec.weights);
      std::cout << "weights written to " << weights_path << "\n";
    }
    return 0;
  }

  if (wex->parsed()) {
    WeightContainer c;
    const Dtype dtype = wex_dtype == "f32" ? Dtype::f32 : Dtype::f64;
    if (!wex_levit_variant.empty() || !wex_levit_dims.empty()) {
      const auto cfg = levit_cfg_from(wex_levit_dims.empty()
                                          ? std::vector<std::size_t>{2, 2, 2, 2, 3}
                                          : wex_levit_dims,
                                      wex_levit_variant.empty() ? "baseline" : wex_levit_variant);
      LevitBlockWeights w = init_levit_weights(cfg, seed);
      if (dtype == Dtype::f32) {
        for (auto& [name, t] : levit_weight_entries(w))
          for (double& v : t->data) v = static_cast<double>(static_cast<float>(v));
      }
      add_levit_weights(c, w, cfg, "block.", dtype);
    } else {
      const auto cfg = attention_cfg_from(wex_dims, wex_variant);
      for (std::size_t i = 0; i < wex_layers; ++i) {
        AttentionWeights w = init_attention_weights(cfg, seed + i);
        if (dtype == Dtype::f32) {
          for (auto& [name, t] : attention_weight_entries(w))
            for (double& v : t->data) v = static_cast<double>(static_cast<float>(v));
        }
        add_attention_weights(c, w, cfg, "layer" + std::to_string(i) + ".", dtype);
      }
    }
    write_weights(wex_out, c);
    std::cout << "wrote " << c.tensors.size() << " tensors to " << wex_out << "\n";
    return 0;
  }

  if (wim->parsed()) {
    const WeightContainer c = read_weights(wim_path);
    for (const auto& t : c.tensors) {
      out.text_line(t.name + "  " + (t.dtype == Dtype::f32 ? "f32" : "f64") + "  " +
                    shape_string(t.values));
      if (out.format == "jsonl") {
        out.buf << "{\"name\":\"" << t.name << "\",\"dtype\":\""
                << (t.dtype == Dtype::f32 ? "f32" : "f64") << "\",\"numel\":" << t.values.numel()
                << "}\n";
      }
    }
    out.flush();
    if (!wim_reexport.empty()) {
      write_weights(wim_reexport, c);
      std::cout << "re-exported to " << wim_reexport << "\n";
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
