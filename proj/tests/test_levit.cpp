#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "armour/gradcheck.hpp"
#include "armour/levit.hpp"
#include "oracle.hpp"

using namespace armour;

namespace {

LevitBlockConfig make_cfg(LevitVariant v, std::size_t n, std::size_t d, std::size_t h,
                          std::size_t w, std::size_t c, bool bias = true) {
  LevitBlockConfig cfg;
  cfg.variant = v;
  cfg.heads = n;
  cfg.key_dim = d;
  cfg.height = h;
  cfg.width = w;
  cfg.channels = c;
  cfg.use_bias = bias;
  return cfg;
}

}  // namespace

TEST_CASE("variant names round-trip") {
  for (LevitVariant v : all_levit_variants()) {
    CHECK(levit_variant_from_string(to_string(v)) == v);
  }
  CHECK_THROWS_AS(levit_variant_from_string("half"), SpecError);
}

TEST_CASE("weight census tracks the variant") {
  const auto base = make_cfg(LevitVariant::Baseline, 2, 3, 2, 2, 5);
  const LevitBlockWeights bw = init_levit_weights(base, 1);
  CHECK(bw.p_v->shape == std::vector<std::size_t>{5, 12});  // C x N*2D

  const auto half = make_cfg(LevitVariant::HalfVConcatQ, 2, 3, 2, 2, 5);
  const LevitBlockWeights hw = init_levit_weights(half, 1);
  CHECK(hw.p_v->shape == std::vector<std::size_t>{5, 6});  // C x N*D

  const auto repl = make_cfg(LevitVariant::QKReplacesV, 2, 3, 2, 2, 5);
  const LevitBlockWeights rw = init_levit_weights(repl, 1);
  CHECK(!rw.p_v.has_value());
  CHECK(!rw.b_v.has_value());

  LevitBlockWeights bad = rw;
  bad.p_v = Tensor({5, 6}, 0.0);
  CHECK_THROWS_AS(validate_levit_weights(bad, repl), CensusError);

  LevitBlockWeights missing = bw;
  missing.p_k.reset();
  CHECK_THROWS_AS(validate_levit_weights(missing, base), CensusError);
}

TEST_CASE("single-token map multiplies the value row straight through the output projection") {
  for (LevitVariant v : all_levit_variants()) {
    const auto cfg = make_cfg(v, 2, 3, 1, 1, 4);
    const LevitBlockWeights w = init_levit_weights(cfg, 7);
    Rng rng(5);
    const Tensor x = rng.uniform_tensor({1, 4}, -1, 1);

    const Tensor probs = levit_block_probabilities(x, w, cfg);
    REQUIRE(probs.shape == std::vector<std::size_t>{2, 1, 1});
    CHECK(probs.data[0] == 1.0);
    CHECK(probs.data[1] == 1.0);

    const Tensor out = levit_block_forward(x, w, cfg);
    CHECK(out.shape == std::vector<std::size_t>{1, 4});
    CHECK(max_abs_diff(out, oracle::levit_block(x, w, cfg)) < 1e-12);
  }
}

TEST_CASE("every block variant matches the loop-based reference implementation") {
  for (LevitVariant v : all_levit_variants()) {
    for (std::size_t n : {1u, 2u}) {
      for (std::size_t hh : {1u, 2u}) {
        for (std::size_t ww : {1u, 2u}) {
          for (std::size_t d : {1u, 2u}) {
            for (std::size_t c : {1u, 3u, 8u}) {
              const auto cfg = make_cfg(v, n, d, hh, ww, c);
              const std::uint64_t seed = 31 * n + 7 * hh + 3 * ww + d + c;
              const LevitBlockWeights w = init_levit_weights(cfg, seed);
              Rng rng(seed ^ 0xbeef);
              const Tensor x = rng.uniform_tensor({cfg.tokens(), c}, -1.5, 1.5);
              const Tensor got = levit_block_forward(x, w, cfg);
              CHECK(got.shape == std::vector<std::size_t>{cfg.tokens(), c});
              CHECK(max_abs_diff(got, oracle::levit_block(x, w, cfg)) < 1e-10);
            }
          }
        }
      }
    }
  }
}

TEST_CASE("probability rows sum to one and token permutation permutes outputs") {
  const auto cfg = make_cfg(LevitVariant::HalfVConcatQ, 2, 3, 2, 2, 6);
  const LevitBlockWeights w = init_levit_weights(cfg, 3);
  Rng rng(12);
  const Tensor x = rng.uniform_tensor({4, 6}, -1, 1);

  const Tensor p = levit_block_probabilities(x, w, cfg);
  for (std::size_t head = 0; head < 2; ++head) {
    for (std::size_t i = 0; i < 4; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 4; ++j) row += p.data[(head * 4 + i) * 4 + j];
      CHECK(std::abs(row - 1.0) <= 1e-12);
    }
  }

  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor xp({4, 6});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) xp.at(i, j) = x.at(perm[i], j);
  const Tensor out = levit_block_forward(x, w, cfg);
  const Tensor outp = levit_block_forward(xp, w, cfg);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      CHECK(outp.at(i, j) == doctest::Approx(out.at(perm[i], j)).epsilon(1e-12));
}

TEST_CASE("baseline with a split value projection reproduces half_v_concat_q exactly") {
  const auto half = make_cfg(LevitVariant::HalfVConcatQ, 2, 3, 2, 2, 5);
  const LevitBlockWeights hw = init_levit_weights(half, 19);

  // Rebuild the baseline value projection per head as [V-half | Q] so that
  // projecting with it equals concat(V, Q).
  const auto base = make_cfg(LevitVariant::Baseline, 2, 3, 2, 2, 5);
  const std::size_t n = base.heads, d = base.key_dim, c = base.channels;
  LevitBlockWeights bw;
  bw.p_q = hw.p_q;
  bw.b_q = hw.b_q;
  bw.p_k = hw.p_k;
  bw.b_k = hw.b_k;
  bw.p_o = hw.p_o;
  bw.b_o = hw.b_o;
  Tensor pv({c, n * 2 * d});
  Tensor bv({n * 2 * d});
  for (std::size_t head = 0; head < n; ++head) {
    for (std::size_t t = 0; t < d; ++t) {
      for (std::size_t row = 0; row < c; ++row) {
        pv.at(row, head * 2 * d + t) = hw.p_v->at(row, head * d + t);
        pv.at(row, head * 2 * d + d + t) = hw.p_q->at(row, head * d + t);
      }
      bv.data[head * 2 * d + t] = hw.b_v->data[head * d + t];
      bv.data[head * 2 * d + d + t] = hw.b_q->data[head * d + t];
    }
  }
  bw.p_v = pv;
  bw.b_v = bv;

  Rng rng(77);
  const Tensor x = rng.uniform_tensor({4, 5}, -2, 2);
  CHECK(max_abs_diff(levit_block_forward(x, hw, half), levit_block_forward(x, bw, base)) == 0.0);
}

TEST_CASE("per-block parameter savings follow the projection widths") {
  // C=128, N=4, D=16, no bias: baseline value projection holds 128*128 weights
  const auto base = make_cfg(LevitVariant::Baseline, 4, 16, 2, 2, 128, false);
  const auto half = make_cfg(LevitVariant::HalfVConcatQ, 4, 16, 2, 2, 128, false);
  const auto repl = make_cfg(LevitVariant::QKReplacesV, 4, 16, 2, 2, 128, false);
  CHECK(levit_block_param_count(base) - levit_block_param_count(half) == 8192);
  CHECK(levit_block_param_count(base) - levit_block_param_count(repl) == 16384);

  for (bool bias : {false, true}) {
    for (std::size_t n : {1u, 3u}) {
      for (std::size_t d : {2u, 5u}) {
        for (std::size_t c : {4u, 9u}) {
          const auto b = make_cfg(LevitVariant::Baseline, n, d, 2, 3, c, bias);
          const auto h = make_cfg(LevitVariant::HalfVConcatQ, n, d, 2, 3, c, bias);
          const auto r = make_cfg(LevitVariant::QKReplacesV, n, d, 2, 3, c, bias);
          const std::size_t half_saving = c * n * d + (bias ? n * d : 0);
          CHECK(levit_block_param_count(b) - levit_block_param_count(h) == half_saving);
          CHECK(levit_block_param_count(b) - levit_block_param_count(r) == 2 * half_saving);

          const LevitBlockWeights wb = init_levit_weights(b, 1);
          CHECK(levit_block_param_count(wb) == levit_block_param_count(b));
        }
      }
    }
  }
}

TEST_CASE("analytic gradients agree with finite differences for all block variants") {
  for (LevitVariant v : all_levit_variants()) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto rep = gradcheck_levit(make_cfg(v, 2, 2, 2, 2, 3), seed);
      INFO(rep.target, " seed ", seed, " worst ", rep.worst);
      CHECK(rep.passed());
    }
  }
}

TEST_CASE("container round-trip under the block prefix is strict") {
  const auto cfg = make_cfg(LevitVariant::Baseline, 2, 3, 2, 2, 5);
  const LevitBlockWeights w = init_levit_weights(cfg, 5);
  WeightContainer c;
  add_levit_weights(c, w, cfg);
  const LevitBlockWeights back = load_levit_weights(c, cfg);
  CHECK(max_abs_diff(*back.p_v, *w.p_v) == 0.0);

  const auto repl = make_cfg(LevitVariant::QKReplacesV, 2, 3, 2, 2, 5);
  CHECK_THROWS_AS(load_levit_weights(c, repl), CensusError);
}
