#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "armour/attention.hpp"
#include "armour/gradcheck.hpp"
#include "oracle.hpp"

using namespace armour;

namespace {

AttentionConfig make_cfg(AttentionVariant v, std::size_t L, std::size_t d, std::size_t h,
                         bool bias = true, bool out_proj = true) {
  AttentionConfig cfg;
  cfg.variant = v;
  cfg.seq_len = L;
  cfg.model_dim = d;
  cfg.heads = h;
  cfg.use_bias = bias;
  cfg.include_output_proj = out_proj;
  return cfg;
}

}  // namespace

TEST_CASE("variant names round-trip as lowercase strings") {
  for (AttentionVariant v : all_attention_variants()) {
    CHECK(attention_variant_from_string(to_string(v)) == v);
  }
  CHECK_THROWS_AS(attention_variant_from_string("Regular"), SpecError);
}

TEST_CASE("config validation rejects indivisible head splits") {
  CHECK_THROWS_AS(make_cfg(AttentionVariant::Regular, 4, 6, 4).validate(), SpecError);
  CHECK_NOTHROW(make_cfg(AttentionVariant::Regular, 4, 8, 4).validate());
}

TEST_CASE("weight census is strict in both directions") {
  const auto cfg = make_cfg(AttentionVariant::Armour, 3, 4, 1);
  AttentionWeights w = init_attention_weights(cfg, 1);
  CHECK(!w.w_v.has_value());
  CHECK(!w.b_v.has_value());
  CHECK_NOTHROW(validate_attention_weights(w, cfg));

  AttentionWeights with_extra = w;
  with_extra.w_v = Tensor({4, 4}, 0.0);
  CHECK_THROWS_AS(validate_attention_weights(with_extra, cfg), CensusError);
  CHECK_THROWS_AS(attention_forward(Tensor({3, 4}, 0.1), with_extra, cfg), CensusError);

  AttentionWeights missing = w;
  missing.w_k.reset();
  CHECK_THROWS_AS(validate_attention_weights(missing, cfg), CensusError);

  const auto qk_cfg = make_cfg(AttentionVariant::QKShared, 3, 4, 1);
  AttentionWeights qk = init_attention_weights(qk_cfg, 1);
  CHECK(!qk.w_k.has_value());
  CHECK(qk.w_v.has_value());
}

TEST_CASE("compact variants drop exactly one projection from the census") {
  for (std::size_t d : {4u, 8u}) {
    for (bool bias : {true, false}) {
      const std::size_t regular =
          attention_param_count(make_cfg(AttentionVariant::Regular, 2, d, 2, bias));
      const std::size_t saved = d * d + (bias ? d : 0);
      for (AttentionVariant v :
           {AttentionVariant::Armour, AttentionVariant::KVShared, AttentionVariant::QKShared,
            AttentionVariant::QKSharedDiagMasked}) {
        const std::size_t compact = attention_param_count(make_cfg(v, 2, d, 2, bias));
        CHECK(regular - compact == saved);
        AttentionWeights w = init_attention_weights(make_cfg(v, 2, d, 2, bias), 3);
        CHECK(attention_param_count(w) == compact);
      }
    }
  }
}

TEST_CASE("single-token attention degenerates to the value path") {
  Rng rng(2);
  const Tensor x = rng.uniform_tensor({1, 6}, -1, 1);

  SUBCASE("regular returns V after projection") {
    const auto cfg = make_cfg(AttentionVariant::Regular, 1, 6, 2);
    const AttentionWeights w = init_attention_weights(cfg, 5);
    const Tensor v = add_row_bias(matmul(x, *w.w_v), *w.b_v);
    const Tensor expected = add_row_bias(matmul(v, *w.w_o), *w.b_o);
    CHECK(max_abs_diff(attention_forward(x, w, cfg), expected) == 0.0);
  }
  SUBCASE("armour returns Q, kv_shared returns K (no output projection)") {
    const auto a_cfg = make_cfg(AttentionVariant::Armour, 1, 6, 2, true, false);
    const AttentionWeights aw = init_attention_weights(a_cfg, 5);
    const Tensor q = add_row_bias(matmul(x, *aw.w_q), *aw.b_q);
    CHECK(max_abs_diff(attention_forward(x, aw, a_cfg), q) == 0.0);

    const auto k_cfg = make_cfg(AttentionVariant::KVShared, 1, 6, 2, true, false);
    const AttentionWeights kw = init_attention_weights(k_cfg, 5);
    const Tensor k = add_row_bias(matmul(x, *kw.w_k), *kw.b_k);
    CHECK(max_abs_diff(attention_forward(x, kw, k_cfg), k) == 0.0);
  }
}

TEST_CASE("two-token identity-weight attention matches the frozen reference value") {
  const auto cfg = make_cfg(AttentionVariant::Regular, 2, 2, 1, false, false);
  AttentionWeights w;
  w.w_q = Tensor::identity(2);
  w.w_k = Tensor::identity(2);
  w.w_v = Tensor::identity(2);
  const Tensor x = Tensor::identity(2);
  const Tensor out = attention_forward(x, w, cfg);
  // softmax of [1/sqrt(2), 0] rows applied back to the identity input
  CHECK(out.at(0, 0) == doctest::Approx(0.6697615493266569).epsilon(1e-13));
  CHECK(out.at(0, 1) == doctest::Approx(0.3302384506733431).epsilon(1e-13));
  CHECK(out.at(1, 0) == doctest::Approx(0.3302384506733431).epsilon(1e-13));
  CHECK(out.at(1, 1) == doctest::Approx(0.6697615493266569).epsilon(1e-13));
}

TEST_CASE("every variant matches the loop-based reference implementation") {
  for (AttentionVariant v : all_attention_variants()) {
    for (std::size_t h : {1u, 2u}) {
      for (std::size_t L = 1; L <= 4; ++L) {
        for (std::size_t d = h; d <= 8; d += h) {
          const auto cfg = make_cfg(v, L, d, h);
          const std::uint64_t seed = 1000 * static_cast<std::uint64_t>(v) + 10 * L + d;
          const AttentionWeights w = init_attention_weights(cfg, seed);
          Rng rng(seed ^ 0xf00d);
          const Tensor x = rng.uniform_tensor({L, d}, -1.5, 1.5);
          const Tensor got = attention_forward(x, w, cfg);
          const Tensor want = oracle::attention(x, w, cfg);
          CHECK(got.shape == std::vector<std::size_t>{L, d});
          CHECK(max_abs_diff(got, want) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("bias-free and projection-free configs also match the reference") {
  for (AttentionVariant v : all_attention_variants()) {
    for (bool bias : {false, true}) {
      for (bool proj : {false, true}) {
        const auto cfg = make_cfg(v, 3, 6, 2, bias, proj);
        const AttentionWeights w = init_attention_weights(cfg, 400 + bias + 2 * proj);
        Rng rng(17);
        const Tensor x = rng.uniform_tensor({3, 6}, -1, 1);
        CHECK(max_abs_diff(attention_forward(x, w, cfg), oracle::attention(x, w, cfg)) < 1e-10);
      }
    }
  }
}

TEST_CASE("armour equals regular with the value projection tied to the query projection") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t h = 1 + rng.below(2);
    const std::size_t L = 1 + rng.below(8);
    const std::size_t d = h * (1 + rng.below(16 / h));
    const auto a_cfg = make_cfg(AttentionVariant::Armour, L, d, h);
    const AttentionWeights aw = init_attention_weights(a_cfg, seed);
    AttentionWeights tied;
    tied.w_q = aw.w_q;
    tied.b_q = aw.b_q;
    tied.w_k = aw.w_k;
    tied.b_k = aw.b_k;
    tied.w_v = aw.w_q;
    tied.b_v = aw.b_q;
    tied.w_o = aw.w_o;
    tied.b_o = aw.b_o;
    const Tensor x = rng.uniform_tensor({L, d}, -2, 2);
    const Tensor got = attention_forward(x, aw, a_cfg);
    const Tensor want =
        attention_forward(x, tied, make_cfg(AttentionVariant::Regular, L, d, h));
    CHECK(max_abs_diff(got, want) == 0.0);
  }
}

TEST_CASE("kv_shared equals regular with the value projection tied to the key projection") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed + 77);
    const std::size_t h = 1 + rng.below(2);
    const std::size_t L = 1 + rng.below(8);
    const std::size_t d = h * (1 + rng.below(16 / h));
    const auto k_cfg = make_cfg(AttentionVariant::KVShared, L, d, h);
    const AttentionWeights kw = init_attention_weights(k_cfg, seed);
    AttentionWeights tied;
    tied.w_q = kw.w_q;
    tied.b_q = kw.b_q;
    tied.w_k = kw.w_k;
    tied.b_k = kw.b_k;
    tied.w_v = kw.w_k;
    tied.b_v = kw.b_k;
    tied.w_o = kw.w_o;
    tied.b_o = kw.b_o;
    const Tensor x = rng.uniform_tensor({L, d}, -2, 2);
    const Tensor got = attention_forward(x, kw, k_cfg);
    const Tensor want =
        attention_forward(x, tied, make_cfg(AttentionVariant::Regular, L, d, h));
    CHECK(max_abs_diff(got, want) == 0.0);
  }
}

TEST_CASE("probability matrices are h x L x L with unit rows") {
  const auto cfg = make_cfg(AttentionVariant::Regular, 5, 8, 2);
  const AttentionWeights w = init_attention_weights(cfg, 11);
  Rng rng(4);
  const Tensor x = rng.uniform_tensor({5, 8}, -1, 1);
  const Tensor p = attention_probabilities(x, w, cfg);
  REQUIRE(p.shape == std::vector<std::size_t>{2, 5, 5});
  for (std::size_t head = 0; head < 2; ++head) {
    for (std::size_t i = 0; i < 5; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 5; ++j) row += p.data[(head * 5 + i) * 5 + j];
      CHECK(std::abs(row - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("regular and armour share the probability matrices exactly") {
  const auto a_cfg = make_cfg(AttentionVariant::Armour, 4, 8, 2);
  const AttentionWeights aw = init_attention_weights(a_cfg, 21);
  AttentionWeights rw;
  rw.w_q = aw.w_q;
  rw.b_q = aw.b_q;
  rw.w_k = aw.w_k;
  rw.b_k = aw.b_k;
  rw.w_v = aw.w_k;  // value weights are irrelevant to the probabilities
  rw.b_v = aw.b_k;
  rw.w_o = aw.w_o;
  rw.b_o = aw.b_o;
  Rng rng(6);
  const Tensor x = rng.uniform_tensor({4, 8}, -1, 1);
  const Tensor pa = attention_probabilities(x, aw, a_cfg);
  const Tensor pr = attention_probabilities(x, rw, make_cfg(AttentionVariant::Regular, 4, 8, 2));
  CHECK(max_abs_diff(pa, pr) == 0.0);
}

TEST_CASE("diagonal masking zeroes self-attention for every length above one") {
  for (std::size_t L = 1; L <= 6; ++L) {
    const auto cfg = make_cfg(AttentionVariant::QKSharedDiagMasked, L, 8, 2);
    const AttentionWeights w = init_attention_weights(cfg, 31 + L);
    Rng rng(100 + L);
    const Tensor x = rng.uniform_tensor({L, 8}, -1, 1);
    const Tensor p = attention_probabilities(x, w, cfg);
    if (L == 1) {
      for (std::size_t head = 0; head < 2; ++head) CHECK(p.data[head] == 1.0);
    } else {
      for (std::size_t head = 0; head < 2; ++head) {
        for (std::size_t i = 0; i < L; ++i) {
          CHECK(p.data[(head * L + i) * L + i] == 0.0);
          double row = 0.0;
          for (std::size_t j = 0; j < L; ++j) row += p.data[(head * L + i) * L + j];
          CHECK(std::abs(row - 1.0) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("identical input rows give uniform probabilities without masking") {
  const std::size_t L = 4;
  const auto cfg = make_cfg(AttentionVariant::QKShared, L, 6, 1);
  const AttentionWeights w = init_attention_weights(cfg, 9);
  Tensor x({L, 6});
  Rng rng(3);
  const Tensor row = rng.uniform_tensor({6}, -1, 1);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < 6; ++j) x.at(i, j) = row.data[j];
  const Tensor p = attention_probabilities(x, w, cfg);
  for (double v : p.data) CHECK(v == doctest::Approx(1.0 / L).epsilon(1e-12));
}

TEST_CASE("permuting input rows permutes output rows for every variant") {
  const std::size_t L = 5, d = 8;
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  for (AttentionVariant v : all_attention_variants()) {
    const auto cfg = make_cfg(v, L, d, 2);
    const AttentionWeights w = init_attention_weights(cfg, 41);
    Rng rng(8);
    const Tensor x = rng.uniform_tensor({L, d}, -1, 1);
    Tensor xp({L, d});
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j) xp.at(i, j) = x.at(perm[i], j);
    const Tensor out = attention_forward(x, w, cfg);
    const Tensor outp = attention_forward(xp, w, cfg);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < d; ++j)
        CHECK(outp.at(i, j) == doctest::Approx(out.at(perm[i], j)).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradients agree with finite differences for every variant") {
  for (AttentionVariant v : all_attention_variants()) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto rep = gradcheck_attention(make_cfg(v, 3, 4, 2), seed);
      INFO(rep.target, " seed ", seed, " worst ", rep.worst);
      CHECK(rep.passed());
    }
  }
}

TEST_CASE("containers round-trip a bundle and reject census mismatches") {
  const auto cfg = make_cfg(AttentionVariant::Regular, 3, 4, 2);
  const AttentionWeights w = init_attention_weights(cfg, 13);
  WeightContainer c;
  add_attention_weights(c, w, cfg, "layer0.");
  const AttentionWeights back = load_attention_weights(c, cfg, "layer0.");
  CHECK(max_abs_diff(*back.w_q, *w.w_q) == 0.0);
  CHECK(max_abs_diff(*back.b_o, *w.b_o) == 0.0);

  // regular bundle loaded as armour: the stored w_v violates the census
  CHECK_THROWS_AS(load_attention_weights(c, make_cfg(AttentionVariant::Armour, 3, 4, 2), "layer0."),
                  CensusError);

  WeightContainer with_unknown = c;
  with_unknown.add("layer0.w_z", Tensor({4, 4}, 0.0));
  CHECK_THROWS_AS(load_attention_weights(with_unknown, cfg, "layer0."), CensusError);

  WeightContainer missing;
  missing.add("layer0.w_q", *w.w_q);
  CHECK_THROWS_AS(load_attention_weights(missing, cfg, "layer0."), CensusError);
}

TEST_CASE("mismatched input shape raises a dimension error") {
  const auto cfg = make_cfg(AttentionVariant::Regular, 3, 4, 2);
  const AttentionWeights w = init_attention_weights(cfg, 1);
  CHECK_THROWS_AS(attention_forward(Tensor({2, 4}, 0.0), w, cfg), ShapeError);
  CHECK_THROWS_AS(attention_forward(Tensor({3, 6}, 0.0), w, cfg), ShapeError);
}
