#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <numeric>

#include "depthformer/encoder.hpp"
#include "depthformer/error.hpp"
#include "depthformer/model.hpp"
#include "depthformer/ops.hpp"
#include "depthformer/rng.hpp"

using namespace df;

namespace {

Tensor<float> random_image(int64_t b, int64_t c, int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({b, c, h, w});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("patch_embed token counts and origins") {
  const ModelConfig cfg = preset("tiny");
  ParamStore<float> store = init_depthformer_params<float>(cfg, 0);

  Graph<float> g;
  BoundParams<float> params(g, store, false);
  // stage 1: K=7 S=4 P=3 on 64x64 -> 16x16 tokens of dim C1
  VarId x = g.leaf(random_image(1, 3, 64, 64, 1), false);
  TokenBatch tb = patch_embed(g, x, stage_spec(cfg, 0), params, "stage1.patch");
  CHECK(g.val(tb.tokens).shape == std::vector<int64_t>{1, 256, cfg.stage_channels[0]});
  CHECK(tb.origin_h == 16);
  CHECK(tb.origin_w == 16);

  // stage 2: K=3 S=2 P=1 on 16x16 -> 8x8
  VarId x2 = g.leaf(random_image(1, cfg.stage_channels[0], 16, 16, 2), false);
  TokenBatch tb2 = patch_embed(g, x2, stage_spec(cfg, 1), params, "stage2.patch");
  CHECK(g.val(tb2.tokens).shape == std::vector<int64_t>{1, 64, cfg.stage_channels[1]});
  CHECK(tb2.origin_h == 8);
  CHECK(tb2.origin_w == 8);

  // indivisible spatial dims are rejected
  VarId bad = g.leaf(random_image(1, 3, 63, 64, 3), false);
  CHECK_THROWS_AS(patch_embed(g, bad, stage_spec(cfg, 0), params, "stage1.patch"), ShapeError);
}

TEST_CASE("paper stage-1 grid at 448x576") {
  ModelConfig cfg = preset("paper");
  // Only the stage-1 embed is needed; shrink later stages to keep this cheap.
  ParamStore<float> store = init_depthformer_params<float>(cfg, 0);
  Graph<float> g;
  BoundParams<float> params(g, store, false);
  VarId x = g.leaf(random_image(1, 3, 448, 576, 4), false);
  TokenBatch tb = patch_embed(g, x, stage_spec(cfg, 0), params, "stage1.patch");
  CHECK(tb.origin_h == 112);
  CHECK(tb.origin_w == 144);
  CHECK(g.val(tb.tokens).shape == std::vector<int64_t>{1, 112 * 144, 64});
}

TEST_CASE("sra reduced key/value counts") {
  CHECK(sra_reduced_tokens(8, 8, 4) == 4);   // n/R^2 = 64/16
  CHECK(sra_reduced_tokens(8, 8, 1) == 64);  // identity reduction
  CHECK(sra_reduced_tokens(16, 16, 8) == 4);

  const ModelConfig cfg = preset("tiny");
  ParamStore<float> store = init_depthformer_params<float>(cfg, 0);
  Graph<float> g;
  BoundParams<float> params(g, store, false);
  // Stage 2 of tiny has dim 32, heads 2, R=4: run on an 8x8 grid.
  Tensor<float> tokens({2, 64, 32});
  Rng rng(5);
  for (auto& v : tokens.data) v = static_cast<float>(rng.uniform(-1, 1));
  AttnStats stats;
  VarId out = sra_attention(g, g.leaf(tokens, false), 8, 8, 4, 2, params, "stage2.block0.attn",
                            &stats);
  CHECK(g.val(out).shape == tokens.shape);  // output shape equals input shape
  CHECK(stats.kv_count == 4);
  CHECK(stats.min_row_sum == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(stats.max_row_sum == doctest::Approx(1.0).epsilon(1e-5));

  // R must divide the token grid.
  Tensor<float> tokens2({1, 36, 32});
  CHECK_THROWS_AS(sra_attention(g, g.leaf(tokens2, false), 6, 6, 4, 2, params,
                                "stage2.block0.attn", nullptr),
                  ShapeError);
}

TEST_CASE("single token with R=1: softmax over one key is the identity mix") {
  const ModelConfig cfg = preset("tiny");
  ParamStore<float> store = init_depthformer_params<float>(cfg, 2);
  const int64_t dim = cfg.stage_channels[3];
  Rng rng(88);
  Tensor<float> token({1, 1, dim});
  for (auto& v : token.data) v = static_cast<float>(rng.uniform(-1, 1));

  Graph<float> g;
  BoundParams<float> params(g, store, false);
  VarId out = sra_attention(g, g.leaf(token, false), 1, 1, 1, cfg.stage_heads[3], params,
                            "stage4.block0.attn", nullptr);

  // expected: proj(v(token)) with the attention weight pinned at 1
  const Tensor<float>& vw = store.get("stage4.block0.attn.v.weight");
  const Tensor<float>& vb = store.get("stage4.block0.attn.v.bias");
  const Tensor<float>& pw = store.get("stage4.block0.attn.proj.weight");
  const Tensor<float>& pb = store.get("stage4.block0.attn.proj.bias");
  std::vector<double> vvec(static_cast<size_t>(dim)), expect(static_cast<size_t>(dim));
  for (int64_t o = 0; o < dim; ++o) {
    double s = vb.data[static_cast<size_t>(o)];
    for (int64_t i = 0; i < dim; ++i)
      s += static_cast<double>(token.data[static_cast<size_t>(i)]) * vw.at(i, o);
    vvec[static_cast<size_t>(o)] = s;
  }
  for (int64_t o = 0; o < dim; ++o) {
    double s = pb.data[static_cast<size_t>(o)];
    for (int64_t i = 0; i < dim; ++i) s += vvec[static_cast<size_t>(i)] * pw.at(i, o);
    expect[static_cast<size_t>(o)] = s;
  }
  for (int64_t o = 0; o < dim; ++o)
    CHECK(g.val(out).data[static_cast<size_t>(o)] ==
          doctest::Approx(expect[static_cast<size_t>(o)]).epsilon(1e-5));
}

TEST_CASE("attention with R=1 is permutation equivariant") {
  const ModelConfig cfg = preset("tiny");
  ParamStore<float> store = init_depthformer_params<float>(cfg, 0);
  Rng rng(6);
  const int64_t n = 16, dim = cfg.stage_channels[3];  // stage 4 has R=1
  Tensor<float> tokens({1, n, dim});
  for (auto& v : tokens.data) v = static_cast<float>(rng.uniform(-1, 1));

  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.uniform_int(i + 1))]);

  Tensor<float> permuted({1, n, dim});
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(permuted.ptr() + i * dim, tokens.ptr() + perm[static_cast<size_t>(i)] * dim,
                sizeof(float) * static_cast<size_t>(dim));

  auto run = [&](const Tensor<float>& in) {
    Graph<float> g;
    BoundParams<float> params(g, store, false);
    VarId out = sra_attention(g, g.leaf(in, false), 4, 4, 1, cfg.stage_heads[3], params,
                              "stage4.block0.attn", nullptr);
    return g.val(out);
  };
  const Tensor<float> base = run(tokens);
  const Tensor<float> permd = run(permuted);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t d = 0; d < dim; ++d)
      CHECK(permd.at(0, i, d) ==
            doctest::Approx(base.at(0, perm[static_cast<size_t>(i)], d)).epsilon(1e-6));
}

TEST_CASE("zeroed output projections make the block an identity") {
  const ModelConfig cfg = preset("tiny");
  ParamStore<float> store = init_depthformer_params<float>(cfg, 0);
  for (const char* name : {"stage4.block0.attn.proj.weight", "stage4.block0.attn.proj.bias",
                           "stage4.block0.mlp.fc2.weight", "stage4.block0.mlp.fc2.bias"})
    for (auto& v : store.get(name).data) v = 0.0f;

  Rng rng(7);
  Tensor<float> tokens({2, 4, cfg.stage_channels[3]});
  for (auto& v : tokens.data) v = static_cast<float>(rng.uniform(-1, 1));

  Graph<float> g;
  BoundParams<float> params(g, store, false);
  VarId out = transformer_block(g, g.leaf(tokens, false), 2, 2, stage_spec(cfg, 3), params,
                                "stage4.block0", nullptr);
  const Tensor<float>& ov = g.val(out);
  REQUIRE(ov.shape == tokens.shape);
  CHECK(std::memcmp(ov.ptr(), tokens.ptr(), tokens.data.size() * sizeof(float)) == 0);
}

TEST_CASE("transformer_block preserves shape and stays finite") {
  const ModelConfig cfg = preset("tiny");
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ParamStore<float> store = init_depthformer_params<float>(cfg, seed);
    Rng rng(seed ^ 0xabc);
    Tensor<float> tokens({2, 64, cfg.stage_channels[1]});
    for (auto& v : tokens.data) v = static_cast<float>(rng.uniform(-2, 2));
    Graph<float> g;
    BoundParams<float> params(g, store, false);
    VarId out = transformer_block(g, g.leaf(tokens, false), 8, 8, stage_spec(cfg, 1), params,
                                  "stage2.block0", nullptr);
    REQUIRE(g.val(out).shape == std::vector<int64_t>{2, 64, cfg.stage_channels[1]});
    CHECK(g.val(out).all_finite());
  }
}

TEST_CASE("encoder pyramid shape law across input sizes") {
  const ModelConfig cfg = preset("tiny");
  ParamStore<float> store = init_depthformer_params<float>(cfg, 0);
  for (const auto& [h, w] : std::vector<std::pair<int, int>>{{32, 32}, {64, 64}, {64, 96}}) {
    Graph<float> g;
    BoundParams<float> params(g, store, false);
    VarId image = g.leaf(random_image(1, 3, h, w, 11), false);
    const auto pyramid = encoder_forward(g, image, cfg, params);
    for (int i = 0; i < 4; ++i) {
      const auto& e = g.val(pyramid[static_cast<size_t>(i)]);
      const int div = 4 << i;
      CHECK(e.shape == std::vector<int64_t>{1, cfg.stage_channels[static_cast<size_t>(i)],
                                            h / div, w / div});
      CHECK(e.all_finite());
    }
  }
  // dims not divisible by 32 are rejected
  Graph<float> g;
  BoundParams<float> params(g, store, false);
  VarId bad = g.leaf(random_image(1, 3, 48, 64, 12), false);
  CHECK_THROWS_AS(encoder_forward(g, bad, cfg, params), ShapeError);
}

TEST_CASE("batch independence of the encoder") {
  const ModelConfig cfg = preset("tiny");
  ParamStore<float> store = init_depthformer_params<float>(cfg, 3);
  const Tensor<float> one = random_image(1, 3, 32, 32, 21);
  Tensor<float> two({2, 3, 32, 32});
  std::copy(one.data.begin(), one.data.end(), two.data.begin());
  std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.numel());

  Graph<float> g;
  BoundParams<float> params(g, store, false);
  const auto pyr2 = encoder_forward(g, g.leaf(two, false), cfg, params);
  Graph<float> g1;
  BoundParams<float> params1(g1, store, false);
  const auto pyr1 = encoder_forward(g1, g1.leaf(one, false), cfg, params1);

  for (int i = 0; i < 4; ++i) {
    const auto& e2 = g.val(pyr2[static_cast<size_t>(i)]);
    const auto& e1 = g1.val(pyr1[static_cast<size_t>(i)]);
    const int64_t n = e1.numel();
    for (int64_t j = 0; j < n; ++j) {
      CHECK(e2.data[static_cast<size_t>(j)] ==
            doctest::Approx(e1.data[static_cast<size_t>(j)]).epsilon(1e-6));
      // identical images in one batch agree across the batch axis
      CHECK(e2.data[static_cast<size_t>(n + j)] ==
            doctest::Approx(e2.data[static_cast<size_t>(j)]).epsilon(1e-6));
    }
  }
}

TEST_CASE("encoder forward is deterministic within a build") {
  const ModelConfig cfg = preset("tiny");
  ParamStore<float> store = init_depthformer_params<float>(cfg, 9);
  const Tensor<float> image = random_image(2, 3, 32, 32, 33);
  auto run = [&] {
    Graph<float> g;
    BoundParams<float> params(g, store, false);
    return g.val(encoder_forward(g, g.leaf(image, false), cfg, params)[3]);
  };
  const Tensor<float> a = run();
  const Tensor<float> b = run();
  CHECK(std::memcmp(a.ptr(), b.ptr(), a.data.size() * sizeof(float)) == 0);
}

TEST_CASE("chunked inference matches the single-graph forward bitwise") {
  const ModelConfig cfg = preset("tiny");
  ParamStore<float> store = init_depthformer_params<float>(cfg, 4);
  const Tensor<float> image = random_image(1, 3, 64, 64, 44);

  Graph<float> g;
  BoundParams<float> params(g, store, false);
  const auto pyramid = encoder_forward(g, g.leaf(image, false), cfg, params);
  const auto chunked = encoder_pyramid_infer(cfg, store, image);
  for (int i = 0; i < 4; ++i) {
    const auto& a = g.val(pyramid[static_cast<size_t>(i)]);
    const auto& b = chunked[static_cast<size_t>(i)];
    REQUIRE(a.shape == b.shape);
    CHECK(std::memcmp(a.ptr(), b.ptr(), a.data.size() * sizeof(float)) == 0);
  }
}
