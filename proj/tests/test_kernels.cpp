#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "depthformer/kernels.hpp"
#include "depthformer/ops.hpp"
#include "depthformer/rng.hpp"
#include "depthformer/threading.hpp"

using namespace df;

namespace {

std::vector<float> random_vec(int64_t n, Rng& rng) {
  std::vector<float> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

// Double-precision naive references, the oracle for both tables.
void gemm_nn_naive(int64_t m, int64_t n, int64_t k, const float* a, const float* b,
                   std::vector<double>& c) {
  c.assign(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p)
      for (int64_t j = 0; j < n; ++j)
        c[static_cast<size_t>(i * n + j)] +=
            static_cast<double>(a[i * k + p]) * static_cast<double>(b[p * n + j]);
}

void check_gemm_family(const kern::Kernels& t) {
  Rng rng(7);
  // Sizes exercise the 16/8-wide main loops and all tails.
  const int64_t sizes[][3] = {{1, 1, 1},  {2, 3, 4},   {5, 17, 9},
                              {8, 16, 32}, {13, 33, 7}, {32, 64, 48}};
  for (const auto& s : sizes) {
    const int64_t m = s[0], n = s[1], k = s[2];
    auto a = random_vec(m * k, rng);
    auto b = random_vec(k * n, rng);
    auto bt = std::vector<float>(static_cast<size_t>(n * k));
    for (int64_t j = 0; j < n; ++j)
      for (int64_t p = 0; p < k; ++p) bt[static_cast<size_t>(j * k + p)] = b[static_cast<size_t>(p * n + j)];
    auto at = std::vector<float>(static_cast<size_t>(k * m));
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) at[static_cast<size_t>(p * m + i)] = a[static_cast<size_t>(i * k + p)];

    std::vector<double> want;
    gemm_nn_naive(m, n, k, a.data(), b.data(), want);

    std::vector<float> c(static_cast<size_t>(m * n), 42.0f);
    t.sgemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
    for (size_t i = 0; i < c.size(); ++i)
      CHECK(std::abs(c[i] - want[i]) < 1e-4 * (1.0 + std::abs(want[i])));

    std::vector<float> cnt(static_cast<size_t>(m * n), 0.0f);
    t.sgemm_nt(m, n, k, a.data(), k, bt.data(), k, cnt.data(), n, false);
    for (size_t i = 0; i < cnt.size(); ++i)
      CHECK(std::abs(cnt[i] - want[i]) < 1e-4 * (1.0 + std::abs(want[i])));

    std::vector<float> ctn(static_cast<size_t>(m * n), 0.0f);
    t.sgemm_tn(m, n, k, at.data(), m, b.data(), n, ctn.data(), n, false);
    for (size_t i = 0; i < ctn.size(); ++i)
      CHECK(std::abs(ctn[i] - want[i]) < 1e-4 * (1.0 + std::abs(want[i])));

    // accumulate=true adds on top.
    std::vector<float> acc(static_cast<size_t>(m * n), 1.0f);
    t.sgemm_nn(m, n, k, a.data(), k, b.data(), n, acc.data(), n, true);
    for (size_t i = 0; i < acc.size(); ++i)
      CHECK(std::abs(acc[i] - (1.0 + want[i])) < 1e-4 * (2.0 + std::abs(want[i])));
  }
}

}  // namespace

TEST_CASE("scalar gemm matches double naive oracle") { check_gemm_family(kern::scalar_table()); }

TEST_CASE("avx2 gemm matches double naive oracle") {
  const kern::Kernels* t = kern::avx2_table();
  if (!t) return;  // machine without avx2
  check_gemm_family(*t);
}

TEST_CASE("hand 2x2 gemm is exact") {
  const float a[4] = {1, 2, 3, 4};
  const float b[4] = {5, 6, 7, 8};
  float c[4];
  kern::active().sgemm_nn(2, 2, 2, a, 2, b, 2, c, 2, false);
  CHECK(c[0] == 19.0f);
  CHECK(c[1] == 22.0f);
  CHECK(c[2] == 43.0f);
  CHECK(c[3] == 50.0f);
}

TEST_CASE("scalar and avx2 tables agree elementwise") {
  const kern::Kernels* avx = kern::avx2_table();
  if (!avx) return;
  const kern::Kernels& ref = kern::scalar_table();
  Rng rng(11);
  for (int64_t n : {1, 7, 8, 9, 64, 1000, 1025}) {
    auto a = random_vec(n, rng);
    auto b = random_vec(n, rng);
    std::vector<float> r1(static_cast<size_t>(n)), r2(static_cast<size_t>(n));

    ref.sadd(n, a.data(), b.data(), r1.data());
    avx->sadd(n, a.data(), b.data(), r2.data());
    CHECK(r1 == r2);

    ref.sscale(n, 1.7f, a.data(), r1.data());
    avx->sscale(n, 1.7f, a.data(), r2.data());
    CHECK(r1 == r2);

    ref.srelu(n, a.data(), r1.data());
    avx->srelu(n, a.data(), r2.data());
    CHECK(r1 == r2);

    ref.sleaky(n, 0.01f, a.data(), r1.data());
    avx->sleaky(n, 0.01f, a.data(), r2.data());
    CHECK(r1 == r2);

    std::vector<float> y1 = b, y2 = b;
    ref.saxpy(n, -0.3f, a.data(), y1.data());
    avx->saxpy(n, -0.3f, a.data(), y2.data());
    for (int64_t i = 0; i < n; ++i) CHECK(y1[static_cast<size_t>(i)] ==
                                          doctest::Approx(y2[static_cast<size_t>(i)]).epsilon(1e-6));

    CHECK(ref.sdot(n, a.data(), b.data()) ==
          doctest::Approx(avx->sdot(n, a.data(), b.data())).epsilon(2e-5));
    CHECK(ref.ssum(n, a.data()) == doctest::Approx(avx->ssum(n, a.data())).epsilon(2e-5));
  }
}

TEST_CASE("double gemm variants agree with f32-upcast expectations") {
  const kern::Kernels* avx = kern::avx2_table();
  if (!avx) return;
  Rng rng(13);
  const int64_t m = 9, n = 21, k = 17;
  std::vector<double> a(static_cast<size_t>(m * k)), b(static_cast<size_t>(k * n));
  for (auto& v : a) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  std::vector<double> c1(static_cast<size_t>(m * n)), c2(c1);
  kern::scalar_table().dgemm_nn(m, n, k, a.data(), k, b.data(), n, c1.data(), n, false);
  avx->dgemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n, false);
  for (size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
}

TEST_CASE("gemm results are bitwise independent of thread count") {
  Rng rng(17);
  const int64_t m = 67, n = 33, k = 29;
  auto a = random_vec(m * k, rng);
  auto b = random_vec(k * n, rng);
  std::vector<float> c1(static_cast<size_t>(m * n)), c2(c1);

  const int saved = max_threads();
  set_max_threads(1);
  kern::active().sgemm_nn(m, n, k, a.data(), k, b.data(), n, c1.data(), n, false);
  set_max_threads(saved > 1 ? saved : 2);
  kern::active().sgemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n, false);
  set_max_threads(saved);
  CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);
}

TEST_CASE("conv2d forward matches a naive direct convolution") {
  Rng rng(19);
  for (const auto& [ci, co, hw, kk, st, pd] :
       std::vector<std::tuple<int, int, int, int, int, int>>{
           {3, 5, 8, 3, 1, 1}, {2, 4, 12, 7, 4, 3}, {4, 2, 6, 3, 2, 1}, {1, 1, 5, 1, 1, 0}}) {
    Tensor<float> x({2, ci, hw, hw});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor<float> w({co, ci, kk, kk});
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor<float> bias({co});
    for (auto& v : bias.data) v = static_cast<float>(rng.uniform(-1, 1));

    Graph<float> g;
    VarId y = ops::conv2d(g, g.leaf(x, false), g.leaf(w, false), g.leaf(bias, false), st, pd);
    const Tensor<float>& yv = g.val(y);

    const int64_t oh = yv.shape[2], ow = yv.shape[3];
    for (int64_t bidx = 0; bidx < 2; ++bidx)
      for (int64_t c = 0; c < co; ++c)
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            double acc = bias.data[static_cast<size_t>(c)];
            for (int64_t ic = 0; ic < ci; ++ic)
              for (int64_t ky = 0; ky < kk; ++ky)
                for (int64_t kx = 0; kx < kk; ++kx) {
                  const int64_t iy = oy * st - pd + ky;
                  const int64_t ix = ox * st - pd + kx;
                  if (iy < 0 || iy >= hw || ix < 0 || ix >= hw) continue;
                  acc += static_cast<double>(x.at(bidx, ic, iy, ix)) *
                         static_cast<double>(w.at(c, ic, ky, kx));
                }
            CHECK(yv.at(bidx, c, oy, ox) == doctest::Approx(acc).epsilon(1e-4));
          }
  }
}

TEST_CASE("conv_transpose2x2 doubles spatial dims and matches naive") {
  Rng rng(23);
  const int64_t ci = 3, co = 2, h = 4, w = 5;
  Tensor<float> x({1, ci, h, w});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
  Tensor<float> wt({ci, co, 2, 2});
  for (auto& v : wt.data) v = static_cast<float>(rng.uniform(-1, 1));
  Tensor<float> bias({co});
  for (auto& v : bias.data) v = static_cast<float>(rng.uniform(-1, 1));

  Graph<float> g;
  VarId y = ops::conv_transpose2x2(g, g.leaf(x, false), g.leaf(wt, false), g.leaf(bias, false));
  const Tensor<float>& yv = g.val(y);
  REQUIRE(yv.shape == std::vector<int64_t>{1, co, 2 * h, 2 * w});

  for (int64_t c = 0; c < co; ++c)
    for (int64_t oy = 0; oy < 2 * h; ++oy)
      for (int64_t ox = 0; ox < 2 * w; ++ox) {
        double acc = bias.data[static_cast<size_t>(c)];
        const int64_t iy = oy / 2, ix = ox / 2, ky = oy % 2, kx = ox % 2;
        for (int64_t ic = 0; ic < ci; ++ic)
          acc += static_cast<double>(x.at(0, ic, iy, ix)) *
                 static_cast<double>(wt.at(ic, c, ky, kx));
        CHECK(yv.at(0, c, oy, ox) == doctest::Approx(acc).epsilon(1e-4));
      }
}
