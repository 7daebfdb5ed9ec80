#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "depthformer/error.hpp"
#include "depthformer/losses.hpp"
#include "depthformer/rng.hpp"

using namespace df;

namespace {

DepthMap make_gt(std::vector<float> values, float cap = 10.0f) {
  DepthMap dm;
  dm.h = 1;
  dm.w = static_cast<int>(values.size());
  dm.cap = cap;
  dm.valid.assign(values.size(), 1);
  dm.data = std::move(values);
  return dm;
}

}  // namespace

TEST_CASE("silog is zero when predictions equal ground truth") {
  const DepthMap gt = make_gt({1.0f, 2.5f, 7.0f, 9.5f});
  CHECK(silog_loss(std::span<const float>(gt.data), gt, 10.0, 0.85) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("silog of a constant log offset") {
  // pred = e * gt: g == 1 everywhere, loss = alpha*sqrt(1 - lambda).
  const DepthMap gt = make_gt({1.0f, 2.0f, 3.0f, 4.0f, 5.0f});
  std::vector<float> pred(gt.data.size());
  for (size_t i = 0; i < pred.size(); ++i)
    pred[i] = static_cast<float>(gt.data[i] * 2.718281828459045);
  CHECK(silog_loss(std::span<const float>(pred), gt, 10.0, 0.85) ==
        doctest::Approx(3.872983).epsilon(1e-5));
}

TEST_CASE("silog with lambda=1 is scale invariant") {
  const DepthMap gt = make_gt({0.5f, 1.0f, 2.0f, 4.0f, 8.0f});
  for (double c : {0.5, 2.0, 10.0}) {
    std::vector<float> pred(gt.data.size());
    for (size_t i = 0; i < pred.size(); ++i) pred[i] = static_cast<float>(c * gt.data[i]);
    CHECK(silog_loss(std::span<const float>(pred), gt, 10.0, 1.0) < 1e-6);
  }
}

TEST_CASE("silog error paths") {
  const DepthMap gt = make_gt({1.0f, 2.0f});
  std::vector<uint8_t> empty_mask{0, 0};
  CHECK_THROWS_AS(silog_loss(std::span<const float>(gt.data), std::span<const float>(gt.data),
                             std::span<const uint8_t>(empty_mask), 10.0, 0.85),
                  DomainError);
  std::vector<float> bad_pred{1.0f, -0.5f};
  CHECK_THROWS_AS(silog_loss(std::span<const float>(bad_pred), gt, 10.0, 0.85), DomainError);
}

TEST_CASE("silog is a function of the pixel multiset") {
  Rng rng(5);
  std::vector<float> gtv(64), predv(64);
  for (size_t i = 0; i < 64; ++i) {
    gtv[i] = static_cast<float>(rng.uniform(0.5, 9.5));
    predv[i] = static_cast<float>(rng.uniform(0.5, 9.5));
  }
  const DepthMap gt = make_gt(gtv);
  const double base = silog_loss(std::span<const float>(predv), gt, 10.0, 0.85);

  std::vector<size_t> perm(64);
  for (size_t i = 0; i < 64; ++i) perm[i] = i;
  for (size_t i = 63; i > 0; --i)
    std::swap(perm[i], perm[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i) + 1))]);
  std::vector<float> gtp(64), predp(64);
  for (size_t i = 0; i < 64; ++i) {
    gtp[i] = gtv[perm[i]];
    predp[i] = predv[perm[i]];
  }
  CHECK(silog_loss(std::span<const float>(predp), make_gt(gtp), 10.0, 0.85) ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("silog never decreases as predictions scale away from gt") {
  Rng rng(6);
  std::vector<float> gtv(128);
  for (auto& v : gtv) v = static_cast<float>(rng.uniform(1.0, 9.0));
  const DepthMap gt = make_gt(gtv);
  double prev = -1.0;
  for (double c : {1.0, 1.5, 2.0, 4.0}) {
    std::vector<float> pred(gtv.size());
    for (size_t i = 0; i < pred.size(); ++i) pred[i] = static_cast<float>(c * gtv[i]);
    const double loss = silog_loss(std::span<const float>(pred), gt, 10.0, 0.85);
    CHECK(loss >= prev);
    prev = loss;
  }
}

TEST_CASE("chamfer hand cases") {
  // centers exactly the gt set -> 0
  const BinPartition exact{{0.2, 0.3, 0.5}, {1.0, 3.0, 7.0}, 0.0, 10.0};
  const DepthMap gt_exact = make_gt({1.0f, 3.0f, 7.0f});
  CHECK(chamfer_loss(exact, gt_exact, 2048, 0) == doctest::Approx(0.0).epsilon(1e-12));

  // X = {1,3}, C = {2}: forward (1+1)/2, backward 1/1 -> 2.0
  BinPartition c2;
  c2.centers = {2.0};
  CHECK(chamfer_loss(c2, make_gt({1.0f, 3.0f}), 2048, 0) == doctest::Approx(2.0).epsilon(1e-9));

  // X = {5}, C = {2.5, 7.5}: forward 6.25, backward (6.25+6.25)/2 -> 12.5
  BinPartition c3;
  c3.centers = {2.5, 7.5};
  CHECK(chamfer_loss(c3, make_gt({5.0f}), 2048, 0) == doctest::Approx(12.5).epsilon(1e-9));
}

TEST_CASE("chamfer symmetry when sets coincide") {
  Rng rng(7);
  std::vector<double> centers(8);
  for (auto& c : centers) c = rng.uniform(1.0, 9.0);
  std::sort(centers.begin(), centers.end());
  std::vector<float> values(centers.begin(), centers.end());
  BinPartition p;
  p.centers = centers;
  CHECK(chamfer_loss(p, make_gt(values), 2048, 0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("chamfer sampling is seeded and capped") {
  Rng rng(8);
  std::vector<float> gtv(500);
  for (auto& v : gtv) v = static_cast<float>(rng.uniform(1.0, 9.0));
  const DepthMap gt = make_gt(gtv);
  const auto s1 = sample_depth_values(std::span<const float>(gt.data),
                                      std::span<const uint8_t>(gt.valid), 64, 42);
  const auto s2 = sample_depth_values(std::span<const float>(gt.data),
                                      std::span<const uint8_t>(gt.valid), 64, 42);
  const auto s3 = sample_depth_values(std::span<const float>(gt.data),
                                      std::span<const uint8_t>(gt.valid), 64, 43);
  CHECK(s1.size() == 64);
  CHECK(s1 == s2);
  CHECK(s1 != s3);
  // without replacement: every sampled value appears no more often than in the source
  for (float v : s1) CHECK(std::count(gtv.begin(), gtv.end(), v) >=
                           std::count(s1.begin(), s1.end(), v));

  DepthMap empty = gt;
  std::fill(empty.valid.begin(), empty.valid.end(), 0);
  CHECK_THROWS_AS(chamfer_loss(BinPartition{{}, {1.0}, 0, 1}, empty, 16, 0), DomainError);
}

TEST_CASE("total loss composition") {
  // gamma = 0 and pred == gt -> total 0
  const DepthMap gt = make_gt({1.0f, 3.0f});
  BinPartition p;
  p.centers = {2.0};
  TotalLossParams params;
  params.gamma = 0.0;
  LossBreakdown b0 = total_loss(std::span<const float>(gt.data), gt, p, params);
  CHECK(b0.total == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(b0.n_valid_pixels == 2);

  // silog = 3.872983 (pred = e*gt), chamfer = 2.0, gamma = 0.1 -> 4.072983
  std::vector<float> pred(gt.data.size());
  for (size_t i = 0; i < pred.size(); ++i)
    pred[i] = static_cast<float>(gt.data[i] * 2.718281828459045);
  params.gamma = 0.1;
  const LossBreakdown b = total_loss(std::span<const float>(pred), gt, p, params);
  CHECK(b.silog == doctest::Approx(3.872983).epsilon(1e-5));
  CHECK(b.chamfer == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(b.total == doctest::Approx(4.072983).epsilon(1e-5));
  // breakdown invariant: total equals silog + gamma*chamfer through the same arithmetic
  CHECK(b.total == b.silog + 0.1 * b.chamfer);
  CHECK(b.silog >= 0.0);
  CHECK(b.chamfer >= 0.0);
}
