#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "metric_oracles.hpp"
#include "tody/errors.hpp"
#include "tody/tasks.hpp"

using namespace tody;
using namespace tody::testing;

TEST_CASE("metrics on hand examples") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  const std::vector<int> y{1, 0, 1, 0};
  CHECK(average_precision(s, y) == doctest::Approx((1.0 + 2.0 / 3.0) / 2));
  CHECK(roc_auc(s, y) == doctest::Approx(0.75));
  // All tied: AUC one half, AP equals the positive rate.
  const std::vector<double> t{0.5, 0.5, 0.5, 0.5};
  CHECK(roc_auc(t, y) == 0.5);
  CHECK(average_precision(t, y) == 0.5);
  const std::vector<double> pos{0.9, 0.1};
  const std::vector<double> neg{0.5, 0.2, 0.3, 0.1};
  CHECK(mrr(pos, neg, 2) == doctest::Approx((1.0 + 1.0 / 2.0) / 2));
  const std::vector<int> pred{1, 2, 3}, lab{1, 0, 3};
  CHECK(accuracy(pred, lab) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("metric errors") {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> ones{1, 1};
  CHECK_THROWS_AS(average_precision(s, ones), MetricError);
  CHECK_THROWS_AS(roc_auc(s, ones), MetricError);
  CHECK_THROWS_AS(roc_auc(s, std::vector<int>{1}), ContractError);
  CHECK_THROWS_AS(roc_auc(s, std::vector<int>{1, 2}), ContractError);
  CHECK_THROWS_AS(mrr(std::vector<double>{}, std::vector<double>{}, 1), MetricError);
  CHECK_THROWS_AS(mrr(s, std::vector<double>{0.1}, 1), ContractError);
  CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), MetricError);
  CHECK(MetricError("x").exit_code() == 3);
}

TEST_CASE("metrics match brute force on random instances with ties") {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 60);
    const int levels = 1 + static_cast<int>(rng() % 10);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = static_cast<double>(rng() % static_cast<unsigned>(levels)) / levels;
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(std::abs(average_precision(s, y) - brute_ap(s, y)) <= 1e-12);
    CHECK(std::abs(roc_auc(s, y) - brute_auc(s, y)) <= 1e-12);
    const std::size_t k = 1 + rng() % 5;
    std::vector<double> pos(static_cast<std::size_t>(n)), neg(static_cast<std::size_t>(n) * k);
    for (auto& v : pos) v = static_cast<double>(rng() % 5);
    for (auto& v : neg) v = static_cast<double>(rng() % 5);
    CHECK(std::abs(mrr(pos, neg, k) - brute_mrr(pos, neg, k)) <= 1e-12);
  }
}

TEST_CASE("losses") {
  CHECK(bce_value(1, 0.8) == doctest::Approx(-std::log(0.8)));
  CHECK(bce_value(0, 0.8) == doctest::Approx(-std::log(0.2)));
  CHECK(std::isfinite(bce_value(1, 0.0)));
  const std::vector<double> logits{1.0, 2.0, 0.5};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5));
  CHECK(ce_value(1, logits) == doctest::Approx(lse - 2.0));
  CHECK_THROWS_AS(ce_value(3, logits), ContractError);
}

TEST_CASE("decoder heads: shapes, range, gradients") {
  Rng rng(3);
  ParamSet<double> ps;
  const auto flp = FlpDecoderParams<double>::make(ps, "flp", 4, rng);
  const auto dnc = DncDecoderParams<double>::make(ps, "dnc", 4, 3, rng);
  const auto hu = random_tensor<double>({5, 4}, rng);
  const auto hv = random_tensor<double>({5, 4}, rng);
  const auto p = flp_score(hu, hv, flp);
  CHECK(p.shape() == Shape{5});
  for (double v : p.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(dnc_logits(hu, dnc).shape() == Shape{5, 3});
  CHECK_THROWS_AS(flp_score(hu, random_tensor<double>({5, 3}, rng), flp), ShapeError);
  CHECK_THROWS_AS(DncDecoderParams<double>::make(ps, "d1", 4, 1, rng), DataError);
  // Loss values agree with the scalar helpers.
  const std::vector<double> y{1, 0, 1, 1, 0};
  double want = 0;
  for (std::size_t i = 0; i < 5; ++i) want += bce_value(static_cast<int>(y[i]), p.data()[i]);
  CHECK(ops::bce_loss(p, std::span<const double>(y)).item() == doctest::Approx(want / 5));
}

TEST_CASE("metrics csv format") {
  std::vector<MetricRow> rows{{1, "val", "flp", "ap", 0.1, 7}, {2, "test", "flp", "auc", 1.0 / 3.0, 7}};
  std::ostringstream os;
  write_metrics_csv(os, rows);
  CHECK(os.str() == "epoch,split,task,metric,value,seed\n1,val,flp,ap,0.10000000000000001,7\n"
                    "2,test,flp,auc,0.33333333333333331,7\n");
  CHECK(parse_task("dnc") == Task::kDnc);
  CHECK_THROWS_AS(parse_task("xyz"), ConfigError);
}
