#include <catch2/catch_amalgamated.hpp>

#include "shiftdiff/dataset.hpp"
#include "shiftdiff/predictor.hpp"

using namespace shiftdiff;

TEST_CASE("fixed table spans [-1, 1] evenly") {
  ShiftPredictor p = make_fixed_table(10, 784);
  Vec c0 = p.predict(0), c9 = p.predict(9);
  for (double v : c0) REQUIRE(v == -1.0);
  for (double v : c9) REQUIRE(v == 1.0);
  Vec c4 = p.predict(4);
  CHECK(c4[0] == Catch::Approx(-1.0 + 8.0 / 9.0));
  CHECK_THROWS_AS(p.predict(10), contract_error);
  CHECK_THROWS_AS(p.predict(-1), contract_error);
}

TEST_CASE("class-mean table equals the dataset class means") {
  Rng rng(2);
  Dataset ds = make_gmm_dataset(default_gmm(), 5000, rng);
  ShiftPredictor p = make_class_mean(ds.x0, ds.labels, 2);

  // exact recomputation oracle
  Vec sum0(2, 0.0), sum1(2, 0.0);
  int n0 = 0, n1 = 0;
  for (int i = 0; i < ds.size(); ++i) {
    for (int d = 0; d < 2; ++d) (ds.labels[i] ? sum1 : sum0)[d] += ds.x0.at(i, d);
    (ds.labels[i] ? n1 : n0)++;
  }
  for (int d = 0; d < 2; ++d) {
    CHECK(p.predict(0)[d] == Catch::Approx(sum0[d] / n0).margin(1e-12));
    CHECK(p.predict(1)[d] == Catch::Approx(sum1[d] / n1).margin(1e-12));
  }
  // and lands near the true component means
  CHECK(p.predict(0)[0] == Catch::Approx(2.0).margin(4.0 * std::sqrt(0.1 / n0) + 1e-3));
  CHECK(p.predict(1)[0] == Catch::Approx(-2.0).margin(4.0 * std::sqrt(0.1 / n1) + 1e-3));
}

TEST_CASE("trainable predictor starts at zero") {
  ShiftPredictor p = make_trainable(3, 5);
  for (int c = 0; c < 3; ++c)
    for (double v : p.predict(c)) REQUIRE(v == 0.0);
}

TEST_CASE("interpolation endpoints, midpoint and affinity") {
  Rng rng(6);
  Dataset ds = make_gmm_dataset(default_gmm(), 4000, rng);
  ShiftPredictor p = make_class_mean(ds.x0, ds.labels, 2);

  Vec e0 = p.predict(0), e1 = p.predict(1);
  CHECK(p.interpolate(0, 1, 1.0) == e0);
  CHECK(p.interpolate(0, 1, 0.0) == e1);

  Vec mid = p.interpolate(0, 1, 0.5);
  CHECK(std::abs(mid[0]) < 0.05);
  CHECK(std::abs(mid[1]) < 0.05);

  // affine sweep: second differences vanish
  for (int d = 0; d < 2; ++d) {
    Vec ys;
    for (double lam : {0.0, 0.25, 0.5, 0.75, 1.0})
      ys.push_back(p.interpolate(0, 1, lam)[d]);
    for (size_t i = 2; i < ys.size(); ++i)
      CHECK(std::abs(ys[i] - 2 * ys[i - 1] + ys[i - 2]) < 1e-12);
  }

  // same-condition interpolation is the identity for any lambda
  for (double lam : {0.0, 0.3, 0.9}) {
    Vec same = p.interpolate(1, 1, lam);
    CHECK(same[0] == Catch::Approx(e1[0]).epsilon(1e-15));
    CHECK(same[1] == Catch::Approx(e1[1]).epsilon(1e-15));
  }

  CHECK_THROWS_AS(p.interpolate(0, 1, 1.5), contract_error);
  CHECK_THROWS_AS(p.interpolate(0, 1, -0.1), contract_error);
}
