#include "cssl/bounds.hpp"

#include <gtest/gtest.h>

namespace cssl {
namespace {

BoundInputs base_inputs() {
  BoundInputs in;
  in.n = 10;
  in.m = 40;
  in.beta = 0.3;
  in.sigma_l = in.sigma_c = in.sigma_u = 0.5;
  in.loss_range_l = in.loss_range_u = 1.0;
  in.mi_wxy = 0.2;
  in.mi_wxl = 0.1;
  in.mi_wxu = 0.15;
  in.kl_shift = 0.05;
  in.tv_shift = 0.1;
  in.delta_ssl = 0.02;
  return in;
}

TEST(Thm1, SupervisedEndpointKeepsOnlyFirstTerm) {
  BoundInputs in = base_inputs();
  in.beta = 1.0;
  const BoundReport r = bound_thm1(in);
  EXPECT_GT(r.supervised_term, 0.0);
  EXPECT_DOUBLE_EQ(r.labeled_unsup_term, 0.0);
  EXPECT_DOUBLE_EQ(r.unlabeled_term, 0.0);
  EXPECT_DOUBLE_EQ(r.total, r.supervised_term);
}

TEST(Thm1, ZeroInformationZeroShiftIsZero) {
  BoundInputs in = base_inputs();
  in.mi_wxy = in.mi_wxl = in.mi_wxu = 0.0;
  in.kl_shift = 0.0;
  EXPECT_DOUBLE_EQ(bound_thm1(in).total, 0.0);
}

TEST(Thm1, InfiniteShiftIsVacuous) {
  BoundInputs in = base_inputs();
  in.kl_shift = kInfinity;
  const BoundReport r = bound_thm1(in);
  EXPECT_TRUE(r.infinite);
  EXPECT_TRUE(std::isinf(r.total));
}

TEST(Thm1, KnownValue) {
  BoundInputs in = base_inputs();
  const double t1 = 0.3 * std::sqrt(2.0 * 0.25 * 0.2 / 10.0 + 2.0 * 0.25 * 0.05);
  const double t2 =
      (10.0 * 0.7 / 50.0) * std::sqrt(2.0 * 0.25 * 0.1 / 10.0 + 2.0 * 0.25 * 0.05);
  const double t3 = (40.0 * 0.7 / 50.0) * std::sqrt(2.0 * 0.25 * 0.15 / 40.0);
  const BoundReport r = bound_thm1(in);
  EXPECT_NEAR(r.supervised_term, t1, 1e-15);
  EXPECT_NEAR(r.labeled_unsup_term, t2, 1e-15);
  EXPECT_NEAR(r.unlabeled_term, t3, 1e-15);
  EXPECT_NEAR(r.total, t1 + t2 + t3, 1e-15);
}

TEST(Prop2, MatchesThm1WhenDeltaZeroAndSigmasEqual) {
  BoundInputs in = base_inputs();
  in.delta_ssl = 0.0;
  in.sigma_u = in.sigma_c;
  const BoundReport a = bound_thm1(in);
  const BoundReport b = bound_prop2(in);
  EXPECT_DOUBLE_EQ(a.supervised_term, b.supervised_term);
  EXPECT_DOUBLE_EQ(a.labeled_unsup_term, b.labeled_unsup_term);
  EXPECT_DOUBLE_EQ(a.unlabeled_term, b.unlabeled_term);
  EXPECT_DOUBLE_EQ(b.delta_term, 0.0);
  EXPECT_DOUBLE_EQ(a.total, b.total);
}

TEST(Prop2, DeltaTermVanishesAtSupervisedEndpoint) {
  BoundInputs in = base_inputs();
  in.beta = 1.0;
  in.delta_ssl = 0.4;
  EXPECT_DOUBLE_EQ(bound_prop2(in).delta_term, 0.0);
}

TEST(Prop2, MonotoneInDelta) {
  BoundInputs in = base_inputs();
  double prev = -1.0;
  for (double d : {0.0, 0.1, 0.2, 0.5, 1.0}) {
    in.delta_ssl = d;
    const double total = bound_prop2(in).total;
    EXPECT_GE(total, prev);
    prev = total;
  }
}

TEST(Cor4, ZeroEverythingIsZero) {
  BoundInputs in = base_inputs();
  in.mi_wxy = in.mi_wxl = in.mi_wxu = 0.0;
  in.tv_shift = 0.0;
  in.delta_ssl = 0.0;
  EXPECT_DOUBLE_EQ(bound_cor4_tv(in).total, 0.0);
}

TEST(Cor4, FiniteEvenWithoutAbsoluteContinuity) {
  BoundInputs in = base_inputs();
  in.kl_shift = kInfinity;  // cor4 never reads it
  in.tv_shift = 1.0;
  const BoundReport r = bound_cor4_tv(in);
  EXPECT_FALSE(r.infinite);
  EXPECT_TRUE(std::isfinite(r.total));
}

TEST(Cor4, MaximalShiftSupervisedEndpoint) {
  BoundInputs in = base_inputs();
  in.beta = 1.0;
  in.tv_shift = 1.0;
  in.mi_wxy = in.mi_wxl = in.mi_wxu = 0.0;
  in.delta_ssl = 0.0;
  in.loss_range_l = 2.5;
  EXPECT_DOUBLE_EQ(bound_cor4_tv(in).total, 2.0 * 2.5);
}

TEST(DeltaBounds, ZeroDivergenceMeansZeroGap) {
  EXPECT_DOUBLE_EQ(delta_bound_kl(0.5, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(delta_bound_tv(1.0, 0.0), 0.0);
  EXPECT_NEAR(delta_bound_kl(0.5, 2.0), std::sqrt(2.0 * 0.25 * 2.0), 1e-15);
  EXPECT_DOUBLE_EQ(delta_bound_tv(2.0, 0.25), 1.0);
}

TEST(Cor6, SingletonHypothesisSpace) {
  const double eps = 0.3;
  const double sigma_u = 0.5;
  const double expected = (1.0 - 0.4) * std::sqrt(2.0 * sigma_u * sigma_u) * eps;
  EXPECT_NEAR(bound_cor6(10, 20, 0.4, 0.5, sigma_u, 1, eps), expected, 1e-15);
}

TEST(Rates, SupervisedLimit) {
  EXPECT_NEAR(rate_eq17(1.0, 25, 1000), 1.0 / 5.0, 1e-15);
  EXPECT_NEAR(rate_eq18(25, 0), 1.0 / 5.0, 1e-15);
}

TEST(Rates, Eq18EventuallyDecreasingInM) {
  const std::size_t n = 10;
  double prev = kInfinity;
  for (std::size_t m = 1000; m <= 1024000; m *= 2) {
    const double r = rate_eq18(n, m);
    EXPECT_LT(r, prev);
    prev = r;
  }
}

TEST(Rates, Eq18BeatsSupervisedForLargeM) {
  const std::size_t n = 100;
  EXPECT_LT(rate_eq18(n, 100000), 1.0 / std::sqrt(static_cast<double>(n)));
}

}  // namespace
}  // namespace cssl
