#include "cssl/losses.hpp"

#include <gtest/gtest.h>

#include "cssl/rng.hpp"

namespace cssl {
namespace {

std::vector<double> random_simplex(Rng& rng, std::size_t q) {
  std::vector<double> p(q);
  double z = 0.0;
  for (double& v : p) {
    v = -std::log(1.0 - rng.uniform());
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

TEST(LossSpec, RejectsBadAlpha) {
  EXPECT_THROW(LossSpec::alpha_loss(1.0), ConfigError);
  EXPECT_THROW(LossSpec::alpha_loss(0.0), ConfigError);
  EXPECT_THROW(LossSpec::alpha_loss(-2.0), ConfigError);
  EXPECT_NO_THROW(LossSpec::alpha_loss(2.0));
}

TEST(SupervisedLoss, PerfectPredictionIsZero) {
  const std::vector<double> p{1.0, 0.0};
  EXPECT_DOUBLE_EQ(supervised_loss(LossSpec::log_loss(), p, 0), 0.0);
}

TEST(SupervisedLoss, AlphaTwoHandValue) {
  const std::vector<double> p{0.25, 0.75};
  // alpha/(alpha-1) * (1 - p^(1-1/alpha)) = 2 * (1 - 0.25^0.5) = 1
  EXPECT_NEAR(supervised_loss(LossSpec::alpha_loss(2.0), p, 0), 1.0, 1e-12);
}

TEST(SupervisedLoss, AlphaNearOneApproachesLogLoss) {
  const LossSpec spec = LossSpec::alpha_loss(1.0 + 1e-6);
  for (double py : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
    const std::vector<double> p{py, 1.0 - py};
    EXPECT_NEAR(supervised_loss(spec, p, 0), -std::log(py), 1e-4) << "p_y=" << py;
  }
}

TEST(SupervisedLoss, ZeroProbabilityClampsFinite) {
  const std::vector<double> p{0.0, 1.0};
  const double loss = supervised_loss(LossSpec::log_loss(), p, 0);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_DOUBLE_EQ(loss, -std::log(1e-12));
}

TEST(SupervisedLoss, LabelOutOfRangeThrows) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_THROW(supervised_loss(LossSpec::log_loss(), p, 2), ConfigError);
}

TEST(UnsupervisedLoss, OneHotHasZeroEntropy) {
  const std::vector<double> p{0.0, 1.0, 0.0};
  EXPECT_NEAR(unsupervised_loss(LossSpec::log_loss(), p), 0.0, 1e-10);
}

TEST(UnsupervisedLoss, UniformBinaryIsLn2) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_NEAR(unsupervised_loss(LossSpec::log_loss(), p), std::log(2.0), 1e-15);
}

TEST(UnsupervisedLoss, EntropyHandValue) {
  const std::vector<double> p{0.5, 0.3, 0.2};
  EXPECT_NEAR(unsupervised_loss(LossSpec::log_loss(), p), 1.0296530140645735, 1e-12);
}

TEST(UnsupervisedLoss, PseudoLabelHandValue) {
  const std::vector<double> p{0.9, 0.1};
  EXPECT_NEAR(unsupervised_loss(LossSpec::pseudo_label(), p), -std::log(0.9), 1e-15);
}

TEST(UnsupervisedLoss, EntropyIdentityProperty) {
  Rng rng(21);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const auto p = random_simplex(rng, 2 + rng.bounded(5));
    double h = 0.0;
    for (double v : p)
      if (v > 0.0) h -= v * std::log(v);
    worst = std::max(worst, std::abs(unsupervised_loss(LossSpec::log_loss(), p) - h));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(UnsupervisedLoss, ExpectationConsistencyProperty) {
  Rng rng(22);
  const LossSpec specs[] = {LossSpec::log_loss(), LossSpec::squared_log_loss(),
                            LossSpec::alpha_loss(2.5), LossSpec::alpha_loss(0.7)};
  for (int i = 0; i < 500; ++i) {
    const auto p = random_simplex(rng, 2 + rng.bounded(4));
    for (const auto& spec : specs) {
      double expect = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j)
        expect += p[j] * supervised_loss(spec, p, j);
      EXPECT_NEAR(unsupervised_loss(spec, p), expect, 1e-12);
    }
  }
}

TEST(Losses, NonNegativityProperty) {
  Rng rng(23);
  const LossSpec specs[] = {LossSpec::log_loss(), LossSpec::squared_log_loss(),
                            LossSpec::pseudo_label(), LossSpec::alpha_loss(3.0),
                            LossSpec::alpha_loss(0.5)};
  for (int i = 0; i < 500; ++i) {
    auto p = random_simplex(rng, 2 + rng.bounded(4));
    if (i % 7 == 0) {  // degenerate corner
      std::fill(p.begin(), p.end(), 0.0);
      p[rng.bounded(p.size())] = 1.0;
    }
    for (const auto& spec : specs) {
      EXPECT_GE(unsupervised_loss(spec, p), 0.0);
      for (std::size_t j = 0; j < p.size(); ++j)
        EXPECT_GE(supervised_loss(spec, p, j), -1e-15);
    }
  }
}

TEST(ConditionalExpectedLoss, CoincidesWithUnsupervisedAtTruth) {
  Rng rng(24);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_simplex(rng, 3);
    EXPECT_NEAR(conditional_expected_loss(LossSpec::log_loss(), p, p),
                unsupervised_loss(LossSpec::log_loss(), p), 1e-12);
  }
}

TEST(ConditionalExpectedLoss, OneHotTruthReducesToSupervised) {
  const std::vector<double> p_true{0.0, 1.0, 0.0};
  const std::vector<double> p_hat{0.2, 0.5, 0.3};
  EXPECT_DOUBLE_EQ(conditional_expected_loss(LossSpec::log_loss(), p_true, p_hat),
                   supervised_loss(LossSpec::log_loss(), p_hat, 1));
}

TEST(ConditionalExpectedLoss, HandValue) {
  const std::vector<double> p_true{0.7, 0.3};
  const std::vector<double> p_hat{0.5, 0.5};
  EXPECT_NEAR(conditional_expected_loss(LossSpec::log_loss(), p_true, p_hat),
              std::log(2.0), 1e-15);
}

// the estimation gap decomposes over classes and vanishes at the truth
TEST(ConditionalExpectedLoss, GapStructure) {
  Rng rng(25);
  const LossSpec spec = LossSpec::log_loss();
  for (int i = 0; i < 200; ++i) {
    const auto p_true = random_simplex(rng, 3);
    const auto p_hat = random_simplex(rng, 3);
    double gap = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      gap += (p_true[j] - p_hat[j]) * supervised_loss(spec, p_hat, j);
    EXPECT_NEAR(conditional_expected_loss(spec, p_true, p_hat) -
                    unsupervised_loss(spec, p_hat),
                gap, 1e-12);
  }
  const auto p = random_simplex(rng, 4);
  EXPECT_NEAR(conditional_expected_loss(spec, p, p) - unsupervised_loss(spec, p), 0.0,
              1e-13);
}

TEST(ProbVector, Validation) {
  EXPECT_THROW(validate_prob_vector(std::vector<double>{1.0}), ConfigError);
  EXPECT_THROW(validate_prob_vector(std::vector<double>{0.7, 0.2}), ConfigError);
  EXPECT_THROW(validate_prob_vector(std::vector<double>{-0.1, 1.1}), ConfigError);
  EXPECT_NO_THROW(validate_prob_vector(std::vector<double>{0.3, 0.7}));
}

}  // namespace
}  // namespace cssl
