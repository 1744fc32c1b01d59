#include "cssl/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace cssl {
namespace {

CsslModel small_model(std::uint64_t seed, std::size_t d = 4, std::size_t h = 3,
                      std::size_t q = 2) {
  Rng rng(seed);
  return CsslModel::init(d, h, q, rng);
}

Matrix random_inputs(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix x(rows, cols);
  for (double& v : x.data) v = rng.normal();
  return x;
}

TEST(Predict, IdenticalBranchesAgree) {
  CsslModel model = small_model(1);
  model.w_lu = model.w_l;
  Rng rng(2);
  const Matrix x = random_inputs(rng, 6, 4);
  EXPECT_EQ(predict_labeled(model, x).data, predict_unlabeled(model, x).data);
}

TEST(Predict, RowsAreDistributions) {
  const CsslModel model = small_model(3);
  Rng rng(4);
  const Matrix x = random_inputs(rng, 9, 4);
  const Matrix p = predict_unlabeled(model, x);
  for (std::size_t i = 0; i < p.rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p.cols; ++j) sum += p(i, j);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Predict, RowPermutationEquivariant) {
  const CsslModel model = small_model(5);
  Rng rng(6);
  const Matrix x = random_inputs(rng, 5, 4);
  Matrix reversed(5, 4);
  for (std::size_t i = 0; i < 5; ++i)
    std::copy(x.row(4 - i), x.row(4 - i) + 4, reversed.row(i));
  const Matrix p = predict_labeled(model, x);
  const Matrix pr = predict_labeled(model, reversed);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < p.cols; ++j) EXPECT_EQ(p(i, j), pr(4 - i, j));
}

LabeledSet make_labeled(Rng& rng, std::size_t n, std::size_t d) {
  LabeledSet s;
  s.x = random_inputs(rng, n, d);
  s.y.resize(n);
  for (auto& y : s.y) y = static_cast<int>(rng.bounded(2));
  return s;
}

TEST(Risk, SupervisedEndpoint) {
  const CsslModel model = small_model(7);
  Rng rng(8);
  const LabeledSet labeled = make_labeled(rng, 10, 4);
  const Matrix unlabeled = random_inputs(rng, 6, 4);
  const RiskBreakdown rb =
      ssl_empirical_risk(model, labeled, unlabeled, 1.0, LossSpec::log_loss());
  EXPECT_DOUBLE_EQ(rb.total, rb.supervised);
}

TEST(Risk, UnsupervisedEndpoint) {
  const CsslModel model = small_model(9);
  Rng rng(10);
  const LabeledSet labeled = make_labeled(rng, 10, 4);
  const Matrix unlabeled = random_inputs(rng, 6, 4);
  const RiskBreakdown rb =
      ssl_empirical_risk(model, labeled, unlabeled, 0.0, LossSpec::log_loss());
  EXPECT_DOUBLE_EQ(rb.total, (10.0 * rb.unsupervised_labeled +
                              6.0 * rb.unsupervised_unlabeled) /
                                 16.0);
}

TEST(Risk, NoUnlabeledDegeneratesToLabeledOnly) {
  const CsslModel model = small_model(11);
  Rng rng(12);
  const LabeledSet labeled = make_labeled(rng, 8, 4);
  const RiskBreakdown rb =
      ssl_empirical_risk(model, labeled, Matrix(), 0.3, LossSpec::log_loss());
  EXPECT_DOUBLE_EQ(rb.unsupervised_unlabeled, 0.0);
  EXPECT_NEAR(rb.total, 0.3 * rb.supervised + 0.7 * rb.unsupervised_labeled, 1e-12);
}

TEST(Risk, RecombinationInvariant) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const CsslModel model = small_model(rng.next_u64());
    const std::size_t n = 1 + rng.bounded(12), m = rng.bounded(12);
    const LabeledSet labeled = make_labeled(rng, n, 4);
    const Matrix unlabeled = m > 0 ? random_inputs(rng, m, 4) : Matrix();
    const double beta = rng.uniform();
    const RiskBreakdown rb =
        ssl_empirical_risk(model, labeled, unlabeled, beta, LossSpec::log_loss());
    const double recombined =
        beta * rb.supervised +
        (1.0 - beta) *
            (static_cast<double>(n) * rb.unsupervised_labeled +
             static_cast<double>(m) * rb.unsupervised_unlabeled) /
            static_cast<double>(n + m);
    EXPECT_NEAR(rb.total, recombined, 1e-10);
  }
}

TEST(Risk, EmptyLabeledNeedsZeroBeta) {
  const CsslModel model = small_model(14);
  Rng rng(15);
  const Matrix unlabeled = random_inputs(rng, 6, 4);
  EXPECT_THROW(
      ssl_empirical_risk(model, LabeledSet{}, unlabeled, 0.5, LossSpec::log_loss()),
      ConfigError);
  EXPECT_NO_THROW(
      ssl_empirical_risk(model, LabeledSet{}, unlabeled, 0.0, LossSpec::log_loss()));
}

// gradient of the mixed risk against central differences over every
// parameter, at both endpoints and in between
TEST(RiskGrads, MatchFiniteDifferencesAcrossBeta) {
  Rng rng(16);
  const LabeledSet labeled = make_labeled(rng, 5, 4);
  const Matrix unlabeled = random_inputs(rng, 4, 4);
  const LossSpec spec = LossSpec::log_loss();

  for (double beta : {0.0, 0.3, 1.0}) {
    CsslModel model = small_model(17);
    TermWeights tw;
    tw.supervised = beta;
    tw.unsup_labeled = (1.0 - beta) * 5.0 / 9.0;
    tw.unsup_unlabeled = (1.0 - beta) * 4.0 / 9.0;
    const auto [value, grads] =
        cssl_batch_grads(model, labeled.x, labeled.y, unlabeled, spec, tw);
    EXPECT_NEAR(value,
                ssl_empirical_risk(model, labeled, unlabeled, beta, spec).total, 1e-10);

    auto check_block = [&](ParamBlock CsslModel::* member, const GradTape& got) {
      CsslModel probe = model;
      ParamBlock& block = probe.*member;
      auto loss_fn = [&](const ParamBlock& b) {
        ParamBlock saved = block;
        const_cast<ParamBlock&>(block) = b;
        const double v =
            ssl_empirical_risk(probe, labeled, unlabeled, beta, spec).total;
        const_cast<ParamBlock&>(block) = saved;
        return v;
      };
      const GradTape fd = finite_diff_grad(loss_fn, block, 1e-6);
      for (std::size_t l = 0; l < got.dweight.size(); ++l) {
        EXPECT_LE(max_abs_diff(got.dweight[l], fd.dweight[l]), 2e-5)
            << "beta=" << beta;
        for (std::size_t i = 0; i < got.dbias[l].size(); ++i)
          EXPECT_NEAR(got.dbias[l][i], fd.dbias[l][i], 2e-5) << "beta=" << beta;
      }
    };
    check_block(&CsslModel::w_l, grads.w_l);
    check_block(&CsslModel::w_lu, grads.w_lu);
    check_block(&CsslModel::w_gamma, grads.w_gamma);
  }
}

// at beta = 1 the mixed-risk gradient is the pure supervised gradient; at
// beta = 0 the pure unsupervised gradient
TEST(RiskGrads, EndpointReduction) {
  Rng rng(18);
  const LabeledSet labeled = make_labeled(rng, 6, 4);
  const Matrix unlabeled = random_inputs(rng, 5, 4);
  const LossSpec spec = LossSpec::log_loss();
  const CsslModel model = small_model(19);

  TermWeights sup_only{1.0, 0.0, 0.0};
  TermWeights unsup_only{0.0, 6.0 / 11.0, 5.0 / 11.0};
  TermWeights at_one{1.0, 0.0, 0.0};
  TermWeights at_zero{0.0, 1.0 * 6.0 / 11.0, 1.0 * 5.0 / 11.0};

  const auto g_sup = cssl_batch_grads(model, labeled.x, labeled.y, unlabeled, spec, sup_only);
  const auto g_one = cssl_batch_grads(model, labeled.x, labeled.y, unlabeled, spec, at_one);
  const auto g_unsup =
      cssl_batch_grads(model, labeled.x, labeled.y, unlabeled, spec, unsup_only);
  const auto g_zero =
      cssl_batch_grads(model, labeled.x, labeled.y, unlabeled, spec, at_zero);

  for (std::size_t l = 0; l < g_sup.second.w_gamma.dweight.size(); ++l) {
    EXPECT_LE(max_abs_diff(g_one.second.w_gamma.dweight[l],
                           g_sup.second.w_gamma.dweight[l]), 1e-10);
    EXPECT_LE(max_abs_diff(g_zero.second.w_gamma.dweight[l],
                           g_unsup.second.w_gamma.dweight[l]), 1e-10);
  }
  EXPECT_LE(max_abs_diff(g_one.second.w_l.dweight[0], g_sup.second.w_l.dweight[0]),
            1e-10);
  EXPECT_LE(max_abs_diff(g_zero.second.w_lu.dweight[0], g_unsup.second.w_lu.dweight[0]),
            1e-10);
}

TEST(RiskGrads, UnlabeledOnlyStepLeavesLabeledBranchUntouched) {
  Rng rng(20);
  CsslModel model = small_model(21);
  const Matrix w_l_before = model.w_l.layers[0].weight;
  const Matrix xu = random_inputs(rng, 8, 4);

  TermWeights tw{0.0, 0.0, 1.0};
  const auto [value, grads] =
      cssl_batch_grads(model, Matrix(), {}, xu, LossSpec::log_loss(), tw);
  (void)value;
  Adam opt_l, opt_lu, opt_gamma;
  opt_l.step(model.w_l, grads.w_l);
  opt_lu.step(model.w_lu, grads.w_lu);
  opt_gamma.step(model.w_gamma, grads.w_gamma);

  EXPECT_EQ(model.w_l.layers[0].weight.data, w_l_before.data);  // bit-identical
  EXPECT_GT(max_abs_diff(model.w_lu.layers[0].weight, w_l_before), 0.0);
}

// discrete feature support, exact population risk, Monte-Carlo mean of the
// oracle risk over fresh datasets
TEST(Risk, UnbiasednessWithOraclePosterior) {
  const std::size_t d = 4, n = 3, m = 3;
  const double beta = 0.37;
  const CsslModel model = small_model(22, d, 3, 2);
  const LossSpec spec = LossSpec::log_loss();

  // four support points with probabilities and true posteriors
  const std::vector<std::vector<double>> xs = {
      {0.5, -1.0, 0.2, 0.0}, {1.0, 0.3, -0.4, 0.8}, {-0.7, 0.1, 0.9, -0.2},
      {0.0, 0.0, 1.0, 1.0}};
  const std::vector<double> mu = {0.4, 0.3, 0.2, 0.1};
  const std::vector<double> p1 = {0.9, 0.4, 0.2, 0.7};

  PosteriorFn oracle = [&](std::span<const double> x) {
    for (std::size_t k = 0; k < xs.size(); ++k)
      if (std::equal(x.begin(), x.end(), xs[k].begin())) return std::vector<double>{
          1.0 - p1[k], p1[k]};
    throw std::logic_error("unknown support point");
  };

  // exact population risks of each branch predictor under mu x p_true
  double pop_l = 0.0, pop_lu = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    Matrix x(1, d);
    std::copy(xs[k].begin(), xs[k].end(), x.row(0));
    const Matrix pl = predict_labeled(model, x);
    const Matrix plu = predict_unlabeled(model, x);
    const std::vector<double> pt{1.0 - p1[k], p1[k]};
    pop_l += mu[k] * conditional_expected_loss(spec, pt, {pl.row(0), 2});
    pop_lu += mu[k] * conditional_expected_loss(spec, pt, {plu.row(0), 2});
  }
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  const double expected = beta * (pop_l + pop_lu) +
                          (1.0 - beta) * (nn * pop_l + mm * pop_lu) / (nn + mm);

  Rng rng(23);
  auto draw = [&] {
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t k = xs.size() - 1;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      cum += mu[i];
      if (u < cum) {
        k = i;
        break;
      }
    }
    return k;
  };

  const std::size_t datasets = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t rep = 0; rep < datasets; ++rep) {
    LabeledSet labeled;
    labeled.x = Matrix(n, d);
    labeled.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = draw();
      std::copy(xs[k].begin(), xs[k].end(), labeled.x.row(i));
      labeled.y[i] = rng.uniform() < p1[k] ? 1 : 0;
    }
    Matrix unlabeled(m, d);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t k = draw();
      std::copy(xs[k].begin(), xs[k].end(), unlabeled.row(j));
    }
    const double risk =
        ssl_empirical_risk_oracle(model, labeled, unlabeled, beta, spec, oracle).total;
    sum += risk;
    sumsq += risk * risk;
  }
  const double mean = sum / static_cast<double>(datasets);
  const double var =
      std::max(0.0, sumsq / static_cast<double>(datasets) - mean * mean);
  const double se = std::sqrt(var / static_cast<double>(datasets));
  EXPECT_LE(std::abs(mean - expected), 3.0 * se);
}

Dataset easy_dataset(std::size_t n, std::size_t m, std::size_t test, std::uint64_t seed) {
  const SynthParams strong{0.8, 0.05, 0.01, 2.0};
  return make_synth_dataset(strong, strong, n, m, test, seed);
}

TEST(Train, LowerLearnsSeparableData) {
  TrainConfig cfg;
  cfg.mode = TrainMode::Lower;
  cfg.epochs = 40;
  cfg.seed = 5;
  const Dataset ds = easy_dataset(200, 0, 400, 77);
  const TrainResult r = train(cfg, ds);
  EXPECT_GE(final_accuracy(r), 0.95);
}

TEST(Train, DeterministicGivenSeed) {
  TrainConfig cfg;
  cfg.mode = TrainMode::CSSL;
  cfg.epochs = 5;
  cfg.seed = 9;
  const Dataset ds = easy_dataset(60, 40, 50, 3);
  const TrainResult a = train(cfg, ds);
  const TrainResult b = train(cfg, ds);
  for (std::size_t l = 0; l < a.model.w_gamma.layers.size(); ++l)
    EXPECT_EQ(a.model.w_gamma.layers[l].weight.data,
              b.model.w_gamma.layers[l].weight.data);
  EXPECT_EQ(a.model.w_l.layers[0].weight.data, b.model.w_l.layers[0].weight.data);
  EXPECT_EQ(a.model.w_lu.layers[0].weight.data, b.model.w_lu.layers[0].weight.data);
  EXPECT_EQ(final_accuracy(a), final_accuracy(b));
}

TEST(Train, UpperUsesHiddenLabels) {
  TrainConfig cfg;
  cfg.mode = TrainMode::Upper;
  cfg.epochs = 30;
  cfg.seed = 4;
  const Dataset ds = easy_dataset(20, 300, 400, 13);
  EXPECT_GE(final_accuracy(train(cfg, ds)), 0.95);

  Dataset broken = ds;
  broken.unlabeled_y_hidden.clear();
  EXPECT_THROW(train(cfg, broken), ConfigError);
}

TEST(Train, NonFiniteDataAborts) {
  TrainConfig cfg;
  cfg.mode = TrainMode::Lower;
  cfg.epochs = 3;
  Dataset ds = easy_dataset(40, 0, 20, 21);
  ds.labeled.x(3, 7) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train(cfg, ds), StateError);
}

TEST(Train, HistoryRecordsRequestedEpochs) {
  TrainConfig cfg;
  cfg.mode = TrainMode::CSSL;
  cfg.epochs = 10;
  cfg.mixed_epochs = 4;
  cfg.history_every = 2;
  cfg.seed = 31;
  const Dataset ds = easy_dataset(50, 30, 40, 5);
  const TrainResult r = train(cfg, ds);
  ASSERT_EQ(r.history.size(), 7u);  // epochs 2,4,...,12 plus the final one
  EXPECT_EQ(r.history.back().epoch, 14u);
  EXPECT_GE(r.selected_epoch, 1u);
  EXPECT_LE(r.selected_epoch, 14u);
}

TEST(Evaluate, ChanceLevelOnRandomLabels) {
  const CsslModel model = small_model(33, 50, 10, 2);
  Rng rng(34);
  LabeledSet test;
  test.x = random_inputs(rng, 2000, 50);
  test.y.resize(2000);
  for (auto& y : test.y) y = static_cast<int>(rng.bounded(2));
  const double acc = evaluate(model, test, EvalPath::UnlabeledBranch);
  EXPECT_NEAR(acc, 0.5, 3.0 * std::sqrt(0.25 / 2000.0));
}

TEST(Evaluate, InvariantUnderShuffling) {
  const CsslModel model = small_model(35, 4, 3, 2);
  Rng rng(36);
  LabeledSet test = make_labeled(rng, 101, 4);
  const double before = evaluate(model, test, EvalPath::LabeledBranch);

  std::vector<std::size_t> perm(test.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  LabeledSet shuffled;
  shuffled.x = Matrix(test.size(), 4);
  shuffled.y.resize(test.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(test.x.row(perm[i]), test.x.row(perm[i]) + 4, shuffled.x.row(i));
    shuffled.y[i] = test.y[perm[i]];
  }
  EXPECT_DOUBLE_EQ(evaluate(model, shuffled, EvalPath::LabeledBranch), before);
}

TEST(CrossValidate, SingletonGridReturnsIt) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 41;
  const Dataset ds = easy_dataset(40, 20, 20, 9);
  const std::vector<double> grid{0.25};
  EXPECT_DOUBLE_EQ(cross_validate_beta(grid, 4, cfg, ds), 0.25);
}

TEST(CrossValidate, PureNoiseStillTerminates) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 43;
  Dataset ds = easy_dataset(40, 20, 20, 10);
  Rng rng(44);
  for (auto& y : ds.labeled.y) y = static_cast<int>(rng.bounded(2));  // labels are noise
  const std::vector<double> grid{0.1, 0.5};
  const double beta = cross_validate_beta(grid, 4, cfg, ds);
  EXPECT_TRUE(beta == 0.1 || beta == 0.5);
  const std::vector<double> lgrid{0.5, 2.0};
  const double lam = cross_validate_em_lambda(lgrid, 4, cfg, ds);
  EXPECT_TRUE(lam == 0.5 || lam == 2.0);
}

TEST(Checkpoint, RoundTripsExactly) {
  const CsslModel model = small_model(51, 6, 4, 3);
  const std::string path =
      (std::filesystem::temp_directory_path() / "cssl_ckpt_test.bin").string();
  save_checkpoint(model, path);
  const CsslModel loaded = load_checkpoint(path);
  for (std::size_t l = 0; l < model.w_l.layers.size(); ++l) {
    EXPECT_EQ(model.w_l.layers[l].weight.data, loaded.w_l.layers[l].weight.data);
    EXPECT_EQ(model.w_l.layers[l].bias, loaded.w_l.layers[l].bias);
  }
  EXPECT_EQ(model.w_lu.layers[0].weight.data, loaded.w_lu.layers[0].weight.data);
  EXPECT_EQ(model.w_gamma.layers[0].weight.data, loaded.w_gamma.layers[0].weight.data);
  EXPECT_EQ(static_cast<int>(loaded.w_gamma.layers[0].act),
            static_cast<int>(Activation::Softmax));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFile) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "cssl_ckpt_bad.bin").string();
  std::ofstream(path) << "definitely not a checkpoint";
  EXPECT_THROW(load_checkpoint(path), StateError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace cssl
