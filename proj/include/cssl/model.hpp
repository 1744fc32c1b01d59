#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cssl/datagen.hpp"
#include "cssl/losses.hpp"
#include "cssl/nn.hpp"
#include "cssl/optim.hpp"

namespace cssl {

// Three-block model: two disjoint feature branches (labeled-data branch and
// labeled+unlabeled branch) feeding one shared head that produces the class
// distribution. The branches absorb the feature-marginal difference; the
// head carries the conditional, which covariate shift leaves unchanged.
struct CsslModel {
  ParamBlock w_l;      // labeled branch, d -> h
  ParamBlock w_lu;     // unlabeled branch, d -> h
  ParamBlock w_gamma;  // shared head, h -> q, softmax

  static CsslModel init(std::size_t d, std::size_t h, std::size_t q, Rng& rng) {
    CsslModel m;
    m.w_l = make_block({d, h}, {Activation::ReLU}, rng);
    m.w_lu = make_block({d, h}, {Activation::ReLU}, rng);
    m.w_gamma = make_block({h, q}, {Activation::Softmax}, rng);
    return m;
  }

  std::size_t in_dim() const { return w_l.in_dim(); }
  std::size_t num_classes() const { return w_gamma.out_dim(); }
};

inline Matrix predict_labeled(const CsslModel& model, const Matrix& x) {
  ForwardTrace t1, t2;
  return forward(model.w_gamma, forward(model.w_l, x, &t1), &t2);
}

inline Matrix predict_unlabeled(const CsslModel& model, const Matrix& x) {
  ForwardTrace t1, t2;
  return forward(model.w_gamma, forward(model.w_lu, x, &t1), &t2);
}

struct RiskBreakdown {
  double supervised = 0.0;             // both branches' mean supervised loss
  double unsupervised_labeled = 0.0;   // mean l_u of labeled data, labeled branch
  double unsupervised_unlabeled = 0.0; // mean l_u of unlabeled data, other branch
  double total = 0.0;
};

using PosteriorFn = std::function<std::vector<double>(std::span<const double>)>;

namespace detail {

inline double unsup_term(const LossSpec& spec, std::span<const double> p_hat,
                         std::span<const double> x, const PosteriorFn& oracle) {
  if (!oracle) return unsupervised_loss(spec, p_hat);
  return conditional_expected_loss(spec, oracle(x), p_hat);
}

inline RiskBreakdown ssl_risk_impl(const CsslModel& model, const LabeledSet& labeled,
                                   const Matrix& unlabeled_x, double beta,
                                   const LossSpec& spec, const PosteriorFn& oracle) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("ssl risk: beta outside [0,1]");
  const std::size_t n = labeled.size();
  const std::size_t m = unlabeled_x.rows;
  if (n == 0 && beta > 0.0)
    throw ConfigError("ssl risk: empty labeled set requires beta = 0");

  RiskBreakdown rb;
  if (n > 0) {
    const Matrix p_l = predict_labeled(model, labeled.x);
    const Matrix p_lu = predict_unlabeled(model, labeled.x);
    const std::size_t q = p_l.cols;
    for (std::size_t i = 0; i < n; ++i) {
      const auto label = static_cast<std::size_t>(labeled.y[i]);
      rb.supervised += supervised_loss(spec, {p_l.row(i), q}, label);
      rb.supervised += supervised_loss(spec, {p_lu.row(i), q}, label);
      rb.unsupervised_labeled +=
          unsup_term(spec, {p_l.row(i), q}, {labeled.x.row(i), labeled.x.cols}, oracle);
    }
    rb.supervised /= static_cast<double>(n);
    rb.unsupervised_labeled /= static_cast<double>(n);
  }
  if (m > 0) {
    const Matrix p_u = predict_unlabeled(model, unlabeled_x);
    for (std::size_t i = 0; i < m; ++i)
      rb.unsupervised_unlabeled += unsup_term(spec, {p_u.row(i), p_u.cols},
                                              {unlabeled_x.row(i), unlabeled_x.cols},
                                              oracle);
    rb.unsupervised_unlabeled /= static_cast<double>(m);
  }
  const double nm = static_cast<double>(n + m);
  const double unsup = nm > 0.0 ? (static_cast<double>(n) * rb.unsupervised_labeled +
                                   static_cast<double>(m) * rb.unsupervised_unlabeled) /
                                      nm
                                : 0.0;
  rb.total = beta * rb.supervised + (1.0 - beta) * unsup;
  return rb;
}

}  // namespace detail

inline RiskBreakdown ssl_empirical_risk(const CsslModel& model, const LabeledSet& labeled,
                                        const Matrix& unlabeled_x, double beta,
                                        const LossSpec& spec) {
  return detail::ssl_risk_impl(model, labeled, unlabeled_x, beta, spec, nullptr);
}

// Oracle variant: the unsupervised slot evaluates the expected loss under the
// true posterior instead of the model's own estimate. Test-only hook for the
// unbiasedness property.
inline RiskBreakdown ssl_empirical_risk_oracle(const CsslModel& model,
                                               const LabeledSet& labeled,
                                               const Matrix& unlabeled_x, double beta,
                                               const LossSpec& spec,
                                               const PosteriorFn& p_true) {
  return detail::ssl_risk_impl(model, labeled, unlabeled_x, beta, spec, p_true);
}

struct ModelGrads {
  GradTape w_l, w_lu, w_gamma;
};

// Weights on the three batch-mean loss terms. Full-risk evaluation uses
// (beta, (1-beta)n/(n+m), (1-beta)m/(n+m)); minibatch steps keep the same
// weights so the step objective is an unbiased estimate of the full risk.
struct TermWeights {
  double supervised = 0.0;
  double unsup_labeled = 0.0;
  double unsup_unlabeled = 0.0;
};

// Batch objective value and exact gradients for all three blocks. Labeled
// rows go through both branches for the supervised term; the unsupervised
// term routes labeled rows through w_l and unlabeled rows through w_lu.
inline std::pair<double, ModelGrads> cssl_batch_grads(const CsslModel& model,
                                                      const Matrix& xl,
                                                      std::span<const int> yl,
                                                      const Matrix& xu,
                                                      const LossSpec& spec,
                                                      const TermWeights& tw) {
  ModelGrads grads{model.w_l.make_tape(), model.w_lu.make_tape(),
                   model.w_gamma.make_tape()};
  double value = 0.0;
  const std::size_t q = model.num_classes();

  auto head_pass = [&](const Matrix& h, const auto& fill_grad) {
    ForwardTrace head_trace;
    const Matrix p = forward(model.w_gamma, h, &head_trace);
    Matrix gp(p.rows, p.cols);
    fill_grad(p, gp);
    Matrix gh;
    grads.w_gamma.add(backward(model.w_gamma, head_trace, gp, &gh));
    return gh;
  };

  if (xl.rows > 0 && (tw.supervised != 0.0 || tw.unsup_labeled != 0.0)) {
    const double inv_b = 1.0 / static_cast<double>(xl.rows);
    ForwardTrace trace_l, trace_lu;
    const Matrix h_l = forward(model.w_l, xl, &trace_l);
    const Matrix h_lu = forward(model.w_lu, xl, &trace_lu);

    const Matrix gh_l = head_pass(h_l, [&](const Matrix& p, Matrix& gp) {
      for (std::size_t i = 0; i < p.rows; ++i) {
        const std::span<const double> row{p.row(i), q};
        const auto label = static_cast<std::size_t>(yl[i]);
        if (tw.supervised != 0.0) {
          value += tw.supervised * inv_b * supervised_loss(spec, row, label);
          const auto g = supervised_loss_grad(spec, row, label);
          for (std::size_t j = 0; j < q; ++j)
            gp(i, j) += tw.supervised * inv_b * g[j];
        }
        if (tw.unsup_labeled != 0.0) {
          value += tw.unsup_labeled * inv_b * unsupervised_loss(spec, row);
          const auto g = unsupervised_loss_grad(spec, row);
          for (std::size_t j = 0; j < q; ++j)
            gp(i, j) += tw.unsup_labeled * inv_b * g[j];
        }
      }
    });
    grads.w_l.add(backward(model.w_l, trace_l, gh_l));

    if (tw.supervised != 0.0) {
      const Matrix gh_lu = head_pass(h_lu, [&](const Matrix& p, Matrix& gp) {
        for (std::size_t i = 0; i < p.rows; ++i) {
          const std::span<const double> row{p.row(i), q};
          const auto label = static_cast<std::size_t>(yl[i]);
          value += tw.supervised * inv_b * supervised_loss(spec, row, label);
          const auto g = supervised_loss_grad(spec, row, label);
          for (std::size_t j = 0; j < q; ++j)
            gp(i, j) += tw.supervised * inv_b * g[j];
        }
      });
      grads.w_lu.add(backward(model.w_lu, trace_lu, gh_lu));
    }
  }

  if (xu.rows > 0 && tw.unsup_unlabeled != 0.0) {
    const double inv_b = 1.0 / static_cast<double>(xu.rows);
    ForwardTrace trace_u;
    const Matrix h_u = forward(model.w_lu, xu, &trace_u);
    const Matrix gh_u = head_pass(h_u, [&](const Matrix& p, Matrix& gp) {
      for (std::size_t i = 0; i < p.rows; ++i) {
        const std::span<const double> row{p.row(i), q};
        value += tw.unsup_unlabeled * inv_b * unsupervised_loss(spec, row);
        const auto g = unsupervised_loss_grad(spec, row);
        for (std::size_t j = 0; j < q; ++j) gp(i, j) += tw.unsup_unlabeled * inv_b * g[j];
      }
    });
    grads.w_lu.add(backward(model.w_lu, trace_u, gh_u));
  }

  return {value, grads};
}

// Single-chain objective (w_l then the head): supervised term on labeled
// rows plus an entropy penalty on unlabeled rows. Covers the
// labeled-only, entropy-minimization, and oracle-label baselines.
inline std::pair<double, ModelGrads> chain_batch_grads(const CsslModel& model,
                                                       const Matrix& xl,
                                                       std::span<const int> yl,
                                                       const Matrix& xu,
                                                       const LossSpec& spec,
                                                       double sup_weight,
                                                       double entropy_weight) {
  ModelGrads grads{model.w_l.make_tape(), model.w_lu.make_tape(),
                   model.w_gamma.make_tape()};
  double value = 0.0;
  const std::size_t q = model.num_classes();
  const LossSpec entropy_spec = LossSpec::log_loss();

  auto pass = [&](const Matrix& x, const auto& fill_grad) {
    ForwardTrace trace_feat, trace_head;
    const Matrix h = forward(model.w_l, x, &trace_feat);
    const Matrix p = forward(model.w_gamma, h, &trace_head);
    Matrix gp(p.rows, p.cols);
    fill_grad(p, gp);
    Matrix gh;
    grads.w_gamma.add(backward(model.w_gamma, trace_head, gp, &gh));
    grads.w_l.add(backward(model.w_l, trace_feat, gh));
  };

  if (xl.rows > 0 && sup_weight != 0.0) {
    const double inv_b = sup_weight / static_cast<double>(xl.rows);
    pass(xl, [&](const Matrix& p, Matrix& gp) {
      for (std::size_t i = 0; i < p.rows; ++i) {
        const std::span<const double> row{p.row(i), q};
        const auto label = static_cast<std::size_t>(yl[i]);
        value += inv_b * supervised_loss(spec, row, label);
        const auto g = supervised_loss_grad(spec, row, label);
        for (std::size_t j = 0; j < q; ++j) gp(i, j) += inv_b * g[j];
      }
    });
  }
  if (xu.rows > 0 && entropy_weight != 0.0) {
    const double inv_b = entropy_weight / static_cast<double>(xu.rows);
    pass(xu, [&](const Matrix& p, Matrix& gp) {
      for (std::size_t i = 0; i < p.rows; ++i) {
        const std::span<const double> row{p.row(i), q};
        value += inv_b * unsupervised_loss(entropy_spec, row);
        const auto g = unsupervised_loss_grad(entropy_spec, row);
        for (std::size_t j = 0; j < q; ++j) gp(i, j) += inv_b * g[j];
      }
    });
  }
  return {value, grads};
}

enum class TrainMode { Lower, EM, CSSL, Upper };
enum class EvalPath { LabeledBranch, UnlabeledBranch };
enum class Optimizer { Adam, Sgd };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Lower: return "lower";
    case TrainMode::EM: return "em";
    case TrainMode::CSSL: return "cssl";
    case TrainMode::Upper: return "upper";
  }
  return "?";
}

struct TrainConfig {
  TrainMode mode = TrainMode::CSSL;
  double beta = 0.02;
  LossSpec loss = LossSpec::log_loss();
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::Adam;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  double em_lambda = 1.0;      // entropy weight of the EM baseline
  // extra epochs with the unsupervised term active, appended after the
  // supervised `epochs`; self-training needs supervised predictions first so
  // entropy sharpens the label-anchored polarity rather than an arbitrary
  // initial split of the unlabeled clusters. Every mode gets the same
  // supervised budget; only these epochs differ between methods.
  std::size_t mixed_epochs = 30;
  // fraction of the supervised training set held out for epoch selection
  // (selection by held-out cross-entropy); 0 selects on the training fit
  double holdout_frac = 0.0;
  std::size_t hidden = 10;
  EvalPath eval_path = EvalPath::UnlabeledBranch;
  std::size_t history_every = 0;  // 0: record the final epoch only

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("TrainConfig: beta outside [0,1]");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("TrainConfig: lr must be positive");

    if (!(holdout_frac >= 0.0 && holdout_frac < 0.5))
      throw ConfigError("TrainConfig: holdout_frac outside [0,0.5)");
  }
};

inline double evaluate(const CsslModel& model, const LabeledSet& test, EvalPath path) {
  if (test.size() == 0) throw ConfigError("evaluate: empty test set");
  const Matrix p = path == EvalPath::LabeledBranch ? predict_labeled(model, test.x)
                                                   : predict_unlabeled(model, test.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.rows; ++i) {
    const double* row = p.row(i);
    std::size_t am = 0;
    for (std::size_t j = 1; j < p.cols; ++j)
      if (row[j] > row[am]) am = j;
    if (static_cast<int>(am) == test.y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(p.rows);
}

struct EpochStats {
  std::size_t epoch = 0;
  RiskBreakdown risk;
  double test_accuracy = 0.0;
};

struct TrainResult {
  CsslModel model;          // parameters of the selected epoch
  std::vector<EpochStats> history;
  std::size_t selected_epoch = 0;
};

// Mean supervised loss of the mode's own chain(s) over a labeled set; the
// epoch-selection criterion. When the unsupervised term dominates the
// objective it can eventually degrade the label fit (the degenerate
// sharpening failure); the checkpoint with the best label fit is the last
// healthy state along the trajectory, and for purely supervised modes the
// criterion is monotone so the final epoch wins.
inline double supervised_fit(const CsslModel& model, const LabeledSet& data,
                             const LossSpec& spec, bool both_branches) {
  if (data.size() == 0) return 0.0;
  double total = 0.0;
  const Matrix p_l = predict_labeled(model, data.x);
  for (std::size_t i = 0; i < data.size(); ++i)
    total += supervised_loss(spec, {p_l.row(i), p_l.cols},
                             static_cast<std::size_t>(data.y[i]));
  if (both_branches) {
    const Matrix p_lu = predict_unlabeled(model, data.x);
    for (std::size_t i = 0; i < data.size(); ++i)
      total += supervised_loss(spec, {p_lu.row(i), p_lu.cols},
                               static_cast<std::size_t>(data.y[i]));
  }
  return total / static_cast<double>(data.size());
}

namespace detail {

// Deterministic batch source: walks a shuffled index list, reshuffling on
// wrap-around.
class BatchCycler {
 public:
  BatchCycler(std::size_t count, std::uint64_t seed) : rng_(seed) {
    order_.resize(count);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (count > 0) rng_.shuffle(order_);
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> idx;
    if (order_.empty()) return idx;
    idx.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      idx.push_back(order_[pos_++]);
    }
    return idx;
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), x.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = x.row(idx[i]);
    std::copy(src, src + x.cols, out.row(i));
  }
  return out;
}

inline std::size_t infer_num_classes(const Dataset& ds) {
  int mx = 1;
  for (int y : ds.labeled.y) mx = std::max(mx, y);
  for (int y : ds.test.y) mx = std::max(mx, y);
  for (int y : ds.unlabeled_y_hidden) mx = std::max(mx, y);
  return static_cast<std::size_t>(mx) + 1;
}

}  // namespace detail

inline TrainResult train(const TrainConfig& config, const Dataset& ds) {
  config.validate();
  const std::size_t n = ds.n();
  const std::size_t m = ds.m();
  const bool is_cssl = config.mode == TrainMode::CSSL;
  if (n == 0 && !(is_cssl && config.beta == 0.0))
    throw ConfigError("train: no labeled data");
  if (config.mode == TrainMode::Upper && ds.unlabeled_y_hidden.size() != m)
    throw ConfigError("train: upper-bound mode needs the held-back unlabeled labels");

  const std::size_t d = n > 0 ? ds.labeled.x.cols : ds.unlabeled_x.cols;
  const std::size_t q = detail::infer_num_classes(ds);
  require_shape(q >= 2, "train: need at least two classes");

  Rng init_rng(derive_seed(config.seed, {0xC0DE}));
  CsslModel model = CsslModel::init(d, config.hidden, q, init_rng);
  // symmetric head start: predictions begin exactly uniform, so the labeled
  // data picks the class polarity before the entropy term can amplify a
  // random initial assignment of the unlabeled clusters
  for (auto& layer : model.w_gamma.layers)
    std::fill(layer.weight.data.begin(), layer.weight.data.end(), 0.0);

  // oracle-label mode trains on labeled + unlabeled with their true labels
  LabeledSet upper_set;
  if (config.mode == TrainMode::Upper) {
    upper_set.x = Matrix(n + m, d);
    upper_set.y.resize(n + m);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(ds.labeled.x.row(i), ds.labeled.x.row(i) + d, upper_set.x.row(i));
      upper_set.y[i] = ds.labeled.y[i];
    }
    for (std::size_t j = 0; j < m; ++j) {
      std::copy(ds.unlabeled_x.row(j), ds.unlabeled_x.row(j) + d,
                upper_set.x.row(n + j));
      upper_set.y[n + j] = ds.unlabeled_y_hidden[j];
    }
  }
  const LabeledSet& full_sup_set =
      config.mode == TrainMode::Upper ? upper_set : ds.labeled;

  // optional held-out slice of the supervised set, used only to pick the
  // best epoch; the remainder trains
  LabeledSet sup_set, holdout;
  {
    const std::size_t total = full_sup_set.size();
    const std::size_t h = static_cast<std::size_t>(config.holdout_frac *
                                                   static_cast<double>(total));
    if (h == 0) {
      sup_set = full_sup_set;
    } else {
      std::vector<std::size_t> order(total);
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng holdout_rng(derive_seed(config.seed, {0x401D}));
      holdout_rng.shuffle(order);
      holdout.x = Matrix(h, d);
      holdout.y.resize(h);
      sup_set.x = Matrix(total - h, d);
      sup_set.y.resize(total - h);
      for (std::size_t i = 0; i < total; ++i) {
        const std::size_t src = order[i];
        if (i < h) {
          std::copy(full_sup_set.x.row(src), full_sup_set.x.row(src) + d,
                    holdout.x.row(i));
          holdout.y[i] = full_sup_set.y[src];
        } else {
          std::copy(full_sup_set.x.row(src), full_sup_set.x.row(src) + d,
                    sup_set.x.row(i - h));
          sup_set.y[i - h] = full_sup_set.y[src];
        }
      }
    }
  }

  detail::BatchCycler labeled_cycler(sup_set.size(), derive_seed(config.seed, {0xBA7C}));
  detail::BatchCycler unlabeled_cycler(m, derive_seed(config.seed, {0xBA7C, 2}));

  const std::size_t primary =
      sup_set.size() > 0 ? sup_set.size() : std::max<std::size_t>(m, 1);
  const std::size_t steps_per_epoch =
      (primary + config.batch_size - 1) / config.batch_size;

  Adam opt_l, opt_lu, opt_gamma;
  opt_l.lr = opt_lu.lr = opt_gamma.lr = config.lr;
  opt_l.weight_decay = opt_lu.weight_decay = opt_gamma.weight_decay =
      config.weight_decay;
  const bool use_sgd = config.optimizer == Optimizer::Sgd;

  TermWeights cssl_weights;
  cssl_weights.supervised = config.beta;
  if (n + m > 0) {
    cssl_weights.unsup_labeled =
        (1.0 - config.beta) * static_cast<double>(n) / static_cast<double>(n + m);
    cssl_weights.unsup_unlabeled =
        (1.0 - config.beta) * static_cast<double>(m) / static_cast<double>(n + m);
  }

  TrainResult result;
  const Matrix empty;

  auto record = [&](std::size_t epoch) {
    EpochStats st;
    st.epoch = epoch;
    switch (config.mode) {
      case TrainMode::CSSL:
        st.risk = ssl_empirical_risk(model, ds.labeled, ds.unlabeled_x, config.beta,
                                     config.loss);
        break;
      case TrainMode::EM: {
        const double v_sup =
            chain_batch_grads(model, sup_set.x, sup_set.y, empty, config.loss, 1.0, 0.0)
                .first;
        const double v_ent =
            chain_batch_grads(model, empty, {}, ds.unlabeled_x, config.loss, 0.0, 1.0)
                .first;
        st.risk.supervised = v_sup;
        st.risk.unsupervised_unlabeled = v_ent;
        st.risk.total = v_sup + config.em_lambda * v_ent;
        break;
      }
      case TrainMode::Lower:
      case TrainMode::Upper:
        st.risk.supervised =
            chain_batch_grads(model, sup_set.x, sup_set.y, empty, config.loss, 1.0, 0.0)
                .first;
        st.risk.total = st.risk.supervised;
        break;
    }
    // single-chain modes train w_l; until the final branch sync only the
    // labeled path reflects the trained weights
    const EvalPath path = is_cssl ? config.eval_path : EvalPath::LabeledBranch;
    if (ds.test.size() > 0) st.test_accuracy = evaluate(model, ds.test, path);
    result.history.push_back(st);
  };

  const bool uses_unlabeled =
      (config.mode == TrainMode::CSSL || config.mode == TrainMode::EM) && m > 0;
  const std::size_t warmup_epochs = sup_set.size() > 0 ? config.epochs : 0;
  const std::size_t total_epochs =
      warmup_epochs + (uses_unlabeled ? config.mixed_epochs : 0);

  CsslModel best_model = model;
  double best_fit = kInfinity;

  // entropy of the mean prediction over the unlabeled pool; collapsing
  // toward one class (the degenerate sharpening failure) drives it to zero
  auto marginal_entropy = [&]() {
    if (m == 0) return 0.0;
    const Matrix p = config.mode == TrainMode::CSSL
                         ? predict_unlabeled(model, ds.unlabeled_x)
                         : predict_labeled(model, ds.unlabeled_x);
    std::vector<double> mean(p.cols, 0.0);
    for (std::size_t i = 0; i < p.rows; ++i)
      for (std::size_t j = 0; j < p.cols; ++j) mean[j] += p(i, j);
    for (double& v : mean) v /= static_cast<double>(p.rows);
    return entropy_discrete(mean);
  };
  double entropy_ref = -1.0;  // set when the unsupervised term joins

  for (std::size_t epoch = 0; epoch < total_epochs; ++epoch) {
    const bool warmup = epoch < warmup_epochs;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const auto lab_idx = labeled_cycler.next(
          std::min<std::size_t>(config.batch_size, std::max<std::size_t>(sup_set.size(), 1)));
      const Matrix xl = lab_idx.empty() ? Matrix() : detail::gather_rows(sup_set.x, lab_idx);
      std::vector<int> yl(lab_idx.size());
      for (std::size_t i = 0; i < lab_idx.size(); ++i) yl[i] = sup_set.y[lab_idx[i]];

      double value = 0.0;
      ModelGrads grads;
      switch (config.mode) {
        case TrainMode::CSSL: {
          if (warmup) {
            std::tie(value, grads) =
                cssl_batch_grads(model, xl, yl, empty, config.loss, {1.0, 0.0, 0.0});
            break;
          }
          const auto unl_idx = unlabeled_cycler.next(
              std::min<std::size_t>(config.batch_size, std::max<std::size_t>(m, 1)));
          const Matrix xu =
              unl_idx.empty() ? Matrix() : detail::gather_rows(ds.unlabeled_x, unl_idx);
          std::tie(value, grads) =
              cssl_batch_grads(model, xl, yl, xu, config.loss, cssl_weights);
          break;
        }
        case TrainMode::EM: {
          if (warmup) {
            std::tie(value, grads) =
                chain_batch_grads(model, xl, yl, empty, config.loss, 1.0, 0.0);
            break;
          }
          const auto unl_idx = unlabeled_cycler.next(
              std::min<std::size_t>(config.batch_size, std::max<std::size_t>(m, 1)));
          const Matrix xu =
              unl_idx.empty() ? Matrix() : detail::gather_rows(ds.unlabeled_x, unl_idx);
          std::tie(value, grads) =
              chain_batch_grads(model, xl, yl, xu, config.loss, 1.0, config.em_lambda);
          break;
        }
        case TrainMode::Lower:
        case TrainMode::Upper:
          std::tie(value, grads) =
              chain_batch_grads(model, xl, yl, empty, config.loss, 1.0, 0.0);
          break;
      }
      if (!std::isfinite(value))
        throw StateError("train: non-finite loss at epoch " + std::to_string(epoch) +
                         ", step " + std::to_string(step));

      if (use_sgd) {
        sgd_step(model.w_gamma, grads.w_gamma, config.lr, config.weight_decay);
        sgd_step(model.w_l, grads.w_l, config.lr, config.weight_decay);
        if (is_cssl) sgd_step(model.w_lu, grads.w_lu, config.lr, config.weight_decay);
      } else {
        opt_gamma.step(model.w_gamma, grads.w_gamma);
        opt_l.step(model.w_l, grads.w_l);
        if (is_cssl) opt_lu.step(model.w_lu, grads.w_lu);
      }
    }
    const bool mixed_active = epoch >= warmup_epochs && uses_unlabeled;
    bool admissible = true;
    if (mixed_active) {
      if (entropy_ref < 0.0) entropy_ref = marginal_entropy();
      // checkpoints where the unlabeled prediction marginal has begun to
      // collapse are not eligible for selection
      admissible = marginal_entropy() >= 0.75 * entropy_ref;
    }

    const LabeledSet& selector = holdout.size() > 0 ? holdout : sup_set;
    if (selector.size() == 0) {
      best_model = model;  // nothing to select on; keep the latest state
      result.selected_epoch = epoch + 1;
    } else if (admissible) {
      const double fit = supervised_fit(model, selector, config.loss, is_cssl);
      if (fit < best_fit) {
        best_fit = fit;
        best_model = model;
        result.selected_epoch = epoch + 1;
      }
    }
    if (config.history_every > 0 && (epoch + 1) % config.history_every == 0 &&
        epoch + 1 != total_epochs)
      record(epoch + 1);
  }

  model = std::move(best_model);
  // single-chain modes leave the trained chain on both branches so either
  // evaluation path sees the same predictor
  if (!is_cssl) model.w_lu = model.w_l;
  record(total_epochs);
  result.model = std::move(model);
  return result;
}

inline double final_accuracy(const TrainResult& r) {
  return r.history.back().test_accuracy;
}

// Grid search by k-fold validation accuracy on the labeled set; ties break
// toward the smaller value.
inline double cross_validate(std::span<const double> grid, std::size_t folds,
                             const TrainConfig& base, const Dataset& ds,
                             const std::function<TrainConfig(TrainConfig, double)>& apply) {
  if (grid.empty()) throw ConfigError("cross_validate: empty grid");
  if (folds < 2) throw ConfigError("cross_validate: need at least two folds");
  const std::size_t n = ds.n();
  if (n < folds) throw ConfigError("cross_validate: fewer labeled points than folds");

  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(base.seed, {0xF01D}));
  rng.shuffle(order);

  double best_value = sorted.front();
  double best_acc = -1.0;
  for (double value : sorted) {
    double acc_sum = 0.0;
    for (std::size_t fold = 0; fold < folds; ++fold) {
      const std::size_t lo = fold * n / folds;
      const std::size_t hi = (fold + 1) * n / folds;
      Dataset sub;
      sub.params_labeled = ds.params_labeled;
      sub.params_unlabeled = ds.params_unlabeled;
      sub.unlabeled_x = ds.unlabeled_x;
      sub.unlabeled_y_hidden = ds.unlabeled_y_hidden;
      sub.labeled.x = Matrix(n - (hi - lo), ds.labeled.x.cols);
      sub.labeled.y.reserve(n - (hi - lo));
      sub.test.x = Matrix(hi - lo, ds.labeled.x.cols);
      std::size_t ti = 0, vi = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = order[i];
        if (i >= lo && i < hi) {
          std::copy(ds.labeled.x.row(src), ds.labeled.x.row(src) + ds.labeled.x.cols,
                    sub.test.x.row(vi++));
          sub.test.y.push_back(ds.labeled.y[src]);
        } else {
          std::copy(ds.labeled.x.row(src), ds.labeled.x.row(src) + ds.labeled.x.cols,
                    sub.labeled.x.row(ti++));
          sub.labeled.y.push_back(ds.labeled.y[src]);
        }
      }
      TrainConfig cfg = apply(base, value);
      cfg.seed = derive_seed(base.seed, {0xF01D, fold + 1});
      acc_sum += final_accuracy(train(cfg, sub));
    }
    const double mean_acc = acc_sum / static_cast<double>(folds);
    if (mean_acc > best_acc) {
      best_acc = mean_acc;
      best_value = value;
    }
  }
  return best_value;
}

inline double cross_validate_beta(std::span<const double> grid, std::size_t folds,
                                  const TrainConfig& base, const Dataset& ds) {
  return cross_validate(grid, folds, base, ds, [](TrainConfig c, double beta) {
    c.mode = TrainMode::CSSL;
    c.beta = beta;
    return c;
  });
}

inline double cross_validate_em_lambda(std::span<const double> grid, std::size_t folds,
                                       const TrainConfig& base, const Dataset& ds) {
  return cross_validate(grid, folds, base, ds, [](TrainConfig c, double lam) {
    c.mode = TrainMode::EM;
    c.em_lambda = lam;
    return c;
  });
}

// --- checkpoint io ------------------------------------------------------
//
// Flat little-endian binary: "CSSL" magic, u32 version, then for each of the
// three blocks (w_l, w_lu, w_gamma in that order) a u32 layer count and per
// layer u32 in, u32 out, u8 activation; then all parameters as f64, weights
// row-major then bias, layer by layer, block by block.

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw StateError("checkpoint: truncated reading " + what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& in, const std::string& what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw StateError("checkpoint: truncated reading " + what);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const CsslModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("checkpoint: cannot open " + path + " for writing");
  out.write("CSSL", 4);
  detail::write_u32(out, 1);
  const ParamBlock* blocks[3] = {&model.w_l, &model.w_lu, &model.w_gamma};
  for (const ParamBlock* b : blocks) {
    detail::write_u32(out, static_cast<std::uint32_t>(b->layers.size()));
    for (const Layer& l : b->layers) {
      detail::write_u32(out, static_cast<std::uint32_t>(l.in_dim()));
      detail::write_u32(out, static_cast<std::uint32_t>(l.out_dim()));
      out.put(static_cast<char>(l.act));
    }
  }
  for (const ParamBlock* b : blocks)
    for (const Layer& l : b->layers) {
      for (double v : l.weight.data) detail::write_f64(out, v);
      for (double v : l.bias) detail::write_f64(out, v);
    }
  if (!out) throw StateError("checkpoint: write failed for " + path);
}

inline CsslModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("checkpoint: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "CSSL")
    throw StateError("checkpoint: bad magic in " + path);
  const std::uint32_t version = detail::read_u32(in, "version");
  if (version != 1) throw StateError("checkpoint: unsupported version");
  CsslModel model;
  ParamBlock* blocks[3] = {&model.w_l, &model.w_lu, &model.w_gamma};
  for (ParamBlock* b : blocks) {
    const std::uint32_t layers = detail::read_u32(in, "layer count");
    for (std::uint32_t i = 0; i < layers; ++i) {
      Layer l;
      const std::uint32_t ind = detail::read_u32(in, "in dim");
      const std::uint32_t outd = detail::read_u32(in, "out dim");
      const int act = in.get();
      if (act < 0 || act > 2) throw StateError("checkpoint: bad activation code");
      l.weight = Matrix(ind, outd);
      l.bias.assign(outd, 0.0);
      l.act = static_cast<Activation>(act);
      b->layers.push_back(std::move(l));
    }
    b->validate();
  }
  for (ParamBlock* b : blocks)
    for (Layer& l : b->layers) {
      for (double& v : l.weight.data) v = detail::read_f64(in, "weights");
      for (double& v : l.bias) v = detail::read_f64(in, "bias");
    }
  return model;
}

}  // namespace cssl
