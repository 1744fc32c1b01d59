#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cssl/info.hpp"
#include "cssl/matrix.hpp"
#include "cssl/rng.hpp"

namespace cssl {

// Synthetic binary-classification generator with a cause -> label -> effect
// structure: the first 30 features (cause block) are a two-component
// Gaussian mixture at +-a1, the label is a logistic coin on the cause sum,
// and the last 20 features (effect block) sit at +-a2 depending on the
// label. Shifting a1/s1 changes only the cause marginal, never the
// label-given-features conditional.
struct SynthParams {
  double a1 = 0.01;  // cause mixture mean magnitude
  double s1 = 0.05;  // cause isotropic variance
  double a2 = 0.01;  // effect offset magnitude
  double s2 = 2.0;   // effect noise variance

  static constexpr std::size_t cause_dim = 30;
  static constexpr std::size_t effect_dim = 20;
  static constexpr std::size_t dim = cause_dim + effect_dim;

  void validate() const {
    if (!(s1 > 0.0) || !(s2 > 0.0))
      throw ConfigError("SynthParams: variances must be positive");
  }
};

struct LabeledSet {
  Matrix x;
  std::vector<int> y;

  std::size_t size() const { return x.rows; }
};

// One experiment dataset: labeled pool, unlabeled pool (true labels kept
// aside for upper-bound training only), and a test set drawn from the
// unlabeled-side distribution.
struct Dataset {
  LabeledSet labeled;
  Matrix unlabeled_x;
  std::vector<int> unlabeled_y_hidden;
  LabeledSet test;
  std::optional<SynthParams> params_labeled;
  std::optional<SynthParams> params_unlabeled;
  std::uint64_t seed = 0;

  std::size_t n() const { return labeled.size(); }
  std::size_t m() const { return unlabeled_x.rows; }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline LabeledSet gen_synthetic(const SynthParams& params, std::size_t count,
                                std::uint64_t seed) {
  params.validate();
  if (count < 1) throw ConfigError("gen_synthetic: count must be >= 1");
  Rng rng(seed);
  LabeledSet out;
  out.x = Matrix(count, SynthParams::dim);
  out.y.resize(count);
  const double sd1 = std::sqrt(params.s1);
  const double sd2 = std::sqrt(params.s2);
  for (std::size_t i = 0; i < count; ++i) {
    double* row = out.x.row(i);
    const double center = rng.uniform() < 0.5 ? params.a1 : -params.a1;
    double cause_sum = 0.0;
    for (std::size_t j = 0; j < SynthParams::cause_dim; ++j) {
      row[j] = center + sd1 * rng.normal();
      cause_sum += row[j];
    }
    const int label = rng.uniform() < sigmoid(cause_sum) ? 1 : 0;
    out.y[i] = label;
    const double offset = label == 1 ? params.a2 : -params.a2;
    for (std::size_t j = 0; j < SynthParams::effect_dim; ++j)
      row[SynthParams::cause_dim + j] = offset + sd2 * rng.normal();
  }
  return out;
}

// Exact P(Y | x) of the generator. Bayes over the effect block:
//   P(y=1 | x) prop. to sigmoid(sum x_C) * N(x_E; +a2*1, s2 I),
// normalized in log domain. Depends on a2, s2 and the cause sum only; the
// cause-marginal parameters a1, s1 drop out.
inline std::array<double, 2> true_posterior(std::span<const double> x,
                                            const SynthParams& params) {
  params.validate();
  if (x.size() != SynthParams::dim) throw ConfigError("true_posterior: need 50 features");
  double cause_sum = 0.0;
  for (std::size_t j = 0; j < SynthParams::cause_dim; ++j) cause_sum += x[j];

  double sq_plus = 0.0, sq_minus = 0.0;
  for (std::size_t j = 0; j < SynthParams::effect_dim; ++j) {
    const double v = x[SynthParams::cause_dim + j];
    sq_plus += (v - params.a2) * (v - params.a2);
    sq_minus += (v + params.a2) * (v + params.a2);
  }
  // log p(y|x_C): sigmoid in log domain, log-sum-exp style
  const double log_p1 = -std::log1p(std::exp(-cause_sum));
  const double log_p0 = -std::log1p(std::exp(cause_sum));
  const double l1 = log_p1 - sq_plus / (2.0 * params.s2);
  const double l0 = log_p0 - sq_minus / (2.0 * params.s2);
  const double mx = std::max(l0, l1);
  const double z = std::exp(l0 - mx) + std::exp(l1 - mx);
  return {std::exp(l0 - mx) / z, std::exp(l1 - mx) / z};
}

inline Dataset make_synth_dataset(const SynthParams& labeled_params,
                                  const SynthParams& unlabeled_params, std::size_t n,
                                  std::size_t m, std::size_t test_count,
                                  std::uint64_t seed) {
  Dataset ds;
  ds.params_labeled = labeled_params;
  ds.params_unlabeled = unlabeled_params;
  ds.seed = seed;
  if (n > 0) ds.labeled = gen_synthetic(labeled_params, n, derive_seed(seed, {1}));
  if (m > 0) {
    LabeledSet u = gen_synthetic(unlabeled_params, m, derive_seed(seed, {2}));
    ds.unlabeled_x = std::move(u.x);
    ds.unlabeled_y_hidden = std::move(u.y);
  }
  if (test_count > 0)
    ds.test = gen_synthetic(unlabeled_params, test_count, derive_seed(seed, {3}));
  return ds;
}

// Marginal of the cause block as a two-component mixture. When two settings
// share a2/s2 (the covariate-shift experiments only move a1), the
// feature-shift KL equals the KL between their cause mixtures, since the
// effect block's conditional given the cause block cancels in the ratio.
inline GaussianMixture cause_mixture(const SynthParams& params) {
  params.validate();
  GaussianMixture gm;
  gm.components.resize(2);
  gm.components[0].weight = 0.5;
  gm.components[0].mean.assign(SynthParams::cause_dim, params.a1);
  gm.components[0].variance = params.s1;
  gm.components[1].weight = 0.5;
  gm.components[1].mean.assign(SynthParams::cause_dim, -params.a1);
  gm.components[1].variance = params.s1;
  return gm;
}

inline McEstimate mc_kl_gaussian_mixture(const SynthParams& params_l,
                                         const SynthParams& params_u,
                                         std::size_t samples, std::uint64_t seed) {
  if (params_l.a2 != params_u.a2 || params_l.s2 != params_u.s2)
    throw ConfigError("mc_kl(SynthParams): effect channels must match");
  return mc_kl_gaussian_mixture(cause_mixture(params_l), cause_mixture(params_u),
                                samples, seed);
}

}  // namespace cssl
