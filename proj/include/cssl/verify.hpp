#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "cssl/bounds.hpp"
#include "cssl/datagen.hpp"
#include "cssl/losses.hpp"
#include "cssl/model.hpp"
#include "cssl/nn.hpp"
#include "cssl/toyworld.hpp"

namespace cssl {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Unsupervised log-loss must coincide with the Shannon entropy of the
// prediction, and the pseudo-label form with -log of the top probability.
inline CheckResult check_reduction_identities(std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  double worst_entropy = 0.0;
  double worst_pseudo = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t q = 2 + rng.bounded(5);
    std::vector<double> p(q);
    double z = 0.0;
    for (double& v : p) {
      v = -std::log(1.0 - rng.uniform());
      z += v;
    }
    for (double& v : p) v /= z;

    double entropy = 0.0;  // direct summation, independent of the loss code
    for (double v : p)
      if (v > 0.0) entropy -= v * std::log(v);
    worst_entropy = std::max(
        worst_entropy,
        std::abs(unsupervised_loss(LossSpec::log_loss(), p) - entropy));

    double mx = p[0];
    for (double v : p) mx = std::max(mx, v);
    worst_pseudo = std::max(
        worst_pseudo,
        std::abs(unsupervised_loss(LossSpec::pseudo_label(), p) - (-std::log(mx))));
  }
  CheckResult r;
  r.name = "reduction identities";
  r.pass = worst_entropy <= 1e-12 && worst_pseudo == 0.0;
  std::ostringstream os;
  os << "max |l_u - H| = " << worst_entropy << ", max pseudo-label dev = "
     << worst_pseudo << " over " << samples << " distributions";
  r.detail = os.str();
  return r;
}

namespace detail {

inline LossSpec random_loss_spec(Rng& rng) {
  switch (rng.bounded(5)) {
    case 0: return LossSpec::log_loss();
    case 1: return LossSpec::squared_log_loss();
    case 2: return LossSpec::pseudo_label();
    case 3: return LossSpec::alpha_loss(1.5 + rng.uniform() * 1.5);
    default: return LossSpec::alpha_loss(0.6 + rng.uniform() * 0.3);
  }
}

}  // namespace detail

// Reverse-mode gradients against the central-difference oracle on random
// (architecture, loss family, batch) triples.
inline CheckResult check_gradient_audit(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t in = 2 + rng.bounded(4);
    const std::size_t q = 2 + rng.bounded(3);
    std::vector<std::size_t> dims{in};
    std::vector<Activation> acts;
    const std::size_t hidden_layers = rng.bounded(3);
    for (std::size_t l = 0; l < hidden_layers; ++l) {
      dims.push_back(2 + rng.bounded(4));
      acts.push_back(rng.bounded(2) == 0 ? Activation::ReLU : Activation::Identity);
    }
    dims.push_back(q);
    acts.push_back(Activation::Softmax);
    ParamBlock block = make_block(dims, acts, rng);
    // generic biases keep pre-activations off the exact ReLU kink, where the
    // central-difference oracle itself is invalid
    for (auto& layer : block.layers)
      for (double& b : layer.bias) b = rng.uniform(-0.5, 0.5);

    const std::size_t batch = 1 + rng.bounded(6);
    Matrix x(batch, in);
    for (double& v : x.data) v = rng.normal();
    std::vector<std::size_t> labels(batch);
    for (auto& y : labels) y = rng.bounded(q);
    const LossSpec spec = detail::random_loss_spec(rng);

    // scalar objective: batch mean of supervised + unsupervised loss
    auto loss_fn = [&](const ParamBlock& b) {
      ForwardTrace t;
      const Matrix p = forward(b, x, &t);
      double total = 0.0;
      for (std::size_t i = 0; i < batch; ++i) {
        const std::span<const double> row{p.row(i), q};
        total += supervised_loss(spec, row, labels[i]);
        total += unsupervised_loss(spec, row);
      }
      return total / static_cast<double>(batch);
    };

    ForwardTrace trace;
    const Matrix p = forward(block, x, &trace);
    Matrix upstream(batch, q);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::span<const double> row{p.row(i), q};
      const auto gs = supervised_loss_grad(spec, row, labels[i]);
      const auto gu = unsupervised_loss_grad(spec, row);
      for (std::size_t j = 0; j < q; ++j)
        upstream(i, j) = (gs[j] + gu[j]) / static_cast<double>(batch);
    }
    const GradTape exact = backward(block, trace, upstream);
    const GradTape fd = finite_diff_grad(loss_fn, block, 1e-5);

    double max_diff = 0.0, max_mag = 0.0;
    for (std::size_t l = 0; l < exact.dweight.size(); ++l) {
      for (std::size_t i = 0; i < exact.dweight[l].data.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(exact.dweight[l].data[i] -
                                               fd.dweight[l].data[i]));
        max_mag = std::max(max_mag, std::abs(fd.dweight[l].data[i]));
      }
      for (std::size_t i = 0; i < exact.dbias[l].size(); ++i) {
        max_diff = std::max(max_diff, std::abs(exact.dbias[l][i] - fd.dbias[l][i]));
        max_mag = std::max(max_mag, std::abs(fd.dbias[l][i]));
      }
    }
    worst = std::max(worst, max_diff / std::max(1.0, max_mag));
  }
  CheckResult r;
  r.name = "gradient audit";
  r.pass = worst <= 1e-4;
  std::ostringstream os;
  os << "max relative error " << worst << " over " << trials << " random nets";
  r.detail = os.str();
  return r;
}

// With the true-conditional loss in the unsupervised slot, the mixed
// empirical risk is an unbiased estimate of the population risk; checked by
// Monte Carlo over fresh datasets from a finite world without shift.
inline CheckResult check_unbiasedness(std::size_t datasets, std::uint64_t seed) {
  ToyWorld world = random_toy_world(derive_seed(seed, {0xAB}), 4, 4);
  world.mu_u = world.mu_l;  // no covariate shift
  const std::size_t w = 1 % world.w_size;
  const double beta = 0.37;
  const std::size_t n = 3, m = 4;
  const double population = world.population_risk(w);

  Rng rng(seed);
  auto sample_x = [&](const DiscreteDist& mu) {
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t x = 0; x < mu.size(); ++x) {
      cum += mu.p[x];
      if (u < cum) return x;
    }
    return mu.size() - 1;
  };

  double sum = 0.0, sumsq = 0.0;
  SampleTuple t;
  for (std::size_t d = 0; d < datasets; ++d) {
    t.xl.clear();
    t.yl.clear();
    t.xu.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t x = sample_x(world.mu_l);
      t.xl.push_back(x);
      t.yl.push_back(rng.uniform() < world.p_y1_given_x[x] ? 1 : 0);
    }
    for (std::size_t j = 0; j < m; ++j) t.xu.push_back(sample_x(world.mu_u));
    const double risk = toy_ssl_empirical_risk(world, t, w, beta, /*use_cond=*/true);
    sum += risk;
    sumsq += risk * risk;
  }
  const double mean = sum / static_cast<double>(datasets);
  const double var =
      std::max(0.0, sumsq / static_cast<double>(datasets) - mean * mean);
  const double se = std::sqrt(var / static_cast<double>(datasets));

  CheckResult r;
  r.name = "unbiasedness";
  r.pass = std::abs(mean - population) <= 3.0 * se;
  std::ostringstream os;
  os << "|mc mean - population| = " << std::abs(mean - population) << ", 3*se = "
     << 3.0 * se << " (" << datasets << " datasets)";
  r.detail = os.str();
  return r;
}

struct BoundValidityStats {
  std::size_t worlds = 0;
  std::size_t violations = 0;
  double max_appendix_b_gap = 0.0;
  double min_slack = kInfinity;  // tightest bound-minus-gen margin seen
};

inline BoundValidityStats bound_validity_sweep(std::size_t worlds, std::uint64_t seed) {
  BoundValidityStats stats;
  Rng rng(seed);
  for (std::size_t wi = 0; wi < worlds; ++wi) {
    const ToyWorld world = random_toy_world(derive_seed(seed, {wi}), 4, 8);
    const std::size_t n = 1 + rng.bounded(3);
    const std::size_t m = rng.bounded(4);
    const double beta_choices[] = {0.0, 0.3, 0.7, 1.0, rng.uniform()};
    const double beta = beta_choices[rng.bounded(5)];

    ToyAlgorithm alg;
    switch (rng.bounded(4)) {
      case 0: alg = constant_algorithm(); break;
      case 1: alg = erm_algorithm(beta); break;
      case 2: alg = gibbs_algorithm(beta, 0.05 + rng.uniform()); break;
      default: alg = random_algorithm(derive_seed(seed, {wi, 99})); break;
    }

    const ToyEnumeration e = toy_enumerate(world, n, m, beta, alg);
    const double tol = 1e-12;
    bool ok = true;
    ok &= std::abs(e.gen_cond) <= e.thm1.total + tol;
    ok &= std::abs(e.gen_unsup) <= e.prop2.total + tol;
    ok &= std::abs(e.gen_unsup) <= e.cor4.total + tol;
    ok &= std::abs(e.delta_ssl) <=
          delta_bound_kl(world.loss_bound / 2.0, e.kl_cond) + tol;
    ok &= std::abs(e.delta_ssl) <= delta_bound_tv(world.loss_bound, e.tv_cond) + tol;
    ok &= e.mi_wxy >= 0.0 && e.mi_wxl >= 0.0 && e.mi_wxu >= 0.0;

    if (std::isinf(e.appendix_b_lhs) || std::isinf(e.appendix_b_rhs)) {
      ok &= std::isinf(e.appendix_b_lhs) == std::isinf(e.appendix_b_rhs);
    } else {
      const double gap = std::abs(e.appendix_b_lhs - e.appendix_b_rhs);
      stats.max_appendix_b_gap = std::max(stats.max_appendix_b_gap, gap);
      ok &= gap <= 1e-10;
    }

    if (!std::isinf(e.thm1.total))
      stats.min_slack = std::min(stats.min_slack, e.thm1.total - std::abs(e.gen_cond));
    if (!std::isinf(e.prop2.total))
      stats.min_slack = std::min(stats.min_slack, e.prop2.total - std::abs(e.gen_unsup));
    stats.min_slack = std::min(stats.min_slack, e.cor4.total - std::abs(e.gen_unsup));

    if (!ok) ++stats.violations;
    ++stats.worlds;
  }
  return stats;
}

inline CheckResult check_bound_validity(std::size_t worlds, std::uint64_t seed) {
  const BoundValidityStats stats = bound_validity_sweep(worlds, seed);
  CheckResult r;
  r.name = "bound validity";
  r.pass = stats.violations == 0;
  std::ostringstream os;
  os << stats.worlds << " worlds, " << stats.violations << " violations, max identity gap "
     << stats.max_appendix_b_gap << ", min slack " << stats.min_slack;
  r.detail = os.str();
  return r;
}

// The generator's exact posterior may depend only on the effect channel and
// the cause sum, never on the cause-marginal parameters.
inline CheckResult check_posterior_invariance(std::size_t points, std::uint64_t seed) {
  Rng rng(seed);
  const double a1_values[] = {0.01, 0.03, 0.3, 0.8};
  double worst = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    std::vector<double> x(SynthParams::dim);
    for (double& v : x) v = rng.normal(0.0, 2.0);
    SynthParams params{a1_values[0], 0.05, 0.01, 2.0};
    const auto base = true_posterior(x, params);
    for (double a1 : a1_values) {
      params.a1 = a1;
      const auto p = true_posterior(x, params);
      worst = std::max(worst, std::abs(p[0] - base[0]));
      worst = std::max(worst, std::abs(p[1] - base[1]));
    }
  }
  CheckResult r;
  r.name = "posterior invariance";
  r.pass = worst <= 1e-12;
  std::ostringstream os;
  os << "max deviation " << worst << " across a1 in {0.01,0.03,0.3,0.8}, " << points
     << " points";
  r.detail = os.str();
  return r;
}

inline std::vector<CheckResult> run_verify_suite(std::uint64_t seed) {
  std::vector<CheckResult> results;
  results.push_back(check_reduction_identities(10000, derive_seed(seed, {1})));
  results.push_back(check_gradient_audit(100, derive_seed(seed, {2})));
  results.push_back(check_unbiasedness(100000, derive_seed(seed, {3})));
  results.push_back(check_bound_validity(200, derive_seed(seed, {4})));
  results.push_back(check_posterior_invariance(1000, derive_seed(seed, {5})));
  return results;
}

}  // namespace cssl
