#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "cssl/bounds.hpp"
#include "cssl/info.hpp"
#include "cssl/matrix.hpp"
#include "cssl/rng.hpp"

namespace cssl {

// A fully finite learning problem: feature space, binary labels, hypothesis
// space, and a loss table. Small enough that every sample tuple, the
// algorithm's posterior over hypotheses, all mutual informations, and the
// exact generalization error can be enumerated. This is the ground truth the
// bound formulas are checked against.
struct ToyWorld {
  std::size_t x_size = 2;
  std::size_t w_size = 2;
  DiscreteDist mu_l;  // labeled-feature marginal
  DiscreteDist mu_u;  // unlabeled/test-feature marginal
  std::vector<double> p_y1_given_x;
  Matrix loss_y0;  // w_size x x_size
  Matrix loss_y1;
  Matrix p_hat1;   // estimated P(Y=1 | w, x), w_size x x_size
  double loss_bound = 1.0;

  void validate() const {
    mu_l.validate(1e-9);
    mu_u.validate(1e-9);
    if (mu_l.size() != x_size || mu_u.size() != x_size)
      throw ConfigError("ToyWorld: marginal support != x_size");
    if (p_y1_given_x.size() != x_size) throw ConfigError("ToyWorld: p_y1 size");
    auto check_table = [&](const Matrix& t, bool is_prob) {
      require_shape(t.rows == w_size && t.cols == x_size, "ToyWorld: table shape");
      for (double v : t.data) {
        const double hi = is_prob ? 1.0 : loss_bound;
        if (!(v >= 0.0 && v <= hi + 1e-12))
          throw ConfigError("ToyWorld: table entry out of range");
      }
    };
    check_table(loss_y0, false);
    check_table(loss_y1, false);
    check_table(p_hat1, true);
    for (double v : p_y1_given_x)
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("ToyWorld: p_y1 out of range");
  }

  double loss(std::size_t w, std::size_t x, int y) const {
    return y == 1 ? loss_y1(w, x) : loss_y0(w, x);
  }

  // expectation of the loss under the true conditional
  double ell_c(std::size_t w, std::size_t x) const {
    const double p1 = p_y1_given_x[x];
    return (1.0 - p1) * loss_y0(w, x) + p1 * loss_y1(w, x);
  }

  // expectation of the loss under the estimated conditional
  double ell_u(std::size_t w, std::size_t x) const {
    const double p1 = p_hat1(w, x);
    return (1.0 - p1) * loss_y0(w, x) + p1 * loss_y1(w, x);
  }

  // population risk under the test distribution mu_u x P_{Y|X}
  double population_risk(std::size_t w) const {
    double r = 0.0;
    for (std::size_t x = 0; x < x_size; ++x) r += mu_u.p[x] * ell_c(w, x);
    return r;
  }
};

struct SampleTuple {
  std::vector<std::size_t> xl;
  std::vector<int> yl;
  std::vector<std::size_t> xu;
  std::size_t index = 0;  // position in enumeration order
};

using ToyAlgorithm =
    std::function<std::vector<double>(const ToyWorld&, const SampleTuple&)>;

// beta-mixed empirical risk of hypothesis w on one sample tuple; `use_cond`
// swaps the estimated-conditional loss for the true-conditional one.
inline double toy_ssl_empirical_risk(const ToyWorld& world, const SampleTuple& t,
                                     std::size_t w, double beta, bool use_cond) {
  double sup = 0.0;
  if (!t.xl.empty()) {
    for (std::size_t i = 0; i < t.xl.size(); ++i) sup += world.loss(w, t.xl[i], t.yl[i]);
    sup /= static_cast<double>(t.xl.size());
  }
  double unsup = 0.0;
  const std::size_t nm = t.xl.size() + t.xu.size();
  if (nm > 0) {
    for (std::size_t x : t.xl) unsup += use_cond ? world.ell_c(w, x) : world.ell_u(w, x);
    for (std::size_t x : t.xu) unsup += use_cond ? world.ell_c(w, x) : world.ell_u(w, x);
    unsup /= static_cast<double>(nm);
  }
  return beta * sup + (1.0 - beta) * unsup;
}

inline ToyAlgorithm constant_algorithm() {
  return [](const ToyWorld& world, const SampleTuple&) {
    return std::vector<double>(world.w_size, 1.0 / static_cast<double>(world.w_size));
  };
}

// argmin of the empirical risk; ties go to the lowest hypothesis index
inline ToyAlgorithm erm_algorithm(double beta) {
  return [beta](const ToyWorld& world, const SampleTuple& t) {
    std::size_t best = 0;
    double best_risk = toy_ssl_empirical_risk(world, t, 0, beta, false);
    for (std::size_t w = 1; w < world.w_size; ++w) {
      const double r = toy_ssl_empirical_risk(world, t, w, beta, false);
      if (r < best_risk) {
        best_risk = r;
        best = w;
      }
    }
    std::vector<double> p(world.w_size, 0.0);
    p[best] = 1.0;
    return p;
  };
}

// softmin over empirical risk; temperature tau interpolates between ERM
// (tau -> 0) and the constant algorithm (tau -> inf)
inline ToyAlgorithm gibbs_algorithm(double beta, double tau) {
  return [beta, tau](const ToyWorld& world, const SampleTuple& t) {
    std::vector<double> logits(world.w_size);
    double mx = -kInfinity;
    for (std::size_t w = 0; w < world.w_size; ++w) {
      logits[w] = -toy_ssl_empirical_risk(world, t, w, beta, false) / tau;
      mx = std::max(mx, logits[w]);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
  };
}

// data-dependent but otherwise arbitrary stochastic algorithm; each tuple
// gets its own reproducible point on the simplex
inline ToyAlgorithm random_algorithm(std::uint64_t salt) {
  return [salt](const ToyWorld& world, const SampleTuple& t) {
    Rng rng(derive_seed(salt, {t.index}));
    std::vector<double> p(world.w_size);
    double z = 0.0;
    for (double& v : p) {
      v = -std::log(1.0 - rng.uniform());
      z += v;
    }
    for (double& v : p) v /= z;
    return p;
  };
}

// Exact quantities from exhaustive enumeration plus the assembled bound
// reports. gen_cond is the generalization error of the risk that uses the
// true-conditional loss in the unsupervised slot (what the KL bound with
// sigma_c covers); gen_unsup uses the estimated-conditional loss (what the
// delta-corrected bounds cover).
struct ToyEnumeration {
  double gen_cond = 0.0;
  double gen_unsup = 0.0;
  double mi_wxy = 0.0;
  double mi_wxl = 0.0;
  double mi_wxu = 0.0;
  double delta_ssl = 0.0;
  double kl_cond = 0.0;  // D(Phat || P_true | P_W x mu_u)
  double tv_cond = 0.0;
  double kl_shift = 0.0;
  double tv_shift = 0.0;
  double appendix_b_lhs = 0.0;  // D(P_{W,X^L} || mu_u^n x P_W)
  double appendix_b_rhs = 0.0;  // I(W;X^L) + n D(mu_l || mu_u)
  DiscreteDist p_w;
  BoundInputs inputs;
  BoundReport thm1;
  BoundReport prop2;
  BoundReport cor4;
  std::optional<double> cor6;  // only when mu_l == mu_u
};

inline ToyEnumeration toy_enumerate(const ToyWorld& world, std::size_t n, std::size_t m,
                                    double beta, const ToyAlgorithm& algorithm) {
  world.validate();
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("toy_enumerate: beta outside [0,1]");
  if (n == 0 && beta > 0.0)
    throw ConfigError("toy_enumerate: n = 0 requires beta = 0");

  double states = static_cast<double>(world.w_size);
  for (std::size_t i = 0; i < n; ++i) states *= 2.0 * static_cast<double>(world.x_size);
  for (std::size_t j = 0; j < m; ++j) states *= static_cast<double>(world.x_size);
  if (states > 1e7) throw ConfigError("toy_enumerate: state space exceeds 1e7");

  std::size_t labeled_keys = 1;
  for (std::size_t i = 0; i < n; ++i) labeled_keys *= 2 * world.x_size;
  std::size_t xl_keys = 1, xu_keys = 1;
  for (std::size_t i = 0; i < n; ++i) xl_keys *= world.x_size;
  for (std::size_t j = 0; j < m; ++j) xu_keys *= world.x_size;

  JointDist joint_w_xy(world.w_size, labeled_keys);
  JointDist joint_w_xl(world.w_size, xl_keys);
  JointDist joint_w_xu(world.w_size, xu_keys);

  SampleTuple t;
  t.xl.assign(n, 0);
  t.yl.assign(n, 0);
  t.xu.assign(m, 0);
  t.index = 0;

  double gen_cond = 0.0, gen_unsup = 0.0;
  std::vector<double> pop_risk(world.w_size);
  for (std::size_t w = 0; w < world.w_size; ++w) pop_risk[w] = world.population_risk(w);

  bool done = false;
  while (!done) {
    double prob = 1.0;
    std::size_t key_xy = 0, key_xl = 0, key_xu = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t x = t.xl[i];
      const int y = t.yl[i];
      prob *= world.mu_l.p[x] * (y == 1 ? world.p_y1_given_x[x]
                                        : 1.0 - world.p_y1_given_x[x]);
      key_xy = key_xy * (2 * world.x_size) + x * 2 + static_cast<std::size_t>(y);
      key_xl = key_xl * world.x_size + x;
    }
    for (std::size_t j = 0; j < m; ++j) {
      prob *= world.mu_u.p[t.xu[j]];
      key_xu = key_xu * world.x_size + t.xu[j];
    }

    if (prob > 0.0) {
      const std::vector<double> pw = algorithm(world, t);
      for (std::size_t w = 0; w < world.w_size; ++w) {
        const double mass = prob * pw[w];
        if (mass == 0.0) continue;
        joint_w_xy.at(w, key_xy) += mass;
        joint_w_xl.at(w, key_xl) += mass;
        joint_w_xu.at(w, key_xu) += mass;
        gen_cond +=
            mass * (pop_risk[w] - toy_ssl_empirical_risk(world, t, w, beta, true));
        gen_unsup +=
            mass * (pop_risk[w] - toy_ssl_empirical_risk(world, t, w, beta, false));
      }
    }

    // mixed-radix increment: xu digits, then (x,y) labeled digits
    done = true;
    for (std::size_t j = 0; j < m; ++j) {
      if (++t.xu[j] < world.x_size) {
        done = false;
        break;
      }
      t.xu[j] = 0;
    }
    if (done) {
      for (std::size_t i = 0; i < n; ++i) {
        if (++t.yl[i] <= 1) {
          done = false;
          break;
        }
        t.yl[i] = 0;
        if (++t.xl[i] < world.x_size) {
          done = false;
          break;
        }
        t.xl[i] = 0;
      }
    }
    ++t.index;
  }

  ToyEnumeration out;
  out.gen_cond = gen_cond;
  out.gen_unsup = gen_unsup;
  out.mi_wxy = mutual_information(joint_w_xy);
  out.mi_wxl = mutual_information(joint_w_xl);
  out.mi_wxu = mutual_information(joint_w_xu);
  out.p_w = joint_w_xy.marginal_rows();
  out.kl_shift = kl_discrete(world.mu_l, world.mu_u);
  out.tv_shift = tv_discrete(world.mu_l, world.mu_u);

  for (std::size_t w = 0; w < world.w_size; ++w) {
    for (std::size_t x = 0; x < world.x_size; ++x) {
      const double mass = out.p_w.p[w] * world.mu_u.p[x];
      if (mass == 0.0) continue;
      out.delta_ssl += mass * (world.ell_c(w, x) - world.ell_u(w, x));
      const std::vector<double> phat = {1.0 - world.p_hat1(w, x), world.p_hat1(w, x)};
      const std::vector<double> ptrue = {1.0 - world.p_y1_given_x[x],
                                         world.p_y1_given_x[x]};
      out.kl_cond += mass * kl_discrete(std::span<const double>(phat),
                                        std::span<const double>(ptrue));
      out.tv_cond += mass * tv_discrete(std::span<const double>(phat),
                                        std::span<const double>(ptrue));
    }
  }

  // relative entropy of the (W, X^L) joint against P_W x mu_u^n, and its
  // decomposition into I(W;X^L) + n * D(mu_l || mu_u)
  for (std::size_t w = 0; w < world.w_size; ++w) {
    for (std::size_t key = 0; key < xl_keys; ++key) {
      const double pj = joint_w_xl.at(w, key);
      if (pj == 0.0) continue;
      double ref = out.p_w.p[w];
      std::size_t k = key;
      for (std::size_t i = 0; i < n; ++i) {
        ref *= world.mu_u.p[k % world.x_size];
        k /= world.x_size;
      }
      if (ref == 0.0) {
        out.appendix_b_lhs = kInfinity;
        break;
      }
      out.appendix_b_lhs += pj * std::log(pj / ref);
    }
    if (std::isinf(out.appendix_b_lhs)) break;
  }
  out.appendix_b_rhs = out.mi_wxl + static_cast<double>(n) * out.kl_shift;

  BoundInputs in;
  in.n = n;
  in.m = m;
  in.beta = beta;
  in.sigma_l = in.sigma_c = in.sigma_u = world.loss_bound / 2.0;
  in.loss_range_l = in.loss_range_u = world.loss_bound;
  in.mi_wxy = out.mi_wxy;
  in.mi_wxl = out.mi_wxl;
  in.mi_wxu = out.mi_wxu;
  in.kl_shift = out.kl_shift;
  in.tv_shift = out.tv_shift;
  in.delta_ssl = out.delta_ssl;
  out.inputs = in;
  out.thm1 = bound_thm1(in);
  out.thm1.exact_gen = out.gen_cond;
  out.prop2 = bound_prop2(in);
  out.prop2.exact_gen = out.gen_unsup;
  out.cor4 = bound_cor4_tv(in);
  out.cor4.exact_gen = out.gen_unsup;
  if (out.kl_shift == 0.0 && out.tv_shift == 0.0) {
    const double sigma = world.loss_bound / 2.0;
    const double eps = std::abs(out.delta_ssl) / std::sqrt(2.0 * sigma * sigma);
    out.cor6 = bound_cor6(n, m, beta, sigma, sigma, world.w_size, eps);
  }
  return out;
}

inline ToyWorld random_toy_world(std::uint64_t seed, std::size_t max_x = 4,
                                 std::size_t max_w = 8, double loss_bound = 1.0) {
  Rng rng(seed);
  ToyWorld world;
  world.x_size = 2 + rng.bounded(max_x - 1);
  world.w_size = 2 + rng.bounded(max_w - 1);
  world.loss_bound = loss_bound;
  auto simplex = [&](std::size_t k) {
    std::vector<double> p(k);
    double z = 0.0;
    for (double& v : p) {
      v = -std::log(1.0 - rng.uniform());
      z += v;
    }
    for (double& v : p) v /= z;
    return p;
  };
  world.mu_l = DiscreteDist(simplex(world.x_size));
  world.mu_u = DiscreteDist(simplex(world.x_size));
  world.p_y1_given_x.resize(world.x_size);
  for (double& v : world.p_y1_given_x) v = rng.uniform();
  world.loss_y0 = Matrix(world.w_size, world.x_size);
  world.loss_y1 = Matrix(world.w_size, world.x_size);
  world.p_hat1 = Matrix(world.w_size, world.x_size);
  for (double& v : world.loss_y0.data) v = rng.uniform(0.0, loss_bound);
  for (double& v : world.loss_y1.data) v = rng.uniform(0.0, loss_bound);
  for (double& v : world.p_hat1.data) v = rng.uniform();
  world.validate();
  return world;
}

}  // namespace cssl
