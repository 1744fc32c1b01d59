#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "cssl/losses.hpp"
#include "cssl/rng.hpp"

namespace cssl {

// All information quantities are in nats.

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct DiscreteDist {
  std::vector<double> p;

  DiscreteDist() = default;
  explicit DiscreteDist(std::vector<double> probs) : p(std::move(probs)) {}

  std::size_t size() const { return p.size(); }

  void validate(double tol = 1e-12) const {
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw ConfigError("DiscreteDist: negative mass");
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) throw ConfigError("DiscreteDist: mass != 1");
  }

  void normalize() {
    double sum = 0.0;
    for (double v : p) sum += v;
    if (!(sum > 0.0)) throw ConfigError("DiscreteDist: cannot normalize zero mass");
    for (double& v : p) v /= sum;
  }
};

// Row-major k1 x k2 probability table.
struct JointDist {
  std::size_t rows = 0, cols = 0;
  std::vector<double> p;

  JointDist() = default;
  JointDist(std::size_t r, std::size_t c) : rows(r), cols(c), p(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return p[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return p[i * cols + j]; }

  void validate(double tol = 1e-12) const {
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw ConfigError("JointDist: negative mass");
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) throw ConfigError("JointDist: total mass != 1");
  }

  DiscreteDist marginal_rows() const {
    DiscreteDist d(std::vector<double>(rows, 0.0));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) d.p[i] += at(i, j);
    return d;
  }

  DiscreteDist marginal_cols() const {
    DiscreteDist d(std::vector<double>(cols, 0.0));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) d.p[j] += at(i, j);
    return d;
  }
};

// D(P || Q) = sum p log(p/q); +inf when P is not absolutely continuous
// w.r.t. Q.
inline double kl_discrete(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ConfigError("kl_discrete: support sizes differ");
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return kInfinity;
    d += p[i] * std::log(p[i] / q[i]);
  }
  return d;
}

inline double kl_discrete(const DiscreteDist& p, const DiscreteDist& q) {
  return kl_discrete(std::span<const double>(p.p), std::span<const double>(q.p));
}

// half the L1 distance
inline double tv_discrete(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ConfigError("tv_discrete: support sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double tv_discrete(const DiscreteDist& p, const DiscreteDist& q) {
  return tv_discrete(std::span<const double>(p.p), std::span<const double>(q.p));
}

inline double entropy_discrete(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline double entropy_discrete(const DiscreteDist& p) {
  return entropy_discrete(std::span<const double>(p.p));
}

// I(Z;T) as the divergence between the joint and the product of marginals.
inline double mutual_information(const JointDist& joint) {
  const DiscreteDist mr = joint.marginal_rows();
  const DiscreteDist mc = joint.marginal_cols();
  double mi = 0.0;
  for (std::size_t i = 0; i < joint.rows; ++i)
    for (std::size_t j = 0; j < joint.cols; ++j) {
      const double pij = joint.at(i, j);
      if (pij <= 0.0) continue;
      mi += pij * std::log(pij / (mr.p[i] * mc.p[j]));
    }
  // clip tiny negatives from cancellation
  return mi < 0.0 && mi > -1e-14 ? 0.0 : mi;
}

// Mixture of isotropic Gaussians with a shared dimension.
struct GaussianMixture {
  struct Component {
    double weight;
    std::vector<double> mean;
    double variance;
  };
  std::vector<Component> components;

  std::size_t dim() const { return components.front().mean.size(); }

  void validate() const {
    if (components.empty()) throw ConfigError("GaussianMixture: no components");
    double w = 0.0;
    for (const auto& c : components) {
      if (!(c.variance > 0.0)) throw ConfigError("GaussianMixture: variance <= 0");
      if (c.mean.size() != dim()) throw ConfigError("GaussianMixture: mean dims differ");
      w += c.weight;
    }
    if (std::abs(w - 1.0) > 1e-9) throw ConfigError("GaussianMixture: weights != 1");
  }

  double log_density(std::span<const double> x) const {
    const double d = static_cast<double>(dim());
    double best = -kInfinity;
    std::vector<double> terms(components.size());
    for (std::size_t c = 0; c < components.size(); ++c) {
      const auto& comp = components[c];
      double sq = 0.0;
      for (std::size_t i = 0; i < comp.mean.size(); ++i) {
        const double diff = x[i] - comp.mean[i];
        sq += diff * diff;
      }
      terms[c] = std::log(comp.weight) -
                 0.5 * d * std::log(2.0 * 3.141592653589793238462643383279502884 *
                                    comp.variance) -
                 sq / (2.0 * comp.variance);
      best = std::max(best, terms[c]);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
  }

  std::vector<double> sample(Rng& rng) const {
    const double u = rng.uniform();
    double cum = 0.0;
    const Component* pick = &components.back();
    for (const auto& c : components) {
      cum += c.weight;
      if (u < cum) {
        pick = &c;
        break;
      }
    }
    std::vector<double> x(pick->mean.size());
    const double sd = std::sqrt(pick->variance);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = pick->mean[i] + sd * rng.normal();
    return x;
  }
};

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t samples = 0;
};

// Monte-Carlo D(P || Q): average log-density ratio under samples from P.
inline McEstimate mc_kl_gaussian_mixture(const GaussianMixture& p,
                                         const GaussianMixture& q,
                                         std::size_t samples, std::uint64_t seed) {
  p.validate();
  q.validate();
  if (p.dim() != q.dim()) throw ConfigError("mc_kl: dimensions differ");
  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::vector<double> x = p.sample(rng);
    const double r = p.log_density(x) - q.log_density(x);
    sum += r;
    sumsq += r * r;
  }
  McEstimate est;
  est.samples = samples;
  est.mean = sum / static_cast<double>(samples);
  const double var =
      std::max(0.0, sumsq / static_cast<double>(samples) - est.mean * est.mean);
  est.stderr_ = std::sqrt(var / static_cast<double>(samples));
  return est;
}

}  // namespace cssl
