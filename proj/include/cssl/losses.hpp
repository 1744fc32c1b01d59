#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace cssl {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LossFamily { LogLoss, SquaredLogLoss, AlphaLoss, PseudoLabel };

// Probabilities are clamped at this floor inside log terms (and inside
// negative fractional powers), keeping every loss finite without touching
// well-conditioned inputs.
inline constexpr double kProbFloor = 1e-12;

// A supervised loss family; the matching unsupervised loss is derived from
// it as the expectation under the predicted class distribution (pseudo-label
// is the exception: -log of the largest predicted probability).
//
// Sign convention for the squared variant: the loss is the square of the
// negative log, (-log p)^2, so it stays non-negative.
struct LossSpec {
  LossFamily family = LossFamily::LogLoss;
  double alpha = 0.0;  // AlphaLoss only

  static LossSpec log_loss() { return {LossFamily::LogLoss, 0.0}; }
  static LossSpec squared_log_loss() { return {LossFamily::SquaredLogLoss, 0.0}; }
  static LossSpec pseudo_label() { return {LossFamily::PseudoLabel, 0.0}; }
  static LossSpec alpha_loss(double a) {
    if (!(a > 0.0) || a == 1.0)
      throw ConfigError("alpha must be in (0,inf) and != 1; use log_loss for the limit");
    return {LossFamily::AlphaLoss, a};
  }
};

inline void validate_prob_vector(std::span<const double> p, double tol = 1e-9) {
  if (p.size() < 2) throw ConfigError("prob vector needs at least 2 classes");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ConfigError("prob vector has a negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) throw ConfigError("prob vector does not sum to 1");
}

namespace detail {
inline double clamped_log(double p) { return std::log(std::max(p, kProbFloor)); }
}  // namespace detail

inline double supervised_loss(const LossSpec& spec, std::span<const double> p_hat,
                              std::size_t label) {
  validate_prob_vector(p_hat);
  if (label >= p_hat.size()) throw ConfigError("label out of range");
  const double p = p_hat[label];
  switch (spec.family) {
    case LossFamily::LogLoss:
    case LossFamily::PseudoLabel:
      return -detail::clamped_log(p);
    case LossFamily::SquaredLogLoss: {
      const double lg = detail::clamped_log(p);
      return lg * lg;
    }
    case LossFamily::AlphaLoss: {
      const double e = 1.0 - 1.0 / spec.alpha;
      const double base = e < 0.0 ? std::max(p, kProbFloor) : p;
      return spec.alpha / (spec.alpha - 1.0) * (1.0 - std::pow(base, e));
    }
  }
  return 0.0;
}

// d supervised_loss / d p_hat; differentiates exactly the clamped formula
// above (zero slope inside a clamped region).
inline std::vector<double> supervised_loss_grad(const LossSpec& spec,
                                                std::span<const double> p_hat,
                                                std::size_t label) {
  std::vector<double> g(p_hat.size(), 0.0);
  const double p = p_hat[label];
  switch (spec.family) {
    case LossFamily::LogLoss:
    case LossFamily::PseudoLabel:
      g[label] = p > kProbFloor ? -1.0 / p : 0.0;
      break;
    case LossFamily::SquaredLogLoss:
      g[label] = p > kProbFloor ? 2.0 * std::log(p) / p : 0.0;
      break;
    case LossFamily::AlphaLoss: {
      const double e = 1.0 - 1.0 / spec.alpha;
      if (e < 0.0 && p <= kProbFloor)
        g[label] = 0.0;
      else
        g[label] = -std::pow(p, -1.0 / spec.alpha);
      break;
    }
  }
  return g;
}

inline double unsupervised_loss(const LossSpec& spec, std::span<const double> p_hat) {
  validate_prob_vector(p_hat);
  switch (spec.family) {
    case LossFamily::PseudoLabel: {
      const double mx = *std::max_element(p_hat.begin(), p_hat.end());
      return -detail::clamped_log(mx);
    }
    case LossFamily::LogLoss: {
      double h = 0.0;  // Shannon entropy of p_hat
      for (double p : p_hat) h -= p * detail::clamped_log(p);
      return h;
    }
    case LossFamily::SquaredLogLoss: {
      double s = 0.0;
      for (double p : p_hat) {
        const double lg = detail::clamped_log(p);
        s += p * lg * lg;
      }
      return s;
    }
    case LossFamily::AlphaLoss: {
      const double e = 1.0 - 1.0 / spec.alpha;
      double s = 0.0;
      for (double p : p_hat) {
        const double base = e < 0.0 ? std::max(p, kProbFloor) : p;
        s += p * spec.alpha / (spec.alpha - 1.0) * (1.0 - std::pow(base, e));
      }
      return s;
    }
  }
  return 0.0;
}

inline std::vector<double> unsupervised_loss_grad(const LossSpec& spec,
                                                  std::span<const double> p_hat) {
  std::vector<double> g(p_hat.size(), 0.0);
  switch (spec.family) {
    case LossFamily::PseudoLabel: {
      const std::size_t am = static_cast<std::size_t>(
          std::max_element(p_hat.begin(), p_hat.end()) - p_hat.begin());
      const double mx = p_hat[am];
      g[am] = mx > kProbFloor ? -1.0 / mx : 0.0;
      break;
    }
    case LossFamily::LogLoss:
      for (std::size_t j = 0; j < p_hat.size(); ++j) {
        const double p = p_hat[j];
        g[j] = -detail::clamped_log(p) - (p > kProbFloor ? 1.0 : 0.0);
      }
      break;
    case LossFamily::SquaredLogLoss:
      for (std::size_t j = 0; j < p_hat.size(); ++j) {
        const double p = p_hat[j];
        const double lg = detail::clamped_log(p);
        g[j] = lg * lg + (p > kProbFloor ? 2.0 * lg : 0.0);
      }
      break;
    case LossFamily::AlphaLoss: {
      const double e = 1.0 - 1.0 / spec.alpha;
      const double c = spec.alpha / (spec.alpha - 1.0);
      for (std::size_t j = 0; j < p_hat.size(); ++j) {
        const double p = p_hat[j];
        if (e < 0.0 && p <= kProbFloor) {
          g[j] = c * (1.0 - std::pow(kProbFloor, e));
        } else {
          const double pe = std::pow(p, e);
          g[j] = c * (1.0 - pe) - pe;
        }
      }
      break;
    }
  }
  return g;
}

// Expectation of the supervised loss under the true conditional; oracle-side
// quantity, the learner never sees p_true.
inline double conditional_expected_loss(const LossSpec& spec,
                                        std::span<const double> p_true,
                                        std::span<const double> p_hat) {
  validate_prob_vector(p_true);
  validate_prob_vector(p_hat);
  if (p_true.size() != p_hat.size())
    throw ConfigError("conditional_expected_loss: class counts differ");
  double s = 0.0;
  for (std::size_t j = 0; j < p_true.size(); ++j)
    if (p_true[j] != 0.0) s += p_true[j] * supervised_loss(spec, p_hat, j);
  return s;
}

}  // namespace cssl
