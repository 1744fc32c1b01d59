#pragma once

#include <cmath>
#include <cstddef>
#include <optional>

#include "cssl/info.hpp"

namespace cssl {

// Everything a bound evaluation needs, decoupled from where the numbers came
// from (exact enumeration, Monte-Carlo, or by hand).
struct BoundInputs {
  std::size_t n = 0;       // labeled sample count
  std::size_t m = 0;       // unlabeled sample count
  double beta = 0.0;       // supervised/unsupervised mix
  double sigma_l = 0.0;    // sub-Gaussian parameter of the supervised loss
  double sigma_c = 0.0;    // ... of the conditional expected loss
  double sigma_u = 0.0;    // ... of the unsupervised loss
  double loss_range_l = 0.0;  // L_l: supervised loss bound
  double loss_range_u = 0.0;  // L_u: unsupervised loss bound
  double mi_wxy = 0.0;     // I(W; X^L, Y^L)
  double mi_wxl = 0.0;     // I(W; X^L)
  double mi_wxu = 0.0;     // I(W; X^U)
  double kl_shift = 0.0;   // D(mu_l || mu_u), may be +inf
  double tv_shift = 0.0;   // TV(mu_l, mu_u)
  double delta_ssl = 0.0;  // E[l_c - l_u] under P_W x mu_u
};

// Per-term breakdown of one bound. `infinite` marks a vacuous bound (KL
// shift without absolute continuity); totals then carry +inf explicitly.
struct BoundReport {
  double supervised_term = 0.0;
  double labeled_unsup_term = 0.0;
  double unlabeled_term = 0.0;
  double delta_term = 0.0;
  double total = 0.0;
  bool infinite = false;
  std::optional<double> exact_gen;  // filled by enumeration oracles

  void finalize() {
    total = supervised_term + labeled_unsup_term + unlabeled_term + delta_term;
    infinite = std::isinf(total);
  }
};

namespace detail {

// sqrt((2 sigma^2 / n) * mi + 2 sigma^2 * shift); 0 when the term has no
// samples behind it.
inline double kl_term(double sigma, double mi, std::size_t count, double shift) {
  if (count == 0) return 0.0;
  return std::sqrt(2.0 * sigma * sigma * mi / static_cast<double>(count) +
                   2.0 * sigma * sigma * shift);
}

}  // namespace detail

// KL-based bound with the conditional expected loss in the unsupervised
// slot; terms: supervised, labeled-unsupervised (both paying the shift KL),
// and unlabeled.
inline BoundReport bound_thm1(const BoundInputs& in) {
  const double nm = static_cast<double>(in.n + in.m);
  BoundReport r;
  r.supervised_term = in.beta * detail::kl_term(in.sigma_l, in.mi_wxy, in.n, in.kl_shift);
  if (in.n > 0)
    r.labeled_unsup_term = (static_cast<double>(in.n) * (1.0 - in.beta) / nm) *
                           detail::kl_term(in.sigma_c, in.mi_wxl, in.n, in.kl_shift);
  if (in.m > 0)
    r.unlabeled_term = (static_cast<double>(in.m) * (1.0 - in.beta) / nm) *
                       detail::kl_term(in.sigma_c, in.mi_wxu, in.m, 0.0);
  r.finalize();
  return r;
}

// Same shape with the actual unsupervised loss: sigma_u replaces sigma_c and
// the conditional-estimation gap enters additively. The delta term uses
// |delta_ssl| (the gap can be negative; only its magnitude is controlled).
inline BoundReport bound_prop2(const BoundInputs& in) {
  const double nm = static_cast<double>(in.n + in.m);
  BoundReport r;
  r.supervised_term = in.beta * detail::kl_term(in.sigma_l, in.mi_wxy, in.n, in.kl_shift);
  if (in.n > 0)
    r.labeled_unsup_term = (static_cast<double>(in.n) * (1.0 - in.beta) / nm) *
                           detail::kl_term(in.sigma_u, in.mi_wxl, in.n, in.kl_shift);
  if (in.m > 0)
    r.unlabeled_term = (static_cast<double>(in.m) * (1.0 - in.beta) / nm) *
                       detail::kl_term(in.sigma_u, in.mi_wxu, in.m, 0.0);
  r.delta_term = (1.0 - in.beta) * std::abs(in.delta_ssl);
  r.finalize();
  return r;
}

// Total-variation variant for bounded losses; stays finite even without
// absolute continuity.
inline BoundReport bound_cor4_tv(const BoundInputs& in) {
  const double nm = static_cast<double>(in.n + in.m);
  BoundReport r;
  if (in.n > 0)
    r.supervised_term =
        in.beta * (std::sqrt(in.loss_range_l * in.loss_range_l * in.mi_wxy /
                             (2.0 * static_cast<double>(in.n))) +
                   2.0 * in.loss_range_l * in.tv_shift);
  else
    r.supervised_term = in.beta * 2.0 * in.loss_range_l * in.tv_shift;
  if (in.n > 0)
    r.labeled_unsup_term =
        (static_cast<double>(in.n) * (1.0 - in.beta) / nm) *
        (std::sqrt(in.loss_range_u * in.loss_range_u * in.mi_wxl /
                   (2.0 * static_cast<double>(in.n))) +
         2.0 * in.loss_range_u * in.tv_shift);
  if (in.m > 0)
    r.unlabeled_term = (static_cast<double>(in.m) * (1.0 - in.beta) / nm) *
                       std::sqrt(in.loss_range_u * in.loss_range_u * in.mi_wxu /
                                 (2.0 * static_cast<double>(in.m)));
  r.delta_term = (1.0 - in.beta) * std::abs(in.delta_ssl);
  r.finalize();
  return r;
}

// Bound on the conditional-estimation gap via the conditional KL between
// estimated and true label posteriors.
inline double delta_bound_kl(double sigma_u, double kl_cond) {
  return std::sqrt(2.0 * sigma_u * sigma_u * kl_cond);
}

// ... and via the (bounded) conditional total variation.
inline double delta_bound_tv(double loss_range_u, double tv_cond) {
  return 2.0 * loss_range_u * tv_cond;
}

// Countable hypothesis class of size k, no covariate shift; eps bounds the
// normalized estimation gap.
inline double bound_cor6(std::size_t n, std::size_t m, double beta, double sigma_l,
                         double sigma_u, std::size_t k, double eps) {
  const double logk = std::log(static_cast<double>(k));
  double first = 0.0;
  if (n > 0)
    first = beta * std::sqrt(2.0 * sigma_l * sigma_l * logk / static_cast<double>(n));
  const double second =
      (1.0 - beta) * std::sqrt(2.0 * sigma_u * sigma_u) *
      (std::sqrt(logk / static_cast<double>(n + m)) + eps);
  return first + second;
}

inline double rate_eq17(double beta, std::size_t n, std::size_t m) {
  return beta / std::sqrt(static_cast<double>(n)) +
         (1.0 - beta) / std::sqrt(static_cast<double>(n + m));
}

// Rate at beta = n/(n+m).
inline double rate_eq18(std::size_t n, std::size_t m) {
  const double nm = static_cast<double>(n + m);
  return std::max(std::sqrt(static_cast<double>(n)) / nm,
                  static_cast<double>(m) / std::pow(nm, 1.5));
}

}  // namespace cssl
