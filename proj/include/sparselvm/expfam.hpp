#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

namespace sparselvm {

enum class Family { Gaussian, Bernoulli, Poisson };

std::string_view family_name(Family kind);
Family parse_family(std::string_view name);

/// Observation model for a single matrix entry. Densities are written in the
/// canonical form log h(x) + s(x) psi - A(psi).
///
/// For the Gaussian kind, psi is the mean and the noise variance is a fixed
/// configuration value: s(x) = x / var, A(psi) = psi^2 / (2 var).
struct FamilySpec {
  Family kind = Family::Gaussian;
  double gaussian_noise_variance = 1.0;

  static FamilySpec gaussian(double noise_variance = 1.0) {
    return {Family::Gaussian, noise_variance};
  }
  static FamilySpec bernoulli() { return {Family::Bernoulli, 1.0}; }
  static FamilySpec poisson() { return {Family::Poisson, 1.0}; }

  // Throws std::invalid_argument on a non-positive Gaussian variance.
  void validate() const;
};

/// Hyperparameters of the conjugate prior p(theta) ~ exp(lambda' theta - nu A(theta)).
struct ConjugateHyper {
  Eigen::VectorXd lambda;
  double nu = 1.0;

  void validate(Eigen::Index dim) const;
};

/// A proper default conjugate prior for each family:
/// Gaussian lambda = 0 (zero-mean, precision nu / var); Bernoulli lambda = nu / 2
/// (symmetric about zero); Poisson lambda = nu (prior mean rate 1).
ConjugateHyper default_conjugate(const FamilySpec& family, Eigen::Index dim,
                                 double nu = 1.0);

bool in_support(const FamilySpec& family, double x);

double log_partition(const FamilySpec& family, double psi);

/// dA/dpsi.
double log_partition_grad(const FamilySpec& family, double psi);

/// d^2A/dpsi^2, always positive.
double log_partition_hess(const FamilySpec& family, double psi);

/// Predicted mean of x given psi. Equal to log_partition_grad except for a
/// Gaussian with non-unit variance, where it is psi itself.
double mean_function(const FamilySpec& family, double psi);

double sufficient_stat(const FamilySpec& family, double x);
double log_base_measure(const FamilySpec& family, double x);

/// log p(x | psi) in nats. Throws std::domain_error if x is outside the
/// family's support.
double log_prob(const FamilySpec& family, double x, double psi);

/// Unchecked log p(x | psi) for inner loops where x was validated at load.
inline double log_prob_unchecked(const FamilySpec& family, double x,
                                 double psi);

/// A(psi) without the finiteness check; non-finite input propagates.
inline double log_partition_unchecked(const FamilySpec& family, double psi);

/// A'(psi) without the finiteness check.
inline double log_partition_grad_unchecked(const FamilySpec& family, double psi);

/// d/dpsi log p(x | psi) = s(x) - A'(psi).
inline double log_prob_grad(const FamilySpec& family, double x, double psi);

/// A(psi) and its first two derivatives from a single exp evaluation.
struct PartitionTerms {
  double a;
  double grad;
  double hess;
};
inline PartitionTerms log_partition_terms(const FamilySpec& family, double psi);

/// Unnormalised conjugate log-prior of one factor row:
/// lambda' theta - nu * sum_d A(theta_d).
double conjugate_log_prior(const FamilySpec& family,
                           const Eigen::Ref<const Eigen::VectorXd>& theta_row,
                           const ConjugateHyper& hyper);

namespace detail {

// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline double log_prob_unchecked(const FamilySpec& family, double x,
                                 double psi) {
  switch (family.kind) {
    case Family::Gaussian: {
      const double var = family.gaussian_noise_variance;
      const double r = x - psi;
      return -0.5 * r * r / var - 0.5 * std::log(2.0 * M_PI * var);
    }
    case Family::Bernoulli:
      return x * psi - detail::log1p_exp(psi);
    case Family::Poisson:
      return x * psi - std::exp(psi) - std::lgamma(x + 1.0);
  }
  return 0.0;
}

inline double log_partition_unchecked(const FamilySpec& family, double psi) {
  switch (family.kind) {
    case Family::Gaussian:
      return 0.5 * psi * psi / family.gaussian_noise_variance;
    case Family::Bernoulli:
      return detail::log1p_exp(psi);
    case Family::Poisson:
      return std::exp(psi);
  }
  return 0.0;
}

inline double log_partition_grad_unchecked(const FamilySpec& family, double psi) {
  switch (family.kind) {
    case Family::Gaussian:
      return psi / family.gaussian_noise_variance;
    case Family::Bernoulli:
      return detail::sigmoid(psi);
    case Family::Poisson:
      return std::exp(psi);
  }
  return 0.0;
}

inline double log_prob_grad(const FamilySpec& family, double x, double psi) {
  switch (family.kind) {
    case Family::Gaussian:
      return (x - psi) / family.gaussian_noise_variance;
    case Family::Bernoulli:
      return x - detail::sigmoid(psi);
    case Family::Poisson:
      return x - std::exp(psi);
  }
  return 0.0;
}

inline PartitionTerms log_partition_terms(const FamilySpec& family, double psi) {
  switch (family.kind) {
    case Family::Gaussian: {
      const double inv = 1.0 / family.gaussian_noise_variance;
      return {0.5 * psi * psi * inv, psi * inv, inv};
    }
    case Family::Bernoulli: {
      const double e = std::exp(-std::abs(psi));
      const double p = psi >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
      return {std::max(psi, 0.0) + std::log1p(e), p, p * (1.0 - p)};
    }
    case Family::Poisson: {
      const double e = std::exp(psi);
      return {e, e, e};
    }
  }
  return {0.0, 0.0, 0.0};
}

}  // namespace sparselvm
