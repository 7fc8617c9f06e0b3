#include "sparselvm/expfam.hpp"

#include <cmath>
#include <stdexcept>

namespace sparselvm {

namespace {

void require_finite(double psi, const char* what) {
  if (!std::isfinite(psi)) {
    throw std::invalid_argument(std::string(what) +
                                ": natural parameter must be finite");
  }
}

}  // namespace

std::string_view family_name(Family kind) {
  switch (kind) {
    case Family::Gaussian:
      return "gaussian";
    case Family::Bernoulli:
      return "bernoulli";
    case Family::Poisson:
      return "poisson";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  if (name == "gaussian") return Family::Gaussian;
  if (name == "bernoulli") return Family::Bernoulli;
  if (name == "poisson") return Family::Poisson;
  throw std::invalid_argument("unknown family '" + std::string(name) + "'");
}

void FamilySpec::validate() const {
  if (kind == Family::Gaussian &&
      !(gaussian_noise_variance > 0.0 && std::isfinite(gaussian_noise_variance))) {
    throw std::invalid_argument("gaussian_noise_variance must be positive");
  }
}

void ConjugateHyper::validate(Eigen::Index dim) const {
  if (!(nu > 0.0)) throw std::invalid_argument("conjugate nu must be positive");
  if (lambda.size() != dim) {
    throw std::invalid_argument("conjugate lambda has dimension " +
                                std::to_string(lambda.size()) + ", expected " +
                                std::to_string(dim));
  }
}

ConjugateHyper default_conjugate(const FamilySpec& family, Eigen::Index dim,
                                 double nu) {
  ConjugateHyper h;
  h.nu = nu;
  switch (family.kind) {
    case Family::Gaussian:
      h.lambda = Eigen::VectorXd::Zero(dim);
      break;
    case Family::Bernoulli:
      h.lambda = Eigen::VectorXd::Constant(dim, 0.5 * nu);
      break;
    case Family::Poisson:
      h.lambda = Eigen::VectorXd::Constant(dim, nu);
      break;
  }
  return h;
}

bool in_support(const FamilySpec& family, double x) {
  if (!std::isfinite(x)) return false;
  switch (family.kind) {
    case Family::Gaussian:
      return true;
    case Family::Bernoulli:
      return x == 0.0 || x == 1.0;
    case Family::Poisson:
      return x >= 0.0 && x == std::floor(x);
  }
  return false;
}

double log_partition(const FamilySpec& family, double psi) {
  require_finite(psi, "log_partition");
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

double log_partition_grad(const FamilySpec& family, double psi) {
  require_finite(psi, "log_partition_grad");
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

double log_partition_hess(const FamilySpec& family, double psi) {
  switch (family.kind) {
    case Family::Gaussian:
      return 1.0 / family.gaussian_noise_variance;
    case Family::Bernoulli: {
      const double p = detail::sigmoid(psi);
      return p * (1.0 - p);
    }
    case Family::Poisson:
      return std::exp(psi);
  }
  return 0.0;
}

double mean_function(const FamilySpec& family, double psi) {
  require_finite(psi, "mean_function");
  if (family.kind == Family::Gaussian) return psi;
  return log_partition_grad(family, psi);
}

double sufficient_stat(const FamilySpec& family, double x) {
  if (family.kind == Family::Gaussian) return x / family.gaussian_noise_variance;
  return x;
}

double log_base_measure(const FamilySpec& family, double x) {
  switch (family.kind) {
    case Family::Gaussian: {
      const double var = family.gaussian_noise_variance;
      return -0.5 * x * x / var - 0.5 * std::log(2.0 * M_PI * var);
    }
    case Family::Bernoulli:
      return 0.0;
    case Family::Poisson:
      return -std::lgamma(x + 1.0);
  }
  return 0.0;
}

double log_prob(const FamilySpec& family, double x, double psi) {
  require_finite(psi, "log_prob");
  if (!in_support(family, x)) {
    throw std::domain_error("value " + std::to_string(x) +
                            " is outside the support of the " +
                            std::string(family_name(family.kind)) + " family");
  }
  return log_prob_unchecked(family, x, psi);
}

double conjugate_log_prior(const FamilySpec& family,
                           const Eigen::Ref<const Eigen::VectorXd>& theta_row,
                           const ConjugateHyper& hyper) {
  if (theta_row.size() != hyper.lambda.size()) {
    throw std::invalid_argument("conjugate_log_prior: theta has dimension " +
                                std::to_string(theta_row.size()) +
                                " but lambda has " +
                                std::to_string(hyper.lambda.size()));
  }
  double a = 0.0;
  for (Eigen::Index d = 0; d < theta_row.size(); ++d) {
    a += log_partition(family, theta_row[d]);
  }
  return hyper.lambda.dot(theta_row) - hyper.nu * a;
}

}  // namespace sparselvm
