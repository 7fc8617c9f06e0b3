#include "sparselvm/model_core.hpp"

#include <stdexcept>
#include <string>

namespace sparselvm {

namespace {

std::string coord(Index n, Index d) {
  return "(" + std::to_string(n) + ", " + std::to_string(d) + ")";
}

}  // namespace

ObservationMatrix::ObservationMatrix(Matrix values, Mask observed,
                                     FamilySpec family)
    : values_(std::move(values)),
      observed_(std::move(observed)),
      family_(family) {
  family_.validate();
  if (values_.rows() < 1 || values_.cols() < 1) {
    throw std::invalid_argument("observation matrix must be at least 1 x 1");
  }
  if (observed_.rows() != values_.rows() || observed_.cols() != values_.cols()) {
    throw std::invalid_argument("observed mask shape does not match values");
  }
  row_log_base_ = Vector::Zero(values_.rows());
  suff_ = Matrix::Zero(values_.rows(), values_.cols());
  for (Index n = 0; n < values_.rows(); ++n) {
    for (Index d = 0; d < values_.cols(); ++d) {
      if (!observed_(n, d)) {
        values_(n, d) = 0.0;
        continue;
      }
      if (!in_support(family_, values_(n, d))) {
        throw std::domain_error("value " + std::to_string(values_(n, d)) +
                                " at " + coord(n, d) +
                                " is outside the support of the " +
                                std::string(family_name(family_.kind)) +
                                " family");
      }
      row_log_base_[n] += log_base_measure(family_, values_(n, d));
      suff_(n, d) = sufficient_stat(family_, values_(n, d));
    }
  }
}

ObservationMatrix::ObservationMatrix(Matrix values, FamilySpec family)
    : ObservationMatrix(values, Mask::Constant(values.rows(), values.cols(), true),
                        family) {}

std::size_t ObservationMatrix::observed_count() const {
  return static_cast<std::size_t>(observed_.count());
}

void ObservationMatrix::require_observed_rows() const {
  for (Index n = 0; n < rows(); ++n) {
    if (!observed_.row(n).any()) {
      throw std::invalid_argument("row " + std::to_string(n) +
                                  " has no observed entries");
    }
  }
}

ObservationMatrix ObservationMatrix::with_mask(Mask observed) const {
  if (observed.rows() != rows() || observed.cols() != cols()) {
    throw std::invalid_argument("with_mask: mask shape mismatch");
  }
  if ((observed.array() && !observed_.array()).any()) {
    throw std::invalid_argument("with_mask: new mask exposes unobserved entries");
  }
  return ObservationMatrix(values_, std::move(observed), family_);
}

void FactorState::check_against(const ObservationMatrix& data) const {
  if (V.cols() != Theta.rows()) {
    throw std::invalid_argument("factor state: V has " +
                                std::to_string(V.cols()) + " columns, Theta has " +
                                std::to_string(Theta.rows()) + " rows");
  }
  if (V.rows() != data.rows() || Theta.cols() != data.cols()) {
    throw std::invalid_argument(
        "factor state dimensions do not match the observation matrix");
  }
}

Matrix natural_params(const FactorState& state) { return state.V * state.Theta; }

double observed_loglik(const ObservationMatrix& data, const Matrix& psi) {
  if (psi.rows() != data.rows() || psi.cols() != data.cols()) {
    throw std::invalid_argument("observed_loglik: dimension mismatch");
  }
  const auto& fam = data.family();
  const Matrix& s = data.suff_stats();
  double total = data.log_base_total();
  for (Index d = 0; d < data.cols(); ++d) {
    for (Index n = 0; n < data.rows(); ++n) {
      if (data.is_observed(n, d)) {
        const double p = psi(n, d);
        total += s(n, d) * p - log_partition_unchecked(fam, p);
      }
    }
  }
  return total;
}

double observed_loglik(const ObservationMatrix& data, const FactorState& state) {
  state.check_against(data);
  return observed_loglik(data, natural_params(state));
}

Matrix loglik_residual(const ObservationMatrix& data, const Matrix& psi) {
  const auto& fam = data.family();
  Matrix r(data.rows(), data.cols());
  for (Index d = 0; d < data.cols(); ++d) {
    for (Index n = 0; n < data.rows(); ++n) {
      r(n, d) = data.is_observed(n, d)
                    ? log_prob_grad(fam, data.value(n, d), psi(n, d))
                    : 0.0;
    }
  }
  return r;
}

Vector loglik_grad_v(const ObservationMatrix& data, const FactorState& state,
                     Index n) {
  state.check_against(data);
  if (n < 0 || n >= data.rows()) {
    throw std::out_of_range("loglik_grad_v: row index " + std::to_string(n));
  }
  const auto& fam = data.family();
  const Eigen::RowVectorXd psi = state.V.row(n) * state.Theta;
  Vector g = Vector::Zero(state.K());
  for (Index d = 0; d < data.cols(); ++d) {
    if (!data.is_observed(n, d)) continue;
    g += log_prob_grad(fam, data.value(n, d), psi[d]) * state.Theta.col(d);
  }
  return g;
}

Vector loglik_grad_theta(const ObservationMatrix& data,
                         const FactorState& state, Index k) {
  state.check_against(data);
  if (k < 0 || k >= state.K()) {
    throw std::out_of_range("loglik_grad_theta: factor index " +
                            std::to_string(k));
  }
  const Matrix psi = natural_params(state);
  const Matrix r = loglik_residual(data, psi);
  return r.transpose() * state.V.col(k);
}

}  // namespace sparselvm
