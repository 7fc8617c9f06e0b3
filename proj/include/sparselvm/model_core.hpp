#pragma once

#include <Eigen/Dense>
#include <cstddef>

#include "sparselvm/expfam.hpp"

namespace sparselvm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

/// N x D data with a per-entry observed flag. Values at unobserved positions
/// are ignored by every computation and stored as zero.
class ObservationMatrix {
 public:
  /// Validates shapes and the family support of every observed value.
  /// Rows without observed entries are permitted here; loaders call
  /// require_observed_rows() to reject them.
  ObservationMatrix(Matrix values, Mask observed, FamilySpec family);

  /// Fully observed matrix.
  ObservationMatrix(Matrix values, FamilySpec family);

  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  const Mask& observed() const { return observed_; }
  const FamilySpec& family() const { return family_; }

  bool is_observed(Index n, Index d) const { return observed_(n, d); }
  double value(Index n, Index d) const { return values_(n, d); }

  std::size_t observed_count() const;

  /// Sum of log h(x_nd) over the observed entries of row n.
  double row_log_base(Index n) const { return row_log_base_[n]; }
  double log_base_total() const { return row_log_base_.sum(); }

  /// s(x_nd) at observed positions, zero elsewhere.
  const Matrix& suff_stats() const { return suff_; }

  /// Throws std::invalid_argument naming the first row with no observed entry.
  void require_observed_rows() const;

  /// Copy of this matrix with a different mask. The new mask must be a
  /// subset of the current one.
  ObservationMatrix with_mask(Mask observed) const;

 private:
  Matrix values_;
  Mask observed_;
  FamilySpec family_;
  Vector row_log_base_;
  Matrix suff_;
};

/// Latent weights V (N x K) and factor loadings Theta (K x D).
struct FactorState {
  Matrix V;
  Matrix Theta;

  Index K() const { return V.cols(); }

  /// Throws if V and Theta disagree on K or do not match N x D.
  void check_against(const ObservationMatrix& data) const;
};

/// Psi = V Theta.
Matrix natural_params(const FactorState& state);

/// Sum of log p(x_nd | psi_nd) over observed entries, in nats.
double observed_loglik(const ObservationMatrix& data, const FactorState& state);

/// Same sum for an explicit natural-parameter matrix; entries of psi at
/// unobserved positions are never read.
double observed_loglik(const ObservationMatrix& data, const Matrix& psi);

/// Gradient of observed_loglik with respect to row n of V.
Vector loglik_grad_v(const ObservationMatrix& data, const FactorState& state,
                     Index n);

/// Gradient of observed_loglik with respect to row k of Theta.
Vector loglik_grad_theta(const ObservationMatrix& data,
                         const FactorState& state, Index k);

/// Masked residual matrix R_nd = observed * (s(x_nd) - A'(psi_nd)). The full
/// gradients are R Theta' (for V) and V' R (for Theta).
Matrix loglik_residual(const ObservationMatrix& data, const Matrix& psi);

}  // namespace sparselvm
