#pragma once

#include <optional>
#include <vector>

#include "sparselvm/model_core.hpp"
#include "sparselvm/samplers.hpp"

namespace sparselvm {

/// Laplace prior gives LXPCA; Exponential (V > 0) gives NXPCA.
enum class WeakPrior { Laplace, Exponential };

struct WeakSparseHyper {
  double gamma_shape = 1.0;  // alpha
  double gamma_scale = 1.0;  // beta; prior mean of each rate is alpha * beta
  ConjugateHyper conj;

  void validate(Index dim) const;
};

WeakSparseHyper default_weak_hyper(const FamilySpec& family, Index dim);

struct WeakSparseState {
  FactorState factor;
  Vector b;
  WeakPrior prior = WeakPrior::Laplace;
};

struct LogJoint {
  double value = 0.0;
  bool domain_error = false;
};

/// log p(X | V, Theta) + log p(Theta | lambda, nu) + log p(V | b) + log p(b | alpha, beta).
/// A non-positive V entry under the Exponential prior yields -inf with
/// domain_error set.
LogJoint log_joint(const ObservationMatrix& data, const WeakSparseState& state,
                   const WeakSparseHyper& hyper);

/// Conjugate draw b_k ~ Gamma(alpha + N, rate = 1/beta + sum_n |v_nk|).
Vector gibbs_b(const WeakSparseState& state, const WeakSparseHyper& hyper, Rng& rng);

/// Packs (V, Theta) into the HMC position vector. Under the Exponential
/// prior the V block holds log V.
Vector pack_position(const WeakSparseState& state);
void unpack_position(const Vector& x, WeakSparseState& state);

/// Log density of the HMC position with b held fixed, including the
/// log-transform Jacobian for the Exponential prior.
double position_log_density(const ObservationMatrix& data, const WeakSparseState& state,
                            const WeakSparseHyper& hyper, const Vector& x, Vector& grad);

/// One chain: HMC on (V, Theta) followed by a Gibbs draw of b per iteration.
class WeakSparseSampler {
 public:
  WeakSparseSampler(WeakSparseState init, WeakSparseHyper hyper, const HmcConfig& cfg);

  void step(const ObservationMatrix& data, Rng& rng, bool adapting);

  const WeakSparseState& state() const { return state_; }
  const HmcKernel& kernel() const { return kernel_; }

 private:
  WeakSparseState state_;
  WeakSparseHyper hyper_;
  HmcKernel kernel_;
};

struct WeakChain {
  std::vector<WeakSparseState> samples;
  ChainDiagnostics diagnostics;
};

/// Random start: b at its prior mean, Theta ~ N(0, 0.1^2), V ~ N(0, 0.1^2)
/// (Laplace) or V = 0.1 exp(N(0, 0.1^2)) (Exponential).
WeakSparseState initial_weak_state(Index N, Index D, Index K, WeakPrior prior,
                                   const WeakSparseHyper& hyper, Rng& rng);

WeakChain hmc_fit(const ObservationMatrix& data, Index K, const WeakSparseHyper& hyper,
                  WeakPrior prior, const HmcConfig& cfg);

}  // namespace sparselvm
