#pragma once

#include <optional>
#include <vector>

#include "sparselvm/model_core.hpp"
#include "sparselvm/samplers.hpp"

namespace sparselvm {

/// Hyperparameters of the spike-and-slab factor model.
///
/// pi_k ~ Beta(e, f); the slab precision tau_k = 1 / sigma_k^2 ~ Gamma(ng_shape,
/// rate ng_rate) and mu_k | tau_k ~ N(ng_mean, 1 / (ng_precision_scale tau_k)).
struct SpikeSlabHyper {
  double e = 1.0;
  double f = 1.0;
  double ng_mean = 0.0;
  double ng_precision_scale = 1.0;
  double ng_shape = 1.0;
  double ng_rate = 1.0;
  ConjugateHyper conj;
  SliceConfig slice;

  void validate(Index dim) const;
};

SpikeSlabHyper default_spike_slab_hyper(const FamilySpec& family, Index dim);

/// Invariant: Z(n, k) == false exactly when V(n, k) == 0.0.
struct SpikeSlabState {
  FactorState factor;
  Mask Z;
  Vector pi;
  Vector mu;
  Vector sigma2;

  /// Number of (n, k) with z != (v != 0).
  Index zero_pattern_violations() const;
};

/// log[(1 - pi_k) p(x_n,obs | V with v_nk = 0, Theta)]; only row n's observed
/// entries enter, since every other term cancels in the z_nk ratio.
double spike_weight(Index n, Index k, const ObservationMatrix& data,
                    const SpikeSlabState& state, const SpikeSlabHyper& hyper);

struct SlabWeight {
  double log_weight = 0.0;
  /// Mode and curvature (negative second derivative) of the log integrand,
  /// valid unless `fallback` is set. For the Gaussian family these are the
  /// exact conditional posterior mean and precision of v_nk.
  double mode = 0.0;
  double precision = 0.0;
  bool fallback = false;
};

/// log[pi_k * integral p(x_n,obs | V with v_nk = v, Theta) N(v | mu_k, sigma_k^2) dv].
/// Exact for the Gaussian family; Laplace approximation (Newton mode search)
/// otherwise, with 20-point Gauss-Hermite quadrature as the fallback when the
/// Newton search does not converge.
SlabWeight slab_weight(Index n, Index k, const ObservationMatrix& data,
                       const SpikeSlabState& state, const SpikeSlabHyper& hyper);

struct ZvDraw {
  bool z = false;
  double v = 0.0;
  bool fallback = false;
  bool stalled = false;
};

/// Collapsed draw of (z_nk, v_nk): z from the normalised spike/slab weights,
/// then v = 0 for the spike, or a slice-sampling update on the slab
/// conditional started from a draw of its Gaussian (Laplace) approximation.
ZvDraw sample_zv(Index n, Index k, const ObservationMatrix& data,
                 const SpikeSlabState& state, const SpikeSlabHyper& hyper, Rng& rng);

/// pi_k ~ Beta(e + sum_n z_nk, f + N - sum_n z_nk).
Vector gibbs_pi(const SpikeSlabState& state, const SpikeSlabHyper& hyper, Rng& rng);

struct MuSigma {
  Vector mu;
  Vector sigma2;
};

/// Normal-Gamma posterior draw per factor given the active slab values.
MuSigma gibbs_mu_sigma(const SpikeSlabState& state, const SpikeSlabHyper& hyper, Rng& rng);

/// Element-wise slice update of Theta under observed log-likelihood plus the
/// conjugate log-prior.
Matrix sample_theta(const ObservationMatrix& data, const SpikeSlabState& state,
                    const SpikeSlabHyper& hyper, Rng& rng);

/// Log-joint up to constants dropped by the conjugate prior.
double spike_slab_log_joint(const ObservationMatrix& data, const SpikeSlabState& state,
                            const SpikeSlabHyper& hyper);

struct SpikeSlabConfig {
  ChainConfig chain;
  /// Random k-permutation per row and sweep instead of systematic order.
  bool random_scan = false;
  /// Slice updates of each slab value after its initial draw.
  int slab_slice_steps = 1;
  /// Workers for the row-parallel (z, v) step; results do not depend on it.
  unsigned threads = 1;

  void validate() const;
};

struct SpikeSlabChain {
  std::vector<SpikeSlabState> samples;
  ChainDiagnostics diagnostics;
};

/// Z ~ Bernoulli(0.5), pi = 0.5, mu = ng_mean, sigma2 = ng_rate / ng_shape,
/// active slab values ~ N(mu, sigma2), Theta ~ N(0, 0.1^2).
SpikeSlabState initial_spike_slab_state(Index N, Index D, Index K,
                                        const SpikeSlabHyper& hyper, Rng& rng);

/// Metropolis-within-Gibbs: per sweep (1) sample_zv for every (n, k),
/// (2) sample_theta, (3) gibbs_mu_sigma then gibbs_pi.
SpikeSlabChain fit_spike_slab(const ObservationMatrix& data, Index K,
                              const SpikeSlabHyper& hyper, const SpikeSlabConfig& cfg);

/// One full sweep in place; exposed for the sweep-level tests.
struct SweepStats {
  long fallbacks = 0;
  long stalls = 0;
};
SweepStats spike_slab_sweep(const ObservationMatrix& data, SpikeSlabState& state,
                            const SpikeSlabHyper& hyper, const SpikeSlabConfig& cfg,
                            long sweep_index);

/// Nodes and weights of the n-point Gauss-Hermite rule for weight exp(-x^2).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
const GaussHermite& gauss_hermite_20();

}  // namespace sparselvm
