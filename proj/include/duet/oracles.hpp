#pragma once

#include <functional>
#include <string>
#include <vector>

#include "duet/matrix.hpp"
#include "duet/rng.hpp"
#include "duet/temporal.hpp"

namespace duet::oracle {

// Result of one oracle run.  `passed` is judged against the tolerance the
// oracle itself declares (and records in `details`), never a constant buried
// in a test body.
struct OracleReport {
  std::string name;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  long n_cases = 0;
  bool passed = false;
  std::string details;

  std::string to_json_line() const;
};

// Direct O(T^2) evaluation of |sum_t x_t e^{-2pi i b t / T}| for b=1..T/2.
// Deliberately shares nothing with frequency_amplitude.
std::vector<double> dft_oracle(const std::vector<double>& x);

// Central-difference gradient of a scalar loss over a flat parameter vector.
// The loss is re-evaluated at theta twice up front; if the two values differ
// the loss is not deterministic and the check is meaningless.
// Throws Error(NonDeterministicLoss) in that case.
std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& loss_fn,
    std::vector<double> theta, double step);

// Monte-Carlo check that H = WH * (mu + eps .* softplus_sigma) is Gaussian
// with mean WH*mu and variance sum_j (WH_ij * softplus_sigma_j)^2 per
// component.  `sigma` here is the already-softplused scale (>= 0).
// Mean must sit within 3 standard errors, variance within 5% relative
// (exact zero required when the predicted variance is zero).
OracleReport gating_equivalence_check(const Matrix& mu, const Matrix& sigma,
                                      const Matrix& WH, long n_samples,
                                      RngStream& rng);

// Recomputes the TCM mixture without KeepTopK sparsity: unselected gate
// logits are replaced by -inf, a full softmax is taken, and all M extractor
// outputs are summed with those weights.  Same contract as tcm_forward.
TcmOutput dense_mixture_oracle(const Matrix& X_norm, const RouterParams& router,
                               const ExtractorParams& extractors, int k,
                               int kernel, RunMode mode, RngStream& rng);

}  // namespace duet::oracle
