#include "duet/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "duet/errors.hpp"

namespace duet::oracle {

std::string OracleReport::to_json_line() const {
  std::ostringstream os;
  os.precision(17);
  auto esc = [](const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    return out;
  };
  os << "{\"name\":\"" << esc(name) << "\",\"max_abs_error\":" << max_abs_error
     << ",\"max_rel_error\":" << max_rel_error << ",\"n_cases\":" << n_cases
     << ",\"passed\":" << (passed ? "true" : "false") << ",\"details\":\""
     << esc(details) << "\"}";
  return os.str();
}

std::vector<double> dft_oracle(const std::vector<double>& x) {
  const int T = static_cast<int>(x.size());
  if (T < 2) throw Error(ErrorKind::SeriesTooShort, "dft_oracle: need T >= 2");
  const int B = T / 2;
  std::vector<double> amp(B);
  const double two_pi = 2.0 * std::acos(-1.0);
  for (int b = 1; b <= B; ++b) {
    double re = 0.0, im = 0.0;
    for (int t = 0; t < T; ++t) {
      double ang = two_pi * static_cast<double>(b) * static_cast<double>(t) / T;
      re += x[t] * std::cos(ang);
      im -= x[t] * std::sin(ang);
    }
    amp[b - 1] = std::hypot(re, im);
  }
  return amp;
}

std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& loss_fn,
    std::vector<double> theta, double step) {
  const double f0 = loss_fn(theta);
  const double f1 = loss_fn(theta);
  if (!(f0 == f1)) {
    throw Error(ErrorKind::NonDeterministicLoss,
                "finite_difference_gradient: two evaluations at identical "
                "parameters disagree");
  }
  std::vector<double> grad(theta.size());
  for (size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + step;
    const double fp = loss_fn(theta);
    theta[i] = saved - step;
    const double fm = loss_fn(theta);
    theta[i] = saved;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

OracleReport gating_equivalence_check(const Matrix& mu, const Matrix& sigma,
                                      const Matrix& WH, long n_samples,
                                      RngStream& rng) {
  OracleReport rep;
  rep.name = "gating_equivalence";
  if (n_samples < 10000)
    throw Error(ErrorKind::InvalidSpec, "gating_equivalence_check: n_samples < 10000");
  const int M = mu.rows;
  require_shape(sigma, M, 1, "gating_equivalence sigma");
  require_shape(WH, M, M, "gating_equivalence WH");

  // Predicted Gaussian per component.
  std::vector<double> pred_mean(M, 0.0), pred_var(M, 0.0);
  for (int i = 0; i < M; ++i) {
    for (int j = 0; j < M; ++j) {
      pred_mean[i] += WH(i, j) * mu(j, 0);
      pred_var[i] += WH(i, j) * WH(i, j) * sigma(j, 0) * sigma(j, 0);
    }
  }

  // Running sums for empirical mean/variance, plus exact range for the
  // degenerate (zero-variance) case.
  std::vector<double> s1(M, 0.0), s2(M, 0.0);
  std::vector<double> lo(M, std::numeric_limits<double>::infinity());
  std::vector<double> hi(M, -std::numeric_limits<double>::infinity());
  std::vector<double> eps(M), h(M);
  for (long n = 0; n < n_samples; ++n) {
    for (int j = 0; j < M; ++j) eps[j] = rng.normal();
    for (int i = 0; i < M; ++i) {
      double acc = 0.0;
      for (int j = 0; j < M; ++j) acc += WH(i, j) * (mu(j, 0) + eps[j] * sigma(j, 0));
      h[i] = acc;
    }
    for (int i = 0; i < M; ++i) {
      s1[i] += h[i];
      s2[i] += h[i] * h[i];
      lo[i] = std::min(lo[i], h[i]);
      hi[i] = std::max(hi[i], h[i]);
    }
  }

  bool ok = true;
  double worst_mean_z = 0.0, worst_var_rel = 0.0;
  for (int i = 0; i < M; ++i) {
    const double emean = s1[i] / n_samples;
    const double evar =
        std::max(0.0, s2[i] / n_samples - emean * emean) * n_samples / (n_samples - 1);
    if (pred_var[i] == 0.0) {
      // Degenerate component: every sample must equal the mean exactly.
      if (lo[i] != pred_mean[i] || hi[i] != pred_mean[i]) ok = false;
      continue;
    }
    const double se = std::sqrt(pred_var[i] / n_samples);
    const double mean_z = std::abs(emean - pred_mean[i]) / se;
    const double var_rel = std::abs(evar - pred_var[i]) / pred_var[i];
    worst_mean_z = std::max(worst_mean_z, mean_z);
    worst_var_rel = std::max(worst_var_rel, var_rel);
    if (mean_z > 3.0 || var_rel > 0.05) ok = false;
  }
  rep.n_cases = n_samples;
  rep.max_abs_error = worst_mean_z;
  rep.max_rel_error = worst_var_rel;
  rep.passed = ok;
  std::ostringstream d;
  d << "mean within 3 SE (worst z=" << worst_mean_z << "), variance within 5% "
    << "relative (worst " << worst_var_rel << "), M=" << M;
  rep.details = d.str();
  return rep;
}

TcmOutput dense_mixture_oracle(const Matrix& X_norm, const RouterParams& router,
                               const ExtractorParams& extractors, int k,
                               int kernel, RunMode mode, RngStream& rng) {
  const int N = X_norm.rows;
  const int M = extractors.count();
  const int d = extractors.Wt[0].cols;
  if (k < 1 || k > M) throw Error(ErrorKind::InvalidK, "dense_mixture_oracle: bad k");

  TcmOutput out;
  out.features = Matrix::filled(N, d, 0.0);
  out.gates.resize(N);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < N; ++c) {
    std::vector<double> x(X_norm.cols);
    for (int t = 0; t < X_norm.cols; ++t) x[t] = X_norm(c, t);

    std::vector<double> mu, sraw;
    encode_distribution(x, router, &mu, &sraw);
    std::vector<double> eps(M, 0.0);
    if (mode == RunMode::Train)
      for (int j = 0; j < M; ++j) eps[j] = rng.normal();
    std::vector<double> logits = sample_gate_logits(mu, sraw, eps, router);

    // Literal -inf substitution outside the top k, then a full-width softmax.
    std::vector<int> order(M);
    for (int j = 0; j < M; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logits[a] > logits[b]; });
    std::vector<double> capped(M, neg_inf);
    for (int r = 0; r < k; ++r) capped[order[r]] = logits[order[r]];
    double mx = *std::max_element(capped.begin(), capped.end());
    std::vector<double> w(M, 0.0);
    double z = 0.0;
    for (int j = 0; j < M; ++j) {
      w[j] = std::isinf(capped[j]) ? 0.0 : std::exp(capped[j] - mx);
      z += w[j];
    }
    for (int j = 0; j < M; ++j) w[j] /= z;

    DecompositionPair pair = decompose_series(x, kernel);
    for (int j = 0; j < M; ++j) {
      if (w[j] == 0.0) continue;
      std::vector<double> f = extract_pattern(pair, j, extractors);
      for (int u = 0; u < d; ++u) out.features(c, u) += w[j] * f[u];
    }

    GateSelection sel;
    sel.logits = logits;
    sel.noise_draw = eps;
    for (int r = 0; r < k; ++r) sel.indices.push_back(order[r]);
    std::sort(sel.indices.begin(), sel.indices.end());
    for (int idx : sel.indices) sel.weights.push_back(w[idx]);
    out.gates[c] = sel;
  }
  return out;
}

}  // namespace duet::oracle
