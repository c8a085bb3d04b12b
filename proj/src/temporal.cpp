#include "duet/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace duet {

namespace {

// y = relu(x * W0) * W1 for a row vector x.
std::vector<double> two_layer(const std::vector<double>& x, const Matrix& w0, const Matrix& w1) {
  if (static_cast<int>(x.size()) != w0.rows)
    throw Error(ErrorKind::ShapeMismatch, "router input length != T");
  if (w0.cols != w1.rows) throw Error(ErrorKind::ShapeMismatch, "router hidden dims disagree");
  std::vector<double> h(w0.cols, 0.0);
  for (int i = 0; i < w0.rows; ++i) {
    double xi = x[i];
    if (xi == 0.0) continue;
    for (int j = 0; j < w0.cols; ++j) h[j] += xi * w0(i, j);
  }
  for (double& e : h) e = std::max(e, 0.0);
  std::vector<double> out(w1.cols, 0.0);
  for (int i = 0; i < w1.rows; ++i) {
    double hi = h[i];
    if (hi == 0.0) continue;
    for (int j = 0; j < w1.cols; ++j) out[j] += hi * w1(i, j);
  }
  return out;
}

}  // namespace

void encode_distribution(const std::vector<double>& x, const RouterParams& params,
                         std::vector<double>* mu, std::vector<double>* sigma_raw) {
  *mu = two_layer(x, params.W0_mu, params.W1_mu);
  *sigma_raw = two_layer(x, params.W0_sigma, params.W1_sigma);
}

std::vector<double> sample_gate_logits(const std::vector<double>& mu,
                                       const std::vector<double>& sigma_raw,
                                       const std::vector<double>& eps, const RouterParams& params) {
  int m = static_cast<int>(mu.size());
  std::vector<double> z(m);
  for (int i = 0; i < m; ++i) z[i] = mu[i] + eps[i] * softplus(sigma_raw[i]);
  std::vector<double> h(m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) h[i] += params.WH(i, j) * z[j];
  return h;
}

GateSelection keep_top_k(const std::vector<double>& logits, int k) {
  int m = static_cast<int>(logits.size());
  if (k < 1 || k > m) throw Error(ErrorKind::InvalidK, "k must be in [1, M]");
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  // Stable sort by descending logit keeps the tie-break at the lowest index.
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return logits[a] > logits[b]; });
  GateSelection sel;
  sel.logits = logits;
  sel.indices.assign(order.begin(), order.begin() + k);
  std::sort(sel.indices.begin(), sel.indices.end());
  double mx = -1e300;
  for (int i : sel.indices) mx = std::max(mx, logits[i]);
  double denom = 0;
  sel.weights.resize(k);
  for (int i = 0; i < k; ++i) {
    sel.weights[i] = std::exp(logits[sel.indices[i]] - mx);
    denom += sel.weights[i];
  }
  for (double& w : sel.weights) w /= denom;
  return sel;
}

DecompositionPair decompose_series(const std::vector<double>& x, int kernel) {
  int t = static_cast<int>(x.size());
  if (kernel <= 0 || kernel % 2 == 0 || kernel > 2 * t - 1)
    throw Error(ErrorKind::InvalidKernel, "kernel must be odd and in [1, 2T-1]");
  int half = (kernel - 1) / 2;
  DecompositionPair out;
  out.trend.resize(t);
  out.seasonal.resize(t);
  for (int i = 0; i < t; ++i) {
    double acc = 0;
    for (int j = i - half; j <= i + half; ++j) acc += x[std::clamp(j, 0, t - 1)];
    out.trend[i] = acc / kernel;
    out.seasonal[i] = x[i] - out.trend[i];
  }
  return out;
}

std::vector<double> extract_pattern(const DecompositionPair& pair, int extractor_id,
                                    const ExtractorParams& params) {
  if (extractor_id < 0 || extractor_id >= params.count())
    throw Error(ErrorKind::UnknownExtractor, "extractor id out of range");
  const Matrix& wt = params.Wt[extractor_id];
  const Matrix& ws = params.Ws[extractor_id];
  if (static_cast<int>(pair.trend.size()) != wt.rows)
    throw Error(ErrorKind::ShapeMismatch, "extractor input length != T");
  std::vector<double> out(wt.cols, 0.0);
  for (int i = 0; i < wt.rows; ++i) {
    double tr = pair.trend[i], se = pair.seasonal[i];
    for (int j = 0; j < wt.cols; ++j) out[j] += tr * wt(i, j) + se * ws(i, j);
  }
  return out;
}

std::vector<double> aggregate_features(const std::vector<std::vector<double>>& features,
                                       const GateSelection& gates) {
  if (features.size() != gates.indices.size())
    throw Error(ErrorKind::ShapeMismatch, "features not aligned with gate selection");
  if (features.empty()) throw Error(ErrorKind::ShapeMismatch, "empty feature list");
  std::vector<double> out(features[0].size(), 0.0);
  for (size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != out.size())
      throw Error(ErrorKind::ShapeMismatch, "feature width mismatch");
    for (size_t j = 0; j < out.size(); ++j) out[j] += gates.weights[i] * features[i][j];
  }
  return out;
}

TcmOutput tcm_forward(const Matrix& X_norm, const RouterParams& router,
                      const ExtractorParams& extractors, int k, int kernel, RunMode mode,
                      RngStream& rng) {
  int n = X_norm.rows;
  int m = router.WH.rows;
  int d = extractors.Wt.empty() ? 0 : extractors.Wt[0].cols;
  TcmOutput out;
  out.features = Matrix(n, d);
  out.gates.reserve(n);
  std::vector<double> x(X_norm.cols);
  for (int c = 0; c < n; ++c) {
    for (int t = 0; t < X_norm.cols; ++t) x[t] = X_norm(c, t);
    std::vector<double> mu, sigma_raw;
    encode_distribution(x, router, &mu, &sigma_raw);
    std::vector<double> eps(m, 0.0);
    if (mode == RunMode::Train)
      for (double& e : eps) e = rng.normal();
    GateSelection sel = keep_top_k(sample_gate_logits(mu, sigma_raw, eps, router), k);
    sel.noise_draw = eps;
    DecompositionPair pair = decompose_series(x, kernel);
    std::vector<std::vector<double>> feats;
    feats.reserve(sel.indices.size());
    for (int id : sel.indices) feats.push_back(extract_pattern(pair, id, extractors));
    std::vector<double> row = aggregate_features(feats, sel);
    for (int j = 0; j < d; ++j) out.features(c, j) = row[j];
    out.gates.push_back(std::move(sel));
  }
  return out;
}

}  // namespace duet
