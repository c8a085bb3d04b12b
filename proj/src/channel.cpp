#include "duet/channel.hpp"

#include <cmath>

namespace duet {

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "learned_mahalanobis" || s == "mahalanobis" || s == "learned")
    return MetricKind::LearnedMahalanobis;
  if (s == "euclidean") return MetricKind::Euclidean;
  if (s == "cosine") return MetricKind::Cosine;
  if (s == "random") return MetricKind::Random;
  throw Error(ErrorKind::InvalidSpec, "unknown metric kind '" + s + "'");
}

std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::LearnedMahalanobis: return "learned_mahalanobis";
    case MetricKind::Euclidean: return "euclidean";
    case MetricKind::Cosine: return "cosine";
    case MetricKind::Random: return "random";
  }
  return "?";
}

std::vector<double> frequency_amplitude(const std::vector<double>& x) {
  int t = static_cast<int>(x.size());
  if (t < 2) throw Error(ErrorKind::SeriesTooShort, "frequency_amplitude needs T >= 2");
  int b = t / 2;
  std::vector<double> amps(b);
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (int k = 1; k <= b; ++k) {
    double re = 0, im = 0;
    for (int j = 0; j < t; ++j) {
      double ang = two_pi * k * j / t;
      re += x[j] * std::cos(ang);
      im -= x[j] * std::sin(ang);
    }
    amps[k - 1] = std::hypot(re, im);
  }
  return amps;
}

double channel_distance(const std::vector<double>& a, const std::vector<double>& b,
                        const MetricParams& params) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "channel_distance length mismatch");
  int n = static_cast<int>(a.size());
  switch (params.metric_kind) {
    case MetricKind::LearnedMahalanobis: {
      if (params.A.cols != n)
        throw Error(ErrorKind::ShapeMismatch, "metric matrix width != feature length");
      // (a-b)^T A^T A (a-b) = ||A (a-b)||^2
      double acc = 0;
      for (int i = 0; i < params.A.rows; ++i) {
        double s = 0;
        for (int j = 0; j < n; ++j) s += params.A(i, j) * (a[j] - b[j]);
        acc += s * s;
      }
      return acc;
    }
    case MetricKind::Euclidean: {
      double acc = 0;
      for (int j = 0; j < n; ++j) {
        double d = a[j] - b[j];
        acc += d * d;
      }
      return acc;
    }
    case MetricKind::Cosine: {
      double na = 0, nb = 0, dot = 0;
      for (int j = 0; j < n; ++j) {
        na += a[j] * a[j];
        nb += b[j] * b[j];
        dot += a[j] * b[j];
      }
      if (na == 0.0 || nb == 0.0) return 1.0;  // zero-vector guard
      return 1.0 - dot / std::sqrt(na * nb);
    }
    case MetricKind::Random:
      return 0.0;  // distance unused; sample_mask draws fair coins
  }
  return 0.0;
}

ChannelRelation build_probability_matrix(const Matrix& D, double gamma, double d_floor) {
  int n = D.rows;
  if (D.cols != n) throw Error(ErrorKind::ShapeMismatch, "D must be square");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (std::abs(D(i, j) - D(j, i)) > 1e-6)
        throw Error(ErrorKind::AsymmetricDistance, "distance matrix is not symmetric");
  ChannelRelation rel;
  rel.D = D;
  rel.C = Matrix(n, n);
  rel.P = Matrix(n, n);
  for (int i = 0; i < n; ++i) {
    double row_max = 0;
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      rel.C(i, j) = 1.0 / std::max(D(i, j), d_floor);
      row_max = std::max(row_max, rel.C(i, j));
    }
    rel.P(i, i) = 1.0;
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      rel.P(i, j) = row_max > 0 ? rel.C(i, j) * gamma / row_max : 0.0;
    }
  }
  return rel;
}

ChannelMask sample_mask(const ChannelRelation& rel, double temperature, RunMode mode, RngStream& rng,
                        MetricKind metric_kind, double eval_threshold) {
  int n = rel.P.rows;
  ChannelMask mask;
  mask.hard = Matrix(n, n);
  mask.surrogate = Matrix(n, n);
  const double p_eps = 1e-6;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        mask.hard(i, j) = 1.0;
        mask.surrogate(i, j) = 1.0;
        continue;
      }
      if (metric_kind == MetricKind::Random) {
        double v = mode == RunMode::Train ? (rng.uniform() < 0.5 ? 0.0 : 1.0) : 1.0;
        mask.hard(i, j) = v;
        mask.surrogate(i, j) = v;
        continue;
      }
      double p = rel.P(i, j);
      if (mode == RunMode::Eval) {
        double v = p >= eval_threshold ? 1.0 : 0.0;
        mask.hard(i, j) = v;
        mask.surrogate(i, j) = v;
        continue;
      }
      // Draws are consumed even on the 0/1 short-circuit so the stream
      // position does not depend on data values.
      double g1 = rng.gumbel();
      double g0 = rng.gumbel();
      if (p <= 0.0 || p >= 1.0) {
        double v = p >= 1.0 ? 1.0 : 0.0;
        mask.hard(i, j) = v;
        mask.surrogate(i, j) = v;
        continue;
      }
      double pc = std::min(std::max(p, p_eps), 1.0 - p_eps);
      double logit = std::log(pc) - std::log(1.0 - pc);
      double soft = 1.0 / (1.0 + std::exp(-(logit + g1 - g0) / temperature));
      mask.surrogate(i, j) = soft;
      mask.hard(i, j) = soft > 0.5 ? 1.0 : 0.0;
    }
  }
  return mask;
}

std::vector<std::vector<double>> channel_metric_features(const Matrix& X_norm, bool temporal_domain) {
  std::vector<std::vector<double>> feats(X_norm.rows);
  for (int c = 0; c < X_norm.rows; ++c) {
    std::vector<double> row(X_norm.cols);
    for (int t = 0; t < X_norm.cols; ++t) row[t] = X_norm(c, t);
    feats[c] = temporal_domain ? std::move(row) : frequency_amplitude(row);
  }
  return feats;
}

CcmOutput ccm_forward(const Matrix& X_norm, const MetricParams& params, double gamma,
                      double temperature, RunMode mode, RngStream& rng, bool temporal_domain,
                      double d_floor) {
  int n = X_norm.rows;
  auto feats = channel_metric_features(X_norm, temporal_domain);
  Matrix d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double dist = channel_distance(feats[i], feats[j], params);
      d(i, j) = dist;
      d(j, i) = dist;
    }
  CcmOutput out;
  out.relation = build_probability_matrix(d, gamma, d_floor);
  out.mask = sample_mask(out.relation, temperature, mode, rng, params.metric_kind);
  return out;
}

}  // namespace duet
