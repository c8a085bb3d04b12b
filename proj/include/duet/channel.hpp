#pragma once

#include <string>
#include <vector>

#include "duet/matrix.hpp"
#include "duet/rng.hpp"
#include "duet/temporal.hpp"  // RunMode

namespace duet {

enum class MetricKind { LearnedMahalanobis, Euclidean, Cosine, Random };

MetricKind metric_kind_from_string(const std::string& s);
std::string to_string(MetricKind k);

// Q = A^T A is PSD by construction; B is the frequency-bin count.
struct MetricParams {
  Matrix A;  // B x B
  MetricKind metric_kind = MetricKind::LearnedMahalanobis;
};

struct ChannelRelation {
  Matrix D;  // N x N distances
  Matrix C;  // N x N relationship
  Matrix P;  // N x N probabilities
};

// Hard binary mask with a real-valued straight-through surrogate.
struct ChannelMask {
  Matrix hard;       // entries in {0,1}, unit diagonal
  Matrix surrogate;  // soft class-1 probabilities (equals hard in eval mode)
};

// |DFT(x)| at bins 1..floor(T/2) (DC excluded), unnormalized convention.
std::vector<double> frequency_amplitude(const std::vector<double>& x);

double channel_distance(const std::vector<double>& a, const std::vector<double>& b,
                        const MetricParams& params);

ChannelRelation build_probability_matrix(const Matrix& D, double gamma, double d_floor = 1e-8);

// Train mode: two-class Gumbel-softmax per off-diagonal entry (two gumbel
// draws consumed per entry, row-major); eval mode: threshold at 0.5, rng not
// consumed. Random metric replaces P with fair coins (one uniform per entry).
ChannelMask sample_mask(const ChannelRelation& rel, double temperature, RunMode mode, RngStream& rng,
                        MetricKind metric_kind = MetricKind::LearnedMahalanobis,
                        double eval_threshold = 0.5);

struct CcmOutput {
  ChannelMask mask;
  ChannelRelation relation;
};

// temporal_domain=true computes distances on raw X_norm rows instead of
// amplitudes (the time-domain ablation).
CcmOutput ccm_forward(const Matrix& X_norm, const MetricParams& params, double gamma,
                      double temperature, RunMode mode, RngStream& rng, bool temporal_domain = false,
                      double d_floor = 1e-8);

// Feature rows the metric runs on: amplitudes, or raw rows in the
// time-domain ablation.
std::vector<std::vector<double>> channel_metric_features(const Matrix& X_norm, bool temporal_domain);

}  // namespace duet
