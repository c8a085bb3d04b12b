#pragma once

#include <vector>

#include "duet/matrix.hpp"
#include "duet/rng.hpp"

namespace duet {

// Distribution router weights (Encoder_mu, Encoder_sigma, projection W^H).
struct RouterParams {
  Matrix W0_mu;     // T x d0
  Matrix W1_mu;     // d0 x M
  Matrix W0_sigma;  // T x d0
  Matrix W1_sigma;  // d0 x M
  Matrix WH;        // M x M
};

// One trend/seasonal projection pair per extractor.
struct ExtractorParams {
  std::vector<Matrix> Wt;  // M matrices, T x d
  std::vector<Matrix> Ws;  // M matrices, T x d
  int count() const { return static_cast<int>(Wt.size()); }
};

struct GateSelection {
  std::vector<double> logits;   // H, length M
  std::vector<int> indices;     // k selected extractors, ascending
  std::vector<double> weights;  // softmax over selected logits, length k
  std::vector<double> noise_draw;  // eps realization, length M (zeros in eval)

  // Dense M-vector with zeros at unselected extractors.
  std::vector<double> dense() const {
    std::vector<double> g(logits.size(), 0.0);
    for (size_t i = 0; i < indices.size(); ++i) g[indices[i]] = weights[i];
    return g;
  }
};

struct DecompositionPair {
  std::vector<double> trend;
  std::vector<double> seasonal;
};

enum class RunMode { Train, Eval };

// mu = ReLU(x*W0_mu)*W1_mu ; sigma_raw = ReLU(x*W0_sigma)*W1_sigma (pre-softplus).
void encode_distribution(const std::vector<double>& x, const RouterParams& params,
                         std::vector<double>* mu, std::vector<double>* sigma_raw);

// H = WH * (mu + eps (*) softplus(sigma_raw))
std::vector<double> sample_gate_logits(const std::vector<double>& mu,
                                       const std::vector<double>& sigma_raw,
                                       const std::vector<double>& eps, const RouterParams& params);

// Top-k by logit, ties broken by lowest index; softmax over selected only.
GateSelection keep_top_k(const std::vector<double>& logits, int k);

// Centered moving average with replicate padding; seasonal = x - trend.
DecompositionPair decompose_series(const std::vector<double>& x, int kernel);

std::vector<double> extract_pattern(const DecompositionPair& pair, int extractor_id,
                                    const ExtractorParams& params);

std::vector<double> aggregate_features(const std::vector<std::vector<double>>& features,
                                       const GateSelection& gates);

struct TcmOutput {
  Matrix features;  // N x d
  std::vector<GateSelection> gates;  // one per channel
};

// Channel-independent TCM forward. In train mode eps is drawn from rng
// (M normals per channel, in channel order); in eval mode eps = 0 and rng is
// not consumed.
TcmOutput tcm_forward(const Matrix& X_norm, const RouterParams& router,
                      const ExtractorParams& extractors, int k, int kernel, RunMode mode,
                      RngStream& rng);

}  // namespace duet
