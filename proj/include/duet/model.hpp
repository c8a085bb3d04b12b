#pragma once

#include <functional>
#include <string>

#include "duet/channel.hpp"
#include "duet/matrix.hpp"
#include "duet/temporal.hpp"

namespace duet {

enum class VariantKind { Full, NoTcm, NoCcm, FullAttention, TemporalInfo };

VariantKind variant_from_string(const std::string& s);
std::string to_string(VariantKind v);

struct DuetConfig {
  int T = 96;
  int F = 96;
  int N = 0;  // channels; filled from data
  int M = 4;
  int k = 2;
  int d = 128;
  int d0 = 64;
  int d_ff = 256;
  int kernel = 25;
  double gamma = 0.9;
  double temperature = 1.0;
  double std_floor = 1e-5;
  double d_floor = 1e-8;
  double lr = 1e-3;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 5;
  uint64_t seed = 0;
  VariantKind variant = VariantKind::Full;
  MetricKind metric_kind = MetricKind::LearnedMahalanobis;

  // Extractor count / top-k after variant rewiring (no_tcm collapses to a
  // single always-on extractor).
  int effective_M() const { return variant == VariantKind::NoTcm ? 1 : M; }
  int effective_k() const { return variant == VariantKind::NoTcm ? 1 : k; }
  // Frequency-bin count of the channel metric space (T in the time-domain
  // ablation).
  int channel_feature_dim() const { return variant == VariantKind::TemporalInfo ? T : T / 2; }

  void validate() const;
};

struct FusionParams {
  Matrix WQ, WK, WV;  // d x d
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // 1 x d
  Matrix ffn_W1;  // d x d_ff
  Matrix ffn_b1;  // 1 x d_ff
  Matrix ffn_W2;  // d_ff x d
  Matrix ffn_b2;  // 1 x d
};

struct PredictorParams {
  Matrix WO;  // d x F
};

struct ModelParams {
  RouterParams router;
  ExtractorParams extractors;
  MetricParams metric;
  FusionParams fusion;
  PredictorParams predictor;

  // Visits every learnable tensor with a stable name; order is fixed and is
  // the checkpoint serialization order.
  void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  void check_shapes(const DuetConfig& cfg) const;
};

// Kaiming-uniform weights, zero biases, identity A, unit LayerNorm gains.
// Values are snapped to the float32 grid so checkpoints round-trip exactly.
ModelParams init_params(const DuetConfig& cfg, RngStream rng);

}  // namespace duet
