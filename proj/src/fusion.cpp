#include "duet/fusion.hpp"

#include <cmath>

namespace duet {

namespace {

constexpr double kMaskedScore = -1e9;

void row_softmax_inplace(Matrix& m) {
  for (int i = 0; i < m.rows; ++i) {
    double mx = -1e300;
    for (int j = 0; j < m.cols; ++j) mx = std::max(mx, m(i, j));
    double denom = 0;
    for (int j = 0; j < m.cols; ++j) {
      m(i, j) = std::exp(m(i, j) - mx);
      denom += m(i, j);
    }
    for (int j = 0; j < m.cols; ++j) m(i, j) /= denom;
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

Matrix layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
  require_shape(gain, 1, x.cols, "layer norm gain");
  require_shape(bias, 1, x.cols, "layer norm bias");
  Matrix out(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    double mean = 0;
    for (int j = 0; j < x.cols; ++j) mean += x(i, j);
    mean /= x.cols;
    double var = 0;
    for (int j = 0; j < x.cols; ++j) {
      double d = x(i, j) - mean;
      var += d * d;
    }
    var /= x.cols;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < x.cols; ++j) out(i, j) = (x(i, j) - mean) * inv * gain(0, j) + bias(0, j);
  }
  return out;
}

Matrix masked_attention(const Matrix& X_temp, const ChannelMask& mask, const FusionParams& params) {
  int n = X_temp.rows, d = X_temp.cols;
  require_shape(mask.hard, n, n, "channel mask");
  for (int i = 0; i < n; ++i) {
    bool live = false;
    for (int j = 0; j < n; ++j) live = live || mask.hard(i, j) != 0.0;
    if (!live) throw Error(ErrorKind::DeadRow, "mask row " + std::to_string(i) + " is all zeros");
  }
  Matrix q = matmul(X_temp, params.WQ);
  Matrix kk = matmul(X_temp, params.WK);
  Matrix v = matmul(X_temp, params.WV);
  Matrix scores = matmul(q, transpose(kk));
  double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double m = mask.hard(i, j);
      scores(i, j) = scores(i, j) * scale * m + (1.0 - m) * kMaskedScore;
    }
  row_softmax_inplace(scores);
  return matmul(scores, v);
}

Matrix fusion_block(const Matrix& X_temp, const ChannelMask& mask, const FusionParams& params) {
  Matrix h = add(X_temp, masked_attention(layer_norm_rows(X_temp, params.ln1_gain, params.ln1_bias),
                                          mask, params));
  Matrix z = layer_norm_rows(h, params.ln2_gain, params.ln2_bias);
  Matrix f1 = matmul(z, params.ffn_W1);
  for (int i = 0; i < f1.rows; ++i)
    for (int j = 0; j < f1.cols; ++j) f1(i, j) = gelu(f1(i, j) + params.ffn_b1(0, j));
  Matrix f2 = matmul(f1, params.ffn_W2);
  for (int i = 0; i < f2.rows; ++i)
    for (int j = 0; j < f2.cols; ++j) f2(i, j) += params.ffn_b2(0, j) + h(i, j);
  return f2;
}

Matrix predict(const Matrix& X_mix, const PredictorParams& params) {
  if (X_mix.cols != params.WO.rows)
    throw Error(ErrorKind::ShapeMismatch, "predictor input width != d");
  return matmul(X_mix, params.WO);
}

bool variant_forced_mask(VariantKind v, int n, ChannelMask* out) {
  if (v == VariantKind::NoCcm) {
    out->hard = Matrix::identity(n);
    out->surrogate = out->hard;
    return true;
  }
  if (v == VariantKind::FullAttention) {
    out->hard = Matrix::filled(n, n, 1.0);
    out->surrogate = out->hard;
    return true;
  }
  return false;
}

ForwardTrace duet_forward_trace(const Matrix& X, const ModelParams& params, const DuetConfig& cfg,
                                RunMode mode, const RngStream& rng) {
  ForwardTrace tr;
  auto [xn, stats] = instance_normalize(X, cfg.std_floor);
  tr.X_norm = std::move(xn);
  tr.stats = std::move(stats);

  RngStream gate_rng = rng.substream("gate");
  RngStream mask_rng = rng.substream("mask");
  tr.tcm = tcm_forward(tr.X_norm, params.router, params.extractors, cfg.effective_k(), cfg.kernel,
                       mode, gate_rng);
  tr.ccm = ccm_forward(tr.X_norm, params.metric, cfg.gamma, cfg.temperature, mode, mask_rng,
                       cfg.variant == VariantKind::TemporalInfo, cfg.d_floor);
  if (!variant_forced_mask(cfg.variant, X.rows, &tr.mask)) tr.mask = tr.ccm.mask;
  tr.X_mix = fusion_block(tr.tcm.features, tr.mask, params.fusion);
  tr.Y_hat_norm = predict(tr.X_mix, params.predictor);
  tr.Y_hat = instance_denormalize(tr.Y_hat_norm, tr.stats);
  return tr;
}

Matrix duet_forward(const Matrix& X, const ModelParams& params, const DuetConfig& cfg, RunMode mode,
                    const RngStream& rng) {
  return duet_forward_trace(X, params, cfg, mode, rng).Y_hat;
}

}  // namespace duet
