#include "duet/model.hpp"

#include <cmath>

namespace duet {

VariantKind variant_from_string(const std::string& s) {
  if (s == "full") return VariantKind::Full;
  if (s == "no_tcm") return VariantKind::NoTcm;
  if (s == "no_ccm") return VariantKind::NoCcm;
  if (s == "full_attention") return VariantKind::FullAttention;
  if (s == "temporal_info") return VariantKind::TemporalInfo;
  throw Error(ErrorKind::InvalidSpec, "unknown variant '" + s + "'");
}

std::string to_string(VariantKind v) {
  switch (v) {
    case VariantKind::Full: return "full";
    case VariantKind::NoTcm: return "no_tcm";
    case VariantKind::NoCcm: return "no_ccm";
    case VariantKind::FullAttention: return "full_attention";
    case VariantKind::TemporalInfo: return "temporal_info";
  }
  return "?";
}

void DuetConfig::validate() const {
  if (T <= 0 || F <= 0 || M <= 0 || d <= 0 || d0 <= 0 || d_ff <= 0)
    throw Error(ErrorKind::InvalidConfig, "all dimensions must be positive");
  if (k < 1 || k > M) throw Error(ErrorKind::InvalidConfig, "k must satisfy 1 <= k <= M");
  if (!(gamma > 0 && gamma < 1)) throw Error(ErrorKind::InvalidConfig, "gamma must be in (0,1)");
  if (kernel <= 0 || kernel % 2 == 0)
    throw Error(ErrorKind::InvalidConfig, "kernel must be a positive odd integer");
  if (kernel > 2 * T - 1) throw Error(ErrorKind::InvalidConfig, "kernel must be <= 2T-1");
  if (!(temperature > 0)) throw Error(ErrorKind::InvalidConfig, "temperature must be positive");
  if (T < 2) throw Error(ErrorKind::InvalidConfig, "T must be >= 2");
  if (batch_size <= 0 || max_epochs <= 0 || patience < 0)
    throw Error(ErrorKind::InvalidConfig, "invalid training knobs");
}

void ModelParams::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("router.W0_mu", router.W0_mu);
  fn("router.W1_mu", router.W1_mu);
  fn("router.W0_sigma", router.W0_sigma);
  fn("router.W1_sigma", router.W1_sigma);
  fn("router.WH", router.WH);
  for (int i = 0; i < extractors.count(); ++i) {
    fn("extractor." + std::to_string(i) + ".Wt", extractors.Wt[i]);
    fn("extractor." + std::to_string(i) + ".Ws", extractors.Ws[i]);
  }
  fn("metric.A", metric.A);
  fn("fusion.WQ", fusion.WQ);
  fn("fusion.WK", fusion.WK);
  fn("fusion.WV", fusion.WV);
  fn("fusion.ln1_gain", fusion.ln1_gain);
  fn("fusion.ln1_bias", fusion.ln1_bias);
  fn("fusion.ln2_gain", fusion.ln2_gain);
  fn("fusion.ln2_bias", fusion.ln2_bias);
  fn("fusion.ffn_W1", fusion.ffn_W1);
  fn("fusion.ffn_b1", fusion.ffn_b1);
  fn("fusion.ffn_W2", fusion.ffn_W2);
  fn("fusion.ffn_b2", fusion.ffn_b2);
  fn("predictor.WO", predictor.WO);
}

void ModelParams::for_each_tensor(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each_tensor(
      [&](const std::string& name, Matrix& m) { fn(name, m); });
}

void ModelParams::check_shapes(const DuetConfig& cfg) const {
  int m = cfg.effective_M();
  int b = cfg.channel_feature_dim();
  require_shape(router.W0_mu, cfg.T, cfg.d0, "router.W0_mu");
  require_shape(router.W1_mu, cfg.d0, m, "router.W1_mu");
  require_shape(router.W0_sigma, cfg.T, cfg.d0, "router.W0_sigma");
  require_shape(router.W1_sigma, cfg.d0, m, "router.W1_sigma");
  require_shape(router.WH, m, m, "router.WH");
  if (extractors.count() != m) throw Error(ErrorKind::ShapeMismatch, "extractor count != M");
  for (int i = 0; i < m; ++i) {
    require_shape(extractors.Wt[i], cfg.T, cfg.d, "extractor.Wt");
    require_shape(extractors.Ws[i], cfg.T, cfg.d, "extractor.Ws");
  }
  require_shape(metric.A, b, b, "metric.A");
  require_shape(fusion.WQ, cfg.d, cfg.d, "fusion.WQ");
  require_shape(fusion.WK, cfg.d, cfg.d, "fusion.WK");
  require_shape(fusion.WV, cfg.d, cfg.d, "fusion.WV");
  require_shape(fusion.ln1_gain, 1, cfg.d, "fusion.ln1_gain");
  require_shape(fusion.ln1_bias, 1, cfg.d, "fusion.ln1_bias");
  require_shape(fusion.ln2_gain, 1, cfg.d, "fusion.ln2_gain");
  require_shape(fusion.ln2_bias, 1, cfg.d, "fusion.ln2_bias");
  require_shape(fusion.ffn_W1, cfg.d, cfg.d_ff, "fusion.ffn_W1");
  require_shape(fusion.ffn_b1, 1, cfg.d_ff, "fusion.ffn_b1");
  require_shape(fusion.ffn_W2, cfg.d_ff, cfg.d, "fusion.ffn_W2");
  require_shape(fusion.ffn_b2, 1, cfg.d, "fusion.ffn_b2");
  require_shape(predictor.WO, cfg.d, cfg.F, "predictor.WO");
  for_each_tensor([](const std::string& name, const Matrix& t) {
    if (!t.all_finite()) throw Error(ErrorKind::ShapeMismatch, name + " has non-finite entries");
  });
}

namespace {

double snap_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

Matrix kaiming_uniform(int rows, int cols, RngStream& rng) {
  Matrix m(rows, cols);
  double bound = std::sqrt(6.0 / rows);  // fan_in = rows for x*W
  for (double& e : m.v) e = snap_f32(rng.uniform(-bound, bound));
  return m;
}

}  // namespace

ModelParams init_params(const DuetConfig& cfg, RngStream rng) {
  cfg.validate();
  int m = cfg.effective_M();
  int b = cfg.channel_feature_dim();
  ModelParams p;
  p.router.W0_mu = kaiming_uniform(cfg.T, cfg.d0, rng);
  p.router.W1_mu = kaiming_uniform(cfg.d0, m, rng);
  p.router.W0_sigma = kaiming_uniform(cfg.T, cfg.d0, rng);
  p.router.W1_sigma = kaiming_uniform(cfg.d0, m, rng);
  p.router.WH = kaiming_uniform(m, m, rng);
  for (int i = 0; i < m; ++i) {
    p.extractors.Wt.push_back(kaiming_uniform(cfg.T, cfg.d, rng));
    p.extractors.Ws.push_back(kaiming_uniform(cfg.T, cfg.d, rng));
  }
  p.metric.A = Matrix::identity(b);
  p.metric.metric_kind = cfg.metric_kind;
  p.fusion.WQ = kaiming_uniform(cfg.d, cfg.d, rng);
  p.fusion.WK = kaiming_uniform(cfg.d, cfg.d, rng);
  p.fusion.WV = kaiming_uniform(cfg.d, cfg.d, rng);
  p.fusion.ln1_gain = Matrix::filled(1, cfg.d, 1.0);
  p.fusion.ln1_bias = Matrix(1, cfg.d);
  p.fusion.ln2_gain = Matrix::filled(1, cfg.d, 1.0);
  p.fusion.ln2_bias = Matrix(1, cfg.d);
  p.fusion.ffn_W1 = kaiming_uniform(cfg.d, cfg.d_ff, rng);
  p.fusion.ffn_b1 = Matrix(1, cfg.d_ff);
  p.fusion.ffn_W2 = kaiming_uniform(cfg.d_ff, cfg.d, rng);
  p.fusion.ffn_b2 = Matrix(1, cfg.d);
  p.predictor.WO = kaiming_uniform(cfg.d, cfg.F, rng);
  return p;
}

}  // namespace duet
