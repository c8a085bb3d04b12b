#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "duet/errors.hpp"
#include "duet/fusion.hpp"

using namespace duet;

namespace {

FusionParams random_fusion(int d, int d_ff, std::mt19937& gen) {
  std::normal_distribution<double> nd(0.0, 0.4);
  FusionParams p;
  p.WQ = Matrix(d, d);
  p.WK = Matrix(d, d);
  p.WV = Matrix(d, d);
  p.ln1_gain = Matrix::filled(1, d, 1.0);
  p.ln1_bias = Matrix::filled(1, d, 0.0);
  p.ln2_gain = Matrix::filled(1, d, 1.0);
  p.ln2_bias = Matrix::filled(1, d, 0.0);
  p.ffn_W1 = Matrix(d, d_ff);
  p.ffn_b1 = Matrix::filled(1, d_ff, 0.0);
  p.ffn_W2 = Matrix(d_ff, d);
  p.ffn_b2 = Matrix::filled(1, d, 0.0);
  for (Matrix* m : {&p.WQ, &p.WK, &p.WV, &p.ffn_W1, &p.ffn_W2})
    for (double& v : m->v) v = nd(gen);
  return p;
}

ChannelMask make_mask(const Matrix& hard) {
  ChannelMask m;
  m.hard = hard;
  m.surrogate = hard;
  return m;
}

// Straight-line attention with no masking at all.
Matrix unmasked_attention_oracle(const Matrix& x, const FusionParams& p) {
  int n = x.rows, d = x.cols;
  Matrix q = matmul(x, p.WQ), k = matmul(x, p.WK), v = matmul(x, p.WV);
  Matrix out(n, d);
  for (int i = 0; i < n; ++i) {
    std::vector<double> s(n, 0.0);
    double mx = -1e300;
    for (int j = 0; j < n; ++j) {
      for (int u = 0; u < d; ++u) s[j] += q(i, u) * k(j, u);
      s[j] /= std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (int j = 0; j < n; ++j) {
      s[j] = std::exp(s[j] - mx);
      z += s[j];
    }
    for (int u = 0; u < d; ++u) {
      double acc = 0;
      for (int j = 0; j < n; ++j) acc += s[j] / z * v(j, u);
      out(i, u) = acc;
    }
  }
  return out;
}

ModelParams random_model(const DuetConfig& cfg, uint64_t seed) {
  return init_params(cfg, RngStream(seed));
}

}  // namespace

TEST_CASE("masked_attention with all-ones mask equals unmasked oracle") {
  std::mt19937 gen(1);
  std::normal_distribution<double> nd;
  int n = 4, d = 6;
  FusionParams p = random_fusion(d, 2 * d, gen);
  Matrix x(n, d);
  for (double& v : x.v) v = nd(gen);
  Matrix got = masked_attention(x, make_mask(Matrix::filled(n, n, 1.0)), p);
  Matrix want = unmasked_attention_oracle(x, p);
  for (size_t i = 0; i < got.v.size(); ++i) CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-6));
}

TEST_CASE("masked_attention with identity mask returns V rows") {
  std::mt19937 gen(2);
  std::normal_distribution<double> nd;
  int n = 3, d = 5;
  FusionParams p = random_fusion(d, 2 * d, gen);
  Matrix x(n, d);
  for (double& v : x.v) v = nd(gen);
  Matrix got = masked_attention(x, make_mask(Matrix::identity(n)), p);
  Matrix v = matmul(x, p.WV);
  for (size_t i = 0; i < got.v.size(); ++i) CHECK(got.v[i] == doctest::Approx(v.v[i]).epsilon(1e-9));
}

TEST_CASE("masked row ignores perturbations of masked-out channels") {
  std::mt19937 gen(3);
  std::normal_distribution<double> nd;
  int n = 3, d = 4;
  FusionParams p = random_fusion(d, 2 * d, gen);
  Matrix mask = Matrix::filled(n, n, 1.0);
  mask(0, 2) = 0.0;
  Matrix x(n, d);
  for (double& v : x.v) v = nd(gen);
  Matrix y1 = masked_attention(x, make_mask(mask), p);
  Matrix x2 = x;
  for (int u = 0; u < d; ++u) x2(2, u) += nd(gen);  // perturb channel 2 only
  Matrix y2 = masked_attention(x2, make_mask(mask), p);
  for (int u = 0; u < d; ++u) CHECK(y1(0, u) == doctest::Approx(y2(0, u)).epsilon(1e-7));
}

TEST_CASE("masked_attention rejects a dead mask row") {
  std::mt19937 gen(4);
  FusionParams p = random_fusion(3, 6, gen);
  Matrix mask = Matrix::identity(2);
  mask(0, 0) = 0.0;  // row 0 all zero
  Matrix x = Matrix::filled(2, 3, 0.5);
  CHECK_THROWS_AS(masked_attention(x, make_mask(mask), p), Error);
}

TEST_CASE("fusion_block with dead sublayers is the identity") {
  int d = 5, n = 3;
  FusionParams p;
  p.WQ = Matrix::filled(d, d, 0.0);
  p.WK = Matrix::filled(d, d, 0.0);
  p.WV = Matrix::filled(d, d, 0.0);
  p.ln1_gain = Matrix::filled(1, d, 1.0);
  p.ln1_bias = Matrix::filled(1, d, 0.0);
  p.ln2_gain = Matrix::filled(1, d, 1.0);
  p.ln2_bias = Matrix::filled(1, d, 0.0);
  p.ffn_W1 = Matrix::filled(d, 2 * d, 0.0);
  p.ffn_b1 = Matrix::filled(1, 2 * d, 0.0);
  p.ffn_W2 = Matrix::filled(2 * d, d, 0.0);
  p.ffn_b2 = Matrix::filled(1, d, 0.0);
  std::mt19937 gen(5);
  std::normal_distribution<double> nd;
  Matrix x(n, d);
  for (double& v : x.v) v = nd(gen);
  Matrix y = fusion_block(x, make_mask(Matrix::filled(n, n, 1.0)), p);
  for (size_t i = 0; i < x.v.size(); ++i) CHECK(y.v[i] == doctest::Approx(x.v[i]).epsilon(1e-12));
}

TEST_CASE("fusion_block matches a straight-line oracle recomputation") {
  std::mt19937 gen(6);
  std::normal_distribution<double> nd;
  int n = 3, d = 4, d_ff = 8;
  FusionParams p = random_fusion(d, d_ff, gen);
  for (double& v : p.ln1_gain.v) v = 1.0 + 0.1 * nd(gen);
  for (double& v : p.ln1_bias.v) v = 0.1 * nd(gen);
  for (double& v : p.ln2_gain.v) v = 1.0 + 0.1 * nd(gen);
  for (double& v : p.ln2_bias.v) v = 0.1 * nd(gen);
  for (double& v : p.ffn_b1.v) v = 0.1 * nd(gen);
  for (double& v : p.ffn_b2.v) v = 0.1 * nd(gen);
  Matrix x(n, d);
  for (double& v : x.v) v = nd(gen);
  ChannelMask full = make_mask(Matrix::filled(n, n, 1.0));

  Matrix got = fusion_block(x, full, p);

  // Oracle: pre-norm block recomputed from scratch scalar-by-scalar.
  auto ln = [&](const Matrix& in, const Matrix& gain, const Matrix& bias) {
    Matrix out(in.rows, in.cols);
    for (int i = 0; i < in.rows; ++i) {
      double mean = 0, var = 0;
      for (int j = 0; j < in.cols; ++j) mean += in(i, j);
      mean /= in.cols;
      for (int j = 0; j < in.cols; ++j) var += (in(i, j) - mean) * (in(i, j) - mean);
      var /= in.cols;
      for (int j = 0; j < in.cols; ++j)
        out(i, j) = (in(i, j) - mean) / std::sqrt(var + 1e-5) * gain(0, j) + bias(0, j);
    }
    return out;
  };
  Matrix h = add(x, unmasked_attention_oracle(ln(x, p.ln1_gain, p.ln1_bias), p));
  Matrix ln2 = ln(h, p.ln2_gain, p.ln2_bias);
  Matrix mid = matmul(ln2, p.ffn_W1);
  for (int i = 0; i < mid.rows; ++i)
    for (int j = 0; j < mid.cols; ++j) {
      double z = mid(i, j) + p.ffn_b1(0, j);
      mid(i, j) = 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)));
    }
  Matrix ff = matmul(mid, p.ffn_W2);
  for (int i = 0; i < ff.rows; ++i)
    for (int j = 0; j < ff.cols; ++j) ff(i, j) += p.ffn_b2(0, j);
  Matrix want = add(h, ff);
  for (size_t i = 0; i < got.v.size(); ++i) CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-6));
}

TEST_CASE("fusion_block single channel is finite and deterministic") {
  std::mt19937 gen(7);
  FusionParams p = random_fusion(4, 8, gen);
  Matrix x = Matrix::filled(1, 4, 0.3);
  Matrix y1 = fusion_block(x, make_mask(Matrix::filled(1, 1, 1.0)), p);
  Matrix y2 = fusion_block(x, make_mask(Matrix::filled(1, 1, 1.0)), p);
  CHECK(y1.all_finite());
  CHECK(y1.v == y2.v);
}

TEST_CASE("predict degenerate and oracle cases") {
  PredictorParams zero;
  zero.WO = Matrix::filled(3, 2, 0.0);
  Matrix x = Matrix::filled(2, 3, 1.5);
  for (double v : predict(x, zero).v) CHECK(v == 0.0);

  PredictorParams id;
  id.WO = Matrix::identity(3);
  CHECK(predict(x, id).v == x.v);

  std::mt19937 gen(8);
  std::normal_distribution<double> nd;
  PredictorParams r;
  r.WO = Matrix(3, 4);
  for (double& v : r.WO.v) v = nd(gen);
  Matrix got = predict(x, r);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0;
      for (int u = 0; u < 3; ++u) acc += x(i, u) * r.WO(u, j);
      CHECK(got(i, j) == doctest::Approx(acc).epsilon(1e-9));
    }
}

TEST_CASE("duet_forward on constant input predicts the window mean") {
  DuetConfig cfg;
  cfg.T = 8;
  cfg.F = 4;
  cfg.N = 2;
  cfg.M = 2;
  cfg.k = 1;
  cfg.d = 6;
  cfg.d0 = 4;
  cfg.d_ff = 12;
  cfg.kernel = 3;
  ModelParams params = random_model(cfg, 5);
  Matrix x(2, 8);
  for (int t = 0; t < 8; ++t) {
    x(0, t) = 4.0;
    x(1, t) = -2.5;
  }
  Matrix y = duet_forward(x, params, cfg, RunMode::Eval, RngStream(0));
  for (int j = 0; j < 4; ++j) {
    CHECK(y(0, j) == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(y(1, j) == doctest::Approx(-2.5).epsilon(1e-9));
  }
}

TEST_CASE("duet_forward eval mode is bit-identical across invocations") {
  DuetConfig cfg;
  cfg.T = 8;
  cfg.F = 4;
  cfg.N = 3;
  cfg.M = 3;
  cfg.k = 2;
  cfg.d = 6;
  cfg.d0 = 4;
  cfg.d_ff = 12;
  cfg.kernel = 3;
  ModelParams params = random_model(cfg, 6);
  std::mt19937 gen(9);
  std::normal_distribution<double> nd;
  Matrix x(3, 8);
  for (double& v : x.v) v = nd(gen);
  Matrix y1 = duet_forward(x, params, cfg, RunMode::Eval, RngStream(1));
  Matrix y2 = duet_forward(x, params, cfg, RunMode::Eval, RngStream(1));
  CHECK(y1.v == y2.v);
}

TEST_CASE("train mode with a fixed stream is also reproducible") {
  DuetConfig cfg;
  cfg.T = 8;
  cfg.F = 4;
  cfg.N = 3;
  cfg.M = 3;
  cfg.k = 2;
  cfg.d = 6;
  cfg.d0 = 4;
  cfg.d_ff = 12;
  cfg.kernel = 3;
  ModelParams params = random_model(cfg, 16);
  std::mt19937 gen(10);
  std::normal_distribution<double> nd;
  Matrix x(3, 8);
  for (double& v : x.v) v = nd(gen);
  Matrix y1 = duet_forward(x, params, cfg, RunMode::Train, RngStream(12));
  Matrix y2 = duet_forward(x, params, cfg, RunMode::Train, RngStream(12));
  CHECK(y1.v == y2.v);
}

TEST_CASE("duet_forward shape contract under randomized configs") {
  std::mt19937 gen(11);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 10; ++trial) {
    DuetConfig cfg;
    cfg.N = 1 + static_cast<int>(gen() % 4);
    cfg.T = 4 + 2 * static_cast<int>(gen() % 6);
    cfg.F = 1 + static_cast<int>(gen() % 6);
    cfg.M = 1 + static_cast<int>(gen() % 4);
    cfg.k = 1 + static_cast<int>(gen() % cfg.M);
    cfg.d = 3 + static_cast<int>(gen() % 6);
    cfg.d0 = 2 + static_cast<int>(gen() % 4);
    cfg.d_ff = 2 * cfg.d;
    cfg.kernel = 1 + 2 * static_cast<int>(gen() % 4);
    ModelParams params = random_model(cfg, 100 + trial);
    Matrix x(cfg.N, cfg.T);
    for (double& v : x.v) v = nd(gen);
    Matrix y = duet_forward(x, params, cfg, RunMode::Train, RngStream(trial));
    CHECK(y.rows == cfg.N);
    CHECK(y.cols == cfg.F);
    CHECK(y.all_finite());
  }
}

TEST_CASE("variant forcing: no_ccm == identity mask, full_attention == all-ones, bit level") {
  DuetConfig cfg;
  cfg.T = 8;
  cfg.F = 4;
  cfg.N = 3;
  cfg.M = 3;
  cfg.k = 2;
  cfg.d = 6;
  cfg.d0 = 4;
  cfg.d_ff = 12;
  cfg.kernel = 3;
  ModelParams params = random_model(cfg, 21);
  std::mt19937 gen(12);
  std::normal_distribution<double> nd;
  Matrix x(3, 8);
  for (double& v : x.v) v = nd(gen);

  for (auto mode : {RunMode::Train, RunMode::Eval}) {
    DuetConfig ci = cfg;
    ci.variant = VariantKind::NoCcm;
    ForwardTrace t_ci = duet_forward_trace(x, params, ci, mode, RngStream(3));
    ChannelMask id = make_mask(Matrix::identity(3));
    Matrix manual_ci = instance_denormalize(
        predict(fusion_block(duet_forward_trace(x, params, ci, mode, RngStream(3)).tcm.features, id,
                             params.fusion),
                params.predictor),
        t_ci.stats);
    CHECK(t_ci.mask.hard.v == id.hard.v);
    CHECK(t_ci.Y_hat.v == manual_ci.v);

    DuetConfig cd = cfg;
    cd.variant = VariantKind::FullAttention;
    ForwardTrace t_cd = duet_forward_trace(x, params, cd, mode, RngStream(3));
    CHECK(t_cd.mask.hard.v == Matrix::filled(3, 3, 1.0).v);
  }
}
