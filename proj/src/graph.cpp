#include "duet/graph.hpp"

#include <cmath>
#include <map>

namespace duet {

namespace {

Matrix row_to_matrix(const std::vector<double>& v) {
  Matrix m(1, static_cast<int>(v.size()));
  for (size_t i = 0; i < v.size(); ++i) m(0, static_cast<int>(i)) = v[i];
  return m;
}

Matrix col_to_matrix(const std::vector<double>& v) {
  Matrix m(static_cast<int>(v.size()), 1);
  for (size_t i = 0; i < v.size(); ++i) m(static_cast<int>(i), 0) = v[i];
  return m;
}

}  // namespace

std::unique_ptr<WindowGraph> build_window_graph(const ModelParams& params, const DuetConfig& cfg,
                                                const Matrix& X, const Matrix& Y, RunMode mode,
                                                const RngStream& rng) {
  auto g = std::make_unique<WindowGraph>();
  ag::Tape& t = g->tape;

  std::map<std::string, ag::Index> pn;
  params.for_each_tensor([&](const std::string& name, const Matrix& m) {
    ag::Index idx = t.constant(m);
    g->param_nodes.emplace_back(name, idx);
    pn[name] = idx;
  });

  auto [x_norm, stats] = instance_normalize(X, cfg.std_floor);
  Matrix y_norm = apply_normalize(Y, stats);
  int n = X.rows;
  int m_experts = cfg.effective_M();
  int k = cfg.effective_k();

  RngStream gate_rng = rng.substream("gate");
  RngStream mask_rng = rng.substream("mask");

  // --- TCM ---
  ag::Index wh_t = t.transpose(pn.at("router.WH"));
  std::vector<ag::Index> temp_rows;
  temp_rows.reserve(n);
  for (int c = 0; c < n; ++c) {
    std::vector<double> xr(x_norm.cols);
    for (int j = 0; j < x_norm.cols; ++j) xr[j] = x_norm(c, j);
    ag::Index x = t.constant(row_to_matrix(xr));
    ag::Index mu = t.matmul(t.relu(t.matmul(x, pn.at("router.W0_mu"))), pn.at("router.W1_mu"));
    ag::Index z = mu;
    if (mode == RunMode::Train) {
      std::vector<double> eps(m_experts);
      for (double& e : eps) e = gate_rng.normal();
      ag::Index sig = t.matmul(t.relu(t.matmul(x, pn.at("router.W0_sigma"))), pn.at("router.W1_sigma"));
      z = t.add(mu, t.mul(t.constant(row_to_matrix(eps)), t.softplus_op(sig)));
    }
    ag::Index h = t.matmul(z, wh_t);
    GateSelection sel = keep_top_k(t.val(h).v, k);
    ag::Index w = t.row_softmax(t.gather_cols(h, sel.indices));

    DecompositionPair pair = decompose_series(xr, cfg.kernel);
    ag::Index trend = t.constant(row_to_matrix(pair.trend));
    ag::Index seasonal = t.constant(row_to_matrix(pair.seasonal));
    ag::Index row = -1;
    for (size_t i = 0; i < sel.indices.size(); ++i) {
      std::string ix = std::to_string(sel.indices[i]);
      ag::Index feat = t.add(t.matmul(trend, pn.at("extractor." + ix + ".Wt")),
                             t.matmul(seasonal, pn.at("extractor." + ix + ".Ws")));
      ag::Index term = t.scale_by(feat, t.gather_cols(w, {static_cast<int>(i)}));
      row = i == 0 ? term : t.add(row, term);
    }
    temp_rows.push_back(row);
  }
  ag::Index x_temp = t.concat_rows(temp_rows);

  // --- CCM / mask ---
  ag::Index mask_node;
  ChannelMask forced;
  if (variant_forced_mask(cfg.variant, n, &forced)) {
    mask_node = t.constant(forced.hard);
  } else if (mode == RunMode::Eval || params.metric.metric_kind != MetricKind::LearnedMahalanobis) {
    // No gradient path to the metric here; reuse the plain composition.
    CcmOutput ccm = ccm_forward(x_norm, params.metric, cfg.gamma, cfg.temperature, mode, mask_rng,
                                cfg.variant == VariantKind::TemporalInfo, cfg.d_floor);
    mask_node = t.constant(ccm.mask.hard);
  } else {
    ag::Index a_mat = pn.at("metric.A");
    auto feats = channel_metric_features(x_norm, cfg.variant == VariantKind::TemporalInfo);
    // Pairwise distances through A, shared across (i,j)/(j,i).
    std::map<std::pair<int, int>, ag::Index> cval;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        std::vector<double> diff(feats[i].size());
        for (size_t q = 0; q < diff.size(); ++q) diff[q] = feats[i][q] - feats[j][q];
        ag::Index v = t.matmul(a_mat, t.constant(col_to_matrix(diff)));
        ag::Index dist = t.sum(t.mul(v, v));
        ag::Index c = t.rcp_clamped(dist, cfg.d_floor);
        cval[{i, j}] = c;
        cval[{j, i}] = c;
      }
    std::vector<std::tuple<int, int, ag::Index>> entries;
    for (int i = 0; i < n; ++i) {
      std::vector<ag::Index> row_c;
      for (int j = 0; j < n; ++j)
        if (j != i) row_c.push_back(cval[{i, j}]);
      ag::Index row_max = -1;
      if (!row_c.empty()) row_max = t.max_reduce(t.concat_scalars(row_c));
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        // Draws consumed per off-diagonal entry in row-major order, matching
        // sample_mask.
        double g1 = mask_rng.gumbel();
        double g0 = mask_rng.gumbel();
        ag::Index p = t.div(t.affine(cval[{i, j}], cfg.gamma, 0.0), row_max);
        ag::Index pre = t.affine(t.affine(t.bernoulli_logit(p, 1e-6), 1.0, g1 - g0),
                                 1.0 / cfg.temperature, 0.0);
        ag::Index soft = t.sigmoid(pre);
        double hard = t.val(soft)(0, 0) > 0.5 ? 1.0 : 0.0;
        entries.emplace_back(i, j, t.straight_through(soft, hard));
      }
    }
    mask_node = t.assemble(Matrix::identity(n), entries);
  }

  // --- Fusion ---
  ag::Index ln1 = t.layer_norm(x_temp, pn.at("fusion.ln1_gain"), pn.at("fusion.ln1_bias"), 1e-5);
  ag::Index q = t.matmul(ln1, pn.at("fusion.WQ"));
  ag::Index kk = t.matmul(ln1, pn.at("fusion.WK"));
  ag::Index v = t.matmul(ln1, pn.at("fusion.WV"));
  ag::Index scores = t.affine(t.matmul(q, t.transpose(kk)), 1.0 / std::sqrt(cfg.d), 0.0);
  ag::Index masked = t.add(t.mul(scores, mask_node), t.affine(mask_node, 1e9, -1e9));
  ag::Index att = t.matmul(t.row_softmax(masked), v);
  ag::Index h = t.add(x_temp, att);
  ag::Index ln2 = t.layer_norm(h, pn.at("fusion.ln2_gain"), pn.at("fusion.ln2_bias"), 1e-5);
  ag::Index f1 = t.gelu(t.add_broadcast_rows(t.matmul(ln2, pn.at("fusion.ffn_W1")),
                                             pn.at("fusion.ffn_b1")));
  ag::Index f2 = t.add_broadcast_rows(t.matmul(f1, pn.at("fusion.ffn_W2")), pn.at("fusion.ffn_b2"));
  ag::Index x_mix = t.add(h, f2);
  g->y_hat_norm = t.matmul(x_mix, pn.at("predictor.WO"));
  g->loss = t.l1_loss(g->y_hat_norm, t.constant(y_norm));
  return g;
}

}  // namespace duet
