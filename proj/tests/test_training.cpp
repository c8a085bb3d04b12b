#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <random>

#include "doctest.h"
#include "duet/errors.hpp"
#include "duet/train.hpp"

using namespace duet;

namespace {

DuetConfig small_config(int N) {
  DuetConfig cfg;
  cfg.N = N;
  cfg.T = 12;
  cfg.F = 4;
  cfg.M = 2;
  cfg.k = 1;
  cfg.d = 8;
  cfg.d0 = 4;
  cfg.d_ff = 16;
  cfg.kernel = 3;
  cfg.batch_size = 16;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.seed = 1;
  return cfg;
}

struct SplitWindows {
  std::vector<WindowPair> train, val, test;
};

SplitWindows windows_for(const TimeSeriesDataset& ds, const DuetConfig& cfg) {
  SplitRanges r = split_dataset(ds, SplitSpec{7, 1, 2}, cfg.T, cfg.F);
  return {make_windows(ds, r.train, cfg.T, cfg.F), make_windows(ds, r.val, cfg.T, cfg.F),
          make_windows(ds, r.test, cfg.T, cfg.F)};
}

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  p.for_each_tensor(
      [&](const std::string&, const Matrix& m) { out.insert(out.end(), m.v.begin(), m.v.end()); });
  return out;
}

}  // namespace

TEST_CASE("l1_loss worked examples and loop oracle") {
  Matrix y = Matrix::filled(2, 3, 1.5);
  CHECK(l1_loss(y, y) == 0.0);
  Matrix y2 = Matrix::filled(2, 3, 2.5);
  CHECK(l1_loss(y2, y) == doctest::Approx(1.0));

  std::mt19937 gen(1);
  std::normal_distribution<double> nd;
  Matrix a(3, 4), b(3, 4);
  for (double& v : a.v) v = nd(gen);
  for (double& v : b.v) v = nd(gen);
  double acc = 0;
  for (size_t i = 0; i < a.v.size(); ++i) acc += std::abs(a.v[i] - b.v[i]);
  CHECK(l1_loss(a, b) == doctest::Approx(acc / 12.0).epsilon(1e-9));

  CHECK_THROWS_AS(l1_loss(a, Matrix::filled(3, 5, 0.0)), Error);
}

TEST_CASE("compute_metrics worked examples, loop oracle, and EmptySet") {
  std::vector<Matrix> yh{Matrix::filled(2, 2, 3.0)};
  std::vector<Matrix> y{Matrix::filled(2, 2, 3.0)};
  Metrics perfect = compute_metrics(yh, y);
  CHECK(perfect.mse == 0.0);
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.n_windows == 1);

  std::vector<Matrix> y2{Matrix::filled(2, 2, 1.0)};
  Metrics off = compute_metrics(yh, y2);
  CHECK(off.mse == doctest::Approx(4.0));
  CHECK(off.mae == doctest::Approx(2.0));

  std::mt19937 gen(2);
  std::normal_distribution<double> nd;
  std::vector<Matrix> ra, rb;
  double se = 0, ae = 0;
  int count = 0;
  for (int w = 0; w < 3; ++w) {
    Matrix a(2, 3), b(2, 3);
    for (double& v : a.v) v = nd(gen);
    for (double& v : b.v) v = nd(gen);
    for (size_t i = 0; i < a.v.size(); ++i) {
      se += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
      ae += std::abs(a.v[i] - b.v[i]);
      ++count;
    }
    ra.push_back(a);
    rb.push_back(b);
  }
  Metrics m = compute_metrics(ra, rb);
  CHECK(m.mse == doctest::Approx(se / count).epsilon(1e-9));
  CHECK(m.mae == doctest::Approx(ae / count).epsilon(1e-9));

  CHECK_THROWS_AS(compute_metrics({}, {}), Error);
}

TEST_CASE("make_synthetic is seed-deterministic and kinds differ") {
  TimeSeriesDataset a = make_synthetic(SyntheticKind::TwoRegime, 1500, 4, 9);
  TimeSeriesDataset b = make_synthetic(SyntheticKind::TwoRegime, 1500, 4, 9);
  CHECK(a.values.v == b.values.v);
  CHECK(a.channels() == 4);
  CHECK(a.length() == 1500);
  CHECK_THROWS_AS(make_synthetic(SyntheticKind::TwoRegime, 10, 2, 0), Error);
}

TEST_CASE("two_regime segments have distinct sample statistics") {
  TimeSeriesDataset ds = make_synthetic(SyntheticKind::TwoRegime, 2000, 2, 3);
  // Segment 0 = regime A (offset 0), segment 1 = regime B (offset +3).
  auto seg_mean = [&](int seg) {
    double acc = 0;
    for (int t = seg * kTwoRegimeSegment; t < (seg + 1) * kTwoRegimeSegment; ++t)
      acc += ds.values(0, t);
    return acc / kTwoRegimeSegment;
  };
  CHECK(seg_mean(1) - seg_mean(0) > 1.5);
  CHECK(seg_mean(3) - seg_mean(2) > 1.5);
}

TEST_CASE("correlated_pair reaches the constructed correlation") {
  TimeSeriesDataset ds = make_synthetic(SyntheticKind::CorrelatedPair, 10000, 3, 5);
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  int L = ds.length();
  for (int t = 0; t < L; ++t) {
    double x = ds.values(0, t), y = ds.values(1, t);
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  double cov = sxy / L - sx / L * sy / L;
  double vx = sxx / L - sx / L * sx / L;
  double vy = syy / L - sy / L * sy / L;
  CHECK(cov / std::sqrt(vx * vy) >= 0.9);
}

TEST_CASE("fit with lr=0 leaves parameters unchanged") {
  TimeSeriesDataset ds = make_synthetic(SyntheticKind::SinusoidMix, 400, 2, 2);
  DuetConfig cfg = small_config(2);
  cfg.lr = 0.0;
  cfg.max_epochs = 2;
  SplitWindows w = windows_for(ds, cfg);
  TrainState st = fit(cfg, w.train, w.val);
  ModelParams fresh = init_params(cfg, RngStream(cfg.seed).substream("init"));
  CHECK(flatten(st.params) == flatten(fresh));
}

TEST_CASE("fit is bit-reproducible for a fixed seed") {
  TimeSeriesDataset ds = make_synthetic(SyntheticKind::TwoRegime, 1500, 2, 4);
  DuetConfig cfg = small_config(2);
  cfg.max_epochs = 2;
  SplitWindows w = windows_for(ds, cfg);
  TrainState s1 = fit(cfg, w.train, w.val);
  TrainState s2 = fit(cfg, w.train, w.val);
  CHECK(flatten(s1.params) == flatten(s2.params));
  CHECK(s1.best_val_mse == s2.best_val_mse);
}

TEST_CASE("training reduces the loss on a noiseless sinusoid mixture") {
  TimeSeriesDataset ds = make_synthetic(SyntheticKind::SinusoidMix, 600, 2, 7);
  DuetConfig cfg = small_config(2);
  cfg.max_epochs = 8;
  cfg.lr = 2e-3;
  SplitWindows w = windows_for(ds, cfg);
  ModelParams fresh = init_params(cfg, RngStream(cfg.seed));
  Metrics before = evaluate(fresh, cfg, w.train);
  TrainState st = fit(cfg, w.train, w.val);
  Metrics after = evaluate(st.params, cfg, w.train);
  CHECK(after.mae < 0.5 * before.mae);
}

TEST_CASE("evaluate rejects mismatched channel counts") {
  TimeSeriesDataset ds = make_synthetic(SyntheticKind::SinusoidMix, 400, 3, 2);
  DuetConfig cfg = small_config(2);  // expects N=2
  SplitWindows w = windows_for(ds, cfg);
  ModelParams p = init_params(cfg, RngStream(0));
  CHECK_THROWS_AS(evaluate(p, cfg, w.test), Error);
}

TEST_CASE("checkpoint round trip: fresh model is bit-exact, trained within f32") {
  DuetConfig cfg = small_config(2);
  // Fresh model: init snaps every weight onto the float32 grid, so the
  // 32-bit container loses nothing.
  TrainState fresh;
  fresh.config = cfg;
  fresh.params = init_params(cfg, RngStream(3));
  fresh.params.for_each_tensor([&](const std::string&, const Matrix& m) {
    fresh.adam.m.emplace_back(m.rows, m.cols);
    fresh.adam.v.emplace_back(m.rows, m.cols);
  });
  const std::string path = "/tmp/duet_test_ckpt.bin";
  save_checkpoint(fresh, path);
  TrainState back = load_checkpoint(path);
  CHECK(flatten(back.params) == flatten(fresh.params));
  CHECK(back.config.T == cfg.T);
  CHECK(back.config.seed == cfg.seed);

  // Trained model: values drift off the grid; round trip is f32-accurate.
  TimeSeriesDataset ds = make_synthetic(SyntheticKind::TwoRegime, 1500, 2, 1);
  cfg.max_epochs = 1;
  SplitWindows w = windows_for(ds, cfg);
  TrainState st = fit(cfg, w.train, w.val);
  save_checkpoint(st, path);
  TrainState back2 = load_checkpoint(path);
  std::vector<double> a = flatten(st.params), b = flatten(back2.params);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-6).scale(1.0));
  CHECK(back2.adam.step == st.adam.step);
}

TEST_CASE("corrupt checkpoints are rejected") {
  TimeSeriesDataset ds = make_synthetic(SyntheticKind::TwoRegime, 1500, 2, 1);
  DuetConfig cfg = small_config(2);
  cfg.max_epochs = 1;
  SplitWindows w = windows_for(ds, cfg);
  TrainState st = fit(cfg, w.train, w.val);
  const std::string path = "/tmp/duet_test_ckpt2.bin";
  save_checkpoint(st, path);

  // Truncate.
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::ofstream out("/tmp/duet_test_trunc.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint("/tmp/duet_test_trunc.bin"), Error);

  // Bad magic.
  {
    std::ofstream out("/tmp/duet_test_magic.bin", std::ios::binary);
    out << "NOTDUET0 junk";
  }
  CHECK_THROWS_AS(load_checkpoint("/tmp/duet_test_magic.bin"), Error);

  CHECK_THROWS_AS(load_checkpoint("/tmp/duet_missing_ckpt.bin"), Error);
}

TEST_CASE("config JSON round trip preserves every field") {
  DuetConfig cfg = small_config(5);
  cfg.variant = VariantKind::TemporalInfo;
  cfg.metric_kind = MetricKind::Cosine;
  cfg.gamma = 0.77;
  cfg.seed = 1234567;
  DuetConfig back = config_from_json(config_to_json(cfg));
  CHECK(back.T == cfg.T);
  CHECK(back.F == cfg.F);
  CHECK(back.N == cfg.N);
  CHECK(back.M == cfg.M);
  CHECK(back.k == cfg.k);
  CHECK(back.d == cfg.d);
  CHECK(back.d0 == cfg.d0);
  CHECK(back.d_ff == cfg.d_ff);
  CHECK(back.kernel == cfg.kernel);
  CHECK(back.gamma == cfg.gamma);
  CHECK(back.seed == cfg.seed);
  CHECK(back.variant == cfg.variant);
  CHECK(back.metric_kind == cfg.metric_kind);
}

TEST_CASE("config invariants are enforced") {
  DuetConfig cfg = small_config(2);
  cfg.k = 3;  // > M
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config(2);
  cfg.kernel = 4;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config(2);
  cfg.gamma = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("report JSON carries the fixed schema") {
  DuetConfig cfg = small_config(2);
  Metrics m;
  m.mse = 0.5;
  m.mae = 0.25;
  m.n_windows = 10;
  std::string rep = make_report_json("some.csv", cfg, "test", m, 1.25);
  for (const char* key : {"dataset", "variant", "metric_kind", "\"T\"", "\"F\"", "\"M\"", "\"k\"",
                          "seed", "split", "mse", "mae", "n_windows", "normalized_scale",
                          "wall_seconds"})
    CHECK(rep.find(key) != std::string::npos);
}
