#include "duet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "duet/graph.hpp"
#include "duet/rng.hpp"

namespace duet {

using nlohmann::json;

double l1_loss(const Matrix& y_hat, const Matrix& y) {
  if (!y_hat.same_shape(y)) throw Error(ErrorKind::ShapeMismatch, "l1_loss shape mismatch");
  double acc = 0;
  for (size_t i = 0; i < y.size(); ++i) acc += std::abs(y_hat.v[i] - y.v[i]);
  return acc / static_cast<double>(y.size());
}

Metrics compute_metrics(const std::vector<Matrix>& y_hat, const std::vector<Matrix>& y) {
  if (y_hat.empty() || y_hat.size() != y.size())
    throw Error(ErrorKind::EmptySet, "compute_metrics needs a nonempty aligned set");
  double se = 0, ae = 0;
  size_t count = 0;
  for (size_t w = 0; w < y.size(); ++w) {
    if (!y_hat[w].same_shape(y[w])) throw Error(ErrorKind::ShapeMismatch, "metrics shape mismatch");
    for (size_t i = 0; i < y[w].size(); ++i) {
      double d = y_hat[w].v[i] - y[w].v[i];
      se += d * d;
      ae += std::abs(d);
    }
    count += y[w].size();
  }
  Metrics m;
  m.mse = se / static_cast<double>(count);
  m.mae = ae / static_cast<double>(count);
  m.n_windows = static_cast<int>(y.size());
  return m;
}

namespace {

struct GradBuffers {
  std::vector<Matrix> g;

  explicit GradBuffers(const ModelParams& p) {
    p.for_each_tensor([&](const std::string&, const Matrix& m) { g.emplace_back(m.rows, m.cols); });
  }
  void zero() {
    for (Matrix& m : g)
      std::fill(m.v.begin(), m.v.end(), 0.0);
  }
  void accumulate(const GradBuffers& o) {
    for (size_t i = 0; i < g.size(); ++i)
      for (size_t j = 0; j < g[i].size(); ++j) g[i].v[j] += o.g[i].v[j];
  }
};

// Builds the window graph, backpropagates, adds parameter gradients into out.
// Returns the scalar loss.
double window_gradient(const ModelParams& params, const DuetConfig& cfg, const WindowPair& w,
                       const RngStream& rng, GradBuffers& out) {
  auto g = build_window_graph(params, cfg, w.X, w.Y, RunMode::Train, rng);
  double loss = g->tape.val(g->loss)(0, 0);
  g->tape.backward(g->loss);
  for (size_t i = 0; i < g->param_nodes.size(); ++i) {
    const Matrix& pg = g->tape.grad(g->param_nodes[i].second);
    for (size_t j = 0; j < pg.size(); ++j) out.g[i].v[j] += pg.v[j];
  }
  return loss;
}

void adam_step(ModelParams& params, AdamState& adam, const GradBuffers& grads, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  adam.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam.step));
  size_t ti = 0;
  params.for_each_tensor([&](const std::string&, Matrix& p) {
    Matrix& m = adam.m[ti];
    Matrix& v = adam.v[ti];
    const Matrix& g = grads.g[ti];
    for (size_t j = 0; j < p.size(); ++j) {
      m.v[j] = beta1 * m.v[j] + (1.0 - beta1) * g.v[j];
      v.v[j] = beta2 * v.v[j] + (1.0 - beta2) * g.v[j] * g.v[j];
      double mhat = m.v[j] / bc1;
      double vhat = v.v[j] / bc2;
      p.v[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    ++ti;
  });
}

double validation_mse(const ModelParams& params, const DuetConfig& cfg,
                      const std::vector<WindowPair>& windows) {
  double se = 0;
  size_t count = 0;
  RngStream dummy(0);
  for (const WindowPair& w : windows) {
    ForwardTrace tr = duet_forward_trace(w.X, params, cfg, RunMode::Eval, dummy);
    Matrix y_norm = apply_normalize(w.Y, tr.stats);
    for (size_t i = 0; i < y_norm.size(); ++i) {
      double d = tr.Y_hat_norm.v[i] - y_norm.v[i];
      se += d * d;
    }
    count += y_norm.size();
  }
  return se / static_cast<double>(count);
}

}  // namespace

TrainState fit(const DuetConfig& cfg, const std::vector<WindowPair>& train_windows,
               const std::vector<WindowPair>& val_windows, const FitOptions& opts) {
  cfg.validate();
  if (train_windows.empty() || val_windows.empty())
    throw Error(ErrorKind::EmptySet, "fit needs nonempty train and val window sets");

  RngStream base(cfg.seed);
  TrainState st;
  st.config = cfg;
  st.params = init_params(cfg, base.substream("init"));
  st.params.check_shapes(cfg);
  st.adam.m.clear();
  st.adam.v.clear();
  st.params.for_each_tensor([&](const std::string&, const Matrix& m) {
    st.adam.m.emplace_back(m.rows, m.cols);
    st.adam.v.emplace_back(m.rows, m.cols);
  });

  ModelParams best = st.params;
  double best_mse = validation_mse(st.params, cfg, val_windows);
  int since_best = 0;

  RngStream shuffle_rng = base.substream("shuffle");
  RngStream fwd_base = base.substream("forward");
  std::vector<int> order(train_windows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  uint64_t visit = 0;
  GradBuffers grads(st.params);
  int threads = std::max(1, opts.threads);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t stop = std::min(order.size(), start + cfg.batch_size);
      grads.zero();
      double batch_loss = 0;
      if (threads == 1 || stop - start < 2) {
        for (size_t i = start; i < stop; ++i)
          batch_loss +=
              window_gradient(st.params, cfg, train_windows[order[i]], fwd_base.substream(visit + (i - start)), grads);
      } else {
        int nt = std::min<int>(threads, static_cast<int>(stop - start));
        std::vector<GradBuffers> partial(nt, grads);
        std::vector<double> losses(nt, 0.0);
        std::vector<std::thread> pool;
        size_t span = stop - start;
        for (int tid = 0; tid < nt; ++tid) {
          size_t lo = start + span * tid / nt;
          size_t hi = start + span * (tid + 1) / nt;
          pool.emplace_back([&, tid, lo, hi]() {
            for (size_t i = lo; i < hi; ++i)
              losses[tid] += window_gradient(st.params, cfg, train_windows[order[i]],
                                             fwd_base.substream(visit + (i - start)), partial[tid]);
          });
        }
        for (auto& th : pool) th.join();
        for (int tid = 0; tid < nt; ++tid) {
          grads.accumulate(partial[tid]);
          batch_loss += losses[tid];
        }
      }
      visit += stop - start;
      double inv = 1.0 / static_cast<double>(stop - start);
      for (Matrix& m : grads.g)
        for (double& e : m.v) e *= inv;
      batch_loss *= inv;
      if (!std::isfinite(batch_loss))
        throw Error(ErrorKind::Divergence,
                    "loss became non-finite at step " + std::to_string(st.adam.step + 1));
      adam_step(st.params, st.adam, grads, cfg.lr);
    }

    double val_mse = validation_mse(st.params, cfg, val_windows);
    if (opts.verbose)
      std::fprintf(stderr, "epoch %d val_mse %.6f%s\n", epoch, val_mse,
                   val_mse < best_mse ? " *" : "");
    if (val_mse < best_mse) {
      best_mse = val_mse;
      best = st.params;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best > cfg.patience) break;
    }
  }

  st.params = best;
  st.best_val_mse = best_mse;
  st.epochs_since_best = since_best;
  return st;
}

Metrics evaluate(const ModelParams& params, const DuetConfig& cfg,
                 const std::vector<WindowPair>& windows) {
  if (windows.empty()) throw Error(ErrorKind::EmptySet, "evaluate needs at least one window");
  if (!windows.empty() && windows[0].X.rows != cfg.N && cfg.N != 0)
    throw Error(ErrorKind::ConfigMismatch, "window channel count != config N");
  std::vector<Matrix> preds, targets;
  preds.reserve(windows.size());
  targets.reserve(windows.size());
  RngStream dummy(0);
  for (const WindowPair& w : windows) {
    ForwardTrace tr = duet_forward_trace(w.X, params, cfg, RunMode::Eval, dummy);
    preds.push_back(tr.Y_hat_norm);
    targets.push_back(apply_normalize(w.Y, tr.stats));
  }
  return compute_metrics(preds, targets);
}

// --- config (de)serialization ---

std::string config_to_json(const DuetConfig& c) {
  json j;
  j["T"] = c.T;
  j["F"] = c.F;
  j["N"] = c.N;
  j["M"] = c.M;
  j["k"] = c.k;
  j["d"] = c.d;
  j["d0"] = c.d0;
  j["d_ff"] = c.d_ff;
  j["kernel"] = c.kernel;
  j["gamma"] = c.gamma;
  j["temperature"] = c.temperature;
  j["std_floor"] = c.std_floor;
  j["d_floor"] = c.d_floor;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["variant"] = to_string(c.variant);
  j["metric_kind"] = to_string(c.metric_kind);
  return j.dump(2);
}

DuetConfig config_from_json(const std::string& text) {
  json j = json::parse(text);
  DuetConfig c;
  c.T = j.at("T");
  c.F = j.at("F");
  c.N = j.at("N");
  c.M = j.at("M");
  c.k = j.at("k");
  c.d = j.at("d");
  c.d0 = j.at("d0");
  c.d_ff = j.at("d_ff");
  c.kernel = j.at("kernel");
  c.gamma = j.at("gamma");
  c.temperature = j.at("temperature");
  c.std_floor = j.at("std_floor");
  c.d_floor = j.at("d_floor");
  c.lr = j.at("lr");
  c.batch_size = j.at("batch_size");
  c.max_epochs = j.at("max_epochs");
  c.patience = j.at("patience");
  c.seed = j.at("seed");
  c.variant = variant_from_string(j.at("variant"));
  c.metric_kind = metric_kind_from_string(j.at("metric_kind"));
  return c;
}

// --- checkpoint container ---
// magic | u64 manifest length | manifest JSON | f32 LE row-major tensor blobs

namespace {

constexpr char kMagic[8] = {'D', 'U', 'E', 'T', 'C', 'K', 'P', '1'};

void write_tensor(std::ofstream& out, const Matrix& m) {
  std::vector<float> buf(m.size());
  for (size_t i = 0; i < m.size(); ++i) buf[i] = static_cast<float>(m.v[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
}

Matrix read_tensor(std::ifstream& in, int rows, int cols, const std::string& name) {
  std::vector<float> buf(static_cast<size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(buf.data()), buf.size() * sizeof(float));
  if (!in)
    throw Error(ErrorKind::CorruptCheckpoint, "truncated checkpoint while reading tensor " + name);
  Matrix m(rows, cols);
  for (size_t i = 0; i < buf.size(); ++i) m.v[i] = static_cast<double>(buf[i]);
  return m;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  json manifest;
  manifest["config"] = json::parse(config_to_json(state.config));
  manifest["step"] = state.adam.step;
  manifest["best_val_mse"] = state.best_val_mse;
  manifest["epochs_since_best"] = state.epochs_since_best;
  json tensors = json::array();
  state.params.for_each_tensor([&](const std::string& name, const Matrix& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
  });
  state.params.for_each_tensor([&](const std::string& name, const Matrix& m) {
    tensors.push_back({{"name", "adam.m." + name}, {"rows", m.rows}, {"cols", m.cols}});
    tensors.push_back({{"name", "adam.v." + name}, {"rows", m.rows}, {"cols", m.cols}});
  });
  manifest["tensors"] = tensors;
  std::string mtext = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::FileNotFound, "cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  uint64_t len = mtext.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  state.params.for_each_tensor([&](const std::string&, const Matrix& m) { write_tensor(out, m); });
  size_t ti = 0;
  state.params.for_each_tensor([&](const std::string&, const Matrix&) {
    write_tensor(out, state.adam.m[ti]);
    write_tensor(out, state.adam.v[ti]);
    ++ti;
  });
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::FileNotFound, "cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error(ErrorKind::CorruptCheckpoint, "bad checkpoint magic");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw Error(ErrorKind::CorruptCheckpoint, "truncated checkpoint manifest length");
  std::string mtext(len, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorKind::CorruptCheckpoint, "truncated checkpoint manifest");
  json manifest;
  try {
    manifest = json::parse(mtext);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::CorruptCheckpoint, std::string("bad checkpoint manifest: ") + e.what());
  }

  TrainState st;
  st.config = config_from_json(manifest.at("config").dump());
  st.adam.step = manifest.at("step");
  st.best_val_mse = manifest.at("best_val_mse");
  st.epochs_since_best = manifest.at("epochs_since_best");
  st.params = init_params(st.config, RngStream(0));

  // Tensor directory must match the expected names and shapes exactly.
  std::vector<std::tuple<std::string, int, int>> directory;
  for (const auto& t : manifest.at("tensors"))
    directory.emplace_back(t.at("name"), t.at("rows"), t.at("cols"));
  size_t cursor = 0;
  auto next_expected = [&](const std::string& name, int rows, int cols) {
    if (cursor >= directory.size())
      throw Error(ErrorKind::CorruptCheckpoint, "manifest missing tensor " + name);
    auto [dn, dr, dc] = directory[cursor++];
    if (dn != name)
      throw Error(ErrorKind::CorruptCheckpoint, "manifest tensor order mismatch at " + dn);
    if (dr != rows || dc != cols)
      throw Error(ErrorKind::CorruptCheckpoint,
                  "tensor " + name + " has shape " + std::to_string(dr) + "x" + std::to_string(dc) +
                      " but config requires " + std::to_string(rows) + "x" + std::to_string(cols));
  };
  st.params.for_each_tensor([&](const std::string& name, Matrix& m) {
    next_expected(name, m.rows, m.cols);
    m = read_tensor(in, m.rows, m.cols, name);
  });
  st.adam.m.clear();
  st.adam.v.clear();
  st.params.for_each_tensor([&](const std::string& name, Matrix& m) {
    next_expected("adam.m." + name, m.rows, m.cols);
    st.adam.m.push_back(read_tensor(in, m.rows, m.cols, "adam.m." + name));
    next_expected("adam.v." + name, m.rows, m.cols);
    st.adam.v.push_back(read_tensor(in, m.rows, m.cols, "adam.v." + name));
  });
  st.params.check_shapes(st.config);
  return st;
}

// --- synthetic datasets ---

SyntheticKind synthetic_kind_from_string(const std::string& s) {
  if (s == "two_regime") return SyntheticKind::TwoRegime;
  if (s == "correlated_pair") return SyntheticKind::CorrelatedPair;
  if (s == "sinusoid_mix") return SyntheticKind::SinusoidMix;
  throw Error(ErrorKind::InvalidSpec, "unknown synthetic kind '" + s + "'");
}

TimeSeriesDataset make_synthetic(SyntheticKind kind, int length, int channels, uint64_t seed) {
  if (length < 48 || channels < 1) throw Error(ErrorKind::InvalidSpec, "synthetic series too small");
  TimeSeriesDataset ds;
  ds.values = Matrix(channels, length);
  ds.source_path = "synthetic";
  for (int c = 0; c < channels; ++c) ds.channel_names.push_back("c" + std::to_string(c));
  RngStream base(seed);

  switch (kind) {
    case SyntheticKind::TwoRegime: {
      // Seasonal AR with period 12: regime A persists the season
      // (rho=+0.95), regime B flips it (rho=-0.95) at twice the innovation
      // scale and a +3 level shift, so regimes differ in mean, variance
      // (factor 4) and in the optimal linear predictor.
      constexpr int lag = 12;
      for (int c = 0; c < channels; ++c) {
        RngStream rng = base.substream(static_cast<uint64_t>(c));
        std::vector<double> y(length);
        for (int t = 0; t < length; ++t) {
          int seg = t / kTwoRegimeSegment;
          bool regime_a = seg % 2 == 0;
          double rho = regime_a ? 0.95 : -0.95;
          double sigma = regime_a ? 0.25 : 0.5;
          double offset = regime_a ? 0.0 : 3.0;
          bool fresh = t % kTwoRegimeSegment < lag;  // restart each segment
          double prev = fresh ? 0.0 : y[t - lag] - (regime_a ? 0.0 : 3.0);
          double stationary = sigma / std::sqrt(1.0 - rho * rho);
          y[t] = offset + (fresh ? stationary * rng.normal() : rho * prev + sigma * rng.normal());
        }
        for (int t = 0; t < length; ++t) ds.values(c, t) = y[t];
      }
      break;
    }
    case SyntheticKind::CorrelatedPair: {
      if (channels < 2)
        throw Error(ErrorKind::InvalidSpec, "correlated_pair needs at least 2 channels");
      // corr(x0, x1) = 1 / (1 + delta^2) = 0.95
      double delta = std::sqrt(1.0 / 0.95 - 1.0);
      RngStream shared = base.substream("shared");
      RngStream noise = base.substream("noise");
      for (int t = 0; t < length; ++t) {
        double z = shared.normal();
        ds.values(0, t) = z + delta * noise.normal();
        ds.values(1, t) = z + delta * noise.normal();
        for (int c = 2; c < channels; ++c) ds.values(c, t) = noise.normal();
      }
      break;
    }
    case SyntheticKind::SinusoidMix: {
      // Noiseless and exactly linearly predictable.
      double phase0 = base.uniform(0, 6.283185307179586);
      for (int c = 0; c < channels; ++c) {
        double phi = phase0 + 0.7 * c;
        for (int t = 0; t < length; ++t)
          ds.values(c, t) = std::sin(2 * 3.14159265358979323846 * t / 24.0 + phi) +
                            0.5 * std::sin(2 * 3.14159265358979323846 * t / 12.0 + 2 * phi);
      }
      break;
    }
  }
  return ds;
}

std::string make_report_json(const std::string& dataset, const DuetConfig& cfg,
                             const std::string& split, const Metrics& metrics, double wall_seconds) {
  json j;
  j["dataset"] = dataset;
  j["variant"] = to_string(cfg.variant);
  j["metric_kind"] = to_string(cfg.metric_kind);
  j["T"] = cfg.T;
  j["F"] = cfg.F;
  j["M"] = cfg.M;
  j["k"] = cfg.k;
  j["seed"] = cfg.seed;
  j["split"] = split;
  j["mse"] = metrics.mse;
  j["mae"] = metrics.mae;
  j["n_windows"] = metrics.n_windows;
  j["normalized_scale"] = true;
  j["wall_seconds"] = wall_seconds;
  return j.dump(2) + "\n";
}

}  // namespace duet
