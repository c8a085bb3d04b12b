#pragma once

#include <string>
#include <vector>

#include "duet/data.hpp"
#include "duet/fusion.hpp"
#include "duet/model.hpp"

namespace duet {

double l1_loss(const Matrix& y_hat, const Matrix& y);

struct Metrics {
  double mse = 0;
  double mae = 0;
  int n_windows = 0;
};

Metrics compute_metrics(const std::vector<Matrix>& y_hat, const std::vector<Matrix>& y);

struct AdamState {
  std::vector<Matrix> m;  // first moments, for_each_tensor order
  std::vector<Matrix> v;  // second moments
  int64_t step = 0;
};

struct TrainState {
  DuetConfig config;
  ModelParams params;
  AdamState adam;
  double best_val_mse = 0;
  int epochs_since_best = 0;
};

struct FitOptions {
  // Parallel gradient evaluation within a batch; reduction order is fixed for
  // a given thread count.
  int threads = 1;
  bool verbose = false;
};

// Shuffled mini-batch Adam on the L1 loss with per-epoch validation MSE and
// early stopping; returns the best-validation state. Deterministic given
// (config, data, seed).
TrainState fit(const DuetConfig& cfg, const std::vector<WindowPair>& train_windows,
               const std::vector<WindowPair>& val_windows, const FitOptions& opts = {});

// Eval-mode metrics in normalized scale.
Metrics evaluate(const ModelParams& params, const DuetConfig& cfg,
                 const std::vector<WindowPair>& windows);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

std::string config_to_json(const DuetConfig& cfg);
DuetConfig config_from_json(const std::string& json_text);

enum class SyntheticKind { TwoRegime, CorrelatedPair, SinusoidMix };
SyntheticKind synthetic_kind_from_string(const std::string& s);

TimeSeriesDataset make_synthetic(SyntheticKind kind, int length, int channels, uint64_t seed);

// Segment length of the two_regime generator (even segments = regime A).
constexpr int kTwoRegimeSegment = 500;

// Report JSON with the fixed schema used by the CLI and the acceptance suite.
std::string make_report_json(const std::string& dataset, const DuetConfig& cfg,
                             const std::string& split, const Metrics& metrics, double wall_seconds);

}  // namespace duet
