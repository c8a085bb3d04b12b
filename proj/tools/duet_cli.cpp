// Command-line harness: train, eval, inspect, ablate, synth.
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "duet/data.hpp"
#include "duet/errors.hpp"
#include "duet/fusion.hpp"
#include "duet/model.hpp"
#include "duet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef DUET_BUILD_ID
#define DUET_BUILD_ID "dev"
#endif

namespace {

constexpr int kExitFlags = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

int exit_code_for(const duet::Error& e) {
  using duet::ErrorKind;
  switch (e.kind()) {
    case ErrorKind::Divergence:
      return kExitDivergence;
    case ErrorKind::FileNotFound:
    case ErrorKind::ParseError:
    case ErrorKind::EmptyDataset:
    case ErrorKind::NoWindows:
    case ErrorKind::SeriesTooShort:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::ConfigMismatch:
    case ErrorKind::CorruptCheckpoint:
      return kExitData;
    default:
      return kExitFlags;
  }
}

duet::SplitSpec parse_split(const std::string& s) {
  duet::SplitSpec spec;
  char c1 = 0, c2 = 0;
  std::istringstream is(s);
  if (!(is >> spec.train >> c1 >> spec.val >> c2 >> spec.test) || c1 != ':' || c2 != ':' ||
      !(is >> std::ws).eof() || spec.train <= 0 || spec.val < 0 || spec.test < 0) {
    throw duet::Error(duet::ErrorKind::InvalidConfig, "--split must look like 7:1:2, got '" + s + "'");
  }
  return spec;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw duet::Error(duet::ErrorKind::FileNotFound, "cannot write " + path);
  out << text;
}

// Common model/training flags shared by train and ablate.
struct ConfigFlags {
  int lookback = 96, horizon = 96, experts = 4, topk = 2, d = 64, d0 = 32, kernel = 25;
  int batch = 32, epochs = 30, patience = 5, threads = 1;
  double gamma = 0.9, lr = 1e-3, temperature = 1.0;
  uint64_t seed = 0;
  std::string variant = "full", metric = "learned_mahalanobis", split = "7:1:2";
  bool verbose = false;

  void add_to(CLI::App* cmd, bool with_seed_and_variant) {
    cmd->add_option("--lookback", lookback, "look-back window length T");
    cmd->add_option("--horizon", horizon, "forecast horizon F");
    cmd->add_option("--experts", experts, "extractor count M");
    cmd->add_option("--topk", topk, "extractors kept per channel (k)");
    cmd->add_option("--gamma", gamma, "off-diagonal probability cap");
    cmd->add_option("--kernel", kernel, "moving-average kernel width");
    cmd->add_option("--d", d, "feature width");
    cmd->add_option("--d0", d0, "router hidden width");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--batch", batch, "mini-batch size");
    cmd->add_option("--epochs", epochs, "maximum epochs");
    cmd->add_option("--patience", patience, "early-stopping patience");
    cmd->add_option("--temperature", temperature, "Gumbel-softmax temperature");
    cmd->add_option("--threads", threads, "gradient worker threads");
    cmd->add_option("--split", split, "train:val:test ratio, e.g. 7:1:2");
    cmd->add_flag("--verbose", verbose, "per-epoch progress on stderr");
    if (with_seed_and_variant) {
      cmd->add_option("--seed", seed, "RNG seed");
      cmd->add_option("--variant", variant, "full|no_tcm|no_ccm|full_attention|temporal_info");
      cmd->add_option("--metric", metric, "learned_mahalanobis|euclidean|cosine|random");
    }
  }

  duet::DuetConfig to_config() const {
    duet::DuetConfig cfg;
    cfg.T = lookback;
    cfg.F = horizon;
    cfg.M = experts;
    cfg.k = topk;
    cfg.d = d;
    cfg.d0 = d0;
    cfg.d_ff = 2 * d;
    cfg.kernel = kernel;
    cfg.gamma = gamma;
    cfg.temperature = temperature;
    cfg.lr = lr;
    cfg.batch_size = batch;
    cfg.max_epochs = epochs;
    cfg.patience = patience;
    cfg.seed = seed;
    cfg.variant = duet::variant_from_string(variant);
    cfg.metric_kind = duet::metric_kind_from_string(metric);
    return cfg;
  }
};

struct LoadedSplits {
  duet::TimeSeriesDataset ds;
  duet::SplitRanges ranges;
  std::vector<duet::WindowPair> train, val, test;
};

LoadedSplits load_and_split(const std::string& data_path, const duet::DuetConfig& cfg,
                            const duet::SplitSpec& spec) {
  LoadedSplits out;
  out.ds = duet::load_dataset(data_path);
  out.ranges = duet::split_dataset(out.ds, spec, cfg.T, cfg.F);
  out.train = duet::make_windows(out.ds, out.ranges.train, cfg.T, cfg.F);
  out.val = duet::make_windows(out.ds, out.ranges.val, cfg.T, cfg.F);
  out.test = duet::make_windows(out.ds, out.ranges.test, cfg.T, cfg.F);
  return out;
}

json manifest_base(const std::string& command, const duet::DuetConfig& cfg,
                   const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["config"] = json::parse(duet::config_to_json(cfg));
  m["input_paths"] = inputs;
  m["output_paths"] = outputs;
  m["build_id"] = DUET_BUILD_ID;
  auto now = std::chrono::system_clock::now().time_since_epoch();
  m["wall_clock_unix"] = std::chrono::duration_cast<std::chrono::seconds>(now).count();
  return m;
}

// One train + test-eval cell; shared by cmd_train and cmd_ablate.
struct CellResult {
  duet::TrainState state;
  duet::Metrics test;
  double wall_seconds = 0;
};

CellResult run_cell(duet::DuetConfig cfg, const LoadedSplits& splits, int threads, bool verbose) {
  auto t0 = std::chrono::steady_clock::now();
  cfg.N = splits.ds.channels();
  cfg.validate();
  duet::FitOptions opts;
  opts.threads = threads;
  opts.verbose = verbose;
  CellResult res;
  res.state = duet::fit(cfg, splits.train, splits.val, opts);
  res.test = duet::evaluate(res.state.params, res.state.config, splits.test);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

int cmd_train(const ConfigFlags& flags, const std::string& data_path, const std::string& out_dir) {
  duet::DuetConfig cfg = flags.to_config();
  LoadedSplits splits = load_and_split(data_path, cfg, parse_split(flags.split));
  cfg.N = splits.ds.channels();
  cfg.validate();

  fs::create_directories(out_dir);
  const std::string ckpt = (fs::path(out_dir) / "model.ckpt").string();
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  const std::string report_path = (fs::path(out_dir) / "report.json").string();
  json manifest =
      manifest_base("train", cfg, {data_path}, {ckpt, manifest_path, report_path});
  write_text(manifest_path, manifest.dump(2) + "\n");

  CellResult res = run_cell(cfg, splits, flags.threads, flags.verbose);
  duet::save_checkpoint(res.state, ckpt);
  write_text(report_path, duet::make_report_json(data_path, res.state.config, "test", res.test,
                                                 res.wall_seconds));
  std::cout << res.test.mse << "\t" << res.test.mae << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& split,
             const std::string& part, const std::string& report_path) {
  auto t0 = std::chrono::steady_clock::now();
  duet::TrainState state = duet::load_checkpoint(ckpt_path);
  const duet::DuetConfig& cfg = state.config;
  LoadedSplits splits = load_and_split(data_path, cfg, parse_split(split));
  if (splits.ds.channels() != cfg.N) {
    throw duet::Error(duet::ErrorKind::ConfigMismatch,
                      "checkpoint expects " + std::to_string(cfg.N) + " channels, data has " +
                          std::to_string(splits.ds.channels()));
  }
  const std::vector<duet::WindowPair>* windows = &splits.test;
  if (part == "train") windows = &splits.train;
  else if (part == "val") windows = &splits.val;
  else if (part != "test")
    throw duet::Error(duet::ErrorKind::InvalidConfig, "--split-part must be train|val|test");

  duet::Metrics m = duet::evaluate(state.params, cfg, *windows);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!report_path.empty())
    write_text(report_path, duet::make_report_json(data_path, cfg, part, m, wall));
  std::cout << m.mse << "\t" << m.mae << "\n";
  return 0;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& data_path, const std::string& what,
                int window_index, const std::string& out_csv) {
  duet::TrainState state = duet::load_checkpoint(ckpt_path);
  const duet::DuetConfig& cfg = state.config;
  duet::TimeSeriesDataset ds = duet::load_dataset(data_path);
  if (ds.channels() != cfg.N) {
    throw duet::Error(duet::ErrorKind::ConfigMismatch,
                      "checkpoint expects " + std::to_string(cfg.N) + " channels, data has " +
                          std::to_string(ds.channels()));
  }
  duet::IndexInterval all{0, ds.length()};
  std::vector<duet::WindowPair> windows = duet::make_windows(ds, all, cfg.T, cfg.F);
  if (window_index < 0 || window_index >= static_cast<int>(windows.size())) {
    throw duet::Error(duet::ErrorKind::NoWindows,
                      "--window " + std::to_string(window_index) + " out of range [0, " +
                          std::to_string(windows.size()) + ")");
  }

  duet::RngStream rng(cfg.seed);
  duet::ForwardTrace trace =
      duet::duet_forward_trace(windows[window_index].X, state.params, cfg, duet::RunMode::Eval, rng);

  std::ostringstream csv;
  csv.precision(17);
  if (what == "gates") {
    csv << "channel";
    for (int j = 0; j < cfg.effective_M(); ++j) csv << ",expert_" << j;
    csv << "\n";
    for (int c = 0; c < cfg.N; ++c) {
      csv << ds.channel_names[c];
      for (double g : trace.tcm.gates[c].dense()) csv << "," << g;
      csv << "\n";
    }
  } else if (what == "mask") {
    auto emit = [&](const duet::Matrix& m, const std::string& label) {
      csv << label;
      for (int j = 0; j < cfg.N; ++j) csv << "," << ds.channel_names[j];
      csv << "\n";
      for (int i = 0; i < cfg.N; ++i) {
        csv << ds.channel_names[i];
        for (int j = 0; j < cfg.N; ++j) csv << "," << m(i, j);
        csv << "\n";
      }
    };
    emit(trace.ccm.relation.P, "P");
    emit(trace.mask.hard, "M");
  } else {
    throw duet::Error(duet::ErrorKind::InvalidConfig, "--what must be gates or mask");
  }
  write_text(out_csv, csv.str());
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_ablate(const ConfigFlags& flags, const std::string& data_path, const std::string& variants,
               const std::string& seeds, const std::string& out_dir) {
  std::vector<std::string> variant_names = split_list(variants);
  std::vector<uint64_t> seed_list;
  for (const std::string& s : split_list(seeds)) seed_list.push_back(std::stoull(s));
  if (variant_names.empty() || seed_list.empty())
    throw duet::Error(duet::ErrorKind::InvalidConfig, "--variants and --seeds must be non-empty");
  for (const std::string& v : variant_names) duet::variant_from_string(v);  // fail fast: exit 2

  duet::DuetConfig base = flags.to_config();
  LoadedSplits splits = load_and_split(data_path, base, parse_split(flags.split));
  fs::create_directories(out_dir);

  struct Cell {
    std::string variant;
    uint64_t seed;
    duet::Metrics metrics;
    bool ok = false;
    std::string error;
  };
  std::vector<Cell> cells;
  for (const std::string& v : variant_names)
    for (uint64_t s : seed_list) cells.push_back({v, s, {}, false, ""});

  int max_parallel = 1;
  if (const char* env = std::getenv("DUET_THREADS")) max_parallel = std::max(1, std::atoi(env));
  std::atomic<size_t> next{0};
  std::mutex io_mutex;
  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      Cell& cell = cells[i];
      try {
        duet::DuetConfig cfg = base;
        cfg.variant = duet::variant_from_string(cell.variant);
        cfg.seed = cell.seed;
        CellResult res = run_cell(cfg, splits, 1, false);
        fs::path cell_dir = fs::path(out_dir) / cell.variant / ("seed" + std::to_string(cell.seed));
        fs::create_directories(cell_dir);
        write_text((cell_dir / "report.json").string(),
                   duet::make_report_json(data_path, res.state.config, "test", res.test,
                                          res.wall_seconds));
        cell.metrics = res.test;
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cerr << "ablate cell " << cell.variant << "/seed" << cell.seed << " failed: "
                  << e.what() << "\n";
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(max_parallel, static_cast<int>(cells.size())); ++t)
    pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ostringstream csv;
  csv.precision(17);
  csv << "variant,mean_mse,mean_mae\n";
  int any_ok = 0;
  for (const std::string& v : variant_names) {
    double mse = 0, mae = 0;
    int n = 0;
    for (const Cell& c : cells)
      if (c.variant == v && c.ok) {
        mse += c.metrics.mse;
        mae += c.metrics.mae;
        ++n;
      }
    if (n == 0) continue;
    any_ok += n;
    csv << v << "," << mse / n << "," << mae / n << "\n";
  }
  const std::string table_path = (fs::path(out_dir) / "ablation.csv").string();
  write_text(table_path, csv.str());
  std::cout << csv.str();
  if (any_ok == 0) {
    std::cerr << "ablate: all cells failed\n";
    return kExitData;
  }
  return 0;
}

int cmd_synth(const std::string& kind, int length, int channels, uint64_t seed,
              const std::string& out_csv) {
  duet::TimeSeriesDataset ds =
      duet::make_synthetic(duet::synthetic_kind_from_string(kind), length, channels, seed);
  duet::write_dataset_csv(ds, out_csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-of-extractors time series forecaster"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  std::string train_data, train_out;
  CLI::App* train = app.add_subcommand("train", "fit a model and save a checkpoint");
  train->add_option("--data", train_data, "input CSV")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train_flags.add_to(train, true);

  std::string eval_ckpt, eval_data, eval_split = "7:1:2", eval_part = "test", eval_report;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "input CSV")->required();
  eval->add_option("--split", eval_split, "train:val:test ratio");
  eval->add_option("--split-part", eval_part, "train|val|test");
  eval->add_option("--report", eval_report, "report JSON path");

  std::string ins_ckpt, ins_data, ins_what, ins_out;
  int ins_window = 0;
  CLI::App* inspect = app.add_subcommand("inspect", "export gate weights or channel mask as CSV");
  inspect->add_option("--ckpt", ins_ckpt, "checkpoint path")->required();
  inspect->add_option("--data", ins_data, "input CSV")->required();
  inspect->add_option("--what", ins_what, "gates|mask")->required();
  inspect->add_option("--window", ins_window, "window index");
  inspect->add_option("--out", ins_out, "output CSV")->required();

  ConfigFlags ablate_flags;
  std::string ab_data, ab_variants, ab_seeds, ab_out;
  CLI::App* ablate = app.add_subcommand("ablate", "train+eval a variant/seed grid");
  ablate->add_option("--data", ab_data, "input CSV")->required();
  ablate->add_option("--variants", ab_variants, "comma-separated variant names")->required();
  ablate->add_option("--seeds", ab_seeds, "comma-separated seeds")->required();
  ablate->add_option("--out", ab_out, "output directory")->required();
  ablate_flags.add_to(ablate, false);

  std::string sy_kind, sy_out;
  int sy_length = 4000, sy_channels = 4;
  uint64_t sy_seed = 0;
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic dataset CSV");
  synth->add_option("--kind", sy_kind, "two_regime|correlated_pair|sinusoid_mix")->required();
  synth->add_option("--length", sy_length, "timestamps");
  synth->add_option("--channels", sy_channels, "channels");
  synth->add_option("--seed", sy_seed, "RNG seed");
  synth->add_option("--out", sy_out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n";
    return kExitFlags;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags, train_data, train_out);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_part, eval_report);
    if (inspect->parsed()) return cmd_inspect(ins_ckpt, ins_data, ins_what, ins_window, ins_out);
    if (ablate->parsed()) return cmd_ablate(ablate_flags, ab_data, ab_variants, ab_seeds, ab_out);
    if (synth->parsed()) return cmd_synth(sy_kind, sy_length, sy_channels, sy_seed, sy_out);
  } catch (const duet::Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitFlags;
  }
  return 0;
}
