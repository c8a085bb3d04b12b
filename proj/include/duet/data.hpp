#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duet/matrix.hpp"

namespace duet {

// Raw series. values is N x L (row = channel, column = timestamp), immutable
// after load.
struct TimeSeriesDataset {
  Matrix values;  // N x L
  std::vector<std::string> channel_names;
  std::string source_path;
  std::string frequency_label;

  int channels() const { return values.rows; }
  int length() const { return values.cols; }
};

struct SplitSpec {
  double train = 7;
  double val = 1;
  double test = 2;
};

struct IndexInterval {
  int begin = 0;
  int end = 0;  // exclusive
  int length() const { return end - begin; }
};

struct SplitRanges {
  IndexInterval train, val, test;
};

struct WindowPair {
  Matrix X;  // N x T
  Matrix Y;  // N x F
  int origin_index = 0;  // first timestamp of Y in the raw series
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;  // clamped to >= std_floor
};

TimeSeriesDataset load_dataset(const std::string& path, bool has_header = true,
                               const std::optional<std::string>& date_column = std::nullopt);

// Chronological split by floor of cumulative ratio. T and F are needed to
// check every segment can host at least one window (val/test may borrow
// look-back from the preceding segment, so only Y must fit).
SplitRanges split_dataset(const TimeSeriesDataset& ds, const SplitSpec& spec, int T, int F);

std::vector<WindowPair> make_windows(const TimeSeriesDataset& ds, const IndexInterval& range, int T,
                                     int F);

// Per-channel standardization with population (1/T) std, clamped at std_floor.
std::pair<Matrix, NormStats> instance_normalize(const Matrix& X, double std_floor = 1e-5);

Matrix instance_denormalize(const Matrix& Y_hat, const NormStats& stats);

Matrix apply_normalize(const Matrix& X, const NormStats& stats);

void write_dataset_csv(const TimeSeriesDataset& ds, const std::string& path);

}  // namespace duet
