#include "duet/data.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace duet {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  double x = std::strtod(s.c_str(), &end);
  if (errno != 0 || end != s.c_str() + s.size() || !std::isfinite(x)) return false;
  *out = x;
  return true;
}

bool looks_like_date(const std::string& name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "date" || lower == "time" || lower == "timestamp" || lower == "datetime";
}

}  // namespace

TimeSeriesDataset load_dataset(const std::string& path, bool has_header,
                               const std::optional<std::string>& date_column) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileNotFound, "cannot open " + path);

  std::string line;
  std::vector<std::string> names;
  int date_col = -1;
  int n_cols = -1;

  if (has_header) {
    if (!std::getline(in, line)) throw Error(ErrorKind::EmptyDataset, path + ": no header row");
    names = split_line(line);
    n_cols = static_cast<int>(names.size());
    for (int i = 0; i < n_cols; ++i) {
      if (date_column ? names[i] == *date_column : (i == 0 && looks_like_date(names[i]))) {
        date_col = i;
        break;
      }
    }
    if (date_column && date_col < 0)
      throw Error(ErrorKind::ParseError, path + ": date column '" + *date_column + "' not found");
  }

  std::vector<std::vector<double>> rows;  // data row -> channel values
  int row_idx = 0;
  while (std::getline(in, line)) {
    ++row_idx;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (n_cols < 0) {
      n_cols = static_cast<int>(cells.size());
      if (date_column) throw Error(ErrorKind::ParseError, "date column given but file has no header");
    }
    if (static_cast<int>(cells.size()) != n_cols)
      throw Error(ErrorKind::ParseError,
                  path + ": row " + std::to_string(row_idx) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(n_cols));
    std::vector<double> vals;
    vals.reserve(n_cols);
    for (int c = 0; c < n_cols; ++c) {
      if (c == date_col) continue;
      double x;
      if (!parse_double(cells[c], &x))
        throw Error(ErrorKind::ParseError, path + ": non-numeric cell at row " +
                                               std::to_string(row_idx) + ", col " + std::to_string(c) +
                                               " ('" + cells[c] + "')");
      vals.push_back(x);
    }
    rows.push_back(std::move(vals));
  }

  int l = static_cast<int>(rows.size());
  int n = l > 0 ? static_cast<int>(rows[0].size()) : (n_cols >= 0 ? n_cols - (date_col >= 0 ? 1 : 0) : 0);
  if (l == 0 || n == 0) throw Error(ErrorKind::EmptyDataset, path + ": no data rows or channels");

  TimeSeriesDataset ds;
  ds.values = Matrix(n, l);
  for (int t = 0; t < l; ++t)
    for (int c = 0; c < n; ++c) ds.values(c, t) = rows[t][c];
  ds.source_path = path;
  if (has_header) {
    for (int i = 0; i < static_cast<int>(names.size()); ++i)
      if (i != date_col) ds.channel_names.push_back(names[i]);
  } else {
    for (int i = 0; i < n; ++i) ds.channel_names.push_back("c" + std::to_string(i));
  }
  return ds;
}

SplitRanges split_dataset(const TimeSeriesDataset& ds, const SplitSpec& spec, int T, int F) {
  double total = spec.train + spec.val + spec.test;
  if (!(total > 0) || spec.train < 0 || spec.val < 0 || spec.test < 0)
    throw Error(ErrorKind::InvalidSplit, "split ratios must be nonnegative with a positive sum");
  int l = ds.length();
  int b1 = static_cast<int>(std::floor(l * spec.train / total));
  int b2 = static_cast<int>(std::floor(l * (spec.train + spec.val) / total));
  SplitRanges r{{0, b1}, {b1, b2}, {b2, l}};

  // The first segment needs T+F timestamps; later segments borrow look-back,
  // so F timestamps suffice.
  if (r.train.length() < T + F)
    throw Error(ErrorKind::InvalidSplit, "train segment too short for one window");
  if (r.val.length() < F) throw Error(ErrorKind::InvalidSplit, "val segment too short for one window");
  if (r.test.length() < F)
    throw Error(ErrorKind::InvalidSplit, "test segment too short for one window");
  return r;
}

std::vector<WindowPair> make_windows(const TimeSeriesDataset& ds, const IndexInterval& range, int T,
                                     int F) {
  if (T <= 0 || F <= 0) throw Error(ErrorKind::InvalidSpec, "T and F must be positive");
  // origin = first timestamp of Y; X covers [origin-T, origin).
  int first_origin = std::max(range.begin, T);
  int last_origin = range.end - F;  // inclusive
  if (first_origin > last_origin)
    throw Error(ErrorKind::NoWindows, "range [" + std::to_string(range.begin) + "," +
                                          std::to_string(range.end) + ") admits no window");
  int n = ds.channels();
  std::vector<WindowPair> out;
  out.reserve(last_origin - first_origin + 1);
  for (int o = first_origin; o <= last_origin; ++o) {
    WindowPair w;
    w.origin_index = o;
    w.X = Matrix(n, T);
    w.Y = Matrix(n, F);
    for (int c = 0; c < n; ++c) {
      for (int t = 0; t < T; ++t) w.X(c, t) = ds.values(c, o - T + t);
      for (int t = 0; t < F; ++t) w.Y(c, t) = ds.values(c, o + t);
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::pair<Matrix, NormStats> instance_normalize(const Matrix& X, double std_floor) {
  int n = X.rows, t = X.cols;
  NormStats stats;
  stats.mean.resize(n);
  stats.std.resize(n);
  Matrix out(n, t);
  for (int c = 0; c < n; ++c) {
    double mean = 0;
    for (int j = 0; j < t; ++j) mean += X(c, j);
    mean /= t;
    double var = 0;
    for (int j = 0; j < t; ++j) {
      double d = X(c, j) - mean;
      var += d * d;
    }
    var /= t;  // population std
    double sd = std::max(std::sqrt(var), std_floor);
    stats.mean[c] = mean;
    stats.std[c] = sd;
    for (int j = 0; j < t; ++j) out(c, j) = (X(c, j) - mean) / sd;
  }
  return {std::move(out), std::move(stats)};
}

Matrix instance_denormalize(const Matrix& Y_hat, const NormStats& stats) {
  if (Y_hat.rows != static_cast<int>(stats.mean.size()))
    throw Error(ErrorKind::ShapeMismatch, "denormalize: channel count mismatch");
  Matrix out = Y_hat;
  for (int c = 0; c < out.rows; ++c)
    for (int j = 0; j < out.cols; ++j) out(c, j) = Y_hat(c, j) * stats.std[c] + stats.mean[c];
  return out;
}

Matrix apply_normalize(const Matrix& X, const NormStats& stats) {
  if (X.rows != static_cast<int>(stats.mean.size()))
    throw Error(ErrorKind::ShapeMismatch, "apply_normalize: channel count mismatch");
  Matrix out = X;
  for (int c = 0; c < out.rows; ++c)
    for (int j = 0; j < out.cols; ++j) out(c, j) = (X(c, j) - stats.mean[c]) / stats.std[c];
  return out;
}

void write_dataset_csv(const TimeSeriesDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::FileNotFound, "cannot write " + path);
  for (int c = 0; c < ds.channels(); ++c) out << (c ? "," : "") << ds.channel_names[c];
  out << "\n";
  char buf[40];
  for (int t = 0; t < ds.length(); ++t) {
    for (int c = 0; c < ds.channels(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.values(c, t));
      out << (c ? "," : "") << buf;
    }
    out << "\n";
  }
}

}  // namespace duet
