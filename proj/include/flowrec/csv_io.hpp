#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "flowrec/ode_solver.hpp"
#include "flowrec/types.hpp"

namespace flowrec {

// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const char* context) {
  double v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw std::runtime_error(std::string("non-numeric value '") + s + "' in " +
                             context);
  return v;
}

using TimeSeriesDataset = Trajectory<double>;

// Dataset interchange format: header t,x1..xn,u1..um, one row per sample.
inline void save_csv(const TimeSeriesDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  out << "t";
  for (Index i = 0; i < data.states.cols(); ++i) out << ",x" << (i + 1);
  for (Index j = 0; j < data.inputs.cols(); ++j) out << ",u" << (j + 1);
  out << "\n";
  for (Index r = 0; r < data.rows(); ++r) {
    out << format_double(data.times[r]);
    for (Index i = 0; i < data.states.cols(); ++i)
      out << "," << format_double(data.states(r, i));
    for (Index j = 0; j < data.inputs.cols(); ++j)
      out << "," << format_double(data.inputs(r, j));
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_csv: write failed for " + path);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline TimeSeriesDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "t")
    throw std::runtime_error("load_csv: header must start with 't'");
  Index n = 0, m = 0;
  std::size_t pos = 1;
  while (pos < header.size() &&
         header[pos] == "x" + std::to_string(n + 1)) {
    ++n;
    ++pos;
  }
  while (pos < header.size() &&
         header[pos] == "u" + std::to_string(m + 1)) {
    ++m;
    ++pos;
  }
  if (pos != header.size() || n == 0)
    throw std::runtime_error("load_csv: malformed header (expected t,x1..xn,u1..um)");

  std::vector<std::vector<double>> rows;
  Index row_index = 1;
  while (std::getline(in, line)) {
    ++row_index;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<Index>(cells.size()) != 1 + n + m)
      throw std::runtime_error("load_csv: row " + std::to_string(row_index) +
                               " has " + std::to_string(cells.size()) +
                               " cells, expected " + std::to_string(1 + n + m));
    std::vector<double> vals;
    vals.reserve(cells.size());
    for (const auto& c : cells)
      vals.push_back(
          parse_double(c, ("row " + std::to_string(row_index)).c_str()));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::runtime_error("load_csv: no data rows");

  TimeSeriesDataset data;
  const Index N = static_cast<Index>(rows.size());
  data.times.resize(N);
  data.states.resize(N, n);
  data.inputs.resize(N, m);
  for (Index r = 0; r < N; ++r) {
    const auto& vals = rows[static_cast<std::size_t>(r)];
    data.times[r] = vals[0];
    for (Index i = 0; i < n; ++i)
      data.states(r, i) = vals[static_cast<std::size_t>(1 + i)];
    for (Index j = 0; j < m; ++j)
      data.inputs(r, j) = vals[static_cast<std::size_t>(1 + n + j)];
  }

  // Uniform-grid check, 1e-9 relative.
  if (N > 1) {
    const double dt = data.times[1] - data.times[0];
    if (!(dt > 0)) throw std::runtime_error("load_csv: non-increasing time at row 2");
    for (Index r = 1; r < N; ++r) {
      const double step = data.times[r] - data.times[r - 1];
      const double tol = 1e-9 * std::max({std::abs(dt), std::abs(data.times[r]), 1.0});
      if (std::abs(step - dt) > tol)
        throw std::runtime_error("load_csv: non-uniform time grid at row " +
                                 std::to_string(r + 1));
    }
  }
  return data;
}

}  // namespace flowrec
