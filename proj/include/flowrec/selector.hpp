#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowrec/csv_io.hpp"
#include "flowrec/term_library.hpp"
#include "flowrec/types.hpp"

namespace flowrec {

// Fig-style design-space domains: platform x task x hidden size x epochs x
// sequence length.
inline constexpr std::array<int, 2> kPlatforms = {0, 1};   // 0 FPGA, 1 GPU
inline constexpr std::array<int, 3> kTasks = {0, 1, 2};    // ML, ML+PG, MR
inline constexpr std::array<int, 4> kHiddenSizes = {16, 32, 64, 128};
inline constexpr std::array<int, 4> kEpochChoices = {16, 32, 64, 128};
inline constexpr std::array<int, 3> kSeqLengths = {50, 100, 200};

struct MeasurementRow {
  int platform = 0;  // a
  int task = 0;      // h
  int hi = 0;
  int epochs = 0;    // e
  int seq_len = 0;   // N
  double error = 0;
  double time_s = 0;
  double energy_j = 0;
  double dram_mb = 0;
};

struct MeasurementTable {
  std::vector<MeasurementRow> rows;

  static MeasurementTable bundled();
  static MeasurementTable load_csv(const std::string& path);
  void save_csv(const std::string& path) const;
};

struct DesignPoint {
  int platform = 0;
  int task = 0;
  int hi = 0;
  int epochs = 0;
  int seq_len = 0;
  double error_budget = 0;  // epsilon, used only when the feature set has it
};

// Polynomial feature map over (hi, e, N), optionally the continuous error
// variable, optionally one-hot platform/task indicators interacting with the
// linear terms. Monomial ordering reuses the term-library convention.
struct FeatureDescriptor {
  int degree = 3;
  bool include_error = false;
  bool include_categoricals = true;

  TermLibrary monomials() const {
    return TermLibrary(include_error ? 4 : 3, 0, degree, true);
  }

  Index feature_count() const {
    Index n = monomials().size();
    if (include_categoricals) n += 3 * 4;  // {a=1,h=1,h=2} x {1, hi, e, N}
    return n;
  }

  Vector<double> eval(const DesignPoint& p) const {
    Vector<double> vars(include_error ? 4 : 3);
    vars[0] = p.hi;
    vars[1] = p.epochs;
    vars[2] = p.seq_len;
    if (include_error) vars[3] = p.error_budget;
    const TermLibrary lib = monomials();
    Vector<double> base = eval_features<double>(lib, vars, Vector<double>());
    if (!include_categoricals) return base;
    Vector<double> out(feature_count());
    out.head(base.size()) = base;
    const std::array<double, 3> ind = {p.platform == 1 ? 1.0 : 0.0,
                                       p.task == 1 ? 1.0 : 0.0,
                                       p.task == 2 ? 1.0 : 0.0};
    Index pos = base.size();
    for (double flag : ind) {
      out[pos++] = flag;
      out[pos++] = flag * p.hi;
      out[pos++] = flag * p.epochs;
      out[pos++] = flag * p.seq_len;
    }
    return out;
  }
};

struct SurrogateModel {
  FeatureDescriptor features;
  Vector<double> coefficients;
  double lambda = 0;
  std::string target;
};

// Ridge solve of the regularized least squares || A w - y ||^2 + lambda
// ||w_penalized||^2 via QR on the augmented system; the column flagged as
// bias is unpenalized. Rank-deficient systems with lambda == 0 are rejected.
inline Vector<double> ridge_fit(const MatrixRef<double>& A,
                                const VectorRef<double>& y, double lambda,
                                Index bias_column = 0) {
  if (A.rows() < 1 || A.rows() != y.size())
    throw std::invalid_argument("ridge_fit: bad sample count");
  if (lambda < 0) throw std::invalid_argument("ridge_fit: lambda must be >= 0");
  const Index n = A.cols();
  Index n_penalized = 0;
  for (Index j = 0; j < n; ++j)
    if (j != bias_column) ++n_penalized;

  Matrix<double> aug(A.rows() + (lambda > 0 ? n_penalized : 0), n);
  Vector<double> rhs = Vector<double>::Zero(aug.rows());
  aug.topRows(A.rows()) = A;
  rhs.head(y.size()) = y;
  if (lambda > 0) {
    aug.bottomRows(n_penalized).setZero();
    Index r = A.rows();
    const double root = std::sqrt(lambda);
    for (Index j = 0; j < n; ++j) {
      if (j == bias_column) continue;
      aug(r, j) = root;
      ++r;
    }
  }
  Eigen::ColPivHouseholderQR<Matrix<double>> qr(aug);
  if (lambda == 0 && qr.rank() < n)
    throw std::runtime_error(
        "ridge_fit: rank-deficient system with lambda = 0 (rank " +
        std::to_string(qr.rank()) + " of " + std::to_string(n) + ")");
  return qr.solve(rhs);
}

inline SurrogateModel fit_surrogate(const MeasurementTable& table,
                                    const std::string& target,
                                    const FeatureDescriptor& features,
                                    double lambda) {
  if (table.rows.empty())
    throw std::invalid_argument("fit_surrogate: empty measurement table");
  const Index nf = features.feature_count();
  Matrix<double> A(static_cast<Index>(table.rows.size()), nf);
  Vector<double> y(static_cast<Index>(table.rows.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    DesignPoint p{r.platform, r.task, r.hi, r.epochs, r.seq_len, r.error};
    A.row(static_cast<Index>(i)) = features.eval(p).transpose();
    double v = 0;
    if (target == "error") v = r.error;
    else if (target == "time") v = r.time_s;
    else if (target == "energy") v = r.energy_j;
    else if (target == "dram") v = r.dram_mb;
    else throw std::invalid_argument("fit_surrogate: unknown target " + target);
    y[static_cast<Index>(i)] = v;
  }
  SurrogateModel m;
  m.features = features;
  m.lambda = lambda;
  m.target = target;
  m.coefficients = ridge_fit(A, y, lambda);
  return m;
}

inline double predict(const SurrogateModel& surrogate, const DesignPoint& p) {
  const Vector<double> f = surrogate.features.eval(p);
  if (f.size() != surrogate.coefficients.size())
    throw std::invalid_argument("predict: feature dimension mismatch");
  return surrogate.coefficients.dot(f);
}

struct Surrogates {
  SurrogateModel error;   // f_e(a,h,hi,e,N)
  SurrogateModel time;    // t_ex(a,h,hi,e,N)
  SurrogateModel power;   // f_p -> P in the objective
  SurrogateModel memory;  // f_m -> M in the objective
};

inline Surrogates fit_all_surrogates(const MeasurementTable& table,
                                     int degree = 3, double lambda = 1.0) {
  FeatureDescriptor fd;
  fd.degree = degree;
  fd.include_error = false;
  fd.include_categoricals = true;
  Surrogates s;
  s.error = fit_surrogate(table, "error", fd, lambda);
  s.time = fit_surrogate(table, "time", fd, lambda);
  s.power = fit_surrogate(table, "energy", fd, lambda);
  s.memory = fit_surrogate(table, "dram", fd, lambda);
  return s;
}

struct SelectionResult {
  int platform = 0, task = 0, hi = 0, epochs = 0, seq_len = 0;
  double predicted_error = 0;
  double predicted_time = 0;
  double p = 0;        // power/energy surrogate value
  double m = 0;        // memory surrogate value
  double objective = 0;
  bool feasible = false;
  Index candidates = 0;
  std::optional<double> refined_eps;
};

// Exhaustive evaluation of the 2*3*4*4*3 grid; minimizes gamma*P +
// (1-gamma)*M under the error/time constraints. Ties break toward lower
// predicted error, then lower predicted time, then lexicographic tuple.
// An empty feasible set yields the least-violating configuration flagged
// infeasible.
inline SelectionResult enumerate_select(const Surrogates& s, double gamma,
                                        double eps_max, double time_max) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("enumerate_select: gamma must be in [0,1]");
  SelectionResult best;
  bool have_best = false;
  double best_violation = 0;
  SelectionResult least_violating;
  bool have_violating = false;
  Index candidates = 0;

  for (int a : kPlatforms)
    for (int h : kTasks)
      for (int hi : kHiddenSizes)
        for (int e : kEpochChoices)
          for (int N : kSeqLengths) {
            ++candidates;
            const DesignPoint pt{a, h, hi, e, N, 0.0};
            SelectionResult cand;
            cand.platform = a;
            cand.task = h;
            cand.hi = hi;
            cand.epochs = e;
            cand.seq_len = N;
            cand.predicted_error = predict(s.error, pt);
            cand.predicted_time = predict(s.time, pt);
            cand.p = predict(s.power, pt);
            cand.m = predict(s.memory, pt);
            cand.objective = gamma * cand.p + (1.0 - gamma) * cand.m;
            const bool ok = cand.predicted_error < eps_max &&
                            cand.predicted_time < time_max;
            if (ok) {
              cand.feasible = true;
              auto key = [](const SelectionResult& r) {
                return std::make_tuple(r.objective, r.predicted_error,
                                       r.predicted_time, r.platform, r.task,
                                       r.hi, r.epochs, r.seq_len);
              };
              if (!have_best || key(cand) < key(best)) {
                best = cand;
                have_best = true;
              }
            } else {
              const double violation =
                  std::max(0.0, cand.predicted_error - eps_max) +
                  std::max(0.0, cand.predicted_time - time_max);
              if (!have_violating || violation < best_violation) {
                least_violating = cand;
                best_violation = violation;
                have_violating = true;
              }
            }
          }

  SelectionResult out = have_best ? best : least_violating;
  out.candidates = candidates;
  return out;
}

// Bounded 1-D quasi-Newton descent (secant curvature, central-difference
// gradients, backtracking) from the interval midpoint. Returns a point with
// projected gradient magnitude <= 1e-6 or the best boundary point.
inline double refine_continuous(const std::function<double(double)>& objective,
                                double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("refine_continuous: bad bounds");
  const double span = hi - lo;
  const double gtol = 1e-6;
  const double fd = std::max(1e-7, 1e-7 * span);
  auto grad = [&](double x) {
    const double a = std::min(hi, x + fd), b = std::max(lo, x - fd);
    return (objective(a) - objective(b)) / (a - b);
  };
  auto clamp = [&](double x) { return std::min(hi, std::max(lo, x)); };
  auto projected_grad = [&](double x, double g) {
    if (x <= lo && g > 0) return 0.0;
    if (x >= hi && g < 0) return 0.0;
    return g;
  };

  double x = 0.5 * (lo + hi);
  double f = objective(x);
  if (!std::isfinite(f))
    throw std::runtime_error("refine_continuous: non-finite objective");
  double curvature = 0;  // secant estimate of f''
  double prev_x = x, prev_g = 0;
  bool have_prev = false;
  for (int iter = 0; iter < 200; ++iter) {
    const double g = grad(x);
    if (!std::isfinite(g))
      throw std::runtime_error("refine_continuous: non-finite objective");
    if (std::abs(projected_grad(x, g)) <= gtol) return x;
    if (have_prev && std::abs(x - prev_x) > 1e-14) {
      const double c = (g - prev_g) / (x - prev_x);
      if (std::isfinite(c) && c > 0) curvature = c;
    }
    double step = curvature > 0 ? -g / curvature : -span * 0.25 * (g > 0 ? 1 : -1);
    prev_x = x;
    prev_g = g;
    have_prev = true;
    // Backtracking line search with projection onto the box.
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls) {
      const double cand = clamp(x + t * step);
      const double fc = objective(cand);
      if (std::isfinite(fc) && (fc < f || cand == x)) {
        if (cand == x) return x;  // pinned at a boundary
        x = cand;
        f = fc;
        break;
      }
      t *= 0.5;
      if (ls == 59) return x;  // no descent found
    }
  }
  return x;
}

// ---- Measurement table I/O and the bundled platform measurements ---------

inline MeasurementTable MeasurementTable::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("MeasurementTable: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("MeasurementTable: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "platform,task,hi,e,N,error,time_s,energy_J,dram_MB")
    throw std::runtime_error("MeasurementTable: bad header in " + path);
  MeasurementTable table;
  Index row_index = 1;
  while (std::getline(in, line)) {
    ++row_index;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 9)
      throw std::runtime_error("MeasurementTable: row " +
                               std::to_string(row_index) + " has " +
                               std::to_string(cells.size()) + " cells");
    const char* ctx = "measurement table";
    MeasurementRow r;
    r.platform = static_cast<int>(parse_double(cells[0], ctx));
    r.task = static_cast<int>(parse_double(cells[1], ctx));
    r.hi = static_cast<int>(parse_double(cells[2], ctx));
    r.epochs = static_cast<int>(parse_double(cells[3], ctx));
    r.seq_len = static_cast<int>(parse_double(cells[4], ctx));
    r.error = parse_double(cells[5], ctx);
    r.time_s = parse_double(cells[6], ctx);
    r.energy_j = parse_double(cells[7], ctx);
    r.dram_mb = parse_double(cells[8], ctx);
    if (r.platform < 0 || r.platform > 1 || r.task < 0 || r.task > 2)
      throw std::runtime_error("MeasurementTable: categorical out of domain at row " +
                               std::to_string(row_index));
    table.rows.push_back(r);
  }
  return table;
}

inline void MeasurementTable::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("MeasurementTable: cannot open " + path);
  out << "platform,task,hi,e,N,error,time_s,energy_J,dram_MB\n";
  for (const auto& r : rows) {
    out << r.platform << "," << r.task << "," << r.hi << "," << r.epochs << ","
        << r.seq_len << "," << format_double(r.error) << ","
        << format_double(r.time_s) << "," << format_double(r.energy_j) << ","
        << format_double(r.dram_mb) << "\n";
  }
}

// Platform measurements shipped with the tool: per (platform, task, hidden
// size) average error, training time, energy, and DRAM footprint. Epochs and
// sequence length were not varied in the source measurements and carry the
// fixed training configuration (e=128, N=200).
inline MeasurementTable MeasurementTable::bundled() {
  // {platform, task, hi, error, time, energy, dram}
  struct Raw { int a, h, hi; double err, t, e, d; };
  static constexpr Raw raw[] = {
      {0, 0, 16, 7.33, 37.37, 177.13, 210.46},
      {0, 0, 32, 7.872, 39.62, 193.23, 210.94},
      {0, 0, 64, 7.769, 42.16, 208.52, 209.55},
      {0, 0, 128, 7.37, 66.74, 327.36, 214.45},
      {1, 0, 16, 8.5603, 30.83, 5457.24, 4399.70},
      {1, 0, 32, 7.2366, 29.98, 5438.65, 4399.61},
      {1, 0, 64, 7.772, 29.78, 5477.22, 4404.27},
      {1, 0, 128, 7.5498, 29.41, 5560.32, 4433.51},
      {0, 1, 16, 6.79, 32.2, 152.63, 225.07},
      {0, 1, 32, 8.29, 33.36, 162.70, 225.11},
      {0, 1, 64, 6.478, 42.04, 207.93, 226.61},
      {0, 1, 128, 8.02, 66.74, 327.36, 229.14},
      {1, 1, 16, 7.309, 30.31, 5488.00, 4344.71},
      {1, 1, 32, 7.257, 29.21, 5437.39, 4351.26},
      {1, 1, 64, 7.762, 30.45, 5459.41, 4363.09},
      {1, 1, 128, 6.931, 29.78, 6236.72, 4377.54},
      {0, 2, 16, 5.3678, 55.23, 261.79, 211.29},
      {0, 2, 32, 4.91, 54.7, 266.77, 210.63},
      {0, 2, 64, 5.77, 63.69, 315.01, 211.72},
      {0, 2, 128, 4.6, 88.5, 434.09, 214.23},
      {1, 2, 16, 3.179, 163.51, 29943.68, 5862.32},
      {1, 2, 32, 3.54, 145.87, 27403.20, 5881.50},
      {1, 2, 64, 3.1157, 152.55, 29206.32, 5947.67},
      {1, 2, 128, 3.2965, 149.14, 27375.12, 6118.36},
  };
  MeasurementTable table;
  for (const auto& r : raw) {
    MeasurementRow row;
    row.platform = r.a;
    row.task = r.h;
    row.hi = r.hi;
    row.epochs = 128;
    row.seq_len = 200;
    row.error = r.err;
    row.time_s = r.t;
    row.energy_j = r.e;
    row.dram_mb = r.d;
    table.rows.push_back(row);
  }
  return table;
}

}  // namespace flowrec
