#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>

#include "flowrec/csv_io.hpp"
#include "flowrec/ode_solver.hpp"
#include "flowrec/random.hpp"
#include "flowrec/sparse_model.hpp"

namespace flowrec {

// Piecewise input signal evaluated on the sample grid; held constant between
// samples like everything else in the pipeline.
struct InputSignal {
  enum class Type { none, constant, step, sine };
  Type type = Type::none;
  double value = 0;    // constant
  double before = 0, after = 0, t_step = 0;  // step
  double amplitude = 0, frequency = 0, phase = 0, offset = 0;  // sine

  double eval(double t) const {
    switch (type) {
      case Type::none:
        return 0;
      case Type::constant:
        return value;
      case Type::step:
        return t < t_step ? before : after;
      case Type::sine:
        return offset + amplitude * std::sin(2.0 * std::numbers::pi *
                                                 frequency * t +
                                             phase);
    }
    return 0;
  }
};

enum class SystemId { lotka_volterra, lorenz, f8_cruiser, pathogen };

inline SystemId system_from_name(const std::string& name) {
  if (name == "lotka_volterra") return SystemId::lotka_volterra;
  if (name == "lorenz") return SystemId::lorenz;
  if (name == "f8_cruiser") return SystemId::f8_cruiser;
  if (name == "pathogen") return SystemId::pathogen;
  throw std::runtime_error("unknown benchmark system: " + name);
}

inline std::string system_name(SystemId id) {
  switch (id) {
    case SystemId::lotka_volterra: return "lotka_volterra";
    case SystemId::lorenz: return "lorenz";
    case SystemId::f8_cruiser: return "f8_cruiser";
    case SystemId::pathogen: return "pathogen";
  }
  return {};
}

struct BenchmarkSpec {
  SystemId system = SystemId::lotka_volterra;
  Vector<double> x0;          // empty -> system default
  InputSignal input;
  bool input_set = false;     // false -> system default input
  double duration = 200.0;    // seconds
  double rate = 0;            // Hz, 0 -> system default
  double noise = 0;           // additive Gaussian std on the states
  std::uint64_t seed = 0;
  int substeps = 100;         // generation solver steps per sample
};

// Ground-truth models. Lotka-Volterra uses the recovered predator-prey
// coefficients that every recovery test targets; Lorenz and the pathogen
// (SIR with vaccination input) use canonical textbook parameters.
inline SparseODEModel<double> ground_truth_model(SystemId id) {
  switch (id) {
    case SystemId::lotka_volterra: {
      // dx1 = 0.52 x1 - 0.026 x1 x2 ; dx2 = 0.999 u - 0.501 x2 + 0.005 x1 x2
      TermLibrary lib = build_library(2, 1, 2);
      Matrix<double> theta = Matrix<double>::Zero(2, lib.size());
      theta(0, lib.find("x1")) = 0.52;
      theta(0, lib.find("x1*x2")) = -0.026;
      theta(1, lib.find("u1")) = 0.999;
      theta(1, lib.find("x2")) = -0.501;
      theta(1, lib.find("x1*x2")) = 0.005;
      return SparseODEModel<double>(lib, theta, 0.001);
    }
    case SystemId::lorenz: {
      // sigma=10, rho=28, beta=8/3
      TermLibrary lib = build_library(3, 0, 2);
      Matrix<double> theta = Matrix<double>::Zero(3, lib.size());
      theta(0, lib.find("x1")) = -10.0;
      theta(0, lib.find("x2")) = 10.0;
      theta(1, lib.find("x1")) = 28.0;
      theta(1, lib.find("x2")) = -1.0;
      theta(1, lib.find("x1*x3")) = -1.0;
      theta(2, lib.find("x3")) = -8.0 / 3.0;
      theta(2, lib.find("x1*x2")) = 1.0;
      return SparseODEModel<double>(lib, theta, 0.0);
    }
    case SystemId::pathogen: {
      // SIR with vaccination input: dS = -beta S I - u S, dI = beta S I -
      // gamma I, dR = gamma I + u S; beta=0.3, gamma=0.1.
      TermLibrary lib = build_library(3, 1, 2);
      Matrix<double> theta = Matrix<double>::Zero(3, lib.size());
      theta(0, lib.find("x1*x2")) = -0.3;
      theta(1, lib.find("x1*x2")) = 0.3;
      theta(1, lib.find("x2")) = -0.1;
      theta(2, lib.find("x2")) = 0.1;
      return SparseODEModel<double>(lib, theta, 0.0);
    }
    case SystemId::f8_cruiser:
      throw std::runtime_error(
          "f8_cruiser is not polynomial in the library; use its closed-form rhs");
  }
  throw std::runtime_error("ground_truth_model: bad system id");
}

// F-8 crusader pitch dynamics (closed form; cubic in state and input, outside
// the linear-input library).
inline Vector<double> f8_rhs(const VectorRef<double>& x,
                             const VectorRef<double>& u) {
  const double x1 = x[0], x2 = x[1], x3 = x[2];
  const double uu = u.size() > 0 ? u[0] : 0.0;
  Vector<double> dx(3);
  dx[0] = -0.877 * x1 + x3 - 0.088 * x1 * x3 + 0.47 * x1 * x1 -
          0.019 * x2 * x2 - x1 * x1 * x3 + 3.846 * x1 * x1 * x1 -
          0.215 * uu + 0.28 * x1 * x1 * uu + 0.47 * x1 * uu * uu +
          0.63 * uu * uu * uu;
  dx[1] = x3;
  dx[2] = -4.208 * x1 - 0.396 * x3 - 0.47 * x1 * x1 - 3.564 * x1 * x1 * x1 -
          20.967 * uu + 6.265 * x1 * x1 * uu + 46.0 * x1 * uu * uu +
          61.4 * uu * uu * uu;
  return dx;
}

inline Vector<double> default_x0(SystemId id) {
  switch (id) {
    case SystemId::lotka_volterra: return Eigen::Vector2d(30.0, 4.0);
    case SystemId::lorenz: return Eigen::Vector3d(-8.0, 7.0, 27.0);
    case SystemId::f8_cruiser: return Eigen::Vector3d(0.3, 0.0, 0.0);
    case SystemId::pathogen: return Eigen::Vector3d(0.99, 0.01, 0.0);
  }
  return {};
}

inline double default_rate(SystemId id) {
  // Per-system sampling rates at or above twice the dominant frequency.
  switch (id) {
    case SystemId::lotka_volterra: return 1.0;
    case SystemId::lorenz: return 20.0;
    case SystemId::f8_cruiser: return 10.0;
    case SystemId::pathogen: return 1.0;
  }
  return 1.0;
}

inline InputSignal default_input(SystemId id) {
  InputSignal sig;
  switch (id) {
    case SystemId::lotka_volterra:
      sig.type = InputSignal::Type::constant;
      sig.value = 1.0;
      break;
    case SystemId::lorenz:
      sig.type = InputSignal::Type::none;
      break;
    case SystemId::f8_cruiser:
      sig.type = InputSignal::Type::sine;
      sig.amplitude = 0.02;
      sig.frequency = 0.05;
      break;
    case SystemId::pathogen:
      sig.type = InputSignal::Type::constant;
      sig.value = 0.002;
      break;
  }
  return sig;
}

inline int system_n_inputs(SystemId id) {
  switch (id) {
    case SystemId::lotka_volterra: return 1;
    case SystemId::lorenz: return 0;
    case SystemId::f8_cruiser: return 1;
    case SystemId::pathogen: return 1;
  }
  return 0;
}

// Fine-step RK4 integration of an arbitrary rhs with zero-order-hold inputs;
// used for the non-polynomial F-8 system.
inline Matrix<double> integrate_rhs(
    const std::function<Vector<double>(const VectorRef<double>&,
                                       const VectorRef<double>&)>& rhs,
    const VectorRef<double>& x0, const MatrixRef<double>& inputs,
    double sample_dt, Index n_samples, int substeps) {
  Matrix<double> states(n_samples + 1, x0.size());
  states.row(0) = x0;
  Vector<double> x = x0;
  const double h = sample_dt / substeps;
  for (Index i = 0; i < n_samples; ++i) {
    const Vector<double> u = inputs.row(i).transpose();
    for (int s = 0; s < substeps; ++s) {
      const Vector<double> k1 = rhs(x, u);
      const Vector<double> k2 = rhs(x + h / 2 * k1, u);
      const Vector<double> k3 = rhs(x + h / 2 * k2, u);
      const Vector<double> k4 = rhs(x + h * k3, u);
      x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    if (!all_finite(x))
      throw std::runtime_error("generate: ground truth diverged at t=" +
                               std::to_string((i + 1) * sample_dt));
    states.row(i + 1) = x;
  }
  return states;
}

// Generates duration*rate+1 samples by fine-step RK4 (substeps per sample
// interval), downsampled to the grid, with optional seeded Gaussian noise
// added to the states.
inline TimeSeriesDataset generate(const BenchmarkSpec& spec) {
  if (spec.substeps < 100)
    throw std::invalid_argument("generate: substeps must be >= 100");
  const double rate = spec.rate > 0 ? spec.rate : default_rate(spec.system);
  const double count = spec.duration * rate;
  const double rounded = std::round(count);
  if (std::abs(count - rounded) > 1e-9 * std::max(1.0, std::abs(count)))
    throw std::invalid_argument(
        "generate: duration * rate must be an integer sample count");
  const Index n_samples = static_cast<Index>(rounded);
  const double sample_dt = 1.0 / rate;

  const Vector<double> x0 =
      spec.x0.size() > 0 ? spec.x0 : default_x0(spec.system);
  const InputSignal input =
      spec.input_set ? spec.input : default_input(spec.system);
  const int m = system_n_inputs(spec.system);

  TimeSeriesDataset data;
  data.times.resize(n_samples + 1);
  for (Index i = 0; i <= n_samples; ++i) data.times[i] = i * sample_dt;
  data.inputs.resize(n_samples + 1, m);
  for (Index i = 0; i <= n_samples; ++i)
    for (Index j = 0; j < m; ++j) data.inputs(i, j) = input.eval(data.times[i]);

  if (spec.system == SystemId::f8_cruiser) {
    data.states = integrate_rhs(f8_rhs, x0, data.inputs, sample_dt, n_samples,
                                spec.substeps);
  } else {
    const SparseODEModel<double> model = ground_truth_model(spec.system);
    if (x0.size() != model.library.n_states())
      throw std::invalid_argument("generate: x0 dimension mismatch");
    // One solve per sample interval keeps generation bit-consistent with
    // fine-step re-evaluation of the same model.
    data.states.resize(n_samples + 1, x0.size());
    data.states.row(0) = x0;
    Vector<double> x = x0;
    const double h = sample_dt / spec.substeps;
    for (Index i = 0; i < n_samples; ++i) {
      const Vector<double> u = data.inputs.row(i).transpose();
      for (int s = 0; s < spec.substeps; ++s)
        x = rk4_step<double>(model, x, u, h);
      if (!all_finite(x))
        throw std::runtime_error("generate: ground truth diverged at t=" +
                                 std::to_string((i + 1) * sample_dt));
      data.states.row(i + 1) = x;
    }
  }

  if (spec.noise > 0) {
    std::mt19937_64 rng(spec.seed);
    for (Index r = 0; r < data.states.rows(); ++r)
      for (Index c = 0; c < data.states.cols(); ++c)
        data.states(r, c) += spec.noise * gaussian(rng);
  }
  return data;
}

}  // namespace flowrec
