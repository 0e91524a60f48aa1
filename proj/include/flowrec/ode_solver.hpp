#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "flowrec/sparse_model.hpp"
#include "flowrec/types.hpp"

namespace flowrec {

// Sampled trajectory on a uniform time grid. Inputs are held constant between
// samples (zero-order hold). When a solve diverges, `states` contains only the
// rows computed before the first non-finite state and `diverged_at` holds the
// offending step index.
template <class Scalar>
struct Trajectory {
  Vector<Scalar> times;
  Matrix<Scalar> states;  // rows x n_states
  Matrix<Scalar> inputs;  // rows x n_inputs
  std::optional<Index> diverged_at;

  bool diverged() const { return diverged_at.has_value(); }
  Index rows() const { return states.rows(); }
  Scalar dt() const {
    return times.size() > 1 ? times[1] - times[0] : Scalar(0);
  }
};

// Per-step record of the four RK4 stage states and stage derivatives plus the
// effective input, enough to replay a step exactly or run it in reverse.
template <class Scalar>
struct SolveTape {
  struct Step {
    Matrix<Scalar> stage_states;  // n_states x 4
    Matrix<Scalar> stage_derivs;  // n_states x 4
    Vector<Scalar> input;         // effective input (shift already applied)
  };
  std::vector<Step> steps;
  std::uint64_t model_hash = 0;
  Scalar dt = Scalar(0);
};

// Classical 4-stage Runge-Kutta update with the input held constant across
// the step. Non-finite output signals divergence; the caller decides policy.
template <class Scalar>
Vector<Scalar> rk4_step(const SparseODEModel<Scalar>& model,
                        const VectorRef<Scalar>& x, const VectorRef<Scalar>& u,
                        Scalar dt,
                        typename SolveTape<Scalar>::Step* record = nullptr) {
  if (!(dt > Scalar(0))) throw std::invalid_argument("rk4_step: dt must be > 0");
  const Scalar half = dt / Scalar(2);
  const Vector<Scalar> k1 = model_rhs<Scalar>(model, x, u);
  const Vector<Scalar> x2 = x + half * k1;
  const Vector<Scalar> k2 = model_rhs<Scalar>(model, x2, u);
  const Vector<Scalar> x3 = x + half * k2;
  const Vector<Scalar> k3 = model_rhs<Scalar>(model, x3, u);
  const Vector<Scalar> x4 = x + dt * k3;
  const Vector<Scalar> k4 = model_rhs<Scalar>(model, x4, u);
  if (record != nullptr) {
    record->stage_states.resize(x.size(), 4);
    record->stage_states.col(0) = x;
    record->stage_states.col(1) = x2;
    record->stage_states.col(2) = x3;
    record->stage_states.col(3) = x4;
    record->stage_derivs.resize(x.size(), 4);
    record->stage_derivs.col(0) = k1;
    record->stage_derivs.col(1) = k2;
    record->stage_derivs.col(2) = k3;
    record->stage_derivs.col(3) = k4;
    record->input = u;
  }
  return x + dt / Scalar(6) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
}

template <class Scalar>
struct SolveOptions {
  bool record_tape = false;
  Scalar t0 = Scalar(0);
  // Additive offset applied to the inputs before library evaluation.
  std::optional<Vector<Scalar>> input_shift;
};

template <class Scalar>
struct SolveResult {
  Trajectory<Scalar> trajectory;
  std::optional<SolveTape<Scalar>> tape;
};

// Integrates n_steps RK4 steps from x0. `inputs` must supply n_steps+1 rows;
// row i is held over step i. On divergence the partial trajectory is returned
// with the step index marked rather than throwing, so callers can penalize
// unstable coefficient proposals.
template <class Scalar>
SolveResult<Scalar> solve(const SparseODEModel<Scalar>& model,
                          const VectorRef<Scalar>& x0,
                          const MatrixRef<Scalar>& inputs, Scalar dt,
                          Index n_steps,
                          const SolveOptions<Scalar>& options = {}) {
  if (x0.size() != model.library.n_states())
    throw std::invalid_argument("solve: x0 dimension mismatch");
  if (inputs.rows() != n_steps + 1 || inputs.cols() != model.library.n_inputs())
    throw std::invalid_argument("solve: inputs must have n_steps+1 rows");
  if (n_steps > 0 && !(dt > Scalar(0)))
    throw std::invalid_argument("solve: dt must be > 0");

  SolveResult<Scalar> result;
  Trajectory<Scalar>& traj = result.trajectory;
  traj.times.resize(n_steps + 1);
  traj.states.resize(n_steps + 1, x0.size());
  traj.inputs = inputs;
  traj.states.row(0) = x0;
  traj.times[0] = options.t0;
  if (options.record_tape) {
    result.tape.emplace();
    result.tape->model_hash = model_hash(model);
    result.tape->dt = dt;
    result.tape->steps.reserve(static_cast<std::size_t>(n_steps));
  }

  Vector<Scalar> shift = Vector<Scalar>::Zero(model.library.n_inputs());
  if (options.input_shift) {
    if (options.input_shift->size() != model.library.n_inputs())
      throw std::invalid_argument("solve: input shift dimension mismatch");
    shift = *options.input_shift;
  }

  Vector<Scalar> x = x0;
  for (Index i = 0; i < n_steps; ++i) {
    const Vector<Scalar> u = inputs.row(i).transpose() + shift;
    typename SolveTape<Scalar>::Step record;
    x = rk4_step<Scalar>(model, x, u, dt,
                         options.record_tape ? &record : nullptr);
    if (!all_finite(x)) {
      traj.diverged_at = i;
      traj.times.conservativeResize(i + 1);
      traj.states.conservativeResize(i + 1, Eigen::NoChange);
      traj.inputs.conservativeResize(i + 1, Eigen::NoChange);
      return result;
    }
    if (options.record_tape) result.tape->steps.push_back(std::move(record));
    traj.states.row(i + 1) = x;
    traj.times[i + 1] = options.t0 + Scalar(i + 1) * dt;
  }
  return result;
}

template <class Scalar>
struct AdjointResult {
  Matrix<Scalar> dtheta;       // n_states x term_count
  Vector<Scalar> dx0;          // n_states
  Vector<Scalar> dinput_shift; // n_inputs
};

// Exact reverse-mode gradient of the recorded RK4 computation. `loss_grad`
// supplies dL/d(states) with one row per trajectory row (steps+1 rows).
template <class Scalar>
AdjointResult<Scalar> adjoint_grad(const SolveTape<Scalar>& tape,
                                   const SparseODEModel<Scalar>& model,
                                   const MatrixRef<Scalar>& loss_grad) {
  if (tape.model_hash != model_hash(model))
    throw std::invalid_argument("adjoint_grad: tape does not match model");
  const Index n = model.library.n_states();
  const Index n_steps = static_cast<Index>(tape.steps.size());
  if (loss_grad.rows() != n_steps + 1 || loss_grad.cols() != n)
    throw std::invalid_argument("adjoint_grad: loss gradient shape mismatch");

  const TermLibrary& lib = model.library;
  const Scalar dt = tape.dt;

  AdjointResult<Scalar> out;
  out.dtheta = Matrix<Scalar>::Zero(n, lib.size());
  out.dinput_shift = Vector<Scalar>::Zero(lib.n_inputs());
  const Matrix<Scalar> input_jac = feature_input_jacobian<Scalar>(lib);

  // lambda = dL/dx at the end of the current step.
  Vector<Scalar> lambda = loss_grad.row(n_steps).transpose();
  const std::array<Scalar, 4> weights = {dt / Scalar(6), dt / Scalar(3),
                                         dt / Scalar(3), dt / Scalar(6)};
  for (Index s = n_steps - 1; s >= 0; --s) {
    const auto& step = tape.steps[static_cast<std::size_t>(s)];
    std::array<Vector<Scalar>, 4> kbar;
    for (int j = 0; j < 4; ++j) kbar[j] = weights[static_cast<std::size_t>(j)] * lambda;

    Vector<Scalar> xbar = lambda;  // direct x -> x_next contribution
    // Stage couplings: x2 = x + dt/2 k1, x3 = x + dt/2 k2, x4 = x + dt k3.
    const std::array<Scalar, 3> couplings = {dt / Scalar(2), dt / Scalar(2), dt};
    for (int j = 3; j >= 0; --j) {
      const Vector<Scalar> xs = step.stage_states.col(j);
      const Vector<Scalar> phi = eval_features<Scalar>(lib, xs, step.input);
      const Matrix<Scalar> jphi = feature_state_jacobian<Scalar>(lib, xs, step.input);
      out.dtheta += kbar[static_cast<std::size_t>(j)] * phi.transpose();
      out.dinput_shift +=
          input_jac.transpose() *
          (model.coefficients.transpose() * kbar[static_cast<std::size_t>(j)]);
      const Vector<Scalar> xsbar =
          jphi.transpose() * (model.coefficients.transpose() *
                              kbar[static_cast<std::size_t>(j)]);
      xbar += xsbar;
      if (j > 0) {
        kbar[static_cast<std::size_t>(j - 1)] +=
            couplings[static_cast<std::size_t>(j - 1)] * xsbar;
      }
    }
    lambda = xbar + loss_grad.row(s).transpose();
  }
  out.dx0 = lambda;
  return out;
}

}  // namespace flowrec
