#pragma once

#include <chrono>
#include <cmath>
#include <future>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowrec/csv_io.hpp"
#include "flowrec/ode_solver.hpp"
#include "flowrec/recovery_net.hpp"
#include "flowrec/sparse_model.hpp"

namespace flowrec {

struct TrainConfig {
  int epochs = 200;          // e
  int batch_size = 2;        // S_B
  int window = 50;           // k
  int window_stride = 0;     // 0 -> non-overlapping (stride = window)
  int hidden = 16;           // V
  int order = 2;             // M
  bool include_constant = false;
  double threshold = 1e-3;   // tau
  double learning_rate = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;    // global gradient norm bound, 0 disables
  double dt = 0;             // 0 -> dataset sample interval
  int substeps = 1;          // RK4 steps per sample interval during training
  std::uint64_t seed = 1;
  double divergence_cap = 1e6;
  int mlp_hidden = 0;        // 0 -> hidden
  double head_init_scale = 0.1;
  enum class Sparsify { threshold, top_k } sparsify = Sparsify::threshold;
  int top_k = 0;
  bool apply_input_shifts = false;
  int threads = 1;
  bool normalize = true;     // per-channel max-abs scaling of the data
  bool whiten = true;        // whitened head parameterization

  // Optimization schedule: a short-horizon stage, a geometric horizon ramp
  // with learning-rate warmup into the full window, a plateau, then decay.
  double stage1_frac = 0.2;
  int stage1_horizon = 4;
  double stage1_lr_decay = 0.1;  // stage-1 lr decays to lr * this
  double stage2_lr = 1.5e-4;
  double stage2_lr_decay = 0.1;  // plateau lr decays to stage2_lr * this
  int warmup_epochs = 8;
  double plateau_frac = 0.7;
  double prune_frac = 0.65;      // sticky pruning active from this fraction
  bool prune = true;
};

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One training window: contiguous slice of the dataset carrying its own
// initial state (row 0 of ref_states) and input slice.
template <class Scalar>
struct TrainWindow {
  Index start = 0;
  Matrix<Scalar> ref_states;  // k x n
  Matrix<Scalar> inputs;      // k x m
};

template <class Scalar>
struct WindowBatch {
  BatchTensor<Scalar> tensor;
  std::vector<TrainWindow<Scalar>> windows;

  template <class S2>
  WindowBatch<S2> cast() const {
    WindowBatch<S2> out;
    out.tensor = tensor.template cast<S2>();
    out.windows.reserve(windows.size());
    for (const auto& w : windows) {
      TrainWindow<S2> w2;
      w2.start = w.start;
      w2.ref_states = w.ref_states.template cast<S2>();
      w2.inputs = w.inputs.template cast<S2>();
      out.windows.push_back(std::move(w2));
    }
    return out;
  }
};

// Contiguous windows (stride defaults to k, i.e. non-overlapping), shuffled
// by seed, grouped into batches of batch_size; the last batch may be smaller.
inline std::vector<WindowBatch<double>> make_batches(
    const TimeSeriesDataset& dataset, int batch_size, int window,
    std::uint64_t seed, int stride = 0) {
  if (window < 2) throw std::invalid_argument("make_batches: window must be >= 2");
  if (batch_size < 1)
    throw std::invalid_argument("make_batches: batch size must be >= 1");
  const Index rows = dataset.rows();
  if (rows < window)
    throw std::invalid_argument("make_batches: dataset shorter than window");
  if (stride <= 0) stride = window;

  std::vector<Index> starts;
  for (Index s = 0; s + window <= rows; s += stride) starts.push_back(s);
  std::mt19937_64 rng(seed);
  shuffle(starts, rng);

  const Index n = dataset.states.cols();
  const Index m = dataset.inputs.cols();
  std::vector<WindowBatch<double>> batches;
  for (std::size_t i = 0; i < starts.size(); i += static_cast<std::size_t>(batch_size)) {
    WindowBatch<double> batch;
    const std::size_t count =
        std::min(static_cast<std::size_t>(batch_size), starts.size() - i);
    batch.tensor.steps.assign(static_cast<std::size_t>(window),
                              Matrix<double>(n + m, static_cast<Index>(count)));
    for (std::size_t b = 0; b < count; ++b) {
      const Index s = starts[i + b];
      TrainWindow<double> w;
      w.start = s;
      w.ref_states = dataset.states.middleRows(s, window);
      w.inputs = dataset.inputs.middleRows(s, window);
      for (Index t = 0; t < window; ++t) {
        auto& step = batch.tensor.steps[static_cast<std::size_t>(t)];
        step.col(static_cast<Index>(b)).head(n) = w.ref_states.row(t).transpose();
        step.col(static_cast<Index>(b)).tail(m) = w.inputs.row(t).transpose();
      }
      batch.windows.push_back(std::move(w));
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// Mean squared error between two trajectories of equal shape; a diverged
// estimate scores the cap.
template <class Scalar>
Scalar ode_loss(const Trajectory<Scalar>& reference,
                const Trajectory<Scalar>& estimate,
                Scalar cap = Scalar(1e6)) {
  if (estimate.diverged()) return cap;
  if (reference.states.rows() != estimate.states.rows() ||
      reference.states.cols() != estimate.states.cols())
    throw std::invalid_argument("ode_loss: shape mismatch");
  const Scalar mse =
      (reference.states - estimate.states).array().square().mean();
  return std::min(mse, cap);
}

// Per-channel max-abs scaling (no centering, so the monomial structure and
// the term support are preserved under the change of units).
struct DataScaling {
  Vector<double> state_scale;
  Vector<double> input_scale;

  static DataScaling identity(Index n, Index m) {
    DataScaling s;
    s.state_scale = Vector<double>::Ones(n);
    s.input_scale = Vector<double>::Ones(m);
    return s;
  }

  static DataScaling fit(const TimeSeriesDataset& dataset) {
    DataScaling s;
    s.state_scale = dataset.states.array().abs().colwise().maxCoeff();
    s.input_scale = dataset.inputs.array().abs().colwise().maxCoeff();
    for (Index i = 0; i < s.state_scale.size(); ++i)
      if (!(s.state_scale[i] > 0)) s.state_scale[i] = 1.0;
    for (Index j = 0; j < s.input_scale.size(); ++j)
      if (!(s.input_scale[j] > 0)) s.input_scale[j] = 1.0;
    return s;
  }

  TimeSeriesDataset apply(const TimeSeriesDataset& dataset) const {
    TimeSeriesDataset out = dataset;
    out.states = dataset.states * state_scale.cwiseInverse().asDiagonal();
    out.inputs = dataset.inputs * input_scale.cwiseInverse().asDiagonal();
    return out;
  }

  // Scale factor of library term j under x -> x/s, u -> u/su.
  double term_scale(const TermLibrary& lib, Index j) const {
    const Term& t = lib.term(j);
    switch (t.kind) {
      case Term::Kind::constant:
        return 1.0;
      case Term::Kind::input:
        return input_scale[t.input];
      case Term::Kind::monomial: {
        double v = 1.0;
        for (std::size_t i = 0; i < t.powers.size(); ++i)
          v *= std::pow(state_scale[static_cast<Index>(i)], t.powers[i]);
        return v;
      }
    }
    return 1.0;
  }

  // Coefficients of equation i in normalized units map back to original
  // units as c_orig = c_norm * s_i / term_scale(j).
  Matrix<double> unscale_coefficients(const TermLibrary& lib,
                                      const MatrixRef<double>& normalized) const {
    Matrix<double> out = normalized;
    for (Index i = 0; i < out.rows(); ++i)
      for (Index j = 0; j < out.cols(); ++j)
        out(i, j) *= state_scale[i] / term_scale(lib, j);
    return out;
  }
};

// Upper-triangular factor R with features(G) ~= Q R; parameterizing the head
// in whitened coordinates (theta = R^-1 w) gives the short-horizon fit a
// near-unit condition number.
inline Matrix<double> feature_whitener(const TermLibrary& lib,
                                       const TimeSeriesDataset& normalized) {
  const Index T = lib.size();
  Matrix<double> gram = Matrix<double>::Zero(T, T);
  for (Index r = 0; r < normalized.rows(); ++r) {
    const Vector<double> f = eval_features<double>(
        lib, normalized.states.row(r).transpose(),
        normalized.inputs.row(r).transpose());
    gram.noalias() += f * f.transpose();
  }
  gram /= static_cast<double>(normalized.rows());
  const double ridge = 1e-10 * std::max(1.0, gram.trace() / static_cast<double>(T));
  gram.diagonal().array() += ridge;
  Eigen::LLT<Matrix<double>> llt(gram);
  if (llt.info() != Eigen::Success) return Matrix<double>::Identity(T, T);
  const Matrix<double> R = llt.matrixU();
  return R.template triangularView<Eigen::Upper>().solve(
      Matrix<double>::Identity(T, T));  // R^-1
}

// Shared forward/backward plumbing for one window batch. Everything is in
// normalized units; `whiten_map` converts head outputs to library-space
// coefficients (identity when whitening is off).
template <class Scalar>
struct PipelineConfig {
  TermLibrary library;
  Scalar sample_dt = Scalar(1);
  int substeps = 1;
  Scalar tau = Scalar(1e-3);
  Scalar cap = Scalar(1e6);
  Index horizon = 0;  // solve steps per window (samples), 0 -> full window
  bool apply_shifts = false;
  TrainConfig::Sparsify sparsify = TrainConfig::Sparsify::threshold;
  int top_k = 0;
  Matrix<Scalar> whiten_map;  // term_count x term_count
  Vector<Scalar> head_scale;  // per-equation output scale (empty -> ones)
  Eigen::Array<bool, Eigen::Dynamic, 1> prune_mask;  // true = pruned

  Scalar equation_scale(Index i) const {
    return head_scale.size() > i ? head_scale[i] : Scalar(1);
  }

  template <class S2>
  PipelineConfig<S2> cast() const {
    PipelineConfig<S2> out;
    out.library = library;
    out.sample_dt = static_cast<S2>(sample_dt);
    out.substeps = substeps;
    out.tau = static_cast<S2>(tau);
    out.cap = static_cast<S2>(cap);
    out.horizon = horizon;
    out.apply_shifts = apply_shifts;
    out.sparsify = sparsify;
    out.top_k = top_k;
    out.whiten_map = whiten_map.template cast<S2>();
    out.head_scale = head_scale.template cast<S2>();
    out.prune_mask = prune_mask;
    return out;
  }
};

template <class Scalar>
struct BatchForward {
  NetTape<Scalar> tape;
  Vector<Scalar> mean_raw;      // head outputs averaged over the batch
  Vector<Scalar> coefficients;  // library space, after dropout/pruning
  Eigen::Array<bool, Eigen::Dynamic, 1> active;  // surviving entries
  Vector<Scalar> shifts;        // mean shift outputs (applied when enabled)
  SparseODEModel<Scalar> model;
  std::vector<SolveTape<Scalar>> window_tapes;
  std::vector<Trajectory<Scalar>> window_trajectories;
  std::vector<Scalar> window_losses;
  Scalar loss = Scalar(0);  // sum of per-window losses
};

template <class Scalar>
Index pipeline_horizon(const PipelineConfig<Scalar>& cfg, Index window) {
  const Index max_h = window - 1;
  return cfg.horizon > 0 ? std::min(cfg.horizon, max_h) : max_h;
}

// Per-sample clipped squared error over the solved prefix; samples at or
// past a divergence count the cap and contribute no gradient, so unstable
// coefficient proposals are penalized without losing the gradient from the
// healthy prefix.
template <class Scalar>
void window_forward(const SparseODEModel<Scalar>& model,
                    const TrainWindow<Scalar>& window,
                    const PipelineConfig<Scalar>& cfg,
                    const Vector<Scalar>& shift, bool record,
                    Trajectory<Scalar>* traj_out, SolveTape<Scalar>* tape_out,
                    Scalar* loss_out) {
  const Index H = pipeline_horizon(cfg, window.ref_states.rows());
  const Index n_steps = H * cfg.substeps;
  const Scalar h = cfg.sample_dt / Scalar(cfg.substeps);
  Matrix<Scalar> fine_inputs(n_steps + 1, window.inputs.cols());
  for (Index i = 0; i <= n_steps; ++i)
    fine_inputs.row(i) = window.inputs.row(std::min(i / cfg.substeps, H));
  SolveOptions<Scalar> opts;
  opts.record_tape = record;
  if (cfg.apply_shifts) opts.input_shift = shift;
  auto result = solve<Scalar>(model, window.ref_states.row(0).transpose(),
                              fine_inputs, h, n_steps, opts);
  const Trajectory<Scalar>& traj = result.trajectory;

  Scalar total = Scalar(0);
  for (Index i = 1; i <= H; ++i) {
    const Index row = i * cfg.substeps;
    if (row < traj.states.rows()) {
      const Scalar e = (traj.states.row(row) - window.ref_states.row(i))
                           .array()
                           .square()
                           .mean();
      total += (std::isfinite(static_cast<double>(e)) && e < cfg.cap) ? e : cfg.cap;
    } else {
      total += cfg.cap;
    }
  }
  *loss_out = total / Scalar(H);
  if (traj_out != nullptr) *traj_out = traj;
  if (record && tape_out != nullptr) *tape_out = std::move(*result.tape);
}

// Gradient of the clipped window loss with respect to the solved trajectory.
template <class Scalar>
Matrix<Scalar> window_loss_grad(const Trajectory<Scalar>& traj,
                                const TrainWindow<Scalar>& window,
                                const PipelineConfig<Scalar>& cfg) {
  const Index H = pipeline_horizon(cfg, window.ref_states.rows());
  const Index rows = traj.states.rows();
  Matrix<Scalar> grad = Matrix<Scalar>::Zero(rows, traj.states.cols());
  const Scalar scale =
      Scalar(2) / (Scalar(H) * Scalar(traj.states.cols()));
  for (Index i = 1; i <= H; ++i) {
    const Index row = i * cfg.substeps;
    if (row >= rows) break;
    const auto diff =
        (traj.states.row(row) - window.ref_states.row(i)).eval();
    const Scalar e = diff.array().square().mean();
    if (std::isfinite(static_cast<double>(e)) && e < cfg.cap)
      grad.row(row) = scale * diff;
  }
  return grad;
}

template <class Scalar>
void run_indexed(Index count, int threads,
                 const std::function<void(Index)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> futures;
  std::atomic<Index> next{0};
  const int workers = std::min<Index>(threads, count);
  for (int w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&]() {
      for (Index i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    }));
  }
  for (auto& f : futures) f.get();
}

// GRU -> dense -> dropout -> per-window solve -> clipped ODE loss.
template <class Scalar>
BatchForward<Scalar> batch_forward(const RecoveryNetParams<Scalar>& params,
                                   const WindowBatch<Scalar>& batch,
                                   const PipelineConfig<Scalar>& cfg,
                                   bool record, int threads = 1) {
  BatchForward<Scalar> out;
  const Matrix<Scalar> hidden = gru_forward(params, batch.tensor, &out.tape);
  const DenseOutputs<Scalar> head = dense_forward<Scalar>(params, hidden, &out.tape);
  out.mean_raw = out.tape.raw.rowwise().mean();

  const Index n = params.n_states;
  const Index T = params.term_count;
  Vector<Scalar> coeff(n * T);
  const Vector<Scalar> mean_coeff = out.mean_raw.head(n * T);
  for (Index i = 0; i < n; ++i)
    coeff.segment(i * T, T) = cfg.equation_scale(i) *
                              (cfg.whiten_map * mean_coeff.segment(i * T, T));
  out.shifts = out.mean_raw.tail(params.n_shifts);

  // Dropout (or top-k) plus sticky pruning on library-space coefficients.
  out.active = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n * T, true);
  if (cfg.sparsify == TrainConfig::Sparsify::top_k) {
    const Vector<Scalar> kept = top_k_dropout<Scalar>(coeff, cfg.top_k);
    for (Index i = 0; i < coeff.size(); ++i) out.active[i] = kept[i] != Scalar(0);
  } else {
    for (Index i = 0; i < coeff.size(); ++i)
      out.active[i] = std::abs(static_cast<double>(coeff[i])) >=
                      static_cast<double>(cfg.tau);
  }
  if (cfg.prune_mask.size() == coeff.size())
    out.active = out.active && !cfg.prune_mask;
  for (Index i = 0; i < coeff.size(); ++i)
    if (!out.active[i]) coeff[i] = Scalar(0);
  out.coefficients = coeff;

  Matrix<Scalar> theta(n, T);
  for (Index i = 0; i < n; ++i)
    theta.row(i) = coeff.segment(i * T, T).transpose();
  out.model = SparseODEModel<Scalar>(cfg.library, theta, Scalar(0));

  const Index W = static_cast<Index>(batch.windows.size());
  out.window_tapes.resize(static_cast<std::size_t>(W));
  out.window_trajectories.resize(static_cast<std::size_t>(W));
  out.window_losses.assign(static_cast<std::size_t>(W), Scalar(0));
  std::function<void(Index)> work = [&](Index w) {
    window_forward<Scalar>(out.model, batch.windows[static_cast<std::size_t>(w)],
                           cfg, out.shifts, record,
                           &out.window_trajectories[static_cast<std::size_t>(w)],
                           record ? &out.window_tapes[static_cast<std::size_t>(w)]
                                  : nullptr,
                           &out.window_losses[static_cast<std::size_t>(w)]);
  };
  run_indexed<Scalar>(W, threads, work);
  out.loss = Scalar(0);
  for (Index w = 0; w < W; ++w)
    out.loss += out.window_losses[static_cast<std::size_t>(w)];
  return out;
}

// Adjoint through every window solve composed (via the dropout gradient
// contract and the whitening map) with reverse mode through the net.
template <class Scalar>
NetGradients<Scalar> batch_backward(const RecoveryNetParams<Scalar>& params,
                                    const WindowBatch<Scalar>& batch,
                                    const PipelineConfig<Scalar>& cfg,
                                    const BatchForward<Scalar>& fwd,
                                    int threads = 1) {
  const Index n = params.n_states;
  const Index T = params.term_count;
  const Index B = static_cast<Index>(batch.windows.size());

  std::vector<Matrix<Scalar>> dthetas(static_cast<std::size_t>(B));
  std::vector<Vector<Scalar>> dshifts(static_cast<std::size_t>(B));
  std::function<void(Index)> work = [&](Index w) {
    const auto& traj = fwd.window_trajectories[static_cast<std::size_t>(w)];
    const Matrix<Scalar> lg =
        window_loss_grad<Scalar>(traj, batch.windows[static_cast<std::size_t>(w)], cfg);
    auto adj = adjoint_grad<Scalar>(fwd.window_tapes[static_cast<std::size_t>(w)],
                                    fwd.model, lg);
    dthetas[static_cast<std::size_t>(w)] = std::move(adj.dtheta);
    dshifts[static_cast<std::size_t>(w)] = std::move(adj.dinput_shift);
  };
  run_indexed<Scalar>(B, threads, work);

  Matrix<Scalar> dtheta = Matrix<Scalar>::Zero(n, T);
  Vector<Scalar> dshift = Vector<Scalar>::Zero(params.n_shifts);
  for (Index w = 0; w < B; ++w) {
    dtheta += dthetas[static_cast<std::size_t>(w)];
    if (cfg.apply_shifts) dshift += dshifts[static_cast<std::size_t>(w)];
  }

  // Dropout contract: dropped entries propagate zero gradient.
  Vector<Scalar> dcoeff(n * T);
  for (Index i = 0; i < n; ++i)
    dcoeff.segment(i * T, T) = dtheta.row(i).transpose();
  for (Index i = 0; i < dcoeff.size(); ++i)
    if (!fwd.active[i]) dcoeff[i] = Scalar(0);
  Vector<Scalar> draw(params.output_dim());
  for (Index i = 0; i < n; ++i)
    draw.segment(i * T, T) = cfg.equation_scale(i) *
                             (cfg.whiten_map.transpose() *
                              dcoeff.segment(i * T, T));
  draw.tail(params.n_shifts) = cfg.apply_shifts
                                   ? dshift
                                   : Vector<Scalar>::Zero(params.n_shifts);

  // The batch mean distributes the gradient uniformly over the columns.
  const Index cols = fwd.tape.raw.cols();
  Matrix<Scalar> upstream =
      (draw / Scalar(cols)).replicate(1, cols);
  return net_backward<Scalar>(params, fwd.tape,
                              upstream.topRows(n * T),
                              upstream.bottomRows(params.n_shifts));
}

// ---- Optimizer -------------------------------------------------------------

template <class Scalar>
struct AdamState {
  NetGradients<Scalar> m;
  NetGradients<Scalar> v;
  long step = 0;
};

template <class Scalar>
AdamState<Scalar> make_adam_state(const RecoveryNetParams<Scalar>& params) {
  AdamState<Scalar> s;
  s.m = zero_gradients(params);
  s.v = zero_gradients(params);
  return s;
}

template <class Scalar>
void adam_step(RecoveryNetParams<Scalar>& params, NetGradients<Scalar>& grads,
               AdamState<Scalar>& state, const TrainConfig& cfg, double lr) {
  if (cfg.grad_clip > 0) {
    double sq = 0;
    for_each_tensor(grads, [&sq](const char*, auto& g) {
      sq += static_cast<double>(g.array().square().sum());
    });
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      const Scalar scale = static_cast<Scalar>(cfg.grad_clip / norm);
      for_each_tensor(grads, [scale](const char*, auto& g) { g *= scale; });
    }
  }
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  auto update = [&](auto& p, auto& g, auto& m, auto& v) {
    m = (b1 * m.array() + (1 - b1) * g.array()).matrix();
    v = (b2 * v.array() + (1 - b2) * g.array().square()).matrix();
    p.array() -= lr * (m.array() / bc1) /
                 ((v.array() / bc2).sqrt() + cfg.adam_eps);
  };
  update(params.gru.Wz, grads.gru.Wz, state.m.gru.Wz, state.v.gru.Wz);
  update(params.gru.Uz, grads.gru.Uz, state.m.gru.Uz, state.v.gru.Uz);
  update(params.gru.bz, grads.gru.bz, state.m.gru.bz, state.v.gru.bz);
  update(params.gru.Wr, grads.gru.Wr, state.m.gru.Wr, state.v.gru.Wr);
  update(params.gru.Ur, grads.gru.Ur, state.m.gru.Ur, state.v.gru.Ur);
  update(params.gru.br, grads.gru.br, state.m.gru.br, state.v.gru.br);
  update(params.gru.Wh, grads.gru.Wh, state.m.gru.Wh, state.v.gru.Wh);
  update(params.gru.Uh, grads.gru.Uh, state.m.gru.Uh, state.v.gru.Uh);
  update(params.gru.bh, grads.gru.bh, state.m.gru.bh, state.v.gru.bh);
  update(params.dense.W1, grads.dense.W1, state.m.dense.W1, state.v.dense.W1);
  update(params.dense.b1, grads.dense.b1, state.m.dense.b1, state.v.dense.b1);
  update(params.dense.W2, grads.dense.W2, state.m.dense.W2, state.v.dense.W2);
  update(params.dense.b2, grads.dense.b2, state.m.dense.b2, state.v.dense.b2);
}

// ---- Evaluation ------------------------------------------------------------

struct EvalResult {
  double mse = 0;
  std::optional<Index> diverged_at;
  std::vector<std::vector<std::string>> support;  // term names per equation
};

// Re-solves from the dataset's first sample over its full span (fine
// sub-stepping, so the result measures the model rather than solver
// resolution) and reports MSE against the samples.
inline EvalResult evaluate(const SparseODEModel<double>& model,
                           const TimeSeriesDataset& dataset,
                           int substeps = 100,
                           std::optional<Vector<double>> input_shift = {}) {
  if (model.library.n_states() != dataset.states.cols() ||
      model.library.n_inputs() != dataset.inputs.cols())
    throw std::invalid_argument("evaluate: model/dataset dimension mismatch");
  EvalResult result;
  for (Index i = 0; i < model.coefficients.rows(); ++i) {
    std::vector<std::string> eq;
    for (Index j = 0; j < model.coefficients.cols(); ++j)
      if (model.coefficients(i, j) != 0.0)
        eq.push_back(model.library.term(j).name());
    result.support.push_back(std::move(eq));
  }

  const Index n_samples = dataset.rows() - 1;
  if (n_samples < 1) return result;
  const double sample_dt = dataset.times[1] - dataset.times[0];
  const double h = sample_dt / substeps;
  Vector<double> x = dataset.states.row(0).transpose();
  Vector<double> shift = Vector<double>::Zero(dataset.inputs.cols());
  if (input_shift) shift = *input_shift;
  double total = 0;
  for (Index i = 0; i < n_samples; ++i) {
    const Vector<double> u = dataset.inputs.row(i).transpose() + shift;
    for (int s = 0; s < substeps; ++s) x = rk4_step<double>(model, x, u, h);
    if (!all_finite(x)) {
      result.diverged_at = i;
      result.mse = std::numeric_limits<double>::infinity();
      return result;
    }
    total += (x.transpose() - dataset.states.row(i + 1)).array().square().mean();
  }
  result.mse = total / static_cast<double>(n_samples + 1);
  return result;
}

// ---- Training --------------------------------------------------------------

struct SupportReport {
  struct Equation {
    std::vector<std::string> true_positive, false_positive, false_negative;
  };
  std::vector<Equation> equations;
  bool exact = true;
};

inline SupportReport compare_support(const SparseODEModel<double>& recovered,
                                     const SparseODEModel<double>& truth) {
  SupportReport report;
  for (Index i = 0; i < recovered.coefficients.rows(); ++i) {
    SupportReport::Equation eq;
    for (Index j = 0; j < recovered.coefficients.cols(); ++j) {
      const bool rec = recovered.coefficients(i, j) != 0.0;
      const bool tru = truth.coefficients(i, j) != 0.0;
      const std::string name = recovered.library.term(j).name();
      if (rec && tru) eq.true_positive.push_back(name);
      else if (rec) eq.false_positive.push_back(name);
      else if (tru) eq.false_negative.push_back(name);
    }
    report.exact =
        report.exact && eq.false_positive.empty() && eq.false_negative.empty();
    report.equations.push_back(std::move(eq));
  }
  return report;
}

struct RecoveryResult {
  SparseODEModel<double> model;
  Vector<double> input_shifts;
  double reconstruction_mse = 0;
  std::optional<Index> eval_diverged_at;
  std::vector<double> loss_history;  // mean per-window loss per epoch
  std::optional<SupportReport> support;
  double wall_seconds = 0;
  RecoveryNetParams<double> params;
  DataScaling scaling;
};

namespace detail {

// Learning rate and solve horizon for one epoch of the two-stage schedule.
struct EpochPlan {
  double lr = 0;
  Index horizon = 0;
  bool stage2_start = false;
};

inline EpochPlan epoch_plan(const TrainConfig& cfg, int epoch) {
  EpochPlan plan;
  const int e1 = static_cast<int>(cfg.stage1_frac * cfg.epochs);
  const int plateau_end = static_cast<int>(cfg.plateau_frac * cfg.epochs);
  const Index full = cfg.window - 1;
  if (epoch < e1) {
    plan.horizon = std::min<Index>(cfg.stage1_horizon, full);
    const double f = e1 > 1 ? static_cast<double>(epoch) / (e1 - 1) : 1.0;
    plan.lr = cfg.learning_rate * std::pow(cfg.stage1_lr_decay, f);
    return plan;
  }
  plan.stage2_start = epoch == e1;
  const int t = epoch - e1;
  const Index eased = static_cast<Index>(
      cfg.stage1_horizon * std::pow(2.0, t / 2 + 1));
  plan.horizon = std::min(eased, full);
  if (t < cfg.warmup_epochs) {
    plan.lr = cfg.stage2_lr * (t + 1) / cfg.warmup_epochs;
  } else if (epoch < plateau_end) {
    plan.lr = cfg.stage2_lr;
  } else {
    const double span = std::max(1, cfg.epochs - plateau_end - 1);
    const double f = (epoch - plateau_end) / span;
    plan.lr = cfg.stage2_lr * std::pow(cfg.stage2_lr_decay, f);
  }
  return plan;
}

}  // namespace detail

inline RecoveryResult train(const TimeSeriesDataset& dataset,
                            const TrainConfig& cfg,
                            std::optional<SparseODEModel<double>> ground_truth = {},
                            std::ostream* progress = nullptr) {
  const auto t_start = std::chrono::steady_clock::now();
  if (cfg.epochs < 0 || cfg.window < 2 || cfg.batch_size < 1 ||
      cfg.hidden < 1 || cfg.order < 1 || cfg.threshold < 0)
    throw std::invalid_argument("train: invalid configuration");
  const Index n = dataset.states.cols();
  const Index m = dataset.inputs.cols();
  const TermLibrary lib = build_library(static_cast<int>(n),
                                        static_cast<int>(m), cfg.order,
                                        cfg.include_constant);

  const DataScaling scaling = cfg.normalize
                                  ? DataScaling::fit(dataset)
                                  : DataScaling::identity(n, m);
  const TimeSeriesDataset norm = scaling.apply(dataset);
  const double sample_dt =
      dataset.rows() > 1 ? dataset.times[1] - dataset.times[0] : 1.0;

  auto batches = make_batches(norm, cfg.batch_size, cfg.window, cfg.seed,
                              cfg.window_stride);

  PipelineConfig<double> pcfg;
  pcfg.library = lib;
  pcfg.sample_dt = cfg.dt > 0 ? cfg.dt : sample_dt;
  pcfg.substeps = std::max(1, cfg.substeps);
  pcfg.tau = cfg.threshold;
  pcfg.cap = cfg.divergence_cap;
  pcfg.apply_shifts = cfg.apply_input_shifts;
  pcfg.sparsify = cfg.sparsify;
  pcfg.top_k = cfg.top_k;
  pcfg.whiten_map = cfg.whiten ? feature_whitener(lib, norm)
                               : Matrix<double>::Identity(lib.size(), lib.size());
  // Per-equation output scale: RMS of the finite-difference derivative of the
  // normalized states, so the head's whitened targets are O(1) regardless of
  // the system's coefficient magnitudes.
  pcfg.head_scale = Vector<double>::Ones(n);
  if (cfg.whiten && norm.rows() > 1) {
    const Matrix<double> diffs =
        (norm.states.bottomRows(norm.rows() - 1) -
         norm.states.topRows(norm.rows() - 1)) /
        pcfg.sample_dt;
    for (Index i = 0; i < n; ++i) {
      const double rms = std::sqrt(diffs.col(i).array().square().mean());
      pcfg.head_scale[i] = std::max(rms, 1e-6);
    }
  }
  pcfg.prune_mask =
      Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n * lib.size(), false);

  RecoveryNetParams<double> params = init_params(
      static_cast<int>(n), static_cast<int>(m), cfg.hidden,
      static_cast<int>(lib.size()), static_cast<int>(m), cfg.threshold,
      cfg.seed, cfg.mlp_hidden, cfg.head_init_scale);

  // One batch holding every window, for pruning decisions and the final
  // aggregation (windows weighted equally).
  WindowBatch<double> all_windows;
  {
    auto unshuffled = make_batches(norm, static_cast<int>(dataset.rows()),
                                   cfg.window, 0, cfg.window_stride);
    all_windows = std::move(unshuffled.front());
  }

  auto aggregate = [&](Index horizon) {
    PipelineConfig<double> acfg = pcfg;
    acfg.horizon = horizon;
    return batch_forward<double>(params, all_windows, acfg, false, cfg.threads);
  };

  AdamState<double> adam = make_adam_state(params);
  std::vector<double> history;
  const Index total_windows = [&batches]() {
    Index t = 0;
    for (const auto& b : batches) t += static_cast<Index>(b.windows.size());
    return t;
  }();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto plan = detail::epoch_plan(cfg, epoch);
    if (plan.stage2_start) adam = make_adam_state(params);  // fresh moments
    pcfg.horizon = plan.horizon;
    double epoch_loss = 0;
    int batch_index = 0;
    for (const auto& batch : batches) {
      auto fwd = batch_forward<double>(params, batch, pcfg, true, cfg.threads);
      if (!std::isfinite(fwd.loss))
        throw TrainError("train: non-finite loss at epoch " +
                         std::to_string(epoch) + ", batch " +
                         std::to_string(batch_index));
      auto grads = batch_backward<double>(params, batch, pcfg, fwd, cfg.threads);
      adam_step(params, grads, adam, cfg, plan.lr);
      epoch_loss += fwd.loss;
      ++batch_index;
    }
    history.push_back(epoch_loss / static_cast<double>(total_windows));

    if (cfg.prune && cfg.sparsify == TrainConfig::Sparsify::threshold &&
        epoch >= static_cast<int>(cfg.prune_frac * cfg.epochs)) {
      const auto agg = aggregate(plan.horizon);
      for (Index i = 0; i < agg.coefficients.size(); ++i)
        if (std::abs(agg.coefficients[i]) < cfg.threshold)
          pcfg.prune_mask[i] = true;
    }
    if (progress != nullptr) {
      const auto agg = aggregate(plan.horizon);
      Index nnz = 0;
      for (Index i = 0; i < agg.coefficients.size(); ++i)
        if (agg.coefficients[i] != 0.0) ++nnz;
      (*progress) << "epoch " << epoch << " loss " << history.back()
                  << " support " << nnz << "\n";
    }
  }

  // Final model: mean head output over all windows, dropout after averaging,
  // coefficients mapped back to original units.
  const auto agg = aggregate(0);
  const Matrix<double> theta_norm = agg.model.coefficients;
  const Matrix<double> theta = scaling.unscale_coefficients(lib, theta_norm);

  RecoveryResult result;
  result.model = SparseODEModel<double>(lib, theta, cfg.threshold);
  result.scaling = scaling;
  result.params = params;
  result.input_shifts = Vector<double>::Zero(m);
  if (cfg.apply_input_shifts)
    result.input_shifts =
        (agg.shifts.array() * scaling.input_scale.array()).matrix();
  result.loss_history = std::move(history);

  const auto eval = evaluate(result.model, dataset, 100,
                             cfg.apply_input_shifts
                                 ? std::optional<Vector<double>>(result.input_shifts)
                                 : std::nullopt);
  result.reconstruction_mse = eval.mse;
  result.eval_diverged_at = eval.diverged_at;
  if (ground_truth) result.support = compare_support(result.model, *ground_truth);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return result;
}

}  // namespace flowrec
