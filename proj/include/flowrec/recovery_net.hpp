#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "flowrec/random.hpp"
#include "flowrec/types.hpp"

namespace flowrec {

// Batched input windows: `steps[t]` holds timestep t for all windows of the
// batch, one column per window, channels = states then inputs.
template <class Scalar>
struct BatchTensor {
  std::vector<Matrix<Scalar>> steps;

  Index length() const { return static_cast<Index>(steps.size()); }
  Index channels() const { return steps.empty() ? 0 : steps.front().rows(); }
  Index batch() const { return steps.empty() ? 0 : steps.front().cols(); }

  template <class S2>
  BatchTensor<S2> cast() const {
    BatchTensor<S2> out;
    out.steps.reserve(steps.size());
    for (const auto& s : steps) out.steps.push_back(s.template cast<S2>());
    return out;
  }
};

template <class Scalar>
struct GRUParams {
  Matrix<Scalar> Wz, Wr, Wh;  // hidden x channels
  Matrix<Scalar> Uz, Ur, Uh;  // hidden x hidden
  Vector<Scalar> bz, br, bh;
};

template <class Scalar>
struct DenseParams {
  Matrix<Scalar> W1;  // mlp_hidden x hidden
  Vector<Scalar> b1;
  Matrix<Scalar> W2;  // outputs x mlp_hidden
  Vector<Scalar> b2;
};

// Everything trained: GRU gates, the dense head mapping the final hidden
// state to n_states*term_count coefficient estimates plus q input shifts,
// and the dropout threshold.
template <class Scalar>
struct RecoveryNetParams {
  int n_states = 0;
  int n_inputs = 0;
  int hidden = 0;      // V
  int term_count = 0;
  int n_shifts = 0;    // q
  int mlp_hidden = 0;
  Scalar tau = Scalar(0);
  std::uint64_t seed = 0;

  GRUParams<Scalar> gru;
  DenseParams<Scalar> dense;

  Index channels() const { return n_states + n_inputs; }
  Index coeff_count() const {
    return static_cast<Index>(n_states) * term_count;
  }
  Index output_dim() const { return coeff_count() + n_shifts; }

  template <class S2>
  RecoveryNetParams<S2> cast() const {
    RecoveryNetParams<S2> out;
    out.n_states = n_states;
    out.n_inputs = n_inputs;
    out.hidden = hidden;
    out.term_count = term_count;
    out.n_shifts = n_shifts;
    out.mlp_hidden = mlp_hidden;
    out.tau = static_cast<S2>(tau);
    out.seed = seed;
    out.gru.Wz = gru.Wz.template cast<S2>();
    out.gru.Wr = gru.Wr.template cast<S2>();
    out.gru.Wh = gru.Wh.template cast<S2>();
    out.gru.Uz = gru.Uz.template cast<S2>();
    out.gru.Ur = gru.Ur.template cast<S2>();
    out.gru.Uh = gru.Uh.template cast<S2>();
    out.gru.bz = gru.bz.template cast<S2>();
    out.gru.br = gru.br.template cast<S2>();
    out.gru.bh = gru.bh.template cast<S2>();
    out.dense.W1 = dense.W1.template cast<S2>();
    out.dense.b1 = dense.b1.template cast<S2>();
    out.dense.W2 = dense.W2.template cast<S2>();
    out.dense.b2 = dense.b2.template cast<S2>();
    return out;
  }
};

// Applies fn to every trainable tensor in a fixed order; the same order is
// used by the optimizer, serialization, and gradient checks.
template <class Params, class Fn>
void for_each_tensor(Params& params, Fn&& fn) {
  fn("gru.Wz", params.gru.Wz);
  fn("gru.Uz", params.gru.Uz);
  fn("gru.bz", params.gru.bz);
  fn("gru.Wr", params.gru.Wr);
  fn("gru.Ur", params.gru.Ur);
  fn("gru.br", params.gru.br);
  fn("gru.Wh", params.gru.Wh);
  fn("gru.Uh", params.gru.Uh);
  fn("gru.bh", params.gru.bh);
  fn("dense.W1", params.dense.W1);
  fn("dense.b1", params.dense.b1);
  fn("dense.W2", params.dense.W2);
  fn("dense.b2", params.dense.b2);
}

template <class Scalar>
Index parameter_count(const RecoveryNetParams<Scalar>& params) {
  Index count = 0;
  for_each_tensor(const_cast<RecoveryNetParams<Scalar>&>(params),
                  [&count](const char*, auto& t) { count += t.size(); });
  return count;
}

// Gate weights uniform in [-1/sqrt(V), 1/sqrt(V)], dense layers uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)] with the output layer additionally scaled
// by head_init_scale (small initial coefficient estimates keep the first ODE
// solves finite), biases zero. Deterministic given the seed.
inline RecoveryNetParams<double> init_params(int n_states, int n_inputs, int V,
                                             int term_count, int q, double tau,
                                             std::uint64_t seed,
                                             int mlp_hidden = 0,
                                             double head_init_scale = 0.1) {
  if (V < 1) throw std::invalid_argument("init_params: V must be >= 1");
  if (n_states < 1 || term_count < 1)
    throw std::invalid_argument("init_params: bad shape");
  RecoveryNetParams<double> p;
  p.n_states = n_states;
  p.n_inputs = n_inputs;
  p.hidden = V;
  p.term_count = term_count;
  p.n_shifts = q;
  p.mlp_hidden = mlp_hidden > 0 ? mlp_hidden : V;
  p.tau = tau;
  p.seed = seed;

  std::mt19937_64 rng(seed);
  const Index C = p.channels();
  const Index H = p.mlp_hidden;
  const Index O = p.output_dim();
  auto fill = [&rng](Matrix<double>& m, Index rows, Index cols, double scale) {
    m.resize(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j)
        m(i, j) = uniform_real(rng, -scale, scale);
  };
  const double gate = 1.0 / std::sqrt(static_cast<double>(V));
  fill(p.gru.Wz, V, C, gate);
  fill(p.gru.Uz, V, V, gate);
  fill(p.gru.Wr, V, C, gate);
  fill(p.gru.Ur, V, V, gate);
  fill(p.gru.Wh, V, C, gate);
  fill(p.gru.Uh, V, V, gate);
  p.gru.bz = Vector<double>::Zero(V);
  p.gru.br = Vector<double>::Zero(V);
  p.gru.bh = Vector<double>::Zero(V);

  fill(p.dense.W1, H, V, 1.0 / std::sqrt(static_cast<double>(V)));
  p.dense.b1 = Vector<double>::Zero(H);
  fill(p.dense.W2, O, H,
       head_init_scale / std::sqrt(static_cast<double>(H)));
  p.dense.b2 = Vector<double>::Zero(O);
  return p;
}

// Activations recorded by the forward passes, enough to replay them and to
// run reverse mode.
template <class Scalar>
struct NetTape {
  // GRU, one entry per timestep.
  std::vector<Matrix<Scalar>> x;       // channels x batch
  std::vector<Matrix<Scalar>> h_prev;  // hidden x batch
  std::vector<Matrix<Scalar>> z, r, hcand;
  Matrix<Scalar> h_final;
  // Dense head.
  Matrix<Scalar> mlp_pre;   // mlp_hidden x batch (pre-ReLU)
  Matrix<Scalar> raw;       // output_dim x batch
};

template <class Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& m) {
  return (Scalar(1) / (Scalar(1) + (-m.array()).exp())).matrix();
}

// Standard GRU recurrence over the window, h0 = 0; returns the final hidden
// state per batch element (hidden x batch).
template <class Scalar>
Matrix<Scalar> gru_forward(const RecoveryNetParams<Scalar>& params,
                           const BatchTensor<Scalar>& batch,
                           NetTape<Scalar>* tape = nullptr) {
  if (batch.channels() != params.channels())
    throw std::invalid_argument("gru_forward: channel count mismatch");
  if (batch.length() < 1)
    throw std::invalid_argument("gru_forward: empty window");
  const Index B = batch.batch();
  const Index V = params.hidden;
  Matrix<Scalar> h = Matrix<Scalar>::Zero(V, B);
  for (Index t = 0; t < batch.length(); ++t) {
    const Matrix<Scalar>& x = batch.steps[static_cast<std::size_t>(t)];
    Matrix<Scalar> z = sigmoid<Scalar>(
        ((params.gru.Wz * x + params.gru.Uz * h).colwise() + params.gru.bz));
    Matrix<Scalar> r = sigmoid<Scalar>(
        ((params.gru.Wr * x + params.gru.Ur * h).colwise() + params.gru.br));
    Matrix<Scalar> hc =
        ((params.gru.Wh * x + params.gru.Uh * (r.array() * h.array()).matrix())
             .colwise() +
         params.gru.bh)
            .array()
            .tanh()
            .matrix();
    Matrix<Scalar> h_next =
        ((Scalar(1) - z.array()) * h.array() + z.array() * hc.array())
            .matrix();
    if (tape != nullptr) {
      tape->x.push_back(x);
      tape->h_prev.push_back(h);
      tape->z.push_back(std::move(z));
      tape->r.push_back(std::move(r));
      tape->hcand.push_back(std::move(hc));
    }
    h = std::move(h_next);
  }
  if (tape != nullptr) tape->h_final = h;
  return h;
}

template <class Scalar>
struct DenseOutputs {
  Matrix<Scalar> coefficients;  // (n_states*term_count) x batch
  Matrix<Scalar> shifts;        // q x batch
};

// One ReLU hidden layer, linear output layer. The coefficient outputs are
// linear so the head can emit negative coefficients.
template <class Scalar>
DenseOutputs<Scalar> dense_forward(const RecoveryNetParams<Scalar>& params,
                                   const MatrixRef<Scalar>& hidden,
                                   NetTape<Scalar>* tape = nullptr) {
  if (hidden.rows() != params.hidden)
    throw std::invalid_argument("dense_forward: hidden size mismatch");
  Matrix<Scalar> pre =
      (params.dense.W1 * hidden).colwise() + params.dense.b1;
  Matrix<Scalar> act = pre.array().max(Scalar(0)).matrix();
  Matrix<Scalar> raw = (params.dense.W2 * act).colwise() + params.dense.b2;
  if (tape != nullptr) {
    tape->mlp_pre = pre;
    tape->raw = raw;
  }
  DenseOutputs<Scalar> out;
  out.coefficients = raw.topRows(params.coeff_count());
  out.shifts = raw.bottomRows(params.n_shifts);
  return out;
}

// entry -> 0 where |entry| < tau. Gradient contract: zeroed entries propagate
// zero gradient, surviving entries propagate identity.
template <class Scalar>
Vector<Scalar> threshold_dropout(const VectorRef<Scalar>& raw, Scalar tau) {
  if (tau < Scalar(0))
    throw std::invalid_argument("threshold_dropout: tau must be >= 0");
  Vector<Scalar> out = raw;
  for (Index i = 0; i < out.size(); ++i)
    if (std::abs(out[i]) < tau) out[i] = Scalar(0);
  return out;
}

template <class Scalar>
Eigen::Array<bool, Eigen::Dynamic, 1> dropout_mask(const VectorRef<Scalar>& raw,
                                                   Scalar tau) {
  return raw.array().abs() >= tau;
}

// Keeps the k largest-magnitude entries (ties broken toward lower index);
// the paper-described alternative to threshold dropout.
template <class Scalar>
Vector<Scalar> top_k_dropout(const VectorRef<Scalar>& raw, Index k) {
  if (k < 0) throw std::invalid_argument("top_k_dropout: k must be >= 0");
  Vector<Scalar> out = Vector<Scalar>::Zero(raw.size());
  if (k >= raw.size()) return raw;
  std::vector<Index> order(static_cast<std::size_t>(raw.size()));
  for (Index i = 0; i < raw.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&raw](Index a, Index b) {
    return std::abs(raw[a]) > std::abs(raw[b]);
  });
  for (Index i = 0; i < k; ++i) {
    const Index j = order[static_cast<std::size_t>(i)];
    out[j] = raw[j];
  }
  return out;
}

template <class Scalar>
struct NetGradients {
  GRUParams<Scalar> gru;
  DenseParams<Scalar> dense;
};

template <class Scalar>
NetGradients<Scalar> zero_gradients(const RecoveryNetParams<Scalar>& params) {
  NetGradients<Scalar> g;
  g.gru.Wz = Matrix<Scalar>::Zero(params.gru.Wz.rows(), params.gru.Wz.cols());
  g.gru.Uz = Matrix<Scalar>::Zero(params.gru.Uz.rows(), params.gru.Uz.cols());
  g.gru.Wr = Matrix<Scalar>::Zero(params.gru.Wr.rows(), params.gru.Wr.cols());
  g.gru.Ur = Matrix<Scalar>::Zero(params.gru.Ur.rows(), params.gru.Ur.cols());
  g.gru.Wh = Matrix<Scalar>::Zero(params.gru.Wh.rows(), params.gru.Wh.cols());
  g.gru.Uh = Matrix<Scalar>::Zero(params.gru.Uh.rows(), params.gru.Uh.cols());
  g.gru.bz = Vector<Scalar>::Zero(params.gru.bz.size());
  g.gru.br = Vector<Scalar>::Zero(params.gru.br.size());
  g.gru.bh = Vector<Scalar>::Zero(params.gru.bh.size());
  g.dense.W1 =
      Matrix<Scalar>::Zero(params.dense.W1.rows(), params.dense.W1.cols());
  g.dense.b1 = Vector<Scalar>::Zero(params.dense.b1.size());
  g.dense.W2 =
      Matrix<Scalar>::Zero(params.dense.W2.rows(), params.dense.W2.cols());
  g.dense.b2 = Vector<Scalar>::Zero(params.dense.b2.size());
  return g;
}

// Exact reverse mode through the dense head and the unrolled GRU given
// upstream gradients w.r.t. the raw coefficient outputs and shifts.
template <class Scalar>
NetGradients<Scalar> net_backward(const RecoveryNetParams<Scalar>& params,
                                  const NetTape<Scalar>& tape,
                                  const MatrixRef<Scalar>& upstream_coeffs,
                                  const MatrixRef<Scalar>& upstream_shifts) {
  const Index B = tape.h_final.cols();
  if (upstream_coeffs.rows() != params.coeff_count() ||
      upstream_coeffs.cols() != B || upstream_shifts.rows() != params.n_shifts ||
      upstream_shifts.cols() != B)
    throw std::invalid_argument("net_backward: upstream shape mismatch");
  if (tape.raw.cols() != B)
    throw std::invalid_argument("net_backward: tape does not match batch");

  NetGradients<Scalar> g = zero_gradients(params);

  // Dense head.
  Matrix<Scalar> draw(params.output_dim(), B);
  draw.topRows(params.coeff_count()) = upstream_coeffs;
  draw.bottomRows(params.n_shifts) = upstream_shifts;
  const Matrix<Scalar> act = tape.mlp_pre.array().max(Scalar(0)).matrix();
  g.dense.W2 = draw * act.transpose();
  g.dense.b2 = draw.rowwise().sum();
  Matrix<Scalar> dact = params.dense.W2.transpose() * draw;
  Matrix<Scalar> dpre =
      (tape.mlp_pre.array() > Scalar(0)).select(dact, Matrix<Scalar>::Zero(dact.rows(), dact.cols()));
  g.dense.W1 = dpre * tape.h_final.transpose();
  g.dense.b1 = dpre.rowwise().sum();

  // Backpropagation through time.
  Matrix<Scalar> dh = params.dense.W1.transpose() * dpre;
  for (Index t = static_cast<Index>(tape.x.size()) - 1; t >= 0; --t) {
    const auto& x = tape.x[static_cast<std::size_t>(t)];
    const auto& h_prev = tape.h_prev[static_cast<std::size_t>(t)];
    const auto& z = tape.z[static_cast<std::size_t>(t)];
    const auto& r = tape.r[static_cast<std::size_t>(t)];
    const auto& hc = tape.hcand[static_cast<std::size_t>(t)];

    const Matrix<Scalar> dz =
        (dh.array() * (hc.array() - h_prev.array())).matrix();
    const Matrix<Scalar> dhc = (dh.array() * z.array()).matrix();
    Matrix<Scalar> dh_prev = (dh.array() * (Scalar(1) - z.array())).matrix();

    const Matrix<Scalar> da_h =
        (dhc.array() * (Scalar(1) - hc.array().square())).matrix();
    const Matrix<Scalar> rh = (r.array() * h_prev.array()).matrix();
    g.gru.Wh += da_h * x.transpose();
    g.gru.Uh += da_h * rh.transpose();
    g.gru.bh += da_h.rowwise().sum();
    const Matrix<Scalar> drh = params.gru.Uh.transpose() * da_h;
    const Matrix<Scalar> dr = (drh.array() * h_prev.array()).matrix();
    dh_prev += (drh.array() * r.array()).matrix();

    const Matrix<Scalar> da_z =
        (dz.array() * z.array() * (Scalar(1) - z.array())).matrix();
    g.gru.Wz += da_z * x.transpose();
    g.gru.Uz += da_z * h_prev.transpose();
    g.gru.bz += da_z.rowwise().sum();
    dh_prev += params.gru.Uz.transpose() * da_z;

    const Matrix<Scalar> da_r =
        (dr.array() * r.array() * (Scalar(1) - r.array())).matrix();
    g.gru.Wr += da_r * x.transpose();
    g.gru.Ur += da_r * h_prev.transpose();
    g.gru.br += da_r.rowwise().sum();
    dh_prev += params.gru.Ur.transpose() * da_r;

    dh = std::move(dh_prev);
  }
  return g;
}

}  // namespace flowrec
