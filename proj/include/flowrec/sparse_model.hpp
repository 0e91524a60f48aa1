#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "flowrec/term_library.hpp"
#include "flowrec/types.hpp"

namespace flowrec {

template <class Scalar>
void apply_threshold(Matrix<Scalar>& coefficients, Scalar threshold) {
  coefficients = (coefficients.array().abs() < threshold)
                     .select(Matrix<Scalar>::Zero(coefficients.rows(),
                                                  coefficients.cols()),
                             coefficients);
}

// Sparse ODE model: row i of `coefficients` holds the weights of equation
// dx_i/dt over the library terms. Entries below `threshold` in magnitude are
// stored as exact zeros (enforced on construction).
template <class Scalar>
struct SparseODEModel {
  TermLibrary library;
  Matrix<Scalar> coefficients;  // n_states x term_count
  Scalar threshold = Scalar(0);

  SparseODEModel() = default;

  SparseODEModel(TermLibrary lib, Matrix<Scalar> theta, Scalar tau)
      : library(std::move(lib)), coefficients(std::move(theta)), threshold(tau) {
    if (coefficients.rows() != library.n_states() ||
        coefficients.cols() != library.size())
      throw std::invalid_argument("SparseODEModel: coefficient shape mismatch");
    if (threshold < Scalar(0))
      throw std::invalid_argument("SparseODEModel: threshold must be >= 0");
    apply_threshold(coefficients, threshold);
  }

  template <class S2>
  SparseODEModel<S2> cast() const {
    SparseODEModel<S2> out;
    out.library = library;
    out.coefficients = coefficients.template cast<S2>();
    out.threshold = static_cast<S2>(threshold);
    return out;
  }
};

template <class Scalar>
std::vector<std::pair<Index, Index>> support(const SparseODEModel<Scalar>& model) {
  std::vector<std::pair<Index, Index>> entries;
  for (Index i = 0; i < model.coefficients.rows(); ++i)
    for (Index j = 0; j < model.coefficients.cols(); ++j)
      if (model.coefficients(i, j) != Scalar(0)) entries.emplace_back(i, j);
  return entries;
}

template <class Scalar>
Index support_size(const SparseODEModel<Scalar>& model) {
  return static_cast<Index>(support(model).size());
}

template <class Scalar>
Vector<Scalar> model_rhs(const SparseODEModel<Scalar>& model,
                         const VectorRef<Scalar>& x, const VectorRef<Scalar>& u) {
  return model.coefficients * eval_features<Scalar>(model.library, x, u);
}

// d(rhs)/d(states) = Theta * d(features)/d(states).
template <class Scalar>
Matrix<Scalar> rhs_state_jacobian(const SparseODEModel<Scalar>& model,
                                  const VectorRef<Scalar>& x,
                                  const VectorRef<Scalar>& u) {
  return model.coefficients * feature_state_jacobian<Scalar>(model.library, x, u);
}

// FNV-1a over the coefficient bytes and threshold; used to pair solve tapes
// with the model that produced them.
template <class Scalar>
std::uint64_t model_hash(const SparseODEModel<Scalar>& model) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  const double tau = static_cast<double>(model.threshold);
  mix(reinterpret_cast<const unsigned char*>(&tau), sizeof(tau));
  for (Index i = 0; i < model.coefficients.rows(); ++i)
    for (Index j = 0; j < model.coefficients.cols(); ++j) {
      const double v = static_cast<double>(model.coefficients(i, j));
      mix(reinterpret_cast<const unsigned char*>(&v), sizeof(v));
    }
  return h;
}

}  // namespace flowrec
