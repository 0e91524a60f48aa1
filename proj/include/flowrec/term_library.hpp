#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "flowrec/types.hpp"

namespace flowrec {

// One candidate right-hand-side term: a monomial in the state variables, a
// single linear input term, or the constant 1.
struct Term {
  enum class Kind { constant, input, monomial };

  Kind kind = Kind::monomial;
  int input = -1;           // input index, valid when kind == input
  std::vector<int> powers;  // per-state exponents, valid when kind == monomial

  int degree() const {
    if (kind != Kind::monomial) return kind == Kind::input ? 1 : 0;
    int d = 0;
    for (int p : powers) d += p;
    return d;
  }

  std::string name() const {
    switch (kind) {
      case Kind::constant:
        return "1";
      case Kind::input:
        return "u" + std::to_string(input + 1);
      case Kind::monomial: {
        std::string out;
        for (std::size_t i = 0; i < powers.size(); ++i) {
          if (powers[i] == 0) continue;
          if (!out.empty()) out += "*";
          out += "x" + std::to_string(i + 1);
          if (powers[i] > 1) out += "^" + std::to_string(powers[i]);
        }
        return out;
      }
    }
    return {};
  }

  bool operator==(const Term&) const = default;
};

// Ordered candidate-term set for order-M models: inputs first, then monomials
// of degree 1..M in graded lexicographic order (within a degree, exponent
// tuples descend lexicographically), optionally preceded by the constant.
class TermLibrary {
 public:
  TermLibrary() = default;

  TermLibrary(int n_states, int n_inputs, int order, bool include_constant)
      : n_states_(n_states),
        n_inputs_(n_inputs),
        order_(order),
        include_constant_(include_constant) {
    if (n_states < 1) throw std::domain_error("TermLibrary: n_states must be >= 1");
    if (order < 1) throw std::domain_error("TermLibrary: order must be >= 1");
    if (n_inputs < 0) throw std::domain_error("TermLibrary: n_inputs must be >= 0");
    if (include_constant) {
      terms_.push_back(Term{Term::Kind::constant, -1, {}});
    }
    for (int j = 0; j < n_inputs; ++j) {
      terms_.push_back(Term{Term::Kind::input, j, {}});
    }
    std::vector<int> powers(static_cast<std::size_t>(n_states), 0);
    for (int d = 1; d <= order; ++d) emit_monomials(d, 0, powers);
  }

  int n_states() const { return n_states_; }
  int n_inputs() const { return n_inputs_; }
  int order() const { return order_; }
  bool include_constant() const { return include_constant_; }
  Index size() const { return static_cast<Index>(terms_.size()); }
  const std::vector<Term>& terms() const { return terms_; }
  const Term& term(Index j) const { return terms_[static_cast<std::size_t>(j)]; }

  // Index of the term with the given display name, -1 if absent.
  Index find(const std::string& name) const {
    for (std::size_t j = 0; j < terms_.size(); ++j) {
      if (terms_[j].name() == name) return static_cast<Index>(j);
    }
    return -1;
  }

  bool operator==(const TermLibrary&) const = default;

 private:
  void emit_monomials(int degree_left, int var, std::vector<int>& powers) {
    if (var == n_states_ - 1) {
      powers[static_cast<std::size_t>(var)] = degree_left;
      terms_.push_back(Term{Term::Kind::monomial, -1, powers});
      powers[static_cast<std::size_t>(var)] = 0;
      return;
    }
    for (int e = degree_left; e >= 0; --e) {
      powers[static_cast<std::size_t>(var)] = e;
      emit_monomials(degree_left - e, var + 1, powers);
    }
    powers[static_cast<std::size_t>(var)] = 0;
  }

  int n_states_ = 0;
  int n_inputs_ = 0;
  int order_ = 0;
  bool include_constant_ = false;
  std::vector<Term> terms_;
};

inline TermLibrary build_library(int n_states, int n_inputs, int order,
                                 bool include_constant = false) {
  return TermLibrary(n_states, n_inputs, order, include_constant);
}

template <class Scalar>
Scalar eval_term(const Term& term, const VectorRef<Scalar>& x,
                 const VectorRef<Scalar>& u) {
  switch (term.kind) {
    case Term::Kind::constant:
      return Scalar(1);
    case Term::Kind::input:
      return u[term.input];
    case Term::Kind::monomial: {
      Scalar v(1);
      for (std::size_t i = 0; i < term.powers.size(); ++i) {
        for (int p = 0; p < term.powers[i]; ++p) v *= x[static_cast<Index>(i)];
      }
      return v;
    }
  }
  return Scalar(0);
}

template <class Scalar>
Vector<Scalar> eval_features(const TermLibrary& lib, const VectorRef<Scalar>& x,
                             const VectorRef<Scalar>& u) {
  if (x.size() != lib.n_states())
    throw std::invalid_argument("eval_features: state dimension mismatch");
  if (u.size() != lib.n_inputs())
    throw std::invalid_argument("eval_features: input dimension mismatch");
  Vector<Scalar> out(lib.size());
  for (Index j = 0; j < lib.size(); ++j) {
    out[j] = eval_term<Scalar>(lib.term(j), x, u);
  }
  return out;
}

// d(features)/d(states), one row per term.
template <class Scalar>
Matrix<Scalar> feature_state_jacobian(const TermLibrary& lib,
                                      const VectorRef<Scalar>& x,
                                      const VectorRef<Scalar>& u) {
  if (x.size() != lib.n_states() || u.size() != lib.n_inputs())
    throw std::invalid_argument("feature_state_jacobian: dimension mismatch");
  Matrix<Scalar> jac = Matrix<Scalar>::Zero(lib.size(), lib.n_states());
  for (Index j = 0; j < lib.size(); ++j) {
    const Term& t = lib.term(j);
    if (t.kind != Term::Kind::monomial) continue;
    for (std::size_t i = 0; i < t.powers.size(); ++i) {
      const int p = t.powers[i];
      if (p == 0) continue;
      Scalar v = Scalar(p);
      for (std::size_t l = 0; l < t.powers.size(); ++l) {
        const int e = (l == i) ? t.powers[l] - 1 : t.powers[l];
        for (int rep = 0; rep < e; ++rep) v *= x[static_cast<Index>(l)];
      }
      jac(j, static_cast<Index>(i)) = v;
    }
  }
  return jac;
}

// d(features)/d(inputs): 1 on the matching input term, 0 elsewhere.
template <class Scalar>
Matrix<Scalar> feature_input_jacobian(const TermLibrary& lib) {
  Matrix<Scalar> jac = Matrix<Scalar>::Zero(lib.size(), lib.n_inputs());
  for (Index j = 0; j < lib.size(); ++j) {
    const Term& t = lib.term(j);
    if (t.kind == Term::Kind::input) jac(j, t.input) = Scalar(1);
  }
  return jac;
}

}  // namespace flowrec
