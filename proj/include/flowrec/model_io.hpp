#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "flowrec/recovery_net.hpp"
#include "flowrec/sparse_model.hpp"

namespace flowrec {

// ---- Sparse model <-> JSON document --------------------------------------
// Only supported (nonzero) terms are listed; absent terms are zero.

inline nlohmann::json model_to_json(const SparseODEModel<double>& model) {
  nlohmann::json doc;
  doc["format"] = "flowrec-model";
  doc["version"] = 1;
  doc["library"] = {{"n_states", model.library.n_states()},
                    {"n_inputs", model.library.n_inputs()},
                    {"order", model.library.order()},
                    {"include_constant", model.library.include_constant()}};
  doc["threshold"] = model.threshold;
  nlohmann::json equations = nlohmann::json::array();
  for (Index i = 0; i < model.coefficients.rows(); ++i) {
    nlohmann::json eq;
    eq["state"] = "x" + std::to_string(i + 1);
    nlohmann::json terms = nlohmann::json::array();
    for (Index j = 0; j < model.coefficients.cols(); ++j) {
      if (model.coefficients(i, j) == 0.0) continue;
      terms.push_back({{"term", model.library.term(j).name()},
                       {"coeff", model.coefficients(i, j)}});
    }
    eq["terms"] = std::move(terms);
    equations.push_back(std::move(eq));
  }
  doc["equations"] = std::move(equations);
  return doc;
}

inline SparseODEModel<double> model_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "flowrec-model")
    throw std::runtime_error("model_from_json: not a flowrec model document");
  const auto& lib_doc = doc.at("library");
  const TermLibrary lib(lib_doc.at("n_states").get<int>(),
                        lib_doc.at("n_inputs").get<int>(),
                        lib_doc.at("order").get<int>(),
                        lib_doc.value("include_constant", false));
  Matrix<double> theta = Matrix<double>::Zero(lib.n_states(), lib.size());
  Index eq_index = 0;
  for (const auto& eq : doc.at("equations")) {
    if (eq_index >= lib.n_states())
      throw std::runtime_error("model_from_json: too many equations");
    for (const auto& t : eq.at("terms")) {
      const std::string name = t.at("term").get<std::string>();
      const Index j = lib.find(name);
      if (j < 0)
        throw std::runtime_error("model_from_json: unknown term '" + name + "'");
      theta(eq_index, j) = t.at("coeff").get<double>();
    }
    ++eq_index;
  }
  if (eq_index != lib.n_states())
    throw std::runtime_error("model_from_json: equation count mismatch");
  return SparseODEModel<double>(lib, theta, doc.at("threshold").get<double>());
}

inline void save_model(const SparseODEModel<double>& model,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << model_to_json(model).dump(2) << "\n";
}

inline SparseODEModel<double> load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json doc;
  in >> doc;
  return model_from_json(doc);
}

// Human-readable equation listing, e.g. "dx1/dt = 0.52*x1 - 0.026*x1*x2".
inline std::string model_summary(const SparseODEModel<double>& model,
                                 int precision = 4) {
  std::ostringstream out;
  out.precision(precision);
  for (Index i = 0; i < model.coefficients.rows(); ++i) {
    out << "dx" << (i + 1) << "/dt =";
    bool first = true;
    for (Index j = 0; j < model.coefficients.cols(); ++j) {
      const double c = model.coefficients(i, j);
      if (c == 0.0) continue;
      if (first) {
        out << " " << c;
        first = false;
      } else {
        out << (c < 0 ? " - " : " + ") << std::abs(c);
      }
      if (model.library.term(j).kind != Term::Kind::constant)
        out << "*" << model.library.term(j).name();
    }
    if (first) out << " 0";
    out << "\n";
  }
  return out.str();
}

// ---- Network parameters <-> versioned binary blob ------------------------

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(v));
  write_u64(out, bits);
}

inline double read_f64(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace detail

inline constexpr char kParamsMagic[8] = {'F', 'L', 'R', 'N', 'E', 'T', '0', '1'};

inline void save_params(const RecoveryNetParams<double>& params,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  out.write(kParamsMagic, sizeof(kParamsMagic));
  for (int v : {params.n_states, params.n_inputs, params.hidden,
                params.term_count, params.n_shifts, params.mlp_hidden})
    detail::write_u64(out, static_cast<std::uint64_t>(v));
  detail::write_f64(out, params.tau);
  detail::write_u64(out, params.seed);
  for_each_tensor(const_cast<RecoveryNetParams<double>&>(params),
                  [&out](const char*, auto& t) {
                    detail::write_u64(out, static_cast<std::uint64_t>(t.rows()));
                    detail::write_u64(out, static_cast<std::uint64_t>(t.cols()));
                    for (Index j = 0; j < t.cols(); ++j)
                      for (Index i = 0; i < t.rows(); ++i)
                        detail::write_f64(out, t(i, j));
                  });
  if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

inline RecoveryNetParams<double> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kParamsMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_params: bad magic in " + path);
  RecoveryNetParams<double> p;
  p.n_states = static_cast<int>(detail::read_u64(in));
  p.n_inputs = static_cast<int>(detail::read_u64(in));
  p.hidden = static_cast<int>(detail::read_u64(in));
  p.term_count = static_cast<int>(detail::read_u64(in));
  p.n_shifts = static_cast<int>(detail::read_u64(in));
  p.mlp_hidden = static_cast<int>(detail::read_u64(in));
  p.tau = detail::read_f64(in);
  p.seed = detail::read_u64(in);
  for_each_tensor(p, [&in, &path](const char* name, auto& t) {
    const Index rows = static_cast<Index>(detail::read_u64(in));
    const Index cols = static_cast<Index>(detail::read_u64(in));
    t.resize(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) t(i, j) = detail::read_f64(in);
    if (!in)
      throw std::runtime_error(std::string("load_params: truncated tensor ") +
                               name + " in " + path);
  });
  return p;
}

inline std::string params_summary(const RecoveryNetParams<double>& params) {
  std::ostringstream out;
  out << "n_states=" << params.n_states << " n_inputs=" << params.n_inputs
      << " hidden=" << params.hidden << " term_count=" << params.term_count
      << " shifts=" << params.n_shifts << " mlp_hidden=" << params.mlp_hidden
      << " tau=" << params.tau << " seed=" << params.seed
      << " parameters=" << parameter_count(params) << "\n";
  return out.str();
}

}  // namespace flowrec
