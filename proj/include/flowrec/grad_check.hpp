#pragma once

#include <string>

#include "flowrec/trainer.hpp"

namespace flowrec {

enum class GradCheckMode { dense_only, net_only, full_pipeline };

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_tensor;
  Index worst_index = -1;
};

namespace detail {

// Loss used by the net-level checks: 0.5 * ||raw outputs||^2 summed over the
// batch, which exercises every head output.
template <class Scalar>
Scalar net_loss(const RecoveryNetParams<Scalar>& params,
                const BatchTensor<Scalar>& batch, NetTape<Scalar>* tape) {
  NetTape<Scalar> local;
  NetTape<Scalar>* t = tape != nullptr ? tape : &local;
  const Matrix<Scalar> hidden = gru_forward(params, batch, t);
  dense_forward<Scalar>(params, hidden, t);
  return Scalar(0.5) * t->raw.array().square().sum();
}

template <class Scalar>
Scalar mode_loss(const RecoveryNetParams<Scalar>& params,
                 const WindowBatch<Scalar>& batch,
                 const PipelineConfig<Scalar>& cfg, GradCheckMode mode) {
  if (mode == GradCheckMode::full_pipeline)
    return batch_forward<Scalar>(params, batch, cfg, false).loss;
  return net_loss<Scalar>(params, batch.tensor, nullptr);
}

}  // namespace detail

// Central-difference comparison of the analytic gradients over every
// parameter (dense layers only in dense_only mode). The finite-difference
// side evaluates the forward pass in extended precision so the check
// measures adjoint error rather than cancellation noise.
inline GradCheckReport grad_check(const RecoveryNetParams<double>& params,
                                  const WindowBatch<double>& batch,
                                  const PipelineConfig<double>& cfg,
                                  GradCheckMode mode, double delta = 1e-5) {
  // Analytic gradients.
  NetGradients<double> analytic;
  if (mode == GradCheckMode::full_pipeline) {
    auto fwd = batch_forward<double>(params, batch, cfg, true);
    analytic = batch_backward<double>(params, batch, cfg, fwd);
  } else {
    NetTape<double> tape;
    detail::net_loss<double>(params, batch.tensor, &tape);
    analytic = net_backward<double>(params, tape, tape.raw.topRows(params.coeff_count()),
                                    tape.raw.bottomRows(params.n_shifts));
  }

  RecoveryNetParams<long double> p_ld = params.cast<long double>();
  const WindowBatch<long double> b_ld = batch.cast<long double>();
  const PipelineConfig<long double> cfg_ld = cfg.cast<long double>();

  GradCheckReport report;
  auto probe = [&](const char* name, auto& tensor_ld, auto& grad) {
    if (mode == GradCheckMode::dense_only &&
        std::string(name).rfind("dense.", 0) != 0)
      return;
    for (Index j = 0; j < tensor_ld.cols(); ++j)
      for (Index i = 0; i < tensor_ld.rows(); ++i) {
        const long double saved = tensor_ld(i, j);
        tensor_ld(i, j) = saved + delta;
        const long double f_plus =
            detail::mode_loss<long double>(p_ld, b_ld, cfg_ld, mode);
        tensor_ld(i, j) = saved - delta;
        const long double f_minus =
            detail::mode_loss<long double>(p_ld, b_ld, cfg_ld, mode);
        tensor_ld(i, j) = saved;
        const double numeric =
            static_cast<double>((f_plus - f_minus) / (2.0L * delta));
        const double a = grad(i, j);
        const double rel =
            std::abs(a - numeric) / std::max(std::abs(numeric), 1e-8);
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_tensor = name;
          report.worst_index = i + j * tensor_ld.rows();
        }
      }
  };

  for_each_tensor(p_ld, [&](const char* name, auto& t_ld) {
    for_each_tensor(analytic, [&](const char* gname, auto& g) {
      if (std::string(name) == gname) probe(name, t_ld, g);
    });
  });
  return report;
}

}  // namespace flowrec
