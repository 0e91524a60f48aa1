#include "flowrec/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "flowrec/benchmarks.hpp"
#include "flowrec/config_io.hpp"
#include "flowrec/csv_io.hpp"
#include "flowrec/grad_check.hpp"
#include "flowrec/model_io.hpp"
#include "flowrec/selector.hpp"
#include "flowrec/trainer.hpp"
#include "flowrec/version.hpp"

namespace flowrec::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << text;
}

// The manifest is the one output that may carry timing; everything else is
// byte-reproducible from the recorded argv.
void write_manifest(const fs::path& path, const std::string& command,
                    const CommonOptions& common, const json& config,
                    const json& inputs, const std::vector<std::string>& outputs,
                    double wall_seconds, int exit_status) {
  json doc;
  doc["command"] = command;
  doc["argv"] = common.argv;
  doc["version"] = kVersion;
  doc["config"] = config;
  doc["inputs"] = inputs;
  doc["outputs"] = outputs;
  doc["wall_clock_s"] = wall_seconds;
  doc["exit_status"] = exit_status;
  write_text(path, doc.dump(2) + "\n");
}

std::string format_sig(double v, int digits = 4) {
  std::ostringstream out;
  out.precision(digits);
  out << v;
  return out.str();
}

json support_to_json(const std::vector<std::vector<std::string>>& support) {
  json arr = json::array();
  for (const auto& eq : support) arr.push_back(eq);
  return arr;
}

}  // namespace

int cmd_generate(const std::string& spec_path, const std::string& out_path,
                 const CommonOptions& common) {
  Stopwatch watch;
  BenchmarkSpec spec = benchmark_spec_from_json(load_json_file(spec_path));
  if (common.seed_set) spec.seed = common.seed;
  const TimeSeriesDataset data = generate(spec);
  const fs::path out(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_csv(data, out_path);

  json config;
  config["system"] = system_name(spec.system);
  config["duration"] = spec.duration;
  config["rate"] = spec.rate > 0 ? spec.rate : default_rate(spec.system);
  config["noise"] = spec.noise;
  config["seed"] = spec.seed;
  config["substeps"] = spec.substeps;
  write_manifest(out_path + ".manifest.json", "generate", common, config,
                 json{{"spec", spec_path}}, {out_path}, watch.seconds(), 0);
  std::cout << "wrote " << out_path << " (" << data.rows() << " rows, n="
            << data.states.cols() << ", m=" << data.inputs.cols() << ")\n";
  return 0;
}

int cmd_recover(const std::string& dataset_path, const std::string& config_path,
                const std::string& truth, const CommonOptions& common) {
  Stopwatch watch;
  const TimeSeriesDataset dataset = load_csv(dataset_path);
  TrainConfig cfg;
  if (!config_path.empty())
    cfg = train_config_from_json(load_json_file(config_path));
  if (common.seed_set) cfg.seed = common.seed;
  if (common.threads_set) cfg.threads = common.threads;

  std::optional<SparseODEModel<double>> truth_model;
  if (!truth.empty()) {
    if (fs::exists(truth)) {
      truth_model = load_model(truth);
    } else {
      truth_model = ground_truth_model(system_from_name(truth));
    }
  }

  const fs::path dir(common.out_dir.empty() ? "." : common.out_dir);
  fs::create_directories(dir);

  const RecoveryResult result = train(dataset, cfg, truth_model);

  save_model(result.model, (dir / "model.json").string());
  save_params(result.params, (dir / "params.bin").string());
  write_text(dir / "params.txt", params_summary(result.params));
  {
    std::ostringstream csv;
    csv << "epoch,loss\n";
    for (std::size_t i = 0; i < result.loss_history.size(); ++i)
      csv << i << "," << format_double(result.loss_history[i]) << "\n";
    write_text(dir / "loss_history.csv", csv.str());
  }

  const EvalResult eval = evaluate(result.model, dataset);
  json metrics;
  metrics["reconstruction_mse"] = result.reconstruction_mse;
  metrics["support"] = support_to_json(eval.support);
  metrics["support_size"] = support_size(result.model);
  metrics["final_loss"] =
      result.loss_history.empty() ? json() : json(result.loss_history.back());
  metrics["epochs"] = cfg.epochs;
  if (result.eval_diverged_at)
    metrics["eval_diverged_at"] = *result.eval_diverged_at;
  if (result.support) {
    json sup;
    sup["exact"] = result.support->exact;
    json eqs = json::array();
    for (const auto& eq : result.support->equations) {
      eqs.push_back({{"true_positive", eq.true_positive},
                     {"false_positive", eq.false_positive},
                     {"false_negative", eq.false_negative}});
    }
    sup["equations"] = std::move(eqs);
    metrics["support_vs_truth"] = std::move(sup);
  }
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");

  std::ostringstream report;
  report << "recovered model\n" << model_summary(result.model);
  report << "reconstruction MSE: " << format_sig(result.reconstruction_mse)
         << "\n";
  report << "support size: " << support_size(result.model) << "\n";
  if (result.support)
    report << "support vs truth: "
           << (result.support->exact ? "exact" : "mismatch") << "\n";
  write_text(dir / "report.txt", report.str());

  write_manifest(dir / "manifest.json", "recover", common,
                 train_config_to_json(cfg),
                 json{{"dataset", dataset_path},
                      {"config", config_path},
                      {"truth", truth}},
                 {(dir / "model.json").string(), (dir / "params.bin").string(),
                  (dir / "params.txt").string(),
                  (dir / "loss_history.csv").string(),
                  (dir / "metrics.json").string(),
                  (dir / "report.txt").string()},
                 watch.seconds(), 0);
  std::cout << report.str();
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& dataset_path,
             const CommonOptions& common) {
  Stopwatch watch;
  const SparseODEModel<double> model = load_model(model_path);
  const TimeSeriesDataset dataset = load_csv(dataset_path);
  const EvalResult eval = evaluate(model, dataset);

  const fs::path dir(common.out_dir.empty() ? "." : common.out_dir);
  fs::create_directories(dir);
  json metrics;
  metrics["reconstruction_mse"] = eval.mse;
  metrics["support"] = support_to_json(eval.support);
  if (eval.diverged_at) metrics["eval_diverged_at"] = *eval.diverged_at;
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");

  std::ostringstream report;
  report << model_summary(model);
  report << "reconstruction MSE: " << format_sig(eval.mse) << "\n";
  write_text(dir / "report.txt", report.str());
  write_manifest(dir / "manifest.json", "eval", common, json::object(),
                 json{{"model", model_path}, {"dataset", dataset_path}},
                 {(dir / "metrics.json").string(), (dir / "report.txt").string()},
                 watch.seconds(), 0);
  std::cout << report.str();
  return 0;
}

int cmd_select(const std::string& table_path, double gamma, double eps_max,
               double time_max, double lambda, int degree, bool refine,
               double refine_lo, double refine_hi,
               const CommonOptions& common) {
  Stopwatch watch;
  const MeasurementTable table = table_path.empty() || table_path == "bundled"
                                     ? MeasurementTable::bundled()
                                     : MeasurementTable::load_csv(table_path);
  const Surrogates surrogates = fit_all_surrogates(table, degree, lambda);
  SelectionResult sel = enumerate_select(surrogates, gamma, eps_max, time_max);

  if (refine) {
    // Continuous refinement of the error budget with the discrete choice
    // fixed: refit the memory/power surrogates with the error column as an
    // extra feature and descend over it.
    FeatureDescriptor fd;
    fd.degree = 1;
    fd.include_error = true;
    fd.include_categoricals = false;
    const SurrogateModel p_eps = fit_surrogate(table, "energy", fd, lambda);
    const SurrogateModel m_eps = fit_surrogate(table, "dram", fd, lambda);
    DesignPoint pt{sel.platform, sel.task, sel.hi, sel.epochs, sel.seq_len, 0};
    auto objective = [&](double eps) {
      DesignPoint q = pt;
      q.error_budget = eps;
      return gamma * predict(p_eps, q) + (1.0 - gamma) * predict(m_eps, q);
    };
    sel.refined_eps = refine_continuous(objective, refine_lo, refine_hi);
  }

  const fs::path dir(common.out_dir.empty() ? "." : common.out_dir);
  fs::create_directories(dir);
  json doc;
  doc["platform"] = sel.platform;
  doc["task"] = sel.task;
  doc["hi"] = sel.hi;
  doc["epochs"] = sel.epochs;
  doc["seq_len"] = sel.seq_len;
  doc["predicted_error"] = sel.predicted_error;
  doc["predicted_time"] = sel.predicted_time;
  doc["P"] = sel.p;
  doc["M"] = sel.m;
  doc["objective"] = sel.objective;
  doc["feasible"] = sel.feasible;
  doc["candidates"] = sel.candidates;
  doc["gamma"] = gamma;
  doc["eps_max"] = eps_max;
  doc["time_max"] = time_max;
  if (sel.refined_eps) doc["refined_eps"] = *sel.refined_eps;
  write_text(dir / "selection.json", doc.dump(2) + "\n");

  std::ostringstream report;
  report << (sel.feasible ? "selected" : "infeasible; least-violating")
         << " configuration: platform=" << sel.platform << " task=" << sel.task
         << " hi=" << sel.hi << " e=" << sel.epochs << " N=" << sel.seq_len
         << "\n";
  report << "predicted error " << format_sig(sel.predicted_error) << ", time "
         << format_sig(sel.predicted_time) << " s, P "
         << format_sig(sel.p) << ", M " << format_sig(sel.m) << ", objective "
         << format_sig(sel.objective) << "\n";
  if (sel.refined_eps)
    report << "refined error budget: " << format_sig(*sel.refined_eps) << "\n";
  write_text(dir / "selection.txt", report.str());
  write_manifest(dir / "manifest.json", "select", common,
                 json{{"gamma", gamma},
                      {"eps_max", eps_max},
                      {"time_max", time_max},
                      {"lambda", lambda},
                      {"degree", degree}},
                 json{{"table", table_path}},
                 {(dir / "selection.json").string(),
                  (dir / "selection.txt").string()},
                 watch.seconds(), 0);
  std::cout << report.str();
  return 0;
}

int cmd_gradcheck(const std::string& config_path, const CommonOptions& common) {
  Stopwatch watch;
  json cfg = json::object();
  if (!config_path.empty()) cfg = load_json_file(config_path);
  const double delta = cfg.value("delta", 1e-5);
  const std::uint64_t seed = common.seed_set ? common.seed
                                             : cfg.value("seed", 1);

  json results = json::array();
  bool all_pass = true;
  std::ostringstream report;

  auto record = [&](const std::string& name, double err, double bound) {
    const bool pass = err <= bound;
    all_pass = all_pass && pass;
    results.push_back({{"check", name},
                       {"max_rel_error", err},
                       {"bound", bound},
                       {"pass", pass}});
    report << name << ": max rel error " << format_sig(err, 3) << " (bound "
           << format_sig(bound, 3) << ") " << (pass ? "PASS" : "FAIL") << "\n";
  };

  // Zero upstream gradient -> exactly zero parameter gradients.
  {
    auto params = init_params(2, 1, 4, 6, 1, 1e-3, seed);
    BatchTensor<double> batch;
    std::mt19937_64 rng(seed + 1);
    batch.steps.assign(5, Matrix<double>(3, 2));
    for (auto& step : batch.steps)
      for (Index i = 0; i < step.rows(); ++i)
        for (Index j = 0; j < step.cols(); ++j)
          step(i, j) = uniform_real(rng, -1, 1);
    NetTape<double> tape;
    gru_forward(params, batch, &tape);
    dense_forward<double>(params, tape.h_final, &tape);
    const auto grads = net_backward<double>(
        params, tape, Matrix<double>::Zero(12, 2), Matrix<double>::Zero(1, 2));
    double max_abs = 0;
    for_each_tensor(const_cast<NetGradients<double>&>(grads),
                    [&max_abs](const char*, auto& g) {
                      max_abs = std::max(max_abs,
                                         g.array().abs().maxCoeff());
                    });
    record("zero_upstream", max_abs, 0.0);
  }

  // Dense subgraph against finite differences.
  {
    auto params = init_params(2, 1, 4, 6, 1, 1e-3, seed);
    BatchTensor<double> batch;
    std::mt19937_64 rng(seed + 2);
    batch.steps.assign(3, Matrix<double>(3, 2));
    for (auto& step : batch.steps)
      for (Index i = 0; i < step.rows(); ++i)
        for (Index j = 0; j < step.cols(); ++j)
          step(i, j) = uniform_real(rng, -1, 1);
    WindowBatch<double> wb;
    wb.tensor = batch;
    PipelineConfig<double> pcfg;  // unused by dense mode
    pcfg.library = build_library(2, 1, 2);
    pcfg.whiten_map = Matrix<double>::Identity(6, 6);
    const auto rep = grad_check(params, wb, pcfg, GradCheckMode::dense_only, delta);
    record("dense_only", rep.max_rel_error, 1e-6);
  }

  // Single-timestep, V=2 GRU.
  {
    auto params = init_params(2, 1, 2, 6, 1, 1e-3, seed);
    BatchTensor<double> batch;
    std::mt19937_64 rng(seed + 3);
    batch.steps.assign(1, Matrix<double>(3, 1));
    for (Index i = 0; i < 3; ++i) batch.steps[0](i, 0) = uniform_real(rng, -1, 1);
    WindowBatch<double> wb;
    wb.tensor = batch;
    PipelineConfig<double> pcfg;
    pcfg.library = build_library(2, 1, 2);
    pcfg.whiten_map = Matrix<double>::Identity(6, 6);
    const auto rep = grad_check(params, wb, pcfg, GradCheckMode::net_only, delta);
    record("single_cell_gru", rep.max_rel_error, 1e-5);
  }

  // Full pipeline on Lotka-Volterra windows, V=8, k=20.
  {
    BenchmarkSpec spec;
    spec.system = SystemId::lotka_volterra;
    const TimeSeriesDataset dataset = generate(spec);
    const DataScaling scaling = DataScaling::fit(dataset);
    const TimeSeriesDataset norm = scaling.apply(dataset);
    auto batches = make_batches(norm, 2, 20, seed);
    const TermLibrary lib = build_library(2, 1, 2);
    auto params = init_params(2, 1, 8, 6, 1, 1e-3, seed);
    PipelineConfig<double> pcfg;
    pcfg.library = lib;
    pcfg.sample_dt = 1.0;
    pcfg.tau = 1e-3;
    pcfg.whiten_map = Matrix<double>::Identity(6, 6);
    const auto rep =
        grad_check(params, batches.front(), pcfg, GradCheckMode::full_pipeline, delta);
    record("pipeline_lv_v8_k20", rep.max_rel_error, 1e-4);
  }

  const fs::path dir(common.out_dir.empty() ? "." : common.out_dir);
  fs::create_directories(dir);
  json doc;
  doc["delta"] = delta;
  doc["seed"] = seed;
  doc["checks"] = std::move(results);
  doc["pass"] = all_pass;
  write_text(dir / "gradcheck.json", doc.dump(2) + "\n");
  write_text(dir / "gradcheck.txt", report.str());
  write_manifest(dir / "manifest.json", "gradcheck", common,
                 json{{"delta", delta}, {"seed", seed}},
                 json{{"config", config_path}},
                 {(dir / "gradcheck.json").string(),
                  (dir / "gradcheck.txt").string()},
                 watch.seconds(), all_pass ? 0 : 1);
  std::cout << report.str();
  return all_pass ? 0 : 1;
}

}  // namespace flowrec::cli
