// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "flowrec/benchmarks.hpp"
#include "flowrec/cli.hpp"
#include "flowrec/grad_check.hpp"
#include "flowrec/model_io.hpp"
#include "flowrec/random.hpp"
#include "flowrec/selector.hpp"
#include "flowrec/trainer.hpp"

using namespace flowrec;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass,
            const std::string& detail) {
  std::printf("[%d] %-28s %s  (%s)\n", id, name.c_str(),
              pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string describe_support(const SupportReport& report) {
  std::ostringstream out;
  for (std::size_t i = 0; i < report.equations.size(); ++i) {
    const auto& eq = report.equations[i];
    out << "eq" << (i + 1) << " fp={";
    for (const auto& t : eq.false_positive) out << t << " ";
    out << "} fn={";
    for (const auto& t : eq.false_negative) out << t << " ";
    out << "} ";
  }
  return out.str();
}

TrainConfig lv_acceptance_config() {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.hidden = 16;
  cfg.threshold = 1e-3;
  cfg.window = 50;
  cfg.batch_size = 2;
  cfg.window_stride = 5;
  cfg.substeps = 2;
  cfg.seed = 1;
  return cfg;
}

TrainConfig lorenz_acceptance_config() {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.hidden = 16;
  cfg.threshold = 0.05;
  cfg.window = 50;
  cfg.batch_size = 2;
  cfg.window_stride = 0;  // non-overlapping: 80 windows
  cfg.substeps = 4;
  cfg.seed = 1;
  return cfg;
}

// 1. Lotka-Volterra recovery: exact support and reconstruction MSE <= 0.1.
void criterion_lv_recovery() {
  BenchmarkSpec spec;
  spec.system = SystemId::lotka_volterra;
  const auto dataset = generate(spec);
  const auto truth = ground_truth_model(SystemId::lotka_volterra);
  const auto result = train(dataset, lv_acceptance_config(), truth);
  const bool support_ok = result.support && result.support->exact;
  const bool mse_ok = result.reconstruction_mse <= 0.1;
  std::ostringstream detail;
  detail << "mse=" << result.reconstruction_mse << " "
         << (support_ok ? "support exact" : describe_support(*result.support))
         << " wall=" << static_cast<int>(result.wall_seconds) << "s";
  report(1, "lotka-volterra recovery", support_ok && mse_ok, detail.str());
}

// 2. Lorenz recovery: all seven true terms, at most two spurious, 2 s MSE <= 5.
void criterion_lorenz_recovery() {
  BenchmarkSpec spec;
  spec.system = SystemId::lorenz;
  const auto dataset = generate(spec);
  const auto truth = ground_truth_model(SystemId::lorenz);
  const auto result = train(dataset, lorenz_acceptance_config(), truth);

  int missing = 0, spurious = 0;
  if (result.support) {
    for (const auto& eq : result.support->equations) {
      missing += static_cast<int>(eq.false_negative.size());
      spurious += static_cast<int>(eq.false_positive.size());
    }
  }
  // Short-horizon reconstruction: first 2 s (40 samples at 20 Hz).
  TimeSeriesDataset head;
  const Index rows = 41;
  head.times = dataset.times.head(rows);
  head.states = dataset.states.topRows(rows);
  head.inputs = dataset.inputs.topRows(rows);
  const auto eval = evaluate(result.model, head);
  const bool ok = missing == 0 && spurious <= 2 && eval.mse <= 5.0;
  std::ostringstream detail;
  detail << "missing=" << missing << " spurious=" << spurious
         << " mse2s=" << eval.mse << " wall="
         << static_cast<int>(result.wall_seconds) << "s";
  report(2, "lorenz recovery", ok, detail.str());
}

// 3. End-to-end gradient exactness.
void criterion_gradients() {
  bool ok = true;
  std::ostringstream detail;
  {
    BenchmarkSpec spec;
    spec.system = SystemId::lotka_volterra;
    const auto dataset = generate(spec);
    const DataScaling scaling = DataScaling::fit(dataset);
    const auto norm = scaling.apply(dataset);
    auto batches = make_batches(norm, 2, 20, 1);
    auto params = init_params(2, 1, 8, 6, 1, 1e-3, 1);
    PipelineConfig<double> cfg;
    cfg.library = build_library(2, 1, 2);
    cfg.sample_dt = 1.0;
    cfg.tau = 1e-3;
    cfg.whiten_map = Matrix<double>::Identity(6, 6);
    const auto rep = grad_check(params, batches.front(), cfg,
                                GradCheckMode::full_pipeline, 1e-5);
    ok = ok && rep.max_rel_error <= 1e-4;
    detail << "pipeline_v8_k20=" << rep.max_rel_error;
  }
  {
    auto params = init_params(2, 1, 2, 6, 1, 1e-3, 5);
    WindowBatch<double> wb;
    std::mt19937_64 rng(31);
    wb.tensor.steps.assign(1, Matrix<double>(3, 1));
    for (Index i = 0; i < 3; ++i)
      wb.tensor.steps[0](i, 0) = uniform_real(rng, -1, 1);
    PipelineConfig<double> cfg;
    cfg.library = build_library(2, 1, 2);
    cfg.whiten_map = Matrix<double>::Identity(6, 6);
    const auto rep =
        grad_check(params, wb, cfg, GradCheckMode::net_only, 1e-5);
    ok = ok && rep.max_rel_error <= 1e-5;
    detail << " single_cell=" << rep.max_rel_error;
  }
  report(3, "gradient exactness", ok, detail.str());
}

// 4. Solver order: halving ratio in [12, 20]; the single-step value is
// asserted exactly as stated.
void criterion_solver_order() {
  TermLibrary lib = build_library(1, 0, 1);
  Matrix<double> theta(1, 1);
  theta << -1.0;
  SparseODEModel<double> model(lib, theta, 0.0);
  Vector<double> x0(1);
  x0 << 1.0;

  auto max_err = [&](double dt, Index steps) {
    Matrix<double> u(steps + 1, 0);
    const auto r = solve<double>(model, x0, u, dt, steps);
    double worst = 0;
    for (Index i = 0; i <= steps; ++i)
      worst = std::max(worst, std::abs(r.trajectory.states(i, 0) -
                                       std::exp(-r.trajectory.times[i])));
    return worst;
  };
  const double ratio = max_err(0.2, 10) / max_err(0.1, 20);
  const bool ratio_ok = ratio >= 12.0 && ratio <= 20.0;

  Vector<double> u0;
  const double step = rk4_step<double>(model, x0, u0, 0.1)[0];
  // As stated, the expected single-step constant is 0.90483741666 +- 1e-10.
  // Classical RK4 gives 1 - h + h^2/2 - h^3/6 + h^4/24 = 0.9048375 exactly
  // (the module-level derivation); the stated constant equals the degree-5
  // Taylor polynomial of e^-h instead, so this sub-check cannot pass with a
  // 4-stage solver. It is asserted as written rather than loosened.
  const double stated = 0.90483741666;
  const bool value_ok = std::abs(step - stated) <= 1e-10;
  std::ostringstream detail;
  detail << "ratio=" << ratio << " step=" << std::setprecision(12) << step
         << " stated=" << stated << (value_ok ? "" : " [spec-internal conflict:"
                                                     " classical RK4 tableau"
                                                     " yields 0.9048375]");
  report(4, "solver order", ratio_ok && value_ok, detail.str());
}

// 5. Dropout worked example plus idempotence/monotonicity on 1000 vectors.
void criterion_dropout() {
  Vector<double> raw(13);
  raw << 0.0006, 0.55, 0.06, 0.0003, 0.005, -0.09, 0.8, 0.003, -0.7, 0.04,
      0.06, 0.00005, 0.008;
  Vector<double> expected(13);
  expected << 0, 0.55, 0.06, 0, 0.005, -0.09, 0.8, 0.003, -0.7, 0.04, 0.06, 0,
      0.008;
  bool ok = threshold_dropout<double>(raw, 0.001) == expected;

  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    Vector<double> v(12);
    for (Index i = 0; i < 12; ++i) v[i] = uniform_real(rng, -0.02, 0.02);
    const double t1 = uniform_real(rng, 0.0, 0.01);
    const double t2 = t1 + uniform_real(rng, 0.0, 0.01);
    const Vector<double> once = threshold_dropout<double>(v, t1);
    ok = ok && threshold_dropout<double>(once, t1) == once;
    const Vector<double> tight = threshold_dropout<double>(v, t2);
    for (Index i = 0; i < 12; ++i)
      if (tight[i] != 0.0 && once[i] == 0.0) ok = false;
  }
  report(5, "dropout worked example", ok, "bit-exact + 1000 random vectors");
}

// 6. Ridge against the normal-equation oracle and the published DRAM line.
void criterion_ridge() {
  std::mt19937_64 rng(7);
  bool ok = true;
  double worst = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 2 + static_cast<Index>(uniform_below(rng, 49));
    const Index rows = n + 5 + static_cast<Index>(uniform_below(rng, 40));
    Matrix<double> A(rows, n);
    Vector<double> y(rows);
    for (Index i = 0; i < rows; ++i) {
      A(i, 0) = 1.0;
      for (Index j = 1; j < n; ++j) A(i, j) = uniform_real(rng, -3, 3);
      y[i] = uniform_real(rng, -5, 5);
    }
    const double lambda = trial % 3 == 0 ? 0.0 : uniform_real(rng, 0, 2);
    const Vector<double> w = ridge_fit(A, y, lambda);
    Matrix<double> ata = A.transpose() * A;
    for (Index j = 1; j < n; ++j) ata(j, j) += lambda;
    const Vector<double> oracle = ata.fullPivLu().solve(A.transpose() * y);
    const double rel = (w - oracle).norm() / std::max(1.0, oracle.norm());
    worst = std::max(worst, rel);
    ok = ok && rel <= 1e-8;
  }

  FeatureDescriptor fd;
  fd.degree = 1;
  fd.include_error = true;
  fd.include_categoricals = false;
  MeasurementTable table;
  for (int e : {16, 64, 128})
    for (int N : {50, 100, 200})
      for (int hi : {16, 32, 64})
        for (double eps : {2.0, 5.0, 9.0}) {
          MeasurementRow r;
          r.hi = hi;
          r.epochs = e;
          r.seq_len = N;
          r.error = eps;
          r.dram_mb = 4.7316 * e - 194.3639 * N + 39.4598 * hi - 2.4789 * eps +
                      503.8408;
          table.rows.push_back(r);
        }
  const SurrogateModel m = fit_surrogate(table, "dram", fd, 1e-8);
  const Vector<double> expect =
      (Vector<double>(5) << 503.8408, 39.4598, 4.7316, -194.3639, -2.4789)
          .finished();
  const double coeff_err = (m.coefficients - expect).cwiseAbs().maxCoeff();
  ok = ok && coeff_err <= 1e-6;
  std::ostringstream detail;
  detail << "oracle_rel=" << worst << " dram_coeff_err=" << coeff_err;
  report(6, "ridge oracle", ok, detail.str());
}

// 7. Selector correctness: brute-force agreement, 288 candidates, argmin
// invariants, and the qualitative platform conclusions.
void criterion_selector() {
  bool ok = true;
  std::ostringstream detail;

  std::mt19937_64 rng(31);
  FeatureDescriptor fd;
  fd.degree = 1;
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Surrogates s;
    for (auto* m : {&s.error, &s.time, &s.power, &s.memory}) {
      m->features = fd;
      m->coefficients = Vector<double>(fd.feature_count());
      for (Index i = 0; i < m->coefficients.size(); ++i)
        m->coefficients[i] = uniform_real(rng, -1, 1);
    }
    const double gamma = uniform_real(rng, 0, 1);
    const double eps_max = uniform_real(rng, -50, 200);
    const double time_max = uniform_real(rng, -50, 200);
    const auto mine = enumerate_select(s, gamma, eps_max, time_max);

    // brute force with reversed loop order
    bool found = false;
    double best_obj = 0, best_err = 0, best_time = 0;
    int ba = 0, bh = 0, bhi = 0, be = 0, bn = 0;
    for (auto N = kSeqLengths.rbegin(); N != kSeqLengths.rend(); ++N)
      for (auto e = kEpochChoices.rbegin(); e != kEpochChoices.rend(); ++e)
        for (auto hi = kHiddenSizes.rbegin(); hi != kHiddenSizes.rend(); ++hi)
          for (auto h = kTasks.rbegin(); h != kTasks.rend(); ++h)
            for (auto a = kPlatforms.rbegin(); a != kPlatforms.rend(); ++a) {
              DesignPoint p{*a, *h, *hi, *e, *N, 0};
              const double err = predict(s.error, p);
              const double t = predict(s.time, p);
              if (!(err < eps_max && t < time_max)) continue;
              const double obj = gamma * predict(s.power, p) +
                                 (1 - gamma) * predict(s.memory, p);
              const auto key = std::make_tuple(obj, err, t, *a, *h, *hi, *e, *N);
              if (!found ||
                  key < std::make_tuple(best_obj, best_err, best_time, ba, bh,
                                        bhi, be, bn)) {
                found = true;
                best_obj = obj;
                best_err = err;
                best_time = t;
                ba = *a;
                bh = *h;
                bhi = *hi;
                be = *e;
                bn = *N;
              }
            }
    if (mine.feasible == found &&
        (!found || (mine.platform == ba && mine.task == bh && mine.hi == bhi &&
                    mine.epochs == be && mine.seq_len == bn)))
      ++agree;
  }
  ok = ok && agree == 100;
  detail << "brute_agree=" << agree << "/100";

  const auto s = fit_all_surrogates(MeasurementTable::bundled());
  const auto any = enumerate_select(s, 0.5, 1e30, 1e30);
  ok = ok && any.candidates == 288;

  const auto sel_p = enumerate_select(s, 1.0, 1e30, 1e30);
  const auto sel_m = enumerate_select(s, 0.0, 1e30, 1e30);
  bool argmin_ok = true;
  double min_err = std::numeric_limits<double>::infinity();
  int err_a = -1, err_h = -1;
  for (int a : kPlatforms)
    for (int h : kTasks)
      for (int hi : kHiddenSizes)
        for (int e : kEpochChoices)
          for (int N : kSeqLengths) {
            DesignPoint p{a, h, hi, e, N, 0};
            argmin_ok = argmin_ok && sel_p.p <= predict(s.power, p) + 1e-9 &&
                        sel_m.m <= predict(s.memory, p) + 1e-9;
            const double err = predict(s.error, p);
            if (err < min_err) {
              min_err = err;
              err_a = a;
              err_h = h;
            }
          }
  ok = ok && argmin_ok;
  ok = ok && sel_p.platform == 0;
  ok = ok && err_a == 1 && err_h == 2;
  detail << " candidates=" << any.candidates << " energy_platform="
         << sel_p.platform << " min_error=(" << err_a << "," << err_h << ")";
  report(7, "selector correctness", ok, detail.str());
}

// 8. Determinism: re-running a command from its manifest reproduces the
// machine-readable outputs byte-for-byte.
void criterion_determinism() {
  const fs::path base = fs::temp_directory_path() / "flowrec_acceptance_rerun";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path spec = base / "lv.json";
  {
    std::ofstream out(spec);
    out << R"({"system": "lotka_volterra", "noise": 0.02, "seed": 11})";
  }
  auto run = [&](const std::string& args) {
    const std::string cmd =
        std::string(FLOWREC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  bool ok = true;
  std::ostringstream detail;

  // generate, then re-run from the manifest argv
  const fs::path a_csv = base / "a" / "d.csv";
  fs::create_directories(a_csv.parent_path());
  ok = ok && run("generate " + spec.string() + " --out-file " +
                 a_csv.string()) == 0;
  nlohmann::json manifest;
  std::ifstream(a_csv.string() + ".manifest.json") >> manifest;
  std::vector<std::string> argv = manifest["argv"];
  const fs::path b_csv = base / "b" / "d.csv";
  fs::create_directories(b_csv.parent_path());
  std::string rerun;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    std::string arg = argv[i] == a_csv.string() ? b_csv.string() : argv[i];
    if (i > 1) rerun += " ";
    rerun += arg;
  }
  ok = ok && run(rerun) == 0;
  const bool gen_match = bytes(a_csv) == bytes(b_csv);
  ok = ok && gen_match;
  detail << "generate_rerun=" << (gen_match ? "identical" : "differs");

  // recover (small config), then re-run into a second directory
  {
    const fs::path cfg = base / "cfg.json";
    std::ofstream(cfg) << R"({"epochs": 4, "hidden": 4, "window": 20, "seed": 9})";
    const fs::path out1 = base / "r1";
    const fs::path out2 = base / "r2";
    ok = ok && run("recover " + a_csv.string() + " --config " + cfg.string() +
                   " --out " + out1.string()) == 0;
    ok = ok && run("recover " + a_csv.string() + " --config " + cfg.string() +
                   " --out " + out2.string()) == 0;
    for (const char* name :
         {"model.json", "metrics.json", "loss_history.csv", "params.bin"}) {
      const bool match = bytes(out1 / name) == bytes(out2 / name);
      ok = ok && match;
      if (!match) detail << " recover:" << name << "=differs";
    }
    detail << " recover_rerun=done";
  }
  report(8, "manifest determinism", ok, detail.str());
  fs::remove_all(base);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string only = argc > 1 ? argv[1] : "";
  auto want = [&](const char* id) { return only.empty() || only == id; };
  if (want("1")) criterion_lv_recovery();
  if (want("2")) criterion_lorenz_recovery();
  if (want("3")) criterion_gradients();
  if (want("4")) criterion_solver_order();
  if (want("5")) criterion_dropout();
  if (want("6")) criterion_ridge();
  if (want("7")) criterion_selector();
  if (want("8")) criterion_determinism();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
