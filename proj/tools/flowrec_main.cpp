#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowrec/cli.hpp"
#include "flowrec/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"sparse ODE model recovery with a GRU neural flow and an "
               "in-loop Runge-Kutta solver"};
  app.set_version_flag("--version", flowrec::kVersion);
  app.require_subcommand(1);

  flowrec::cli::CommonOptions common;
  common.argv.assign(argv, argv + argc);

  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_option("--seed", common.seed, "seed override")
        ->each([&common](const std::string&) { common.seed_set = true; });
    sub->add_option("--threads", common.threads, "worker threads")
        ->each([&common](const std::string&) { common.threads_set = true; });
  };

  // generate
  std::string spec_path, gen_out = "dataset.csv";
  auto* gen = app.add_subcommand("generate", "generate a benchmark dataset");
  gen->add_option("spec", spec_path, "benchmark spec (JSON)")->required();
  gen->add_option("--out-file", gen_out, "output CSV path");
  add_common(gen);

  // recover
  std::string dataset_path, config_path, truth;
  auto* rec = app.add_subcommand("recover", "recover a sparse ODE model");
  rec->add_option("dataset", dataset_path, "dataset CSV")->required();
  rec->add_option("--config", config_path, "training config (JSON)");
  rec->add_option("--truth", truth,
                  "ground-truth model (system name or model JSON path)");
  add_common(rec);

  // eval
  std::string model_path, eval_dataset;
  auto* ev = app.add_subcommand("eval", "evaluate a model against a dataset");
  ev->add_option("model", model_path, "model JSON")->required();
  ev->add_option("dataset", eval_dataset, "dataset CSV")->required();
  add_common(ev);

  // select
  std::string table_path = "bundled";
  double gamma = 0.5, eps_max = 1e30, time_max = 1e30, lambda = 1.0;
  int degree = 3;
  bool refine = false;
  double refine_lo = 0.0, refine_hi = 20.0;
  auto* sel = app.add_subcommand("select", "pick platform/task/hyperparameters");
  sel->add_option("--table", table_path, "measurement CSV ('bundled' for the built-in table)");
  sel->add_option("--gamma", gamma, "objective weight gamma in [0,1]")
      ->check(CLI::Range(0.0, 1.0));
  sel->add_option("--eps-max", eps_max, "error constraint");
  sel->add_option("--time-max", time_max, "time constraint (s)");
  sel->add_option("--lambda", lambda, "ridge strength");
  sel->add_option("--degree", degree, "surrogate polynomial degree");
  sel->add_flag("--refine", refine, "refine the continuous error budget");
  sel->add_option("--refine-lo", refine_lo, "lower bound for refinement");
  sel->add_option("--refine-hi", refine_hi, "upper bound for refinement");
  add_common(sel);

  // gradcheck
  std::string gc_config;
  auto* gc = app.add_subcommand("gradcheck", "verify analytic gradients");
  gc->add_option("--config", gc_config, "gradcheck config (JSON)");
  add_common(gc);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return flowrec::cli::cmd_generate(spec_path, gen_out, common);
    if (rec->parsed())
      return flowrec::cli::cmd_recover(dataset_path, config_path, truth, common);
    if (ev->parsed())
      return flowrec::cli::cmd_eval(model_path, eval_dataset, common);
    if (sel->parsed())
      return flowrec::cli::cmd_select(table_path, gamma, eps_max, time_max,
                                      lambda, degree, refine, refine_lo,
                                      refine_hi, common);
    if (gc->parsed()) return flowrec::cli::cmd_gradcheck(gc_config, common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
