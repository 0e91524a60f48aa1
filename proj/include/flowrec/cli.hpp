#pragma once

#include <string>
#include <vector>

namespace flowrec::cli {

// Resolved invocation shared by every subcommand; argv is echoed into the
// run manifest so a run can be reproduced from it.
struct CommonOptions {
  std::vector<std::string> argv;
  std::string out_dir;
  std::uint64_t seed = 1;
  bool seed_set = false;
  int threads = 1;
  bool threads_set = false;
};

int cmd_generate(const std::string& spec_path, const std::string& out_path,
                 const CommonOptions& common);

int cmd_recover(const std::string& dataset_path, const std::string& config_path,
                const std::string& truth, const CommonOptions& common);

int cmd_eval(const std::string& model_path, const std::string& dataset_path,
             const CommonOptions& common);

int cmd_select(const std::string& table_path, double gamma, double eps_max,
               double time_max, double lambda, int degree, bool refine,
               double refine_lo, double refine_hi, const CommonOptions& common);

int cmd_gradcheck(const std::string& config_path, const CommonOptions& common);

}  // namespace flowrec::cli
