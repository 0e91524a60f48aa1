#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "flowrec/benchmarks.hpp"
#include "flowrec/trainer.hpp"

namespace flowrec {

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("parse error in " + path + ": " + e.what());
  }
  return doc;
}

inline TrainConfig train_config_from_json(const nlohmann::json& doc) {
  TrainConfig cfg;
  cfg.epochs = doc.value("epochs", cfg.epochs);
  cfg.batch_size = doc.value("batch_size", cfg.batch_size);
  cfg.window = doc.value("window", cfg.window);
  cfg.window_stride = doc.value("window_stride", cfg.window_stride);
  cfg.hidden = doc.value("hidden", cfg.hidden);
  cfg.order = doc.value("order", cfg.order);
  cfg.include_constant = doc.value("include_constant", cfg.include_constant);
  cfg.threshold = doc.value("threshold", cfg.threshold);
  cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
  cfg.adam_beta1 = doc.value("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = doc.value("adam_beta2", cfg.adam_beta2);
  cfg.adam_eps = doc.value("adam_eps", cfg.adam_eps);
  cfg.grad_clip = doc.value("grad_clip", cfg.grad_clip);
  cfg.dt = doc.value("dt", cfg.dt);
  cfg.substeps = doc.value("substeps", cfg.substeps);
  cfg.seed = doc.value("seed", cfg.seed);
  cfg.divergence_cap = doc.value("divergence_cap", cfg.divergence_cap);
  cfg.mlp_hidden = doc.value("mlp_hidden", cfg.mlp_hidden);
  cfg.head_init_scale = doc.value("head_init_scale", cfg.head_init_scale);
  const std::string mode = doc.value("sparsify", std::string("threshold"));
  if (mode == "threshold") cfg.sparsify = TrainConfig::Sparsify::threshold;
  else if (mode == "top_k") cfg.sparsify = TrainConfig::Sparsify::top_k;
  else throw std::runtime_error("unknown sparsify mode: " + mode);
  cfg.top_k = doc.value("top_k", cfg.top_k);
  cfg.apply_input_shifts = doc.value("apply_input_shifts", cfg.apply_input_shifts);
  cfg.threads = doc.value("threads", cfg.threads);
  cfg.normalize = doc.value("normalize", cfg.normalize);
  cfg.whiten = doc.value("whiten", cfg.whiten);
  cfg.stage1_frac = doc.value("stage1_frac", cfg.stage1_frac);
  cfg.stage1_horizon = doc.value("stage1_horizon", cfg.stage1_horizon);
  cfg.stage1_lr_decay = doc.value("stage1_lr_decay", cfg.stage1_lr_decay);
  cfg.stage2_lr = doc.value("stage2_lr", cfg.stage2_lr);
  cfg.stage2_lr_decay = doc.value("stage2_lr_decay", cfg.stage2_lr_decay);
  cfg.warmup_epochs = doc.value("warmup_epochs", cfg.warmup_epochs);
  cfg.plateau_frac = doc.value("plateau_frac", cfg.plateau_frac);
  cfg.prune_frac = doc.value("prune_frac", cfg.prune_frac);
  cfg.prune = doc.value("prune", cfg.prune);
  return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json doc;
  doc["epochs"] = cfg.epochs;
  doc["batch_size"] = cfg.batch_size;
  doc["window"] = cfg.window;
  doc["window_stride"] = cfg.window_stride;
  doc["hidden"] = cfg.hidden;
  doc["order"] = cfg.order;
  doc["include_constant"] = cfg.include_constant;
  doc["threshold"] = cfg.threshold;
  doc["learning_rate"] = cfg.learning_rate;
  doc["adam_beta1"] = cfg.adam_beta1;
  doc["adam_beta2"] = cfg.adam_beta2;
  doc["adam_eps"] = cfg.adam_eps;
  doc["grad_clip"] = cfg.grad_clip;
  doc["dt"] = cfg.dt;
  doc["substeps"] = cfg.substeps;
  doc["seed"] = cfg.seed;
  doc["divergence_cap"] = cfg.divergence_cap;
  doc["mlp_hidden"] = cfg.mlp_hidden;
  doc["head_init_scale"] = cfg.head_init_scale;
  doc["sparsify"] =
      cfg.sparsify == TrainConfig::Sparsify::threshold ? "threshold" : "top_k";
  doc["top_k"] = cfg.top_k;
  doc["apply_input_shifts"] = cfg.apply_input_shifts;
  doc["threads"] = cfg.threads;
  doc["normalize"] = cfg.normalize;
  doc["whiten"] = cfg.whiten;
  doc["stage1_frac"] = cfg.stage1_frac;
  doc["stage1_horizon"] = cfg.stage1_horizon;
  doc["stage1_lr_decay"] = cfg.stage1_lr_decay;
  doc["stage2_lr"] = cfg.stage2_lr;
  doc["stage2_lr_decay"] = cfg.stage2_lr_decay;
  doc["warmup_epochs"] = cfg.warmup_epochs;
  doc["plateau_frac"] = cfg.plateau_frac;
  doc["prune_frac"] = cfg.prune_frac;
  doc["prune"] = cfg.prune;
  return doc;
}

inline InputSignal input_signal_from_json(const nlohmann::json& doc) {
  InputSignal sig;
  const std::string type = doc.value("type", std::string("none"));
  if (type == "none") sig.type = InputSignal::Type::none;
  else if (type == "constant") sig.type = InputSignal::Type::constant;
  else if (type == "step") sig.type = InputSignal::Type::step;
  else if (type == "sine") sig.type = InputSignal::Type::sine;
  else throw std::runtime_error("unknown input signal type: " + type);
  sig.value = doc.value("value", 0.0);
  sig.before = doc.value("before", 0.0);
  sig.after = doc.value("after", 0.0);
  sig.t_step = doc.value("t_step", 0.0);
  sig.amplitude = doc.value("amplitude", 0.0);
  sig.frequency = doc.value("frequency", 0.0);
  sig.phase = doc.value("phase", 0.0);
  sig.offset = doc.value("offset", 0.0);
  return sig;
}

inline BenchmarkSpec benchmark_spec_from_json(const nlohmann::json& doc) {
  BenchmarkSpec spec;
  spec.system = system_from_name(doc.at("system").get<std::string>());
  if (doc.contains("x0")) {
    const auto arr = doc.at("x0").get<std::vector<double>>();
    spec.x0.resize(static_cast<Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
      spec.x0[static_cast<Index>(i)] = arr[i];
  }
  if (doc.contains("input")) {
    spec.input = input_signal_from_json(doc.at("input"));
    spec.input_set = true;
  }
  spec.duration = doc.value("duration", spec.duration);
  spec.rate = doc.value("rate", spec.rate);
  spec.noise = doc.value("noise", spec.noise);
  spec.seed = doc.value("seed", spec.seed);
  spec.substeps = doc.value("substeps", spec.substeps);
  return spec;
}

}  // namespace flowrec
