#include "mssm/config.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "mssm/error.hpp"
#include "mssm/rng.hpp"

namespace mssm {

std::vector<int> TrainConfig::resolved_eval_lengths() const {
  if (!eval_lengths.empty()) return eval_lengths;
  return {train_length, 2 * train_length, 4 * train_length};
}

void TrainConfig::validate() const {
  model.validate();
  if (task.vocab < 2) throw ConfigError("task.vocab", "must be at least 2");
  if (model.vocab_size != task.vocab + 2) {
    throw ConfigError("model.vocab_size", "must equal task.vocab + 2 = " + std::to_string(task.vocab + 2));
  }
  if (task.num_queries < 0) throw ConfigError("task.num_queries", "must be non-negative");
  if (task.kind == TaskKind::mqar && task.num_queries > train_length) {
    throw ConfigError("task.num_queries", "cannot exceed the number of pairs (train_length)");
  }
  task.check_length(train_length, "train_length");
  if (min_train_length < 0 || min_train_length > train_length) {
    throw ConfigError("min_train_length", "must lie in [0, train_length]");
  }
  if (min_train_length > 0) task.check_length(min_train_length, "min_train_length");
  for (int len : resolved_eval_lengths()) task.check_length(len, "eval_lengths");
  if (steps < 1) throw ConfigError("steps", "must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
  if (lrs.empty()) throw ConfigError("lrs", "must list at least one learning rate");
  for (double lr : lrs)
    if (!(lr > 0.0)) throw ConfigError("lrs", "learning rates must be positive");
  if (seeds.empty()) throw ConfigError("seeds", "must list at least one seed");
  if (eval_every < 0) throw ConfigError("eval_every", "must be non-negative");
  if (eval_samples < 1) throw ConfigError("eval_samples", "must be at least 1");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip", "must be positive");
  if (init.conv_identity && model.conv_width == 0) {
    throw ConfigError("init.conv_identity", "requested for a model with conv_width = 0");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["version"] = kConfigVersion;
  j["model"] = model.to_json();
  j["init"] = init.to_json();
  j["task"] = {{"kind", to_string(task.kind)}, {"vocab", task.vocab}, {"num_queries", task.num_queries}};
  j["train_length"] = train_length;
  j["min_train_length"] = min_train_length;
  j["eval_lengths"] = resolved_eval_lengths();
  j["steps"] = steps;
  j["batch_size"] = batch_size;
  j["lrs"] = lrs;
  j["seeds"] = seeds;
  j["eval_every"] = eval_every;
  j["eval_samples"] = eval_samples;
  j["eval_seed"] = eval_seed;
  j["grad_clip"] = grad_clip ? nlohmann::json(*grad_clip) : nlohmann::json(nullptr);
  j["log_wall_time"] = log_wall_time;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  using detail::optional_or;
  using detail::required;
  if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
  const int version = optional_or<int>(j, "", "version", kConfigVersion);
  if (version != kConfigVersion) {
    throw ConfigError("version", "unsupported config version " + std::to_string(version) + " (expected " +
                                     std::to_string(kConfigVersion) + ")");
  }
  TrainConfig c;
  const auto& task = detail::require_key(j, "", "task");
  c.task.kind = task_from_string(required<std::string>(task, "task", "kind"));
  c.task.vocab = c.task.kind == TaskKind::sort ? optional_or<int>(task, "task", "vocab", 512)
                                               : required<int>(task, "task", "vocab");
  c.task.num_queries = optional_or<int>(task, "task", "num_queries", 0);

  c.model = ModelConfig::from_json(detail::require_key(j, "", "model"), "model");
  if (c.model.vocab_size == 0) c.model.vocab_size = c.task.vocab + 2;
  if (j.contains("init") && !j["init"].is_null()) c.init = InitFlags::from_json(j["init"], "init");

  c.train_length = required<int>(j, "", "train_length");
  c.min_train_length = optional_or<int>(j, "", "min_train_length", c.min_train_length);
  c.eval_lengths = optional_or<std::vector<int>>(j, "", "eval_lengths", {});
  c.steps = required<int>(j, "", "steps");
  c.batch_size = optional_or<int>(j, "", "batch_size", c.batch_size);
  c.lrs = optional_or<std::vector<double>>(j, "", "lrs", c.lrs);
  c.seeds = optional_or<std::vector<std::uint64_t>>(j, "", "seeds", c.seeds);
  c.eval_every = optional_or<int>(j, "", "eval_every", c.eval_every);
  c.eval_samples = optional_or<int>(j, "", "eval_samples", c.eval_samples);
  c.eval_seed = optional_or<std::uint64_t>(j, "", "eval_seed", c.eval_seed);
  if (j.contains("grad_clip") && !j["grad_clip"].is_null()) c.grad_clip = required<double>(j, "", "grad_clip");
  c.log_wall_time = optional_or<bool>(j, "", "log_wall_time", c.log_wall_time);
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return from_json(j);
}

std::string TrainConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(Rng::fnv1a64(to_json().dump())));
  return buf;
}

}  // namespace mssm
