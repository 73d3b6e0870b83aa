#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mssm/init.hpp"
#include "mssm/model.hpp"
#include "mssm/tasks.hpp"

// Training configuration, stored as JSON:
//
//   {
//     "version": 1,
//     "model": { "variant": "mamba2", "n_layers": 2, "d_model": 128, ... },
//     "init":  { "preset": "mimetic-mamba2" } or explicit flags,
//     "task":  { "kind": "copy", "vocab": 16, "num_queries": 0 },
//     "train_length": 20, "min_train_length": 0, "eval_lengths": [20, 40, 80],
//     "steps": 2000, "batch_size": 32, "lrs": [1e-3], "seeds": [0],
//     "eval_every": 500, "eval_samples": 256, "eval_seed": 1000003,
//     "grad_clip": null, "log_wall_time": false
//   }
//
// model.vocab_size may be omitted; it is derived as task.vocab + 2.
namespace mssm {

inline constexpr int kConfigVersion = 1;

struct TrainConfig {
  ModelConfig model;
  InitFlags init;
  TaskSpec task;
  int train_length = 20;
  /// When in [1, train_length), each step draws its string length uniformly
  /// from [min_train_length, train_length]. 0 = always train_length.
  int min_train_length = 0;
  std::vector<int> eval_lengths;  // empty = {L, 2L, 4L}
  int steps = 1000;
  int batch_size = 32;
  std::vector<double> lrs{1e-3};
  std::vector<std::uint64_t> seeds{0};
  int eval_every = 0;  // 0 = evaluate only after the last step
  int eval_samples = 256;
  std::uint64_t eval_seed = 1000003;
  std::optional<double> grad_clip;
  bool log_wall_time = false;

  /// Eval lengths with the default applied.
  std::vector<int> resolved_eval_lengths() const;
  void validate() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::string& path);
  /// 16 hex digits of FNV-1a over the canonical JSON form.
  std::string hash() const;
};

}  // namespace mssm
