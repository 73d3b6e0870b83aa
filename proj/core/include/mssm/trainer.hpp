#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mssm/config.hpp"
#include "mssm/model.hpp"
#include "mssm/tasks.hpp"

namespace mssm {

/// One CSV row. Loss rows leave split_length and the accuracies empty;
/// eval rows carry the most recent training loss.
struct MetricRow {
  int step = 0;  // optimizer updates completed when the value was measured
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::optional<int> split_length;
  double loss = 0.0;
  std::optional<double> token_acc;
  std::optional<double> string_acc;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,lr,seed,split_length,loss,token_acc,string_acc,wall_ms";

struct EvalPoint {
  int step = 0;
  int length = 0;
  Score score;
};

struct RunMetrics {
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<double> losses;  // one per step
  std::vector<EvalPoint> evals;
  std::vector<MetricRow> rows;
  bool diverged = false;
  int diverged_step = -1;
  double wall_ms = 0.0;
  int best_step = -1;

  /// Score of the last evaluation at `length`; zero if the run diverged
  /// before finishing or never evaluated that length.
  Score final_score(int length, int steps) const;
};

std::string format_row(const MetricRow& row);
void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows, bool header = true);
std::vector<MetricRow> read_metrics_csv(std::istream& in);

/// Fixed evaluation set for one length: sample i uses
/// Rng(seed).substream("eval").substream(length).substream(i).
std::vector<TaskSample> make_eval_set(const TaskSpec& task, int length, int train_length, int n_samples,
                                      std::uint64_t seed);

/// Source of greedy next-token predictions for a batch of sequences fed one
/// token at a time.
class StepPredictor {
 public:
  virtual ~StepPredictor() = default;
  /// Feeds one token per sequence; returns the argmax next token of each.
  virtual std::vector<int> step(std::span<const int> tokens) = 0;
};

/// Free-running greedy decode: masked positions receive the model's own
/// previous prediction, other positions (prompts, MQAR query keys) the given
/// token. A sequence stops at its first predicted stop token and any
/// remaining masked positions count as wrong (-1).
std::vector<std::vector<int>> free_run(StepPredictor& predictor, const std::vector<TaskSample>& samples);

/// Mean token accuracy and mean string accuracy over samples.
Score aggregate(const std::vector<std::vector<int>>& preds, const std::vector<TaskSample>& samples);

template <typename T>
Score evaluate(const Model<T>& model, const std::vector<TaskSample>& samples);

template <typename T>
Score evaluate(const Model<T>& model, const TaskSpec& task, int length, int train_length, int n_samples,
               std::uint64_t seed);

struct RunOptions {
  std::string out_dir;          // empty: no files are written
  std::ostream* log = nullptr;  // progress lines
};

/// One training run at a fixed learning rate and seed. The model is
/// initialized with apply_init(config.init, model, seed); batch b of step s
/// draws sample i from Rng(seed).substream("train").substream(s).substream(i).
template <typename T>
RunMetrics train(const TrainConfig& config, double lr, std::uint64_t seed, const RunOptions& options = {},
                 Model<T>* trained = nullptr);

struct LengthStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single seed
};

struct LrSummary {
  double lr = 0.0;
  std::map<int, LengthStats> string_acc;
  std::map<int, LengthStats> token_acc;
  int diverged = 0;
};

struct SweepSummary {
  std::vector<LrSummary> per_lr;
  double best_lr = 0.0;

  const LrSummary& best() const;
  nlohmann::json to_json() const;
};

/// Best LR = highest mean final string accuracy at the training length;
/// ties go to the smaller LR.
SweepSummary summarize(const TrainConfig& config, const std::vector<RunMetrics>& runs);

struct SweepResult {
  std::vector<RunMetrics> runs;
  SweepSummary summary;
  std::string run_dir;  // out_dir/runs/<hash>, empty when nothing was written
};

/// All lrs x seeds. With an output directory, writes
///   runs/<hash>/config.copy, metrics.csv, summary.json, checkpoint.bin, maps/
///   runs/<hash>/lr<lr>_seed<seed>/{metrics.csv, checkpoint.bin, checkpoint_best.bin}
/// where the top-level checkpoint is the final model of the best LR's first seed.
template <typename T>
SweepResult sweep(const TrainConfig& config, const RunOptions& options = {});

}  // namespace mssm
