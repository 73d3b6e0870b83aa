#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mssm/rng.hpp"

// Synthetic sequence tasks. Content tokens occupy [0, V); the delimiter is V
// and the stop token V + 1, so models use vocab_size = V + 2.
namespace mssm {

enum class TaskKind { copy, stack_copy, mqar, sort };

std::string to_string(TaskKind kind);
TaskKind task_from_string(const std::string& name);

struct VocabLayout {
  int content_size = 0;

  int delimiter() const { return content_size; }
  int stop() const { return content_size + 1; }
  int vocab_size() const { return content_size + 2; }
  // MQAR ranges
  int key_count() const { return content_size / 2; }
  int value_begin() const { return content_size / 2; }
};

struct TaskMeta {
  TaskKind task = TaskKind::copy;
  int length = 0;  // string length n, or number of pairs p for MQAR
  int vocab = 0;   // content size V
  std::uint64_t seed = 0;  // key of the stream that produced the sample
};

struct TaskSample {
  std::vector<int> tokens;
  std::vector<std::uint8_t> loss_mask;  // 1 on positions whose token is predicted
  TaskMeta meta;

  std::size_t masked_count() const;
  /// Index of the delimiter token.
  std::size_t delimiter_index() const;
};

TaskSample gen_copy(int n, int vocab, Rng& rng);
TaskSample gen_stack_copy(int n, int vocab, Rng& rng);
/// p key/value pairs followed by q queries drawn without replacement.
TaskSample gen_mqar(int num_pairs, int num_queries, int vocab, Rng& rng);
TaskSample gen_sort(int n, int vocab, Rng& rng);

/// Task description shared by the trainer and the CLI.
struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  int vocab = 16;
  int num_queries = 0;  // MQAR at the training length; 0 = ceil(p / 2)

  /// Query count used at `pairs` pairs when training used `train_pairs`.
  int queries_for(int pairs, int train_pairs) const;
  TaskSample generate(int length, int train_length, Rng& rng) const;
  /// Throws ConfigError when `length` is infeasible for this task.
  void check_length(int length, const std::string& field) const;
};

struct Score {
  double token_acc = 0.0;
  double string_acc = 0.0;
};

/// `pred` holds the predictions for the masked positions in order; missing
/// entries count as wrong.
Score score(const std::vector<int>& pred, const TaskSample& sample);

/// Targets at masked positions, in order.
std::vector<int> masked_targets(const TaskSample& sample);

/// One JSON object per line: {"task","length","vocab","seed","tokens","mask"}.
void write_jsonl(std::ostream& out, const TaskSample& sample);

}  // namespace mssm
