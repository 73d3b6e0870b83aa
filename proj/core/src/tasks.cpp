#include "mssm/tasks.hpp"

#include <algorithm>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mssm/error.hpp"

namespace mssm {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::stack_copy: return "stack_copy";
    case TaskKind::mqar: return "mqar";
    case TaskKind::sort: return "sort";
  }
  return "unknown";
}

TaskKind task_from_string(const std::string& name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "stack_copy" || name == "stack-copy") return TaskKind::stack_copy;
  if (name == "mqar") return TaskKind::mqar;
  if (name == "sort") return TaskKind::sort;
  throw ConfigError("task.kind", "unknown task '" + name + "' (copy, stack_copy, mqar, sort)");
}

std::size_t TaskSample::masked_count() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), std::uint8_t{1}));
}

std::size_t TaskSample::delimiter_index() const {
  auto it = std::find(tokens.begin(), tokens.end(), meta.vocab);
  if (it == tokens.end()) throw Error("sample has no delimiter");
  return static_cast<std::size_t>(it - tokens.begin());
}

namespace {

void check_basic(int n, int vocab, const char* task) {
  if (n < 1) throw Error(std::string(task) + ": length must be at least 1");
  if (vocab < 2) throw Error(std::string(task) + ": vocab must be at least 2");
}

// [source, delim, paste, stop] with the mask on paste and stop.
TaskSample paste_layout(TaskKind kind, const std::vector<int>& source, const std::vector<int>& paste, int vocab,
                        const Rng& rng) {
  const VocabLayout layout{vocab};
  TaskSample s;
  s.meta = {kind, static_cast<int>(source.size()), vocab, rng.key()};
  s.tokens = source;
  s.tokens.push_back(layout.delimiter());
  s.tokens.insert(s.tokens.end(), paste.begin(), paste.end());
  s.tokens.push_back(layout.stop());
  s.loss_mask.assign(s.tokens.size(), 0);
  std::fill(s.loss_mask.begin() + static_cast<std::ptrdiff_t>(source.size() + 1), s.loss_mask.end(), 1);
  return s;
}

std::vector<int> uniform_tokens(int n, int vocab, Rng& rng) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& t : out) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
  return out;
}

}  // namespace

TaskSample gen_copy(int n, int vocab, Rng& rng) {
  check_basic(n, vocab, "copy");
  const Rng at = rng;
  const auto src = uniform_tokens(n, vocab, rng);
  return paste_layout(TaskKind::copy, src, src, vocab, at);
}

TaskSample gen_stack_copy(int n, int vocab, Rng& rng) {
  check_basic(n, vocab, "stack_copy");
  const Rng at = rng;
  const auto src = uniform_tokens(n, vocab, rng);
  return paste_layout(TaskKind::stack_copy, src, {src.rbegin(), src.rend()}, vocab, at);
}

TaskSample gen_sort(int n, int vocab, Rng& rng) {
  check_basic(n, vocab, "sort");
  if (n > vocab) {
    throw Error("sort: length " + std::to_string(n) + " exceeds vocab " + std::to_string(vocab) +
                " (tokens are drawn without replacement)");
  }
  const Rng at = rng;
  const auto src = rng.sample_without_replacement(vocab, n);
  auto sorted = src;
  std::sort(sorted.begin(), sorted.end());
  return paste_layout(TaskKind::sort, src, sorted, vocab, at);
}

TaskSample gen_mqar(int num_pairs, int num_queries, int vocab, Rng& rng) {
  check_basic(num_pairs, vocab, "mqar");
  const VocabLayout layout{vocab};
  if (num_pairs > layout.key_count()) {
    throw Error("mqar: " + std::to_string(num_pairs) + " pairs need distinct keys but the key range [0, " +
                std::to_string(layout.key_count()) + ") is too small");
  }
  if (num_queries < 1 || num_queries > num_pairs) {
    throw Error("mqar: num_queries must lie in [1, " + std::to_string(num_pairs) + "]");
  }
  TaskSample s;
  s.meta = {TaskKind::mqar, num_pairs, vocab, rng.key()};
  const auto keys = rng.sample_without_replacement(layout.key_count(), num_pairs);
  const int value_count = vocab - layout.value_begin();
  std::vector<int> values(keys.size());
  for (auto& v : values) v = layout.value_begin() + static_cast<int>(rng.below(static_cast<std::uint64_t>(value_count)));
  for (std::size_t i = 0; i < keys.size(); ++i) {
    s.tokens.push_back(keys[i]);
    s.tokens.push_back(values[i]);
  }
  s.tokens.push_back(layout.delimiter());
  s.loss_mask.assign(s.tokens.size(), 0);
  for (int qi : rng.sample_without_replacement(num_pairs, num_queries)) {
    s.tokens.push_back(keys[static_cast<std::size_t>(qi)]);
    s.loss_mask.push_back(0);
    s.tokens.push_back(values[static_cast<std::size_t>(qi)]);
    s.loss_mask.push_back(1);
  }
  s.tokens.push_back(layout.stop());
  s.loss_mask.push_back(1);
  return s;
}

int TaskSpec::queries_for(int pairs, int train_pairs) const {
  const int base_pairs = std::max(train_pairs, 1);
  const int base_q = num_queries > 0 ? num_queries : (base_pairs + 1) / 2;
  // Scale the query count with the number of pairs, rounding up.
  const long long q = (static_cast<long long>(base_q) * pairs + base_pairs - 1) / base_pairs;
  return static_cast<int>(std::clamp<long long>(q, 1, pairs));
}

TaskSample TaskSpec::generate(int length, int train_length, Rng& rng) const {
  switch (kind) {
    case TaskKind::copy: return gen_copy(length, vocab, rng);
    case TaskKind::stack_copy: return gen_stack_copy(length, vocab, rng);
    case TaskKind::mqar: return gen_mqar(length, queries_for(length, train_length), vocab, rng);
    case TaskKind::sort: return gen_sort(length, vocab, rng);
  }
  throw Error("unknown task");
}

void TaskSpec::check_length(int length, const std::string& field) const {
  if (length < 1) throw ConfigError(field, "lengths must be at least 1");
  if (kind == TaskKind::mqar && length > VocabLayout{vocab}.key_count()) {
    throw ConfigError(field, "mqar with " + std::to_string(length) + " pairs needs at least " +
                                 std::to_string(2 * length) + " content tokens, vocab is " + std::to_string(vocab));
  }
  if (kind == TaskKind::sort && length > vocab) {
    throw ConfigError(field, "sort length " + std::to_string(length) + " exceeds vocab " + std::to_string(vocab));
  }
}

std::vector<int> masked_targets(const TaskSample& sample) {
  std::vector<int> out;
  for (std::size_t i = 0; i < sample.tokens.size(); ++i)
    if (sample.loss_mask[i]) out.push_back(sample.tokens[i]);
  return out;
}

Score score(const std::vector<int>& pred, const TaskSample& sample) {
  const auto targets = masked_targets(sample);
  if (targets.empty()) return {1.0, 1.0};
  std::size_t hits = 0;
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (i < pred.size() && pred[i] == targets[i]) ++hits;
  return {static_cast<double>(hits) / static_cast<double>(targets.size()), hits == targets.size() ? 1.0 : 0.0};
}

void write_jsonl(std::ostream& out, const TaskSample& sample) {
  nlohmann::ordered_json j;
  j["task"] = to_string(sample.meta.task);
  j["length"] = sample.meta.length;
  j["vocab"] = sample.meta.vocab;
  j["seed"] = sample.meta.seed;
  j["tokens"] = sample.tokens;
  j["mask"] = sample.loss_mask;
  out << j.dump() << '\n';
}

}  // namespace mssm
