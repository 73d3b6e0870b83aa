#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mssm/error.hpp"
#include "mssm/tasks.hpp"

using namespace mssm;

TEST(Tasks, CopyLayout) {
  for (int n : {1, 3, 20}) {
    Rng rng(n);
    const Rng at = rng;
    const TaskSample s = gen_copy(n, 4, rng);
    ASSERT_EQ(s.tokens.size(), std::size_t(2 * n + 2));
    EXPECT_EQ(s.masked_count(), std::size_t(n + 1));
    EXPECT_EQ(s.delimiter_index(), std::size_t(n));
    EXPECT_EQ(s.tokens[std::size_t(n)], 4);
    EXPECT_EQ(s.tokens.back(), 5);
    for (int i = 0; i < n; ++i) {
      EXPECT_LT(s.tokens[std::size_t(i)], 4);
      EXPECT_EQ(s.tokens[std::size_t(n + 1 + i)], s.tokens[std::size_t(i)]);
    }
    for (std::size_t i = 0; i < s.tokens.size(); ++i) EXPECT_EQ(s.loss_mask[i], i > std::size_t(n) ? 1 : 0);
    EXPECT_EQ(s.meta.seed, at.key());
    EXPECT_EQ(s.meta.length, n);
    EXPECT_EQ(s.meta.task, TaskKind::copy);
  }
}

TEST(Tasks, CopyTokensAreUniform) {
  Rng rng(9);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 2000; ++i) {
    const auto s = gen_copy(10, 4, rng);
    for (int k = 0; k < 10; ++k) ++counts[std::size_t(s.tokens[std::size_t(k)])];
  }
  for (int c : counts) EXPECT_NEAR(c, 5000, 300);
}

TEST(Tasks, StackCopyReverses) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const TaskSample s = gen_stack_copy(6, 8, rng);
    ASSERT_EQ(s.tokens.size(), 14u);
    std::vector<int> src(s.tokens.begin(), s.tokens.begin() + 6);
    std::vector<int> paste(s.tokens.begin() + 7, s.tokens.begin() + 13);
    std::reverse(paste.begin(), paste.end());
    EXPECT_EQ(paste, src);
    EXPECT_EQ(s.masked_count(), 7u);
  }
  // The same stream yields the same source for both tasks.
  Rng a(5), b(5);
  const auto c = gen_copy(5, 6, a), sc = gen_stack_copy(5, 6, b);
  EXPECT_TRUE(std::equal(c.tokens.begin(), c.tokens.begin() + 5, sc.tokens.begin()));
}

TEST(Tasks, SortIsIncreasing) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const TaskSample s = gen_sort(10, 512, rng);
    ASSERT_EQ(s.tokens.size(), 22u);
    std::vector<int> src(s.tokens.begin(), s.tokens.begin() + 10);
    EXPECT_EQ(std::set<int>(src.begin(), src.end()).size(), 10u);
    std::sort(src.begin(), src.end());
    EXPECT_TRUE(std::equal(src.begin(), src.end(), s.tokens.begin() + 11));
    EXPECT_TRUE(std::is_sorted(s.tokens.begin() + 11, s.tokens.begin() + 21));
    EXPECT_EQ(s.tokens[10], 512);
    EXPECT_EQ(s.tokens[21], 513);
  }
  EXPECT_THROW(gen_sort(5, 4, rng), Error);
}

TEST(Tasks, MqarLayout) {
  const int V = 64, p = 16, q = 8;
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const TaskSample s = gen_mqar(p, q, V, rng);
    ASSERT_EQ(s.tokens.size(), std::size_t(2 * p + 1 + 2 * q + 1));
    EXPECT_EQ(s.masked_count(), std::size_t(q + 1));
    std::map<int, int> pairs;
    for (int k = 0; k < p; ++k) {
      const int key = s.tokens[std::size_t(2 * k)], value = s.tokens[std::size_t(2 * k + 1)];
      EXPECT_LT(key, V / 2);
      EXPECT_GE(value, V / 2);
      EXPECT_LT(value, V);
      pairs[key] = value;
    }
    EXPECT_EQ(pairs.size(), std::size_t(p));
    EXPECT_EQ(s.delimiter_index(), std::size_t(2 * p));
    std::set<int> queried;
    for (int k = 0; k < q; ++k) {
      const std::size_t at = std::size_t(2 * p + 1 + 2 * k);
      const int key = s.tokens[at];
      ASSERT_TRUE(pairs.count(key));
      EXPECT_EQ(s.tokens[at + 1], pairs[key]);
      EXPECT_EQ(s.loss_mask[at], 0);
      EXPECT_EQ(s.loss_mask[at + 1], 1);
      queried.insert(key);
    }
    EXPECT_EQ(queried.size(), std::size_t(q));
    for (std::size_t k = 0; k <= std::size_t(2 * p); ++k) EXPECT_EQ(s.loss_mask[k], 0);
    EXPECT_EQ(s.tokens.back(), V + 1);
    EXPECT_EQ(s.loss_mask.back(), 1);
  }
  EXPECT_THROW(gen_mqar(33, 1, V, rng), Error);
  EXPECT_THROW(gen_mqar(4, 5, V, rng), Error);
}

TEST(Tasks, Determinism) {
  const TaskSpec specs[] = {{TaskKind::copy, 8, 0}, {TaskKind::stack_copy, 8, 0}, {TaskKind::mqar, 32, 3},
                            {TaskKind::sort, 64, 0}};
  for (const auto& spec : specs) {
    Rng a(11), b(11);
    for (int i = 0; i < 5; ++i) {
      const auto x = spec.generate(6, 6, a), y = spec.generate(6, 6, b);
      EXPECT_EQ(x.tokens, y.tokens);
      EXPECT_EQ(x.loss_mask, y.loss_mask);
    }
  }
}

TEST(Tasks, QueryScaling) {
  TaskSpec spec{TaskKind::mqar, 64, 8};
  EXPECT_EQ(spec.queries_for(16, 16), 8);
  EXPECT_EQ(spec.queries_for(32, 16), 16);
  EXPECT_EQ(spec.queries_for(3, 16), 2);
  EXPECT_EQ(spec.queries_for(1, 16), 1);
  TaskSpec derived{TaskKind::mqar, 64, 0};
  EXPECT_EQ(derived.queries_for(7, 7), 4);
  EXPECT_EQ(derived.queries_for(14, 7), 8);
}

TEST(Tasks, CheckLength) {
  TaskSpec mqar{TaskKind::mqar, 64, 8};
  EXPECT_NO_THROW(mqar.check_length(32, "eval_lengths"));
  try {
    mqar.check_length(33, "eval_lengths");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "eval_lengths");
  }
  EXPECT_THROW((TaskSpec{TaskKind::sort, 16, 0}.check_length(17, "train_length")), ConfigError);
  EXPECT_THROW((TaskSpec{TaskKind::copy, 16, 0}.check_length(0, "train_length")), ConfigError);
  EXPECT_EQ(task_from_string("stack-copy"), TaskKind::stack_copy);
  EXPECT_THROW(task_from_string("reverse"), ConfigError);
}

TEST(Tasks, Score) {
  Rng rng(6);
  const TaskSample s = gen_copy(3, 4, rng);
  auto targets = masked_targets(s);
  ASSERT_EQ(targets.size(), 4u);
  Score sc = score(targets, s);
  EXPECT_EQ(sc.token_acc, 1.0);
  EXPECT_EQ(sc.string_acc, 1.0);
  targets[1] = (targets[1] + 1) % 4;
  sc = score(targets, s);
  EXPECT_EQ(sc.token_acc, 0.75);
  EXPECT_EQ(sc.string_acc, 0.0);
  sc = score({}, s);
  EXPECT_EQ(sc.token_acc, 0.0);
  EXPECT_EQ(sc.string_acc, 0.0);
  targets.pop_back();
  targets[1] = masked_targets(s)[1];
  EXPECT_EQ(score(targets, s).string_acc, 0.0);
}

TEST(Tasks, Jsonl) {
  Rng rng(7);
  const TaskSample s = gen_copy(2, 4, rng);
  std::ostringstream out;
  write_jsonl(out, s);
  const std::string line = out.str();
  ASSERT_EQ(line.back(), '\n');
  EXPECT_EQ(line.find('\n'), line.size() - 1);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["task"], "copy");
  EXPECT_EQ(j["length"], 2);
  EXPECT_EQ(j["vocab"], 4);
  EXPECT_EQ(j["seed"].get<std::uint64_t>(), s.meta.seed);
  EXPECT_EQ(j["tokens"].get<std::vector<int>>(), s.tokens);
  EXPECT_EQ(j["mask"].get<std::vector<int>>(), std::vector<int>(s.loss_mask.begin(), s.loss_mask.end()));
  EXPECT_EQ(line.rfind("{\"task\"", 0), 0u);
}
