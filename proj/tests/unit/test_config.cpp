#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "mssm/config.hpp"
#include "mssm/error.hpp"

using namespace mssm;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({
    "model": {"variant": "mamba2", "n_layers": 2, "d_model": 32, "d_state": 8, "head_dim": 16},
    "task": {"kind": "copy", "vocab": 16},
    "train_length": 10,
    "steps": 5
  })");
}

std::string field_of(const json& j) {
  try {
    TrainConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST(Config, Defaults) {
  const TrainConfig c = TrainConfig::from_json(minimal());
  EXPECT_EQ(c.model.vocab_size, 18);
  EXPECT_EQ(c.resolved_eval_lengths(), (std::vector<int>{10, 20, 40}));
  EXPECT_EQ(c.batch_size, 32);
  EXPECT_EQ(c.lrs, std::vector<double>{1e-3});
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{0});
  EXPECT_EQ(c.init, InitFlags{});
  EXPECT_FALSE(c.grad_clip.has_value());
  EXPECT_FALSE(c.log_wall_time);
  EXPECT_EQ(c.model.expand, 2);
  EXPECT_EQ(c.model.conv_width, 4);
}

TEST(Config, JsonRoundTripAndHash) {
  json j = minimal();
  j["init"] = "mimetic-mamba2";
  j["lrs"] = {1e-3, 5e-4};
  j["seeds"] = {1, 2, 3};
  j["grad_clip"] = 1.0;
  j["task"] = {{"kind", "mqar"}, {"vocab", 64}, {"num_queries", 4}};
  j["train_length"] = 8;
  j["eval_lengths"] = {8, 16};
  const TrainConfig c = TrainConfig::from_json(j);
  const TrainConfig r = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(r.to_json(), c.to_json());
  EXPECT_EQ(r.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  EXPECT_EQ(c.init, InitFlags::preset("mimetic-mamba2"));
  EXPECT_EQ(c.task.num_queries, 4);
  EXPECT_EQ(*c.grad_clip, 1.0);

  json k = j;
  k["seeds"] = {1, 2, 4};
  EXPECT_NE(TrainConfig::from_json(k).hash(), c.hash());
}

TEST(Config, FieldErrors) {
  json j = minimal();
  j["steps"] = 0;
  EXPECT_EQ(field_of(j), "steps");
  j = minimal();
  j.erase("train_length");
  EXPECT_EQ(field_of(j), "train_length");
  j = minimal();
  j["model"]["head_dim"] = 7;
  EXPECT_EQ(field_of(j), "model.head_dim");
  j = minimal();
  j["model"]["variant"] = "mamba3";
  EXPECT_EQ(field_of(j), "model.variant");
  j = minimal();
  j["model"]["d_model"] = "wide";
  EXPECT_EQ(field_of(j), "model.d_model");
  j = minimal();
  j["lrs"] = json::array();
  EXPECT_EQ(field_of(j), "lrs");
  j = minimal();
  j["task"]["kind"] = "reverse";
  EXPECT_EQ(field_of(j), "task.kind");
  j = minimal();
  j["task"] = {{"kind", "mqar"}, {"vocab", 16}};
  EXPECT_EQ(field_of(j), "train_length");
  j = minimal();
  j["eval_lengths"] = {10, 0};
  EXPECT_EQ(field_of(j), "eval_lengths");
  j = minimal();
  j["version"] = 2;
  EXPECT_EQ(field_of(j), "version");
  j = minimal();
  j["model"]["conv_width"] = 0;
  j["init"] = "mimetic-mamba2";
  EXPECT_EQ(field_of(j), "init.conv_identity");
  j = minimal();
  j["init"] = {{"preset", "bogus"}};
  EXPECT_EQ(field_of(j), "init.preset");
  j = minimal();
  j["model"]["vocab_size"] = 5;
  EXPECT_EQ(field_of(j), "model.vocab_size");
  EXPECT_EQ(field_of(json::array()), "<root>");
}

TEST(Config, LoadErrors) {
  EXPECT_THROW(TrainConfig::load("/nonexistent/config.json"), ConfigError);
}

TEST(Config, SortDefaultsVocab) {
  json j = minimal();
  j["task"] = {{"kind", "sort"}};
  const TrainConfig c = TrainConfig::from_json(j);
  EXPECT_EQ(c.task.vocab, 512);
  EXPECT_EQ(c.model.vocab_size, 514);
}
