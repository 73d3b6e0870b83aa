#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "mssm/checkpoint.hpp"
#include "mssm/error.hpp"
#include "mssm/init.hpp"

using namespace mssm;

namespace {

ModelConfig config() {
  ModelConfig c;
  c.variant = Variant::hybrid;
  c.n_layers = 3;
  c.d_model = 8;
  c.d_state = 4;
  c.head_dim = 4;
  c.vocab_size = 6;
  c.attn_layer_index = 2;
  return c;
}

std::uint32_t u32_at(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[pos + std::size_t(i)]);
  return v;
}

}  // namespace

TEST(Checkpoint, RoundTripBitExact) {
  Model<float> m(config());
  apply_init(InitFlags::preset("mimetic-mamba2"), m, 3);
  const std::string path = (std::filesystem::temp_directory_path() / "mssm_ckpt_test.bin").string();
  save_checkpoint(m, path);
  const Model<float> r = load_checkpoint<float>(path);
  EXPECT_EQ(r.config().to_json(), m.config().to_json());
  const auto a = m.named_parameters(), b = r.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    ASSERT_EQ(a[i].second.shape(), b[i].second.shape());
    EXPECT_EQ(std::memcmp(a[i].second.data().data(), b[i].second.data().data(), a[i].second.numel() * sizeof(float)), 0);
  }
  const Model<double> wide = load_checkpoint<double>(path);
  EXPECT_EQ(wide.embedding[5], double(m.embedding[5]));
  std::filesystem::remove(path);
}

TEST(Checkpoint, EncodingIsStableAndLayoutMatches) {
  Model<float> m(config());
  default_init(m, 4);
  const std::string a = encode_checkpoint(snapshot(m));
  EXPECT_EQ(a, encode_checkpoint(snapshot(m)));
  EXPECT_EQ(a, encode_checkpoint(decode_checkpoint(a)));
  ASSERT_GE(a.size(), 12u);
  EXPECT_EQ(a.substr(0, 8), "MSSMCKPT");
  EXPECT_EQ(u32_at(a, 8), kCheckpointVersion);

  std::size_t floats = 0, names = 0, ranks = 0;
  for (auto& [name, p] : m.named_parameters()) {
    floats += p.numel();
    names += name.size();
    ranks += p.shape().size();
  }
  const std::string cfg = m.config().to_json().dump();
  const std::size_t expected = 8 + 4 + 8 + cfg.size() + 4 + m.named_parameters().size() * 8 + names + ranks * 8 +
                               floats * 4;
  EXPECT_GE(a.size(), expected - cfg.size());
  EXPECT_LE(a.size(), expected + 256);
}

TEST(Checkpoint, RejectsCorruptInput) {
  Model<float> m(config());
  default_init(m, 5);
  const std::string good = encode_checkpoint(snapshot(m));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), Error);
  std::string bad_version = good;
  bad_version[8] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), Error);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(good.substr(0, cut)), Error) << cut;
  }
  EXPECT_THROW(decode_checkpoint(good + "x"), Error);
  EXPECT_THROW(load_checkpoint<float>("/nonexistent/ckpt.bin"), Error);
}

TEST(Checkpoint, RestoreChecksParameters) {
  Model<float> m(config());
  default_init(m, 6);
  CheckpointData data = snapshot(m);
  CheckpointData missing = data;
  missing.tensors.pop_back();
  EXPECT_THROW(restore<float>(missing), Error);
  CheckpointData extra = data;
  extra.tensors.push_back({"bogus", {1}, {0.f}});
  EXPECT_THROW(restore<float>(extra), Error);
  CheckpointData reshaped = data;
  reshaped.tensors[0].shape = {reshaped.tensors[0].values.size(), 1};
  EXPECT_THROW(restore<float>(reshaped), DimensionError);
}
