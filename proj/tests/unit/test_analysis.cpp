#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mssm/analysis.hpp"
#include "mssm/error.hpp"
#include "mssm/init.hpp"

using namespace mssm;
namespace fs = std::filesystem;

namespace {

Model<double> model(Variant v, const char* preset) {
  ModelConfig c;
  c.variant = v;
  c.n_layers = 2;
  c.d_model = 16;
  c.d_state = 4;
  c.head_dim = 8;
  c.vocab_size = 10;
  if (v == Variant::hybrid) c.attn_layer_index = 1;
  Model<double> m(c);
  apply_init(InitFlags::preset(preset), m, 1);
  return m;
}

TaskSample sample(int n) {
  Rng rng(3);
  return gen_copy(n, 8, rng);
}

}  // namespace

TEST(Analysis, PgmEncoding) {
  std::ostringstream out;
  const double scale = write_pgm(out, {0.0, -2.0, 1.0, 0.5}, 2);
  EXPECT_EQ(scale, 2.0);
  const std::string s = out.str();
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(s.size(), header.size() + 4);
  EXPECT_EQ(s.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(s[header.size() + 0]), 0);
  EXPECT_EQ(static_cast<unsigned char>(s[header.size() + 1]), 255);
  EXPECT_EQ(static_cast<unsigned char>(s[header.size() + 2]), 128);
  EXPECT_EQ(static_cast<unsigned char>(s[header.size() + 3]), 64);

  std::ostringstream zero;
  EXPECT_EQ(write_pgm(zero, {0, 0, 0, 0}, 2), 0.0);
  EXPECT_THROW(write_pgm(zero, {1, 2, 3}, 2), DimensionError);
}

TEST(Analysis, MatrixCsv) {
  std::ostringstream out;
  write_matrix_csv(out, {1, 0.5, 0, 1e-12}, 2);
  EXPECT_EQ(out.str(), "1,0.5\n0,1e-12\n");
}

TEST(Analysis, CaptureMapsShapesAndCausality) {
  const TaskSample s = sample(5);
  for (Variant v : {Variant::mamba1, Variant::mamba2, Variant::hybrid}) {
    const auto m = model(v, "default");
    const auto dumps = capture_maps(m, s);
    ASSERT_EQ(dumps.size(), 2u);
    for (const auto& d : dumps) {
      const std::size_t n = s.tokens.size();
      EXPECT_EQ(d.length, n);
      EXPECT_EQ(d.task, "copy");
      EXPECT_EQ(d.sample_seed, s.meta.seed);
      ASSERT_EQ(d.map.size(), n * n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
          EXPECT_EQ(d.map[i * n + j], 0.0);
          if (!d.mask.empty()) EXPECT_EQ(d.mask[i * n + j], 0.0);
        }
      if (d.kind == "attention") {
        EXPECT_TRUE(d.mask.empty());
        for (std::size_t i = 0; i < n; ++i) {
          double row = 0;
          for (std::size_t j = 0; j < n; ++j) row += d.map[i * n + j];
          EXPECT_NEAR(row, 1.0, 1e-12);
        }
      } else {
        EXPECT_EQ(d.mask.size(), n * n);
      }
    }
    EXPECT_EQ(capture_maps(m, s, {1}).size(), 1u);
    EXPECT_EQ(capture_maps(m, s, {1})[0].layer, 1);
  }
}

TEST(Analysis, MaskReflectsInitialization) {
  const TaskSample s = sample(10);
  const std::size_t n = s.tokens.size();
  // Mimetic: the decay mask is close to one everywhere in the lower triangle.
  for (const auto& d : capture_maps(model(Variant::mamba2, "mimetic-mamba2"), s)) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) EXPECT_GT(d.mask[i * n + j], 0.9);
  }
  // Default: rows decay away from the diagonal.
  for (const auto& d : capture_maps(model(Variant::mamba1, "default"), s)) {
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(d.mask[i * n + i], 1.0, 1e-12);
      for (std::size_t j = 1; j <= i; ++j) EXPECT_LE(d.mask[i * n + j - 1], d.mask[i * n + j]);
    }
    EXPECT_LT(d.mask[(n - 1) * n], 0.9);
  }
}

TEST(Analysis, CapIsEnforced) {
  const auto m = model(Variant::mamba1, "default");
  EXPECT_THROW(capture_maps(m, sample(5), {}, 8), CapExceeded);
}

TEST(Analysis, ExportWritesFiles) {
  const fs::path dir = fs::temp_directory_path() / "mssm_analysis_test";
  fs::remove_all(dir);
  const auto dumps = capture_maps(model(Variant::hybrid, "default"), sample(3));
  const auto ssm_files = export_dump(dumps[0], dir.string());
  EXPECT_EQ(ssm_files.size(), 6u);
  const auto attn_files = export_dump(dumps[1], dir.string());
  EXPECT_EQ(attn_files.size(), 3u);
  for (const auto& f : ssm_files) EXPECT_TRUE(fs::exists(f)) << f;
  EXPECT_TRUE(fs::exists(dir / "layer0_mask.pgm"));
  EXPECT_TRUE(fs::exists(dir / "layer1_map.csv"));
  EXPECT_FALSE(fs::exists(dir / "layer1_mask.csv"));

  std::ifstream csv(dir / "layer1_map.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, dumps[1].length);
  std::ifstream side(dir / "layer0_map.scale");
  std::stringstream ss;
  ss << side.rdbuf();
  EXPECT_NE(ss.str().find("kind mamba2"), std::string::npos);
  EXPECT_NE(ss.str().find("task copy"), std::string::npos);
  fs::remove_all(dir);
}
