#include "mssm/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "mssm/error.hpp"
#include "mssm/ssm.hpp"

namespace mssm {

namespace fs = std::filesystem;

namespace {

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace

template <typename T>
std::vector<MapDump> capture_maps(const Model<T>& model, const TaskSample& sample, const std::set<int>& layers,
                                  std::size_t cap) {
  const std::size_t len = sample.tokens.size();
  if (len > cap) throw CapExceeded(len, cap);
  ForwardCapture<T> fc;
  {
    NoGradGuard no_grad;
    model.forward(TokenBatch{sample.tokens, len}, &fc);
  }
  std::vector<MapDump> out;
  for (const auto& lc : fc.layers) {
    if (!layers.empty() && !layers.count(lc.layer)) continue;
    MapDump d;
    d.layer = lc.layer;
    d.kind = lc.kind;
    d.length = len;
    d.task = to_string(sample.meta.task);
    d.sample_seed = sample.meta.seed;
    if (lc.kind == "mamba1" || lc.kind == "mamba2") {
      const auto st = discretize(lc.decay, lc.head_dim, lc.delta, lc.a_log, lc.b, lc.c);
      d.map = to_doubles(averaged_attention_map(st, cap));
      d.mask = to_doubles(averaged_attention_mask(st, cap));
    } else {
      d.map = to_doubles(lc.weights.at(0));
    }
    out.push_back(std::move(d));
  }
  return out;
}

void write_matrix_csv(std::ostream& out, const std::vector<double>& m, std::size_t n) {
  if (m.size() != n * n) throw DimensionError("write_matrix_csv: expected a square matrix");
  char buf[40];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", m[i * n + j]);
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

double write_pgm(std::ostream& out, const std::vector<double>& m, std::size_t n) {
  if (m.size() != n * n) throw DimensionError("write_pgm: expected a square matrix");
  double scale = 0.0;
  for (double v : m) scale = std::max(scale, std::abs(v));
  out << "P5\n" << n << ' ' << n << "\n255\n";
  std::string row(n, '\0');
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = scale > 0.0 ? std::round(255.0 * std::abs(m[i * n + j]) / scale) : 0.0;
      row[j] = static_cast<char>(static_cast<unsigned char>(std::min(255.0, v)));
    }
    out.write(row.data(), static_cast<std::streamsize>(n));
  }
  return scale;
}

std::vector<std::string> export_dump(const MapDump& dump, const std::string& dir) {
  fs::create_directories(dir);
  std::vector<std::string> written;
  auto emit = [&](const std::vector<double>& m, const std::string& what) {
    const std::string stem = (fs::path(dir) / ("layer" + std::to_string(dump.layer) + "_" + what)).string();
    {
      std::ofstream csv(stem + ".csv");
      write_matrix_csv(csv, m, dump.length);
    }
    double scale = 0.0;
    {
      std::ofstream pgm(stem + ".pgm", std::ios::binary);
      scale = write_pgm(pgm, m, dump.length);
    }
    {
      std::ofstream side(stem + ".scale");
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", scale);
      side << "# pixel = round(255 * |value| / scale)\n"
           << "scale " << buf << "\nlayer " << dump.layer << "\nkind " << dump.kind << "\ntask " << dump.task
           << "\nlength " << dump.length << "\nsample_seed " << dump.sample_seed << '\n';
    }
    for (const char* ext : {".csv", ".pgm", ".scale"}) written.push_back(stem + ext);
  };
  emit(dump.map, "map");
  if (!dump.mask.empty()) emit(dump.mask, "mask");
  return written;
}

template std::vector<MapDump> capture_maps<float>(const Model<float>&, const TaskSample&, const std::set<int>&,
                                                  std::size_t);
template std::vector<MapDump> capture_maps<double>(const Model<double>&, const TaskSample&, const std::set<int>&,
                                                   std::size_t);

}  // namespace mssm
