#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mssm/model.hpp"
#include "mssm/tasks.hpp"

namespace mssm {

/// Averaged attention map (and, for SSM layers, the averaged decay mask) of
/// one layer on one probe sequence.
struct MapDump {
  int layer = 0;
  std::string kind;
  std::vector<double> map;   // T x T row-major
  std::vector<double> mask;  // T x T, empty for attention layers
  std::size_t length = 0;
  std::string task;
  std::uint64_t sample_seed = 0;
};

/// Runs `sample` through the model and builds one dump per selected layer
/// (all layers when `layers` is empty). Throws CapExceeded if the sequence
/// is longer than `cap`.
template <typename T>
std::vector<MapDump> capture_maps(const Model<T>& model, const TaskSample& sample, const std::set<int>& layers = {},
                                  std::size_t cap = kMatrixFormCap);

void write_matrix_csv(std::ostream& out, const std::vector<double>& m, std::size_t n);

/// 8-bit binary PGM: pixel = round(255 * |v| / scale) with scale = max |v|
/// (0 for an all-zero matrix). Returns the scale.
double write_pgm(std::ostream& out, const std::vector<double>& m, std::size_t n);

/// Writes layer<i>_map.{csv,pgm,scale} and layer<i>_mask.{csv,pgm,scale}
/// into `dir`. Returns the paths written.
std::vector<std::string> export_dump(const MapDump& dump, const std::string& dir);

}  // namespace mssm
