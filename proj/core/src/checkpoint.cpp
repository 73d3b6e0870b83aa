#include "mssm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mssm/error.hpp"

namespace mssm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'S', 'S', 'M', 'C', 'K', 'P', 'T'};

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw Error(std::string("checkpoint truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
CheckpointData snapshot(const Model<T>& model) {
  CheckpointData d;
  d.config = model.config();
  for (const auto& [name, t] : model.named_parameters()) {
    CheckpointTensor ct;
    ct.name = name;
    ct.shape = t.shape();
    ct.values.reserve(t.numel());
    for (T v : t.data()) ct.values.push_back(static_cast<float>(v));
    d.tensors.push_back(std::move(ct));
  }
  return d;
}

std::string encode_checkpoint(const CheckpointData& data) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = data.config.to_json().dump();
  put<std::uint64_t>(out, cfg.size());
  out += cfg;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& t : data.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw DimensionError("checkpoint tensor " + t.name + ": shape " + shape_str(t.shape) + " vs " +
                           std::to_string(t.values.size()) + " values");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    const std::size_t at = out.size();
    out.resize(at + t.values.size() * sizeof(float));
    std::memcpy(out.data() + at, t.values.data(), t.values.size() * sizeof(float));
  }
  return out;
}

CheckpointData decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
    throw Error("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointData d;
  const auto cfg_len = r.get<std::uint64_t>("config length");
  const std::string cfg = r.get_bytes(cfg_len, "config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  d.config = ModelConfig::from_json(j, "model");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.get_bytes(r.get<std::uint32_t>("name length"), "name");
    const auto rank = r.get<std::uint32_t>("rank");
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.get<std::uint64_t>("shape"));
    const std::string raw = r.get_bytes(shape_numel(t.shape) * sizeof(float), "tensor values");
    t.values.resize(shape_numel(t.shape));
    std::memcpy(t.values.data(), raw.data(), raw.size());
    d.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw Error("checkpoint has trailing bytes");
  return d;
}

template <typename T>
Model<T> restore(const CheckpointData& data) {
  Model<T> model(data.config);
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : data.tensors) by_name[t.name] = &t;
  for (auto& [name, p] : model.named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("checkpoint is missing parameter " + name);
    if (it->second->shape != p.shape()) {
      throw DimensionError("checkpoint parameter " + name + " has shape " + shape_str(it->second->shape) +
                           ", model expects " + shape_str(p.shape()));
    }
    auto dst = p.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    by_name.erase(it);
  }
  if (!by_name.empty()) throw Error("checkpoint has unexpected parameter " + by_name.begin()->first);
  return model;
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

void write_checkpoint(const CheckpointData& data, const std::string& path) {
  const std::string bytes = encode_checkpoint(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path);
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  write_checkpoint(snapshot(model), path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  return restore<T>(read_checkpoint(path));
}

template CheckpointData snapshot<float>(const Model<float>&);
template CheckpointData snapshot<double>(const Model<double>&);
template Model<float> restore<float>(const CheckpointData&);
template Model<double> restore<double>(const CheckpointData&);
template void save_checkpoint<float>(const Model<float>&, const std::string&);
template void save_checkpoint<double>(const Model<double>&, const std::string&);
template Model<float> load_checkpoint<float>(const std::string&);
template Model<double> load_checkpoint<double>(const std::string&);

}  // namespace mssm
