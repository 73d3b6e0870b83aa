#include "mssm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mssm/checkpoint.hpp"
#include "mssm/decode.hpp"
#include "mssm/error.hpp"
#include "mssm/init.hpp"
#include "mssm/ops.hpp"
#include "mssm/optim.hpp"

namespace mssm {

namespace fs = std::filesystem;

Score RunMetrics::final_score(int length, int steps) const {
  if (diverged) return {};
  for (auto it = evals.rbegin(); it != evals.rend(); ++it)
    if (it->length == length && it->step == steps) return it->score;
  return {};
}

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::string format_row(const MetricRow& r) {
  std::string s = std::to_string(r.step) + "," + fmt("%.9g", r.lr) + "," + std::to_string(r.seed) + ",";
  if (r.split_length) s += std::to_string(*r.split_length);
  s += "," + fmt("%.17g", r.loss) + ",";
  if (r.token_acc) s += fmt("%.17g", *r.token_acc);
  s += ",";
  if (r.string_acc) s += fmt("%.17g", *r.string_acc);
  s += "," + fmt("%.3f", r.wall_ms);
  return s;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows, bool header) {
  if (header) out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
}

std::vector<MetricRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw Error("metrics CSV: unexpected header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) throw Error("metrics CSV: expected 8 fields in '" + line + "'");
    MetricRow r;
    r.step = std::stoi(f[0]);
    r.lr = std::stod(f[1]);
    r.seed = std::stoull(f[2]);
    if (!f[3].empty()) r.split_length = std::stoi(f[3]);
    r.loss = std::stod(f[4]);
    if (!f[5].empty()) r.token_acc = std::stod(f[5]);
    if (!f[6].empty()) r.string_acc = std::stod(f[6]);
    r.wall_ms = std::stod(f[7]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<TaskSample> make_eval_set(const TaskSpec& task, int length, int train_length, int n_samples,
                                      std::uint64_t seed) {
  const Rng base = Rng(seed).substream("eval").substream(static_cast<std::uint64_t>(length));
  std::vector<TaskSample> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    Rng r = base.substream(static_cast<std::uint64_t>(i));
    out.push_back(task.generate(length, train_length, r));
  }
  return out;
}

std::vector<std::vector<int>> free_run(StepPredictor& predictor, const std::vector<TaskSample>& samples) {
  const std::size_t batch = samples.size();
  std::vector<std::vector<int>> preds(batch);
  if (batch == 0) return preds;
  const std::size_t len = samples[0].tokens.size();
  for (const auto& s : samples) {
    if (s.tokens.size() != len) throw DimensionError("free_run: samples in a batch must have equal length");
  }
  const int stop = VocabLayout{samples[0].meta.vocab}.stop();
  std::vector<int> feed(batch);
  std::vector<char> stopped(batch, 0);
  for (std::size_t b = 0; b < batch; ++b) feed[b] = samples[b].tokens[0];
  for (std::size_t t = 0; t + 1 < len; ++t) {
    bool any_masked_ahead = false;
    for (const auto& s : samples)
      for (std::size_t k = t + 1; k < len && !any_masked_ahead; ++k) any_masked_ahead = s.loss_mask[k] != 0;
    if (!any_masked_ahead) break;
    const std::vector<int> next = predictor.step(feed);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& s = samples[b];
      if (s.loss_mask[t + 1]) {
        const int p = stopped[b] ? -1 : next[b];
        preds[b].push_back(p);
        if (p == stop) stopped[b] = 1;
        feed[b] = p >= 0 ? p : s.tokens[t + 1];
      } else {
        feed[b] = s.tokens[t + 1];
      }
    }
  }
  return preds;
}

Score aggregate(const std::vector<std::vector<int>>& preds, const std::vector<TaskSample>& samples) {
  if (preds.size() != samples.size()) throw DimensionError("aggregate: prediction and sample counts differ");
  if (samples.empty()) return {};
  Score total;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Score s = score(preds[i], samples[i]);
    total.token_acc += s.token_acc;
    total.string_acc += s.string_acc;
  }
  const double n = static_cast<double>(samples.size());
  return {total.token_acc / n, total.string_acc / n};
}

namespace {

template <typename T>
class ModelPredictor final : public StepPredictor {
 public:
  ModelPredictor(const Model<T>& model, std::size_t batch) : decoder_(model, batch) {}

  std::vector<int> step(std::span<const int> tokens) override {
    const Tensor<T> logits = decoder_.step(tokens);
    const std::size_t v = logits.cols();
    std::vector<int> out(logits.rows());
    for (std::size_t b = 0; b < out.size(); ++b)
      out[b] = static_cast<int>(argmax<T>(logits.data().subspan(b * v, v)));
    return out;
  }

 private:
  Decoder<T> decoder_;
};

constexpr std::size_t kEvalChunk = 128;

}  // namespace

template <typename T>
Score evaluate(const Model<T>& model, const std::vector<TaskSample>& samples) {
  std::vector<std::vector<int>> preds;
  preds.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(samples.size(), begin + kEvalChunk);
    const std::vector<TaskSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                        samples.begin() + static_cast<std::ptrdiff_t>(end));
    ModelPredictor<T> predictor(model, chunk.size());
    for (auto& p : free_run(predictor, chunk)) preds.push_back(std::move(p));
  }
  return aggregate(preds, samples);
}

template <typename T>
Score evaluate(const Model<T>& model, const TaskSpec& task, int length, int train_length, int n_samples,
               std::uint64_t seed) {
  return evaluate(model, make_eval_set(task, length, train_length, n_samples, seed));
}

namespace {

std::string lr_tag(double lr, std::uint64_t seed) {
  return "lr" + fmt("%g", lr) + "_seed" + std::to_string(seed);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

template <typename T>
RunMetrics train(const TrainConfig& config, double lr, std::uint64_t seed, const RunOptions& options,
                 Model<T>* trained) {
  config.validate();
  tune_allocator();
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  Model<T> model(config.model);
  apply_init(config.init, model, seed);
  Adam<T> opt(model.parameters());

  RunMetrics m;
  m.lr = lr;
  m.seed = seed;
  m.config_hash = config.hash();

  const auto eval_lengths = config.resolved_eval_lengths();
  std::vector<std::vector<TaskSample>> eval_sets;
  for (int len : eval_lengths)
    eval_sets.push_back(make_eval_set(config.task, len, config.train_length, config.eval_samples, config.eval_seed));

  const bool to_disk = !options.out_dir.empty();
  if (to_disk) fs::create_directories(options.out_dir);
  double best_key = -1.0;
  const Rng data = Rng(seed).substream("train");
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  double last_loss = std::nan("");

  auto wall = [&] { return config.log_wall_time ? elapsed_ms() : 0.0; };

  for (int step = 0; step < config.steps; ++step) {
    const Rng step_rng = data.substream(static_cast<std::uint64_t>(step));
    TokenBatch tb;
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
    int length = config.train_length;
    if (config.min_train_length > 0 && config.min_train_length < config.train_length) {
      const auto span = static_cast<std::uint64_t>(config.train_length - config.min_train_length + 1);
      length = config.min_train_length + static_cast<int>(step_rng.substream("length").below(span));
    }
    for (std::size_t i = 0; i < batch; ++i) {
      Rng r = step_rng.substream(static_cast<std::uint64_t>(i));
      const TaskSample s = config.task.generate(length, config.train_length, r);
      const std::size_t n = s.tokens.size();
      tb.seq_len = n - 1;
      tb.ids.insert(tb.ids.end(), s.tokens.begin(), s.tokens.end() - 1);
      targets.insert(targets.end(), s.tokens.begin() + 1, s.tokens.end());
      mask.insert(mask.end(), s.loss_mask.begin() + 1, s.loss_mask.end());
    }
    opt.zero_grad();
    const Tensor<T> loss = ops::cross_entropy(model.forward(tb), targets, mask);
    last_loss = static_cast<double>(loss.item());
    m.losses.push_back(last_loss);
    m.rows.push_back({step, lr, seed, std::nullopt, last_loss, std::nullopt, std::nullopt, wall()});
    if (!std::isfinite(last_loss)) {
      m.diverged = true;
      m.diverged_step = step;
      if (options.log) *options.log << lr_tag(lr, seed) << ": diverged at step " << step << '\n';
      break;
    }
    backward(loss);
    if (config.grad_clip) clip_grad_norm(opt.params(), *config.grad_clip);
    opt.step(lr);

    const int done = step + 1;
    const bool eval_now = done == config.steps || (config.eval_every > 0 && done % config.eval_every == 0);
    if (!eval_now) continue;
    for (std::size_t k = 0; k < eval_lengths.size(); ++k) {
      const Score sc = evaluate(model, eval_sets[k]);
      m.evals.push_back({done, eval_lengths[k], sc});
      m.rows.push_back({done, lr, seed, eval_lengths[k], last_loss, sc.token_acc, sc.string_acc, wall()});
      if (options.log) {
        *options.log << lr_tag(lr, seed) << " step " << done << " len " << eval_lengths[k] << ": loss "
                     << fmt("%.4f", last_loss) << " token_acc " << fmt("%.4f", sc.token_acc) << " string_acc "
                     << fmt("%.4f", sc.string_acc) << '\n';
      }
      if (eval_lengths[k] == config.train_length) {
        const double key = sc.string_acc * 2.0 + sc.token_acc;
        if (key > best_key) {
          best_key = key;
          m.best_step = done;
          if (to_disk) save_checkpoint(model, (fs::path(options.out_dir) / "checkpoint_best.bin").string());
        }
      }
    }
  }
  m.wall_ms = elapsed_ms();
  if (to_disk) {
    std::ostringstream csv;
    write_metrics_csv(csv, m.rows);
    write_text(fs::path(options.out_dir) / "metrics.csv", csv.str());
    save_checkpoint(model, (fs::path(options.out_dir) / "checkpoint.bin").string());
  }
  if (trained) *trained = std::move(model);
  return m;
}

const LrSummary& SweepSummary::best() const {
  for (const auto& s : per_lr)
    if (s.lr == best_lr) return s;
  throw Error("sweep summary has no entry for the best LR");
}

nlohmann::json SweepSummary::to_json() const {
  nlohmann::json j;
  j["best_lr"] = best_lr;
  j["per_lr"] = nlohmann::json::array();
  for (const auto& s : per_lr) {
    nlohmann::json e;
    e["lr"] = s.lr;
    e["diverged"] = s.diverged;
    for (const auto& [len, st] : s.string_acc)
      e["string_acc"][std::to_string(len)] = {{"mean", st.mean}, {"std", st.std}};
    for (const auto& [len, st] : s.token_acc)
      e["token_acc"][std::to_string(len)] = {{"mean", st.mean}, {"std", st.std}};
    j["per_lr"].push_back(e);
  }
  return j;
}

namespace {

LengthStats stats(const std::vector<double>& xs) {
  LengthStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace

SweepSummary summarize(const TrainConfig& config, const std::vector<RunMetrics>& runs) {
  SweepSummary out;
  std::vector<double> lrs = config.lrs;
  std::sort(lrs.begin(), lrs.end());
  lrs.erase(std::unique(lrs.begin(), lrs.end()), lrs.end());
  const auto lengths = config.resolved_eval_lengths();
  double best = -1.0;
  for (double lr : lrs) {
    LrSummary s;
    s.lr = lr;
    for (int len : lengths) {
      std::vector<double> str, tok;
      for (const auto& r : runs) {
        if (r.lr != lr) continue;
        const Score sc = r.final_score(len, config.steps);
        str.push_back(sc.string_acc);
        tok.push_back(sc.token_acc);
      }
      s.string_acc[len] = stats(str);
      s.token_acc[len] = stats(tok);
    }
    for (const auto& r : runs) s.diverged += (r.lr == lr && r.diverged) ? 1 : 0;
    // lrs ascend, so a strict comparison keeps the smaller LR on ties.
    const double key = s.string_acc.count(config.train_length) ? s.string_acc[config.train_length].mean : 0.0;
    if (key > best) {
      best = key;
      out.best_lr = lr;
    }
    out.per_lr.push_back(std::move(s));
  }
  return out;
}

template <typename T>
SweepResult sweep(const TrainConfig& config, const RunOptions& options) {
  config.validate();
  SweepResult res;
  const bool to_disk = !options.out_dir.empty();
  fs::path root;
  if (to_disk) {
    root = fs::path(options.out_dir) / "runs" / config.hash();
    fs::create_directories(root / "maps");
    write_text(root / "config.copy", config.to_json().dump(2) + "\n");
    res.run_dir = root.string();
  }
  for (double lr : config.lrs) {
    for (std::uint64_t seed : config.seeds) {
      RunOptions ro;
      ro.log = options.log;
      if (to_disk) ro.out_dir = (root / lr_tag(lr, seed)).string();
      res.runs.push_back(train<T>(config, lr, seed, ro));
    }
  }
  res.summary = summarize(config, res.runs);
  if (to_disk) {
    std::ostringstream csv;
    csv << kMetricsHeader << '\n';
    for (const auto& r : res.runs) write_metrics_csv(csv, r.rows, false);
    write_text(root / "metrics.csv", csv.str());
    write_text(root / "summary.json", res.summary.to_json().dump(2) + "\n");
    const fs::path best_ckpt = root / lr_tag(res.summary.best_lr, config.seeds.front()) / "checkpoint.bin";
    fs::copy_file(best_ckpt, root / "checkpoint.bin", fs::copy_options::overwrite_existing);
  }
  return res;
}

template Score evaluate<float>(const Model<float>&, const std::vector<TaskSample>&);
template Score evaluate<double>(const Model<double>&, const std::vector<TaskSample>&);
template Score evaluate<float>(const Model<float>&, const TaskSpec&, int, int, int, std::uint64_t);
template Score evaluate<double>(const Model<double>&, const TaskSpec&, int, int, int, std::uint64_t);
template RunMetrics train<float>(const TrainConfig&, double, std::uint64_t, const RunOptions&, Model<float>*);
template RunMetrics train<double>(const TrainConfig&, double, std::uint64_t, const RunOptions&, Model<double>*);
template SweepResult sweep<float>(const TrainConfig&, const RunOptions&);
template SweepResult sweep<double>(const TrainConfig&, const RunOptions&);

}  // namespace mssm
