#include "mssm/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mssm/error.hpp"
#include "mssm/init.hpp"
#include "mssm/model.hpp"
#include "mssm/ops.hpp"
#include "mssm/rng.hpp"
#include "mssm/ssm.hpp"

namespace mssm {

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed; });
}

std::string VerifyReport::to_string() const {
  std::ostringstream out;
  char buf[64];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof(buf), "%.3e", c.measured);
    out << (c.passed ? "  ok    " : "  FAIL  ") << c.name << ": " << buf << " (bound " << c.bound << ")";
    if (!c.worst.empty()) out << " worst: " << c.worst;
    out << '\n';
  }
  out << suite << ": " << (passed() ? "pass" : "FAIL") << " (" << instances << " instances)\n";
  return out.str();
}

namespace {

using Td = Tensor<double>;

Td randn(Shape shape, Rng& rng, double scale = 1.0) {
  Td t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal() * scale;
  return t;
}

std::string fmt_err(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

void track(double err, const std::string& where, double& worst, std::string& worst_where) {
  if (err > worst || std::isnan(err)) {
    worst = err;
    worst_where = where;
  }
}

}  // namespace

double gradient_error(const std::function<Td(const std::vector<Td>&)>& f, std::vector<Td> inputs,
                      std::uint64_t seed, double h, std::size_t* worst_input) {
  for (auto& x : inputs) x.set_requires_grad(true);
  Rng rng(seed);
  const Td out = f(inputs);
  const Td w = randn(out.shape(), rng);
  auto loss_of = [&](const Td& y) { return ops::sum(ops::mul(y, w)); };
  backward(loss_of(out));

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& x = inputs[k];
    std::vector<double> numeric(x.numel());
    {
      NoGradGuard no_grad;
      auto data = x.data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        data[i] = orig + h;
        const double lp = loss_of(f(inputs)).item();
        data[i] = orig - h;
        const double lm = loss_of(f(inputs)).item();
        data[i] = orig;
        numeric[i] = (lp - lm) / (2.0 * h);
      }
    }
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double a = x.has_grad() ? x.grad()[i] : 0.0;
      diff = std::max(diff, std::abs(a - numeric[i]));
      scale = std::max({scale, std::abs(a), std::abs(numeric[i])});
    }
    const double err = scale > 0.0 ? diff / scale : diff;
    if (err > worst || std::isnan(err)) {
      worst = err;
      if (worst_input) *worst_input = k;
    }
  }
  return worst;
}

VerifyReport verify_scan_matrix(int instances, std::uint64_t seed) {
  VerifyReport rep;
  rep.suite = "scan-matrix";
  double worst_plain = 0.0, worst_fused = 0.0, worst_upper = 0.0;
  std::string where_plain, where_fused, where_upper;
  const Rng root(seed);
  for (int inst = 0; inst < instances; ++inst) {
    Rng rng = root.substream(static_cast<std::uint64_t>(inst));
    const auto T = static_cast<std::size_t>(1 + rng.below(64));
    const auto N = static_cast<std::size_t>(1 + rng.below(4));
    const bool per_head = rng.below(2) == 1;
    std::size_t E, G, hd;
    if (per_head) {
      G = static_cast<std::size_t>(1 + rng.below(4));
      hd = static_cast<std::size_t>(1 + rng.below(8 / G));
      E = G * hd;
    } else {
      E = G = static_cast<std::size_t>(1 + rng.below(8));
      hd = 1;
    }
    const DecayKind kind = per_head ? DecayKind::per_head : DecayKind::per_channel;
    Td pre = randn({G, T}, rng);
    const Td delta = ops::softplus(pre);
    const Td a_log = per_head ? randn({G}, rng, 0.5) : randn({E, N}, rng, 0.5);
    const Td b = randn({N, T}, rng), c = randn({N, T}, rng), x = randn({E, T}, rng);
    const auto st = discretize(kind, hd, delta, a_log, b, c);
    const Td y = selective_scan(st, x);
    const Td yf = ops::selective_scan(x, delta, a_log, b, c, T, kind);
    char shapes[96];
    std::snprintf(shapes, sizeof(shapes), "instance %d (seed %llu) %s E=%zu N=%zu T=%zu", inst,
                  static_cast<unsigned long long>(seed), per_head ? "per-head" : "per-channel", E, N, T);
    double err_plain = 0.0, err_fused = 0.0, upper = 0.0;
    for (std::size_t d = 0; d < E; ++d) {
      const Td m = materialize_attention_matrix(st, d);
      for (std::size_t i = 0; i < T; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          acc += m(i, j) * x(d, j);
          if (j > i) upper = std::max(upper, std::abs(m(i, j)));
        }
        err_plain = std::max(err_plain, std::abs(acc - y(d, i)));
        err_fused = std::max(err_fused, std::abs(acc - yf(d, i)));
      }
    }
    track(err_plain, shapes, worst_plain, where_plain);
    track(err_fused, shapes, worst_fused, where_fused);
    track(upper, shapes, worst_upper, where_upper);
    ++rep.instances;
  }
  rep.checks.push_back({"scan vs M X", worst_plain, "1e-10", worst_plain <= 1e-10, where_plain});
  rep.checks.push_back({"fused scan vs M X", worst_fused, "1e-10", worst_fused <= 1e-10, where_fused});
  rep.checks.push_back({"strictly upper entries", worst_upper, "0 exactly", worst_upper == 0.0, where_upper});
  return rep;
}

namespace {

struct GradCase {
  std::string name;
  std::function<Td(const std::vector<Td>&)> f;
  std::vector<Td> inputs;
};

std::vector<GradCase> primitive_cases(Rng& rng) {
  using V = std::vector<Td>;
  std::vector<GradCase> cs;
  auto positive = [&](Shape s) {
    Td t(std::move(s));
    for (auto& v : t.data()) v = 0.5 + rng.uniform();
    return t;
  };
  cs.push_back({"matmul", [](const V& in) { return ops::matmul(in[0], in[1]); },
                {randn({3, 4}, rng), randn({4, 2}, rng)}});
  cs.push_back({"transpose", [](const V& in) { return ops::transpose(in[0]); }, {randn({3, 5}, rng)}});
  cs.push_back({"add", [](const V& in) { return ops::add(in[0], in[1]); }, {randn({3, 4}, rng), randn({3, 4}, rng)}});
  cs.push_back({"add broadcast", [](const V& in) { return ops::add(in[0], in[1]); },
                {randn({3, 4}, rng), randn({3}, rng)}});
  cs.push_back({"mul", [](const V& in) { return ops::mul(in[0], in[1]); }, {randn({3, 4}, rng), randn({3, 4}, rng)}});
  cs.push_back({"mul broadcast", [](const V& in) { return ops::mul(in[0], in[1]); },
                {randn({3, 4}, rng), randn({3}, rng)}});
  cs.push_back({"scale", [](const V& in) { return ops::scale(in[0], 1.7); }, {randn({2, 3}, rng)}});
  cs.push_back({"neg", [](const V& in) { return ops::neg(in[0]); }, {randn({2, 3}, rng)}});
  cs.push_back({"exp", [](const V& in) { return ops::exp(in[0]); }, {randn({2, 3}, rng)}});
  cs.push_back({"log", [](const V& in) { return ops::log(in[0]); }, {positive({2, 3})}});
  cs.push_back({"sigmoid", [](const V& in) { return ops::sigmoid(in[0]); }, {randn({2, 3}, rng, 2.0)}});
  cs.push_back({"silu", [](const V& in) { return ops::silu(in[0]); }, {randn({2, 3}, rng, 2.0)}});
  Td sp = randn({2, 3}, rng, 3.0);
  sp[0] = 31.0;  // overflow branch
  cs.push_back({"softplus", [](const V& in) { return ops::softplus(in[0]); }, {sp}});
  cs.push_back({"sum", [](const V& in) { return ops::sum(in[0]); }, {randn({2, 3}, rng)}});
  cs.push_back({"mean", [](const V& in) { return ops::mean(in[0]); }, {randn({2, 3}, rng)}});
  cs.push_back({"reshape", [](const V& in) { return ops::mul(in[0].reshape({3, 2}), in[1]); },
                {randn({2, 3}, rng), randn({3, 2}, rng)}});
  cs.push_back({"slice_rows", [](const V& in) { return ops::slice_rows(in[0], 1, 2); }, {randn({4, 3}, rng)}});
  cs.push_back({"slice_cols", [](const V& in) { return ops::slice_cols(in[0], 1, 2); }, {randn({3, 4}, rng)}});
  cs.push_back({"concat_rows", [](const V& in) { return ops::concat_rows<double>({in[0], in[1]}); },
                {randn({2, 3}, rng), randn({1, 3}, rng)}});
  cs.push_back({"concat_cols", [](const V& in) { return ops::concat_cols<double>({in[0], in[1]}); },
                {randn({3, 2}, rng), randn({3, 1}, rng)}});
  cs.push_back({"depthwise_conv1d",
                [](const V& in) { return ops::depthwise_conv1d(in[0], in[1], in[2], 4); },
                {randn({3, 8}, rng), randn({3, 3}, rng), randn({3}, rng)}});
  cs.push_back({"softmax_rows", [](const V& in) { return ops::softmax_rows(in[0], false); }, {randn({4, 4}, rng)}});
  cs.push_back({"softmax_rows causal", [](const V& in) { return ops::softmax_rows(in[0], true); },
                {randn({4, 4}, rng)}});
  cs.push_back({"causal_mask", [](const V& in) { return ops::causal_mask(in[0]); }, {randn({4, 4}, rng)}});
  cs.push_back({"rms_norm", [](const V& in) { return ops::rms_norm(in[0], in[1]); },
                {randn({4, 3}, rng), randn({4}, rng)}});
  const std::vector<int> ids{2, 0, 2, 1};
  cs.push_back({"embedding", [ids](const V& in) { return ops::embedding(in[0], ids); }, {randn({3, 2}, rng)}});
  const std::vector<int> targets{1, 0, 3};
  const std::vector<std::uint8_t> mask{1, 0, 1};
  cs.push_back({"cross_entropy", [targets, mask](const V& in) { return ops::cross_entropy(in[0], targets, mask); },
                {randn({3, 4}, rng)}});
  // Scan inputs: delta enters through softplus so that perturbations stay positive.
  cs.push_back({"selective_scan per-channel",
                [](const V& in) {
                  return ops::selective_scan(in[0], ops::softplus(in[1]), in[2], in[3], in[4], 3,
                                             DecayKind::per_channel);
                },
                {randn({2, 6}, rng), randn({2, 6}, rng), randn({2, 3}, rng, 0.5), randn({3, 6}, rng),
                 randn({3, 6}, rng)}});
  cs.push_back({"selective_scan per-head",
                [](const V& in) {
                  return ops::selective_scan(in[0], ops::softplus(in[1]), in[2], in[3], in[4], 3,
                                             DecayKind::per_head);
                },
                {randn({4, 6}, rng), randn({2, 6}, rng), randn({2}, rng, 0.5), randn({3, 6}, rng),
                 randn({3, 6}, rng)}});
  return cs;
}

ModelConfig toy_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.ssm_variant = Variant::mamba2;
  c.n_layers = 2;
  c.d_model = 8;
  c.d_state = 2;
  c.head_dim = 8;
  c.expand = 2;
  c.conv_width = 3;
  c.vocab_size = 5;
  if (v == Variant::hybrid || v == Variant::linear_attn_hybrid) c.attn_layer_index = 1;
  if (v == Variant::hybrid) c.ssm_variant = Variant::mamba1;
  return c;
}

// Returns the worst parameter error of a full model and its name.
std::pair<double, std::string> model_gradient_error(Variant v, std::uint64_t seed) {
  Model<double> model(toy_config(v));
  default_init(model, seed);
  // Move the step-size bias away from the tiny default so that decay terms matter.
  Rng rng = Rng(seed).substream("toy");
  for (auto& [name, p] : model.named_parameters())
    if (name.find("b_delta") != std::string::npos)
      for (auto& x : p.data()) x = rng.normal();
  TokenBatch tb;
  tb.seq_len = 6;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  for (int i = 0; i < 12; ++i) {
    tb.ids.push_back(static_cast<int>(rng.below(5)));
    targets.push_back(static_cast<int>(rng.below(5)));
    mask.push_back(i % 3 == 0 ? 0 : 1);
  }
  auto loss_fn = [&] { return ops::cross_entropy(model.forward(tb), targets, mask); };
  model.zero_grad();
  backward(loss_fn());
  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  for (auto& [name, p] : model.named_parameters()) {
    double diff = 0.0, scale = 0.0;
    NoGradGuard no_grad;
    auto data = p.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double lp = loss_fn().item();
      data[i] = orig - h;
      const double lm = loss_fn().item();
      data[i] = orig;
      const double num = (lp - lm) / (2.0 * h);
      const double a = p.has_grad() ? p.grad()[i] : 0.0;
      diff = std::max(diff, std::abs(a - num));
      scale = std::max({scale, std::abs(a), std::abs(num)});
    }
    const double err = scale > 0.0 ? diff / scale : diff;
    if (err > worst || std::isnan(err)) {
      worst = err;
      worst_name = name;
    }
  }
  return {worst, worst_name};
}

}  // namespace

VerifyReport verify_gradients(std::uint64_t seed) {
  VerifyReport rep;
  rep.suite = "grad";
  Rng rng = Rng(seed).substream("primitives");
  double worst = 0.0;
  std::string where;
  auto cases = primitive_cases(rng);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    std::size_t input = 0;
    const double err = gradient_error(cases[i].f, cases[i].inputs, seed + i, 1e-5, &input);
    track(err, cases[i].name + " input " + std::to_string(input) + " (seed " + std::to_string(seed) + ")", worst,
          where);
    ++rep.instances;
  }
  rep.checks.push_back({"primitives vs finite differences", worst, "1e-4", worst <= 1e-4, where});

  double worst_model = 0.0;
  std::string where_model;
  for (Variant v : {Variant::mamba1, Variant::mamba2, Variant::hybrid, Variant::linear_attn_hybrid}) {
    const auto [err, name] = model_gradient_error(v, seed);
    track(err, to_string(v) + " " + name + " (seed " + std::to_string(seed) + ", D=8 N=2 T=6 V=5)", worst_model,
          where_model);
    ++rep.instances;
  }
  rep.checks.push_back({"2-layer models vs finite differences", worst_model, "1e-3", worst_model <= 1e-3, where_model});
  return rep;
}

namespace {

// Attention matrix of one channel restricted to the state entries in `keep`.
Td restricted_matrix(const DiscretizedState<double>& st, std::size_t d, const std::vector<std::size_t>& keep) {
  DiscretizedState<double> sub;
  sub.kind = DecayKind::per_channel;
  sub.channels = 1;
  sub.state = keep.size();
  sub.length = st.length;
  sub.head_dim = 1;
  const std::size_t T = st.length;
  sub.delta = Td({1, T});
  sub.a_bar = Td({1, keep.size(), T});
  sub.b = Td({keep.size(), T});
  sub.c = Td({keep.size(), T});
  for (std::size_t t = 0; t < T; ++t) {
    sub.delta(0, t) = st.delta(st.group_of(d), t);
    for (std::size_t k = 0; k < keep.size(); ++k) {
      sub.a_bar[k * T + t] = st.a_bar_at(d, keep[k], t);
      sub.b(k, t) = st.b(keep[k], t);
      sub.c(k, t) = st.c(keep[k], t);
    }
  }
  return materialize_attention_matrix(sub, 0);
}

Td select_rows(const Td& w, const std::vector<std::size_t>& rows) {
  Td out({rows.size(), w.cols()});
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t j = 0; j < w.cols(); ++j) out(k, j) = w(rows[k], j);
  return out;
}

}  // namespace

VerifyReport verify_linear_attention_limit(double c, std::uint64_t seed, int seeds) {
  VerifyReport rep;
  rep.suite = "lin-attn-limit";
  const double log2 = std::log(2.0);
  struct Setup {
    Variant variant;
    const char* preset;
  };
  double worst = 0.0, worst_delta = 0.0;
  std::string where, where_delta;
  for (const Setup& setup : {Setup{Variant::mamba1, "mimetic-mamba1"}, Setup{Variant::mamba2, "mimetic-mamba2"}}) {
    ModelConfig cfg;
    cfg.variant = setup.variant;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.d_state = 16;
    cfg.head_dim = 4;
    cfg.vocab_size = 4;
    InitFlags flags = InitFlags::preset(setup.preset);
    flags.c = c;
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t model_seed = seed + static_cast<std::uint64_t>(s);
      Model<double> model(cfg);
      apply_init(flags, model, model_seed);
      const auto& p = std::get<MambaBlock<double>>(model.layers[0]).ssm;
      for (std::size_t T : {1, 8, 16, 32, 64}) {
        Rng rng = Rng(model_seed).substream("probe").substream(T);
        const Td x = randn({p.w_b.cols(), T}, rng);
        // Zero input to the step-size projection: delta = softplus(b_delta).
        Td delta({p.groups(), T});
        for (std::size_t g = 0; g < p.groups(); ++g) {
          const double dt = ops::softplus_value(p.b_delta[g]);
          worst_delta = std::max(worst_delta, std::abs(dt - 1.0));
          for (std::size_t t = 0; t < T; ++t) delta(g, t) = dt;
        }
        const auto st = discretize(p.kind, p.kind == DecayKind::per_head ? p.head_dim : 1, delta, p.a_log,
                                   ops::matmul(p.w_b, x), ops::matmul(p.w_c, x));
        const std::size_t step = p.kind == DecayKind::per_head ? p.head_dim : 1;
        for (std::size_t d = 0; d < st.channels; d += step) {
          std::vector<std::size_t> keep;
          for (std::size_t n = 0; n < st.state; ++n) {
            const double a_log = p.kind == DecayKind::per_head ? p.a_log[d / p.head_dim] : p.a_log(d, n);
            if (-a_log / c >= log2 - 1e-12) keep.push_back(n);
          }
          if (keep.empty()) continue;
          const Td m = restricted_matrix(st, d, keep);
          const Td ref = linear_attention_scores(x, select_rows(p.w_b, keep), select_rows(p.w_c, keep));
          double diff = 0.0, scale = 0.0;
          for (std::size_t i = 0; i < m.numel(); ++i) {
            diff = std::max(diff, std::abs(m[i] - ref[i]));
            scale = std::max(scale, std::abs(ref[i]));
          }
          const double err = scale > 0.0 ? diff / scale : diff;
          track(err,
                std::string(setup.preset) + " seed " + std::to_string(model_seed) + " T=" + std::to_string(T) +
                    " channel " + std::to_string(d) + " (" + std::to_string(keep.size()) + " state entries)",
                worst, where);
          ++rep.instances;
        }
      }
    }
  }
  rep.checks.push_back({"softplus(b_delta) - 1", worst_delta, "1e-6", worst_delta <= 1e-6, where_delta});
  rep.checks.push_back({"max |M - S| / max |S|", worst, "1e-2", worst <= 1e-2, where});
  return rep;
}

VerifyReport verify_init_stats(int seeds, std::uint64_t seed) {
  VerifyReport rep;
  rep.suite = "init-stats";
  ModelConfig cfg;
  cfg.variant = Variant::mamba2;
  cfg.n_layers = 1;
  cfg.d_model = 128;
  cfg.d_state = 32;
  cfg.head_dim = 64;
  cfg.vocab_size = 4;

  double worst_delta = 0.0;
  std::string where_delta;
  double cos_sum = 0.0, diag_sum = 0.0, off_sum = 0.0;
  std::size_t cos_n = 0, diag_n = 0, off_n = 0;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t ms = seed + static_cast<std::uint64_t>(s);
    Model<double> model(cfg);
    apply_init(InitFlags::preset("mimetic-mamba2"), model, ms);
    const auto& p = std::get<MambaBlock<double>>(model.layers[0]).ssm;
    for (std::size_t g = 0; g < p.groups(); ++g)
      track(std::abs(ops::softplus_value(p.b_delta[g]) - 1.0), "seed " + std::to_string(ms), worst_delta,
            where_delta);
    const std::size_t N = p.w_b.rows(), D = p.w_b.cols();
    for (std::size_t n = 0; n < N; ++n) {
      double dot = 0.0, nb = 0.0, nc = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        dot += p.w_b(n, j) * p.w_c(n, j);
        nb += p.w_b(n, j) * p.w_b(n, j);
        nc += p.w_c(n, j) * p.w_c(n, j);
      }
      cos_sum += dot / std::sqrt(nb * nc);
      ++cos_n;
    }
    const Td gram = ops::matmul(ops::transpose(p.w_c), p.w_b);
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) {
        if (i == j) {
          diag_sum += gram(i, j);
          ++diag_n;
        } else {
          off_sum += gram(i, j);
          ++off_n;
        }
      }
    ++rep.instances;
  }
  const double cos_mean = cos_sum / static_cast<double>(cos_n);
  const double diag_mean = diag_sum / static_cast<double>(diag_n);
  const double off_mean = off_sum / static_cast<double>(off_n);
  const double off_bound = 3.0 / std::sqrt(32.0 * 128.0);
  rep.checks.push_back({"softplus(b_delta) - 1", worst_delta, "1e-6", worst_delta <= 1e-6, where_delta});
  rep.checks.push_back({"W_C/W_B row cosine mean", cos_mean, "[0.65, 0.76]", cos_mean >= 0.65 && cos_mean <= 0.76,
                        std::to_string(seeds) + " seeds, N=32 D=128"});
  rep.checks.push_back({"W_C^T W_B diagonal mean", diag_mean, "[0.4, 0.6]", diag_mean >= 0.4 && diag_mean <= 0.6, ""});
  rep.checks.push_back({"|W_C^T W_B off-diagonal mean|", std::abs(off_mean), fmt_err(off_bound),
                        std::abs(off_mean) <= off_bound, ""});

  // Identity convolution reproduces its input bit for bit.
  {
    ModelConfig c1 = cfg;
    c1.d_model = 16;
    c1.head_dim = 8;
    Model<double> model(c1);
    apply_init(InitFlags::preset("mimetic-mamba2"), model, seed);
    const auto& p = std::get<MambaBlock<double>>(model.layers[0]).ssm;
    Rng rng = Rng(seed).substream("conv-probe");
    const Td x = randn({p.conv_kernel.rows(), 24}, rng);
    const Td y = ops::depthwise_conv1d(x, p.conv_kernel, p.conv_bias, 12);
    double mismatch = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) mismatch = std::max(mismatch, std::abs(y[i] - x[i]));
    rep.checks.push_back({"identity conv |y - x|", mismatch, "0 exactly", mismatch == 0.0, ""});
  }

  // Default step sizes at zero input lie in the LogUniform(1e-3, 1e-1) support.
  {
    double lo = 1.0, hi = 0.0;
    for (Variant v : {Variant::mamba1, Variant::mamba2}) {
      ModelConfig c1 = cfg;
      c1.variant = v;
      c1.d_model = 32;
      c1.head_dim = 8;
      Model<double> model(c1);
      default_init(model, seed);
      const auto& p = std::get<MambaBlock<double>>(model.layers[0]).ssm;
      for (double b : p.b_delta.data()) {
        const double dt = ops::softplus_value(b);
        lo = std::min(lo, dt);
        hi = std::max(hi, dt);
      }
    }
    const bool ok = lo > 0.9e-3 && hi < 0.11;
    rep.checks.push_back({"default delta range (max)", hi, "(0.9e-3, 0.11)", ok, "min " + fmt_err(lo)});
  }
  return rep;
}

std::vector<std::string> verify_modes() { return {"grad", "scan-matrix", "lin-attn-limit", "init-stats"}; }

VerifyReport run_verify(const std::string& mode, std::uint64_t seed) {
  if (mode == "grad") return verify_gradients(seed);
  if (mode == "scan-matrix") return verify_scan_matrix(100, seed);
  if (mode == "lin-attn-limit") return verify_linear_attention_limit(8.0, seed);
  if (mode == "init-stats") return verify_init_stats(20, seed);
  throw ConfigError("mode", "unknown verify mode '" + mode + "' (grad, scan-matrix, lin-attn-limit, init-stats)");
}

}  // namespace mssm
