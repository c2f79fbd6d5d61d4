// SPDX-License-Identifier: Apache-2.0

#include "mcf/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mcf/ctc.hpp"
#include "mcf/encoder.hpp"

namespace mcf {

GradCheckResult check_gradients(const std::string& name, const std::function<TensorD()>& loss,
                                const std::vector<TensorD>& inputs, const GradCheckOptions& opts) {
  std::vector<TensorD> xs = inputs;
  for (auto& x : xs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(loss());
  }
  GradCheckResult r;
  r.name = name;
  for (auto& x : xs) {
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double orig = x.at(i);
      x.at(i) = orig + opts.step;
      const double up = loss().item();
      x.at(i) = orig - opts.step;
      const double down = loss().item();
      x.at(i) = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double diff = std::abs(analytic[i] - numeric);
      const double denom = std::max(std::abs(analytic[i]), std::abs(numeric));
      const double rel = denom > 0 ? diff / denom : 0.0;
      ++r.checked;
      r.max_abs_error = std::max(r.max_abs_error, diff);
      if (diff >= opts.abs_floor) {
        r.max_rel_error = std::max(r.max_rel_error, rel);
        if (!(rel < opts.tolerance)) r.passed = false;
      }
    }
    x.zero_grad();
  }
  return r;
}

bool GradSuiteReport::passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed; });
}

double GradSuiteReport::max_rel_error() const {
  double m = 0;
  for (const auto& c : cases) m = std::max(m, c.max_rel_error);
  return m;
}

namespace {

using D = double;

constexpr FusionKind kFusions[] = {FusionKind::Sum, FusionKind::Weighted, FusionKind::Concat,
                                   FusionKind::Depth};

template <class P>
std::vector<TensorD> params_of(P& p) {
  std::vector<TensorD> v;
  p.visit("", [&](const std::string&, auto& t) { v.push_back(t); });
  return v;
}

std::vector<TensorD> join(std::vector<TensorD> a, const std::vector<TensorD>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

class Suite {
 public:
  Suite(std::uint64_t seed, const GradCheckOptions& opts,
        const std::function<void(const GradCheckResult&)>& on_case)
      : rng_(seed), opts_(opts), on_case_(on_case) {}

  std::size_t pick(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  TensorD input(Shape shape) { return uniform_tensor<D>(std::move(shape), 1.0, rng_); }

  // Values bounded away from zero, for ops with a kink there.
  TensorD input_off_zero(Shape shape) {
    auto t = input(std::move(shape));
    for (auto& v : t.data()) v = v < 0 ? v - 0.1 : v + 0.1;
    return t;
  }

  // Scalar probe: sum of the output against fixed random weights.
  template <class F>
  void add(const std::string& name, const std::vector<TensorD>& inputs, F&& forward) {
    auto probe = std::make_shared<TensorD>();
    auto loss = [&, probe]() -> TensorD {
      TensorD out = forward();
      if (!probe->defined()) *probe = uniform_tensor<D>(out.shape(), 1.0, rng_, false);
      return weighted_sum(out, *probe);
    };
    auto r = check_gradients(name, loss, inputs, opts_);
    if (on_case_) on_case_(r);
    report_.cases.push_back(std::move(r));
  }

  Rng& rng() { return rng_; }
  GradSuiteReport& report() { return report_; }

 private:
  Rng rng_;
  GradCheckOptions opts_;
  std::function<void(const GradCheckResult&)> on_case_;
  GradSuiteReport report_;
};

EncoderConfig small_layer_config(Suite& s, ConvBlockKind block, FusionKind fusion) {
  EncoderConfig cfg;
  cfg.num_layers = 1;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_ffn = 12;
  cfg.conv_block = block;
  cfg.fusion = fusion;
  cfg.dropout = 0.1;
  cfg.feature_dim = 12;
  cfg.vocab_size = 3;
  // P = 2 or 4 with d' = 12 divisible by both.
  cfg.d_inter = 24;
  cfg.kernels = s.pick(0, 1) ? std::vector<std::size_t>{3, 5} : std::vector<std::size_t>{1, 3, 5, 7};
  cfg.seed = s.pick(0, 1000);
  return cfg;
}

void one_round(Suite& s) {
  const std::size_t t = s.pick(2, 6), c = s.pick(2, 5), n = s.pick(2, 4);

  // ---- tensor ops ----
  {
    auto a = s.input({t, c}), b = s.input({c, n});
    s.add("matmul", {a, b}, [=] { return matmul(a, b); });
    auto a3 = s.input({2, t, c});
    s.add("matmul_batched", {a3, b}, [=] { return matmul(a3, b); });
    auto b3 = s.input({2, c, n});
    s.add("matmul_batched_both", {a3, b3}, [=] { return matmul(a3, b3); });
    s.add("transpose", {a}, [=] { return transpose(a); });
  }
  {
    auto a = s.input({t, c}), b = s.input({t, c});
    s.add("add", {a, b}, [=] { return add(a, b); });
    s.add("sub", {a, b}, [=] { return sub(a, b); });
    s.add("mul", {a, b}, [=] { return mul(a, b); });
    s.add("mul_shared_input", {a}, [=] { return mul(a, a); });
    const double f = 0.5 + static_cast<double>(s.pick(0, 10)) / 7.0;
    s.add("scale", {a}, [=] { return scale(a, f); });
    s.add("add_scalar", {a}, [=] { return add_scalar(a, f); });
    auto bias = s.input({c});
    s.add("add_bias", {a, bias}, [=] { return add_bias(a, bias); });
    auto col = s.input({t, 1});
    s.add("expand_channels", {col}, [=] { return expand_channels(col, c); });
  }
  {
    auto a = s.input({t, 2 * c});
    const std::size_t cut = s.pick(1, 2 * c - 1);
    s.add("split_channels", {a}, [=] {
      auto [l, r] = split_channels(a, cut);
      return concat_channels(std::vector<TensorD>{r, scale(l, 2.0)});
    });
    s.add("slice_channels", {a}, [=] { return slice_channels(a, cut / 2, cut + 1); });
    auto b = s.input({t, c});
    s.add("concat_channels", {a, b}, [=] { return concat_channels(std::vector<TensorD>{b, a, b}); });
    s.add("reshape", {a}, [=] { return reshape(a, {2 * c, t}); });
    s.add("sum", {a}, [=] { return sum(a); });
    s.add("mean", {a}, [=] { return mean(a); });
  }
  {
    auto a = s.input_off_zero({t, c});
    s.add("relu", {a}, [=] { return relu(a); });
    auto b = s.input({t, c});
    s.add("sigmoid", {b}, [=] { return sigmoid(b); });
    s.add("gelu", {b}, [=] { return gelu(b); });
    s.add("swish", {b}, [=] { return swish(b); });
    s.add("softmax", {b}, [=] { return softmax(b); });
    s.add("log_softmax", {b}, [=] { return log_softmax(b); });
    s.add("dropout", {b}, [=] {
      Rng local(17);
      return dropout(b, 0.3, true, local);
    });
  }

  // ---- nn layers ----
  {
    auto x = s.input({t, c});
    auto lin = LinearParams<D>::create(c, n, s.rng());
    s.add("linear", join({x}, params_of(lin)), [=] { return linear(x, lin); });
    auto ln = LayerNormParams<D>::create(c);
    for (auto& v : ln.gamma.data()) v += 0.3 * (static_cast<double>(s.pick(0, 10)) / 10.0 - 0.5);
    for (auto& v : ln.beta.data()) v = static_cast<double>(s.pick(0, 10)) / 10.0 - 0.5;
    s.add("layer_norm", join({x}, params_of(ln)), [=] { return layer_norm(x, ln); });
  }
  {
    const std::size_t k = 2 * s.pick(0, 3) + 1;
    auto x = s.input({t, c});
    auto dw = DepthwiseConvParams<D>::create(c, k, s.rng());
    s.add("depthwise_conv1d_k" + std::to_string(k), join({x}, params_of(dw)),
          [=] { return depthwise_conv1d(x, dw); });
    const std::size_t groups = s.pick(1, 3), per = s.pick(1, 3);
    auto xg = s.input({t, groups * per});
    auto gc = GroupedConvParams<D>::create(groups * per, groups, k, s.rng());
    s.add("grouped_conv1d_k" + std::to_string(k), join({xg}, params_of(gc)),
          [=] { return grouped_conv1d(xg, gc); });
  }
  {
    const std::size_t cin = s.pick(1, 2), cout = s.pick(1, 3);
    auto x = s.input({cin, s.pick(3, 8), s.pick(3, 8)});
    auto conv = Conv2dParams<D>::create(cin, cout, s.rng());
    s.add("conv2d_stride2", join({x}, params_of(conv)), [=] { return conv2d_stride2(x, conv); });
    s.add("channels_to_frames", {x}, [=] { return channels_to_frames(x); });
    const std::size_t feat = s.pick(7, 10), d = s.pick(2, 4);
    auto feats = s.input({s.pick(7, 12), feat});
    auto sub = SubsamplerParams<D>::create(feat, d, s.rng());
    s.add("subsample", join({feats}, params_of(sub)), [=] { return subsample(feats, sub); });
  }
  {
    const std::size_t heads = s.pick(1, 2), d = heads * s.pick(1, 3);
    auto x = s.input({t, d});
    auto mha = MhaParams<D>::create(d, heads, s.rng());
    s.add("mha_h" + std::to_string(heads), join({x}, params_of(mha)),
          [=] { return mha_forward(x, mha, false).output; });
  }

  // ---- gating units and conv blocks ----
  for (auto fusion : kFusions) {
    static const std::vector<std::size_t> sets[] = {{3}, {1, 3}, {3, 5}, {1, 3, 5, 7}};
    const auto& kernels = sets[s.pick(0, 3)];
    const std::size_t pp = kernels.size();
    const std::size_t d_prime = pp * s.pick(1, 2);
    auto mc = McsguParams<D>::create(2 * d_prime, kernels, fusion, 0, s.rng());
    auto a_hat = s.input({t, 2 * d_prime});
    s.add("mcsgu_" + to_string(fusion) + "_p" + std::to_string(pp), join({a_hat}, params_of(mc)),
          [=] { return mcsgu_forward(a_hat, mc).output; });
  }
  {
    const std::size_t k = 2 * s.pick(0, 3) + 1, d_prime = s.pick(2, 4);
    auto a_hat = s.input({t, 2 * d_prime});
    auto dw = DepthwiseConvParams<D>::create(d_prime, k, s.rng());
    auto ln = LayerNormParams<D>::create(d_prime);
    s.add("csgu", join({a_hat}, join(params_of(dw), params_of(ln))),
          [=] { return csgu_forward(a_hat, dw, ln); });
  }
  {
    const std::size_t d = s.pick(2, 4);
    auto x = s.input({t, d});
    const auto fusion = kFusions[s.pick(0, 3)];
    auto block = MultiConvBlockParams<D>::create(d, 8, {1, 3}, fusion, 0, 0.1, s.rng());
    s.add("multiconv_block_" + to_string(fusion), join({x}, params_of(block)), [=] {
      Rng local(5);
      return multiconv_block_forward(x, block, true, local).output;
    });
    auto csgu = CsguBlockParams<D>::create(d, 6, 3, 0.1, s.rng());
    s.add("csgu_block", join({x}, params_of(csgu)), [=] {
      Rng local(6);
      return csgu_block_forward(x, csgu, true, local);
    });
    auto conformer = ConformerConvParams<D>::create(d, 3, 0.1, s.rng());
    s.add("conformer_conv", join({x}, params_of(conformer)), [=] {
      Rng local(7);
      return conformer_conv_forward(x, conformer, true, local);
    });
  }

  // ---- encoder layer ----
  const std::pair<ConvBlockKind, FusionKind> layer_kinds[] = {
      {ConvBlockKind::MultiConv, FusionKind::Sum},    {ConvBlockKind::MultiConv, FusionKind::Weighted},
      {ConvBlockKind::MultiConv, FusionKind::Concat}, {ConvBlockKind::MultiConv, FusionKind::Depth},
      {ConvBlockKind::Csgu, FusionKind::Depth},       {ConvBlockKind::Conformer, FusionKind::Depth}};
  for (const auto& [block, fusion] : layer_kinds) {
    const auto cfg = small_layer_config(s, block, fusion);
    Rng init(cfg.seed);
    auto layer = EncoderLayerParams<D>::create(cfg, init);
    auto x = s.input({t, cfg.d_model});
    const std::string name = "encoder_layer_" + to_string(block) +
                             (block == ConvBlockKind::MultiConv ? "_" + to_string(fusion) : "");
    s.add(name, join({x}, params_of(layer)), [=] {
      Rng local(9);
      return encoder_layer_forward(x, layer, 0, ForwardOptions{true, false}, local);
    });
  }

  // ---- CTC ----
  {
    const std::size_t v = s.pick(2, 4), frames = s.pick(3, 7);
    std::vector<int> target;
    const std::size_t m = s.pick(1, 3);
    for (std::size_t i = 0; i < m; ++i) target.push_back(static_cast<int>(s.pick(1, v)));
    while (ctc_min_frames(target) > frames) target.pop_back();
    auto logits = s.input({frames, v + 1});
    s.add("ctc_loss", {logits}, [=] { return ctc_loss(logits, target).loss; });
  }

  // ---- full encoder with CTC head ----
  {
    auto cfg = small_layer_config(s, ConvBlockKind::MultiConv, kFusions[s.pick(0, 3)]);
    auto model = EncoderParams<D>::create(cfg);
    auto feats = s.input({s.pick(16, 20), cfg.feature_dim});
    const std::vector<int> target{1, static_cast<int>(s.pick(1, cfg.vocab_size))};
    std::vector<TensorD> params;
    model.visit([&](const std::string&, auto& p) { params.push_back(p); });
    s.add("encoder_ctc_" + to_string(cfg.fusion), join({feats}, params), [=] {
      Rng local(11);
      auto out = encoder_forward(feats, model, ForwardOptions{true, false}, local);
      return ctc_loss(ctc_logits(out.hidden, model), target).loss;
    });
  }
}

}  // namespace

GradSuiteReport run_grad_suite(std::uint64_t seed, std::size_t repeats, const GradCheckOptions& opts,
                               const std::function<void(const GradCheckResult&)>& on_case) {
  const auto start = std::chrono::steady_clock::now();
  Suite s(seed, opts, on_case);
  for (std::size_t r = 0; r < repeats; ++r) one_round(s);
  auto report = std::move(s.report());
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace mcf
