// SPDX-License-Identifier: Apache-2.0

#include "mcf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "mcf/config.hpp"
#include "mcf/ctc.hpp"
#include "mcf/optimizer.hpp"

namespace mcf {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  encoder.validate();
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train: " + what);
  };
  require(batch_size > 0, "batch_size must be positive");
  require(steps > 0, "steps must be positive");
  require(learning_rate >= 0 && std::isfinite(learning_rate), "learning_rate must be finite and >= 0");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
  require(eps > 0, "eps must be positive");
  require(grad_clip > 0, "grad_clip must be positive");
  require(eval_interval > 0, "eval_interval must be positive");
}

std::string to_jsonl(const MetricsRecord& r) {
  return json{{"step", r.step},
              {"train_loss", r.train_loss},
              {"dev_loss", r.dev_loss},
              {"dev_ter", r.dev_ter},
              {"seconds", r.seconds}}
      .dump();
}

MetricsRecord metrics_from_jsonl(const std::string& line) {
  try {
    const auto j = json::parse(line);
    return {j.at("step").get<std::size_t>(), j.at("train_loss").get<double>(), j.at("dev_loss").get<double>(),
            j.at("dev_ter").get<double>(), j.at("seconds").get<double>()};
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed metrics line: ") + e.what());
  }
}

bool ctc_feasible(const Utterance& u) {
  return u.frames >= min_subsample_input && !u.tokens.empty() &&
         subsampled_length(u.frames) >= ctc_min_frames(u.tokens);
}

template <typename T>
EvalReport evaluate(const EncoderParams<T>& model, const Split& split, std::size_t data_vocab_size) {
  const auto& cfg = model.config;
  if (split.utterances.empty()) throw InputError("split '" + split.name + "' is empty");
  if (data_vocab_size != cfg.vocab_size) {
    throw ContractError("data vocabulary " + std::to_string(data_vocab_size) + " does not match model vocabulary " +
                        std::to_string(cfg.vocab_size));
  }
  EvalReport rep;
  double loss_sum = 0;
  std::size_t loss_count = 0;
  Rng rng(0);
  for (const auto& u : split.utterances) {
    EvalRow row{u.id, u.tokens, {}, 0};
    if (u.frames >= min_subsample_input) {
      auto out = encoder_forward(u.feature_tensor<T>(cfg.feature_dim), model, ForwardOptions{}, rng);
      auto logits = ctc_logits(out.hidden, model);
      row.hypothesis = ctc_greedy_decode(LogProbLattice::from_logits(logits));
      const auto res = ctc_loss(logits, u.tokens);
      if (res.feasible) {
        loss_sum += static_cast<double>(res.loss.item());
        ++loss_count;
      } else {
        ++rep.infeasible;
      }
    } else {
      ++rep.infeasible;
    }
    row.distance = edit_distance(row.hypothesis, row.reference).distance;
    rep.edits += row.distance;
    rep.reference_tokens += row.reference.size();
    ++rep.utterances;
    rep.rows.push_back(std::move(row));
  }
  rep.ter = rep.reference_tokens ? static_cast<double>(rep.edits) / static_cast<double>(rep.reference_tokens)
                                 : (rep.edits ? std::numeric_limits<double>::infinity() : 0.0);
  rep.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : std::numeric_limits<double>::infinity();
  return rep;
}

void write_eval_csv(std::ostream& os, const EvalReport& report) {
  const auto join = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
    return s;
  };
  os << "id,reference,hypothesis,distance,ref_length\n";
  for (const auto& r : report.rows) {
    os << r.id << ',' << join(r.reference) << ',' << join(r.hypothesis) << ',' << r.distance << ','
       << r.reference.size() << '\n';
  }
}

namespace {

std::vector<Tensor<float>> parameter_list(EncoderParams<float>& model) {
  std::vector<Tensor<float>> v;
  for (auto& [name, t] : named_parameters(model)) v.push_back(t);
  return v;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const SyntheticDataset& data, const LogFn& log) {
  cfg.validate();
  const auto& enc = cfg.encoder;
  if (enc.feature_dim != data.spec.feature_dim || enc.vocab_size != data.spec.vocab_size) {
    throw ConfigError("encoder expects feature_dim " + std::to_string(enc.feature_dim) + " / vocab " +
                      std::to_string(enc.vocab_size) + ", data has " + std::to_string(data.spec.feature_dim) +
                      " / " + std::to_string(data.spec.vocab_size));
  }
  const auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.train.utterances.size(); ++i)
    if (ctc_feasible(data.train.utterances[i])) usable.push_back(i);
  TrainResult result{EncoderParams<float>::create(enc), {}, 0, 0.0, 0, 0, 0.0};
  result.skipped_utterances = data.train.utterances.size() - usable.size();
  if (result.skipped_utterances) {
    say("warning: skipped " + std::to_string(result.skipped_utterances) +
        " training utterances too short for their CTC targets");
  }
  if (usable.empty()) throw InputError("no feasible training utterances");
  if (data.dev.utterances.empty()) throw InputError("dev split is empty");

  fs::path out_dir = cfg.output_dir;
  std::ofstream metrics_file;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    save_run_config(out_dir / "config.json", RunConfig{cfg, data.spec});
    metrics_file.open(out_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics_file) throw InputError("cannot write " + (out_dir / "metrics.jsonl").string());
  }

  auto model = EncoderParams<float>::create(enc);
  const auto params = parameter_list(model);
  Adam<float> adam(params, AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps});

  std::seed_seq order_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 1u};
  std::seed_seq dropout_seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 2u};
  Rng order_rng(order_seq), dropout_rng(dropout_seq);
  std::vector<std::size_t> order = usable;
  std::size_t cursor = order.size();

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  double best_ter = std::numeric_limits<double>::infinity(), best_loss = best_ter;
  double loss_accum = 0;
  std::size_t loss_batches = 0;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<std::size_t> batch;
    while (batch.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    adam.zero_grad();
    Tape<float> tape;
    double batch_loss = 0;
    {
      TapeScope<float> scope(tape);
      Tensor<float> total;
      for (std::size_t idx : batch) {
        const auto& u = data.train.utterances[idx];
        auto out = encoder_forward(u.feature_tensor<float>(enc.feature_dim), model, ForwardOptions{true, false},
                                   dropout_rng);
        auto res = ctc_loss(ctc_logits(out.hidden, model), u.tokens);
        const double v = res.loss.item();
        if (!std::isfinite(v)) {
          std::string ids;
          for (std::size_t j : batch) ids += (ids.empty() ? "" : ",") + data.train.utterances[j].id;
          throw NumericError("non-finite loss at step " + std::to_string(step) + " on " + u.id +
                             " (batch: " + ids + ")");
        }
        batch_loss += v;
        total = total.defined() ? add(total, res.loss) : res.loss;
      }
      tape.backward(scale(total, 1.0f / static_cast<float>(batch.size())));
    }
    clip_grad_norm(params, cfg.grad_clip);
    adam.step();
    loss_accum += batch_loss / static_cast<double>(batch.size());
    ++loss_batches;
    result.steps_run = step;

    if (step % cfg.eval_interval == 0 || step == cfg.steps) {
      const auto dev = evaluate(model, data.dev, data.spec.vocab_size);
      MetricsRecord rec{step, loss_accum / static_cast<double>(loss_batches), dev.mean_loss, dev.ter, elapsed()};
      loss_accum = 0;
      loss_batches = 0;
      result.metrics.push_back(rec);
      if (metrics_file.is_open()) metrics_file << to_jsonl(rec) << std::endl;
      say("step " + std::to_string(step) + " train_loss " + std::to_string(rec.train_loss) + " dev_loss " +
          std::to_string(rec.dev_loss) + " dev_ter " + std::to_string(rec.dev_ter));
      if (dev.ter < best_ter || (dev.ter == best_ter && dev.mean_loss < best_loss)) {
        best_ter = dev.ter;
        best_loss = dev.mean_loss;
        result.best_step = step;
        copy_parameters(model, result.best);
        if (!out_dir.empty()) save_checkpoint(out_dir / "best.ckpt", result.best);
      }
      if (cfg.early_stop_ter >= 0 && dev.ter <= cfg.early_stop_ter) {
        say("dev TER " + std::to_string(dev.ter) + " reached the early-stop target at step " + std::to_string(step));
        break;
      }
    }
  }
  if (!out_dir.empty()) save_checkpoint(out_dir / "final.ckpt", model);
  result.best_dev_ter = best_ter;
  result.seconds = elapsed();
  return result;
}

template EvalReport evaluate<float>(const EncoderParams<float>&, const Split&, std::size_t);
template EvalReport evaluate<double>(const EncoderParams<double>&, const Split&, std::size_t);

}  // namespace mcf
