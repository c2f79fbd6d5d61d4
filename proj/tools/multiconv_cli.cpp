// SPDX-License-Identifier: Apache-2.0
//
// multiconv: data generation, training, evaluation and analysis of
// Multi-Convformer encoders on the synthetic task.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "mcf/analysis.hpp"
#include "mcf/config.hpp"
#include "mcf/gradcheck.hpp"
#include "mcf/train.hpp"

namespace fs = std::filesystem;
using namespace mcf;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string fusion;
  std::vector<std::size_t> kernels;
  std::string conv_block;
};

void add_model_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config with encoder/train/data sections")->check(CLI::ExistingFile);
  cmd->add_option("--fusion", c.fusion, "Fusion of the kernel outputs")
      ->check(CLI::IsMember({"sum", "weighted", "concat", "depth"}));
  cmd->add_option("--kernels", c.kernels, "Comma-separated odd kernel sizes, e.g. 7,15,23,31")->delimiter(',');
  cmd->add_option("--conv-block", c.conv_block, "Convolution block")
      ->check(CLI::IsMember({"multiconv", "csgu", "conformer"}));
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  auto& enc = cfg.train.encoder;
  if (!c.fusion.empty()) enc.fusion = parse_fusion(c.fusion);
  if (!c.kernels.empty()) enc.kernels = c.kernels;
  if (!c.conv_block.empty()) enc.conv_block = parse_conv_block(c.conv_block);
  enc.validate();
  return cfg;
}

fs::path default_config_for(const fs::path& checkpoint) { return checkpoint.parent_path() / "config.json"; }

EncoderParams<float> load_model(const std::string& checkpoint, const std::string& config) {
  const fs::path cfg_path = config.empty() ? default_config_for(checkpoint) : fs::path(config);
  const auto cfg = load_run_config(cfg_path);
  auto model = EncoderParams<float>::create(cfg.train.encoder);
  load_checkpoint(checkpoint, model);
  return model;
}

std::vector<Tensor<float>> features_of(const Split& split, std::size_t feature_dim) {
  std::vector<Tensor<float>> v;
  for (const auto& u : split.utterances)
    if (u.frames >= min_subsample_input) v.push_back(u.feature_tensor<float>(feature_dim));
  return v;
}

void print_param_table(std::ostream& os, const EncoderConfig& cfg, const ParamCount& pc) {
  os << "config: conv_block=" << to_string(cfg.conv_block) << " fusion=" << to_string(cfg.fusion)
     << " d=" << cfg.d_model << " N=" << cfg.num_layers << " d_inter=" << cfg.inter_dim() << " kernels=";
  for (std::size_t i = 0; i < cfg.kernels.size(); ++i) os << (i ? "," : "") << cfg.kernels[i];
  os << "\n\n" << std::left << std::setw(28) << "block" << std::right << std::setw(14) << "params" << '\n';
  for (const auto& [name, n] : pc.blocks) os << std::left << std::setw(28) << name << std::right << std::setw(14) << n << '\n';
  os << std::left << std::setw(28) << "total" << std::right << std::setw(14) << pc.total << '\n';
}

// Writes to `path`, or stdout when empty.
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path);
  write(os);
  if (!os) throw InputError("failed writing " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-Convformer encoder toolkit"};
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);

  // gen-data
  Common gen;
  bool force = false;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen_cmd->add_option("--config", gen.config, "JSON config (data section)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--seed", gen.seed, "Master data seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_flag("--force", force, "Overwrite an existing directory");

  // train
  Common tr;
  std::string train_data;
  std::optional<std::size_t> train_steps;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train an encoder with CTC");
  add_model_flags(train_cmd, tr);
  train_cmd->add_option("--seed", tr.seed, "Seed for initialization, batch order and dropout");
  train_cmd->add_option("--out", tr.out, "Run directory (config, metrics, checkpoints)");
  train_cmd->add_option("--data", train_data, "Dataset directory; generated from the config when omitted");
  train_cmd->add_option("--steps", train_steps, "Number of optimizer steps");
  train_cmd->add_flag("--quiet", quiet, "Suppress progress lines");

  // eval
  std::string eval_ckpt, eval_data, eval_split = "dev", eval_csv, eval_config;
  auto* eval_cmd = app.add_subcommand("eval", "Token error rate of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", eval_split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cmd->add_option("--config", eval_config, "Run config (default: config.json beside the checkpoint)");
  eval_cmd->add_option("--out", eval_csv, "Per-utterance CSV");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Attention and gate diagnostics");
  analyze->require_subcommand(1);
  std::string an_ckpt, an_data, an_split = "dev", an_out, an_config;
  const auto analysis_flags = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", an_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", an_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--split", an_split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
    cmd->add_option("--config", an_config, "Run config (default: config.json beside the checkpoint)");
    cmd->add_option("--out", an_out, "CSV output (default: stdout)");
  };
  auto* diag_cmd = analyze->add_subcommand("diagonality", "Per-layer attention diagonality");
  analysis_flags(diag_cmd);
  auto* gate_cmd = analyze->add_subcommand("gate-importance", "Per-layer kernel importance (weighted fusion)");
  analysis_flags(gate_cmd);

  // param-count
  Common pc;
  bool compare = false;
  auto* pc_cmd = app.add_subcommand("param-count", "Parameter totals per block");
  add_model_flags(pc_cmd, pc);
  pc_cmd->add_flag("--compare", compare,
                   "Compare all fusions and baselines against the closed-form block counts");

  // grad-check
  std::uint64_t gc_seed = 0;
  std::size_t gc_repeats = 3;
  bool gc_verbose = false;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  gc_cmd->add_option("--seed", gc_seed, "Suite seed");
  gc_cmd->add_option("--repeats", gc_repeats, "Randomized configurations per case")->check(CLI::PositiveNumber);
  gc_cmd->add_flag("--verbose", gc_verbose, "Print every case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen_cmd) {
      RunConfig cfg = gen.config.empty() ? RunConfig{} : load_run_config(gen.config);
      if (gen.seed) cfg.data.seed = *gen.seed;
      cfg.data.validate();
      const auto ds = generate_dataset(cfg.data);
      write_dataset(ds, gen.out, force);
      std::cout << "wrote " << ds.train.utterances.size() << " train, " << ds.dev.utterances.size() << " dev, "
                << ds.test.utterances.size() << " test utterances to " << gen.out << '\n';
    } else if (*train_cmd) {
      RunConfig cfg = resolve(tr);
      if (tr.seed) {
        cfg.train.seed = *tr.seed;
        cfg.train.encoder.seed = *tr.seed;
      }
      if (!tr.out.empty()) cfg.train.output_dir = tr.out;
      if (train_steps) cfg.train.steps = *train_steps;
      cfg.train.validate();
      const auto ds = train_data.empty() ? generate_dataset(cfg.data) : load_dataset(train_data);
      const auto result = train(cfg.train, ds, [&](const std::string& line) {
        if (!quiet || line.rfind("warning", 0) == 0) std::cerr << line << '\n';
      });
      std::cout << "best dev TER " << result.best_dev_ter << " at step " << result.best_step << " ("
                << result.steps_run << " steps, " << result.seconds << " s)\n";
    } else if (*eval_cmd) {
      const auto model = load_model(eval_ckpt, eval_config);
      const auto ds = load_dataset(eval_data);
      const auto rep = evaluate(model, ds.split(eval_split), ds.spec.vocab_size);
      if (!eval_csv.empty()) emit(eval_csv, [&](std::ostream& os) { write_eval_csv(os, rep); });
      std::cout << "split " << eval_split << ": " << rep.utterances << " utterances, TER " << rep.ter << " ("
                << rep.edits << "/" << rep.reference_tokens << "), mean CTC loss " << rep.mean_loss << '\n';
    } else if (*diag_cmd || *gate_cmd) {
      const auto model = load_model(an_ckpt, an_config);
      const auto ds = load_dataset(an_data);
      const auto feats = features_of(ds.split(an_split), model.config.feature_dim);
      if (*diag_cmd) {
        const auto rep = diagonality_report(model, feats);
        emit(an_out, [&](std::ostream& os) { write_diagonality_csv(os, rep); });
        std::cerr << "average diagonality " << rep.average << '\n';
      } else {
        const auto m = kernel_importance(model, feats);
        emit(an_out, [&](std::ostream& os) { write_importance_csv(os, m); });
      }
    } else if (*pc_cmd) {
      const RunConfig cfg = resolve(pc);
      const auto& enc = cfg.train.encoder;
      auto model = EncoderParams<float>::create(enc);
      print_param_table(std::cout, enc, param_count(model));
      if (compare) {
        std::vector<std::pair<std::string, EncoderConfig>> variants;
        for (auto f : {FusionKind::Sum, FusionKind::Concat, FusionKind::Weighted, FusionKind::Depth}) {
          auto v = enc;
          v.conv_block = ConvBlockKind::MultiConv;
          v.fusion = f;
          variants.emplace_back("multiconv-" + to_string(f), v);
        }
        for (auto b : {ConvBlockKind::Csgu, ConvBlockKind::Conformer}) {
          auto v = enc;
          v.conv_block = b;
          variants.emplace_back(to_string(b), v);
        }
        std::cout << '\n';
        write_param_report(std::cout, param_report(variants));
      }
    } else if (*gc_cmd) {
      const auto report = run_grad_suite(gc_seed, gc_repeats, {}, [&](const GradCheckResult& r) {
        if (gc_verbose || !r.passed) {
          std::cout << (r.passed ? "ok   " : "FAIL ") << std::left << std::setw(34) << r.name << " checked "
                    << std::setw(6) << r.checked << " max rel " << r.max_rel_error << '\n';
        }
      });
      std::cout << report.cases.size() << " configurations, max relative error " << report.max_rel_error()
                << ", " << report.seconds << " s: " << (report.passed() ? "PASS" : "FAIL") << '\n';
      return report.passed() ? 0 : kRuntime;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return 0;
}
