// SPDX-License-Identifier: Apache-2.0
//
// CTC training with Adam and global-norm clipping, greedy-decoding
// evaluation, and the metrics log. A run directory holds
//   config.json      the RunConfig used
//   metrics.jsonl    one MetricsRecord per evaluation
//   best.ckpt        parameters with the lowest dev TER so far
//   final.ckpt       parameters after the last step
// Runs are deterministic for a fixed config on one thread.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "mcf/dataset.hpp"
#include "mcf/encoder.hpp"

namespace mcf {

struct TrainConfig {
  EncoderConfig encoder;
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double grad_clip = 5.0;
  std::size_t eval_interval = 100;
  std::string output_dir;  // empty: nothing written
  std::uint64_t seed = 0;  // batch order and dropout masks
  double early_stop_ter = -1.0;  // stop after an eval with dev TER <= this; negative disables

  void validate() const;  // ConfigError
  bool operator==(const TrainConfig&) const = default;
};

// Everything a CLI run needs; the on-disk config format.
struct RunConfig {
  TrainConfig train;
  SyntheticTaskSpec data;

  bool operator==(const RunConfig&) const = default;
};

struct MetricsRecord {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean over the batches since the previous record
  double dev_loss = 0.0;
  double dev_ter = 0.0;
  double seconds = 0.0;  // wall clock since training started

  bool operator==(const MetricsRecord&) const = default;
};

std::string to_jsonl(const MetricsRecord& r);
MetricsRecord metrics_from_jsonl(const std::string& line);

struct EvalRow {
  std::string id;
  std::vector<int> reference;
  std::vector<int> hypothesis;
  std::size_t distance = 0;
};

struct EvalReport {
  std::size_t utterances = 0;
  std::size_t reference_tokens = 0;
  std::size_t edits = 0;
  double ter = 0.0;        // edits / reference_tokens
  double mean_loss = 0.0;  // over feasible utterances
  std::size_t infeasible = 0;
  std::vector<EvalRow> rows;
};

// Greedy CTC decoding of every utterance. Throws InputError on an empty split
// and ContractError when the data vocabulary differs from the model's.
template <typename T>
EvalReport evaluate(const EncoderParams<T>& model, const Split& split, std::size_t data_vocab_size);

void write_eval_csv(std::ostream& os, const EvalReport& report);

// Frames left after subsampling must cover the CTC alignment of the tokens.
bool ctc_feasible(const Utterance& u);

struct TrainResult {
  EncoderParams<float> best;
  std::vector<MetricsRecord> metrics;
  std::size_t best_step = 0;
  double best_dev_ter = 0.0;
  std::size_t steps_run = 0;
  std::size_t skipped_utterances = 0;
  double seconds = 0.0;
};

using LogFn = std::function<void(const std::string&)>;

// Trains on data.train, evaluates on data.dev. Throws NumericError naming the
// step and batch utterances when a loss is not finite.
TrainResult train(const TrainConfig& cfg, const SyntheticDataset& data, const LogFn& log = {});

}  // namespace mcf
