// SPDX-License-Identifier: Apache-2.0
//
// JSON (de)serialization of encoder, data and training configs. Every field
// is optional on input and falls back to its default; unknown keys are
// rejected. Doubles are written in shortest round-trip form, so
// load(save(cfg)) == cfg holds exactly.

#pragma once

#include <filesystem>
#include <string>

#include "mcf/dataset.hpp"
#include "mcf/encoder.hpp"
#include "mcf/train.hpp"

namespace mcf {

std::string to_json(const EncoderConfig& cfg);
std::string to_json(const SyntheticTaskSpec& spec);
std::string to_json(const TrainConfig& cfg);
std::string to_json(const RunConfig& cfg);

EncoderConfig encoder_config_from_json(const std::string& text);
SyntheticTaskSpec task_spec_from_json(const std::string& text);
TrainConfig train_config_from_json(const std::string& text);
RunConfig run_config_from_json(const std::string& text);

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace mcf
