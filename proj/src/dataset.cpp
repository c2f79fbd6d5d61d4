// SPDX-License-Identifier: Apache-2.0

#include "mcf/dataset.hpp"

#include <bit>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mcf/config.hpp"
#include "mcf/errors.hpp"

namespace mcf {

static_assert(std::endian::native == std::endian::little, "feature files are little-endian f32");

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticTaskSpec::validate() const {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("data: " + what);
  };
  require(vocab_size >= 1, "vocab_size must be positive");
  require(template_frames >= 1, "template_frames must be positive");
  require(feature_dim >= 1, "feature_dim must be positive");
  require(noise_std >= 0.0, "noise_std must be non-negative");
  require(min_tokens >= 1 && min_tokens <= max_tokens, "need 1 <= min_tokens <= max_tokens");
}

template <typename T>
Tensor<T> Utterance::feature_tensor(std::size_t feature_dim) const {
  if (features.size() != frames * feature_dim) {
    throw DimensionError("utterance " + id + " holds " + std::to_string(features.size()) +
                         " values, expected " + std::to_string(frames) + "x" + std::to_string(feature_dim));
  }
  return Tensor<T>::from({frames, feature_dim}, std::vector<T>(features.begin(), features.end()));
}

template Tensor<float> Utterance::feature_tensor<float>(std::size_t) const;
template Tensor<double> Utterance::feature_tensor<double>(std::size_t) const;

const Split& SyntheticDataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw InputError("unknown split '" + name + "' (expected train, dev or test)");
}

namespace {

Rng stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

Split make_split(const SyntheticTaskSpec& spec, const std::vector<float>& templates,
                 const std::string& name, std::size_t size, std::uint64_t stream) {
  Rng rng = stream_rng(spec.seed, stream);
  std::uniform_int_distribution<std::size_t> count(spec.min_tokens, spec.max_tokens);
  std::uniform_int_distribution<int> token(1, static_cast<int>(spec.vocab_size));
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t block = spec.template_frames * spec.feature_dim;

  Split split{name, {}};
  for (std::size_t u = 0; u < size; ++u) {
    Utterance utt;
    utt.id = name + "-" + std::to_string(u);
    const std::size_t n = count(rng);
    for (std::size_t i = 0; i < n; ++i) utt.tokens.push_back(token(rng));
    utt.frames = n * spec.template_frames;
    utt.features.reserve(n * block);
    for (int tok : utt.tokens) {
      const float* tpl = templates.data() + static_cast<std::size_t>(tok - 1) * block;
      for (std::size_t i = 0; i < block; ++i) {
        double v = tpl[i];
        if (spec.noise_std > 0) v += spec.noise_std * noise(rng);
        utt.features.push_back(static_cast<float>(v));
      }
    }
    split.utterances.push_back(std::move(utt));
  }
  return split;
}

void write_split(const Split& split, std::size_t feature_dim, const fs::path& dir, json& manifest) {
  std::ofstream feats(dir / (split.name + ".f32"), std::ios::binary | std::ios::trunc);
  std::ofstream text(dir / (split.name + ".txt"), std::ios::trunc);
  if (!feats || !text) throw InputError("cannot write split files in " + dir.string());
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& u : split.utterances) {
    feats.write(reinterpret_cast<const char*>(u.features.data()),
                static_cast<std::streamsize>(u.features.size() * sizeof(float)));
    text << u.id;
    for (int t : u.tokens) text << ' ' << t;
    text << '\n';
    entries.push_back({{"id", u.id}, {"frames", u.frames}, {"offset", offset}});
    offset += u.frames * feature_dim * sizeof(float);
  }
  if (!feats || !text) throw InputError("failed writing split " + split.name);
  manifest["splits"][split.name] = {{"features", split.name + ".f32"},
                                    {"transcripts", split.name + ".txt"},
                                    {"feature_shape", {"frames", feature_dim}},
                                    {"utterances", entries}};
}

std::vector<float> read_f32(const fs::path& path, std::size_t count, std::uint64_t offset) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  std::vector<float> v(count);
  is.seekg(static_cast<std::streamoff>(offset));
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(float)))) {
    throw InputError(path.string() + " is truncated");
  }
  return v;
}

Split read_split(const fs::path& dir, const std::string& name, const json& entry, const SyntheticTaskSpec& spec) {
  Split split{name, {}};
  std::ifstream text(dir / entry.at("transcripts").get<std::string>());
  if (!text) throw InputError("cannot open transcripts of split " + name);
  const fs::path feats = dir / entry.at("features").get<std::string>();
  std::string line;
  for (const auto& u : entry.at("utterances")) {
    Utterance utt;
    utt.id = u.at("id").get<std::string>();
    utt.frames = u.at("frames").get<std::size_t>();
    if (!std::getline(text, line)) throw InputError("transcripts of split " + name + " end early");
    std::istringstream ls(line);
    std::string id;
    ls >> id;
    if (id != utt.id) throw InputError("transcript id '" + id + "' does not match manifest id '" + utt.id + "'");
    for (int t; ls >> t;) {
      if (t < 1 || static_cast<std::size_t>(t) > spec.vocab_size) {
        throw InputError("utterance " + id + " has token " + std::to_string(t) + " outside 1.." +
                         std::to_string(spec.vocab_size));
      }
      utt.tokens.push_back(t);
    }
    utt.features = read_f32(feats, utt.frames * spec.feature_dim, u.at("offset").get<std::uint64_t>());
    split.utterances.push_back(std::move(utt));
  }
  return split;
}

}  // namespace

SyntheticDataset generate_dataset(const SyntheticTaskSpec& spec) {
  spec.validate();
  SyntheticDataset ds;
  ds.spec = spec;
  Rng rng = stream_rng(spec.seed, 0);
  std::normal_distribution<double> unit(0.0, 1.0);
  ds.templates.resize(spec.vocab_size * spec.template_frames * spec.feature_dim);
  for (auto& v : ds.templates) v = static_cast<float>(unit(rng));
  ds.train = make_split(spec, ds.templates, "train", spec.train_size, 1);
  ds.dev = make_split(spec, ds.templates, "dev", spec.dev_size, 2);
  ds.test = make_split(spec, ds.templates, "test", spec.test_size, 3);
  return ds;
}

void write_dataset(const SyntheticDataset& data, const fs::path& dir, bool force) {
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir)) && !force) {
    throw InputError("output directory " + dir.string() + " already exists (use --force to overwrite)");
  }
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "mcf-synthetic-v1";
  manifest["spec"] = json::parse(to_json(data.spec));
  manifest["seed_streams"] = {{"templates", 0}, {"train", 1}, {"dev", 2}, {"test", 3}};
  manifest["templates"] = {{"file", "templates.f32"},
                           {"shape", {data.spec.vocab_size, data.spec.template_frames, data.spec.feature_dim}}};
  {
    std::ofstream os(dir / "templates.f32", std::ios::binary | std::ios::trunc);
    os.write(reinterpret_cast<const char*>(data.templates.data()),
             static_cast<std::streamsize>(data.templates.size() * sizeof(float)));
    if (!os) throw InputError("failed writing templates");
  }
  for (const Split* s : {&data.train, &data.dev, &data.test}) write_split(*s, data.spec.feature_dim, dir, manifest);
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  os << manifest.dump(2) << '\n';
  if (!os) throw InputError("failed writing manifest");
}

SyntheticDataset load_dataset(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw InputError("no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(is);
    SyntheticDataset ds;
    ds.spec = task_spec_from_json(manifest.at("spec").dump());
    ds.templates = read_f32(dir / manifest.at("templates").at("file").get<std::string>(),
                            ds.spec.vocab_size * ds.spec.template_frames * ds.spec.feature_dim, 0);
    const auto& splits = manifest.at("splits");
    ds.train = read_split(dir, "train", splits.at("train"), ds.spec);
    ds.dev = read_split(dir, "dev", splits.at("dev"), ds.spec);
    ds.test = read_split(dir, "test", splits.at("test"), ds.spec);
    return ds;
  } catch (const json::exception& e) {
    throw InputError("malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace mcf
