// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "mcf/encoder.hpp"

namespace mcf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kMagic{'M', 'C', 'F', 'K'};

template <typename U>
void put(std::ostream& os, U value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::istream& is) {
  U value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(U))) {
    throw InputError("checkpoint truncated");
  }
  return value;
}

struct Manifest {
  std::uint32_t version = 0;
  std::uint32_t element_bytes = 0;
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
  };
  std::vector<Entry> entries;
};

Manifest read_manifest(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) throw InputError("not a checkpoint (bad magic)");
  Manifest m;
  m.version = get<std::uint32_t>(is);
  if (m.version != checkpoint_version) {
    throw InputError("unsupported checkpoint version " + std::to_string(m.version));
  }
  m.element_bytes = get<std::uint32_t>(is);
  if (m.element_bytes != 4 && m.element_bytes != 8) {
    throw InputError("unsupported element width " + std::to_string(m.element_bytes));
  }
  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    Manifest::Entry e;
    const auto len = get<std::uint32_t>(is);
    e.name.resize(len);
    if (!is.read(e.name.data(), len)) throw InputError("checkpoint truncated");
    const auto rank = get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(get<std::uint64_t>(is));
    e.offset = get<std::uint64_t>(is);
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, EncoderParams<T>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write checkpoint " + path.string());
  const auto named = named_parameters(params);
  os.write(kMagic.data(), 4);
  put<std::uint32_t>(os, checkpoint_version);
  put<std::uint32_t>(os, sizeof(T));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(named.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : named) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(os, d);
    put<std::uint64_t>(os, offset);
    offset += t.numel() * sizeof(T);
  }
  for (const auto& [name, t] : named) {
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(T)));
  }
  if (!os) throw InputError("failed writing checkpoint " + path.string());
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, EncoderParams<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path.string());
  const auto m = read_manifest(is);
  if (m.element_bytes != sizeof(T)) {
    throw InputError("checkpoint stores " + std::to_string(m.element_bytes * 8) +
                     "-bit values, model uses " + std::to_string(sizeof(T) * 8) + "-bit");
  }
  auto named = named_parameters(params);
  if (named.size() != m.entries.size()) {
    throw InputError("checkpoint has " + std::to_string(m.entries.size()) + " tensors, model has " +
                     std::to_string(named.size()));
  }
  const auto payload_start = is.tellg();
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    const auto& e = m.entries[i];
    if (e.name != name || e.shape != t.shape()) {
      throw InputError("checkpoint entry '" + e.name + "' " + shape_str(e.shape) +
                       " does not match model parameter '" + name + "' " + shape_str(t.shape()));
    }
    is.seekg(payload_start + static_cast<std::streamoff>(e.offset));
    if (!is.read(reinterpret_cast<char*>(t.data().data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(T)))) {
      throw InputError("checkpoint payload truncated at '" + name + "'");
    }
  }
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path.string());
  const auto m = read_manifest(is);
  CheckpointInfo info{m.version, m.element_bytes, {}};
  for (const auto& e : m.entries) info.entries.emplace_back(e.name, e.shape);
  return info;
}

template void save_checkpoint<float>(const std::filesystem::path&, EncoderParams<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, EncoderParams<double>&);
template void load_checkpoint<float>(const std::filesystem::path&, EncoderParams<float>&);
template void load_checkpoint<double>(const std::filesystem::path&, EncoderParams<double>&);

}  // namespace mcf
