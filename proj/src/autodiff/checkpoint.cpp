#include "typoreg/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "typoreg/error.hpp"

namespace typoreg::ad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw DataError("checkpoint " + path.string() + ": truncated file");
  }
  return value;
}

}  // namespace

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = get<std::uint16_t>(in, path);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  }
  std::vector<CheckpointRecord> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    CheckpointRecord rec;
    const auto name_len = get<std::uint16_t>(in, path);
    rec.name.resize(name_len);
    if (!in.read(rec.name.data(), name_len)) throw DataError("checkpoint " + path.string() + ": truncated name");
    const auto rank = get<std::uint8_t>(in, path);
    if (rank == 0 || rank > kMaxRank) throw DataError("checkpoint " + path.string() + ": bad rank");
    for (std::uint8_t i = 0; i < rank; ++i) rec.shape.push_back(get<std::uint32_t>(in, path));
    rec.values.resize(numel_of(rec.shape));
    if (!in.read(reinterpret_cast<char*>(rec.values.data()),
                 static_cast<std::streamsize>(rec.values.size() * sizeof(float)))) {
      throw DataError("checkpoint " + path.string() + ": truncated values for '" + rec.name + "'");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  for (const auto& rec : records) {
    if (rec.name.size() > 0xFFFF) throw ArgumentError("checkpoint: name too long");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(rec.name.size()));
    out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(rec.shape.size()));
    for (std::size_t e : rec.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    out.write(reinterpret_cast<const char*>(rec.values.data()),
              static_cast<std::streamsize>(rec.values.size() * sizeof(float)));
  }
  if (!out) throw DataError("error writing checkpoint " + path.string());
}

void save_params(const std::filesystem::path& path, const std::vector<NamedParam>& params) {
  std::vector<CheckpointRecord> records;
  records.reserve(params.size());
  for (const auto& p : params) {
    CheckpointRecord rec{p.name, p.tensor.shape(), {}};
    rec.values.reserve(p.tensor.numel());
    for (double v : p.tensor.data()) rec.values.push_back(static_cast<float>(v));
    records.push_back(std::move(rec));
  }
  write_checkpoint(path, records);
}

void load_params(const std::filesystem::path& path, const std::vector<NamedParam>& params) {
  std::map<std::string, CheckpointRecord> by_name;
  for (auto& rec : read_checkpoint(path)) by_name.emplace(rec.name, std::move(rec));
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint " + path.string() + ": missing '" + p.name + "'");
    if (it->second.shape != p.tensor.shape()) {
      throw DataError("checkpoint " + path.string() + ": shape mismatch for '" + p.name + "'");
    }
    Tensor t = p.tensor;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = it->second.values[i];
  }
}

}  // namespace typoreg::ad
