#include "privleak/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace privleak {

namespace {

constexpr std::array<char, 4> kMagic{'N', 'N', 'C', 'P'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Network<float>& net) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& e : net.layout().entries())
    params.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
  const std::string header = nlohmann::json{{"spec", net.spec}, {"params", params}, {"seed", net.seed}}.dump();

  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (float v : net.params.values()) put_le<float>(out, v);
  if (!out) throw FormatError("failed to write checkpoint");
}

Network<float> read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw FormatError("not a checkpoint: expected magic bytes \"NNCP\"");
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw SchemaError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const auto length = get_le<std::uint64_t>(in, "header length");
  if (length > (1u << 26)) throw FormatError("checkpoint header length " + std::to_string(length) + " is implausible");
  std::string header(length, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(length)))
    throw FormatError("checkpoint truncated inside the JSON header");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  NetworkSpec spec;
  std::uint64_t seed = 0;
  try {
    spec = j.at("spec").get<NetworkSpec>();
    seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is missing fields: ") + e.what());
  }
  validate(spec);
  auto layout = std::make_shared<const ParamLayout>(spec);

  const auto& table = j.at("params");
  if (table.size() != layout->entries().size())
    throw FormatError("checkpoint parameter table does not match its spec");
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& e = layout->entries()[i];
    if (table[i].at("name").get<std::string>() != e.name || table[i].at("shape").get<Shape>() != e.shape ||
        table[i].at("offset").get<Index>() != e.offset)
      throw FormatError("checkpoint parameter '" + e.name + "' disagrees with the layout implied by its spec");
  }

  Vec<float> values(layout->total());
  for (Index k = 0; k < values.size(); ++k) values[k] = get_le<float>(in, "parameters");
  return {std::move(spec), ParamSet<float>(std::move(layout), std::move(values)), seed};
}

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, net);
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  try {
    return read_checkpoint(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace privleak
