#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "iscf/errors.hpp"
#include "iscf/model.hpp"

namespace iscf {

namespace {

constexpr char kMagic[4] = {'I', 'S', 'C', 'F'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

void put_f32(std::string& out, double value) {
  put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const ParamStore& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params.entries()) {
    manifest.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += 4 * p.value.numel();
  }
  const std::string header = nlohmann::json{{"config", cfg}, {"parameters", manifest}}.dump();

  std::string blob(kMagic, 4);
  put_le(blob, kVersion);
  put_le(blob, static_cast<std::uint64_t>(header.size()));
  blob += header;
  blob.reserve(blob.size() + offset);
  for (const auto& p : params.entries()) {
    for (double v : p.value.data()) put_f32(blob, v);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("short write to checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string blob = read_file(path);
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw FormatError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(blob, 4);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(blob, 8);
  if (header_len > blob.size() - 16) throw FormatError("checkpoint header truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.begin() + 16, blob.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  const std::size_t payload = 16 + header_len;
  try {
    ck.config = header.at("config").get<ModelConfig>();
    for (const auto& entry : header.at("parameters")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = static_cast<std::uint64_t>(shape_numel(shape));
      if (offset + 4 * count > blob.size() - payload) {
        throw FormatError("checkpoint payload truncated at parameter '" + name + "'");
      }
      Buffer b(count);
      for (std::size_t i = 0; i < count; ++i) {
        b[i] = std::bit_cast<float>(get_le<std::uint32_t>(blob, payload + offset + 4 * i));
      }
      ck.params.add(name, Tensor(shape, std::move(b)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (payload + 4 * static_cast<std::uint64_t>(ck.params.total_count()) != blob.size()) {
    throw FormatError("checkpoint payload size does not match its manifest");
  }
  return ck;
}

ParamStore load_checkpoint_into(const std::filesystem::path& path, const ModelConfig& cfg) {
  Checkpoint ck = load_checkpoint(path);
  ParamStore expected = build(cfg);
  for (const auto& p : expected.entries()) {
    if (!ck.params.contains(p.name)) throw ShapeMismatch("checkpoint lacks parameter '" + p.name + "'");
    const Tensor& stored = ck.params.at(p.name);
    if (stored.shape() != p.value.shape()) {
      throw ShapeMismatch("parameter '" + p.name + "': checkpoint has " + shape_to_string(stored.shape()) +
                          ", config expects " + shape_to_string(p.value.shape()));
    }
  }
  if (ck.params.size() != expected.size()) {
    for (const auto& p : ck.params.entries()) {
      if (!expected.contains(p.name)) throw ShapeMismatch("checkpoint has unexpected parameter '" + p.name + "'");
    }
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    expected.set_value(i, ck.params.at(expected.entries()[i].name));
  }
  return expected;
}

}  // namespace iscf
