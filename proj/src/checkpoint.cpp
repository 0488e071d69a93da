#include "pdml/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "pdml/griddata.hpp"

namespace pdml {

namespace {

constexpr std::array<char, 8> kMagic{'P', 'D', 'M', 'L', 'N', 'E', 'T', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw FormatError(path.string() + ": truncated checkpoint");
  }
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(value);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  const auto& cfg = params.config();
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.channels_in));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.num_classes));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.conv_channels.size()));
  for (int c : cfg.conv_channels) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c));
  put_le<std::uint64_t>(out, cfg.seed);
  put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(cfg.embedding_gain));
  put_le<std::uint64_t>(out, params.size());
  for (double v : params.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  NetConfig cfg;
  cfg.channels_in = static_cast<int>(get_le<std::uint32_t>(in, path));
  cfg.num_classes = static_cast<int>(get_le<std::uint32_t>(in, path));
  const auto layers = get_le<std::uint32_t>(in, path);
  if (layers == 0 || layers > 1024) throw FormatError(path.string() + ": bad layer count");
  cfg.conv_channels.clear();
  for (std::uint32_t l = 0; l < layers; ++l) {
    cfg.conv_channels.push_back(static_cast<int>(get_le<std::uint32_t>(in, path)));
  }
  cfg.seed = get_le<std::uint64_t>(in, path);
  cfg.embedding_gain = std::bit_cast<double>(get_le<std::uint64_t>(in, path));
  const ParamLayout layout(cfg);
  const auto count = get_le<std::uint64_t>(in, path);
  if (count != layout.total) {
    throw FormatError(path.string() + ": parameter count does not match the network header");
  }
  std::vector<double> values(count);
  for (auto& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in, path));
  return ModelParams(std::move(cfg), std::move(values));
}

}  // namespace pdml
