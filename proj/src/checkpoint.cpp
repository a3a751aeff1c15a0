#include "samic/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace samic {
namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t off) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + b])) << (8 * b);
  return v;
}

}  // namespace

std::string serialize_checkpoint(CorrelationNet<float>& net) {
  nlohmann::ordered_json header;
  header["net_config"] = to_json(net.config());
  header["level_channels"] = net.level_channels();
  header["params"] = nlohmann::ordered_json::array();
  std::string data;
  net.for_each_param([&](const nn::Param<float>& p) {
    header["params"].push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(p.value.data()[i]);
      for (int b = 0; b < 4; ++b) data.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  });
  const std::string json = header.dump();
  std::string out(kCheckpointMagic);
  put_u64(out, json.size());
  out += json;
  out += data;
  return out;
}

CorrelationNet<float> deserialize_checkpoint(const std::string& bytes) {
  const std::size_t m = kCheckpointMagic.size();
  if (bytes.size() < m + 8 || bytes.compare(0, m, kCheckpointMagic) != 0) {
    throw StorageError("not a SAMIC checkpoint (bad magic)");
  }
  const std::uint64_t len = get_u64(bytes, m);
  if (bytes.size() < m + 8 + len) throw StorageError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(bytes.substr(m + 8, len));
  CorrelationNet<float> net(net_config_from_json(header.at("net_config")),
                            header.at("level_channels").get<std::vector<int>>());
  std::size_t off = m + 8 + len;
  std::size_t index = 0;
  const auto& table = header.at("params");
  net.for_each_param([&](nn::Param<float>& p) {
    if (index >= table.size()) throw StorageError("checkpoint lacks parameter " + p.name);
    const auto& entry = table[index++];
    if (entry.at("name").get<std::string>() != p.name || entry.at("rows").get<Eigen::Index>() != p.value.rows() ||
        entry.at("cols").get<Eigen::Index>() != p.value.cols()) {
      throw StorageError("checkpoint parameter mismatch at " + p.name);
    }
    const std::size_t count = static_cast<std::size_t>(p.value.size());
    if (bytes.size() < off + 4 * count) throw StorageError("truncated checkpoint data");
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 4 * i + b])) << (8 * b);
      }
      p.value.data()[i] = std::bit_cast<float>(bits);
    }
    off += 4 * count;
  });
  if (index != table.size() || off != bytes.size()) throw StorageError("checkpoint has trailing parameters or data");
  return net;
}

void save_checkpoint(const std::filesystem::path& path, CorrelationNet<float>& net) {
  write_file_atomic(path, serialize_checkpoint(net));
}

CorrelationNet<float> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace samic
