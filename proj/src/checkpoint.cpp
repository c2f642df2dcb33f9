#include "ddlab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ddlab/errors.hpp"

namespace ddlab {
namespace {

constexpr const char* kMagic = "DDLAB-CHECKPOINT";

std::string read_line(const std::string& bytes, std::size_t& pos) {
  const auto end = bytes.find('\n', pos);
  if (end == std::string::npos) throw IncompatibleArtifact("checkpoint: truncated header");
  std::string line = bytes.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

std::size_t parse_count(const std::string& line, const std::string& prefix) {
  if (line.rfind(prefix + " ", 0) != 0) {
    throw IncompatibleArtifact("checkpoint: expected '" + prefix + "', got '" + line + "'");
  }
  return static_cast<std::size_t>(std::stoull(line.substr(prefix.size() + 1)));
}

}  // namespace

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = header.find(key);
  if (it == header.end()) throw IncompatibleArtifact("checkpoint header lacks '" + key + "'");
  return it->second;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string head;
  for (const auto& [k, v] : ckpt.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint: header entry '" + k + "' not representable");
    }
    head += k + " = " + v + "\n";
  }
  std::string out = std::string(kMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  out += "header_bytes " + std::to_string(head.size()) + "\n";
  out += head;
  out += "values " + std::to_string(ckpt.values.size()) + "\n";
  const std::size_t start = out.size();
  out.resize(start + 8 * ckpt.values.size());
  for (std::size_t i = 0; i < ckpt.values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(ckpt.values[i]);
    for (int b = 0; b < 8; ++b) {
      out[start + 8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = read_line(bytes, pos);
  const std::string want = std::string(kMagic) + " " + std::to_string(kCheckpointVersion);
  if (magic != want) throw IncompatibleArtifact("checkpoint: bad magic/version '" + magic + "'");
  const std::size_t head_bytes = parse_count(read_line(bytes, pos), "header_bytes");
  if (pos + head_bytes > bytes.size()) throw IncompatibleArtifact("checkpoint: truncated header");
  Checkpoint ckpt;
  std::istringstream head(bytes.substr(pos, head_bytes));
  pos += head_bytes;
  for (std::string line; std::getline(head, line);) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw IncompatibleArtifact("checkpoint: bad header line");
    ckpt.header[line.substr(0, eq)] = line.substr(eq + 3);
  }
  const std::size_t count = parse_count(read_line(bytes, pos), "values");
  if (bytes.size() - pos != 8 * count) {
    throw IncompatibleArtifact("checkpoint: expected " + std::to_string(count) +
                               " values, payload has " + std::to_string(bytes.size() - pos) +
                               " bytes");
  }
  ckpt.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + 8 * i + b]))
              << (8 * b);
    }
    ckpt.values[i] = std::bit_cast<double>(bits);
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IncompatibleArtifact("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint model_checkpoint(const std::string& kind, const ModelConfig& config,
                            const ParamStore& params,
                            const std::map<std::string, std::string>& extra) {
  Checkpoint ckpt;
  ckpt.header = config.to_kv();
  ckpt.header["kind"] = kind;
  ckpt.header["param_count"] = std::to_string(params.size());
  for (const auto& [k, v] : extra) ckpt.header[k] = v;
  ckpt.values = params.values();
  return ckpt;
}

ParamStore params_from_values(const ModelConfig& config, const std::vector<double>& values) {
  ParamStore store;
  init_network_params(config, store, 0);
  if (store.size() != values.size()) {
    throw IncompatibleArtifact("checkpoint: " + std::to_string(values.size()) +
                               " values, model config needs " + std::to_string(store.size()));
  }
  store.values() = values;
  return store;
}

Denoiser denoiser_from_checkpoint(const Checkpoint& ckpt) {
  const auto& kind = ckpt.get("kind");
  if (kind != "teacher" && kind != "auxiliary") {
    throw IncompatibleArtifact("checkpoint kind '" + kind + "' is not a denoiser");
  }
  const auto config = ModelConfig::from_kv(ckpt.header);
  return Denoiser(config, params_from_values(config, ckpt.values));
}

Generator generator_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.get("kind") != "generator") {
    throw IncompatibleArtifact("checkpoint kind '" + ckpt.get("kind") + "' is not a generator");
  }
  const auto config = ModelConfig::from_kv(ckpt.header);
  return Generator(config, params_from_values(config, ckpt.values));
}

}  // namespace ddlab
