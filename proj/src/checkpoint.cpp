#include "geia/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "geia/errors.hpp"
#include "geia/hashing.hpp"

namespace geia {

using json = nlohmann::json;

namespace {

std::string weights_digest(std::span<const double> weights) {
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(weights.data()),
                                     weights.size() * sizeof(double)));
}

json read_header(const std::filesystem::path& dir) {
  std::ifstream in(dir / "header.json");
  if (!in) throw ConfigError("no checkpoint header in " + dir.string());
  json h;
  try {
    h = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed checkpoint header: " + std::string(e.what()));
  }
  if (h.value("format", "") != "geia-checkpoint")
    throw ConfigError(dir.string() + " is not a checkpoint");
  if (h.value("version", 0) != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version in " + dir.string());
  return h;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& dir, const std::string& family, json fields,
                      std::span<const double> weights) {
  static_assert(std::endian::native == std::endian::little);
  std::filesystem::create_directories(dir);
  fields["format"] = "geia-checkpoint";
  fields["version"] = kCheckpointVersion;
  fields["family"] = family;
  fields["param_count"] = weights.size();
  fields["weights_sha256"] = weights_digest(weights);
  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw ConfigError("cannot write " + (dir / "weights.bin").string());
  bin.write(reinterpret_cast<const char*>(weights.data()),
            static_cast<std::streamsize>(weights.size() * sizeof(double)));
  std::ofstream(dir / "header.json") << fields.dump(2) << '\n';
}

Checkpoint read_checkpoint(const std::filesystem::path& dir, const std::string& family) {
  Checkpoint ck;
  ck.header = read_header(dir);
  if (ck.header.value("family", "") != family)
    throw ConfigError("checkpoint family is " + ck.header.value("family", std::string("?")) +
                      ", expected " + family);
  const auto count = ck.header.at("param_count").get<std::size_t>();
  ck.weights.resize(count);
  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw ConfigError("missing weights.bin in " + dir.string());
  bin.read(reinterpret_cast<char*>(ck.weights.data()),
           static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(bin.gcount()) != count * sizeof(double))
    throw ConfigError("truncated weights.bin in " + dir.string());
  if (weights_digest(ck.weights) != ck.header.value("weights_sha256", ""))
    throw ConfigError("weights checksum mismatch in " + dir.string());
  return ck;
}

std::string checkpoint_family(const std::filesystem::path& dir) {
  return read_header(dir).value("family", "");
}

}  // namespace geia
