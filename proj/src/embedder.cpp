#include "geia/embedder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "geia/errors.hpp"
#include "geia/hashing.hpp"
#include "geia/rng.hpp"
#include "geia/textops.hpp"

namespace geia {

using json = nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string cache_text(const EmbedRequest& r) {
  return r.source ? r.text + '\x1e' + *r.source : r.text;
}

void check_finite(const std::vector<double>& v, const std::string& victim_id) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DataError("victim " + victim_id + " produced a non-finite embedding");
  }
}

}  // namespace

std::string_view to_string(VictimFamily f) {
  switch (f) {
    case VictimFamily::SROBERTA: return "SROBERTA";
    case VictimFamily::ST5: return "ST5";
    case VictimFamily::MPNET: return "MPNET";
    case VictimFamily::SIMCSE_BERT: return "SIMCSE_BERT";
    case VictimFamily::SIMCSE_ROBERTA: return "SIMCSE_ROBERTA";
    case VictimFamily::TOY_ADDITIVE: return "TOY_ADDITIVE";
    case VictimFamily::TOY_LEAKY: return "TOY_LEAKY";
    case VictimFamily::TOY_BLIND: return "TOY_BLIND";
  }
  return "TOY_BLIND";
}

VictimFamily parse_victim_family(std::string_view s) {
  for (auto f : {VictimFamily::SROBERTA, VictimFamily::ST5, VictimFamily::MPNET,
                 VictimFamily::SIMCSE_BERT, VictimFamily::SIMCSE_ROBERTA,
                 VictimFamily::TOY_ADDITIVE, VictimFamily::TOY_LEAKY, VictimFamily::TOY_BLIND}) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown victim family '" + std::string(s) + "'");
}

bool is_toy(VictimFamily f) {
  return f == VictimFamily::TOY_ADDITIVE || f == VictimFamily::TOY_LEAKY ||
         f == VictimFamily::TOY_BLIND;
}

// -------------------------------------------------------------------- toy

ToyEmbedder::ToyEmbedder(VictimFamily kind, int dim, std::uint64_t seed,
                         std::unordered_map<std::string, std::vector<double>> fixed_vectors)
    : kind_(kind), dim_(dim), seed_(seed), fixed_(std::move(fixed_vectors)) {
  if (!is_toy(kind)) throw ConfigError("ToyEmbedder needs a TOY_* family");
  if (dim < 2) throw ConfigError("toy victim dimension must be >= 2");
  for (const auto& [tok, v] : fixed_) {
    if (static_cast<int>(v.size()) != dim) throw ConfigError("fixed vector for '" + tok + "' has wrong dimension");
  }
}

std::vector<double> ToyEmbedder::token_vector(const std::string& token) const {
  if (auto it = fixed_.find(token); it != fixed_.end()) return it->second;
  Rng rng(derive_seed(seed_, fnv1a(token)));
  std::vector<double> v(static_cast<std::size_t>(dim_));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

std::vector<double> ToyEmbedder::embed_text(std::string_view text) const {
  std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
  for (const auto& tok : word_tokens(text)) {
    const auto v = token_vector(tok);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return out;
}

std::vector<std::vector<double>> ToyEmbedder::embed(std::span<const EmbedRequest> batch) const {
  std::vector<std::vector<double>> out;
  out.reserve(batch.size());
  for (const auto& r : batch) {
    const bool leak = kind_ == VictimFamily::TOY_LEAKY && r.source.has_value();
    out.push_back(embed_text(leak ? *r.source : r.text));
  }
  return out;
}

std::string ToyEmbedder::snapshot_checksum() const {
  std::string blob = std::string(to_string(kind_)) + ":" + std::to_string(dim_) + ":" +
                     std::to_string(seed_);
  std::map<std::string, std::vector<double>> sorted(fixed_.begin(), fixed_.end());
  for (const auto& [tok, v] : sorted) {
    blob += "|" + tok;
    for (double x : v) blob += ":" + std::to_string(std::bit_cast<std::uint64_t>(x));
  }
  return sha256_hex(blob);
}

// ------------------------------------------------------------------- http

HttpEmbeddingBackend::HttpEmbeddingBackend(std::string base_url, std::string path,
                                           std::string external_id, int timeout_seconds)
    : base_url_(std::move(base_url)),
      path_(std::move(path)),
      external_id_(std::move(external_id)),
      timeout_seconds_(timeout_seconds) {}

std::vector<std::vector<double>> HttpEmbeddingBackend::embed(
    std::span<const EmbedRequest> batch) const {
  httplib::Client client(base_url_);
  client.set_read_timeout(timeout_seconds_, 0);
  client.set_connection_timeout(timeout_seconds_, 0);
  json body{{"model", external_id_}, {"texts", json::array()}};
  for (const auto& r : batch) body["texts"].push_back(r.text);
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) throw TransportError("embedding request to " + base_url_ + " failed: " +
                                     httplib::to_string(res.error()), 0);
  if (res->status != 200)
    throw TransportError("embedding endpoint returned HTTP " + std::to_string(res->status), 0);
  try {
    auto j = json::parse(res->body);
    auto out = j.at("embeddings").get<std::vector<std::vector<double>>>();
    if (out.size() != batch.size()) throw TransportError("embedding count mismatch", 0);
    return out;
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed embedding response: ") + e.what(), 0);
  }
}

// --------------------------------------------------------------- registry

const VictimDescriptor& VictimRegistry::register_toy(VictimFamily kind,
                                                     const std::string& victim_id,
                                                     const std::vector<std::string>& vocab,
                                                     int dim, std::uint64_t seed) {
  if (vocab.empty()) throw ConfigError("toy victim vocabulary must be non-empty");
  return register_backend({victim_id, dim, kind, true},
                          std::make_shared<ToyEmbedder>(kind, dim, seed));
}

const VictimDescriptor& VictimRegistry::register_toy_vectors(
    VictimFamily kind, const std::string& victim_id,
    std::unordered_map<std::string, std::vector<double>> vectors) {
  if (vectors.empty()) throw ConfigError("toy victim vocabulary must be non-empty");
  const int dim = static_cast<int>(vectors.begin()->second.size());
  return register_backend({victim_id, dim, kind, true},
                          std::make_shared<ToyEmbedder>(kind, dim, 0, std::move(vectors)));
}

const VictimDescriptor& VictimRegistry::register_backend(
    VictimDescriptor descriptor, std::shared_ptr<const EmbeddingBackend> backend) {
  if (descriptor.victim_id.empty()) throw ConfigError("victim id must be non-empty");
  if (descriptor.dim < 1) throw ConfigError("victim dimension must be positive");
  if (!backend) throw ConfigError("victim backend missing");
  descriptor.frozen = true;
  auto [it, inserted] = victims_.emplace(descriptor.victim_id,
                                         Entry{descriptor, std::move(backend)});
  if (!inserted) throw RegistryError("victim '" + descriptor.victim_id + "' already registered");
  return it->second.descriptor;
}

const VictimRegistry::Entry& VictimRegistry::entry(const std::string& victim_id) const {
  auto it = victims_.find(victim_id);
  if (it == victims_.end()) throw RegistryError("victim '" + victim_id + "' is not registered");
  return it->second;
}

const VictimDescriptor& VictimRegistry::descriptor(const std::string& victim_id) const {
  return entry(victim_id).descriptor;
}

std::string VictimRegistry::snapshot_checksum(const std::string& victim_id) const {
  return entry(victim_id).backend->snapshot_checksum();
}

std::vector<std::string> VictimRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, e] : victims_) out.push_back(id);
  return out;
}

std::vector<EmbeddingVector> VictimRegistry::embed(const std::string& victim_id,
                                                   const std::vector<std::string>& texts,
                                                   const EmbedOptions& options) const {
  std::vector<EmbedRequest> requests;
  requests.reserve(texts.size());
  for (const auto& t : texts) requests.push_back({t, std::nullopt});
  return embed(victim_id, std::span<const EmbedRequest>(requests), options);
}

std::vector<EmbeddingVector> VictimRegistry::embed(const std::string& victim_id,
                                                   std::span<const EmbedRequest> requests,
                                                   const EmbedOptions& options) const {
  const Entry& e = entry(victim_id);
  if (requests.empty()) throw DataError("embed called with no texts");
  const std::size_t batch = std::max<std::size_t>(1, options.max_batch);
  std::vector<EmbeddingVector> out;
  out.reserve(requests.size());
  for (std::size_t start = 0; start < requests.size(); start += batch) {
    const auto chunk = requests.subspan(start, std::min(batch, requests.size() - start));
    std::vector<std::vector<double>> vecs;
    for (int attempt = 0;; ++attempt) {
      try {
        vecs = e.backend->embed(chunk);
        break;
      } catch (const TransportError& err) {
        if (attempt >= options.max_retries)
          throw TransportError(std::string(err.what()), attempt);
      }
    }
    if (vecs.size() != chunk.size()) throw TransportError("backend returned wrong batch size", 0);
    for (auto& v : vecs) {
      if (static_cast<int>(v.size()) != e.descriptor.dim)
        throw DataError("victim " + victim_id + " returned dimension " + std::to_string(v.size()) +
                        ", declared " + std::to_string(e.descriptor.dim));
      check_finite(v, victim_id);
      out.push_back({std::move(v), victim_id});
    }
  }
  return out;
}

double similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) throw ConfigError("similarity of vectors with different dimensions");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) throw SimilarityError("zero-norm embedding");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// ------------------------------------------------------------------ cache

EmbeddingCache::EmbeddingCache(EmbeddingCache&& other) noexcept {
  std::lock_guard lock(other.mu_);
  entries_ = std::move(other.entries_);
  index_ = std::move(other.index_);
}

std::string EmbeddingCache::key_for(std::string_view victim_id, std::string_view text) {
  std::string blob(victim_id);
  blob.push_back('\x1f');
  blob.append(text);
  return sha256_hex(blob);
}

std::optional<EmbeddingVector> EmbeddingCache::get(const std::string& victim_id,
                                                   std::string_view text) const {
  std::lock_guard lock(mu_);
  auto it = index_.find(key_for(victim_id, text));
  if (it == index_.end()) return std::nullopt;
  return EmbeddingVector{entries_[it->second].values, victim_id};
}

void EmbeddingCache::put(const EmbeddingVector& v, std::string_view text, std::string label) {
  std::string key = key_for(v.victim_id, text);
  std::lock_guard lock(mu_);
  if (index_.contains(key)) return;
  index_.emplace(key, entries_.size());
  entries_.push_back({std::move(key), v.victim_id, std::move(label), v.values});
}

std::vector<EmbeddingVector> EmbeddingCache::get_or_embed(const VictimRegistry& registry,
                                                          const std::string& victim_id,
                                                          std::span<const EmbedRequest> requests,
                                                          const EmbedOptions& options) {
  std::vector<std::optional<EmbeddingVector>> found(requests.size());
  std::vector<EmbedRequest> missing;
  std::vector<std::size_t> missing_at;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    found[i] = get(victim_id, cache_text(requests[i]));
    if (!found[i]) {
      missing.push_back(requests[i]);
      missing_at.push_back(i);
    }
  }
  if (!missing.empty()) {
    auto fresh = registry.embed(victim_id, std::span<const EmbedRequest>(missing), options);
    for (std::size_t j = 0; j < fresh.size(); ++j) {
      put(fresh[j], cache_text(missing[j]));
      found[missing_at[j]] = std::move(fresh[j]);
    }
  }
  std::vector<EmbeddingVector> out;
  out.reserve(found.size());
  for (auto& f : found) out.push_back(std::move(*f));
  return out;
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::vector<EmbeddingCache::Entry> EmbeddingCache::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

void EmbeddingCache::save(const std::filesystem::path& dir) const {
  std::lock_guard lock(mu_);
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "vectors.bin", std::ios::binary);
  if (!bin) throw DataError("cannot write " + (dir / "vectors.bin").string());
  json manifest{{"format", "geia-embedding-cache"}, {"version", 1}, {"entries", json::array()}};
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    static_assert(std::endian::native == std::endian::little, "cache assumes little-endian host");
    bin.write(reinterpret_cast<const char*>(e.values.data()),
              static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    manifest["entries"].push_back({{"key", e.key},
                                   {"victim_id", e.victim_id},
                                   {"label", e.label},
                                   {"dim", e.values.size()},
                                   {"offset", offset}});
    offset += e.values.size();
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ConfigError("no embedding cache manifest in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed cache manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "geia-embedding-cache" || manifest.value("version", 0) != 1)
    throw ConfigError("unsupported embedding cache format in " + dir.string());
  std::ifstream bin(dir / "vectors.bin", std::ios::binary);
  if (!bin) throw ConfigError("missing vectors.bin in " + dir.string());
  std::vector<double> all;
  bin.seekg(0, std::ios::end);
  all.resize(static_cast<std::size_t>(bin.tellg()) / sizeof(double));
  bin.seekg(0);
  bin.read(reinterpret_cast<char*>(all.data()),
           static_cast<std::streamsize>(all.size() * sizeof(double)));
  EmbeddingCache cache;
  for (const auto& je : manifest["entries"]) {
    const auto off = je.at("offset").get<std::size_t>();
    const auto dim = je.at("dim").get<std::size_t>();
    if (off + dim > all.size()) throw ConfigError("cache manifest points past vectors.bin");
    Entry e{je.at("key").get<std::string>(), je.at("victim_id").get<std::string>(),
            je.value("label", ""),
            std::vector<double>(all.begin() + static_cast<std::ptrdiff_t>(off),
                                all.begin() + static_cast<std::ptrdiff_t>(off + dim))};
    cache.index_.emplace(e.key, cache.entries_.size());
    cache.entries_.push_back(std::move(e));
  }
  return cache;
}

}  // namespace geia
