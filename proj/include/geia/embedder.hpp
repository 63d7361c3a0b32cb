#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace geia {

enum class VictimFamily {
  SROBERTA,
  ST5,
  MPNET,
  SIMCSE_BERT,
  SIMCSE_ROBERTA,
  TOY_ADDITIVE,
  TOY_LEAKY,
  TOY_BLIND
};

std::string_view to_string(VictimFamily f);
VictimFamily parse_victim_family(std::string_view s);
bool is_toy(VictimFamily f);

struct EmbeddingVector {
  std::vector<double> values;
  std::string victim_id;

  std::size_t dim() const { return values.size(); }
};

struct VictimDescriptor {
  std::string victim_id;
  int dim = 0;
  VictimFamily family = VictimFamily::TOY_BLIND;
  bool frozen = true;
};

// One text to embed. `source` is a side channel consumed only by the
// TOY_LEAKY fixture: when present it is the original sentence the text was
// derived from. Every other victim ignores it.
struct EmbedRequest {
  std::string text;
  std::optional<std::string> source;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::vector<std::vector<double>> embed(std::span<const EmbedRequest> batch) const = 0;
  // Digest of the backend's parameters; unchanged for the victim's lifetime.
  virtual std::string snapshot_checksum() const = 0;
};

// Bag-of-tokens embedder: the embedding is the sum of fixed per-token
// vectors over word_tokens(text). Token vectors are drawn from N(0, 1/dim)
// keyed by (seed, token), so any token is embeddable and vectors agree
// across processes.
class ToyEmbedder final : public EmbeddingBackend {
 public:
  ToyEmbedder(VictimFamily kind, int dim, std::uint64_t seed,
              std::unordered_map<std::string, std::vector<double>> fixed_vectors = {});

  std::vector<std::vector<double>> embed(std::span<const EmbedRequest> batch) const override;
  std::string snapshot_checksum() const override;

  std::vector<double> embed_text(std::string_view text) const;
  std::vector<double> token_vector(const std::string& token) const;

 private:
  VictimFamily kind_;
  int dim_;
  std::uint64_t seed_;
  std::unordered_map<std::string, std::vector<double>> fixed_;
};

// JSON-over-HTTP adapter for pretrained checkpoints served elsewhere.
// POST {"model": external_id, "texts": [...]} -> {"embeddings": [[...], ...]}.
class HttpEmbeddingBackend final : public EmbeddingBackend {
 public:
  HttpEmbeddingBackend(std::string base_url, std::string path, std::string external_id,
                       int timeout_seconds = 60);
  std::vector<std::vector<double>> embed(std::span<const EmbedRequest> batch) const override;
  std::string snapshot_checksum() const override { return "remote:" + external_id_; }

 private:
  std::string base_url_;
  std::string path_;
  std::string external_id_;
  int timeout_seconds_;
};

struct EmbedOptions {
  std::size_t max_batch = 64;
  int max_retries = 2;
};

// Read-only after registration; embed() may be called concurrently.
class VictimRegistry {
 public:
  // Toy victims. `vocab` seeds nothing but must be non-empty; tokens in it get
  // the same keyed vectors as any other token.
  const VictimDescriptor& register_toy(VictimFamily kind, const std::string& victim_id,
                                       const std::vector<std::string>& vocab, int dim,
                                       std::uint64_t seed);
  // Toy victim with explicit token vectors (test fixtures).
  const VictimDescriptor& register_toy_vectors(
      VictimFamily kind, const std::string& victim_id,
      std::unordered_map<std::string, std::vector<double>> vectors);
  const VictimDescriptor& register_backend(VictimDescriptor descriptor,
                                           std::shared_ptr<const EmbeddingBackend> backend);

  bool contains(const std::string& victim_id) const { return victims_.contains(victim_id); }
  const VictimDescriptor& descriptor(const std::string& victim_id) const;
  std::string snapshot_checksum(const std::string& victim_id) const;
  std::vector<std::string> ids() const;

  std::vector<EmbeddingVector> embed(const std::string& victim_id,
                                     const std::vector<std::string>& texts,
                                     const EmbedOptions& options = {}) const;
  std::vector<EmbeddingVector> embed(const std::string& victim_id,
                                     std::span<const EmbedRequest> requests,
                                     const EmbedOptions& options = {}) const;

 private:
  struct Entry {
    VictimDescriptor descriptor;
    std::shared_ptr<const EmbeddingBackend> backend;
  };
  const Entry& entry(const std::string& victim_id) const;

  std::map<std::string, Entry> victims_;
};

// Cosine similarity in [-1, 1]; ConfigError on dimension mismatch,
// SimilarityError on a zero-norm input.
double similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Content-addressed store of embeddings keyed by sha256(victim_id, text).
// On disk: <dir>/vectors.bin (little-endian float64) + <dir>/manifest.json.
class EmbeddingCache {
 public:
  struct Entry {
    std::string key;
    std::string victim_id;
    std::string label;  // optional caller tag, e.g. a record id
    std::vector<double> values;
  };

  EmbeddingCache() = default;
  EmbeddingCache(EmbeddingCache&& other) noexcept;
  EmbeddingCache& operator=(EmbeddingCache&&) = delete;

  static std::string key_for(std::string_view victim_id, std::string_view text);

  std::optional<EmbeddingVector> get(const std::string& victim_id, std::string_view text) const;
  void put(const EmbeddingVector& v, std::string_view text, std::string label = "");
  // Embeds only texts missing from the cache.
  std::vector<EmbeddingVector> get_or_embed(const VictimRegistry& registry,
                                            const std::string& victim_id,
                                            std::span<const EmbedRequest> requests,
                                            const EmbedOptions& options = {});

  std::size_t size() const;
  std::vector<Entry> entries() const;  // insertion order

  void save(const std::filesystem::path& dir) const;
  static EmbeddingCache load(const std::filesystem::path& dir);

 private:
  mutable std::mutex mu_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace geia
