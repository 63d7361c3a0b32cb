#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geia/corpus.hpp"
#include "geia/decoder.hpp"
#include "geia/embedder.hpp"
#include "geia/textops.hpp"

namespace geia {

enum class Optimizer { ADAM };

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 3e-4;
  Optimizer optimizer = Optimizer::ADAM;
  std::uint64_t seed = 42;
  int max_len = 64;

  void validate() const;
};

// Auto projects only when dimensions differ; Force always projects; Bypass
// requires equal dimensions.
enum class ProjectionMode { Auto, Force, Bypass };

// Affine map from the victim embedding space into the decoder's input space.
// With bypass the map is the identity and has no parameters.
class ProjectionModule {
 public:
  ProjectionModule() = default;
  ProjectionModule(int victim_dim, int decoder_dim, ProjectionMode mode, ParamLayout& layout);

  bool bypass() const { return bypass_; }
  int victim_dim() const { return victim_dim_; }
  int decoder_dim() const { return decoder_dim_; }

  void init(std::span<double> params, Rng& rng) const;
  std::vector<double> apply(std::span<const double> params, std::span<const double> x) const;
  // Accumulates parameter gradients for output gradient `dy` at input `x`.
  void backward(std::span<const double> x, std::span<const double> dy,
                std::span<double> grads) const;

 private:
  int victim_dim_ = 0;
  int decoder_dim_ = 0;
  bool bypass_ = true;
  Slice weight_, bias_;
};

struct AttackerSpec {
  // Decoder geometry; vocab_size and max_len are filled from the tokenizer
  // and TrainConfig.
  int layers = 2;
  int hidden = 64;
  int heads = 2;
  ProjectionMode projection = ProjectionMode::Auto;
  bool supervise_eos = true;
  // When null a WordTokenizer is built from the training texts.
  std::shared_ptr<const Tokenizer> tokenizer;
};

// Inverse mapping from victim embeddings to text: projection + decoder.
class AttackerModel {
 public:
  AttackerModel(DecoderConfig config, std::shared_ptr<const Tokenizer> tokenizer,
                std::string victim_id, int victim_dim,
                ProjectionMode projection = ProjectionMode::Auto, bool supervise_eos = true);

  const DecoderConfig& config() const { return decoder_.config(); }
  const Decoder& decoder() const { return decoder_; }
  const ProjectionModule& projection() const { return projection_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  std::shared_ptr<const Tokenizer> tokenizer_ptr() const { return tokenizer_; }
  const std::string& victim_id() const { return victim_id_; }
  int victim_dim() const { return projection_.victim_dim(); }
  bool supervise_eos() const { return supervise_eos_; }
  ProjectionMode projection_mode() const { return mode_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  void init(std::uint64_t seed);

  // Decoder input [prefix?, BOS, tokens...]; targets are the next tokens and
  // optionally EOS after the last token.
  DecoderInput make_input(const std::optional<EmbeddingVector>& prefix,
                          const std::vector<int>& tokens, bool with_targets) const;

  // Single-sequence convenience wrappers; params() must be initialized.
  std::vector<double> project(const EmbeddingVector& e) const;

 private:
  Decoder decoder_;
  ProjectionModule projection_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  std::string victim_id_;
  ProjectionMode mode_ = ProjectionMode::Auto;
  bool supervise_eos_ = true;
  std::vector<double> params_;
};

struct TrainingLog {
  std::vector<double> epoch_loss;  // token-weighted mean cross-entropy
  long steps = 0;
  std::size_t skipped_records = 0;
  std::string victim_checksum_before;
  std::string victim_checksum_after;
};

struct TrainResult {
  AttackerModel model;
  TrainingLog log;
};

TrainResult train_attacker(const VictimRegistry& registry, const std::string& victim_id,
                           const std::vector<SentenceRecord>& train_records,
                           const TrainConfig& cfg, const AttackerSpec& spec = {});

// Lower-level entry point over precomputed embeddings; used when the caller
// already holds embeddings (and by train_attacker).
TrainingLog train_attacker_on(AttackerModel& model, const std::vector<EmbeddingVector>& embeddings,
                              const std::vector<std::vector<int>>& token_ids,
                              const TrainConfig& cfg);

struct Hypothesis {
  std::vector<int> tokens;  // excludes BOS and EOS
  double score = 0.0;       // cumulative log-probability (includes EOS if finished)
  bool ended_with_eos = false;
};

// Sequence-level log-probability of `tokens` (plus EOS when `with_eos`)
// under the attacker conditioned on `prefix`.
double sequence_log_prob(const AttackerModel& model, const std::optional<EmbeddingVector>& prefix,
                         const std::vector<int>& tokens, bool with_eos);

Hypothesis beam_search(const AttackerModel& model, const EmbeddingVector& embedding,
                       int beam_size = 5, int max_len = 64);
Hypothesis greedy_decode(const AttackerModel& model, const EmbeddingVector& embedding,
                         int max_len = 64);
std::string invert(const AttackerModel& model, const EmbeddingVector& embedding,
                   int beam_size = 5, int max_len = 64);

struct ScoredSequence {
  TokenSequence tokens;
  std::vector<double> log_probs;  // aligned with tokens.offsets

  double mean() const;
};

// Teacher-forced log p(w_i | prefix?, BOS, w_<i) for every token of `text`.
ScoredSequence score_sequence(const AttackerModel& model, std::string_view text,
                              const std::optional<EmbeddingVector>& prefix);

// Checkpoint directory: header.json, weights.bin, tokenizer/.
void save_attacker(const AttackerModel& model, const std::filesystem::path& dir);
AttackerModel load_attacker(const std::filesystem::path& dir);

}  // namespace geia
