#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "geia/attacker.hpp"
#include "geia/corpus.hpp"
#include "geia/embedder.hpp"
#include "geia/metrics.hpp"

namespace geia {

// Word vocabulary shared by both baselines: sorted word tokens of the
// training split.
class WordVocab {
 public:
  WordVocab() = default;
  explicit WordVocab(std::vector<std::string> words);
  static WordVocab from_texts(const std::vector<std::string>& texts);

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t i) const { return words_[i]; }
  const std::vector<std::string>& words() const { return words_; }
  // -1 for out-of-vocabulary words.
  int index(const std::string& w) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// ------------------------------------------------------------------ MLC

// x -> ReLU(x W1 + b1) -> sigmoid(h W2 + b2), hidden width = victim dim.
class MLCModel {
 public:
  MLCModel() = default;
  MLCModel(WordVocab vocab, std::string victim_id, int victim_dim);

  const WordVocab& vocab() const { return vocab_; }
  const std::string& victim_id() const { return victim_id_; }
  int victim_dim() const { return victim_dim_; }
  int hidden_dim() const { return victim_dim_; }
  std::size_t output_dim() const { return vocab_.size(); }
  std::size_t param_count() const;

  double threshold() const { return threshold_; }
  void set_threshold(double t);

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  void init(std::uint64_t seed);

  // Per-word probabilities for each row of `x` (rows x victim_dim).
  std::vector<std::vector<double>> probabilities(const std::vector<EmbeddingVector>& x) const;

  // Mean over rows of the BCE summed over the vocabulary; gradients are
  // written to `grad` (resized to param_count()).
  double loss_and_grad(const std::vector<const EmbeddingVector*>& x,
                       const std::vector<std::vector<double>>& targets,
                       std::vector<double>& grad) const;

 private:
  WordVocab vocab_;
  std::string victim_id_;
  int victim_dim_ = 0;
  double threshold_ = 0.5;
  std::vector<double> params_;
};

// Multi-hot target over the vocabulary; out-of-vocabulary words are ignored.
std::vector<double> multi_hot(const WordVocab& vocab, const std::vector<std::string>& words);

std::vector<double> default_threshold_grid();

MLCModel train_mlc_on(const std::vector<EmbeddingVector>& embeddings,
                      const std::vector<std::string>& texts, const TrainConfig& cfg,
                      TrainingLog* log = nullptr);
MLCModel train_mlc(const VictimRegistry& registry, const std::string& victim_id,
                   const std::vector<SentenceRecord>& train_records, const TrainConfig& cfg,
                   TrainingLog* log = nullptr);

// Grid element with the best dev micro-F1; ties go to the smaller value.
// Does not modify the model.
double tune_threshold(const MLCModel& model, const std::vector<EmbeddingVector>& dev_embeddings,
                      const std::vector<std::string>& dev_texts, const std::vector<double>& grid);

// {w : p(w) >= threshold}, in vocabulary order.
TokenBag predict_mlc(const MLCModel& model, const EmbeddingVector& embedding);
TokenBag predict_mlc(const MLCModel& model, const EmbeddingVector& embedding, double threshold);

// ------------------------------------------------------------------ MSP

enum class RemovalPolicy { MostProbable };

struct MSPSpec {
  int recurrent_dim = 0;  // 0 means victim dimension
  int steps = 10;
  RemovalPolicy removal = RemovalPolicy::MostProbable;
};

// GRU whose initial state is tanh(x Wi + bi). Input at step 0 is a start
// symbol; afterwards it is the token chosen at the previous step.
class MSPModel {
 public:
  MSPModel() = default;
  MSPModel(WordVocab vocab, std::string victim_id, int victim_dim, MSPSpec spec);

  const WordVocab& vocab() const { return vocab_; }
  const std::string& victim_id() const { return victim_id_; }
  int victim_dim() const { return victim_dim_; }
  int recurrent_dim() const { return spec_.recurrent_dim; }
  int steps() const { return spec_.steps; }
  const MSPSpec& spec() const { return spec_; }
  std::size_t param_count() const;

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  void init(std::uint64_t seed);

  // Mean over samples of the mean step loss. `gold` holds vocabulary
  // indices (multiset); samples with an empty multiset must be filtered out
  // by the caller.
  double loss_and_grad(const std::vector<const EmbeddingVector*>& x,
                       const std::vector<std::vector<int>>& gold, std::vector<double>& grad) const;

  // Exactly steps() vocabulary indices.
  std::vector<int> predict_indices(const EmbeddingVector& x) const;

 private:
  WordVocab vocab_;
  std::string victim_id_;
  int victim_dim_ = 0;
  MSPSpec spec_;
  std::vector<double> params_;
};

MSPModel train_msp_on(const std::vector<EmbeddingVector>& embeddings,
                      const std::vector<std::string>& texts, const TrainConfig& cfg,
                      const MSPSpec& spec = {}, TrainingLog* log = nullptr);
MSPModel train_msp(const VictimRegistry& registry, const std::string& victim_id,
                   const std::vector<SentenceRecord>& train_records, const TrainConfig& cfg,
                   const MSPSpec& spec = {}, TrainingLog* log = nullptr);

TokenBag predict_msp(const MSPModel& model, const EmbeddingVector& embedding);

void save_mlc(const MLCModel& model, const std::filesystem::path& dir);
MLCModel load_mlc(const std::filesystem::path& dir);
void save_msp(const MSPModel& model, const std::filesystem::path& dir);
MSPModel load_msp(const std::filesystem::path& dir);

}  // namespace geia
