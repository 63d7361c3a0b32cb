#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "geia/embedder.hpp"
#include "geia/textops.hpp"

namespace geia {

using TokenBag = std::vector<std::string>;

struct PRF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Token-level micro-averaged precision/recall/F1. True positives per pair
// are the multiset intersection size. Precision is 0 when nothing is
// predicted.
PRF1 micro_prf1(std::span<const TokenBag> predicted, std::span<const TokenBag> gold);

// 100 * stopword tokens / all tokens over the corpus.
double stopword_rate(std::span<const TokenBag> sentences, const StopwordLexicon& lexicon);

struct NerrResult {
  double ratio = 0.0;
  std::size_t recovered = 0;
  std::size_t total = 0;
  std::size_t excluded_pairs = 0;  // gold has no entities
  std::size_t failed_pairs = 0;    // recognizer raised NerError
};

// Fraction of gold entity surfaces (unique, lowercased, per pair) found by
// lowercase containment in the paired prediction. EvaluationError if every
// pair is excluded.
NerrResult nerr(std::span<const std::string> predicted, std::span<const std::string> gold,
                const EntityRecognizer& ner);

// Language-model port used for perplexity.
class LmScorer {
 public:
  virtual ~LmScorer() = default;
  // One log-probability per scored token of `text`.
  virtual std::vector<double> token_log_probs(std::string_view text) const = 0;
  virtual std::string id() const = 0;
};

class UniformScorer final : public LmScorer {
 public:
  explicit UniformScorer(std::size_t vocab_size) : vocab_size_(vocab_size) {}
  std::vector<double> token_log_probs(std::string_view text) const override;
  std::string id() const override { return "uniform:" + std::to_string(vocab_size_); }

 private:
  std::size_t vocab_size_;
};

// Add-one smoothed word unigram model; one extra slot for unseen words.
class UnigramScorer final : public LmScorer {
 public:
  explicit UnigramScorer(std::span<const std::string> corpus);
  std::vector<double> token_log_probs(std::string_view text) const override;
  std::string id() const override { return "unigram-add1"; }

 private:
  std::unordered_map<std::string, double> counts_;
  double total_ = 0.0;
  double vocab_ = 0.0;
};

// exp(-(sum of token log-probs) / (token count)) over the whole corpus.
double perplexity(std::span<const std::string> texts, const LmScorer& scorer);

struct GenerationScores {
  double rouge1 = 0.0;
  double rougeL = 0.0;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double bleu4 = 0.0;
  std::size_t skipped_pairs = 0;  // empty gold sentences
};

inline constexpr double kBleuEpsilon = 0.1;

// Word-level ROUGE-1/ROUGE-L F-measures (mean over pairs) and corpus BLEU
// with brevity penalty. Zero higher-order n-gram matches are smoothed by
// kBleuEpsilon; zero unigram matches give BLEU 0.
GenerationScores rouge_bleu(std::span<const std::string> predicted,
                            std::span<const std::string> gold);

// Mean cosine similarity between victim embeddings of each prediction and
// its reference. A prediction with a zero-norm embedding scores 0.
double embedding_similarity(const VictimRegistry& registry, const std::string& victim_id,
                            std::span<const std::string> predicted,
                            std::span<const std::string> gold);

struct MetricsBundle {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  double swr = 0.0;
  double swr_diff_vs_test = 0.0;
  std::optional<double> nerr;  // empty when every pair was excluded
  double es = 0.0;
  double ppl = 0.0;
  double rouge1 = 0.0, rougeL = 0.0, bleu1 = 0.0, bleu2 = 0.0, bleu4 = 0.0;

  std::string granularity = "word";
  std::string scorer_id;
  std::string ner_id;
  std::string es_victim_id;

  nlohmann::json to_json() const;
  static MetricsBundle from_json(const nlohmann::json& j);
};

struct EvaluationPorts {
  const VictimRegistry* registry = nullptr;
  std::string es_victim_id;
  const EntityRecognizer* ner = nullptr;
  const LmScorer* scorer = nullptr;
  const StopwordLexicon* stopwords = nullptr;
};

// Full metric bundle for one attack run.
MetricsBundle evaluate_attack(std::span<const std::string> predicted,
                              std::span<const TokenBag> predicted_tokens,
                              std::span<const std::string> gold, const EvaluationPorts& ports);

}  // namespace geia
