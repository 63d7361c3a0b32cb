#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geia/attacker.hpp"
#include "geia/embedder.hpp"
#include "geia/reasoner.hpp"

namespace geia {

inline constexpr double kAnchorCoverageFloor = 0.9;

struct SpanAlignment {
  std::vector<CharSpan> original_spans;
  std::vector<CharSpan> alternative_spans;
  double anchor_coverage = 1.0;  // minimum over the two texts
};

class AlignmentError : public Error {
 public:
  explicit AlignmentError(const std::string& what) : Error("ALIGN_FAIL", what) {}
};

// Locates the text each placeholder replaced, in both the original and the
// alternative. The literal segments between placeholders (anchors) are
// found left to right, exactly when possible and otherwise by their longest
// common substring with the remaining text. Throws AlignmentError when an
// anchor cannot be placed, a span comes out empty, or coverage is below
// `coverage_floor`.
SpanAlignment align_spans(const MaskedTriple& triple,
                          double coverage_floor = kAnchorCoverageFloor);

struct ConditionScore {
  double whole_sentence_mean = 0.0;
  std::optional<double> masked_only_mean;
  double whole_sum = 0.0;
  std::size_t whole_count = 0;
  double masked_sum = 0.0;
  std::size_t masked_count = 0;
};

struct LikelihoodReport {
  std::size_t index = 0;
  ConditionScore orig_with, orig_without, sim_with, sim_without;
};

// Scores the original and the alternative under the attacker, once with the
// victim embedding of the masked text as prefix and once without a prefix.
// The masked text is embedded with the original as side channel, so a leaky
// toy victim sees the original.
LikelihoodReport score_conditions(const AttackerModel& attacker, const EmbeddingVector& masked_embedding,
                                  const MaskedTriple& triple, const SpanAlignment& alignment);

enum class Aggregation { WHOLE, MASKED_ONLY };
enum class Condition { WITH, WITHOUT };
enum class Pooling { PER_SAMPLE, TOKEN_POOLED };

std::string_view to_string(Aggregation a);
std::string_view to_string(Condition c);
std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view s);

// 100 * (orig - sim) / |orig|.
double percent_difference(double orig_mean, double sim_mean);

struct PairedTTest {
  double t = 0.0;
  std::optional<double> p;  // empty when the differences have zero variance
  std::size_t n = 0;
  double mean_difference = 0.0;
};

// Two-sided paired t-test on orig[i] - sim[i].
PairedTTest paired_t_test(const std::vector<double>& orig, const std::vector<double>& sim);

struct CellVerdict {
  Aggregation aggregation = Aggregation::WHOLE;
  Condition condition = Condition::WITH;
  double orig_mean = 0.0;
  double sim_mean = 0.0;
  double percent_diff = 0.0;
  double t_statistic = 0.0;
  std::optional<double> p_value;  // empty = NOT_COMPUTABLE
  std::size_t n_included = 0;
  std::size_t n_excluded = 0;

  bool significant(double alpha) const { return p_value && *p_value < alpha; }
};

inline constexpr double kAlpha = 0.05;

// `reports` may contain fewer entries than `input_size`; the remainder count
// as excluded. Throws EvaluationError with fewer than 2 included samples.
CellVerdict compare_distributions(const std::vector<LikelihoodReport>& reports,
                                  Aggregation aggregation, Condition condition,
                                  std::size_t input_size, Pooling pooling = Pooling::PER_SAMPLE);

struct Exclusion {
  std::size_t index = 0;
  std::string reason;
  std::string detail;
};

struct AuditRow {
  std::string reasoner_id;
  std::string victim_id;
  std::vector<CellVerdict> cells;  // WHOLE/WITH, WHOLE/WITHOUT, MASKED_ONLY/WITH, MASKED_ONLY/WITHOUT

  const CellVerdict& cell(Aggregation a, Condition c) const;
};

struct AuditOptions {
  Pooling pooling = Pooling::PER_SAMPLE;
  double coverage_floor = kAnchorCoverageFloor;
  double alpha = kAlpha;
  double min_inclusion_rate = 0.5;
};

struct AuditResult {
  std::vector<AuditRow> rows;  // one per reasoner id, sorted
  std::vector<LikelihoodReport> reports;
  std::vector<Exclusion> exclusions;
  std::size_t input_size = 0;
  AuditOptions options;

  nlohmann::json to_json() const;
};

// align -> score -> compare for all four cells. DataError on an empty input
// or when fewer than min_inclusion_rate of the triples survive alignment.
AuditResult audit(const std::vector<MaskedTriple>& triples, const AttackerModel& attacker,
                  const VictimRegistry& registry, const std::string& victim_id,
                  const AuditOptions& options = {});

// ------------------------------------------------------- oracle harness

// Synthetic leakage fixture: filler words plus person/location entity words
// drawn uniformly from disjoint pools. The alternative swaps each entity for
// a different one with the same label, so original and alternative are
// exchangeable unless the victim leaks the original.
struct OracleSpec {
  int filler_vocab = 40;
  int entities_per_label = 20;
  int auxiliary_sentences = 2000;
  int audit_sentences = 500;
  int min_filler = 3;
  int max_filler = 6;
  int max_entities = 2;
  std::uint64_t seed = 42;
};

struct OracleCorpus {
  std::vector<SentenceRecord> auxiliary;  // attacker training data
  std::vector<MaskedTriple> triples;      // audit input, disjoint from auxiliary
  std::vector<std::string> vocabulary;
};

OracleCorpus make_oracle_corpus(const OracleSpec& spec);

}  // namespace geia
