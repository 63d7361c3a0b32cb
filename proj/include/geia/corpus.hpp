#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "geia/textops.hpp"

namespace geia {

enum class Dataset { PC, QNLI, ALTLEX, SYNTHETIC };
enum class Split { Train, Dev, Test };

std::string_view to_string(Dataset d);
std::string_view to_string(Split s);
// Accepts pc/qnli/altlex/synthetic in any case; ConfigError otherwise.
Dataset parse_dataset(std::string_view s);
Split parse_split(std::string_view s);

struct SentenceRecord {
  std::string id;
  std::string text;
  Dataset dataset = Dataset::SYNTHETIC;
  Split split = Split::Test;
};

// Train:dev:test percentages.
struct SplitRatios {
  int train = 0;
  int dev = 0;
  int test = 100;

  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

SplitRatios default_split(Dataset d);

struct Partition {
  std::vector<SentenceRecord> train;
  std::vector<SentenceRecord> dev;
  std::vector<SentenceRecord> test;
};

struct DatasetSummary {
  std::size_t sentence_count = 0;
  double avg_sentence_length = 0.0;
  std::size_t unique_named_entities = 0;
  // Records per train/dev/test.
  std::array<std::size_t, 3> split_counts{};
};

inline constexpr std::uint64_t kDefaultSplitSeed = 42;

// Reads the JSONL interchange format: {"id"?, "text", "split"?} per line.
// Missing ids become "<dataset>-<line>"; a missing split means test.
std::vector<SentenceRecord> load_dataset(const std::filesystem::path& path, Dataset dataset);
std::vector<SentenceRecord> read_records(std::istream& in, Dataset dataset,
                                         const std::string& source = "<stream>");
void write_records(const std::filesystem::path& path, const std::vector<SentenceRecord>& records);

// Seeded shuffle followed by contiguous partition; sizes are floor(N*ratio/100)
// for train and dev, with test taking the remainder.
Partition apply_split(std::vector<SentenceRecord> records, SplitRatios ratios,
                      std::uint64_t seed = kDefaultSplitSeed);

// Seeded subset of round(fraction*N) records in original order.
std::vector<SentenceRecord> sample_fraction(const std::vector<SentenceRecord>& records,
                                            double fraction, std::uint64_t seed = kDefaultSplitSeed);

DatasetSummary summarize(const std::vector<SentenceRecord>& records,
                         const EntityRecognizer& entity_recognizer);

// Dataset-native importers; each flattens to one sentence per record.
// PersonaChat: ParlAI "self_original" JSON (persona lines + dialogue turns).
std::vector<SentenceRecord> import_personachat(const std::filesystem::path& path);
// QNLI: GLUE TSV with question and sentence columns; both become records.
std::vector<SentenceRecord> import_qnli(const std::filesystem::path& path);
// AltLex: plain text or TSV, first column is the sentence.
std::vector<SentenceRecord> import_altlex(const std::filesystem::path& path);
std::vector<SentenceRecord> import_dataset(Dataset dataset, const std::filesystem::path& path);

// Seeded synthetic corpus: sentences of Zipf-distributed words drawn from a
// letter-only vocabulary (so each word survives any tokenizer as one word).
struct SyntheticSpec {
  int vocab_size = 50;
  int sentences = 2000;
  int min_words = 3;
  int max_words = 8;
  double zipf_exponent = 1.0;
  std::uint64_t seed = 7;
};

std::vector<std::string> synthetic_vocabulary(int size);
std::vector<SentenceRecord> generate_synthetic(const SyntheticSpec& spec);

}  // namespace geia
