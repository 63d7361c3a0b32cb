#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace geia {

// Byte offsets [begin, end) into the UTF-8 input.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool intersects(const CharSpan& o) const { return begin < o.end && o.begin < end; }
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct TokenSequence {
  std::vector<int> token_ids;
  std::vector<CharSpan> offsets;
  std::string tokenizer_id;

  std::size_t size() const { return token_ids.size(); }
};

// Splits text into GPT-2 style pieces: an optional leading space followed by
// a letter run, a digit run, or a punctuation run; contractions are separate
// pieces and leftover whitespace forms its own piece. Bytes >= 0x80 count as
// letters.
std::vector<CharSpan> pretokenize(std::string_view text);

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual TokenSequence tokenize(std::string_view text) const = 0;
  virtual std::string decode(const std::vector<int>& ids) const = 0;
  virtual std::string token_text(int id) const = 0;
  virtual int vocab_size() const = 0;
  virtual const std::string& id() const = 0;

  virtual int bos_id() const = 0;
  virtual int eos_id() const = 0;
  virtual int pad_id() const = 0;
  // Token ids that may never be generated (BOS, PAD, ...).
  virtual std::vector<int> non_generable_ids() const = 0;

  // Serializes whatever is needed to reconstruct the tokenizer.
  virtual void save(const std::filesystem::path& dir) const = 0;
};

// Each pre-tokenized piece is one token; unseen pieces map to <unk>.
// Ids 0..3 are <pad>, <bos>, <eos>, <unk>.
class WordTokenizer final : public Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  explicit WordTokenizer(std::vector<std::string> pieces);
  static WordTokenizer build(const std::vector<std::string>& texts);
  static WordTokenizer load(const std::filesystem::path& dir);

  TokenSequence tokenize(std::string_view text) const override;
  std::string decode(const std::vector<int>& ids) const override;
  std::string token_text(int id) const override;
  int vocab_size() const override { return static_cast<int>(pieces_.size()); }
  const std::string& id() const override { return id_; }
  int bos_id() const override { return kBos; }
  int eos_id() const override { return kEos; }
  int pad_id() const override { return kPad; }
  std::vector<int> non_generable_ids() const override { return {kPad, kBos, kUnk}; }
  void save(const std::filesystem::path& dir) const override;

  const std::vector<std::string>& pieces() const { return pieces_; }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
  std::string id_;
};

// Byte-level BPE over a GPT-2 format vocabulary (vocab.json + merges.txt).
// <|endoftext|> doubles as BOS, EOS and PAD, as in GPT-2.
class BpeTokenizer final : public Tokenizer {
 public:
  BpeTokenizer(std::unordered_map<std::string, int> vocab,
               std::vector<std::pair<std::string, std::string>> merges, std::string name);
  static BpeTokenizer load(const std::filesystem::path& dir, std::string name = "");

  TokenSequence tokenize(std::string_view text) const override;
  std::string decode(const std::vector<int>& ids) const override;
  std::string token_text(int id) const override;
  int vocab_size() const override { return static_cast<int>(id_to_token_.size()); }
  const std::string& id() const override { return id_; }
  int bos_id() const override { return eot_; }
  int eos_id() const override { return eot_; }
  int pad_id() const override { return eot_; }
  std::vector<int> non_generable_ids() const override { return {}; }
  void save(const std::filesystem::path& dir) const override;

 private:
  std::vector<std::string> bpe(const std::string& mapped) const;

  std::unordered_map<std::string, int> vocab_;
  std::vector<std::string> id_to_token_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, int> ranks_;
  std::string id_;
  int eot_ = 0;
};

// Reconstructs a tokenizer previously written with Tokenizer::save.
std::unique_ptr<Tokenizer> load_tokenizer(const std::filesystem::path& dir);

// Lowercased whitespace tokens with leading/trailing punctuation stripped;
// tokens that are punctuation only are dropped.
std::vector<std::string> word_tokens(std::string_view text);
std::string to_lower(std::string_view text);

class StopwordLexicon {
 public:
  // sha256 of data/stopwords_en.txt
  static constexpr std::string_view kPinnedChecksum =
      "019f104ba2ed07436d05f9cdd3383034ad66014edc27fc651f837e1a038b6451";

  StopwordLexicon(std::unordered_set<std::string> words, std::string checksum)
      : words_(std::move(words)), checksum_(std::move(checksum)) {}

  // Loads a one-word-per-line file; throws ConfigError if expected_checksum is
  // non-empty and does not match.
  static StopwordLexicon load(const std::filesystem::path& path,
                              std::string_view expected_checksum = {});
  // The shipped English list, checksum-verified.
  static StopwordLexicon english();

  bool contains(const std::string& word) const { return words_.contains(word); }
  std::size_t size() const { return words_.size(); }
  const std::string& checksum() const { return checksum_; }

 private:
  std::unordered_set<std::string> words_;
  std::string checksum_;
};

enum class EntityLabel { PERSON, LOCATION, ORGANIZATION, ENTITY, OTHER };

std::string_view to_string(EntityLabel label);
EntityLabel parse_entity_label(std::string_view s);

struct Entity {
  std::string surface;
  CharSpan span;
  EntityLabel label = EntityLabel::OTHER;
};

// Named-entity port. Implementations return non-overlapping spans in
// ascending order and signal failures with NerError.
class EntityRecognizer {
 public:
  virtual ~EntityRecognizer() = default;
  virtual std::vector<Entity> recognize(std::string_view text) const = 0;
  virtual std::string id() const = 0;
};

// Case-insensitive phrase dictionary matched on word boundaries,
// leftmost-longest.
class DictionaryNer final : public EntityRecognizer {
 public:
  DictionaryNer() = default;
  explicit DictionaryNer(const std::vector<std::pair<std::string, EntityLabel>>& entries);
  // Lines of "surface<TAB>LABEL"; a missing label means ENTITY.
  static DictionaryNer load(const std::filesystem::path& path);

  void add(std::string_view surface, EntityLabel label);
  std::vector<Entity> recognize(std::string_view text) const override;
  std::string id() const override { return "dictionary"; }
  std::size_t size() const { return entries_.size(); }

 private:
  // Sorted by descending length so the first hit at a position is the longest.
  std::vector<std::pair<std::string, EntityLabel>> entries_;
};

}  // namespace geia
