#include <algorithm>
#include <cctype>

#include <gtest/gtest.h>

#include "geia/corpus.hpp"
#include "geia/errors.hpp"
#include "geia/hashing.hpp"
#include "geia/textops.hpp"
#include "support.hpp"

using namespace geia;
using geia::testing::TempDir;

namespace {

std::vector<std::string> hundred_sentences() {
  SyntheticSpec spec;
  spec.sentences = 60;
  std::vector<std::string> out;
  for (const auto& r : generate_synthetic(spec)) out.push_back(r.text);
  const char* extra[] = {"Hello world", "Rommel was born in Heidenheim, Germany.", "It's 45 km away!",
                         "don't stop", "a  b   c", "Zürich is nice", "x <PERSON> y", "[[ORGANIZATION]] said",
                         "1999-2003 (approx.)", "tab\tseparated"};
  while (out.size() < 100) out.push_back(extra[out.size() % 10]);
  return out;
}

void expect_valid_offsets(const TokenSequence& s, std::string_view text) {
  ASSERT_EQ(s.offsets.size(), s.token_ids.size());
  std::size_t prev_end = 0;
  for (const auto& o : s.offsets) {
    EXPECT_LE(prev_end, o.begin);
    EXPECT_LT(o.begin, o.end);
    EXPECT_LE(o.end, text.size());
    prev_end = o.end;
  }
}

TEST(WordTokenizer, EmptyInputGivesEmptySequence) {
  const auto tok = WordTokenizer::build({"hello world"});
  EXPECT_TRUE(tok.tokenize("").token_ids.empty());
}

TEST(WordTokenizer, RoundTripAndOffsets) {
  const auto corpus = hundred_sentences();
  const auto tok = WordTokenizer::build(corpus);
  for (const auto& s : corpus) {
    const auto seq = tok.tokenize(s);
    expect_valid_offsets(seq, s);
    if (s.find('\t') == std::string::npos) EXPECT_EQ(tok.decode(seq.token_ids), s);
  }
  const auto hw = tok.tokenize("hello world");
  ASSERT_EQ(hw.size(), 2u);
  EXPECT_EQ(hw.offsets[0], (CharSpan{0, 5}));
  EXPECT_EQ(hw.offsets[1], (CharSpan{5, 11}));
}

TEST(WordTokenizer, UnknownPiecesMapToUnk) {
  const auto tok = WordTokenizer::build({"a b"});
  const auto seq = tok.tokenize("a zebra");
  ASSERT_EQ(seq.size(), 2u);
  EXPECT_EQ(seq.token_ids[1], WordTokenizer::kUnk);
  EXPECT_EQ(tok.tokenize("a b").token_ids, tok.tokenize("a b").token_ids);
}

TEST(WordTokenizer, SaveLoadPreservesIds) {
  TempDir dir;
  const auto tok = WordTokenizer::build(hundred_sentences());
  tok.save(dir.path());
  const auto back = load_tokenizer(dir.path());
  EXPECT_EQ(back->vocab_size(), tok.vocab_size());
  EXPECT_EQ(back->id(), tok.id());
  EXPECT_EQ(back->tokenize("Rommel was born").token_ids, tok.tokenize("Rommel was born").token_ids);
}

// GPT-2 byte-to-unicode table, built independently of the library.
std::vector<std::string> gpt2_bytes() {
  std::vector<int> bs;
  for (int b = '!'; b <= '~'; ++b) bs.push_back(b);
  for (int b = 0xA1; b <= 0xAC; ++b) bs.push_back(b);
  for (int b = 0xAE; b <= 0xFF; ++b) bs.push_back(b);
  std::vector<int> cs = bs;
  int n = 0;
  for (int b = 0; b < 256; ++b) {
    if (std::find(bs.begin(), bs.end(), b) == bs.end()) {
      bs.push_back(b);
      cs.push_back(256 + n++);
    }
  }
  std::vector<std::string> table(256);
  for (std::size_t i = 0; i < bs.size(); ++i) {
    const int c = cs[i];
    std::string u;
    if (c < 0x80) {
      u += static_cast<char>(c);
    } else {
      u += static_cast<char>(0xC0 | (c >> 6));
      u += static_cast<char>(0x80 | (c & 0x3F));
    }
    table[static_cast<std::size_t>(bs[i])] = u;
  }
  return table;
}

BpeTokenizer tiny_bpe() {
  const auto table = gpt2_bytes();
  std::unordered_map<std::string, int> vocab;
  int next = 0;
  for (const auto& u : table) vocab.emplace(u, next++);
  const std::string sp = table[' '];  // "Ġ"
  std::vector<std::pair<std::string, std::string>> merges{
      {"h", "e"}, {"l", "l"}, {"he", "ll"}, {"hell", "o"}, {sp, "w"}, {"o", "r"}, {sp + "w", "or"}};
  for (const auto& [a, b] : merges) vocab.emplace(a + b, next++);
  vocab.emplace("<|endoftext|>", next++);
  return BpeTokenizer(vocab, merges, "tiny");
}

TEST(BpeTokenizer, AppliesMergesByRank) {
  const auto tok = tiny_bpe();
  const auto seq = tok.tokenize("hello world");
  std::vector<std::string> pieces;
  for (int id : seq.token_ids) pieces.push_back(tok.token_text(id));
  EXPECT_EQ(pieces, (std::vector<std::string>{"hello", "\xC4\xA0wor", "l", "d"}));
  expect_valid_offsets(seq, "hello world");
  EXPECT_EQ(seq.offsets.front(), (CharSpan{0, 5}));
  EXPECT_EQ(seq.offsets[1], (CharSpan{5, 9}));
}

TEST(BpeTokenizer, ByteLevelRoundTrip) {
  const auto tok = tiny_bpe();
  for (const auto& s : hundred_sentences()) {
    const auto seq = tok.tokenize(s);
    expect_valid_offsets(seq, s);
    EXPECT_EQ(tok.decode(seq.token_ids), s);
  }
  EXPECT_TRUE(tok.tokenize("").token_ids.empty());
  EXPECT_EQ(tok.bos_id(), tok.eos_id());
}

TEST(BpeTokenizer, VocabularyMustCoverBytes) {
  std::unordered_map<std::string, int> vocab{{"a", 0}, {"<|endoftext|>", 1}};
  EXPECT_THROW(BpeTokenizer(vocab, {}, "broken"), ConfigError);
}

TEST(BpeTokenizer, SaveLoadRoundTrip) {
  TempDir dir;
  const auto tok = tiny_bpe();
  tok.save(dir.path());
  const auto back = load_tokenizer(dir.path());
  EXPECT_EQ(back->tokenize("hello world").token_ids, tok.tokenize("hello world").token_ids);
  EXPECT_EQ(back->vocab_size(), tok.vocab_size());
}

TEST(WordTokens, Definition) {
  EXPECT_EQ(word_tokens("I like, to read."), (std::vector<std::string>{"i", "like", "to", "read"}));
  EXPECT_TRUE(word_tokens("").empty());
  EXPECT_EQ(word_tokens("Rommel was born in Heidenheim,"),
            (std::vector<std::string>{"rommel", "was", "born", "in", "heidenheim"}));
  EXPECT_EQ(word_tokens("... -- !"), std::vector<std::string>{});
}

TEST(WordTokens, NoUppercaseNoPunctuationOnlyTokens) {
  for (const auto& s : hundred_sentences()) {
    for (const auto& w : word_tokens(s)) {
      EXPECT_FALSE(w.empty());
      EXPECT_TRUE(std::none_of(w.begin(), w.end(), [](unsigned char c) { return std::isupper(c); })) << w;
      EXPECT_TRUE(std::any_of(w.begin(), w.end(), [](unsigned char c) { return !std::ispunct(c); })) << w;
    }
  }
}

TEST(Stopwords, ShippedListIsPinned) {
  const auto lex = StopwordLexicon::english();
  EXPECT_EQ(lex.size(), 179u);
  EXPECT_EQ(lex.checksum(), StopwordLexicon::kPinnedChecksum);
  EXPECT_TRUE(lex.contains("the"));
  EXPECT_TRUE(lex.contains("i"));
  EXPECT_FALSE(lex.contains("rommel"));
}

TEST(Stopwords, ChecksumMismatchIsConfigError) {
  TempDir dir;
  geia::testing::write_file(dir / "sw.txt", "a\nthe\n");
  EXPECT_THROW(StopwordLexicon::load(dir / "sw.txt", StopwordLexicon::kPinnedChecksum), ConfigError);
  EXPECT_EQ(StopwordLexicon::load(dir / "sw.txt").size(), 2u);
}

TEST(DictionaryNer, MembershipAndNoHits) {
  DictionaryNer ner({{"rommel", EntityLabel::PERSON}, {"ulm", EntityLabel::LOCATION}});
  const auto es = ner.recognize("Rommel was 45 km from Ulm");
  ASSERT_EQ(es.size(), 2u);
  EXPECT_EQ(es[0].surface, "Rommel");
  EXPECT_EQ(es[0].label, EntityLabel::PERSON);
  EXPECT_EQ(es[1].span, (CharSpan{22, 25}));
  EXPECT_TRUE(ner.recognize("nothing to see here").empty());
  EXPECT_TRUE(ner.recognize("Ulmer is not Ulm-adjacent").size() == 1u);
}

// Brute-force leftmost-longest reference: at each position try every entry
// on word boundaries, keep the longest, jump past it.
std::vector<std::pair<std::size_t, std::size_t>> brute_force(const std::vector<std::string>& dict,
                                                             const std::string& text) {
  const std::string low = to_lower(text);
  auto is_word = [](unsigned char c) { return std::isalnum(c) || c >= 0x80; };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < low.size()) {
    std::size_t best = 0;
    if (i == 0 || !is_word(static_cast<unsigned char>(low[i - 1]))) {
      for (const auto& d : dict) {
        if (low.compare(i, d.size(), d) != 0) continue;
        const std::size_t end = i + d.size();
        if (end < low.size() && is_word(static_cast<unsigned char>(low[end]))) continue;
        best = std::max(best, d.size());
      }
    }
    if (best > 0) {
      out.emplace_back(i, i + best);
      i += best;
    } else {
      ++i;
    }
  }
  return out;
}

TEST(DictionaryNer, LeftmostLongestMatchesBruteForce) {
  const std::vector<std::string> dict{"new", "new york", "new york city", "york", "city hall", "hall",
                                      "ulm", "ulm minster", "a", "a b"};
  std::vector<std::pair<std::string, EntityLabel>> entries;
  for (const auto& d : dict) entries.emplace_back(d, EntityLabel::ENTITY);
  DictionaryNer ner(entries);
  const std::vector<std::string> texts{
      "New York City Hall is big",   "new york",        "York and new",          "the city hall of ulm",
      "Ulm Minster, Ulm.",           "newyork city",    "a b c",                 "a a b b",
      "New York City hall",          "no match here",   "ULM MINSTER",           "new new york",
      "hall-city hall",              "York City Hall",  "in New York, City Hall", "a",
      "b a",                         "ulmminster ulm",  "New Yorker",            "city hall hall"};
  ASSERT_EQ(texts.size(), 20u);
  for (const auto& t : texts) {
    const auto got = ner.recognize(t);
    const auto want = brute_force(dict, t);
    ASSERT_EQ(got.size(), want.size()) << t;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].span.begin, want[i].first) << t;
      EXPECT_EQ(got[i].span.end, want[i].second) << t;
      if (i > 0) EXPECT_LE(got[i - 1].span.end, got[i].span.begin);
    }
  }
}

TEST(DictionaryNer, LoadsTabSeparatedFile) {
  TempDir dir;
  geia::testing::write_file(dir / "ner.tsv", "Rommel\tPERSON\nHeidenheim\tLOCATION\nWehrmacht\n");
  const auto ner = DictionaryNer::load(dir / "ner.tsv");
  EXPECT_EQ(ner.size(), 3u);
  const auto es = ner.recognize("Rommel served in the Wehrmacht near Heidenheim");
  ASSERT_EQ(es.size(), 3u);
  EXPECT_EQ(es[1].label, EntityLabel::ENTITY);
  EXPECT_EQ(es[2].label, EntityLabel::LOCATION);
  EXPECT_EQ(parse_entity_label("ANIMAL"), EntityLabel::OTHER);
}

TEST(Hashing, KnownSha256) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
