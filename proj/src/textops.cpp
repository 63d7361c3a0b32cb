#include "geia/textops.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geia/errors.hpp"
#include "geia/hashing.hpp"

namespace geia {

namespace {

using json = nlohmann::json;

bool is_space(unsigned char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }
bool is_letter(unsigned char c) { return std::isalpha(c) || c >= 0x80; }
bool is_digit(unsigned char c) { return std::isdigit(c) != 0; }

enum class CharClass { Letter, Digit, Other, Space };

CharClass classify(unsigned char c) {
  if (is_space(c)) return CharClass::Space;
  if (is_letter(c)) return CharClass::Letter;
  if (is_digit(c)) return CharClass::Digit;
  return CharClass::Other;
}

std::size_t contraction_length(std::string_view text, std::size_t i) {
  if (text[i] != '\'') return 0;
  static constexpr std::array<std::string_view, 7> kSuffixes = {"re", "ve", "ll", "s",
                                                                 "t",  "m",  "d"};
  for (auto suffix : kSuffixes) {
    if (text.substr(i + 1, suffix.size()) == suffix) return suffix.size() + 1;
  }
  return 0;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// GPT-2's reversible byte <-> printable code point table.
const std::array<std::string, 256>& byte_encoder() {
  static const std::array<std::string, 256> table = [] {
    std::array<int, 256> cp{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    int extra = 0;
    for (int b = 0; b < 256; ++b) cp[b] = direct[b] ? b : 256 + extra++;
    std::array<std::string, 256> out;
    for (int b = 0; b < 256; ++b) {
      const int c = cp[b];
      std::string s;
      if (c < 0x80) {
        s.push_back(static_cast<char>(c));
      } else {
        s.push_back(static_cast<char>(0xC0 | (c >> 6)));
        s.push_back(static_cast<char>(0x80 | (c & 0x3F)));
      }
      out[b] = s;
    }
    return out;
  }();
  return table;
}

const std::unordered_map<std::string, unsigned char>& byte_decoder() {
  static const std::unordered_map<std::string, unsigned char> table = [] {
    std::unordered_map<std::string, unsigned char> out;
    const auto& enc = byte_encoder();
    for (int b = 0; b < 256; ++b) out[enc[b]] = static_cast<unsigned char>(b);
    return out;
  }();
  return table;
}

// Splits a UTF-8 string into code points (as substrings).
std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace

std::vector<CharSpan> pretokenize(std::string_view text) {
  std::vector<CharSpan> out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    if (std::size_t c = contraction_length(text, i); c > 0) {
      out.push_back({i, i + c});
      i += c;
      continue;
    }
    const auto ch = static_cast<unsigned char>(text[i]);
    std::size_t j = i;
    if (ch == ' ' && i + 1 < n && !is_space(static_cast<unsigned char>(text[i + 1]))) {
      j = i + 1;
    } else if (is_space(ch)) {
      std::size_t k = i;
      while (k < n && is_space(static_cast<unsigned char>(text[k]))) ++k;
      // A final space before a word is left for that word's piece.
      if (k < n && k - i > 1 && text[k - 1] == ' ') --k;
      out.push_back({i, k});
      i = k;
      continue;
    }
    const CharClass cls = classify(static_cast<unsigned char>(text[j]));
    std::size_t k = j + 1;
    while (k < n && classify(static_cast<unsigned char>(text[k])) == cls &&
           !(cls == CharClass::Other && contraction_length(text, k) > 0))
      ++k;
    out.push_back({i, k});
    i = k;
  }
  return out;
}

// ---------------------------------------------------------------- WordTokenizer

WordTokenizer::WordTokenizer(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  static const std::array<std::string, 4> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};
  if (pieces_.size() < 4 || !std::equal(kSpecials.begin(), kSpecials.end(), pieces_.begin()))
    pieces_.insert(pieces_.begin(), kSpecials.begin(), kSpecials.end());
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (!index_.emplace(pieces_[i], static_cast<int>(i)).second)
      throw ConfigError("duplicate tokenizer piece '" + pieces_[i] + "'");
  }
  std::string joined;
  for (const auto& p : pieces_) {
    joined += p;
    joined.push_back('\0');
  }
  id_ = "word:" + sha256_hex(joined).substr(0, 12);
}

WordTokenizer WordTokenizer::build(const std::vector<std::string>& texts) {
  std::vector<std::string> pieces;
  std::unordered_set<std::string> seen;
  for (const auto& t : texts) {
    for (const auto& span : pretokenize(t)) {
      std::string piece(t.substr(span.begin, span.size()));
      if (seen.insert(piece).second) pieces.push_back(std::move(piece));
    }
  }
  std::sort(pieces.begin(), pieces.end());
  return WordTokenizer(std::move(pieces));
}

WordTokenizer WordTokenizer::load(const std::filesystem::path& dir) {
  const json j = read_json(dir / "tokenizer.json");
  if (j.value("type", "") != "word") throw ConfigError("not a word tokenizer: " + dir.string());
  return WordTokenizer(j.at("pieces").get<std::vector<std::string>>());
}

TokenSequence WordTokenizer::tokenize(std::string_view text) const {
  TokenSequence seq;
  seq.tokenizer_id = id_;
  for (const auto& span : pretokenize(text)) {
    auto it = index_.find(std::string(text.substr(span.begin, span.size())));
    seq.token_ids.push_back(it == index_.end() ? kUnk : it->second);
    seq.offsets.push_back(span);
  }
  return seq;
}

std::string WordTokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    out += token_text(id);
  }
  return out;
}

std::string WordTokenizer::token_text(int id) const {
  if (id < 0 || id >= vocab_size()) throw ConfigError("token id out of range");
  return pieces_[static_cast<std::size_t>(id)];
}

void WordTokenizer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_json(dir / "tokenizer.json", json{{"type", "word"}, {"id", id_}, {"pieces", pieces_}});
}

// ----------------------------------------------------------------- BpeTokenizer

BpeTokenizer::BpeTokenizer(std::unordered_map<std::string, int> vocab,
                           std::vector<std::pair<std::string, std::string>> merges,
                           std::string name)
    : vocab_(std::move(vocab)), merges_(std::move(merges)) {
  int max_id = -1;
  for (const auto& [tok, id] : vocab_) max_id = std::max(max_id, id);
  id_to_token_.assign(static_cast<std::size_t>(max_id + 1), "");
  for (const auto& [tok, id] : vocab_) id_to_token_[static_cast<std::size_t>(id)] = tok;
  for (std::size_t r = 0; r < merges_.size(); ++r) ranks_.emplace(merges_[r], static_cast<int>(r));
  auto eot = vocab_.find("<|endoftext|>");
  if (eot == vocab_.end()) throw ConfigError("BPE vocabulary lacks <|endoftext|>");
  eot_ = eot->second;
  for (const auto& enc : byte_encoder()) {
    if (!vocab_.contains(enc)) throw ConfigError("BPE vocabulary does not cover all bytes");
  }
  id_ = "bpe:" + (name.empty() ? std::string("custom") : name);
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& dir, std::string name) {
  const json vj = read_json(dir / "vocab.json");
  std::unordered_map<std::string, int> vocab;
  for (const auto& [k, v] : vj.items()) vocab.emplace(k, v.get<int>());
  std::ifstream in(dir / "merges.txt");
  if (!in) throw ConfigError("cannot open " + (dir / "merges.txt").string());
  std::vector<std::pair<std::string, std::string>> merges;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.starts_with("#version")) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw ConfigError("malformed merge line: " + line);
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  if (name.empty() && std::filesystem::exists(dir / "tokenizer.json"))
    name = read_json(dir / "tokenizer.json").value("name", "");
  if (name.empty()) name = dir.filename().string();
  return BpeTokenizer(std::move(vocab), std::move(merges), std::move(name));
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& mapped) const {
  std::vector<std::string> parts = utf8_chars(mapped);
  while (parts.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      auto it = ranks_.find({parts[i], parts[i + 1]});
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const std::pair<std::string, std::string> pair{parts[best], parts[best + 1]};
    std::vector<std::string> merged;
    merged.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size();) {
      if (i + 1 < parts.size() && parts[i] == pair.first && parts[i + 1] == pair.second) {
        merged.push_back(pair.first + pair.second);
        i += 2;
      } else {
        merged.push_back(parts[i]);
        ++i;
      }
    }
    parts = std::move(merged);
  }
  return parts;
}

TokenSequence BpeTokenizer::tokenize(std::string_view text) const {
  TokenSequence seq;
  seq.tokenizer_id = id_;
  const auto& enc = byte_encoder();
  for (const auto& span : pretokenize(text)) {
    std::string mapped;
    for (std::size_t i = span.begin; i < span.end; ++i)
      mapped += enc[static_cast<unsigned char>(text[i])];
    std::size_t cursor = span.begin;
    for (const auto& tok : bpe(mapped)) {
      auto it = vocab_.find(tok);
      if (it == vocab_.end()) throw ConfigError("BPE token missing from vocabulary: " + tok);
      const std::size_t nbytes = utf8_chars(tok).size();
      seq.token_ids.push_back(it->second);
      seq.offsets.push_back({cursor, cursor + nbytes});
      cursor += nbytes;
    }
  }
  return seq;
}

std::string BpeTokenizer::decode(const std::vector<int>& ids) const {
  const auto& dec = byte_decoder();
  std::string out;
  for (int id : ids) {
    if (id == eot_) continue;
    for (const auto& ch : utf8_chars(token_text(id))) {
      auto it = dec.find(ch);
      if (it != dec.end()) out.push_back(static_cast<char>(it->second));
    }
  }
  return out;
}

std::string BpeTokenizer::token_text(int id) const {
  if (id < 0 || id >= vocab_size()) throw ConfigError("token id out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

void BpeTokenizer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json vj = json::object();
  for (const auto& [k, v] : vocab_) vj[k] = v;
  write_json(dir / "vocab.json", vj);
  std::ofstream out(dir / "merges.txt");
  out << "#version: 0.2\n";
  for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
  write_json(dir / "tokenizer.json",
             json{{"type", "bpe"}, {"id", id_}, {"name", id_.substr(4)}});
}

std::unique_ptr<Tokenizer> load_tokenizer(const std::filesystem::path& dir) {
  const json j = read_json(dir / "tokenizer.json");
  const std::string type = j.value("type", "");
  if (type == "word") return std::make_unique<WordTokenizer>(WordTokenizer::load(dir));
  if (type == "bpe") return std::make_unique<BpeTokenizer>(BpeTokenizer::load(dir));
  throw ConfigError("unknown tokenizer type '" + type + "'");
}

// ------------------------------------------------------------------ word level

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < n && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && std::ispunct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (e > b) out.push_back(to_lower(text.substr(b, e - b)));
    i = j;
  }
  return out;
}

StopwordLexicon StopwordLexicon::load(const std::filesystem::path& path,
                                      std::string_view expected_checksum) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open stopword file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string contents = buf.str();
  std::string checksum = sha256_hex(contents);
  if (!expected_checksum.empty() && checksum != expected_checksum)
    throw ConfigError("stopword checksum mismatch for " + path.string());
  std::unordered_set<std::string> words;
  std::istringstream lines(contents);
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.insert(to_lower(line));
  }
  return StopwordLexicon(std::move(words), std::move(checksum));
}

StopwordLexicon StopwordLexicon::english() {
  return load(std::filesystem::path(GEIA_DATA_DIR) / "stopwords_en.txt", kPinnedChecksum);
}

// ------------------------------------------------------------------------- NER

std::string_view to_string(EntityLabel label) {
  switch (label) {
    case EntityLabel::PERSON: return "PERSON";
    case EntityLabel::LOCATION: return "LOCATION";
    case EntityLabel::ORGANIZATION: return "ORGANIZATION";
    case EntityLabel::ENTITY: return "ENTITY";
    case EntityLabel::OTHER: return "OTHER";
  }
  return "OTHER";
}

EntityLabel parse_entity_label(std::string_view s) {
  if (s == "PERSON") return EntityLabel::PERSON;
  if (s == "LOCATION") return EntityLabel::LOCATION;
  if (s == "ORGANIZATION") return EntityLabel::ORGANIZATION;
  if (s == "ENTITY") return EntityLabel::ENTITY;
  return EntityLabel::OTHER;
}

DictionaryNer::DictionaryNer(const std::vector<std::pair<std::string, EntityLabel>>& entries) {
  for (const auto& [surface, label] : entries) add(surface, label);
}

DictionaryNer DictionaryNer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open entity dictionary " + path.string());
  DictionaryNer ner;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      ner.add(line, EntityLabel::ENTITY);
    } else {
      ner.add(line.substr(0, tab), parse_entity_label(line.substr(tab + 1)));
    }
  }
  return ner;
}

void DictionaryNer::add(std::string_view surface, EntityLabel label) {
  std::string key = to_lower(surface);
  if (key.empty()) return;
  auto pos = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) {
    return e.first.size() < key.size() || (e.first.size() == key.size() && e.first >= key);
  });
  if (pos != entries_.end() && pos->first == key) {
    pos->second = label;
    return;
  }
  entries_.insert(pos, {std::move(key), label});
}

std::vector<Entity> DictionaryNer::recognize(std::string_view text) const {
  const std::string lower = to_lower(text);
  auto word_char = [&](std::size_t i) {
    const auto c = static_cast<unsigned char>(lower[i]);
    return std::isalnum(c) || c >= 0x80;
  };
  std::vector<Entity> out;
  std::size_t i = 0;
  while (i < lower.size()) {
    bool matched = false;
    if (i == 0 || !word_char(i - 1)) {
      for (const auto& [key, label] : entries_) {
        const std::size_t end = i + key.size();
        if (end > lower.size() || lower.compare(i, key.size(), key) != 0) continue;
        if (end < lower.size() && word_char(end) && word_char(end - 1)) continue;
        out.push_back({std::string(text.substr(i, key.size())), {i, end}, label});
        i = end;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

}  // namespace geia
