#include "geia/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "geia/errors.hpp"
#include "geia/rng.hpp"
#include "geia/rng.hpp"

namespace geia {

using json = nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string dataset_prefix(Dataset d) { return to_lower(to_string(d)); }

}  // namespace

std::string_view to_string(Dataset d) {
  switch (d) {
    case Dataset::PC: return "PC";
    case Dataset::QNLI: return "QNLI";
    case Dataset::ALTLEX: return "ALTLEX";
    case Dataset::SYNTHETIC: return "SYNTHETIC";
  }
  return "SYNTHETIC";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "test";
}

Dataset parse_dataset(std::string_view s) {
  const std::string l = to_lower(s);
  if (l == "pc" || l == "personachat") return Dataset::PC;
  if (l == "qnli") return Dataset::QNLI;
  if (l == "altlex") return Dataset::ALTLEX;
  if (l == "synthetic") return Dataset::SYNTHETIC;
  throw ConfigError("unknown dataset '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  const std::string l = to_lower(s);
  if (l == "train") return Split::Train;
  if (l == "dev" || l == "valid" || l == "validation") return Split::Dev;
  if (l == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

SplitRatios default_split(Dataset d) {
  switch (d) {
    case Dataset::PC: return {82, 9, 9};
    case Dataset::QNLI: return {95, 0, 5};
    case Dataset::ALTLEX: return {0, 0, 100};
    case Dataset::SYNTHETIC: return {82, 9, 9};
  }
  return {0, 0, 100};
}

std::vector<SentenceRecord> read_records(std::istream& in, Dataset dataset,
                                         const std::string& source) {
  std::vector<SentenceRecord> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
      throw DataError(source + ":" + std::to_string(lineno) + ": missing string field \"text\"");
    SentenceRecord r;
    r.text = j["text"].get<std::string>();
    if (trim(r.text).empty())
      throw DataError(source + ":" + std::to_string(lineno) + ": empty text");
    r.dataset = dataset;
    if (j.contains("id") && !j["id"].is_null()) {
      r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    } else {
      r.id = dataset_prefix(dataset) + "-" + std::to_string(lineno);
    }
    if (j.contains("split") && j["split"].is_string()) {
      try {
        r.split = parse_split(j["split"].get<std::string>());
      } catch (const ConfigError&) {
        throw DataError(source + ":" + std::to_string(lineno) + ": unknown split");
      }
    }
    if (!ids.insert(r.id).second)
      throw DataError(source + ":" + std::to_string(lineno) + ": duplicate id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SentenceRecord> load_dataset(const std::filesystem::path& path, Dataset dataset) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_records(in, dataset, path.string());
}

void write_records(const std::filesystem::path& path, const std::vector<SentenceRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) {
    out << json{{"id", r.id}, {"text", r.text}, {"split", to_string(r.split)}}.dump() << '\n';
  }
}

Partition apply_split(std::vector<SentenceRecord> records, SplitRatios ratios,
                      std::uint64_t seed) {
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 ||
      ratios.train + ratios.dev + ratios.test != 100)
    throw ConfigError("split ratios must be non-negative and sum to 100");
  Rng rng(seed);
  rng.shuffle(records);
  const std::size_t n = records.size();
  const std::size_t n_train = n * static_cast<std::size_t>(ratios.train) / 100;
  const std::size_t n_dev = n * static_cast<std::size_t>(ratios.dev) / 100;
  Partition p;
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = records[i];
    if (i < n_train) {
      r.split = Split::Train;
      p.train.push_back(std::move(r));
    } else if (i < n_train + n_dev) {
      r.split = Split::Dev;
      p.dev.push_back(std::move(r));
    } else {
      r.split = Split::Test;
      p.test.push_back(std::move(r));
    }
  }
  return p;
}

std::vector<SentenceRecord> sample_fraction(const std::vector<SentenceRecord>& records,
                                            double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("fraction must lie in (0, 1]");
  const std::size_t n = records.size();
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (k >= n) return records;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<SentenceRecord> out;
  out.reserve(k);
  for (auto i : idx) out.push_back(records[i]);
  return out;
}

DatasetSummary summarize(const std::vector<SentenceRecord>& records,
                         const EntityRecognizer& entity_recognizer) {
  DatasetSummary s;
  s.sentence_count = records.size();
  std::size_t words = 0;
  std::set<std::string> entities;
  for (const auto& r : records) {
    std::istringstream in(to_lower(r.text));
    std::string w;
    while (in >> w) ++words;
    for (const auto& e : entity_recognizer.recognize(r.text)) entities.insert(to_lower(e.surface));
    ++s.split_counts[static_cast<std::size_t>(r.split)];
  }
  if (s.sentence_count > 0)
    s.avg_sentence_length = static_cast<double>(words) / static_cast<double>(s.sentence_count);
  s.unique_named_entities = entities.size();
  return s;
}

// ------------------------------------------------------------------ importers

std::vector<SentenceRecord> import_personachat(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed PersonaChat JSON (" + e.what() + ")");
  }
  std::vector<SentenceRecord> out;
  std::size_t n = 0;
  auto emit = [&](const std::string& text, Split split) {
    std::string t = trim(text);
    if (t.empty() || t == "__ SILENCE __") return;
    out.push_back({"pc-" + std::to_string(++n), std::move(t), Dataset::PC, split});
  };
  for (const char* part : {"train", "valid", "test"}) {
    if (!root.contains(part)) continue;
    const Split split = parse_split(part);
    for (const auto& dialog : root[part]) {
      std::set<std::string> seen;
      auto once = [&](const std::string& t) {
        if (seen.insert(t).second) emit(t, split);
      };
      for (const auto& p : dialog.value("personality", json::array())) once(p.get<std::string>());
      const auto& utts = dialog.value("utterances", json::array());
      if (utts.empty()) continue;
      const auto& last = utts.back();
      for (const auto& h : last.value("history", json::array())) once(h.get<std::string>());
      const auto& cands = last.value("candidates", json::array());
      if (!cands.empty()) once(cands.back().get<std::string>());
    }
  }
  return out;
}

std::vector<SentenceRecord> import_qnli(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<SentenceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  int qcol = 1, scol = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (lineno == 1 && !cols.empty() && cols[0] == "index") {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (cols[c] == "question") qcol = static_cast<int>(c);
        if (cols[c] == "sentence") scol = static_cast<int>(c);
      }
      continue;
    }
    if (static_cast<int>(cols.size()) <= std::max(qcol, scol))
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": too few columns");
    const std::string q = trim(cols[static_cast<std::size_t>(qcol)]);
    const std::string s = trim(cols[static_cast<std::size_t>(scol)]);
    if (!q.empty())
      out.push_back({"qnli-" + std::to_string(lineno) + "-q", q, Dataset::QNLI, Split::Test});
    if (!s.empty())
      out.push_back({"qnli-" + std::to_string(lineno) + "-s", s, Dataset::QNLI, Split::Test});
  }
  return out;
}

std::vector<SentenceRecord> import_altlex(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<SentenceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = trim(line.substr(0, line.find('\t')));
    if (text.empty()) continue;
    out.push_back({"altlex-" + std::to_string(lineno), text, Dataset::ALTLEX, Split::Test});
  }
  return out;
}

std::vector<SentenceRecord> import_dataset(Dataset dataset, const std::filesystem::path& path) {
  switch (dataset) {
    case Dataset::PC: return import_personachat(path);
    case Dataset::QNLI: return import_qnli(path);
    case Dataset::ALTLEX: return import_altlex(path);
    case Dataset::SYNTHETIC: return load_dataset(path, dataset);
  }
  throw ConfigError("no importer for dataset");
}

// ------------------------------------------------------------- synthetic

std::vector<std::string> synthetic_vocabulary(int size) {
  static constexpr std::string_view kCons = "bdfgklmnprstvz";
  static constexpr std::string_view kVow = "aeiou";
  constexpr int kMax = 14 * 5 * 14 * 5;
  if (size < 1 || size > kMax) throw ConfigError("synthetic vocabulary size out of range");
  std::vector<std::string> words;
  words.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    std::string w;
    w += kCons[static_cast<std::size_t>(i % 14)];
    w += kVow[static_cast<std::size_t>((i / 14) % 5)];
    w += kCons[static_cast<std::size_t>((i / 70) % 14)];
    w += kVow[static_cast<std::size_t>((i / 980) % 5)];
    words.push_back(std::move(w));
  }
  return words;
}

std::vector<SentenceRecord> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.sentences < 1) throw ConfigError("synthetic corpus needs at least one sentence");
  if (spec.min_words < 1 || spec.max_words < spec.min_words)
    throw ConfigError("invalid synthetic sentence length range");
  if (!(spec.zipf_exponent >= 0.0)) throw ConfigError("zipf exponent must be >= 0");
  const auto words = synthetic_vocabulary(spec.vocab_size);
  std::vector<double> cdf;
  double total = 0.0;
  for (int i = 0; i < spec.vocab_size; ++i) {
    total += 1.0 / std::pow(static_cast<double>(i + 1), spec.zipf_exponent);
    cdf.push_back(total);
  }
  Rng rng(spec.seed);
  const auto span = static_cast<std::uint64_t>(spec.max_words - spec.min_words + 1);
  std::vector<SentenceRecord> out;
  out.reserve(static_cast<std::size_t>(spec.sentences));
  for (int i = 0; i < spec.sentences; ++i) {
    const int len = spec.min_words + static_cast<int>(rng.below(span));
    std::string text;
    for (int w = 0; w < len; ++w) {
      const double u = rng.uniform() * total;
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      if (it == cdf.end()) --it;
      if (w) text += ' ';
      text += words[static_cast<std::size_t>(it - cdf.begin())];
    }
    out.push_back({"synthetic-" + std::to_string(i), std::move(text), Dataset::SYNTHETIC, Split::Test});
  }
  return out;
}

}  // namespace geia
