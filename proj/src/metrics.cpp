#include "geia/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "geia/errors.hpp"

namespace geia {

namespace {

std::map<std::string, int> counts_of(const TokenBag& bag) {
  std::map<std::string, int> m;
  for (const auto& t : bag) ++m[t];
  return m;
}

std::size_t clipped_overlap(const TokenBag& pred, const TokenBag& gold) {
  auto g = counts_of(gold);
  std::size_t hits = 0;
  for (const auto& [tok, n] : counts_of(pred)) {
    auto it = g.find(tok);
    if (it != g.end()) hits += static_cast<std::size_t>(std::min(n, it->second));
  }
  return hits;
}

void require_paired(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw EvaluationError(std::string(what) + ": " + std::to_string(a) + " predictions for " +
                          std::to_string(b) + " references");
  }
}

double f_measure(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

std::size_t lcs_length(const TokenBag& a, const TokenBag& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::map<std::vector<std::string>, int> ngrams(const TokenBag& toks, std::size_t n) {
  std::map<std::vector<std::string>, int> m;
  if (toks.size() < n) return m;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++m[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  }
  return m;
}

}  // namespace

PRF1 micro_prf1(std::span<const TokenBag> predicted, std::span<const TokenBag> gold) {
  require_paired(predicted.size(), gold.size(), "micro_prf1");
  std::size_t tp = 0, npred = 0, ngold = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    tp += clipped_overlap(predicted[i], gold[i]);
    npred += predicted[i].size();
    ngold += gold[i].size();
  }
  PRF1 out;
  out.precision = npred ? static_cast<double>(tp) / static_cast<double>(npred) : 0.0;
  out.recall = ngold ? static_cast<double>(tp) / static_cast<double>(ngold) : 0.0;
  out.f1 = f_measure(out.precision, out.recall);
  return out;
}

double stopword_rate(std::span<const TokenBag> sentences, const StopwordLexicon& lexicon) {
  std::size_t total = 0, stop = 0;
  for (const auto& s : sentences) {
    for (const auto& t : s) {
      ++total;
      if (lexicon.contains(t)) ++stop;
    }
  }
  if (total == 0) throw EvaluationError("stopword rate of a corpus with no tokens");
  return 100.0 * static_cast<double>(stop) / static_cast<double>(total);
}

NerrResult nerr(std::span<const std::string> predicted, std::span<const std::string> gold,
                const EntityRecognizer& ner) {
  require_paired(predicted.size(), gold.size(), "nerr");
  NerrResult out;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::vector<Entity> ents;
    try {
      ents = ner.recognize(gold[i]);
    } catch (const NerError& e) {
      spdlog::warn("NER failed on pair {}: {}", i, e.what());
      ++out.failed_pairs;
      continue;
    }
    std::set<std::string> surfaces;
    for (const auto& e : ents) surfaces.insert(to_lower(e.surface));
    if (surfaces.empty()) {
      ++out.excluded_pairs;
      continue;
    }
    const std::string pred = to_lower(predicted[i]);
    for (const auto& s : surfaces) {
      ++out.total;
      if (pred.find(s) != std::string::npos) ++out.recovered;
    }
  }
  if (out.total == 0) throw EvaluationError("no gold entities in any pair");
  out.ratio = static_cast<double>(out.recovered) / static_cast<double>(out.total);
  return out;
}

std::vector<double> UniformScorer::token_log_probs(std::string_view text) const {
  if (vocab_size_ == 0) throw EvaluationError("uniform scorer over an empty vocabulary");
  return std::vector<double>(word_tokens(text).size(),
                             -std::log(static_cast<double>(vocab_size_)));
}

UnigramScorer::UnigramScorer(std::span<const std::string> corpus) {
  for (const auto& text : corpus) {
    for (auto& t : word_tokens(text)) {
      counts_[t] += 1.0;
      total_ += 1.0;
    }
  }
  vocab_ = static_cast<double>(counts_.size()) + 1.0;
}

std::vector<double> UnigramScorer::token_log_probs(std::string_view text) const {
  std::vector<double> out;
  const double denom = total_ + vocab_;
  for (const auto& t : word_tokens(text)) {
    auto it = counts_.find(t);
    const double c = it == counts_.end() ? 0.0 : it->second;
    out.push_back(std::log((c + 1.0) / denom));
  }
  return out;
}

double perplexity(std::span<const std::string> texts, const LmScorer& scorer) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : texts) {
    std::vector<double> lp;
    try {
      lp = scorer.token_log_probs(t);
    } catch (const EvaluationError&) {
      throw;
    } catch (const std::exception& e) {
      throw EvaluationError(std::string("scorer failed: ") + e.what());
    }
    for (double v : lp) {
      if (!std::isfinite(v)) throw EvaluationError("scorer returned a non-finite log-probability");
      sum += v;
    }
    n += lp.size();
  }
  if (n == 0) throw EvaluationError("perplexity of a corpus with no tokens");
  return std::exp(-sum / static_cast<double>(n));
}

GenerationScores rouge_bleu(std::span<const std::string> predicted,
                            std::span<const std::string> gold) {
  require_paired(predicted.size(), gold.size(), "rouge_bleu");
  GenerationScores out;
  double r1 = 0.0, rl = 0.0;
  std::size_t pairs = 0;
  std::size_t cand_len = 0, ref_len = 0;
  std::size_t match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};

  for (std::size_t i = 0; i < gold.size(); ++i) {
    const TokenBag g = word_tokens(gold[i]);
    if (g.empty()) {
      ++out.skipped_pairs;
      continue;
    }
    const TokenBag p = word_tokens(predicted[i]);
    ++pairs;
    if (!p.empty()) {
      const double ov = static_cast<double>(clipped_overlap(p, g));
      r1 += f_measure(ov / static_cast<double>(p.size()), ov / static_cast<double>(g.size()));
      const double l = static_cast<double>(lcs_length(p, g));
      rl += f_measure(l / static_cast<double>(p.size()), l / static_cast<double>(g.size()));
    }
    cand_len += p.size();
    ref_len += g.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      auto pc = ngrams(p, n);
      auto gc = ngrams(g, n);
      for (const auto& [ng, c] : pc) {
        total[n - 1] += static_cast<std::size_t>(c);
        auto it = gc.find(ng);
        if (it != gc.end()) match[n - 1] += static_cast<std::size_t>(std::min(c, it->second));
      }
    }
  }
  if (out.skipped_pairs) spdlog::info("rouge/bleu skipped {} empty references", out.skipped_pairs);
  if (pairs == 0) throw EvaluationError("no non-empty references");
  out.rouge1 = r1 / static_cast<double>(pairs);
  out.rougeL = rl / static_cast<double>(pairs);

  if (cand_len == 0 || match[0] == 0) return out;  // BLEU stays 0
  const double bp = cand_len > ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  double logp[4];
  for (int n = 0; n < 4; ++n) {
    const double denom = static_cast<double>(std::max<std::size_t>(total[n], 1));
    const double num = match[n] > 0 ? static_cast<double>(match[n]) : kBleuEpsilon;
    logp[n] = std::log(num / denom);
  }
  auto bleu_n = [&](int upto) {
    double s = 0.0;
    for (int n = 0; n < upto; ++n) s += logp[n];
    return bp * std::exp(s / upto);
  };
  out.bleu1 = bleu_n(1);
  out.bleu2 = bleu_n(2);
  out.bleu4 = bleu_n(4);
  return out;
}

double embedding_similarity(const VictimRegistry& registry, const std::string& victim_id,
                            std::span<const std::string> predicted,
                            std::span<const std::string> gold) {
  require_paired(predicted.size(), gold.size(), "embedding_similarity");
  if (gold.empty()) throw EvaluationError("embedding similarity over no pairs");
  auto ep = registry.embed(victim_id, std::vector<std::string>(predicted.begin(), predicted.end()));
  auto eg = registry.embed(victim_id, std::vector<std::string>(gold.begin(), gold.end()));
  double sum = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    try {
      sum += similarity(ep[i], eg[i]);
    } catch (const SimilarityError&) {
      // zero-norm prediction (e.g. empty text) scores 0
    }
  }
  return sum / static_cast<double>(gold.size());
}

nlohmann::json MetricsBundle::to_json() const {
  nlohmann::json j = {{"precision", precision}, {"recall", recall},   {"f1", f1},
                      {"swr", swr},             {"swr_diff_vs_test", swr_diff_vs_test},
                      {"es", es},               {"ppl", ppl},         {"rouge1", rouge1},
                      {"rougeL", rougeL},       {"bleu1", bleu1},     {"bleu2", bleu2},
                      {"bleu4", bleu4},         {"granularity", granularity},
                      {"scorer_id", scorer_id}, {"ner_id", ner_id},   {"es_victim_id", es_victim_id}};
  j["nerr"] = nerr ? nlohmann::json(*nerr) : nlohmann::json(nullptr);
  return j;
}

MetricsBundle MetricsBundle::from_json(const nlohmann::json& j) {
  MetricsBundle m;
  m.precision = j.at("precision");
  m.recall = j.at("recall");
  m.f1 = j.at("f1");
  m.swr = j.at("swr");
  m.swr_diff_vs_test = j.at("swr_diff_vs_test");
  m.es = j.at("es");
  m.ppl = j.at("ppl");
  m.rouge1 = j.at("rouge1");
  m.rougeL = j.at("rougeL");
  m.bleu1 = j.at("bleu1");
  m.bleu2 = j.at("bleu2");
  m.bleu4 = j.at("bleu4");
  m.granularity = j.value("granularity", "word");
  m.scorer_id = j.value("scorer_id", "");
  m.ner_id = j.value("ner_id", "");
  m.es_victim_id = j.value("es_victim_id", "");
  if (j.contains("nerr") && !j["nerr"].is_null()) m.nerr = j["nerr"].get<double>();
  return m;
}

MetricsBundle evaluate_attack(std::span<const std::string> predicted,
                              std::span<const TokenBag> predicted_tokens,
                              std::span<const std::string> gold, const EvaluationPorts& ports) {
  require_paired(predicted.size(), gold.size(), "evaluate_attack");
  require_paired(predicted_tokens.size(), gold.size(), "evaluate_attack");
  if (!ports.stopwords || !ports.scorer || !ports.registry) {
    throw EvaluationError("evaluation ports incomplete");
  }
  std::vector<TokenBag> gold_tokens;
  gold_tokens.reserve(gold.size());
  for (const auto& g : gold) gold_tokens.push_back(word_tokens(g));

  MetricsBundle m;
  const PRF1 prf = micro_prf1(predicted_tokens, gold_tokens);
  m.precision = prf.precision;
  m.recall = prf.recall;
  m.f1 = prf.f1;

  // An attack that predicts nothing has no stopword rate; report 0.
  std::size_t npred = 0;
  for (const auto& b : predicted_tokens) npred += b.size();
  m.swr = npred ? stopword_rate(predicted_tokens, *ports.stopwords) : 0.0;
  m.swr_diff_vs_test = m.swr - stopword_rate(gold_tokens, *ports.stopwords);

  if (ports.ner) {
    m.ner_id = ports.ner->id();
    try {
      m.nerr = nerr(predicted, gold, *ports.ner).ratio;
    } catch (const EvaluationError& e) {
      spdlog::warn("NERR unavailable: {}", e.what());
    }
  }

  m.es_victim_id = ports.es_victim_id;
  m.es = embedding_similarity(*ports.registry, ports.es_victim_id, predicted, gold);

  m.scorer_id = ports.scorer->id();
  // Empty predictions contribute no tokens; an all-empty output has no PPL.
  try {
    m.ppl = perplexity(predicted, *ports.scorer);
  } catch (const EvaluationError& e) {
    spdlog::warn("perplexity unavailable: {}", e.what());
    m.ppl = std::numeric_limits<double>::infinity();
  }

  const GenerationScores gs = rouge_bleu(predicted, gold);
  m.rouge1 = gs.rouge1;
  m.rougeL = gs.rougeL;
  m.bleu1 = gs.bleu1;
  m.bleu2 = gs.bleu2;
  m.bleu4 = gs.bleu4;
  return m;
}

}  // namespace geia
