#include "geia/leakage.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <boost/math/distributions/students_t.hpp>
#include <spdlog/spdlog.h>

#include "geia/rng.hpp"

namespace geia {

using nlohmann::json;

// ------------------------------------------------------------- alignment

namespace {

struct Trimmed {
  std::size_t begin = 0;
  std::size_t end = 0;
};

Trimmed trim_range(std::string_view s, std::size_t begin, std::size_t end) {
  auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (begin < end && is_ws(s[begin])) ++begin;
  while (end > begin && is_ws(s[end - 1])) --end;
  return {begin, end};
}

// Longest common substring of `a` and `b`: (length, start in a, start in b).
// Ties go to the earliest position in b, then in a.
std::tuple<std::size_t, std::size_t, std::size_t> longest_common_substring(std::string_view a,
                                                                           std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  std::size_t best = 0, ba = 0, bb = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
      const std::size_t sa = i - cur[j], sb = j - cur[j];
      if (cur[j] > best || (cur[j] == best && best > 0 && (sb < bb || (sb == bb && sa < ba)))) {
        best = cur[j];
        ba = sa;
        bb = sb;
      }
    }
    std::swap(prev, cur);
  }
  return {best, ba, bb};
}

struct TextAlignment {
  std::vector<CharSpan> spans;
  std::size_t matched = 0;
  std::size_t total = 0;
};

TextAlignment align_text(const MaskedTriple& t, std::string_view target, const char* which) {
  const auto& ph = t.placeholders;
  const std::string_view masked = t.masked;
  TextAlignment out;
  std::size_t cursor = 0;
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i <= ph.size(); ++i) {
    const std::size_t seg_begin = i == 0 ? 0 : ph[i - 1].span.end;
    const std::size_t seg_end = i == ph.size() ? masked.size() : ph[i].span.begin;
    const Trimmed tr = trim_range(masked, seg_begin, seg_end);
    const std::string_view anchor = masked.substr(tr.begin, tr.end - tr.begin);

    std::size_t region_begin, region_end;
    if (anchor.empty()) {
      if (i == 0) {
        region_begin = region_end = 0;
      } else if (i == ph.size()) {
        region_begin = region_end = target.size();
      } else {
        throw AlignmentError(std::string("adjacent placeholders cannot be separated in ") + which);
      }
    } else {
      out.total += anchor.size();
      const auto pos = target.find(anchor, cursor);
      if (pos != std::string_view::npos) {
        region_begin = pos;
        region_end = pos + anchor.size();
        out.matched += anchor.size();
      } else {
        const auto [len, ia, ib] = longest_common_substring(anchor, target.substr(cursor));
        if (len == 0) throw AlignmentError(std::string("anchor not found in ") + which);
        const std::size_t hit = cursor + ib;
        region_begin = hit >= cursor + ia ? hit - ia : cursor;
        region_end = std::min(target.size(), region_begin + anchor.size());
        out.matched += len;
      }
    }
    if (i > 0) {
      const Trimmed span = trim_range(target, prev_end, std::max(prev_end, region_begin));
      if (span.begin == span.end)
        throw AlignmentError(std::string("empty span for placeholder ") + std::to_string(i - 1) +
                             " in " + which);
      out.spans.push_back({span.begin, span.end});
    }
    cursor = region_end;
    prev_end = region_end;
  }
  return out;
}

}  // namespace

SpanAlignment align_spans(const MaskedTriple& triple, double coverage_floor) {
  SpanAlignment a;
  if (triple.placeholders.empty()) return a;
  const TextAlignment o = align_text(triple, triple.original, "original");
  const TextAlignment s = align_text(triple, triple.alternative, "alternative");
  auto cov = [](const TextAlignment& x) {
    return x.total == 0 ? 1.0 : static_cast<double>(x.matched) / static_cast<double>(x.total);
  };
  a.anchor_coverage = std::min(cov(o), cov(s));
  if (a.anchor_coverage < coverage_floor)
    throw AlignmentError("anchor coverage " + std::to_string(a.anchor_coverage) +
                         " below floor");
  a.original_spans = o.spans;
  a.alternative_spans = s.spans;

  // Identical surfaces should share a placeholder; only warn.
  std::map<std::string, std::string> seen;
  for (std::size_t i = 0; i < a.original_spans.size(); ++i) {
    const auto& sp = a.original_spans[i];
    const std::string surface = triple.original.substr(sp.begin, sp.size());
    auto [it, inserted] = seen.emplace(surface, triple.placeholders[i].label);
    if (!inserted && it->second != triple.placeholders[i].label)
      spdlog::warn("entity '{}' masked with both {} and {}", surface, it->second,
                   triple.placeholders[i].label);
  }
  return a;
}

// --------------------------------------------------------------- scoring

namespace {

ConditionScore score_one(const AttackerModel& attacker, std::string_view text,
                         const std::vector<CharSpan>& spans,
                         const std::optional<EmbeddingVector>& prefix) {
  const ScoredSequence s = score_sequence(attacker, text, prefix);
  ConditionScore c;
  for (std::size_t i = 0; i < s.log_probs.size(); ++i) {
    c.whole_sum += s.log_probs[i];
    ++c.whole_count;
    const CharSpan& off = s.tokens.offsets[i];
    if (std::any_of(spans.begin(), spans.end(), [&](const CharSpan& sp) { return off.intersects(sp); })) {
      c.masked_sum += s.log_probs[i];
      ++c.masked_count;
    }
  }
  c.whole_sentence_mean = c.whole_sum / static_cast<double>(c.whole_count);
  if (c.masked_count) c.masked_only_mean = c.masked_sum / static_cast<double>(c.masked_count);
  return c;
}

}  // namespace

LikelihoodReport score_conditions(const AttackerModel& attacker,
                                  const EmbeddingVector& masked_embedding,
                                  const MaskedTriple& triple, const SpanAlignment& alignment) {
  LikelihoodReport r;
  r.orig_with = score_one(attacker, triple.original, alignment.original_spans, masked_embedding);
  r.orig_without = score_one(attacker, triple.original, alignment.original_spans, std::nullopt);
  r.sim_with = score_one(attacker, triple.alternative, alignment.alternative_spans, masked_embedding);
  r.sim_without = score_one(attacker, triple.alternative, alignment.alternative_spans, std::nullopt);
  return r;
}

// ------------------------------------------------------------ comparison

std::string_view to_string(Aggregation a) { return a == Aggregation::WHOLE ? "whole_sentence" : "masked_only"; }
std::string_view to_string(Condition c) { return c == Condition::WITH ? "with" : "without"; }
std::string_view to_string(Pooling p) { return p == Pooling::PER_SAMPLE ? "per_sample" : "token_pooled"; }

Pooling parse_pooling(std::string_view s) {
  if (s == "per_sample") return Pooling::PER_SAMPLE;
  if (s == "token_pooled") return Pooling::TOKEN_POOLED;
  throw ConfigError("unknown pooling '" + std::string(s) + "'");
}

double percent_difference(double orig_mean, double sim_mean) {
  if (orig_mean == 0.0) throw EvaluationError("percent difference against a zero mean");
  return 100.0 * (orig_mean - sim_mean) / std::abs(orig_mean);
}

PairedTTest paired_t_test(const std::vector<double>& orig, const std::vector<double>& sim) {
  if (orig.size() != sim.size()) throw EvaluationError("paired samples differ in length");
  const std::size_t n = orig.size();
  if (n < 2) throw EvaluationError("paired t-test needs at least 2 samples");
  PairedTTest out;
  out.n = n;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += orig[i] - sim[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = orig[i] - sim[i] - mean;
    ss += d * d;
  }
  out.mean_difference = mean;
  const double var = ss / static_cast<double>(n - 1);
  if (var <= 0.0) {
    out.t = std::nan("");
    return out;
  }
  out.t = mean / std::sqrt(var / static_cast<double>(n));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  out.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t))));
  return out;
}

namespace {

const ConditionScore& pick(const LikelihoodReport& r, bool orig, Condition c) {
  if (orig) return c == Condition::WITH ? r.orig_with : r.orig_without;
  return c == Condition::WITH ? r.sim_with : r.sim_without;
}

}  // namespace

CellVerdict compare_distributions(const std::vector<LikelihoodReport>& reports,
                                  Aggregation aggregation, Condition condition,
                                  std::size_t input_size, Pooling pooling) {
  CellVerdict v;
  v.aggregation = aggregation;
  v.condition = condition;
  std::vector<double> orig, sim;
  double osum = 0.0, ssum = 0.0;
  std::size_t ocount = 0, scount = 0;
  for (const auto& r : reports) {
    const ConditionScore& o = pick(r, true, condition);
    const ConditionScore& s = pick(r, false, condition);
    if (aggregation == Aggregation::WHOLE) {
      orig.push_back(o.whole_sentence_mean);
      sim.push_back(s.whole_sentence_mean);
      osum += o.whole_sum;
      ocount += o.whole_count;
      ssum += s.whole_sum;
      scount += s.whole_count;
    } else if (o.masked_only_mean && s.masked_only_mean) {
      orig.push_back(*o.masked_only_mean);
      sim.push_back(*s.masked_only_mean);
      osum += o.masked_sum;
      ocount += o.masked_count;
      ssum += s.masked_sum;
      scount += s.masked_count;
    }
  }
  v.n_included = orig.size();
  if (input_size < v.n_included) throw EvaluationError("input size smaller than report count");
  v.n_excluded = input_size - v.n_included;
  if (v.n_included < 2) throw EvaluationError("fewer than 2 included samples");

  if (pooling == Pooling::PER_SAMPLE) {
    for (std::size_t i = 0; i < orig.size(); ++i) {
      v.orig_mean += orig[i];
      v.sim_mean += sim[i];
    }
    v.orig_mean /= static_cast<double>(orig.size());
    v.sim_mean /= static_cast<double>(sim.size());
  } else {
    v.orig_mean = osum / static_cast<double>(ocount);
    v.sim_mean = ssum / static_cast<double>(scount);
  }
  v.percent_diff = percent_difference(v.orig_mean, v.sim_mean);
  const PairedTTest t = paired_t_test(orig, sim);
  v.t_statistic = t.t;
  v.p_value = t.p;
  return v;
}

const CellVerdict& AuditRow::cell(Aggregation a, Condition c) const {
  for (const auto& v : cells)
    if (v.aggregation == a && v.condition == c) return v;
  throw EvaluationError("audit row lacks the requested cell");
}

// ----------------------------------------------------------------- audit

namespace {

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json cell_group(const AuditRow& row, Aggregation a, double alpha) {
  const CellVerdict& w = row.cell(a, Condition::WITH);
  const CellVerdict& wo = row.cell(a, Condition::WITHOUT);
  auto p = [](const CellVerdict& c) { return c.p_value ? json(*c.p_value) : json("NOT_COMPUTABLE"); };
  return {{"t", number_or_null(w.t_statistic)},
          {"p", p(w)},
          {"n", w.n_included},
          {"orig_with", w.orig_mean},
          {"orig_without", wo.orig_mean},
          {"sim_with", w.sim_mean},
          {"sim_without", wo.sim_mean},
          {"pd_with", w.percent_diff},
          {"pd_without", wo.percent_diff},
          {"t_with", number_or_null(w.t_statistic)},
          {"p_with", p(w)},
          {"significant_with", w.significant(alpha)},
          {"t_without", number_or_null(wo.t_statistic)},
          {"p_without", p(wo)},
          {"significant_without", wo.significant(alpha)},
          {"n_with", w.n_included},
          {"n_without", wo.n_included},
          {"excluded_with", w.n_excluded},
          {"excluded_without", wo.n_excluded}};
}

}  // namespace

json AuditResult::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"reasoner_id", r.reasoner_id},
                      {"victim_id", r.victim_id},
                      {"whole_sentence", cell_group(r, Aggregation::WHOLE, options.alpha)},
                      {"masked_only", cell_group(r, Aggregation::MASKED_ONLY, options.alpha)}});
  }
  json ex = json::array();
  for (const auto& e : exclusions)
    ex.push_back({{"index", e.index}, {"reason", e.reason}, {"detail", e.detail}});
  return {{"format", "geia-audit"},
          {"version", 1},
          {"pooling", std::string(to_string(options.pooling))},
          {"alpha", options.alpha},
          {"coverage_floor", options.coverage_floor},
          {"input_size", input_size},
          {"rows", rows_j},
          {"exclusions", ex}};
}

AuditResult audit(const std::vector<MaskedTriple>& triples, const AttackerModel& attacker,
                  const VictimRegistry& registry, const std::string& victim_id,
                  const AuditOptions& options) {
  if (triples.empty()) throw DataError("empty triple stream");
  AuditResult result;
  result.input_size = triples.size();
  result.options = options;

  std::vector<std::optional<SpanAlignment>> alignments(triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    try {
      alignments[i] = align_spans(triples[i], options.coverage_floor);
    } catch (const AlignmentError& e) {
      result.exclusions.push_back({i, "ALIGN_FAIL", e.what()});
    }
  }
  const std::size_t aligned = triples.size() - result.exclusions.size();
  if (static_cast<double>(aligned) < options.min_inclusion_rate * static_cast<double>(triples.size()))
    throw DataError("only " + std::to_string(aligned) + " of " + std::to_string(triples.size()) +
                    " triples could be aligned");

  std::vector<EmbedRequest> requests;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    if (!alignments[i]) continue;
    requests.push_back({triples[i].masked, triples[i].original});
    idx.push_back(i);
  }
  const auto embeddings = registry.embed(victim_id, std::span<const EmbedRequest>(requests));

  std::vector<std::optional<LikelihoodReport>> scored(idx.size());
  std::vector<std::string> errors(idx.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(idx.size()); ++k) {
    const auto u = static_cast<std::size_t>(k);
    try {
      scored[u] = score_conditions(attacker, embeddings[u], triples[idx[u]], *alignments[idx[u]]);
      scored[u]->index = idx[u];
    } catch (const Error& e) {
      errors[u] = e.what();
    }
  }
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (scored[k]) {
      result.reports.push_back(*scored[k]);
    } else {
      result.exclusions.push_back({idx[k], "SCORING", errors[k]});
    }
  }
  std::sort(result.exclusions.begin(), result.exclusions.end(),
            [](const Exclusion& a, const Exclusion& b) { return a.index < b.index; });

  std::map<std::string, std::pair<std::vector<LikelihoodReport>, std::size_t>> groups;
  for (const auto& t : triples) ++groups[t.reasoner_id].second;
  for (const auto& r : result.reports) groups[triples[r.index].reasoner_id].first.push_back(r);
  for (const auto& [rid, g] : groups) {
    AuditRow row;
    row.reasoner_id = rid;
    row.victim_id = victim_id;
    for (Aggregation a : {Aggregation::WHOLE, Aggregation::MASKED_ONLY})
      for (Condition c : {Condition::WITH, Condition::WITHOUT})
        row.cells.push_back(compare_distributions(g.first, a, c, g.second, options.pooling));
    result.rows.push_back(std::move(row));
  }
  return result;
}

// ---------------------------------------------------------------- oracle

OracleCorpus make_oracle_corpus(const OracleSpec& spec) {
  if (spec.entities_per_label < 2) throw ConfigError("oracle needs at least 2 entities per label");
  if (spec.max_entities < 1 || spec.min_filler < 1 || spec.max_filler < spec.min_filler)
    throw ConfigError("invalid oracle sentence shape");
  const int n_ent = 2 * spec.entities_per_label;
  const auto words = synthetic_vocabulary(spec.filler_vocab + n_ent);
  const std::vector<std::string> filler(words.begin(), words.begin() + spec.filler_vocab);
  const std::vector<std::string> persons(words.begin() + spec.filler_vocab,
                                         words.begin() + spec.filler_vocab + spec.entities_per_label);
  const std::vector<std::string> locations(words.begin() + spec.filler_vocab + spec.entities_per_label,
                                           words.end());
  std::vector<double> cdf;
  double total = 0.0;
  for (int i = 0; i < spec.filler_vocab; ++i) {
    total += 1.0 / static_cast<double>(i + 1);
    cdf.push_back(total);
  }

  Rng rng(spec.seed);
  struct Slot {
    bool entity;
    bool person;
    std::size_t word;
  };
  auto make_sentence = [&] {
    const int nf = spec.min_filler + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_filler - spec.min_filler + 1)));
    const int ne = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_entities)));
    std::vector<Slot> slots;
    for (int i = 0; i < nf; ++i) {
      auto it = std::upper_bound(cdf.begin(), cdf.end(), rng.uniform() * total);
      if (it == cdf.end()) --it;
      slots.push_back({false, false, static_cast<std::size_t>(it - cdf.begin())});
    }
    for (int e = 0; e < ne; ++e) {
      // Entities never sit next to each other so every span has an anchor.
      std::vector<std::size_t> ok;
      for (std::size_t pos = 0; pos <= slots.size(); ++pos) {
        const bool left = pos > 0 && slots[pos - 1].entity;
        const bool right = pos < slots.size() && slots[pos].entity;
        if (!left && !right) ok.push_back(pos);
      }
      const std::size_t pos = ok[rng.below(ok.size())];
      const bool person = rng.below(2) == 0;
      slots.insert(slots.begin() + static_cast<std::ptrdiff_t>(pos),
                   Slot{true, person, static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(spec.entities_per_label)))});
    }
    return slots;
  };
  auto render = [&](const std::vector<Slot>& slots, int mode) {
    // mode 0 original, 1 masked
    std::string s;
    for (const auto& sl : slots) {
      if (!s.empty()) s += ' ';
      if (!sl.entity) s += filler[sl.word];
      else if (mode == 1) s += sl.person ? "<PERSON>" : "<LOCATION>";
      else s += (sl.person ? persons : locations)[sl.word];
    }
    return s;
  };

  OracleCorpus out;
  out.vocabulary = words;
  std::set<std::string> seen;
  while (out.auxiliary.size() < static_cast<std::size_t>(spec.auxiliary_sentences)) {
    const std::string text = render(make_sentence(), 0);
    seen.insert(text);
    out.auxiliary.push_back({"aux-" + std::to_string(out.auxiliary.size()), text,
                             Dataset::SYNTHETIC, Split::Train});
  }
  while (out.triples.size() < static_cast<std::size_t>(spec.audit_sentences)) {
    auto slots = make_sentence();
    MaskedTriple t;
    t.original = render(slots, 0);
    if (!seen.insert(t.original).second) continue;
    t.masked = render(slots, 1);
    for (auto& sl : slots) {
      if (!sl.entity) continue;
      const auto shift = 1 + rng.below(static_cast<std::uint64_t>(spec.entities_per_label - 1));
      sl.word = (sl.word + shift) % static_cast<std::size_t>(spec.entities_per_label);
    }
    t.alternative = render(slots, 0);
    t.placeholders = find_placeholders(t.masked);
    t.reasoner_id = "oracle";
    t.record_id = "audit-" + std::to_string(out.triples.size());
    out.triples.push_back(std::move(t));
  }
  return out;
}

}  // namespace geia
