// Acceptance checks. Prints one line per criterion and exits non-zero if
// any criterion fails. Criteria that cannot run on a desk machine print SKIP.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "geia/attacker.hpp"
#include "geia/leakage.hpp"
#include "geia/metrics.hpp"
#include "geia/reasoner.hpp"
#include "geia/runner.hpp"

namespace fs = std::filesystem;
using namespace geia;

namespace {

// Tolerances and thresholds.
constexpr double kTable4Tol = 0.01;
constexpr double kLeakyP = 0.01;
constexpr double kBlindP = 0.05;
constexpr double kGeiaMinF1 = 0.6;
constexpr double kBeamTol = 1e-6;
constexpr double kMetricTol = 1e-9;
constexpr int kMinMetricCases = 20;
constexpr double kLeakyMajority = 0.8;

struct Outcome {
  enum Status { PASS, FAIL, SKIP } status;
  std::string detail;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- AC1

struct Table4Row {
  const char* label;
  double orig_with, orig_without, sim_with, sim_without, pd_with, pd_without;
};

// Mean log-likelihoods and percentage cells as printed.
constexpr Table4Row kTable4[] = {
    {"whole GLM-4/SRoBERTa", -5.15, -4.83, -5.61, -5.44, 8.93, 12.63},
    {"whole GLM-4/SimCSE-BERT", -5.56, -4.91, -5.96, -5.36, 7.19, 9.16},
    {"whole Llama-3.1/SRoBERTa", -5.28, -4.94, -5.62, -5.44, 6.44, 10.12},
    {"whole Llama-3.1/SimCSE-BERT", -5.71, -5.03, -6.00, -5.37, 5.08, 6.76},
    {"masked GLM-4/SRoBERTa", -10.4, -11.05, -13.33, -11.26, 28.17, 1.9},
    {"masked GLM-4/SimCSE-BERT", -10.66, -11.06, -13.36, -11.20, 25.33, 1.27},
    {"masked Llama-3.1/SRoBERTa", -9.99, -11.08, -13.36, -11.04, 33.73, -0.36},
    {"masked Llama-3.1/SimCSE-BERT", -10.21, -11.11, -13.26, -10.99, 29.87, -1.08},
};

ConditionScore score_with_mean(double mean) {
  ConditionScore c;
  c.whole_sentence_mean = mean;
  c.whole_sum = mean;
  c.whole_count = 1;
  c.masked_only_mean = mean;
  c.masked_sum = mean;
  c.masked_count = 1;
  return c;
}

// Two samples per cell whose per-sample means average to the printed means.
std::vector<LikelihoodReport> reports_for(double ow, double owo, double sw, double swo) {
  std::vector<LikelihoodReport> rs(2);
  const double jitter[] = {-0.25, 0.25}, sim_jitter[] = {0.1, -0.1};
  for (int i = 0; i < 2; ++i) {
    rs[i].orig_with = score_with_mean(ow + jitter[i]);
    rs[i].orig_without = score_with_mean(owo + jitter[i]);
    rs[i].sim_with = score_with_mean(sw + sim_jitter[i]);
    rs[i].sim_without = score_with_mean(swo + sim_jitter[i]);
  }
  return rs;
}

Outcome ac1() {
  int ok = 0, total = 0;
  std::string worst;
  double worst_err = 0.0;
  for (const auto& row : kTable4) {
    const auto rs = reports_for(row.orig_with, row.orig_without, row.sim_with, row.sim_without);
    const Aggregation agg = std::string(row.label).starts_with("whole") ? Aggregation::WHOLE : Aggregation::MASKED_ONLY;
    for (auto [cond, want] : {std::pair{Condition::WITH, row.pd_with}, std::pair{Condition::WITHOUT, row.pd_without}}) {
      const double got = compare_distributions(rs, agg, cond, rs.size()).percent_diff;
      const double err = std::abs(got - want);
      ++total;
      if (err <= kTable4Tol) ++ok;
      if (err > worst_err) {
        worst_err = err;
        worst = fmt::format("{} {}", row.label, to_string(cond));
      }
    }
  }
  return {ok == total ? Outcome::PASS : Outcome::FAIL,
          fmt::format("{}/{} cells within {}; largest error {:.4f} ({})", ok, total, kTable4Tol, worst_err, worst)};
}

// ---------------------------------------------------------------- AC2

struct OracleRun {
  CellVerdict masked_with;
  double orig_wins = 0.0;  // share of samples with orig > sim on masked tokens, with prefix
};

OracleRun oracle_run(const OracleCorpus& corpus, VictimFamily family, const std::string& id) {
  VictimRegistry reg;
  reg.register_toy(family, id, corpus.vocabulary, 64, 11);
  TrainConfig cfg;  // 10 epochs, batch 64, lr 3e-4
  cfg.max_len = 32;
  const auto trained = train_attacker(reg, id, corpus.auxiliary, cfg, AttackerSpec{});
  const AuditResult r = audit(corpus.triples, trained.model, reg, id);
  OracleRun out;
  out.masked_with = r.rows.at(0).cell(Aggregation::MASKED_ONLY, Condition::WITH);
  std::size_t wins = 0, n = 0;
  for (const auto& rep : r.reports) {
    if (!rep.orig_with.masked_only_mean || !rep.sim_with.masked_only_mean) continue;
    ++n;
    wins += *rep.orig_with.masked_only_mean > *rep.sim_with.masked_only_mean;
  }
  out.orig_wins = n ? static_cast<double>(wins) / static_cast<double>(n) : 0.0;
  return out;
}

std::string describe(const CellVerdict& c) {
  return fmt::format("pd {:+.3f}% p {}", c.percent_diff, c.p_value ? fmt::format("{:.3g}", *c.p_value) : "n/a");
}

Outcome ac2() {
  OracleSpec spec;  // 500 audit sentences, 2000 auxiliary sentences
  const OracleCorpus corpus = make_oracle_corpus(spec);
  const OracleRun leaky = oracle_run(corpus, VictimFamily::TOY_LEAKY, "leaky");
  const OracleRun blind = oracle_run(corpus, VictimFamily::TOY_BLIND, "blind");
  const bool leaky_ok = leaky.masked_with.percent_diff > 0.0 && leaky.masked_with.significant(kLeakyP);
  const bool blind_ok = !blind.masked_with.p_value || *blind.masked_with.p_value > kBlindP;
  return {leaky_ok && blind_ok ? Outcome::PASS : Outcome::FAIL,
          fmt::format("n={} leaky: {}; blind: {}; leaky orig>sim on {:.1f}% of samples (informational, target {:.0f}%)",
                      leaky.masked_with.n_included, describe(leaky.masked_with), describe(blind.masked_with),
                      100.0 * leaky.orig_wins, 100.0 * kLeakyMajority)};
}

// ---------------------------------------------------------------- AC3

ExperimentConfig toy_inversion(const fs::path& out, AttackKind kind) {
  auto c = ExperimentConfig::toy_default();
  c.attack = kind;
  c.output_dir = out.string();
  c.victims[0].dim = 64;
  c.data.synthetic.vocab_size = 50;
  c.data.synthetic.sentences = 2000;
  c.data.synthetic.max_words = 8;
  c.train.epochs = 10;
  c.train.batch_size = 64;
  c.train.learning_rate = 3e-4;
  return c;
}

Outcome ac3(const fs::path& tmp) {
  double f1[3];
  const AttackKind kinds[] = {AttackKind::GEIA, AttackKind::MLC, AttackKind::MSP};
  for (int i = 0; i < 3; ++i) {
    const auto dir = run_attack_experiment(toy_inversion(tmp / fmt::format("ac3-{}", to_string(kinds[i])), kinds[i]));
    f1[i] = read_json(dir / "metrics.json").at("metrics").at("f1").get<double>();
  }
  const bool ok = f1[0] >= kGeiaMinF1 && f1[0] >= f1[1] && f1[0] >= f1[2];
  return {ok ? Outcome::PASS : Outcome::FAIL,
          fmt::format("micro-F1 GEIA {:.3f} (min {}), MLC {:.3f}, MSP {:.3f}", f1[0], kGeiaMinF1, f1[1], f1[2])};
}

// ---------------------------------------------------------------- AC4

Outcome ac4() {
  auto tok = std::make_shared<WordTokenizer>(WordTokenizer::build({"red green blue pink"}));
  const int max_len = 4, vocab = tok->vocab_size();
  std::vector<int> gen;
  const auto banned = tok->non_generable_ids();
  for (int id = 0; id < vocab; ++id)
    if (id != tok->eos_id() && std::find(banned.begin(), banned.end(), id) == banned.end()) gen.push_back(id);

  int beam_ok = 0, greedy_ok = 0, trials = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 8; ++s) {
    DecoderConfig dc;
    dc.layers = 1;
    dc.hidden = 16;
    dc.heads = 2;
    dc.max_len = max_len;
    dc.vocab_size = vocab;
    AttackerModel m(dc, tok, "v", 6);
    m.init(1000 + s);
    for (auto& p : m.params()) p *= 3.0;
    Rng rng(2000 + s);
    EmbeddingVector e{std::vector<double>(6), "v"};
    for (auto& x : e.values) x = rng.normal();

    double best = -std::numeric_limits<double>::infinity();
    std::vector<int> seq;
    std::function<void()> rec = [&] {
      const bool full = static_cast<int>(seq.size()) == max_len;
      best = std::max(best, sequence_log_prob(m, e, seq, !full));
      if (full) return;
      for (int t : gen) {
        seq.push_back(t);
        rec();
        seq.pop_back();
      }
    };
    rec();
    int width = 1;
    for (int i = 0; i < max_len; ++i) width *= vocab;
    const Hypothesis h = beam_search(m, e, width, max_len);
    const double err = std::abs(h.score - best);
    worst = std::max(worst, err);
    beam_ok += err <= kBeamTol;
    const Hypothesis g = greedy_decode(m, e, max_len), b1 = beam_search(m, e, 1, max_len);
    greedy_ok += g.tokens == b1.tokens && g.score == b1.score;
    ++trials;
  }
  const bool ok = beam_ok == trials && greedy_ok == trials;
  return {ok ? Outcome::PASS : Outcome::FAIL,
          fmt::format("vocab {} max_len {}: exhaustive match {}/{} (worst {:.2e}), beam-1 == greedy {}/{}", vocab,
                      max_len, beam_ok, trials, worst, greedy_ok, trials)};
}

// ---------------------------------------------------------------- AC5

Outcome ac5() {
  struct Case {
    std::string name;
    double got, want;
  };
  std::vector<Case> cases;
  auto add = [&](std::string n, double g, double w) { cases.push_back({std::move(n), g, w}); };
  using Bags = std::vector<TokenBag>;
  using Strs = std::vector<std::string>;

  const auto prf = micro_prf1(Bags{{"a", "a", "b"}}, Bags{{"a", "b", "c"}});
  add("P {a,a,b}/{a,b,c}", prf.precision, 2.0 / 3.0);
  add("R {a,a,b}/{a,b,c}", prf.recall, 2.0 / 3.0);
  add("F1 {a,a,b}/{a,b,c}", prf.f1, 2.0 / 3.0);
  const auto clip = micro_prf1(Bags{{"a", "a", "a"}}, Bags{{"a"}});
  add("P clipped", clip.precision, 1.0 / 3.0);
  add("F1 clipped", clip.f1, 0.5);
  add("F1 empty prediction", micro_prf1(Bags{{}}, Bags{{"a"}}).f1, 0.0);
  const auto pooled = micro_prf1(Bags{{"a"}, {"b", "c"}}, Bags{{"a", "b"}, {"c"}});
  add("P pooled", pooled.precision, 2.0 / 3.0);

  const auto sw = StopwordLexicon::english();
  add("SWR the/cat", stopword_rate(Bags{{"the", "cat"}}, sw), 50.0);
  add("SWR pooled", stopword_rate(Bags{{"the", "cat"}, {"is", "on"}}, sw), 75.0);

  DictionaryNer ner({{"rommel", EntityLabel::PERSON}, {"ulm", EntityLabel::LOCATION}});
  add("NERR", nerr(Strs{"rommel went home"}, Strs{"Rommel visited Ulm"}, ner).ratio, 0.5);

  add("PPL uniform", perplexity(Strs{"a b c", "d e"}, UniformScorer(37)), 37.0);
  add("PPL unigram add-one", perplexity(Strs{"a c"}, UnigramScorer(Strs{"a a b"})), std::sqrt(12.0));

  const Strs same{"the quick brown fox jumps", "over the lazy dog today"};
  const auto id = rouge_bleu(same, same);
  add("ROUGE-1 identical", id.rouge1, 1.0);
  add("ROUGE-L identical", id.rougeL, 1.0);
  add("BLEU-1 identical", id.bleu1, 1.0);
  add("BLEU-2 identical", id.bleu2, 1.0);
  add("BLEU-4 identical", id.bleu4, 1.0);
  add("ROUGE-1 partial", rouge_bleu(Strs{"a b"}, Strs{"a c d"}).rouge1, 0.4);
  add("ROUGE-L reorder", rouge_bleu(Strs{"b a c"}, Strs{"a b c"}).rougeL, 2.0 / 3.0);
  const auto brev = rouge_bleu(Strs{"a b"}, Strs{"a b c d"});
  add("BLEU-1 brevity", brev.bleu1, std::exp(-1.0));
  add("BLEU-4 brevity smoothed", brev.bleu4, std::exp(-1.0) * std::sqrt(0.1));
  add("BLEU-2 bigram 1/3", rouge_bleu(Strs{"a b c d"}, Strs{"a b d c"}).bleu2, std::sqrt(1.0 / 3.0));
  add("BLEU-1 no overlap", rouge_bleu(Strs{"x y"}, Strs{"a b"}).bleu1, 0.0);

  VictimRegistry reg;
  reg.register_toy_vectors(VictimFamily::TOY_ADDITIVE, "v", {{"a", {1.0, 0.0}}, {"b", {0.0, 1.0}}});
  add("ES cosine", embedding_similarity(reg, "v", Strs{"a"}, Strs{"a b"}), 1.0 / std::sqrt(2.0));
  add("ES empty prediction", embedding_similarity(reg, "v", Strs{""}, Strs{"a"}), 0.0);

  int ok = 0;
  std::string bad;
  for (const auto& c : cases) {
    if (std::abs(c.got - c.want) <= kMetricTol) {
      ++ok;
    } else {
      bad += fmt::format(" [{}: {} vs {}]", c.name, c.got, c.want);
    }
  }
  const int n = static_cast<int>(cases.size());
  return {ok == n && n >= kMinMetricCases ? Outcome::PASS : Outcome::FAIL,
          fmt::format("{}/{} hand cases exact to {}{}", ok, n, kMetricTol, bad)};
}

// ---------------------------------------------------------------- AC6

Outcome ac6() {
  struct Case {
    const char* name;
    std::string original, response;
    std::size_t from_text;  // count read from the quoted masked text
    std::size_t listed;     // count given alongside the criterion
  };
  const std::vector<Case> cases = {
      {"prompt example 1", "Barack Obama visited the United Nations headquarters in New York",
       "Masked version: <PERSON> visited the United Nations headquarters in <LOCATION>[SEP]Alternative version: "
       "Lebron James visited the United Nations headquarters in Los Angeles",
       2, 2},
      {"prompt example 2", "Elon Musk is the CEO of SpaceX, based in Hawthorne, California",
       "Masked version: <PERSON> is the CEO of <ORGANIZATION>, based in <LOCATION>[SEP]Alternative version: Sam "
       "Altman is the CEO of OpenAI, based in San Francisco",
       3, 5},
      {"prompt example 3", "The CEO of Tesla, Elon Musk, met with the President of the United States",
       "Masked version: The CEO of [[ORGANIZATION]], [[PERSON]], met with the President of the United "
       "States[SEP]Alternative version: The CEO of Meta, Mark Zuckerberg, met with the Prime Minister of the United "
       "Kingdom",
       2, 2},
      {"comparison row 1",
       "Rommel was a commander of the Führerbegleithauptquartier (Führer escort headquarters) during the Poland "
       "campaign, often moving up close to the front in the Führersonderzug and seeing much of Hitler.",
       "<PERSON> was a commander of the <ORGANIZATION> during the <LOCATION> campaign, often moving up close to the "
       "front in the <ENTITY> and seeing much of <PERSON>.[SEP]General von Kluge was a commander of the Supreme "
       "Command headquarters during the Warsaw campaign, often moving up close to the front in the High Command "
       "train and seeing much of the Führer.",
       5, 5},
      {"comparison row 2",
       "Rommel was born in Heidenheim, Germany, 45 kilometers (28 mi) from Ulm, in the Kingdom of Württemberg which "
       "was then part of the German Empire, on November 15, 1891.",
       "<PERSON>  was born in <LOCATION>, Germany, 45 kilometers (28 mi) from <LOCATION>, in the Kingdom of "
       "<ENTITY>, which was then part of the <ENTITY>, on November 15, 1891.[SEP]Karl was born in Munich, Germany, "
       "45 kilometers (28 mi) from Augsburg, in the Kingdom of Bavaria, which was then part of the Austro-Hungarian "
       "Empire, on November 15, 1891.",
       5, 5},
  };
  std::string counts, notes;
  bool ok = true;
  for (const auto& c : cases) {
    std::size_t n = 0;
    try {
      n = parse_response(c.response, c.original, "fixture").placeholders.size();
    } catch (const std::exception& e) {
      ok = false;
      notes += fmt::format(" {} rejected ({});", c.name, e.what());
      continue;
    }
    counts += fmt::format("{}{}", counts.empty() ? "" : ",", n);
    if (n != c.from_text) ok = false;
    if (c.listed != c.from_text)
      notes += fmt::format(" {}: listed count {} but its masked text holds {} placeholders;", c.name, c.listed,
                           c.from_text);
  }

  // Fault injection: every tenth response lacks a separator.
  struct Faulty : ChatTransport {
    std::string complete(const ChatRequest& r) const override {
      const auto q = r.user.find('"');
      const std::string text = r.user.substr(q + 1, r.user.size() - q - 2);
      const int i = std::stoi(text.substr(text.rfind(' ') + 1));
      if (i % 10 == 0) return "<PERSON> spoke " + std::to_string(i);
      return "<PERSON> spoke " + std::to_string(i) + "[SEP]Someone spoke " + std::to_string(i);
    }
  } transport;
  std::vector<SentenceRecord> rs;
  for (int i = 0; i < 100; ++i)
    rs.push_back({std::to_string(i), "Name spoke " + std::to_string(i), Dataset::SYNTHETIC, Split::Test});
  const auto gen = generate_triples(rs, ReasonerConfig{}, transport);
  bool log_ok = gen.rejections.size() == 10 && gen.triples.size() == 90;
  for (const auto& r : gen.rejections) log_ok = log_ok && r.reason == RejectReason::NO_SEPARATOR && r.index % 10 == 0;
  ok = ok && log_ok;
  return {ok ? Outcome::PASS : Outcome::FAIL,
          fmt::format("placeholder counts ({}) match the quoted texts;{} fault injection: {} accepted + {} rejected of "
                      "100{}",
                      counts, notes, gen.triples.size(), gen.rejections.size(), log_ok ? "" : " MISMATCH")};
}

// ---------------------------------------------------------------- AC7

Outcome ac7(const fs::path& tmp) {
  auto small = [&](const std::string& name) {
    auto c = ExperimentConfig::toy_default();
    c.output_dir = (tmp / name).string();
    c.data.synthetic.sentences = 300;
    c.train.epochs = 2;
    return c;
  };
  const auto a = run_attack_experiment(small("ac7-a"));
  const auto b = run_attack_experiment(small("ac7-b"));

  const fs::path oracle = tmp / "ac7-oracle";
  fs::create_directories(oracle);
  OracleSpec os;
  os.audit_sentences = 60;
  write_triples(oracle / "triples.jsonl", make_oracle_corpus(os).triples);
  auto audit_cfg = [&](const std::string& name) {
    auto c = small(name);
    c.audit.triples = (oracle / "triples.jsonl").string();
    c.audit.checkpoint = (a / "model").string();
    return c;
  };
  const auto x = run_leakage_audit(audit_cfg("ac7-x"));
  const auto y = run_leakage_audit(audit_cfg("ac7-y"));

  std::string diff;
  for (const char* f : {"metrics.json", "generations.jsonl", "train_log.json", "model/weights.bin"})
    if (slurp(a / f) != slurp(b / f)) diff += std::string(" ") + f;
  if (slurp(x / "audit.json") != slurp(y / "audit.json")) diff += " audit.json";
  return {diff.empty() ? Outcome::PASS : Outcome::FAIL,
          diff.empty() ? "attack metrics, generations, weights and audit JSON byte-identical across reruns"
                       : "differs:" + diff};
}

// ---------------------------------------------------------------- AC8

Outcome ac8() {
  return {Outcome::SKIP,
          "full-scale GEIA on PersonaChat with a transformer victim needs external models and GPU hours; "
          "see README for the recipe"};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const fs::path tmp = fs::temp_directory_path() / fmt::format("geia-acceptance-{}", ::getpid());
  fs::create_directories(tmp);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1 table arithmetic", ac1},
      {"AC2 leakage oracle", ac2},
      {"AC3 toy inversion ordering", [&] { return ac3(tmp); }},
      {"AC4 beam search oracle", ac4},
      {"AC5 metric oracle suite", ac5},
      {"AC6 reasoner parsing", ac6},
      {"AC7 determinism", [&] { return ac7(tmp); }},
      {"AC8 full-scale reproduction", ac8},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Outcome::FAIL, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Outcome::PASS ? "PASS" : o.status == Outcome::FAIL ? "FAIL" : "SKIP";
    failed += o.status == Outcome::FAIL;
    std::printf("%s %s: %s (%.1fs)\n", tag, name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(tmp, ec);
  return failed ? 1 : 0;
}
