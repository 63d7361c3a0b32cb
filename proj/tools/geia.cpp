// Command-line front end: dataset preparation, attacker training and
// inversion, baseline attacks, reasoner masking, leakage audits and reports.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <omp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "geia/errors.hpp"
#include "geia/leakage.hpp"
#include "geia/reasoner.hpp"
#include "geia/report.hpp"
#include "geia/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace geia;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string log_level = "info";
};

ExperimentConfig resolve_config(const Globals& g, const std::string& local_config = "") {
  ExperimentConfig cfg;
  if (!local_config.empty()) {
    cfg = ExperimentConfig::load(local_config);
  } else if (!g.config.empty()) {
    cfg = ExperimentConfig::load(g.config);
  } else {
    cfg = ExperimentConfig::toy_default();
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.deterministic) cfg.deterministic = true;
  return cfg;
}

// Records tagged train, or every record when the file carries no train tags.
Partition partition_from_file(const std::string& path, Dataset dataset) {
  auto records = load_dataset(path, dataset);
  Partition p;
  for (auto& r : records) {
    if (r.split == Split::Train) p.train.push_back(r);
    if (r.split == Split::Dev) p.dev.push_back(r);
  }
  if (p.train.empty()) p.train = std::move(records);
  return p;
}

void print_metrics(const fs::path& run) {
  std::cout << render_report({run}).text;
}

int cmd_prepare(const Globals& g, const std::string& dataset, const std::string& in, const std::string& out,
                std::optional<std::uint64_t> seed, double fraction, bool no_split) {
  const Dataset ds = parse_dataset(dataset);
  const std::uint64_t split_seed = seed.value_or(g.seed.value_or(kDefaultSplitSeed));
  std::vector<SentenceRecord> records;
  if (ds == Dataset::SYNTHETIC) {
    SyntheticSpec spec = resolve_config(g).data.synthetic;
    spec.seed = split_seed;
    records = generate_synthetic(spec);
  } else {
    if (in.empty()) throw ConfigError("--in is required for dataset " + dataset);
    records = import_dataset(ds, in);
  }
  if (fraction < 1.0) records = sample_fraction(records, fraction, split_seed);
  if (!no_split) {
    Partition p = apply_split(std::move(records), default_split(ds), split_seed);
    records.clear();
    for (auto* part : {&p.train, &p.dev, &p.test}) records.insert(records.end(), part->begin(), part->end());
    spdlog::info("split {}/{}/{} (seed {})", p.train.size(), p.dev.size(), p.test.size(), split_seed);
  }
  write_records(out, records);
  spdlog::info("wrote {} records to {}", records.size(), out);
  return 0;
}

int cmd_embed(const Globals& g, const std::string& victim, const std::string& data, const std::string& out,
              const std::string& split) {
  const ExperimentConfig cfg = resolve_config(g);
  const VictimRegistry registry = build_registry(cfg.victims);
  auto records = load_dataset(data, cfg.data.dataset);
  EmbeddingCache cache;
  std::vector<EmbedRequest> requests;
  std::vector<std::string> labels;
  for (const auto& r : records) {
    if (split != "all" && r.split != parse_split(split)) continue;
    requests.push_back({r.text, std::nullopt});
    labels.push_back(r.id);
  }
  const auto vectors = registry.embed(victim, std::span<const EmbedRequest>(requests));
  for (std::size_t i = 0; i < vectors.size(); ++i) cache.put(vectors[i], requests[i].text, labels[i]);
  cache.save(out);
  spdlog::info("cached {} embeddings from {} in {}", cache.size(), victim, out);
  return 0;
}

int cmd_train(const Globals& g, const std::string& victim, const std::string& data, const std::string& cfg_path,
              const std::string& out, const std::string& attack) {
  ExperimentConfig cfg = resolve_config(g, cfg_path);
  if (!victim.empty()) cfg.victim_id = victim;
  if (!attack.empty()) cfg.attack = parse_attack(attack);
  cfg.validate();
  const VictimRegistry registry = build_registry(cfg.victims);
  const Partition part = data.empty() ? load_partition(cfg.data) : partition_from_file(data, cfg.data.dataset);
  const TrainedAttack a = train_attack(cfg, registry, part);
  a.save(out);
  json log = a.train_log;
  log["results"] = a.results;
  log["n_train"] = part.train.size();
  log["seed"] = cfg.seed;
  write_json(fs::path(out) / "train_log.json", log);
  spdlog::info("saved {} checkpoint to {}", to_string(a.kind), out);
  return 0;
}

int cmd_invert(const Globals& g, const std::string& ckpt, const std::string& cache_dir, int beam, int max_len,
               const std::string& out) {
  const ExperimentConfig cfg = resolve_config(g);
  const TrainedAttack a = load_attack(ckpt);
  const std::string victim = a.geia ? a.geia->victim_id() : a.mlc ? a.mlc->victim_id() : a.msp->victim_id();
  const EmbeddingCache cache = EmbeddingCache::load(cache_dir);
  std::vector<EmbeddingCache::Entry> entries;
  for (auto& e : cache.entries())
    if (e.victim_id == victim) entries.push_back(std::move(e));
  if (entries.empty()) throw DataError("no cached embeddings for victim '" + victim + "'");

  const int len = max_len > 0 ? max_len : cfg.decode_max_len;
  std::vector<std::string> predictions(entries.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(entries.size()); ++i) {
    const auto u = static_cast<std::size_t>(i);
    predictions[u] = a.predict({entries[u].values, victim}, beam, len);
  }

  std::ofstream file;
  if (!out.empty()) {
    file.open(out, std::ios::binary);
    if (!file) throw ConfigError("cannot write " + out);
  }
  std::ostream& os = out.empty() ? std::cout : file;
  for (std::size_t i = 0; i < entries.size(); ++i)
    os << json{{"id", entries[i].label}, {"prediction", predictions[i]}}.dump() << '\n';
  return 0;
}

int cmd_attack(const Globals& g, const std::string& victim, const std::string& attack, const std::string& data,
               const std::string& out, const std::string& ckpt) {
  ExperimentConfig cfg = resolve_config(g);
  if (!victim.empty()) cfg.victim_id = victim;
  if (!attack.empty()) cfg.attack = parse_attack(attack);
  if (!data.empty()) cfg.data.path = data;
  if (!out.empty()) cfg.output_dir = out;
  if (!ckpt.empty()) cfg.checkpoint = ckpt;
  print_metrics(run_attack_experiment(cfg));
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& generations, const std::string& victim,
                 const std::string& reference, const std::string& ner_path, const std::string& out) {
  const ExperimentConfig cfg = resolve_config(g);
  const VictimRegistry registry = build_registry(cfg.victims);
  std::vector<std::string> predicted, gold;
  {
    std::ifstream in(generations, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + generations);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      predicted.push_back(j.at("prediction").get<std::string>());
      gold.push_back(j.at("gold").get<std::string>());
    }
  }
  if (gold.empty()) throw DataError(generations + " holds no generations");
  std::vector<TokenBag> bags;
  for (const auto& p : predicted) bags.push_back(word_tokens(p));

  std::vector<std::string> lm_corpus = gold;
  if (!reference.empty()) {
    lm_corpus.clear();
    for (const auto& r : load_dataset(reference, cfg.data.dataset)) lm_corpus.push_back(r.text);
  }
  const UnigramScorer scorer(lm_corpus);
  const StopwordLexicon stop = StopwordLexicon::english();
  std::optional<DictionaryNer> ner;
  if (!ner_path.empty()) ner = DictionaryNer::load(ner_path);
  EvaluationPorts ports;
  ports.registry = &registry;
  ports.es_victim_id = victim.empty() ? cfg.victim_id : victim;
  ports.ner = ner ? &*ner : nullptr;
  ports.scorer = &scorer;
  ports.stopwords = &stop;
  const MetricsBundle m = evaluate_attack(predicted, bags, gold, ports);
  const json j{{"format", "geia-metrics"},
               {"version", kResultVersion},
               {"attack", "external"},
               {"victim_id", ports.es_victim_id},
               {"dataset", std::string(to_string(cfg.data.dataset))},
               {"n_test", gold.size()},
               {"metrics", m.to_json()}};
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(out, j);
  }
  return 0;
}

int cmd_mask(const Globals& g, const std::string& data, const std::string& out, const std::string& family,
             const std::string& model, const std::string& endpoint, const std::string& replay,
             const std::string& record, const std::string& rejections_path, int batch, int in_flight) {
  const ExperimentConfig cfg = resolve_config(g);
  ReasonerConfig rc;
  rc.family = parse_reasoner_family(family);
  if (!model.empty()) rc.reasoner_id = model;
  else if (rc.family == ReasonerFamily::LLAMA3) rc.reasoner_id = "llama-3-8b-instruct";
  rc.batch_size = batch;
  rc.max_in_flight = in_flight;
  rc.validate();

  std::shared_ptr<const ChatTransport> transport;
  if (!replay.empty()) {
    transport = std::make_shared<ReplayTransport>(replay);
  } else if (!endpoint.empty()) {
    transport = std::make_shared<HttpChatTransport>(endpoint);
  } else {
    throw ConfigError("mask needs --endpoint or --replay");
  }
  if (!record.empty()) transport = std::make_shared<RecordingTransport>(transport, record);

  const auto records = load_dataset(data, cfg.data.dataset);
  const GenerationResult r = generate_triples(records, rc, *transport);
  write_triples(out, r.triples);
  if (!rejections_path.empty()) {
    std::ofstream rej(rejections_path, std::ios::binary);
    for (const auto& x : r.rejections) rej << to_json(x).dump() << '\n';
  }
  spdlog::info("{} triples, {} rejected of {} records", r.triples.size(), r.rejections.size(), records.size());
  return 0;
}

int cmd_audit(const Globals& g, const std::string& triples, const std::string& ckpt, const std::string& victim,
              const std::string& out, const std::string& pooling) {
  ExperimentConfig cfg = resolve_config(g);
  if (!triples.empty()) cfg.audit.triples = triples;
  if (!ckpt.empty()) cfg.audit.checkpoint = ckpt;
  if (!victim.empty()) cfg.victim_id = victim;
  if (!out.empty()) cfg.output_dir = out;
  if (!pooling.empty()) cfg.audit.pooling = parse_pooling(pooling);
  print_metrics(run_leakage_audit(cfg));
  return 0;
}

int cmd_oracle(const std::string& out, std::uint64_t seed) {
  OracleSpec spec;
  spec.seed = seed;
  const OracleCorpus c = make_oracle_corpus(spec);
  fs::create_directories(out);
  write_records(fs::path(out) / "auxiliary.jsonl", c.auxiliary);
  write_triples(fs::path(out) / "triples.jsonl", c.triples);
  spdlog::info("oracle fixture: {} auxiliary sentences, {} triples in {}", c.auxiliary.size(), c.triples.size(),
               out);
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& csv) {
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  const RenderedReport r = render_report(dirs);
  std::cout << r.text;
  if (!csv.empty()) {
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + csv);
    out << r.csv;
  }
  return 0;
}

int exit_code(const Error& e) {
  if (e.code() == "CONFIG") return 2;
  if (e.code() == "DATA" || e.code() == "ALIGN_FAIL") return 3;
  if (e.code() == "TRANSPORT") return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embedding inversion attacks and leakage audits"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for shuffling, initialization and decoding");
  app.add_flag("--deterministic", g.deterministic, "Fixed thread schedule and reproducible output");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  std::function<int()> run;

  // prepare-data
  std::string dataset, in, out;
  std::optional<std::uint64_t> prep_seed;
  double fraction = 1.0;
  bool no_split = false;
  auto* prep = app.add_subcommand("prepare-data", "Import a dataset into the JSONL interchange format");
  prep->add_option("--dataset", dataset)->required()->check(CLI::IsMember({"pc", "qnli", "altlex", "synthetic"}));
  prep->add_option("--in", in, "Dataset-native input file");
  prep->add_option("--out", out)->required();
  prep->add_option("--seed", prep_seed, "Split and sampling seed");
  prep->add_option("--fraction", fraction)->check(CLI::Range(0.0, 1.0));
  prep->add_flag("--no-split", no_split, "Leave records untagged");
  prep->callback([&] { run = [&] { return cmd_prepare(g, dataset, in, out, prep_seed, fraction, no_split); }; });

  // embed
  std::string victim, data, split = "all";
  auto* emb = app.add_subcommand("embed", "Embed records with a victim into an embedding cache");
  emb->add_option("--victim", victim)->required();
  emb->add_option("--data", data)->required()->check(CLI::ExistingFile);
  emb->add_option("--out", out)->required();
  emb->add_option("--split", split)->check(CLI::IsMember({"all", "train", "dev", "test"}));
  emb->callback([&] { run = [&] { return cmd_embed(g, victim, data, out, split); }; });

  // train
  std::string cfg_path, attack;
  auto* train = app.add_subcommand("train", "Train an attack model and save its checkpoint");
  train->add_option("--victim", victim);
  train->add_option("--data", data)->check(CLI::ExistingFile);
  train->add_option("--cfg", cfg_path, "Experiment config; overrides --config")->check(CLI::ExistingFile);
  train->add_option("--out", out)->required();
  train->add_option("--attack", attack)->check(CLI::IsMember({"GEIA", "MLC", "MSP", "geia", "mlc", "msp"}));
  train->callback([&] { run = [&] { return cmd_train(g, victim, data, cfg_path, out, attack); }; });

  // invert
  std::string ckpt, cache_dir;
  int beam = 5, max_len = 0;
  auto* inv = app.add_subcommand("invert", "Reconstruct text from cached embeddings");
  inv->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingDirectory);
  inv->add_option("--emb-cache", cache_dir)->required()->check(CLI::ExistingDirectory);
  inv->add_option("--beam", beam)->check(CLI::PositiveNumber);
  inv->add_option("--max-len", max_len, "Decode length; defaults to the config value");
  inv->add_option("--out", out, "JSONL output; stdout when omitted");
  inv->callback([&] { run = [&] { return cmd_invert(g, ckpt, cache_dir, beam, max_len, out); }; });

  // attack
  auto* att = app.add_subcommand("attack", "Train, invert and evaluate one attack into a run directory");
  att->add_option("--victim", victim);
  att->add_option("--attack", attack)->check(CLI::IsMember({"GEIA", "MLC", "MSP", "geia", "mlc", "msp"}));
  att->add_option("--data", data)->check(CLI::ExistingFile);
  att->add_option("--out", out);
  att->add_option("--ckpt", ckpt, "Evaluate a saved checkpoint instead of training");
  att->callback([&] { run = [&] { return cmd_attack(g, victim, attack, data, out, ckpt); }; });

  // evaluate
  std::string generations, reference, ner_path;
  auto* ev = app.add_subcommand("evaluate", "Score a generations JSONL ({gold, prediction} per line)");
  ev->add_option("--generations", generations)->required()->check(CLI::ExistingFile);
  ev->add_option("--victim", victim, "Victim used for embedding similarity");
  ev->add_option("--reference", reference, "Corpus for the unigram perplexity scorer")->check(CLI::ExistingFile);
  ev->add_option("--ner", ner_path, "Entity dictionary; NERR is skipped without one")->check(CLI::ExistingFile);
  ev->add_option("--out", out);
  ev->callback([&] { run = [&] { return cmd_evaluate(g, generations, victim, reference, ner_path, out); }; });

  // mask
  std::string family = "glm4", model, endpoint, replay, record, rejections;
  int batch = 128, in_flight = 4;
  auto* mask = app.add_subcommand("mask", "Ask a reasoner for masked and alternative versions");
  mask->add_option("--data", data)->required()->check(CLI::ExistingFile);
  mask->add_option("--out", out)->required();
  mask->add_option("--family", family)->check(CLI::IsMember({"glm4", "llama3", "GLM4", "LLAMA3"}));
  mask->add_option("--model", model, "Model id sent to the endpoint");
  mask->add_option("--endpoint", endpoint, "Base URL of an OpenAI-compatible server");
  mask->add_option("--replay", replay, "Serve responses from a recording")->check(CLI::ExistingFile);
  mask->add_option("--record", record, "Append live exchanges to this recording");
  mask->add_option("--rejections", rejections, "JSONL log of rejected records");
  mask->add_option("--batch", batch)->check(CLI::PositiveNumber);
  mask->add_option("--in-flight", in_flight)->check(CLI::PositiveNumber);
  mask->callback([&] {
    run = [&] {
      return cmd_mask(g, data, out, family, model, endpoint, replay, record, rejections, batch, in_flight);
    };
  });

  // audit
  std::string triples, pooling;
  auto* aud = app.add_subcommand("audit", "Compare attacker likelihoods of originals and alternatives");
  aud->add_option("--triples", triples);
  aud->add_option("--ckpt", ckpt);
  aud->add_option("--victim", victim);
  aud->add_option("--out", out);
  aud->add_option("--pooling", pooling)->check(CLI::IsMember({"per_sample", "token_pooled"}));
  aud->callback([&] { run = [&] { return cmd_audit(g, triples, ckpt, victim, out, pooling); }; });

  // oracle
  std::uint64_t oracle_seed = 42;
  auto* orc = app.add_subcommand("oracle", "Write the synthetic leakage fixture");
  orc->add_option("--out", out)->required();
  orc->add_option("--seed", oracle_seed);
  orc->callback([&] { run = [&] { return cmd_oracle(out, oracle_seed); }; });

  // report
  std::vector<std::string> runs;
  std::string csv;
  auto* rep = app.add_subcommand("report", "Render result tables for run directories");
  rep->add_option("runs", runs, "Run directories")->check(CLI::ExistingDirectory);
  rep->add_option("--csv", csv);
  rep->callback([&] { run = [&] { return cmd_report(runs, csv); }; });

  CLI11_PARSE(app, argc, argv);

  spdlog::set_default_logger(spdlog::stderr_color_mt("geia"));
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  if (g.deterministic) omp_set_dynamic(0);

  try {
    return run();
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
