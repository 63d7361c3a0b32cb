#include "geia/runner.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "geia/checkpoint.hpp"
#include "geia/errors.hpp"
#include "geia/hashing.hpp"

#ifndef GEIA_VERSION
#define GEIA_VERSION "0.0.0"
#endif

namespace geia {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view code_version() { return GEIA_VERSION; }

std::string_view to_string(AttackKind a) {
  switch (a) {
    case AttackKind::GEIA: return "GEIA";
    case AttackKind::MLC: return "MLC";
    case AttackKind::MSP: return "MSP";
  }
  return "GEIA";
}

AttackKind parse_attack(std::string_view s) {
  if (s == "GEIA" || s == "geia") return AttackKind::GEIA;
  if (s == "MLC" || s == "mlc") return AttackKind::MLC;
  if (s == "MSP" || s == "msp") return AttackKind::MSP;
  throw ConfigError("unknown attack '" + std::string(s) + "'");
}

// ------------------------------------------------------------ json utils

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

namespace {

// Strict reader over one JSON object: unknown keys and wrong types are
// configuration errors.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown key " + where_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string projection_name(ProjectionMode m) {
  switch (m) {
    case ProjectionMode::Auto: return "auto";
    case ProjectionMode::Force: return "force";
    case ProjectionMode::Bypass: return "bypass";
  }
  return "auto";
}

ProjectionMode parse_projection(const std::string& s) {
  if (s == "auto") return ProjectionMode::Auto;
  if (s == "force") return ProjectionMode::Force;
  if (s == "bypass") return ProjectionMode::Bypass;
  throw ConfigError("unknown projection mode '" + s + "'");
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------- config

ExperimentConfig ExperimentConfig::toy_default() {
  ExperimentConfig c;
  c.victims.push_back({"toy-additive", VictimFamily::TOY_ADDITIVE, 64, 11, "", "/embed", ""});
  c.victim_id = "toy-additive";
  c.train.max_len = 16;
  c.decode_max_len = 16;
  return c;
}

json ExperimentConfig::to_json() const {
  json victims_j = json::array();
  for (const auto& v : victims) {
    victims_j.push_back({{"id", v.id},
                         {"family", std::string(geia::to_string(v.family))},
                         {"dim", v.dim},
                         {"seed", v.seed},
                         {"endpoint", v.endpoint},
                         {"endpoint_path", v.endpoint_path},
                         {"external_id", v.external_id}});
  }
  const auto& s = data.synthetic;
  return {
      {"version", version},
      {"attack", std::string(geia::to_string(attack))},
      {"seed", seed},
      {"deterministic", deterministic},
      {"output_dir", output_dir},
      {"victims", victims_j},
      {"victim_id", victim_id},
      {"data",
       {{"dataset", std::string(geia::to_string(data.dataset))},
        {"path", data.path},
        {"synthetic",
         {{"vocab_size", s.vocab_size},
          {"sentences", s.sentences},
          {"min_words", s.min_words},
          {"max_words", s.max_words},
          {"zipf_exponent", s.zipf_exponent},
          {"seed", s.seed}}},
        {"split", {data.split.train, data.split.dev, data.split.test}},
        {"split_seed", data.split_seed},
        {"fraction", data.fraction},
        {"use_file_splits", data.use_file_splits}}},
      {"train",
       {{"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"learning_rate", train.learning_rate},
        {"optimizer", "adam"},
        {"max_len", train.max_len}}},
      {"model",
       {{"layers", model.layers},
        {"hidden", model.hidden},
        {"heads", model.heads},
        {"projection", projection_name(model.projection)},
        {"supervise_eos", model.supervise_eos},
        {"tokenizer_dir", model.tokenizer_dir}}},
      {"msp", {{"recurrent_dim", msp.recurrent_dim}, {"steps", msp.steps}, {"removal", "most_probable"}}},
      {"threshold_grid", threshold_grid},
      {"decode", {{"beam", beam}, {"max_len", decode_max_len}}},
      {"checkpoint", checkpoint},
      {"metrics",
       {{"scorer", metrics.scorer},
        {"ner_dictionary", metrics.ner_dictionary},
        {"es_victim", metrics.es_victim}}},
      {"audit",
       {{"triples", audit.triples},
        {"checkpoint", audit.checkpoint},
        {"pooling", std::string(geia::to_string(audit.pooling))},
        {"coverage_floor", audit.coverage_floor}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "config");
  if (!j.contains("version")) throw ConfigError("config has no version field");
  r.get("version", c.version);
  if (c.version != kConfigVersion)
    throw ConfigError("unsupported config version " + std::to_string(c.version));
  std::string attack = "GEIA";
  r.get("attack", attack);
  c.attack = parse_attack(attack);
  r.get("seed", c.seed);
  r.get("deterministic", c.deterministic);
  r.get("output_dir", c.output_dir);
  r.get("victim_id", c.victim_id);
  r.get("threshold_grid", c.threshold_grid);
  r.get("checkpoint", c.checkpoint);

  if (const json* vs = r.child("victims")) {
    if (!vs->is_array()) throw ConfigError("config.victims must be an array");
    for (const auto& vj : *vs) {
      Reader vr(vj, "config.victims[]");
      VictimSpec v;
      std::string family = "TOY_ADDITIVE";
      vr.get("id", v.id);
      vr.get("family", family);
      v.family = parse_victim_family(family);
      vr.get("dim", v.dim);
      vr.get("seed", v.seed);
      vr.get("endpoint", v.endpoint);
      vr.get("endpoint_path", v.endpoint_path);
      vr.get("external_id", v.external_id);
      vr.finish();
      c.victims.push_back(std::move(v));
    }
  }
  if (const json* dj = r.child("data")) {
    Reader dr(*dj, "config.data");
    std::string dataset = "SYNTHETIC";
    dr.get("dataset", dataset);
    c.data.dataset = parse_dataset(dataset);
    dr.get("path", c.data.path);
    std::vector<int> split{c.data.split.train, c.data.split.dev, c.data.split.test};
    dr.get("split", split);
    if (split.size() != 3) throw ConfigError("config.data.split must have three entries");
    c.data.split = {split[0], split[1], split[2]};
    dr.get("split_seed", c.data.split_seed);
    dr.get("fraction", c.data.fraction);
    dr.get("use_file_splits", c.data.use_file_splits);
    if (const json* sj = dr.child("synthetic")) {
      Reader sr(*sj, "config.data.synthetic");
      auto& s = c.data.synthetic;
      sr.get("vocab_size", s.vocab_size);
      sr.get("sentences", s.sentences);
      sr.get("min_words", s.min_words);
      sr.get("max_words", s.max_words);
      sr.get("zipf_exponent", s.zipf_exponent);
      sr.get("seed", s.seed);
      sr.finish();
    }
    dr.finish();
  }
  if (const json* tj = r.child("train")) {
    Reader tr(*tj, "config.train");
    tr.get("epochs", c.train.epochs);
    tr.get("batch_size", c.train.batch_size);
    tr.get("learning_rate", c.train.learning_rate);
    tr.get("max_len", c.train.max_len);
    std::string opt = "adam";
    tr.get("optimizer", opt);
    if (opt != "adam") throw ConfigError("only the adam optimizer is supported");
    tr.finish();
  }
  if (const json* mj = r.child("model")) {
    Reader mr(*mj, "config.model");
    mr.get("layers", c.model.layers);
    mr.get("hidden", c.model.hidden);
    mr.get("heads", c.model.heads);
    std::string proj = "auto";
    mr.get("projection", proj);
    c.model.projection = parse_projection(proj);
    mr.get("supervise_eos", c.model.supervise_eos);
    mr.get("tokenizer_dir", c.model.tokenizer_dir);
    mr.finish();
  }
  if (const json* mj = r.child("msp")) {
    Reader mr(*mj, "config.msp");
    mr.get("recurrent_dim", c.msp.recurrent_dim);
    mr.get("steps", c.msp.steps);
    std::string removal = "most_probable";
    mr.get("removal", removal);
    if (removal != "most_probable") throw ConfigError("unknown MSP removal policy");
    mr.finish();
  }
  if (const json* dj = r.child("decode")) {
    Reader dr(*dj, "config.decode");
    dr.get("beam", c.beam);
    dr.get("max_len", c.decode_max_len);
    dr.finish();
  }
  if (const json* mj = r.child("metrics")) {
    Reader mr(*mj, "config.metrics");
    mr.get("scorer", c.metrics.scorer);
    mr.get("ner_dictionary", c.metrics.ner_dictionary);
    mr.get("es_victim", c.metrics.es_victim);
    mr.finish();
  }
  if (const json* aj = r.child("audit")) {
    Reader ar(*aj, "config.audit");
    ar.get("triples", c.audit.triples);
    ar.get("checkpoint", c.audit.checkpoint);
    std::string pooling = "per_sample";
    ar.get("pooling", pooling);
    c.audit.pooling = parse_pooling(pooling);
    ar.get("coverage_floor", c.audit.coverage_floor);
    ar.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  return from_json(read_json(path));
}

void ExperimentConfig::validate() const {
  train.validate();
  std::set<std::string> ids;
  for (const auto& v : victims) {
    if (v.id.empty()) throw ConfigError("victim with empty id");
    if (!ids.insert(v.id).second) throw ConfigError("duplicate victim id '" + v.id + "'");
    if (v.dim < 1) throw ConfigError("victim '" + v.id + "' has non-positive dim");
    if (!is_toy(v.family) && v.endpoint.empty())
      throw ConfigError("victim '" + v.id + "' needs an endpoint");
  }
  if (!victim_id.empty()) victim(victim_id);
  if (!metrics.es_victim.empty()) victim(metrics.es_victim);
  if (metrics.scorer != "uniform" && metrics.scorer != "unigram" && metrics.scorer != "attacker")
    throw ConfigError("unknown perplexity scorer '" + metrics.scorer + "'");
  if (beam < 1) throw ConfigError("decode.beam must be >= 1");
  if (decode_max_len < 1) throw ConfigError("decode.max_len must be >= 1");
  if (threshold_grid.empty()) throw ConfigError("threshold_grid is empty");
  if (data.split.train < 0 || data.split.dev < 0 || data.split.test < 0 ||
      data.split.train + data.split.dev + data.split.test != 100)
    throw ConfigError("split ratios must be non-negative and sum to 100");
  if (!(data.fraction > 0.0 && data.fraction <= 1.0))
    throw ConfigError("data.fraction must lie in (0, 1]");
  if (audit.coverage_floor < 0.0 || audit.coverage_floor > 1.0)
    throw ConfigError("audit.coverage_floor must lie in [0, 1]");
}

const VictimSpec& ExperimentConfig::victim(const std::string& id) const {
  for (const auto& v : victims)
    if (v.id == id) return v;
  throw ConfigError("victim id '" + id + "' is not configured");
}

VictimRegistry build_registry(const std::vector<VictimSpec>& victims) {
  VictimRegistry reg;
  for (const auto& v : victims) {
    if (is_toy(v.family)) {
      reg.register_backend({v.id, v.dim, v.family, true},
                           std::make_shared<ToyEmbedder>(v.family, v.dim, v.seed));
    } else {
      reg.register_backend({v.id, v.dim, v.family, true},
                           std::make_shared<HttpEmbeddingBackend>(
                               v.endpoint, v.endpoint_path, v.external_id.empty() ? v.id : v.external_id));
    }
  }
  return reg;
}

std::vector<double> AttackerLmScorer::token_log_probs(std::string_view text) const {
  if (model_.tokenizer().tokenize(text).token_ids.empty()) return {};
  return score_sequence(model_, text, std::nullopt).log_probs;
}

Partition load_partition(const DataSpec& spec) {
  std::vector<SentenceRecord> records;
  if (spec.path.empty()) {
    if (spec.dataset != Dataset::SYNTHETIC)
      throw ConfigError("data.path is required for dataset " + std::string(to_string(spec.dataset)));
    records = generate_synthetic(spec.synthetic);
  } else {
    records = load_dataset(spec.path, spec.dataset);
  }
  if (spec.fraction < 1.0) records = sample_fraction(records, spec.fraction, spec.split_seed);
  if (!spec.use_file_splits) return apply_split(std::move(records), spec.split, spec.split_seed);
  Partition p;
  for (auto& r : records) {
    switch (r.split) {
      case Split::Train: p.train.push_back(std::move(r)); break;
      case Split::Dev: p.dev.push_back(std::move(r)); break;
      case Split::Test: p.test.push_back(std::move(r)); break;
    }
  }
  return p;
}

// -------------------------------------------------------------- manifest

RunManifest::RunManifest(fs::path dir, const ExperimentConfig& cfg, std::string kind)
    : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  fs::remove(dir_ / "PARTIAL");
  j_ = {{"format", "geia-run-manifest"},
        {"version", kResultVersion},
        {"kind", kind},
        {"code_version", std::string(code_version())},
        {"config", cfg.to_json()},
        {"seeds",
         {{"seed", cfg.seed},
          {"train_seed", cfg.train.seed},
          {"split_seed", cfg.data.split_seed},
          {"synthetic_seed", cfg.data.synthetic.seed}}},
        {"inputs", json::object()},
        {"artifacts", json::array()},
        {"results", json::object()},
        {"started_at", now_utc()},
        {"status", "running"}};
  flush();
}

void RunManifest::add_input(const std::string& name, const std::string& checksum) {
  j_["inputs"][name] = checksum;
  flush();
}

void RunManifest::add_artifact(const std::string& relative_path) {
  j_["artifacts"].push_back(relative_path);
  flush();
}

void RunManifest::set_result(const std::string& key, json value) {
  j_["results"][key] = std::move(value);
  flush();
}

void RunManifest::begin_stage(const std::string& stage) {
  stage_ = stage;
  j_["stage"] = stage;
  flush();
  spdlog::info("stage: {}", stage);
}

void RunManifest::fail(const std::string& error) {
  j_["status"] = "failed";
  j_["error"] = error;
  flush();
  std::ofstream out(dir_ / "PARTIAL", std::ios::binary);
  out << "stage: " << stage_ << "\nerror: " << error << '\n';
}

void RunManifest::finish() {
  for (const auto& a : j_["artifacts"]) {
    if (!fs::exists(dir_ / a.get<std::string>()))
      throw ReportError("artifact " + a.get<std::string>() + " missing at run end");
  }
  j_["status"] = "complete";
  j_["finished_at"] = now_utc();
  j_.erase("stage");
  flush();
}

void RunManifest::flush() const { write_json(dir_ / "manifest.json", j_); }

// ------------------------------------------------------------ attack run

namespace {

std::vector<std::string> texts_of(const std::vector<SentenceRecord>& rs) {
  std::vector<std::string> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(r.text);
  return out;
}

std::string join(const TokenBag& bag) {
  std::string s;
  for (const auto& t : bag) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

std::string records_checksum(const std::vector<SentenceRecord>& rs) {
  std::string blob;
  for (const auto& r : rs) blob += r.id + '\x1f' + r.text + '\x1e';
  return sha256_hex(blob);
}

template <typename Fn>
auto staged(RunManifest& m, const std::string& stage, Fn fn) {
  m.begin_stage(stage);
  try {
    return fn();
  } catch (const std::exception& e) {
    m.fail(e.what());
    throw;
  }
}

json log_to_json(const TrainingLog& l) {
  return {{"epoch_loss", l.epoch_loss},
          {"steps", l.steps},
          {"skipped_records", l.skipped_records},
          {"victim_checksum_before", l.victim_checksum_before},
          {"victim_checksum_after", l.victim_checksum_after}};
}

}  // namespace

std::string TrainedAttack::predict(const EmbeddingVector& e, int beam, int max_len) const {
  if (mlc) return join(predict_mlc(*mlc, e));
  if (msp) return join(predict_msp(*msp, e));
  if (!geia) throw ConfigError("no attack model loaded");
  return invert(*geia, e, beam, max_len);
}

void TrainedAttack::save(const fs::path& dir) const {
  if (geia) save_attacker(*geia, dir);
  if (mlc) save_mlc(*mlc, dir);
  if (msp) save_msp(*msp, dir);
}

TrainedAttack train_attack(const ExperimentConfig& cfg, const VictimRegistry& registry,
                           const Partition& data) {
  if (data.train.empty()) throw DataError("no training records");
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TrainedAttack a;
  a.kind = cfg.attack;
  switch (cfg.attack) {
    case AttackKind::GEIA: {
      AttackerSpec spec;
      spec.layers = cfg.model.layers;
      spec.hidden = cfg.model.hidden;
      spec.heads = cfg.model.heads;
      spec.projection = cfg.model.projection;
      spec.supervise_eos = cfg.model.supervise_eos;
      if (!cfg.model.tokenizer_dir.empty()) spec.tokenizer = load_tokenizer(cfg.model.tokenizer_dir);
      TrainResult r = train_attacker(registry, cfg.victim_id, data.train, tc, spec);
      a.train_log = log_to_json(r.log);
      a.geia.emplace(std::move(r.model));
      break;
    }
    case AttackKind::MLC: {
      TrainingLog l;
      MLCModel m = train_mlc(registry, cfg.victim_id, data.train, tc, &l);
      a.train_log = log_to_json(l);
      std::vector<SentenceRecord> tune = data.dev;
      if (tune.empty()) {
        const std::size_t n = std::max<std::size_t>(1, data.train.size() / 20);
        tune.assign(data.train.end() - static_cast<std::ptrdiff_t>(n), data.train.end());
        a.results["threshold_tuning_split"] = "train_tail";
      } else {
        a.results["threshold_tuning_split"] = "dev";
      }
      const auto tune_texts = texts_of(tune);
      m.set_threshold(tune_threshold(m, registry.embed(cfg.victim_id, tune_texts), tune_texts,
                                     cfg.threshold_grid));
      a.results["mlc_threshold"] = m.threshold();
      a.mlc.emplace(std::move(m));
      break;
    }
    case AttackKind::MSP: {
      TrainingLog l;
      a.msp.emplace(train_msp(registry, cfg.victim_id, data.train, tc, cfg.msp, &l));
      a.train_log = log_to_json(l);
      a.results["msp_removal_policy"] = "most_probable";
      break;
    }
  }
  return a;
}

TrainedAttack load_attack(const fs::path& dir) {
  TrainedAttack a;
  const std::string family = checkpoint_family(dir);
  a.kind = parse_attack(family);
  switch (a.kind) {
    case AttackKind::GEIA: a.geia.emplace(load_attacker(dir)); break;
    case AttackKind::MLC:
      a.mlc.emplace(load_mlc(dir));
      a.results["mlc_threshold"] = a.mlc->threshold();
      break;
    case AttackKind::MSP:
      a.msp.emplace(load_msp(dir));
      a.results["msp_removal_policy"] = "most_probable";
      break;
  }
  return a;
}

fs::path run_attack_experiment(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  if (cfg.victim_id.empty()) throw ConfigError("victim_id is not set");
  cfg.train.seed = cfg.seed;
  const fs::path dir = cfg.output_dir;
  RunManifest manifest(dir, cfg, "attack");

  const VictimRegistry registry = staged(manifest, "registry", [&] { return build_registry(cfg.victims); });
  const Partition part = staged(manifest, "data", [&] {
    Partition p = load_partition(cfg.data);
    if (p.train.empty() || p.test.empty()) throw DataError("train or test split is empty");
    manifest.add_input("data", cfg.data.path.empty() ? records_checksum(p.train) + ":" + records_checksum(p.test)
                                                     : sha256_file(cfg.data.path));
    return p;
  });
  const auto train_texts = texts_of(part.train);
  const auto test_texts = texts_of(part.test);
  const auto test_emb = staged(manifest, "embed", [&] { return registry.embed(cfg.victim_id, test_texts); });

  const TrainedAttack attack = staged(manifest, "train", [&] {
    TrainedAttack a;
    if (!cfg.checkpoint.empty()) {
      a = load_attack(cfg.checkpoint);
      if (a.kind != cfg.attack) throw ConfigError("checkpoint holds a different attack family");
      manifest.add_input("checkpoint", sha256_file(fs::path(cfg.checkpoint) / "weights.bin"));
    } else {
      a = train_attack(cfg, registry, part);
    }
    for (const auto& [k, v] : a.results.items()) manifest.set_result(k, v);
    a.save(dir / "model");
    manifest.add_artifact("model/header.json");
    manifest.add_artifact("model/weights.bin");
    return a;
  });

  std::vector<std::string> predictions(test_emb.size());
  std::vector<TokenBag> predicted_tokens(test_emb.size());
  staged(manifest, "invert", [&] {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(test_emb.size()); ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (attack.mlc) {
        predicted_tokens[u] = predict_mlc(*attack.mlc, test_emb[u]);
        predictions[u] = join(predicted_tokens[u]);
      } else if (attack.msp) {
        predicted_tokens[u] = predict_msp(*attack.msp, test_emb[u]);
        predictions[u] = join(predicted_tokens[u]);
      } else {
        predictions[u] = invert(*attack.geia, test_emb[u], cfg.beam, cfg.decode_max_len);
        predicted_tokens[u] = word_tokens(predictions[u]);
      }
    }
    return 0;
  });
  const AttackerModel* geia_model = attack.geia ? &*attack.geia : nullptr;
  const json& train_log = attack.train_log;

  const MetricsBundle bundle = staged(manifest, "evaluate", [&] {
    const StopwordLexicon stop = StopwordLexicon::english();
    std::optional<DictionaryNer> ner;
    if (!cfg.metrics.ner_dictionary.empty()) ner = DictionaryNer::load(cfg.metrics.ner_dictionary);
    std::unique_ptr<LmScorer> scorer;
    if (cfg.metrics.scorer == "uniform") {
      scorer = std::make_unique<UniformScorer>(WordVocab::from_texts(train_texts).size() + 1);
    } else if (cfg.metrics.scorer == "attacker") {
      if (!geia_model) throw ConfigError("the attacker scorer needs a GEIA run");
      scorer = std::make_unique<AttackerLmScorer>(*geia_model);
    } else {
      scorer = std::make_unique<UnigramScorer>(train_texts);
    }
    EvaluationPorts ports;
    ports.registry = &registry;
    ports.es_victim_id = cfg.metrics.es_victim.empty() ? cfg.victim_id : cfg.metrics.es_victim;
    ports.ner = ner ? &*ner : nullptr;
    ports.scorer = scorer.get();
    ports.stopwords = &stop;
    return evaluate_attack(predictions, predicted_tokens, test_texts, ports);
  });

  staged(manifest, "write", [&] {
    {
      std::ofstream out(dir / "generations.jsonl", std::ios::binary);
      for (std::size_t i = 0; i < part.test.size(); ++i) {
        out << json{{"id", part.test[i].id}, {"gold", part.test[i].text}, {"prediction", predictions[i]}}.dump()
            << '\n';
      }
    }
    manifest.add_artifact("generations.jsonl");
    write_json(dir / "train_log.json", train_log);
    manifest.add_artifact("train_log.json");
    json metrics{{"format", "geia-metrics"},
                 {"version", kResultVersion},
                 {"attack", std::string(to_string(cfg.attack))},
                 {"victim_id", cfg.victim_id},
                 {"dataset", std::string(to_string(cfg.data.dataset))},
                 {"n_test", part.test.size()},
                 {"metrics", bundle.to_json()}};
    if (cfg.attack == AttackKind::MSP) metrics["msp_removal_policy"] = "most_probable";
    write_json(dir / "metrics.json", metrics);
    manifest.add_artifact("metrics.json");
    return 0;
  });
  manifest.finish();
  return dir;
}

fs::path run_leakage_audit(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  if (cfg.audit.triples.empty()) throw ConfigError("audit.triples is not set");
  if (!fs::exists(cfg.audit.triples)) throw ConfigError("triples file " + cfg.audit.triples + " not found");
  if (cfg.audit.checkpoint.empty()) throw ConfigError("audit.checkpoint is not set");
  if (cfg.victim_id.empty()) throw ConfigError("victim_id is not set");
  const fs::path dir = cfg.output_dir;
  RunManifest manifest(dir, cfg, "audit");
  manifest.add_input("triples", sha256_file(cfg.audit.triples));
  manifest.add_input("checkpoint", sha256_file(fs::path(cfg.audit.checkpoint) / "weights.bin"));

  const VictimRegistry registry = staged(manifest, "registry", [&] { return build_registry(cfg.victims); });
  const auto triples = staged(manifest, "data", [&] { return read_triples(cfg.audit.triples); });
  const AttackerModel attacker = staged(manifest, "load", [&] { return load_attacker(cfg.audit.checkpoint); });
  const AuditResult result = staged(manifest, "audit", [&] {
    AuditOptions opt;
    opt.pooling = cfg.audit.pooling;
    opt.coverage_floor = cfg.audit.coverage_floor;
    return audit(triples, attacker, registry, cfg.victim_id, opt);
  });
  staged(manifest, "write", [&] {
    write_json(dir / "audit.json", result.to_json());
    manifest.add_artifact("audit.json");
    manifest.set_result("n_excluded", result.exclusions.size());
    return 0;
  });
  manifest.finish();
  return dir;
}

}  // namespace geia
