#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geia/attacker.hpp"
#include "geia/baselines.hpp"
#include "geia/corpus.hpp"
#include "geia/embedder.hpp"
#include "geia/leakage.hpp"
#include "geia/metrics.hpp"

namespace geia {

inline constexpr int kConfigVersion = 1;
inline constexpr int kResultVersion = 1;
std::string_view code_version();

enum class AttackKind { GEIA, MLC, MSP };
std::string_view to_string(AttackKind a);
AttackKind parse_attack(std::string_view s);

// One victim embedder. Toy families are built in-process; the others are
// reached over HTTP by external model id.
struct VictimSpec {
  std::string id;
  VictimFamily family = VictimFamily::TOY_ADDITIVE;
  int dim = 64;
  std::uint64_t seed = 11;  // toy families only
  std::string endpoint;     // remote families only
  std::string endpoint_path = "/embed";
  std::string external_id;
};

struct DataSpec {
  Dataset dataset = Dataset::SYNTHETIC;
  std::string path;  // JSONL; empty means generate from `synthetic`
  SyntheticSpec synthetic;
  SplitRatios split{82, 9, 9};
  std::uint64_t split_seed = kDefaultSplitSeed;
  double fraction = 1.0;
  bool use_file_splits = false;  // keep the "split" tags already in the file
};

struct ModelSpec {
  int layers = 2;
  int hidden = 64;
  int heads = 2;
  ProjectionMode projection = ProjectionMode::Auto;
  bool supervise_eos = true;
  std::string tokenizer_dir;  // empty means a word vocabulary from the training split
};

struct MetricOptions {
  std::string scorer = "unigram";  // uniform | unigram | attacker
  std::string ner_dictionary;      // empty disables NERR
  std::string es_victim;           // empty means the attacked victim
};

struct AuditSpec {
  std::string triples;
  std::string checkpoint;
  Pooling pooling = Pooling::PER_SAMPLE;
  double coverage_floor = kAnchorCoverageFloor;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  AttackKind attack = AttackKind::GEIA;
  std::uint64_t seed = 42;
  bool deterministic = true;
  std::string output_dir = "runs/default";
  std::vector<VictimSpec> victims;
  std::string victim_id;
  DataSpec data;
  TrainConfig train;
  ModelSpec model;
  MSPSpec msp;
  std::vector<double> threshold_grid = default_threshold_grid();
  int beam = 5;
  int decode_max_len = 64;
  std::string checkpoint;  // load instead of training when set
  MetricOptions metrics;
  AuditSpec audit;

  // Built-in toy setup used when no config file is given.
  static ExperimentConfig toy_default();

  nlohmann::json to_json() const;
  // Validates the schema and the version; ConfigError on any problem.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  // Checks that referenced ids resolve.
  void validate() const;
  const VictimSpec& victim(const std::string& id) const;
};

VictimRegistry build_registry(const std::vector<VictimSpec>& victims);

// Perplexity port backed by the attacker decoder without a prefix.
class AttackerLmScorer final : public LmScorer {
 public:
  explicit AttackerLmScorer(const AttackerModel& model) : model_(model) {}
  std::vector<double> token_log_probs(std::string_view text) const override;
  std::string id() const override { return "attacker:" + model_.tokenizer().id(); }

 private:
  const AttackerModel& model_;
};

// Loads (or generates) the configured dataset and applies the split.
Partition load_partition(const DataSpec& spec);

// One trained (or loaded) attack model of any family; exactly one of the
// optionals is set, matching `kind`.
struct TrainedAttack {
  AttackKind kind = AttackKind::GEIA;
  std::optional<AttackerModel> geia;
  std::optional<MLCModel> mlc;
  std::optional<MSPModel> msp;
  nlohmann::json train_log = nlohmann::json::object();  // empty when loaded
  nlohmann::json results = nlohmann::json::object();    // e.g. the tuned MLC threshold

  // Reconstructed text (GEIA) or the space-joined token bag (MLC, MSP).
  std::string predict(const EmbeddingVector& e, int beam, int max_len) const;
  void save(const std::filesystem::path& dir) const;
};

// Trains cfg.attack on data.train. The MLC threshold is tuned on data.dev,
// or on the last 5% of train when there is no dev split.
TrainedAttack train_attack(const ExperimentConfig& cfg, const VictimRegistry& registry,
                           const Partition& data);
// Loads any checkpoint; the family comes from its header.
TrainedAttack load_attack(const std::filesystem::path& dir);

// Trains or loads the attacker, inverts the test split, evaluates and writes
// manifest.json, metrics.json, generations.jsonl and model/ under
// cfg.output_dir. On failure a PARTIAL file names the failed stage.
std::filesystem::path run_attack_experiment(const ExperimentConfig& cfg);

// Audits cfg.audit.triples against the checkpoint and victim; writes
// manifest.json and audit.json.
std::filesystem::path run_leakage_audit(const ExperimentConfig& cfg);

// Writes `j` with sorted keys and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// Run directory bookkeeping: the manifest is written before any result.
class RunManifest {
 public:
  RunManifest(std::filesystem::path dir, const ExperimentConfig& cfg, std::string kind);
  void add_input(const std::string& name, const std::string& checksum);
  void add_artifact(const std::string& relative_path);
  void set_result(const std::string& key, nlohmann::json value);
  void begin_stage(const std::string& stage);
  void fail(const std::string& error);  // writes PARTIAL
  void finish();
  void flush() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  nlohmann::json j_;
  std::string stage_;
};

}  // namespace geia
