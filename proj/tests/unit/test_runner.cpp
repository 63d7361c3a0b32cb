#include <gtest/gtest.h>

#include "geia/errors.hpp"
#include "geia/report.hpp"
#include "geia/runner.hpp"
#include "support.hpp"

using namespace geia;
using geia::testing::read_file;
using geia::testing::TempDir;
using geia::testing::write_file;

namespace {

// Small enough to train in a few seconds.
ExperimentConfig quick(const std::filesystem::path& out, AttackKind kind = AttackKind::GEIA) {
  auto c = ExperimentConfig::toy_default();
  c.attack = kind;
  c.output_dir = out.string();
  c.victims[0].dim = 16;
  c.data.synthetic.sentences = 120;
  c.data.synthetic.vocab_size = 20;
  c.train.epochs = 2;
  c.train.batch_size = 16;
  c.model.hidden = 16;
  c.beam = 2;
  c.decode_max_len = 10;
  c.train.max_len = 10;
  return c;
}

TEST(Config, JsonRoundTripIsByteExact) {
  auto c = ExperimentConfig::toy_default();
  c.attack = AttackKind::MSP;
  c.seed = 7;
  c.threshold_grid = {0.25, 0.5};
  c.audit.pooling = Pooling::TOKEN_POOLED;
  const std::string a = c.to_json().dump(2);
  const std::string b = ExperimentConfig::from_json(nlohmann::json::parse(a)).to_json().dump(2);
  EXPECT_EQ(a, b);

  TempDir dir;
  write_json(dir / "c.json", c.to_json());
  EXPECT_EQ(ExperimentConfig::load(dir / "c.json").to_json(), c.to_json());
}

TEST(Config, UnknownKeysAndVersionsAreRejected) {
  auto j = ExperimentConfig::toy_default().to_json();
  j["trian"] = {{"epochs", 3}};
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig::toy_default().to_json();
  j["train"]["epoch"] = 3;
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig::toy_default().to_json();
  j["version"] = 99;
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig::toy_default().to_json();
  j.erase("version");
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);

  j = ExperimentConfig::toy_default().to_json();
  j["train"]["epochs"] = "ten";
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
}

TEST(Config, PartialFilesTakeDefaults) {
  const auto c = ExperimentConfig::from_json({{"version", 1}, {"train", {{"epochs", 3}}}});
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.batch_size, 64);
  EXPECT_EQ(c.beam, 5);
}

TEST(Config, ValidationCatchesBadReferences) {
  auto c = ExperimentConfig::toy_default();
  EXPECT_NO_THROW(c.validate());
  c.victim_id = "nope";
  EXPECT_THROW(c.validate(), ConfigError);
  c = ExperimentConfig::toy_default();
  c.beam = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ExperimentConfig::toy_default();
  c.victims.push_back(c.victims[0]);
  EXPECT_THROW(c.validate(), ConfigError);
  c = ExperimentConfig::toy_default();
  c.data.split = {50, 20, 20};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AttackRun, WritesEveryArtifactAndRerunsIdentically) {
  TempDir dir;
  const auto a = run_attack_experiment(quick(dir / "a"));
  const auto b = run_attack_experiment(quick(dir / "b"));
  for (const char* f : {"manifest.json", "metrics.json", "generations.jsonl", "train_log.json", "model/header.json",
                        "model/weights.bin"})
    EXPECT_TRUE(std::filesystem::exists(a / f)) << f;
  EXPECT_FALSE(std::filesystem::exists(a / "PARTIAL"));
  for (const char* f : {"metrics.json", "generations.jsonl", "train_log.json", "model/weights.bin"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;

  const auto m = read_json(a / "metrics.json");
  EXPECT_EQ(m.at("format"), "geia-metrics");
  for (const char* k : {"precision", "recall", "f1", "swr", "swr_diff_vs_test", "nerr", "es", "ppl", "rouge1",
                        "rougeL", "bleu1", "bleu2", "bleu4"})
    EXPECT_TRUE(m.at("metrics").contains(k)) << k;

  const auto man = read_json(a / "manifest.json");
  EXPECT_EQ(man.at("status"), "complete");
  EXPECT_EQ(man.at("config"), quick(dir / "a").to_json());
  EXPECT_TRUE(man.at("inputs").contains("data"));
  EXPECT_EQ(man.at("seeds").at("seed"), 42);
}

TEST(AttackRun, CheckpointReuseGivesSameGenerations) {
  TempDir dir;
  const auto a = run_attack_experiment(quick(dir / "a"));
  auto c = quick(dir / "b");
  c.checkpoint = (a / "model").string();
  const auto b = run_attack_experiment(c);
  EXPECT_EQ(read_file(a / "generations.jsonl"), read_file(b / "generations.jsonl"));
  c.attack = AttackKind::MLC;
  c.output_dir = (dir / "c").string();
  EXPECT_THROW(run_attack_experiment(c), ConfigError);
}

TEST(AttackRun, MlcRecordsItsThreshold) {
  TempDir dir;
  const auto a = run_attack_experiment(quick(dir / "mlc", AttackKind::MLC));
  const auto man = read_json(a / "manifest.json");
  ASSERT_TRUE(man.at("results").contains("mlc_threshold"));
  const double t = man["results"]["mlc_threshold"];
  const auto grid = default_threshold_grid();
  EXPECT_NE(std::find(grid.begin(), grid.end(), t), grid.end());
  EXPECT_EQ(man["results"]["threshold_tuning_split"], "dev");
}

TEST(AttackRun, MspRecordsRemovalPolicy) {
  TempDir dir;
  const auto a = run_attack_experiment(quick(dir / "msp", AttackKind::MSP));
  EXPECT_EQ(read_json(a / "metrics.json").at("msp_removal_policy"), "most_probable");
  // Every MSP prediction holds exactly the configured number of words.
  std::istringstream gen(read_file(a / "generations.jsonl"));
  std::string line;
  while (std::getline(gen, line))
    EXPECT_EQ(word_tokens(nlohmann::json::parse(line).at("prediction").get<std::string>()).size(), 10u);
}

TEST(AttackRun, FailureLeavesPartialMarkerNamingTheStage) {
  TempDir dir;
  auto c = quick(dir / "p");
  c.train.epochs = 1;
  c.metrics.ner_dictionary = (dir / "missing.tsv").string();
  EXPECT_THROW(run_attack_experiment(c), ConfigError);
  const std::string partial = read_file(dir / "p" / "PARTIAL");
  EXPECT_NE(partial.find("stage: evaluate"), std::string::npos) << partial;
  EXPECT_EQ(read_json(dir / "p" / "manifest.json").at("status"), "failed");
  EXPECT_THROW(render_report({dir / "p"}), ReportError);
}

TEST(AuditRun, MissingTriplesFailBeforeAnyWork) {
  TempDir dir;
  auto c = quick(dir / "audit");
  c.audit.triples = (dir / "none.jsonl").string();
  c.audit.checkpoint = (dir / "ckpt").string();
  EXPECT_THROW(run_leakage_audit(c), ConfigError);
  EXPECT_FALSE(std::filesystem::exists(dir / "audit"));
}

TEST(Report, EmptyInputIsAStub) {
  const auto r = render_report({});
  EXPECT_EQ(r.text, "no runs\n");
  EXPECT_TRUE(r.csv.empty());
}

TEST(Report, OneRowPerAttackRun) {
  TempDir dir;
  const auto a = run_attack_experiment(quick(dir / "a"));
  const auto r = render_report({a});
  EXPECT_NE(r.text.find("GEIA"), std::string::npos);
  EXPECT_NE(r.text.find("toy-additive"), std::string::npos);
  std::istringstream csv(r.csv);
  std::string header, row, extra;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_FALSE(std::getline(csv, extra) && !extra.empty());
  EXPECT_EQ(header.rfind("run,attack,victim_id,dataset,precision", 0), 0u);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
}

TEST(Report, AuditGridAndVersionMismatch) {
  TempDir dir;
  // Hand-made audit result with the layout written by the audit run.
  nlohmann::json cell = {{"orig_with", -5.15},  {"orig_without", -4.83}, {"sim_with", -5.61},
                         {"sim_without", -5.44}, {"pd_with", 8.93},        {"pd_without", 12.63},
                         {"t_with", 2.5},        {"p_with", 0.01},         {"t_without", nullptr},
                         {"p_without", "NOT_COMPUTABLE"}, {"n_with", 10},  {"n_without", 10}};
  nlohmann::json audit_j = {{"format", "geia-audit"}, {"version", 1}, {"pooling", "per_sample"},
                            {"rows", {{{"reasoner_id", "glm"}, {"victim_id", "v"}, {"whole_sentence", cell},
                                       {"masked_only", cell}}}}};
  std::filesystem::create_directories(dir / "aud");
  write_json(dir / "aud" / "audit.json", audit_j);
  const auto r = render_report({dir / "aud"});
  EXPECT_NE(r.text.find("glm"), std::string::npos);
  EXPECT_NE(r.text.find("8.93"), std::string::npos);
  EXPECT_NE(r.text.find("whole"), std::string::npos);
  EXPECT_NE(r.text.find("masked"), std::string::npos);

  audit_j["version"] = 2;
  std::filesystem::create_directories(dir / "aud2");
  write_json(dir / "aud2" / "audit.json", audit_j);
  EXPECT_THROW(render_report({dir / "aud", dir / "aud2"}), ReportError);

  std::filesystem::create_directories(dir / "empty");
  EXPECT_THROW(render_report({dir / "empty"}), ReportError);
}

}  // namespace
