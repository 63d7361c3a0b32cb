#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "geia/attacker.hpp"
#include "geia/errors.hpp"
#include "support.hpp"

using namespace geia;
using geia::testing::TempDir;

namespace {

std::shared_ptr<const Tokenizer> words(const std::vector<std::string>& texts) {
  return std::make_shared<WordTokenizer>(WordTokenizer::build(texts));
}

EmbeddingVector random_embedding(int dim, std::uint64_t seed, const std::string& victim = "v") {
  Rng rng(seed);
  EmbeddingVector e{std::vector<double>(static_cast<std::size_t>(dim)), victim};
  for (auto& x : e.values) x = rng.normal();
  return e;
}

AttackerModel small_model(std::shared_ptr<const Tokenizer> tok, int victim_dim, int max_len,
                          ProjectionMode mode = ProjectionMode::Auto, int hidden = 16) {
  DecoderConfig dc;
  dc.layers = 2;
  dc.hidden = hidden;
  dc.heads = 2;
  dc.max_len = max_len;
  dc.vocab_size = tok->vocab_size();
  AttackerModel m(dc, std::move(tok), "v", victim_dim, mode);
  m.init(7);
  return m;
}

TEST(Projection, BypassIsIdentityOnlyForEqualDims) {
  ParamLayout layout;
  ProjectionModule same(16, 16, ProjectionMode::Auto, layout);
  EXPECT_TRUE(same.bypass());
  EXPECT_EQ(layout.size(), 0u);
  const std::vector<double> x{1.5, -2, 3, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3};
  EXPECT_EQ(same.apply({}, x), x);

  ParamLayout l2;
  ProjectionModule forced(16, 16, ProjectionMode::Force, l2);
  EXPECT_FALSE(forced.bypass());
  EXPECT_EQ(l2.size(), 16u * 16u + 16u);

  ParamLayout l3;
  ProjectionModule mismatch(8, 16, ProjectionMode::Auto, l3);
  EXPECT_FALSE(mismatch.bypass());
  std::vector<double> p(l3.size());
  Rng rng(1);
  mismatch.init(p, rng);
  EXPECT_EQ(mismatch.apply(p, std::vector<double>(8, 1.0)).size(), 16u);

  ParamLayout l4;
  EXPECT_THROW(ProjectionModule(8, 16, ProjectionMode::Bypass, l4), ConfigError);
}

TEST(Projection, GradientMatchesFiniteDifferences) {
  ParamLayout layout;
  ProjectionModule proj(5, 7, ProjectionMode::Auto, layout);
  std::vector<double> p(layout.size());
  Rng rng(2);
  proj.init(p, rng);
  const std::vector<double> x{0.5, -1.0, 2.0, 0.1, -0.3};
  const std::vector<double> c{1, -2, 0.5, 3, -1, 0.25, 2};  // L = c . y
  std::vector<double> g(p.size(), 0.0);
  proj.backward(x, c, g);
  auto loss = [&](const std::vector<double>& q) {
    const auto y = proj.apply(q, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
    return s;
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto up = p, down = p;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    EXPECT_NEAR(g[i], (loss(up) - loss(down)) / 2e-6, 1e-6);
  }
}

TEST(AttackerModel, InputLayoutPrefixThenBosThenWords) {
  auto tok = words({"alpha beta gamma"});
  auto m = small_model(tok, 16, 8);
  const auto ids = tok->tokenize("alpha beta gamma").token_ids;
  const auto e = random_embedding(16, 3);
  const auto in = m.make_input(e, ids, true);
  ASSERT_TRUE(in.prefix.has_value());
  EXPECT_EQ(in.prefix->size(), 16u);
  ASSERT_EQ(in.tokens.size(), 4u);
  EXPECT_EQ(in.tokens[0], tok->bos_id());
  // BOS predicts w0; the last word predicts EOS.
  EXPECT_EQ(in.targets, (std::vector<int>{ids[0], ids[1], ids[2], tok->eos_id()}));
  EXPECT_EQ(in.rows(), 5u);

  const auto bare = m.make_input(std::nullopt, ids, false);
  EXPECT_FALSE(bare.prefix.has_value());
  EXPECT_EQ(bare.tokens, in.tokens);
}

TEST(TrainAttacker, Errors) {
  VictimRegistry reg;
  reg.register_toy(VictimFamily::TOY_ADDITIVE, "v", {"x"}, 32, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_attacker(reg, "v", {}, cfg), DataError);
  AttackerSpec spec;
  spec.hidden = 64;
  spec.projection = ProjectionMode::Bypass;
  const std::vector<SentenceRecord> rs{{"1", "a b", Dataset::SYNTHETIC, Split::Train}};
  EXPECT_THROW(train_attacker(reg, "v", rs, cfg, spec), ConfigError);
  cfg.epochs = 0;
  EXPECT_THROW(train_attacker(reg, "v", rs, cfg), ConfigError);
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train_attacker(reg, "v", rs, cfg), ConfigError);
}

TEST(TrainConfig, PaperDefaults) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.epochs, 10);
  EXPECT_EQ(cfg.batch_size, 64);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 3e-4);
  EXPECT_EQ(cfg.max_len, 64);
}

// Every hypothesis the beam can return: up to max_len words followed by EOS,
// or exactly max_len words without EOS.
Hypothesis exhaustive_best(const AttackerModel& m, const EmbeddingVector& e, int max_len) {
  std::vector<int> gen;
  const auto banned = m.tokenizer().non_generable_ids();
  for (int id = 0; id < m.tokenizer().vocab_size(); ++id) {
    if (id == m.tokenizer().eos_id()) continue;
    if (std::find(banned.begin(), banned.end(), id) != banned.end()) continue;
    gen.push_back(id);
  }
  Hypothesis best;
  best.score = -std::numeric_limits<double>::infinity();
  std::vector<int> seq;
  std::function<void()> rec = [&] {
    const bool full = static_cast<int>(seq.size()) == max_len;
    const double s = sequence_log_prob(m, e, seq, !full);
    if (s > best.score) best = {seq, s, !full};
    if (full) return;
    for (int t : gen) {
      seq.push_back(t);
      rec();
      seq.pop_back();
    }
  };
  rec();
  return best;
}

TEST(BeamSearch, WideBeamEqualsExhaustiveArgmax) {
  // 4 special ids + 4 words = vocabulary of 8; max_len 4.
  auto tok = words({"red green blue pink"});
  ASSERT_EQ(tok->vocab_size(), 8);
  const int max_len = 4;
  for (std::uint64_t s = 0; s < 4; ++s) {
    DecoderConfig dc;
    dc.layers = 1;
    dc.hidden = 16;
    dc.heads = 2;
    dc.max_len = max_len;
    dc.vocab_size = 8;
    AttackerModel m(dc, tok, "v", 6);
    m.init(100 + s);
    // Sharpen the random model so the argmax is well separated from noise.
    for (auto& p : m.params()) p *= 3.0;
    const auto e = random_embedding(6, 200 + s);
    const Hypothesis want = exhaustive_best(m, e, max_len);
    const Hypothesis got = beam_search(m, e, 8 * 8 * 8 * 8, max_len);
    EXPECT_EQ(got.tokens, want.tokens) << "seed " << s;
    EXPECT_NEAR(got.score, want.score, 1e-6);
    EXPECT_EQ(got.ended_with_eos, want.ended_with_eos);
  }
}

TEST(BeamSearch, BeamOneIsGreedyAndWiderIsNoWorse) {
  auto tok = words({"one two three four five six seven"});
  auto m = small_model(tok, 12, 10);
  for (auto& p : m.params()) p *= 2.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto e = random_embedding(12, s);
    const auto g = greedy_decode(m, e, 10);
    const auto b1 = beam_search(m, e, 1, 10);
    EXPECT_EQ(b1.tokens, g.tokens);
    EXPECT_EQ(b1.score, g.score);
    const auto b5 = beam_search(m, e, 5, 10);
    EXPECT_GE(b5.score, g.score);
    EXPECT_LE(b5.tokens.size(), 10u);
    EXPECT_EQ(invert(m, e, 5, 10), tok->decode(b5.tokens));
  }
  EXPECT_THROW(beam_search(m, random_embedding(12, 0), 0, 10), ConfigError);
}

TEST(ScoreSequence, LogProbsAlignWithTokens) {
  auto tok = words({"the cat sat on the mat"});
  auto m = small_model(tok, 12, 10);
  const auto e = random_embedding(12, 4);
  const auto with = score_sequence(m, "the cat sat", e);
  const auto without = score_sequence(m, "the cat sat", std::nullopt);
  ASSERT_EQ(with.log_probs.size(), 3u);
  ASSERT_EQ(with.tokens.offsets.size(), 3u);
  for (double x : with.log_probs) EXPECT_LE(x, 0.0);
  for (double x : without.log_probs) EXPECT_LE(x, 0.0);
  EXPECT_EQ(score_sequence(m, "the cat sat", e).log_probs, with.log_probs);
  EXPECT_NE(with.log_probs, without.log_probs);
  // Summed teacher-forced scores equal the sequence score without EOS.
  double sum = 0.0;
  for (double x : with.log_probs) sum += x;
  EXPECT_NEAR(sum, sequence_log_prob(m, e, with.tokens.token_ids, false), 1e-9);
}

// Memorization fixture shared by the overfit checks.
class Overfit : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    registry_ = new VictimRegistry();
    registry_->register_toy(VictimFamily::TOY_ADDITIVE, "v", {"x"}, 32, 11);
    std::vector<SentenceRecord> rs;
    for (int i = 0; i < 8; ++i) rs.push_back({std::to_string(i), kSentence, Dataset::SYNTHETIC, Split::Train});
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-3;
    cfg.max_len = 16;
    cfg.seed = 5;
    AttackerSpec spec;  // 2 layers, hidden 64
    result_ = new TrainResult(train_attacker(*registry_, "v", rs, cfg, spec));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete registry_;
  }
  static constexpr const char* kSentence = "rommel was born in heidenheim near ulm";
  static VictimRegistry* registry_;
  static TrainResult* result_;
};
VictimRegistry* Overfit::registry_ = nullptr;
TrainResult* Overfit::result_ = nullptr;

TEST_F(Overfit, FinalLossIsTiny) {
  EXPECT_EQ(result_->log.steps, 200);
  ASSERT_EQ(result_->log.epoch_loss.size(), 200u);
  EXPECT_LT(result_->log.epoch_loss.back(), 0.05);
  EXPECT_GT(result_->log.epoch_loss.front(), result_->log.epoch_loss.back());
  for (double l : result_->log.epoch_loss) EXPECT_GE(l, 0.0);
}

TEST_F(Overfit, InvertReturnsMemorizedSentence) {
  const auto e = registry_->embed("v", std::vector<std::string>{kSentence})[0];
  EXPECT_EQ(invert(result_->model, e, 5, 16), kSentence);
}

TEST_F(Overfit, PrefixRaisesLikelihood) {
  const auto e = registry_->embed("v", std::vector<std::string>{kSentence})[0];
  EXPECT_GT(score_sequence(result_->model, kSentence, e).mean(),
            score_sequence(result_->model, kSentence, std::nullopt).mean());
}

TEST_F(Overfit, VictimUntouchedByTraining) {
  EXPECT_FALSE(result_->log.victim_checksum_before.empty());
  EXPECT_EQ(result_->log.victim_checksum_before, result_->log.victim_checksum_after);
}

TEST_F(Overfit, CheckpointRoundTrip) {
  TempDir dir;
  save_attacker(result_->model, dir.path());
  const auto back = load_attacker(dir.path());
  ASSERT_EQ(back.params().size(), result_->model.params().size());
  EXPECT_TRUE(std::equal(back.params().begin(), back.params().end(), result_->model.params().begin()));
  EXPECT_EQ(back.victim_id(), "v");
  EXPECT_EQ(back.tokenizer().id(), result_->model.tokenizer().id());
  const auto e = registry_->embed("v", std::vector<std::string>{kSentence})[0];
  EXPECT_EQ(invert(back, e, 5, 16), kSentence);
}

TEST(TrainAttacker, SameSeedSameLossTrace) {
  VictimRegistry reg;
  reg.register_toy(VictimFamily::TOY_ADDITIVE, "v", {"x"}, 16, 3);
  SyntheticSpec spec;
  spec.sentences = 40;
  const auto rs = generate_synthetic(spec);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.max_len = 10;
  AttackerSpec as;
  as.hidden = 16;
  const auto a = train_attacker(reg, "v", rs, cfg, as);
  const auto b = train_attacker(reg, "v", rs, cfg, as);
  EXPECT_EQ(a.log.epoch_loss, b.log.epoch_loss);
  EXPECT_TRUE(std::equal(a.model.params().begin(), a.model.params().end(), b.model.params().begin()));
  cfg.seed = 43;
  const auto c = train_attacker(reg, "v", rs, cfg, as);
  EXPECT_NE(a.log.epoch_loss, c.log.epoch_loss);
}

}  // namespace
