#include <atomic>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "geia/reasoner.hpp"
#include "support.hpp"

using namespace geia;
using geia::testing::TempDir;

namespace {

std::string golden(const std::string& name) {
  std::ifstream in(std::filesystem::path(GEIA_GOLDEN_DIR) / name, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string user_for(const std::string& text) {
  std::string u = golden("prompt_user.txt");
  u.replace(u.find("{prompt}"), 8, text);
  return u;
}

TEST(Prompt, MatchesPublishedGlmPrompt) {
  const auto p = build_prompt(ReasonerFamily::GLM4, "Rommel was born in Heidenheim");
  EXPECT_EQ(p.system, golden("prompt_glm4_system.txt"));
  EXPECT_EQ(p.user, user_for("Rommel was born in Heidenheim"));
}

TEST(Prompt, MatchesPublishedLlamaPrompt) {
  const auto p = build_prompt(ReasonerFamily::LLAMA3, "x");
  EXPECT_EQ(p.system, golden("prompt_llama3_system.txt"));
  EXPECT_EQ(p.user, user_for("x"));
}

TEST(Prompt, FamilyParsing) {
  EXPECT_EQ(parse_reasoner_family("glm-4"), ReasonerFamily::GLM4);
  EXPECT_EQ(parse_reasoner_family("Llama3"), ReasonerFamily::LLAMA3);
  EXPECT_THROW(parse_reasoner_family("gpt"), ConfigError);
}

TEST(Placeholders, PromptExamples) {
  const auto a = find_placeholders("<PERSON> visited the United Nations headquarters in <LOCATION>");
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].label, "PERSON");
  EXPECT_EQ(a[0].span.begin, 0u);
  EXPECT_EQ(a[0].span.end, 8u);
  EXPECT_EQ(a[1].label, "LOCATION");

  // Three placeholders, one more than the count listed for this example.
  const auto b = find_placeholders("<PERSON> is the CEO of <ORGANIZATION>, based in <LOCATION>");
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[1].label, "ORGANIZATION");

  const std::string c = "The CEO of [[ORGANIZATION]], [[PERSON]], met with the President";
  const auto pc = find_placeholders(c);
  ASSERT_EQ(pc.size(), 2u);
  EXPECT_EQ(c.substr(pc[0].span.begin, pc[0].span.end - pc[0].span.begin), "[[ORGANIZATION]]");
  EXPECT_EQ(pc[1].label, "PERSON");

  EXPECT_TRUE(find_placeholders("a <b> c [[x]] <> [[]]").empty());
}

TEST(ParseResponse, StripsLabelsAndKeepsSpans) {
  const auto t = parse_response(
      "Masked version: <PERSON> was born in <LOCATION>[SEP]Alternative version: Patton was born in Ulm",
      "Rommel was born in Heidenheim", "glm");
  EXPECT_EQ(t.masked, "<PERSON> was born in <LOCATION>");
  EXPECT_EQ(t.alternative, "Patton was born in Ulm");
  EXPECT_EQ(t.original, "Rommel was born in Heidenheim");
  EXPECT_EQ(t.reasoner_id, "glm");
  ASSERT_EQ(t.placeholders.size(), 2u);
  EXPECT_EQ(t.placeholders[1].span.begin, 21u);
}

TEST(ParseResponse, Rejections) {
  auto reason = [](std::string_view raw, std::string_view orig) {
    try {
      parse_response(raw, orig);
    } catch (const ResponseRejected& e) {
      return e.reason();
    }
    ADD_FAILURE() << "accepted: " << raw;
    return RejectReason::TRANSPORT;
  };
  EXPECT_EQ(reason("<PERSON> left", "Bob left"), RejectReason::NO_SEPARATOR);
  EXPECT_EQ(reason("Masked version: [SEP]Alternative version: x", "x"), RejectReason::EMPTY_OUTPUT);
  EXPECT_EQ(reason("Bob departed[SEP]Al left", "Bob left"), RejectReason::NO_PLACEHOLDER);
  EXPECT_EQ(reason("<PERSON> left[SEP]<PERSON> left", "Bob left"), RejectReason::PLACEHOLDER_IN_ALTERNATIVE);
}

TEST(ParseResponse, UnchangedTextWithoutEntitiesIsAccepted) {
  const auto t = parse_response("it is raining[SEP]it is raining", "it is raining");
  EXPECT_TRUE(t.placeholders.empty());
}

TEST(Triples, JsonRoundTripAndValidation) {
  TempDir dir;
  const auto t = parse_response("<PERSON> left[SEP]Al left", "Bob left", "r");
  write_triples(dir / "t.jsonl", {t, t});
  const auto back = read_triples(dir / "t.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(to_json(back[1]), to_json(t));
  auto bad = to_json(t);
  bad["placeholders"][0]["end"] = 99;
  EXPECT_THROW(triple_from_json(bad), DataError);
  geia::testing::write_file(dir / "broken.jsonl", "{\"original\":");
  EXPECT_THROW(read_triples(dir / "broken.jsonl"), DataError);
  EXPECT_THROW(read_triples(dir / "missing.jsonl"), ConfigError);
}

// Answers by masking the first word; every tenth record gets a response
// without a separator.
class ScriptedTransport : public ChatTransport {
 public:
  std::string complete(const ChatRequest& req) const override {
    ++calls;
    const auto open = req.user.find('"');
    const std::string text = req.user.substr(open + 1, req.user.size() - open - 2);
    const int n = std::stoi(text.substr(text.rfind(' ') + 1));
    const std::string rest = text.substr(text.find(' '));
    if (n % 10 == 3) return "<PERSON>" + rest;
    return "<PERSON>" + rest + "[SEP]Someone" + rest;
  }
  mutable std::atomic<int> calls{0};
};

std::vector<SentenceRecord> records(int n) {
  std::vector<SentenceRecord> rs;
  for (int i = 0; i < n; ++i)
    rs.push_back({"id" + std::to_string(i), "Name" + std::to_string(i) + " said hello " + std::to_string(i),
                  Dataset::SYNTHETIC, Split::Test});
  return rs;
}

TEST(GenerateTriples, MalformedResponsesAreLoggedExactly) {
  ScriptedTransport transport;
  ReasonerConfig cfg;
  cfg.batch_size = 7;
  cfg.max_in_flight = 3;
  const auto res = generate_triples(records(50), cfg, transport);
  EXPECT_EQ(transport.calls, 50);
  ASSERT_EQ(res.rejections.size(), 5u);
  ASSERT_EQ(res.triples.size(), 45u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(res.rejections[k].index, 10 * k + 3);
    EXPECT_EQ(res.rejections[k].record_id, "id" + std::to_string(10 * k + 3));
    EXPECT_EQ(res.rejections[k].reason, RejectReason::NO_SEPARATOR);
    EXPECT_FALSE(res.rejections[k].raw.empty());
  }
  // Input order preserved for the accepted triples.
  std::size_t j = 0;
  for (int i = 0; i < 50; ++i) {
    if (i % 10 == 3) continue;
    EXPECT_EQ(res.triples[j].record_id, "id" + std::to_string(i));
    EXPECT_EQ(res.triples[j].original, records(50)[static_cast<std::size_t>(i)].text);
    EXPECT_EQ(res.triples[j].reasoner_id, cfg.reasoner_id);
    ++j;
  }
  const auto rj = to_json(res.rejections[0]);
  EXPECT_EQ(rj.at("reason"), "NO_SEPARATOR");
}

TEST(GenerateTriples, RecordThenReplayIsIdentical) {
  TempDir dir;
  auto live = std::make_shared<ScriptedTransport>();
  const RecordingTransport rec(live, dir / "rec.jsonl");
  ReasonerConfig cfg;
  cfg.family = ReasonerFamily::LLAMA3;
  const auto first = generate_triples(records(20), cfg, rec);

  const ReplayTransport replay(dir / "rec.jsonl");
  EXPECT_EQ(replay.size(), 20u);
  const auto second = generate_triples(records(20), cfg, replay);
  ASSERT_EQ(first.triples.size(), second.triples.size());
  for (std::size_t i = 0; i < first.triples.size(); ++i)
    EXPECT_EQ(to_json(first.triples[i]), to_json(second.triples[i]));
  EXPECT_EQ(first.rejections.size(), second.rejections.size());

  // A request that was never recorded fails as a transport error.
  ReasonerConfig other = cfg;
  other.family = ReasonerFamily::GLM4;
  const auto miss = generate_triples(records(1), other, replay);
  ASSERT_EQ(miss.rejections.size(), 1u);
  EXPECT_EQ(miss.rejections[0].reason, RejectReason::TRANSPORT);
}

class FailingTransport : public ChatTransport {
 public:
  std::string complete(const ChatRequest&) const override {
    ++calls;
    throw TransportError("down", 0);
  }
  mutable std::atomic<int> calls{0};
};

TEST(GenerateTriples, TransportFailuresRetryThenReject) {
  FailingTransport t;
  ReasonerConfig cfg;
  cfg.max_retries = 2;
  const auto res = generate_triples(records(1), cfg, t);
  EXPECT_EQ(t.calls, 3);
  ASSERT_EQ(res.rejections.size(), 1u);
  EXPECT_EQ(res.rejections[0].reason, RejectReason::TRANSPORT);
  EXPECT_TRUE(res.triples.empty());
}

TEST(ChatRequest, KeyCoversEveryField) {
  const ChatRequest a{"m", "s", "u", 1, 2500};
  EXPECT_EQ(a.key(), (ChatRequest{"m", "s", "u", 1, 2500}.key()));
  EXPECT_NE(a.key(), (ChatRequest{"m2", "s", "u", 1, 2500}.key()));
  EXPECT_NE(a.key(), (ChatRequest{"m", "s", "u2", 1, 2500}.key()));
  EXPECT_NE(a.key(), (ChatRequest{"m", "s", "u", 2, 2500}.key()));
  // Field boundaries matter.
  EXPECT_NE((ChatRequest{"m", "su", "", 1, 1}.key()), (ChatRequest{"m", "s", "u", 1, 1}.key()));
}

TEST(ReasonerConfig, Validation) {
  ReasonerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(ReasonerConfig{}.top_k, 1);
  EXPECT_EQ(ReasonerConfig{}.max_length, 2500);
  EXPECT_EQ(ReasonerConfig{}.batch_size, 128);
}

}  // namespace
