#include "geia/reasoner.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <regex>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "geia/hashing.hpp"

namespace geia {

using nlohmann::json;

namespace {

// The few-shot body shared by both reasoner families.
constexpr std::string_view kTaskHeader =
    "You are part of a team of bots with two tasks:\n"
    "1. Obfuscating sensitive information in text while preserving its overall structure and "
    "meaning\n"
    "2. Creating alternative versions by replacing sensitive information with similar but "
    "different entities\n"
    "\n"
    "For each input text, you should provide TWO outputs separated by [SEP]:\n"
    "- First output: Masked version using placeholders (e.g., <NAME>, <LOCATION>)\n"
    "- Second output: Alternative version replacing sensitive entities with different but "
    "contextually similar entities\n"
    "\n"
    "Rules for masking:\n"
    "1. Replace sensitive entities (names, locations, organizations) with appropriate "
    "placeholders\n"
    "2. Use format like <NAME>, <LOCATION>, <YEAR>, <ENTITY>\n"
    "3. Maintain grammatical correctness and original meaning\n"
    "4. Use consistent placeholders for identical entities\n"
    "5. If no sensitive entities exist, output unchanged text\n"
    "\n"
    "Rules for alternative version:\n"
    "1. Replace sensitive entities with different but plausible alternatives\n"
    "2. Maintain the same grammatical structure and coherence\n"
    "3. Ensure replacements are of the same category (e.g., replace person with person, city "
    "with city)\n"
    "4. The alternative should be semantically valid but change the meaning\n"
    "\n"
    "Example 1:\n"
    "Input: Barack Obama visited the United Nations headquarters in New York\n"
    "Masked version: <PERSON> visited the United Nations headquarters in <LOCATION>[SEP]"
    "Alternative version: Lebron James visited the United Nations headquarters in Los Angeles\n"
    "\n"
    "Example 2:\n"
    "Input: Elon Musk is the CEO of SpaceX, based in Hawthorne, California\n"
    "Masked version: <PERSON> is the CEO of <ORGANIZATION>, based in <LOCATION>[SEP]"
    "Alternative version: Sam Altman is the CEO of OpenAI, based in San Francisco\n"
    "\n"
    "Example 3:\n"
    "Input: The CEO of Tesla, Elon Musk, met with the President of the United States\n"
    "Masked version: The CEO of [[ORGANIZATION]], [[PERSON]], met with the President of the "
    "United States[SEP]Alternative version: The CEO of Meta, Mark Zuckerberg, met with the "
    "Prime Minister of the United Kingdom";

constexpr std::string_view kGlmTail =
    "\n"
    "\n"
    "Please respond with: Masked version[SEP]Alternative version.";

constexpr std::string_view kUserTemplate =
    "Please provide both masked and alternative versions for the following text: \"";

constexpr std::string_view kSeparator = "[SEP]";

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::string_view strip_label(std::string_view s, std::string_view label) {
  s = trim(s);
  if (s.size() >= label.size() && to_lower(s.substr(0, label.size())) == to_lower(label))
    s = trim(s.substr(label.size()));
  return s;
}

}  // namespace

std::string_view to_string(ReasonerFamily f) {
  return f == ReasonerFamily::GLM4 ? "GLM4" : "LLAMA3";
}

ReasonerFamily parse_reasoner_family(std::string_view s) {
  const std::string l = to_lower(s);
  if (l == "glm4" || l == "glm-4") return ReasonerFamily::GLM4;
  if (l == "llama3" || l == "llama-3") return ReasonerFamily::LLAMA3;
  throw ConfigError("unsupported reasoner family '" + std::string(s) + "'");
}

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::NO_SEPARATOR: return "NO_SEPARATOR";
    case RejectReason::EMPTY_OUTPUT: return "EMPTY_OUTPUT";
    case RejectReason::NO_PLACEHOLDER: return "NO_PLACEHOLDER";
    case RejectReason::PLACEHOLDER_IN_ALTERNATIVE: return "PLACEHOLDER_IN_ALTERNATIVE";
    case RejectReason::TRANSPORT: return "TRANSPORT";
  }
  return "TRANSPORT";
}

Prompt build_prompt(ReasonerFamily family, std::string_view original) {
  Prompt p;
  p.system = std::string(kTaskHeader);
  if (family == ReasonerFamily::GLM4) {
    p.system += kGlmTail;
  } else {
    p.system += '.';
  }
  p.user = std::string(kUserTemplate);
  p.user += original;
  p.user += '"';
  return p;
}

std::vector<Placeholder> find_placeholders(std::string_view text) {
  static const std::regex re(R"(<([A-Z_]+)>|\[\[([A-Z_]+)\]\])");
  std::vector<Placeholder> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    Placeholder p;
    p.label = m[1].matched ? m[1].str() : m[2].str();
    p.span.begin = static_cast<std::size_t>(m.position(0));
    p.span.end = p.span.begin + static_cast<std::size_t>(m.length(0));
    out.push_back(std::move(p));
  }
  return out;
}

MaskedTriple parse_response(std::string_view raw, std::string_view original,
                            std::string reasoner_id) {
  const auto sep = raw.find(kSeparator);
  if (sep == std::string_view::npos)
    throw ResponseRejected(RejectReason::NO_SEPARATOR, "response has no [SEP]");
  const std::string_view masked = strip_label(raw.substr(0, sep), "Masked version:");
  const std::string_view alt = strip_label(raw.substr(sep + kSeparator.size()), "Alternative version:");
  if (masked.empty() || alt.empty())
    throw ResponseRejected(RejectReason::EMPTY_OUTPUT, "masked or alternative output is empty");

  MaskedTriple t;
  t.original = std::string(original);
  t.masked = std::string(masked);
  t.alternative = std::string(alt);
  t.reasoner_id = std::move(reasoner_id);
  t.placeholders = find_placeholders(t.masked);
  if (t.placeholders.empty() && t.masked != t.original)
    throw ResponseRejected(RejectReason::NO_PLACEHOLDER,
                           "masked text differs from the original but has no placeholder");
  if (!find_placeholders(t.alternative).empty())
    throw ResponseRejected(RejectReason::PLACEHOLDER_IN_ALTERNATIVE,
                           "alternative text still contains a placeholder");
  return t;
}

// ------------------------------------------------------------------ JSON

json to_json(const MaskedTriple& t) {
  json ph = json::array();
  for (const auto& p : t.placeholders)
    ph.push_back({{"label", p.label}, {"start", p.span.begin}, {"end", p.span.end}});
  return {{"original", t.original},       {"masked", t.masked},
          {"alternative", t.alternative}, {"placeholders", ph},
          {"reasoner_id", t.reasoner_id}};
}

MaskedTriple triple_from_json(const json& j) {
  MaskedTriple t;
  t.original = j.at("original").get<std::string>();
  t.masked = j.at("masked").get<std::string>();
  t.alternative = j.at("alternative").get<std::string>();
  t.reasoner_id = j.value("reasoner_id", "");
  for (const auto& p : j.at("placeholders")) {
    Placeholder ph;
    ph.label = p.at("label").get<std::string>();
    ph.span.begin = p.at("start").get<std::size_t>();
    ph.span.end = p.at("end").get<std::size_t>();
    if (ph.span.end < ph.span.begin || ph.span.end > t.masked.size())
      throw DataError("placeholder span outside the masked text");
    t.placeholders.push_back(std::move(ph));
  }
  for (std::size_t i = 1; i < t.placeholders.size(); ++i) {
    if (t.placeholders[i].span.begin < t.placeholders[i - 1].span.end)
      throw DataError("placeholder spans overlap or are out of order");
  }
  return t;
}

void write_triples(const std::filesystem::path& path, const std::vector<MaskedTriple>& triples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : triples) out << to_json(t).dump() << '\n';
}

std::vector<MaskedTriple> read_triples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open triples file " + path.string());
  std::vector<MaskedTriple> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(triple_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

json to_json(const Rejection& r) {
  return {{"index", r.index},
          {"record_id", r.record_id},
          {"reason", std::string(to_string(r.reason))},
          {"detail", r.detail},
          {"raw", r.raw}};
}

// ------------------------------------------------------------- transport

std::string ChatRequest::key() const {
  std::string blob = model;
  for (const auto* part : {&system, &user}) {
    blob.push_back('\x1f');
    blob += *part;
  }
  blob += '\x1f' + std::to_string(top_k) + '\x1f' + std::to_string(max_length);
  return sha256_hex(blob);
}

HttpChatTransport::HttpChatTransport(std::string base_url, std::string path, int timeout_seconds)
    : base_url_(std::move(base_url)), path_(std::move(path)), timeout_seconds_(timeout_seconds) {}

std::string HttpChatTransport::complete(const ChatRequest& request) const {
  httplib::Client client(base_url_);
  client.set_read_timeout(timeout_seconds_, 0);
  client.set_connection_timeout(timeout_seconds_, 0);
  json body{{"model", request.model},
            {"messages",
             {{{"role", "system"}, {"content", request.system}},
              {{"role", "user"}, {"content", request.user}}}},
            {"top_k", request.top_k},
            {"temperature", 0},
            {"max_tokens", request.max_length}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res)
    throw TransportError("chat request to " + base_url_ + " failed: " +
                             httplib::to_string(res.error()), 0);
  if (res->status != 200)
    throw TransportError("chat endpoint returned HTTP " + std::to_string(res->status), 0);
  try {
    return json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed chat response: ") + e.what(), 0);
  }
}

ReplayTransport::ReplayTransport(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open recording " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const json j = json::parse(line);
    responses_[j.at("key").get<std::string>()] = j.at("response").get<std::string>();
  }
}

std::string ReplayTransport::complete(const ChatRequest& request) const {
  auto it = responses_.find(request.key());
  if (it == responses_.end()) throw TransportError("no recorded response for request", 0);
  return it->second;
}

RecordingTransport::RecordingTransport(std::shared_ptr<const ChatTransport> inner,
                                       std::filesystem::path path)
    : inner_(std::move(inner)), path_(std::move(path)) {}

std::string RecordingTransport::complete(const ChatRequest& request) const {
  std::string response = inner_->complete(request);
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("cannot append to recording " + path_.string());
  out << json{{"key", request.key()}, {"model", request.model}, {"response", response}}.dump()
      << '\n';
  return response;
}

// ------------------------------------------------------------ generation

void ReasonerConfig::validate() const {
  if (batch_size < 1) throw ConfigError("reasoner batch_size must be >= 1");
  if (top_k < 1) throw ConfigError("reasoner top_k must be >= 1");
  if (max_length < 1) throw ConfigError("reasoner max_length must be >= 1");
  if (max_retries < 0) throw ConfigError("reasoner max_retries must be >= 0");
  if (max_in_flight < 1) throw ConfigError("reasoner max_in_flight must be >= 1");
  if (reasoner_id.empty()) throw ConfigError("reasoner_id is empty");
}

namespace {

struct Exchange {
  std::optional<std::string> response;
  std::string error;
};

Exchange ask(const ChatTransport& transport, const ChatRequest& req, int max_retries) {
  Exchange ex;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    try {
      ex.response = transport.complete(req);
      return ex;
    } catch (const TransportError& e) {
      ex.error = e.what();
      spdlog::warn("reasoner transport attempt {} failed: {}", attempt + 1, e.what());
    }
  }
  ex.error += " (gave up after " + std::to_string(max_retries) + " retries)";
  return ex;
}

}  // namespace

GenerationResult generate_triples(const std::vector<SentenceRecord>& records,
                                  const ReasonerConfig& cfg, const ChatTransport& transport) {
  cfg.validate();
  GenerationResult out;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto window = static_cast<std::size_t>(cfg.max_in_flight);
  for (std::size_t start = 0; start < records.size(); start += bs) {
    const std::size_t end = std::min(records.size(), start + bs);
    std::vector<Exchange> exchanges(end - start);
    for (std::size_t w = start; w < end; w += window) {
      std::vector<std::future<Exchange>> inflight;
      for (std::size_t i = w; i < std::min(end, w + window); ++i) {
        const Prompt p = build_prompt(cfg.family, records[i].text);
        ChatRequest req{cfg.reasoner_id, p.system, p.user, cfg.top_k, cfg.max_length};
        inflight.push_back(std::async(std::launch::async, [&transport, req, &cfg] {
          return ask(transport, req, cfg.max_retries);
        }));
      }
      for (std::size_t k = 0; k < inflight.size(); ++k) exchanges[w - start + k] = inflight[k].get();
    }
    for (std::size_t i = start; i < end; ++i) {
      Exchange& ex = exchanges[i - start];
      const SentenceRecord& rec = records[i];
      if (!ex.response) {
        out.rejections.push_back({i, rec.id, RejectReason::TRANSPORT, ex.error, ""});
        continue;
      }
      try {
        MaskedTriple t = parse_response(*ex.response, rec.text, cfg.reasoner_id);
        t.record_id = rec.id;
        out.triples.push_back(std::move(t));
      } catch (const ResponseRejected& e) {
        out.rejections.push_back({i, rec.id, e.reason(), e.what(), *ex.response});
      }
    }
    spdlog::info("reasoner: {} of {} records processed, {} rejected", end, records.size(),
                 out.rejections.size());
  }
  return out;
}

}  // namespace geia
