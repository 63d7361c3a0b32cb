#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geia/corpus.hpp"
#include "geia/errors.hpp"
#include "geia/textops.hpp"

namespace geia {

enum class ReasonerFamily { GLM4, LLAMA3 };

std::string_view to_string(ReasonerFamily f);
ReasonerFamily parse_reasoner_family(std::string_view s);  // ConfigError if unknown

struct Placeholder {
  std::string label;
  CharSpan span;  // byte range of the whole placeholder token in `masked`
};

struct MaskedTriple {
  std::string original;
  std::string masked;
  std::string alternative;
  std::vector<Placeholder> placeholders;
  std::string reasoner_id;
  std::string record_id;  // optional provenance, not part of the file schema
};

nlohmann::json to_json(const MaskedTriple& t);
MaskedTriple triple_from_json(const nlohmann::json& j);
void write_triples(const std::filesystem::path& path, const std::vector<MaskedTriple>& triples);
std::vector<MaskedTriple> read_triples(const std::filesystem::path& path);

// Placeholders `<LABEL>` and `[[LABEL]]` in order of appearance.
std::vector<Placeholder> find_placeholders(std::string_view text);

struct Prompt {
  std::string system;
  std::string user;
};

Prompt build_prompt(ReasonerFamily family, std::string_view original);

enum class RejectReason { NO_SEPARATOR, EMPTY_OUTPUT, NO_PLACEHOLDER, PLACEHOLDER_IN_ALTERNATIVE, TRANSPORT };
std::string_view to_string(RejectReason r);

class ResponseRejected : public Error {
 public:
  ResponseRejected(RejectReason reason, const std::string& what)
      : Error("REJECTED", what), reason_(reason) {}
  RejectReason reason() const { return reason_; }

 private:
  RejectReason reason_;
};

// Splits on the first [SEP], strips the optional "Masked version:" /
// "Alternative version:" labels and validates the triple. Throws
// ResponseRejected.
MaskedTriple parse_response(std::string_view raw, std::string_view original,
                            std::string reasoner_id = "");

// ------------------------------------------------------------ transport

struct ChatRequest {
  std::string model;
  std::string system;
  std::string user;
  int top_k = 1;
  int max_length = 2500;

  std::string key() const;  // content hash used by record/replay
};

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  // Throws TransportError on failure.
  virtual std::string complete(const ChatRequest& request) const = 0;
};

// OpenAI-compatible chat completions endpoint.
class HttpChatTransport final : public ChatTransport {
 public:
  HttpChatTransport(std::string base_url, std::string path = "/v1/chat/completions",
                    int timeout_seconds = 120);
  std::string complete(const ChatRequest& request) const override;

 private:
  std::string base_url_;
  std::string path_;
  int timeout_seconds_;
};

// Serves responses from a recording (JSONL of {"key","model","response"}).
class ReplayTransport final : public ChatTransport {
 public:
  explicit ReplayTransport(const std::filesystem::path& path);
  std::string complete(const ChatRequest& request) const override;
  std::size_t size() const { return responses_.size(); }

 private:
  std::map<std::string, std::string> responses_;
};

// Forwards to `inner` and appends every successful exchange to `path`.
class RecordingTransport final : public ChatTransport {
 public:
  RecordingTransport(std::shared_ptr<const ChatTransport> inner, std::filesystem::path path);
  std::string complete(const ChatRequest& request) const override;

 private:
  std::shared_ptr<const ChatTransport> inner_;
  std::filesystem::path path_;
  mutable std::mutex mu_;
};

// ------------------------------------------------------------ generation

struct ReasonerConfig {
  ReasonerFamily family = ReasonerFamily::GLM4;
  std::string reasoner_id = "glm-4-9b-chat";  // external model id
  int batch_size = 128;
  int top_k = 1;
  int max_length = 2500;
  int max_retries = 2;
  int max_in_flight = 4;

  void validate() const;
};

struct Rejection {
  std::size_t index = 0;
  std::string record_id;
  RejectReason reason = RejectReason::TRANSPORT;
  std::string detail;
  std::string raw;
};

nlohmann::json to_json(const Rejection& r);

struct GenerationResult {
  std::vector<MaskedTriple> triples;  // input order, rejected records omitted
  std::vector<Rejection> rejections;  // input order
};

GenerationResult generate_triples(const std::vector<SentenceRecord>& records,
                                  const ReasonerConfig& cfg, const ChatTransport& transport);

}  // namespace geia
