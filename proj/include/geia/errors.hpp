#pragma once

#include <stdexcept>
#include <string>

namespace geia {

// Every failure raised by the toolkit derives from Error and carries a short
// machine-readable code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("CONFIG", what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error("DATA", what) {}
};
struct RegistryError : Error {
  explicit RegistryError(const std::string& what) : Error("REGISTRY", what) {}
};
struct TransportError : Error {
  TransportError(const std::string& what, int retries)
      : Error("TRANSPORT", what + " (after " + std::to_string(retries) + " retries)"),
        retries_(retries) {}
  int retries() const noexcept { return retries_; }

 private:
  int retries_;
};
struct EvaluationError : Error {
  explicit EvaluationError(const std::string& what) : Error("EVALUATION", what) {}
};
struct NerError : Error {
  explicit NerError(const std::string& what) : Error("NER", what) {}
};
struct ReportError : Error {
  explicit ReportError(const std::string& what) : Error("REPORT", what) {}
};
struct SimilarityError : Error {
  explicit SimilarityError(const std::string& what) : Error("UNDEFINED_SIMILARITY", what) {}
};

}  // namespace geia
