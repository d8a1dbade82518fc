#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "matdesign/common.hpp"
#include "matdesign/dataset.hpp"
#include "matdesign/reward.hpp"

namespace matdesign {

// ---------------------------------------------------------------- prompts

enum class PromptKind { Kbr, VarianceRefine, CorrelationRefine };

std::string_view kind_name(PromptKind kind);  // "kbr", "variance-refine", "correlation-refine"
PromptKind kind_from_name(std::string_view name);

/// A binding for a `{name}` marker is missing at render time.
class MissingBinding : public ConfigError {
 public:
  explicit MissingBinding(std::string name)
      : ConfigError("prompt binding missing: " + name), placeholder(std::move(name)) {}
  std::string placeholder;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

/// `{identifier}` markers in order of first appearance. JSON braces in the
/// templates do not match because their contents are not bare identifiers.
std::vector<std::string> placeholders(std::string_view text);

/// Substitutes every marker in one pass; bound values are not rescanned.
std::string render_text(std::string_view text, const Bindings& bindings);

class PromptLibrary {
 public:
  /// Reads kbr.txt, variance_refine.txt and correlation_refine.txt.
  static PromptLibrary load(const std::filesystem::path& dir);
  static PromptLibrary load_default() { return load(default_data_dir() / "templates"); }

  void set(PromptKind kind, std::string text);
  const std::string& text(PromptKind kind) const;
  std::string render(PromptKind kind, const Bindings& bindings) const;

 private:
  std::array<std::string, 3> texts_;
};

// ---------------------------------------------------------------- responses

struct KbrResponse {
  double reward = 0.0;  // clamped to [-1, 1] and rounded to two decimals
  std::string reason;
  bool clamped = false;

  nlohmann::json to_json() const { return {{"reward", reward}, {"reason", reason}}; }
};

struct RefineResponse {
  std::vector<std::string> selected_features;  // 1..3 names, not yet checked against a vocabulary
  std::string reason;

  nlohmann::json to_json() const { return {{"selected_features", selected_features}, {"reason", reason}}; }
};

/// The model reply could not be turned into the expected object.
class LlmParseError : public Error {
 public:
  using Error::Error;
};

/// First balanced `{...}` span in `raw` that parses as a JSON object.
std::optional<nlohmann::json> first_json_object(std::string_view raw);
KbrResponse parse_kbr(std::string_view raw);
RefineResponse parse_refine(std::string_view raw);

// ---------------------------------------------------------------- transport

class LlmError : public Error {
 public:
  using Error::Error;
};

class LlmTimeout : public LlmError {
 public:
  using LlmError::LlmError;
};

class LlmHttpStatus : public LlmError {
 public:
  LlmHttpStatus(int status, const std::string& what) : LlmError(what), status(status) {}
  int status;
};

class LlmRetryExhausted : public LlmError {
 public:
  LlmRetryExhausted(int attempts, const std::string& last)
      : LlmError("LLM request failed after " + std::to_string(attempts) + " attempts: " + last), attempts(attempts) {}
  int attempts;
};

class LlmScriptExhausted : public LlmError {
 public:
  using LlmError::LlmError;
};

struct LlmEndpointConfig {
  std::string url;  // full endpoint URL, e.g. https://host/v1/chat/completions
  std::string model = "gpt-4o";
  double temperature = 0.7;
  double top_p = 0.95;
  int max_tokens = 4096;
  int attempts = 3;
  double backoff_seconds = 1.0;  // first delay; doubles per retry
  double timeout_seconds = 60.0;
  std::string api_key;           // never serialized or logged

  void validate() const;
  /// Upper bound on wall time of one query: attempts * timeout + sum of delays.
  double worst_case_seconds() const;
  /// Non-secret fields only.
  nlohmann::json to_json() const;
  static LlmEndpointConfig from_json(const nlohmann::json& doc);
  /// Fills url, key and model from MATDESIGN_LLM_URL, MATDESIGN_LLM_API_KEY
  /// and MATDESIGN_LLM_MODEL when set.
  void apply_environment();
};

/// Wire request body for one prompt.
nlohmann::json request_body(const LlmEndpointConfig& config, const std::string& prompt);
/// choices[0].message.content, falling back to choices[0].text.
std::string completion_text(const std::string& body);

struct TransportReply {
  enum class Outcome { Ok, Timeout, ConnectionError };
  Outcome outcome = Outcome::Ok;
  int status = 0;
  std::string body;
  std::string error;
};

using Transport = std::function<TransportReply(const LlmEndpointConfig&, const std::string& body)>;
using Sleeper = std::function<void(double seconds)>;

/// HTTP POST through cpp-httplib.
TransportReply http_transport(const LlmEndpointConfig& config, const std::string& body);

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Completion text for one prompt.
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string describe() const = 0;
};

/// Live endpoint client with retries. Timeouts, connection errors, 408, 429
/// and 5xx are retried; other statuses fail at once with LlmHttpStatus.
class HttpLlm : public LlmClient {
 public:
  explicit HttpLlm(LlmEndpointConfig config, Transport transport = http_transport,
                   Sleeper sleeper = nullptr);

  std::string complete(const std::string& prompt) override;
  std::string describe() const override { return "live:" + config_.model; }
  /// Delays slept during the most recent query.
  std::vector<double> last_delays() const;

 private:
  LlmEndpointConfig config_;
  Transport transport_;
  Sleeper sleeper_;
  mutable std::mutex mutex_;
  std::vector<double> last_delays_;
};

/// Deterministic offline responder.
class MockLlm : public LlmClient {
 public:
  struct Rule {
    std::string keyword;
    std::string response;
  };

  static std::unique_ptr<MockLlm> fixed(std::string response);
  /// First rule whose keyword occurs in the prompt wins; else the fallback.
  static std::unique_ptr<MockLlm> keyword_rules(std::vector<Rule> rules, std::string fallback);
  /// Returns the responses in order; one more call throws LlmScriptExhausted.
  static std::unique_ptr<MockLlm> scripted(std::vector<std::string> responses);
  /// {"policy": "fixed"|"keyword"|"scripted", ...}
  static std::unique_ptr<MockLlm> from_json(const nlohmann::json& spec);

  std::string complete(const std::string& prompt) override;
  std::string describe() const override { return "mock:" + policy_; }
  std::vector<std::string> prompts() const;
  std::size_t calls() const;

 private:
  std::string policy_;
  std::vector<Rule> rules_;
  std::string fallback_;
  std::vector<std::string> script_;
  std::size_t cursor_ = 0;
  mutable std::mutex mutex_;
  std::vector<std::string> prompts_;
};

// ---------------------------------------------------------------- KBR scorer

struct KbrContext {
  std::string rule;
  std::size_t similar_count = 3;
  const PromptLibrary* library = nullptr;
  LlmClient* client = nullptr;
  /// Rows offered as similar known BMGs (BMG-labelled dataset rows).
  std::vector<const DatasetRow*> references;
};

/// Text block describing a composition and its predicted properties.
std::string describe_prediction(const Composition& c, const Prediction& p);
/// Text block for measured dataset rows.
std::string describe_rows(const std::vector<const DatasetRow*>& rows);
/// The k rows nearest to `c` in max-norm, ties broken by row order.
std::vector<const DatasetRow*> nearest_rows(const Composition& c, const std::vector<const DatasetRow*>& rows,
                                            std::size_t k);

/// Scorer that renders the KBR prompt, queries the client and parses the
/// reply. Transport or parse failures warn and yield nullopt.
KbrScorer make_kbr_scorer(KbrContext context);

}  // namespace matdesign
