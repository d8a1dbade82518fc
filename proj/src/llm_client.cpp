#include "matdesign/llm_client.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "text_util.hpp"

namespace matdesign {

// ---------------------------------------------------------------- prompts

std::string_view kind_name(PromptKind kind) {
  switch (kind) {
    case PromptKind::Kbr: return "kbr";
    case PromptKind::VarianceRefine: return "variance-refine";
    case PromptKind::CorrelationRefine: return "correlation-refine";
  }
  return "?";
}

PromptKind kind_from_name(std::string_view name) {
  for (auto k : {PromptKind::Kbr, PromptKind::VarianceRefine, PromptKind::CorrelationRefine})
    if (kind_name(k) == name) return k;
  throw ConfigError("unknown prompt kind: " + std::string(name));
}

namespace {

bool identifier_char(char c) { return std::islower(static_cast<unsigned char>(c)) || c == '_'; }

// Length of the marker starting at text[i] ("{name}"), or 0.
std::size_t marker_at(std::string_view text, std::size_t i) {
  if (text[i] != '{') return 0;
  std::size_t j = i + 1;
  while (j < text.size() && identifier_char(text[j])) ++j;
  if (j == i + 1 || j >= text.size() || text[j] != '}') return 0;
  return j - i + 1;
}

std::string format_double(double v, int digits) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

const char* file_for(PromptKind kind) {
  switch (kind) {
    case PromptKind::Kbr: return "kbr.txt";
    case PromptKind::VarianceRefine: return "variance_refine.txt";
    case PromptKind::CorrelationRefine: return "correlation_refine.txt";
  }
  return "";
}

}  // namespace

std::vector<std::string> placeholders(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (const auto n = marker_at(text, i)) {
      std::string name(text.substr(i + 1, n - 2));
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
      i += n - 1;
    }
  }
  return out;
}

std::string render_text(std::string_view text, const Bindings& bindings) {
  for (const auto& name : placeholders(text))
    if (!bindings.contains(name)) throw MissingBinding(name);
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (const auto n = marker_at(text, i)) {
      out += bindings.find(text.substr(i + 1, n - 2))->second;
      i += n - 1;
    } else {
      out += text[i];
    }
  }
  return out;
}

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
  PromptLibrary lib;
  for (auto k : {PromptKind::Kbr, PromptKind::VarianceRefine, PromptKind::CorrelationRefine})
    lib.set(k, detail::read_file(dir / file_for(k)));
  return lib;
}

void PromptLibrary::set(PromptKind kind, std::string text) { texts_[static_cast<std::size_t>(kind)] = std::move(text); }

const std::string& PromptLibrary::text(PromptKind kind) const {
  const auto& t = texts_[static_cast<std::size_t>(kind)];
  if (t.empty()) throw ConfigError("no template loaded for " + std::string(kind_name(kind)));
  return t;
}

std::string PromptLibrary::render(PromptKind kind, const Bindings& bindings) const {
  return render_text(text(kind), bindings);
}

// ---------------------------------------------------------------- responses

std::optional<nlohmann::json> first_json_object(std::string_view raw) {
  for (std::size_t start = raw.find('{'); start != std::string_view::npos; start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
      const char c = raw[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        auto doc = nlohmann::json::parse(raw.substr(start, i - start + 1), nullptr, false);
        if (!doc.is_discarded() && doc.is_object()) return doc;
        break;
      }
    }
  }
  return std::nullopt;
}

namespace {

nlohmann::json expect_object(std::string_view raw, std::initializer_list<const char*> keys) {
  auto doc = first_json_object(raw);
  if (!doc) throw LlmParseError("no JSON object in reply");
  if (doc->size() != keys.size()) throw LlmParseError("reply has unexpected keys: " + doc->dump());
  for (const char* k : keys)
    if (!doc->contains(k)) throw LlmParseError(std::string("reply lacks key \"") + k + "\"");
  return *doc;
}

}  // namespace

KbrResponse parse_kbr(std::string_view raw) {
  const auto doc = expect_object(raw, {"reward", "reason"});
  if (!doc["reward"].is_number()) throw LlmParseError("reward is not a number");
  if (!doc["reason"].is_string()) throw LlmParseError("reason is not a string");
  KbrResponse r;
  const double v = doc["reward"].get<double>();
  if (!std::isfinite(v)) throw LlmParseError("reward is not finite");
  r.clamped = v < -1.0 || v > 1.0;
  r.reward = std::round(std::clamp(v, -1.0, 1.0) * 100.0) / 100.0;
  r.reason = doc["reason"].get<std::string>();
  return r;
}

RefineResponse parse_refine(std::string_view raw) {
  const auto doc = expect_object(raw, {"selected_features", "reason"});
  const auto& list = doc["selected_features"];
  if (!list.is_array()) throw LlmParseError("selected_features is not a list");
  if (list.empty() || list.size() > 3) throw LlmParseError("selected_features must hold 1 to 3 names");
  RefineResponse r;
  for (const auto& item : list) {
    if (!item.is_string()) throw LlmParseError("selected_features entries must be strings");
    r.selected_features.push_back(item.get<std::string>());
  }
  if (!doc["reason"].is_string()) throw LlmParseError("reason is not a string");
  r.reason = doc["reason"].get<std::string>();
  return r;
}

// ---------------------------------------------------------------- endpoint

void LlmEndpointConfig::validate() const {
  if (attempts < 1) throw ConfigError("llm.attempts must be >= 1");
  if (!(backoff_seconds >= 0.0)) throw ConfigError("llm.backoff_seconds must be >= 0");
  if (!(timeout_seconds > 0.0)) throw ConfigError("llm.timeout_seconds must be > 0");
  if (max_tokens < 1) throw ConfigError("llm.max_tokens must be >= 1");
  if (!(temperature >= 0.0)) throw ConfigError("llm.temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("llm.top_p must be in (0, 1]");
}

double LlmEndpointConfig::worst_case_seconds() const {
  double total = attempts * timeout_seconds;
  for (int k = 0; k + 1 < attempts; ++k) total += backoff_seconds * std::pow(2.0, k);
  return total;
}

nlohmann::json LlmEndpointConfig::to_json() const {
  return {{"url", url},
          {"model", model},
          {"temperature", temperature},
          {"top_p", top_p},
          {"max_tokens", max_tokens},
          {"attempts", attempts},
          {"backoff_seconds", backoff_seconds},
          {"timeout_seconds", timeout_seconds}};
}

LlmEndpointConfig LlmEndpointConfig::from_json(const nlohmann::json& doc) {
  LlmEndpointConfig c;
  c.url = doc.value("url", c.url);
  c.model = doc.value("model", c.model);
  c.temperature = doc.value("temperature", c.temperature);
  c.top_p = doc.value("top_p", c.top_p);
  c.max_tokens = doc.value("max_tokens", c.max_tokens);
  c.attempts = doc.value("attempts", c.attempts);
  c.backoff_seconds = doc.value("backoff_seconds", c.backoff_seconds);
  c.timeout_seconds = doc.value("timeout_seconds", c.timeout_seconds);
  c.validate();
  return c;
}

void LlmEndpointConfig::apply_environment() {
  if (const char* v = std::getenv("MATDESIGN_LLM_URL"); v && *v) url = v;
  if (const char* v = std::getenv("MATDESIGN_LLM_API_KEY"); v && *v) api_key = v;
  if (const char* v = std::getenv("MATDESIGN_LLM_MODEL"); v && *v) model = v;
}

nlohmann::json request_body(const LlmEndpointConfig& config, const std::string& prompt) {
  return {{"model", config.model},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
          {"temperature", config.temperature},
          {"top_p", config.top_p},
          {"max_tokens", config.max_tokens}};
}

std::string completion_text(const std::string& body) {
  const auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw LlmError("endpoint reply is not JSON");
  const auto choices = doc.find("choices");
  if (choices == doc.end() || !choices->is_array() || choices->empty()) throw LlmError("endpoint reply has no choices");
  const auto& first = (*choices)[0];
  if (first.contains("message") && first["message"].contains("content") && first["message"]["content"].is_string())
    return first["message"]["content"].get<std::string>();
  if (first.contains("text") && first["text"].is_string()) return first["text"].get<std::string>();
  throw LlmError("endpoint reply has no completion text");
}

TransportReply http_transport(const LlmEndpointConfig& config, const std::string& body) {
  TransportReply reply;
  const auto scheme_end = config.url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("llm.url needs a scheme (http:// or https://)");
  const auto path_start = config.url.find('/', scheme_end + 3);
  const std::string origin = config.url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : config.url.substr(path_start);

  httplib::Client client(origin);
  const auto secs = static_cast<time_t>(config.timeout_seconds);
  const auto usecs = static_cast<time_t>((config.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config.api_key.empty()) headers.emplace("Authorization", "Bearer " + config.api_key);

  auto res = client.Post(path, headers, body, "application/json");
  if (!res) {
    const auto err = res.error();
    reply.outcome = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
                        ? TransportReply::Outcome::Timeout
                        : TransportReply::Outcome::ConnectionError;
    reply.error = httplib::to_string(err);
    return reply;
  }
  reply.status = res->status;
  reply.body = res->body;
  return reply;
}

HttpLlm::HttpLlm(LlmEndpointConfig config, Transport transport, Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  config_.validate();
  if (config_.url.empty()) throw ConfigError("live LLM mode needs an endpoint URL (MATDESIGN_LLM_URL)");
  if (!sleeper_) sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
}

std::string HttpLlm::complete(const std::string& prompt) {
  const std::string body = request_body(config_, prompt).dump();
  std::vector<double> delays;
  std::string last;
  for (int attempt = 1; attempt <= config_.attempts; ++attempt) {
    if (attempt > 1) {
      const double d = config_.backoff_seconds * std::pow(2.0, attempt - 2);
      delays.push_back(d);
      sleeper_(d);
    }
    const auto reply = transport_(config_, body);
    bool retryable = true;
    std::string failure;
    if (reply.outcome == TransportReply::Outcome::Timeout) {
      failure = "timeout: " + reply.error;
      if (config_.attempts == 1) {
        std::lock_guard lock(mutex_);
        last_delays_ = delays;
        throw LlmTimeout("LLM request timed out: " + reply.error);
      }
    } else if (reply.outcome == TransportReply::Outcome::ConnectionError) {
      failure = "connection: " + reply.error;
    } else if (reply.status >= 200 && reply.status < 300) {
      {
        std::lock_guard lock(mutex_);
        last_delays_ = delays;
      }
      return completion_text(reply.body);
    } else {
      failure = "HTTP status " + std::to_string(reply.status);
      retryable = reply.status == 408 || reply.status == 429 || reply.status >= 500;
      if (!retryable || config_.attempts == 1) {
        std::lock_guard lock(mutex_);
        last_delays_ = delays;
        throw LlmHttpStatus(reply.status, "LLM endpoint returned " + failure);
      }
    }
    last = failure;
  }
  {
    std::lock_guard lock(mutex_);
    last_delays_ = delays;
  }
  throw LlmRetryExhausted(config_.attempts, last);
}

std::vector<double> HttpLlm::last_delays() const {
  std::lock_guard lock(mutex_);
  return last_delays_;
}

// ---------------------------------------------------------------- mock

std::unique_ptr<MockLlm> MockLlm::fixed(std::string response) {
  auto m = std::unique_ptr<MockLlm>(new MockLlm());
  m->policy_ = "fixed";
  m->fallback_ = std::move(response);
  return m;
}

std::unique_ptr<MockLlm> MockLlm::keyword_rules(std::vector<Rule> rules, std::string fallback) {
  auto m = std::unique_ptr<MockLlm>(new MockLlm());
  m->policy_ = "keyword";
  m->rules_ = std::move(rules);
  m->fallback_ = std::move(fallback);
  return m;
}

std::unique_ptr<MockLlm> MockLlm::scripted(std::vector<std::string> responses) {
  auto m = std::unique_ptr<MockLlm>(new MockLlm());
  m->policy_ = "scripted";
  m->script_ = std::move(responses);
  return m;
}

std::unique_ptr<MockLlm> MockLlm::from_json(const nlohmann::json& spec) {
  const auto policy = spec.value("policy", std::string("fixed"));
  auto as_text = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  if (policy == "fixed") {
    if (!spec.contains("response")) throw ConfigError("fixed mock LLM needs \"response\"");
    return fixed(as_text(spec["response"]));
  }
  if (policy == "keyword") {
    std::vector<Rule> rules;
    for (const auto& r : spec.value("rules", nlohmann::json::array()))
      rules.push_back({r.at("keyword").get<std::string>(), as_text(r.at("response"))});
    return keyword_rules(std::move(rules), as_text(spec.value("fallback", nlohmann::json(""))));
  }
  if (policy == "scripted") {
    std::vector<std::string> script;
    for (const auto& r : spec.value("responses", nlohmann::json::array())) script.push_back(as_text(r));
    return scripted(std::move(script));
  }
  throw ConfigError("unknown mock LLM policy: " + policy);
}

std::string MockLlm::complete(const std::string& prompt) {
  std::lock_guard lock(mutex_);
  prompts_.push_back(prompt);
  if (policy_ == "scripted") {
    if (cursor_ >= script_.size()) throw LlmScriptExhausted("mock LLM script exhausted");
    return script_[cursor_++];
  }
  for (const auto& r : rules_)
    if (prompt.find(r.keyword) != std::string::npos) return r.response;
  return fallback_;
}

std::vector<std::string> MockLlm::prompts() const {
  std::lock_guard lock(mutex_);
  return prompts_;
}

std::size_t MockLlm::calls() const {
  std::lock_guard lock(mutex_);
  return prompts_.size();
}

// ---------------------------------------------------------------- KBR

std::string describe_prediction(const Composition& c, const Prediction& p) {
  std::ostringstream os;
  os << "composition: " << formula(c) << "\n";
  os << "predicted BMG probability: " << format_double(p.cls_prob, 3) << "\n";
  for (int i = 0; i < kPropertyCount; ++i)
    os << "predicted " << kPropertyNames[i] << " (" << kPropertyUnits[i] << "): " << format_double(p.props[i], 3)
       << "\n";
  return os.str();
}

std::string describe_rows(const std::vector<const DatasetRow*>& rows) {
  if (rows.empty()) return "(none available)\n";
  std::ostringstream os;
  for (const auto* r : rows) {
    os << "- " << formula(r->composition);
    for (int i = 0; i < kPropertyCount; ++i)
      if (r->properties[i]) os << ", " << kPropertyNames[i] << "=" << format_double(*r->properties[i], 3);
    os << "\n";
  }
  return os.str();
}

std::vector<const DatasetRow*> nearest_rows(const Composition& c, const std::vector<const DatasetRow*>& rows,
                                            std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) d.emplace_back((rows[i]->composition - c).cwiseAbs().maxCoeff(), i);
  std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<const DatasetRow*> out;
  for (std::size_t i = 0; i < std::min(k, d.size()); ++i) out.push_back(rows[d[i].second]);
  return out;
}

KbrScorer make_kbr_scorer(KbrContext context) {
  if (!context.library || !context.client) throw ConfigError("KBR scorer needs a prompt library and an LLM client");
  return [ctx = std::move(context)](const Composition& next, const Prediction& pred) -> std::optional<double> {
    Bindings b{{"rule", ctx.rule},
               {"similar_real_bmg", describe_rows(nearest_rows(next, ctx.references, ctx.similar_count))},
               {"data", describe_prediction(next, pred)}};
    const auto prompt = ctx.library->render(PromptKind::Kbr, b);
    try {
      return parse_kbr(ctx.client->complete(prompt)).reward;
    } catch (const LlmError& e) {
      warn(std::string("KBR query failed: ") + e.what());
    } catch (const LlmParseError& e) {
      warn(std::string("KBR reply unusable: ") + e.what());
    }
    return std::nullopt;
  };
}

}  // namespace matdesign
