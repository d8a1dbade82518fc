#include <doctest.h>

#include <random>

#include "matdesign/llm_client.hpp"
#include "test_support.hpp"

using namespace matdesign;

namespace {

Bindings full_kbr_bindings() {
  return {{"rule", "rule text"}, {"similar_real_bmg", "- Zr50Cu50"}, {"data", "composition: Zr60Cu30Al10"}};
}

// Transport that replays a fixed list of replies and counts calls.
struct FakeTransport {
  std::vector<TransportReply> replies;
  std::shared_ptr<int> calls = std::make_shared<int>(0);
  std::shared_ptr<std::string> last_body = std::make_shared<std::string>();

  TransportReply operator()(const LlmEndpointConfig&, const std::string& body) {
    *last_body = body;
    const auto i = static_cast<std::size_t>((*calls)++);
    return replies.at(std::min(i, replies.size() - 1));
  }
};

TransportReply ok(const std::string& text) {
  nlohmann::json body = {{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}};
  return {TransportReply::Outcome::Ok, 200, body.dump(), ""};
}

TransportReply status(int code) { return {TransportReply::Outcome::Ok, code, "{}", ""}; }
TransportReply timeout() { return {TransportReply::Outcome::Timeout, 0, "", "read timeout"}; }

LlmEndpointConfig endpoint() {
  LlmEndpointConfig c;
  c.url = "http://localhost:9/v1/chat/completions";
  c.api_key = "secret-key-value";
  return c;
}

}  // namespace

TEST_CASE("shipped templates carry the expected placeholders") {
  const auto lib = PromptLibrary::load_default();
  CHECK(placeholders(lib.text(PromptKind::Kbr)) == std::vector<std::string>{"rule", "similar_real_bmg", "data"});
  const auto var = placeholders(lib.text(PromptKind::VarianceRefine));
  for (const char* name : {"performance", "pred_var", "composition", "knowledge", "model_status", "candidate_features"})
    CHECK(std::find(var.begin(), var.end(), name) != var.end());
  const auto cor = placeholders(lib.text(PromptKind::CorrelationRefine));
  for (const char* name : {"composition", "person_cor", "knowledge", "model_status", "candidate_features"})
    CHECK(std::find(cor.begin(), cor.end(), name) != cor.end());
}

TEST_CASE("rendering substitutes every marker deterministically") {
  const auto lib = PromptLibrary::load_default();
  const auto text = lib.render(PromptKind::Kbr, full_kbr_bindings());
  CHECK(text.find("Zr60Cu30Al10") != std::string::npos);
  CHECK(placeholders(text).empty());
  CHECK(fnv1a(text) == fnv1a(lib.render(PromptKind::Kbr, full_kbr_bindings())));
  // The JSON example block survives rendering.
  CHECK(text.find("\"reward\"") != std::string::npos);

  auto missing = full_kbr_bindings();
  missing.erase("rule");
  try {
    lib.render(PromptKind::Kbr, missing);
    FAIL("expected MissingBinding");
  } catch (const MissingBinding& e) {
    CHECK(e.placeholder == "rule");
  }
}

TEST_CASE("bound values are not rescanned") {
  CHECK(render_text("a {x} b", {{"x", "{y}"}}) == "a {y} b");
  CHECK(render_text("{x}{x}", {{"x", "1"}}) == "11");
  CHECK(render_text("{ \"k\": 1 } {Upper}", {}) == "{ \"k\": 1 } {Upper}");
}

TEST_CASE("kbr replies parse, clamp and round") {
  auto r = parse_kbr(R"({"reward": 0.75, "reason": "fits the rules"})");
  CHECK(r.reward == 0.75);
  CHECK_FALSE(r.clamped);
  r = parse_kbr(R"({"reward": 1.7, "reason": "x"})");
  CHECK(r.reward == 1.0);
  CHECK(r.clamped);
  r = parse_kbr(R"({"reward": -3, "reason": "x"})");
  CHECK(r.reward == -1.0);
  CHECK(r.clamped);
  CHECK(parse_kbr(R"({"reward": 0.123, "reason": "x"})").reward == 0.12);

  CHECK_THROWS_AS(parse_kbr("no json here"), LlmParseError);
  CHECK_THROWS_AS(parse_kbr(R"({"reward": "high", "reason": "x"})"), LlmParseError);
  CHECK_THROWS_AS(parse_kbr(R"({"score": 0.5, "reason": "x"})"), LlmParseError);
  CHECK_THROWS_AS(parse_kbr(R"({"reward": 0.5, "reason": "x", "extra": 1})"), LlmParseError);
}

TEST_CASE("json embedded in prose is found") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> noise{"Sure! ", "Here is my analysis {not json}. ", "```json\n", "\n```",
                                       "Reasoning: the {composition} looks fine.\n", "", "} stray brace "};
  std::uniform_int_distribution<std::size_t> pick(0, noise.size() - 1);
  for (int k = 0; k < 200; ++k) {
    const double v = std::round((k % 201 - 100) / 100.0 * 100.0) / 100.0;
    nlohmann::json obj = {{"reward", v}, {"reason", "brace } inside \"quoted\" text {"}};
    const std::string wrapped = noise[pick(rng)] + noise[pick(rng)] + obj.dump(k % 2 ? 2 : -1) + noise[pick(rng)];
    const auto parsed = parse_kbr(wrapped);
    CHECK(parsed.reward == doctest::Approx(v).epsilon(1e-12));
    // Re-serialising the parsed object gives the same document.
    CHECK(parsed.to_json() == obj);
  }
}

TEST_CASE("refine replies validate the feature list") {
  const auto r = parse_refine(R"(Answer: {"selected_features": ["atomic_radius.wstd"], "reason": "size"})");
  CHECK(r.selected_features == std::vector<std::string>{"atomic_radius.wstd"});
  CHECK(parse_refine(r.to_json().dump()).to_json() == r.to_json());
  CHECK_THROWS_AS(parse_refine(R"({"selected_features": [], "reason": "x"})"), LlmParseError);
  CHECK_THROWS_AS(parse_refine(R"({"selected_features": ["a","b","c","d"], "reason": "x"})"), LlmParseError);
  CHECK_THROWS_AS(parse_refine(R"({"selected_features": "a", "reason": "x"})"), LlmParseError);
  CHECK_THROWS_AS(parse_refine(R"({"selected_features": [1], "reason": "x"})"), LlmParseError);
}

TEST_CASE("request body follows the wire format") {
  const auto body = request_body(endpoint(), "hello");
  CHECK(body["model"] == "gpt-4o");
  CHECK(body["messages"][0]["role"] == "user");
  CHECK(body["messages"][0]["content"] == "hello");
  CHECK(body["temperature"] == 0.7);
  CHECK(body["top_p"] == 0.95);
  CHECK(body["max_tokens"] == 4096);
  CHECK(body.size() == 5);
  CHECK(endpoint().to_json().dump().find("secret") == std::string::npos);
}

TEST_CASE("query succeeds after transient failures") {
  FakeTransport t{{status(503), timeout(), ok("done")}};
  std::vector<double> slept;
  HttpLlm llm(endpoint(), t, [&](double s) { slept.push_back(s); });
  CHECK(llm.complete("p") == "done");
  CHECK(*t.calls == 3);
  CHECK(slept == std::vector<double>{1.0, 2.0});
  CHECK(llm.last_delays() == slept);
  CHECK(t.last_body->find("secret") == std::string::npos);
}

TEST_CASE("query errors are distinct") {
  std::vector<double> slept;
  auto sleeper = [&](double s) { slept.push_back(s); };
  {
    FakeTransport t{{timeout()}};
    HttpLlm llm(endpoint(), t, sleeper);
    CHECK_THROWS_AS(llm.complete("p"), LlmRetryExhausted);
    CHECK(*t.calls == 3);
  }
  {
    FakeTransport t{{status(401)}};
    HttpLlm llm(endpoint(), t, sleeper);
    try {
      llm.complete("p");
      FAIL("expected LlmHttpStatus");
    } catch (const LlmHttpStatus& e) {
      CHECK(e.status == 401);
    }
    CHECK(*t.calls == 1);
  }
  {
    auto c = endpoint();
    c.attempts = 1;
    FakeTransport t{{timeout()}};
    HttpLlm llm(c, t, sleeper);
    CHECK_THROWS_AS(llm.complete("p"), LlmTimeout);
  }
  {
    FakeTransport t{{TransportReply{TransportReply::Outcome::Ok, 200, "not json", ""}}};
    HttpLlm llm(endpoint(), t, sleeper);
    CHECK_THROWS_AS(llm.complete("p"), LlmError);
  }
}

TEST_CASE("backoff delays grow and the worst case is bounded") {
  auto c = endpoint();
  c.attempts = 5;
  c.timeout_seconds = 2;
  FakeTransport t{{status(500)}};
  std::vector<double> slept;
  HttpLlm llm(c, t, [&](double s) { slept.push_back(s); });
  CHECK_THROWS_AS(llm.complete("p"), LlmRetryExhausted);
  REQUIRE(slept.size() == 4);
  for (std::size_t i = 1; i < slept.size(); ++i) CHECK(slept[i] > slept[i - 1]);
  CHECK(c.worst_case_seconds() == doctest::Approx(5 * 2 + 1 + 2 + 4 + 8));
  c.attempts = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("live client over a real socket reports connection failures") {
  auto c = endpoint();
  c.url = "http://127.0.0.1:1/v1/chat/completions";
  c.timeout_seconds = 1;
  c.backoff_seconds = 0;
  HttpLlm llm(c);
  CHECK_THROWS_AS(llm.complete("p"), LlmRetryExhausted);
  c.url = "";
  CHECK_THROWS_AS(HttpLlm{c}, ConfigError);
}

TEST_CASE("mock policies") {
  auto fixed = MockLlm::fixed(R"({"reward": 0.5, "reason": "ok"})");
  for (int k = 0; k < 3; ++k) CHECK(parse_kbr(fixed->complete("prompt " + std::to_string(k))).reward == 0.5);
  CHECK(fixed->calls() == 3);
  CHECK(fixed->prompts().size() == 3);

  auto rules = MockLlm::keyword_rules({{"Zr", "zr"}, {"Cu", "cu"}}, "other");
  CHECK(rules->complete("Cu50Zr50") == "zr");
  CHECK(rules->complete("Cu50Ni50") == "cu");
  CHECK(rules->complete("Fe") == "other");

  auto script = MockLlm::scripted({"bad", "bad", R"({"selected_features": ["x.max"], "reason": "r"})"});
  CHECK_THROWS_AS(parse_refine(script->complete("a")), LlmParseError);
  CHECK_THROWS_AS(parse_refine(script->complete("a")), LlmParseError);
  CHECK(parse_refine(script->complete("a")).selected_features[0] == "x.max");
  CHECK_THROWS_AS(script->complete("a"), LlmScriptExhausted);
  CHECK(script->calls() == 4);

  auto from_spec = MockLlm::from_json({{"policy", "fixed"}, {"response", {{"reward", 0.2}, {"reason", "j"}}}});
  CHECK(parse_kbr(from_spec->complete("x")).reward == 0.2);
  CHECK_THROWS_AS(MockLlm::from_json({{"policy", "oracle"}}), ConfigError);
}

TEST_CASE("kbr scorer uses the nearest known glasses") {
  const auto& data = testsupport::mini_dataset();
  std::vector<const DatasetRow*> refs;
  for (const auto& r : data.regression)
    if (r.label == ClassLabel::BMG) refs.push_back(&r);
  REQUIRE(refs.size() >= 3);

  const auto near = nearest_rows(refs[0]->composition, refs, 3);
  REQUIRE(near.size() == 3);
  CHECK(near[0] == refs[0]);
  double worst = 0;
  for (const auto* r : near) worst = std::max(worst, (r->composition - refs[0]->composition).cwiseAbs().maxCoeff());
  for (const auto* r : refs)
    if (std::find(near.begin(), near.end(), r) == near.end())
      CHECK((r->composition - refs[0]->composition).cwiseAbs().maxCoeff() >= worst);

  const auto lib = PromptLibrary::load_default();
  auto mock = MockLlm::fixed(R"(Verdict: {"reward": 0.4, "reason": "plausible"})");
  KbrContext ctx;
  ctx.rule = "keep it glassy";
  ctx.library = &lib;
  ctx.client = mock.get();
  ctx.references = refs;
  const auto scorer = make_kbr_scorer(ctx);
  Prediction p;
  p.cls_prob = 0.9;
  CHECK(scorer(refs[0]->composition, p) == 0.4);
  REQUIRE(mock->calls() == 1);
  CHECK(mock->prompts()[0].find(formula(refs[0]->composition)) != std::string::npos);
  CHECK(mock->prompts()[0].find("keep it glassy") != std::string::npos);

  testsupport::WarningCapture warnings;
  auto broken = MockLlm::fixed("I refuse");
  ctx.client = broken.get();
  CHECK_FALSE(make_kbr_scorer(ctx)(refs[0]->composition, p).has_value());
  CHECK(warnings.messages.size() == 1);
}
