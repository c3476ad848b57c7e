#include <doctest.h>

#include <cstdlib>

#include "claw/backend.hpp"
#include "stub_server.hpp"
#include "support.hpp"

using namespace claw;
using claw::testing::StubServer;

namespace {

CompletionRequest request_for(const std::string& case_id, Stage stage, const std::string& instance, int attempt = 0) {
  return CompletionRequest{{{Role::System, "You are a radiologist."}, {Role::User, "Describe the image."}},
                           GenerationParams{},
                           RequestTag{case_id, stage, instance, attempt},
                           std::string("images/x.png")};
}

std::string fixture_body() { return claw::testing::read_text(std::string(CLAW_TEST_DATA_DIR) + "/chat_completion_200.json"); }

HttpBackendOptions options_for(const StubServer& server, std::vector<std::chrono::milliseconds>* sleeps) {
  HttpBackendOptions o;
  o.base_url = server.url();
  o.model = "vlm-radiology";
  o.api_key_env = "CLAW_TEST_KEY_UNSET";
  o.timeout = std::chrono::seconds(5);
  o.sleep = [sleeps](std::chrono::milliseconds d) { sleeps->push_back(d); };
  return o;
}

}  // namespace

TEST_CASE("generation defaults follow the decoding setup") {
  GenerationParams p;
  CHECK(p.max_tokens == 512);
  CHECK(p.n_best == 3);
  CHECK(p.temperature == 0.0);
  CHECK_NOTHROW(p.validate());
  CHECK_THROWS_AS((GenerationParams{0, 0.0, 3}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((GenerationParams{8193, 0.0, 3}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((GenerationParams{512, 0.0, 9}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((GenerationParams{512, -1.0, 3}.validate()), std::invalid_argument);
}

TEST_CASE("message validation") {
  CHECK_THROWS_AS(validate_messages({}), std::invalid_argument);
  CHECK_THROWS_AS(validate_messages({{Role::User, "hi"}}), std::invalid_argument);
  CHECK_THROWS_AS(validate_messages({{Role::System, ""}}), std::invalid_argument);
  CHECK_NOTHROW(validate_messages({{Role::System, "s"}, {Role::Assistant, ""}}));
}

TEST_CASE("scripted backend is a byte-exact lookup") {
  auto backend = ScriptedBackend::from_jsonl(
      "{\"case_id\":\"case_7\",\"stage\":\"Scan\",\"instance\":\"scan\",\"completion\":\"[ {\\\"x\\\": 1} ]\\n\"}\n"
      "{\"case_id\":\"case_7\",\"stage\":\"Report\",\"instance\":\"report\",\"completion\":\"R\"}\n"
      "\n"
      "{\"case_id\":\"case_8\",\"stage\":\"Scan\",\"instance\":\"scan\",\"completion\":\"S8\"}\n");
  CHECK(backend.size() == 3);
  CHECK(backend.complete(request_for("case_7", Stage::Scan, "scan")) == "[ {\"x\": 1} ]\n");
  CHECK(backend.complete(request_for("case_7", Stage::Scan, "scan")) == "[ {\"x\": 1} ]\n");
  CHECK(backend.complete(request_for("case_8", Stage::Scan, "scan")) == "S8");
  try {
    backend.complete(request_for("case_9", Stage::Scan, "scan"));
    FAIL("expected MalformedResponse");
  } catch (const MalformedResponse& e) {
    CHECK(std::string(e.what()).find("case_9") != std::string::npos);
    CHECK(std::string(e.what()).find("Scan") != std::string::npos);
  }
}

TEST_CASE("scripted retries look up the retry entry first") {
  claw::testing::ScriptBuilder b;
  b.add("c", Stage::Scan, "scan", "bad").add("c", Stage::Scan, "scan/retry", "[]").add("c", Stage::Report, "report", "r");
  auto backend = b.backend();
  CHECK(backend.complete(request_for("c", Stage::Scan, "scan", 0)) == "bad");
  CHECK(backend.complete(request_for("c", Stage::Scan, "scan", 1)) == "[]");
  CHECK(backend.complete(request_for("c", Stage::Report, "report", 1)) == "r");
}

TEST_CASE("script validation errors carry line numbers and keys") {
  const std::string line = R"({"case_id":"a","stage":"Scan","instance":"scan","completion":"x"})";
  try {
    ScriptedBackend::from_jsonl(line + "\n" + line + "\n", "s.jsonl");
    FAIL("expected duplicate error");
  } catch (const std::invalid_argument& e) {
    std::string what = e.what();
    CHECK(what.find("s.jsonl:2") != std::string::npos);
    CHECK(what.find("(a, Scan, scan)") != std::string::npos);
  }
  CHECK_THROWS_WITH_AS(ScriptedBackend::from_jsonl(line + "\n{oops\n", "s.jsonl"), doctest::Contains("s.jsonl:2"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      ScriptedBackend::from_jsonl(R"({"case_id":"a","stage":"Nope","instance":"scan","completion":"x"})"),
      doctest::Contains("Nope"), std::invalid_argument);
  CHECK_THROWS_AS(ScriptedBackend::from_jsonl(R"({"case_id":"a","stage":"Scan","instance":"scan"})"),
                  std::invalid_argument);

  auto empty = ScriptedBackend::from_jsonl("");
  CHECK(empty.size() == 0);
  CHECK_THROWS_AS(empty.complete(request_for("a", Stage::Scan, "scan")), MalformedResponse);

  claw::testing::TempDir dir;
  claw::testing::write_text(dir.file("empty.jsonl"), "");
  CHECK(ScriptedBackend::from_file(dir.file("empty.jsonl")).size() == 0);
  CHECK_THROWS(ScriptedBackend::from_file(dir.file("missing.jsonl")));
}

TEST_CASE("call budget caps calls per case") {
  CallBudget budget(2);
  RequestTag tag{"c", Stage::Lesion, "lesion-3", 0};
  budget.charge(tag);
  budget.charge(tag);
  CHECK_THROWS_WITH_AS(budget.charge(tag), doctest::Contains("lesion-3"), BudgetExceeded);
}

TEST_CASE("http request bodies carry the configured fields") {
  HttpBackendOptions o;
  o.base_url = "https://api.example.org/proxy/";
  o.model = "m";
  HttpBackend backend(o);
  auto body = backend.request_body(request_for("c", Stage::Omni, "omni"));
  CHECK(body.at("model") == "m");
  CHECK(body.at("max_tokens").get<int>() == 512);
  CHECK(body.at("n").get<int>() == 3);
  CHECK(body.at("temperature").get<double>() == 0.0);
  CHECK(body.at("messages").size() == 2);
  CHECK(body.at("messages")[0].at("role") == "system");
  CHECK(body.dump().find("\"max_tokens\":512") != std::string::npos);
  CHECK(body.dump().find("\"n\":3") != std::string::npos);

  o.image_as_content_part = true;
  HttpBackend with_image(o);
  auto b2 = with_image.request_body(request_for("c", Stage::Omni, "omni"));
  CHECK(b2["messages"][1]["content"][1]["image_url"]["url"] == "images/x.png");

  CHECK(backend.backoff_delay(0) == std::chrono::milliseconds(500));
  CHECK(backend.backoff_delay(1) == std::chrono::milliseconds(1000));
  CHECK(backend.backoff_delay(2) == std::chrono::milliseconds(2000));
}

TEST_CASE("http backend rejects malformed base URLs") {
  CHECK_THROWS_AS(http_backend("not a url", "K", "m"), std::invalid_argument);
  CHECK_THROWS_AS(http_backend("ftp://host", "K", "m"), std::invalid_argument);
  CHECK_NOTHROW(http_backend("http://localhost:8080", "K", "m"));
}

TEST_CASE("response parsing") {
  CHECK(HttpBackend::parse_response(fixture_body()).rfind("FINDINGS: Patchy opacity", 0) == 0);
  CHECK_THROWS_AS(HttpBackend::parse_response(R"({"choices":[]})"), MalformedResponse);
  CHECK_THROWS_AS(HttpBackend::parse_response(R"({"id":"x"})"), MalformedResponse);
  CHECK_THROWS_AS(HttpBackend::parse_response("<html>"), MalformedResponse);
  CHECK_THROWS_AS(HttpBackend::parse_response(R"({"choices":[{"message":{}}]})"), MalformedResponse);
}

TEST_CASE("stub server: replayed wire fixture") {
  StubServer server([](int) { return std::pair{200, fixture_body()}; });
  std::vector<std::chrono::milliseconds> sleeps;
  ::setenv("CLAW_TEST_KEY", "sk-test-123", 1);
  auto o = options_for(server, &sleeps);
  o.api_key_env = "CLAW_TEST_KEY";
  HttpBackend backend(o);
  auto text = backend.complete(request_for("c", Stage::Omni, "omni"));
  CHECK(text == "FINDINGS: Patchy opacity in the right lower lobe.\nIMPRESSION: Right lower lobe pneumonia. No pleural "
                "effusion.");
  auto bodies = server.bodies();
  REQUIRE(bodies.size() == 1);
  auto j = json::parse(bodies[0]);
  CHECK(j.at("max_tokens").get<int>() == 512);
  CHECK(j.at("n").get<int>() == 3);
  CHECK(j.at("model") == "vlm-radiology");
  CHECK(server.auth_headers()[0] == "Bearer sk-test-123");
  CHECK(sleeps.empty());
}

TEST_CASE("stub server: 429 twice then 200") {
  StubServer server([](int i) { return i < 2 ? std::pair{429, std::string("{}")} : std::pair{200, fixture_body()}; });
  std::vector<std::chrono::milliseconds> sleeps;
  HttpBackend backend(options_for(server, &sleeps));
  CHECK_NOTHROW(backend.complete(request_for("c", Stage::Omni, "omni")));
  CHECK(server.bodies().size() == 3);
  CHECK(sleeps == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(500), std::chrono::milliseconds(1000)});
  CHECK(server.auth_headers()[0].empty());
}

TEST_CASE("stub server: persistent 503 exhausts three retries") {
  StubServer server([](int) { return std::pair{503, std::string("busy")}; });
  std::vector<std::chrono::milliseconds> sleeps;
  HttpBackend backend(options_for(server, &sleeps));
  CHECK_THROWS_AS(backend.complete(request_for("c", Stage::Omni, "omni")), TransportError);
  CHECK(server.bodies().size() == 4);
  CHECK(sleeps == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(500), std::chrono::milliseconds(1000),
                                                         std::chrono::milliseconds(2000)});
}

TEST_CASE("stub server: 401 is not retried") {
  StubServer server([](int) { return std::pair{401, std::string(R"({"error":"bad key"})")}; });
  std::vector<std::chrono::milliseconds> sleeps;
  HttpBackend backend(options_for(server, &sleeps));
  CHECK_THROWS_AS(backend.complete(request_for("c", Stage::Omni, "omni")), AuthError);
  CHECK(server.bodies().size() == 1);
  CHECK(sleeps.empty());
}

TEST_CASE("stub server: 400 and empty choices fail without retry") {
  StubServer server([](int i) {
    return i == 0 ? std::pair{400, std::string("bad request")} : std::pair{200, std::string(R"({"choices":[]})")};
  });
  std::vector<std::chrono::milliseconds> sleeps;
  HttpBackend backend(options_for(server, &sleeps));
  CHECK_THROWS_AS(backend.complete(request_for("c", Stage::Omni, "omni")), TransportError);
  CHECK_THROWS_AS(backend.complete(request_for("c", Stage::Omni, "omni")), MalformedResponse);
  CHECK(server.bodies().size() == 2);
}

TEST_CASE("unreachable endpoint raises TransportError after retries") {
  std::vector<std::chrono::milliseconds> sleeps;
  HttpBackendOptions o;
  o.base_url = "http://127.0.0.1:1";
  o.model = "m";
  o.timeout = std::chrono::seconds(2);
  o.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };
  HttpBackend backend(o);
  CHECK_THROWS_AS(backend.complete(request_for("c", Stage::Omni, "omni")), TransportError);
  CHECK(sleeps.size() == 3);
}
