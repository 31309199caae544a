#include <doctest.h>

#include <httplib.h>
#include <json.hpp>

#include <condition_variable>
#include <mutex>
#include <thread>

#include "llmgate/gateway.hpp"
#include "support.hpp"
#include "wire.hpp"

using namespace llmgate;
using nlohmann::json;

namespace {

using wire::Harness;

json frames_of(const std::string& body) {
  json out = json::array();
  for (const auto& p : testing::sse_payloads(body)) out.push_back(p == "[DONE]" ? json("[DONE]") : json::parse(p));
  return out;
}

json canonical_fanout(const json& frames) {
  json c = {{"per_model", json::object()}};
  for (std::size_t i = 0; i < frames.size(); ++i) {
    json f = frames[i];
    const auto type = f.value("type", "");
    if (type == "fanout-started") {
      c["started"] = f;
    } else if (type == "fanout-complete") {
      f.erase("merge_seq");
      c["complete"] = f;
    } else if (type == "token") {
      f.erase("merge_seq");
      c["per_model"][f["model"].get<std::string>()].push_back(f);
    }
  }
  return c;
}

std::string error_code(const httplib::Result& res) {
  REQUIRE(res);
  const auto j = json::parse(res->body);
  return j["error"]["code"].get<std::string>();
}

}  // namespace

TEST_CASE("chat completions match the golden response") {
  std::string first_bytes;
  for (int run = 0; run < 2; ++run) {
    Harness h;
    CHECK(wire::chat_nonstream(h) == "");
    // Seeded ids make the whole body reproducible.
    const auto res = h.post("/v1/chat/completions", {{"model", "m1"}, {"messages", {wire::kHello}}, {"max_tokens", 4}});
    REQUIRE(res);
    if (run == 0) first_bytes = res->body;
    else CHECK(res->body == first_bytes);
  }
}

TEST_CASE("streamed chat completions match the golden frames") {
  Harness h;
  CHECK(wire::chat_stream(h) == "");

  // Every stream ends with [DONE], errors included.
  const auto failed = h.post("/v1/chat/completions", {{"model", "flaky"}, {"messages", {wire::kHello}}, {"max_tokens", 4}, {"stream", true}});
  REQUIRE(failed);
  const auto ff = frames_of(failed->body);
  REQUIRE(ff.size() >= 3);
  CHECK(ff.back() == "[DONE]");
  CHECK(ff[ff.size() - 2]["error"]["code"] == "backend_unavailable");
}

TEST_CASE("chat completion errors") {
  Harness h([](GatewayConfig& c) { c.max_body_bytes = 2048; });
  const json turns = {{{"role", "user"}, {"content", "hi"}}};
  auto res = h.post("/v1/chat/completions", {{"model", "nope"}, {"messages", turns}});
  CHECK(res->status == 404);
  CHECK(error_code(res) == "model_not_found");

  res = h.client->Post("/v1/chat/completions", "{not json", "application/json");
  CHECK(res->status == 400);
  CHECK(error_code(res) == "invalid_request");

  res = h.post("/v1/chat/completions", {{"model", "m1"}, {"messages", json::array()}});
  CHECK(res->status == 400);
  res = h.post("/v1/chat/completions", {{"model", "m1"}, {"messages", turns}, {"max_tokens", -1}});
  CHECK(res->status == 400);
  res = h.post("/v1/chat/completions", {{"model", "m1"}, {"messages", turns}, {"max_tokens", 5000}});
  CHECK(res->status == 400);
  CHECK(error_code(res) == "context_overflow");

  res = h.post("/v1/chat/completions", {{"model", "m1"}, {"messages", {{{"role", "user"}, {"content", std::string(3000, 'x')}}}}});
  CHECK(res->status == 413);
  CHECK(error_code(res) == "payload_too_large");

  res = h.client->Get("/v1/nothing-here");
  CHECK(res->status == 404);

  res = h.client->Get("/v1/models");
  REQUIRE(res);
  CHECK(json::parse(res->body)["data"].size() == 4);
}

TEST_CASE("single-model fanout matches the golden stream") {
  Harness h;
  CHECK(wire::fanout_single(h) == "");
}

TEST_CASE("two-model fanout matches the golden stream after canonicalization") {
  Harness h;
  for (int run = 0; run < 5; ++run) CHECK(wire::fanout_pair(h) == "");
}

TEST_CASE("vote and leaderboard responses match the goldens") {
  Harness h;
  CHECK(wire::vote_and_leaderboard(h) == "");
}

TEST_CASE("fanout failures stay per model and are logged") {
  Harness h;
  const auto res = h.post("/arena/fanout", {{"models", {"m1", "flaky"}}, {"prompt", "a b c"}, {"max_tokens", 3}, {"session_id", "s1"}});
  REQUIRE(res);
  const auto c = canonical_fanout(frames_of(res->body));
  CHECK(c["per_model"]["m1"].back()["kind"] == "done");
  CHECK(c["per_model"]["flaky"].back()["kind"] == "error");
  CHECK(c.contains("complete"));

  const auto state = h.gateway->store().state("s1");
  const auto& fan = state.fanouts.begin()->second;
  CHECK(fan.complete);
  CHECK(fan.models == std::vector<std::string>{"m1", "flaky"});
  CHECK(fan.terminals.at("m1")["text"] == "a b c ");
  CHECK(fan.terminals.at("flaky")["kind"] == "error");
  CHECK(fan.scores.size() == 2);

  auto bad = h.post("/arena/fanout", {{"models", {"m1", "ghost"}}, {"prompt", "x"}});
  CHECK(bad->status == 404);
  bad = h.post("/arena/fanout", {{"models", json::array()}, {"prompt", "x"}});
  CHECK(bad->status == 400);
  bad = h.post("/arena/fanout", {{"models", {"m1"}}});
  CHECK(bad->status == 400);
}

TEST_CASE("cancelling a live fanout") {
  Harness h;
  httplib::Client stream_client("127.0.0.1", h.gateway->port());
  stream_client.set_read_timeout(10, 0);
  std::string received;
  std::string fanout_id;
  std::mutex m;
  std::condition_variable cv;

  std::thread reader([&] {
    httplib::Request req;
    req.method = "POST";
    req.path = "/arena/fanout";
    req.body = json{{"models", {"slow", "m1"}}, {"prompt", "one two three"}, {"max_tokens", 2000}}.dump();
    req.set_header("Content-Type", "application/json");
    req.content_receiver = [&](const char* data, std::size_t n, std::uint64_t, std::uint64_t) {
      std::lock_guard lock(m);
      received.append(data, n);
      if (fanout_id.empty()) {
        const auto frames = testing::sse_payloads(received);
        if (!frames.empty()) {
          fanout_id = json::parse(frames[0])["fanout_id"];
          cv.notify_all();
        }
      }
      return true;
    };
    stream_client.send(req);
  });
  {
    std::unique_lock lock(m);
    REQUIRE(cv.wait_for(lock, std::chrono::seconds(5), [&] { return !fanout_id.empty(); }));
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(30));
  const auto t0 = std::chrono::steady_clock::now();
  auto res = h.client->Post("/arena/cancel/" + fanout_id);
  REQUIRE(res);
  CHECK(res->status == 202);
  CHECK(json::parse(res->body)["status"] == "cancelled");
  reader.join();
  CHECK(testing::elapsed_ms(t0) < 1000);

  const auto c = canonical_fanout(frames_of(received));
  CHECK(c["per_model"]["slow"].back()["kind"] == "error");
  CHECK(c["per_model"]["slow"].back()["error_message"] == "cancelled");
  CHECK(c.contains("complete"));

  res = h.client->Post("/arena/cancel/" + fanout_id);
  CHECK(res->status == 202);
  CHECK(json::parse(res->body)["status"] == "already_finished");
  res = h.client->Post("/arena/cancel/fan-unknown");
  CHECK(res->status == 404);
}

TEST_CASE("votes feed the leaderboard") {
  Harness h;
  const auto res = h.post("/arena/fanout", {{"models", {"m1", "m2"}}, {"prompt", "hi"}, {"max_tokens", 1}, {"session_id", "arena"}});
  const auto fanout_id = frames_of(res->body)[0]["fanout_id"].get<std::string>();

  auto vote = h.post("/arena/vote", {{"session_id", "arena"}, {"fanout_id", fanout_id}, {"model_a", "m1"}, {"model_b", "m2"}, {"winner", "a"}});
  REQUIRE(vote);
  CHECK(vote->status == 200);
  const auto recorded = json::parse(vote->body);
  CHECK(recorded["status"] == "recorded");
  CHECK(recorded["vote"]["at"] == 1700000000000);

  auto resend = recorded["vote"];
  resend["session_id"] = "arena";
  auto again = h.post("/arena/vote", resend);
  CHECK(json::parse(again->body)["status"] == "duplicate");
  auto leaderboard = h.client->Get("/arena/leaderboard?session_id=arena");
  REQUIRE(leaderboard);
  const auto board = json::parse(leaderboard->body);
  REQUIRE(board.size() == 2);
  CHECK(board[0]["model"] == "m1");
  CHECK(board[0]["elo"] == 1016.0);
  CHECK(board[1]["elo"] == 984.0);
  CHECK(board[0]["win_rate"] == 1.0);

  auto bad = h.post("/arena/vote", {{"session_id", "arena"}, {"fanout_id", fanout_id}, {"model_a", "m1"}, {"model_b", "m1"}, {"winner", "a"}});
  CHECK(bad->status == 400);
  bad = h.post("/arena/vote", {{"session_id", "arena"}, {"fanout_id", fanout_id}, {"model_a", "m1"}, {"model_b", "slow"}, {"winner", "b"}});
  CHECK(bad->status == 400);
  bad = h.post("/arena/vote", {{"session_id", "arena"}, {"fanout_id", "fan-x"}, {"model_a", "m1"}, {"model_b", "m2"}, {"winner", "b"}});
  CHECK(bad->status == 404);
  CHECK(json::parse(h.client->Get("/arena/leaderboard?session_id=empty")->body) == json::array());
}

TEST_CASE("documents upload, list, query and ground fanouts") {
  testing::TempDir keep;
  {
    Harness h([&](GatewayConfig& c) {
      c.data_dir = keep.path();
      c.chunk_tokens = 24;
      c.chunk_overlap = 4;
    });
    const auto falcon = testing::read_text(testing::fixture("corpus/falcon.md"));
    auto res = h.client->Post("/documents?name=falcon.md&doc_id=falcon", falcon, "text/markdown");
    REQUIRE(res);
    CHECK(res->status == 201);
    const auto info = json::parse(res->body);
    CHECK(info["doc_id"] == "falcon");
    CHECK(info["chunk_count"].get<int>() > 1);

    httplib::MultipartFormDataItems items = {{"file", testing::read_text(testing::fixture("corpus/llama.txt")), "llama.txt", "text/plain"}};
    res = h.client->Post("/documents", items);
    CHECK(res->status == 201);

    res = h.client->Post("/documents?name=blob", std::string("PK\x03\x04", 4), "application/zip");
    CHECK(res->status == 415);
    CHECK(error_code(res) == "unsupported_media_type");
    res = h.client->Post("/documents?name=empty.txt", "", "text/plain");
    CHECK(res->status == 400);

    res = h.client->Get("/documents");
    CHECK(json::parse(res->body).size() == 2);

    res = h.post("/documents/query", {{"query", "Falcon"}, {"k", 3}, {"doc_ids", {"falcon"}}});
    REQUIRE(res);
    const auto hits = json::parse(res->body);
    REQUIRE_FALSE(hits.empty());
    CHECK(hits.size() <= 3);
    for (const auto& hit : hits) CHECK(hit["doc_id"] == "falcon");
    CHECK(h.post("/documents/query", {{"query", "x"}, {"doc_ids", {"nope"}}})->status == 404);

    res = h.post("/arena/fanout", {{"models", {"m1", "m2"}}, {"prompt", "How large is Falcon?"}, {"max_tokens", 3},
                                   {"document_query", {{"query", "Falcon sizes"}, {"k", 2}}}});
    const auto frames = frames_of(res->body);
    REQUIRE(frames.size() > 2);
    CHECK(frames[1]["type"] == "context");
    CHECK(frames[1]["chunk_ids"].size() <= 2);
    CHECK(frames[1]["total_token_estimate"].get<int>() <= frames[1]["budget_used_of"].get<int>());
  }
  // Ingested documents survive a restart.
  Harness again([&](GatewayConfig& c) { c.data_dir = keep.path(); });
  CHECK(json::parse(again.client->Get("/documents")->body).size() == 2);
}

TEST_CASE("bearer auth guards everything but healthz") {
  Harness h([](GatewayConfig& c) { c.auth_token = "t0ken"; });
  auto res = h.client->Get("/v1/models");
  CHECK(res->status == 401);
  CHECK(error_code(res) == "unauthorized");
  CHECK(h.client->Get("/healthz")->status == 200);
  h.client->set_bearer_token_auth("t0ken");
  CHECK(h.client->Get("/v1/models")->status == 200);
  h.client->set_bearer_token_auth("wrong");
  CHECK(h.client->Get("/v1/models")->status == 401);
}

TEST_CASE("stop drains live streams with terminal frames") {
  Harness h;
  std::string received;
  std::thread reader([&] {
    httplib::Client c("127.0.0.1", h.gateway->port());
    c.set_read_timeout(10, 0);
    const auto res = c.Post("/arena/fanout", json{{"models", {"slow"}}, {"prompt", "x y"}, {"max_tokens", 5000}}.dump(),
                            "application/json");
    if (res) received = res->body;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(150));
  const auto t0 = std::chrono::steady_clock::now();
  h.gateway->stop();
  reader.join();
  CHECK(testing::elapsed_ms(t0) < 2000);
  const auto c = canonical_fanout(frames_of(received));
  REQUIRE(c["per_model"].contains("slow"));
  CHECK(c["per_model"]["slow"].back()["kind"] == "error");
  CHECK(c.contains("complete"));
}
