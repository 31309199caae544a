#include <doctest.h>

#include <random>

#include "llmgate/documents.hpp"
#include "llmgate/error.hpp"
#include "llmgate/library.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace llmgate;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::bad_config;
}

Document doc_of(std::string body, std::string id = "d") {
  Document d;
  d.doc_id = std::move(id);
  d.body = std::move(body);
  return d;
}

std::vector<Document> fixture_corpus() {
  std::vector<Document> docs;
  const FixturePdfExtractor pdf;
  for (const auto* name : {"falcon.md", "llama.txt", "vicuna.md", "mpt.txt", "serve.py", "falcon_paper.pdf"}) {
    const auto path = testing::fixture(std::string("corpus/") + name);
    docs.push_back(ingest(testing::read_text(path), format_from_extension(path), path.stem().string(), name, &pdf));
  }
  return docs;
}

}  // namespace

TEST_CASE("ingest normalizes newlines and passes text through") {
  CHECK(ingest("hello\r\nworld", DocumentFormat::text, "a", "a.txt").body == "hello\nworld");
  CHECK(ingest("a\rb\r\n\r\nc", DocumentFormat::text, "a", "a.txt").body == "a\nb\n\nc");
  const std::string md = "# T\n\n```cpp\nint main() {\r\n  return 0;\n}\n```\n";
  CHECK(ingest(md, DocumentFormat::markdown, "m", "m.md").body ==
        "# T\n\n```cpp\nint main() {\n  return 0;\n}\n```\n");
  CHECK(code_of([] { ingest("", DocumentFormat::text, "e", "e.txt"); }) == ErrorCode::empty_input);
  CHECK(code_of([] { ingest("%PDF-1.4\nx", DocumentFormat::pdf_extracted, "p", "p.pdf"); }) ==
        ErrorCode::unsupported_format);

  const FixturePdfExtractor pdf;
  const auto doc = ingest(testing::read_text(testing::fixture("corpus/falcon_paper.pdf")),
                          DocumentFormat::pdf_extracted, "p", "p.pdf", &pdf);
  CHECK(doc.body == "Falcon 180B was trained on 3.5 trillion tokens.\n");
  CHECK(code_of([&] { ingest("not a pdf", DocumentFormat::pdf_extracted, "p", "p.pdf", &pdf); }) ==
        ErrorCode::extractor_failure);
}

TEST_CASE("formats from names and extensions") {
  CHECK(format_from_extension("a.md") == DocumentFormat::markdown);
  CHECK(format_from_extension("a.MARKDOWN") == DocumentFormat::markdown);
  CHECK(format_from_extension("a.txt") == DocumentFormat::text);
  CHECK(format_from_extension("x/y.cpp") == DocumentFormat::code);
  CHECK(format_from_extension("serve.py") == DocumentFormat::code);
  CHECK(format_from_extension("a.pdf") == DocumentFormat::pdf_extracted);
  CHECK(code_of([] { format_from_extension("a.docx"); }) == ErrorCode::unsupported_format);
  CHECK(code_of([] { format_from_extension("Makefile"); }) == ErrorCode::unsupported_format);
  CHECK(format_from_string("pdf") == DocumentFormat::pdf_extracted);
  CHECK(format_from_string("markdown") == DocumentFormat::markdown);
  CHECK(code_of([] { format_from_string("word"); }) == ErrorCode::unsupported_format);
}

TEST_CASE("chunk windows follow the stride") {
  const auto one = chunk(doc_of(std::string(400, 'x')), 512, 64);
  REQUIRE(one.size() == 1);
  CHECK(one[0].start_byte == 0);
  CHECK(one[0].end_byte == 400);
  CHECK(one[0].token_estimate == 100);

  for (const std::string body : {std::string(4000, 'x'), [] {
         std::string s;
         for (int i = 0; i < 1000; ++i) s += "abc ";
         return s;
       }()}) {
    const auto chunks = chunk(doc_of(body), 512, 64);
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].start_byte / 4 == 0);
    CHECK(chunks[1].start_byte / 4 == 448);
    CHECK(chunks[2].start_byte / 4 == 896);
    CHECK(chunks[0].token_estimate == 512);
    CHECK(chunks[2].token_estimate == 104);
    CHECK(chunks[2].end_byte == 4000);
    CHECK(chunks[1].chunk_id == "d#1");
  }

  CHECK(code_of([] { chunk(doc_of("abc"), 64, 64); }) == ErrorCode::invalid_parameters);
  CHECK(code_of([] { chunk(doc_of("abc"), 0, 0); }) == ErrorCode::invalid_parameters);
  CHECK(code_of([] { chunk(doc_of("abc"), 8, -1); }) == ErrorCode::invalid_parameters);
}

TEST_CASE("chunk boundaries snap to whitespace and UTF-8 boundaries") {
  // window = 8 bytes; "aaaa bbbbbbb" snaps the first end after the space.
  const auto c = chunk(doc_of("aaaa bbbbbbb cc"), 2, 0);
  REQUIRE(c.size() >= 2);
  CHECK(c[0].text == "aaaa ");
  CHECK(c[1].start_byte == 5);

  // No whitespace: never split inside a multi-byte character.
  std::string snow;
  for (int i = 0; i < 10; ++i) snow += "\xC3\xA9";  // é
  for (const auto& ch : chunk(doc_of(snow), 1, 0, 3)) {
    CHECK(ch.text.size() % 2 == 0);
  }
}

TEST_CASE("chunks cover random bodies") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 400; ++i) {
    std::string body;
    const std::size_t len = 1 + rng() % 600;
    for (std::size_t b = 0; b < len; ++b) {
      const auto r = rng() % 20;
      if (r == 0) body += ' ';
      else if (r == 1) body += '\n';
      else if (r == 2) body += "\xE2\x82\xAC";  // €
      else body += static_cast<char>('a' + r);
    }
    const auto ct = static_cast<std::int64_t>(1 + rng() % 40);
    const auto ov = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(ct));
    const int div = 1 + static_cast<int>(rng() % 5);
    const auto chunks = chunk(doc_of(body), ct, ov, div);
    REQUIRE_FALSE(chunks.empty());
    CHECK(chunks.front().start_byte == 0);
    CHECK(chunks.back().end_byte == body.size());
    std::string rebuilt;
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      const auto& c = chunks[k];
      CHECK(c.ordinal == k);
      CHECK(c.text == body.substr(c.start_byte, c.end_byte - c.start_byte));
      CHECK(c.token_estimate <= static_cast<std::size_t>(ct));
      CHECK(c.token_estimate == (c.text.size() + div - 1) / div);
      if (k > 0) {
        CHECK(c.start_byte > chunks[k - 1].start_byte);
        CHECK(c.start_byte <= chunks[k - 1].end_byte);
      }
      const std::size_t from = k == 0 ? 0 : chunks[k - 1].end_byte;
      if (c.end_byte > from) rebuilt += body.substr(std::max(from, c.start_byte), c.end_byte - std::max(from, c.start_byte));
    }
    CHECK(rebuilt == body);
  }
}

TEST_CASE("index statistics match hand counts") {
  std::vector<Chunk> chunks;
  for (const auto* text : {"The falcon flies.", "the LLAMA", "falcon, falcon"}) {
    Chunk c;
    c.doc_id = "d";
    c.ordinal = chunks.size();
    c.chunk_id = "d#" + std::to_string(c.ordinal);
    c.text = text;
    chunks.push_back(c);
  }
  const auto index = build_index(chunks);
  CHECK(index.size() == 3);
  CHECK(index.document_frequency("the") == 2);
  CHECK(index.document_frequency("falcon") == 2);
  CHECK(index.document_frequency("llama") == 1);
  CHECK(index.document_frequency("flies") == 1);
  CHECK(index.document_frequency("LLAMA") == 0);
  CHECK(index.term_frequency(2, "falcon") == 2);
  CHECK(index.chunk_length(0) == 3);
  CHECK(index.avgdl() == doctest::Approx(7.0 / 3.0));

  chunks.push_back(chunks[1]);
  chunks.back().chunk_id = "d#3";
  chunks.back().ordinal = 3;
  const auto dup = build_index(chunks);
  CHECK(dup.size() == 4);
  CHECK(dup.document_frequency("llama") == 2);
  CHECK(dup.idf("llama") == doctest::Approx(std::log(1.0 + (4 - 2 + 0.5) / (2 + 0.5))));
  const auto hits = dup.retrieve("llama", 10);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].score == hits[1].score);
  CHECK(hits[0].chunk_id == "d#1");
  CHECK(hits[1].chunk_id == "d#3");

  CHECK(build_index({}).retrieve("anything", 5).empty());
  CHECK(build_index({}).size() == 0);
  CHECK(index.retrieve("nothing here", 5).empty());
  CHECK(index.retrieve("falcon", 0).empty());
  CHECK(code_of([] { build_index({}, 0.0); }) == ErrorCode::invalid_parameters);
  CHECK(code_of([] { build_index({}, 1.2, 1.5); }) == ErrorCode::invalid_parameters);
}

TEST_CASE("fixture corpus ranking equals the brute-force oracle") {
  std::vector<Chunk> chunks;
  for (const auto& d : fixture_corpus()) {
    for (auto& c : chunk(d, 24, 4)) chunks.push_back(std::move(c));
  }
  const auto index = build_index(chunks);
  for (const auto* q : {"falcon", "Falcon sizes 180B", "llama chat", "im_start", "openai gateway", "zzz", "the"}) {
    CAPTURE(q);
    CHECK(oracle::compare_retrieval(index.retrieve(q, 8), oracle::bm25(chunks, q, 8)) == "");
  }
  const auto top = index.retrieve("falcon", 3);
  REQUIRE_FALSE(top.empty());
  for (const auto& h : top) CHECK(index.find_chunk(h.chunk_id)->text.find("alcon") != std::string::npos);
}

TEST_CASE("random corpora match the oracle, ties included") {
  std::mt19937_64 rng(5150);
  for (int corpus = 0; corpus < 20; ++corpus) {
    const auto chunks = oracle::random_corpus(rng, 100);
    const auto index = build_index(chunks);
    for (int q = 0; q < 20; ++q) {
      const auto query = oracle::random_query(rng);
      const std::size_t k = rng() % 12;
      CAPTURE(query);
      CHECK(oracle::compare_retrieval(index.retrieve(query, k), oracle::bm25(chunks, query, k)) == "");
    }
  }
}

TEST_CASE("packing admits chunks greedily in rank order") {
  auto candidates = [](std::vector<std::size_t> estimates) {
    std::vector<PackCandidate> out;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
      out.push_back({"c#" + std::to_string(i), "c", i, "t", estimates[i], 1.0 / static_cast<double>(i + 1)});
    }
    return out;
  };
  auto single = pack_context(candidates({10}), 100, 20);
  CHECK(single.total_token_estimate == 10);
  CHECK(single.budget_used_of == 80);

  auto three = pack_context(candidates({50, 40, 30}), 100, 10);
  CHECK(three.chunk_ids() == std::vector<std::string>{"c#0", "c#1"});
  CHECK(three.total_token_estimate == 90);

  auto skip = pack_context(candidates({50, 60, 30}), 100, 10);
  CHECK(skip.chunk_ids() == std::vector<std::string>{"c#0", "c#2"});

  CHECK(code_of([&] { pack_context(candidates({1}), 10, 10); }) == ErrorCode::invalid_budget);
  CHECK(code_of([&] { pack_context(candidates({1}), 10, -1); }) == ErrorCode::invalid_budget);

  std::mt19937_64 rng(8);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::size_t> est(rng() % 30);
    for (auto& e : est) e = rng() % 200;
    const auto reserved = rng() % 300;
    const auto budget = reserved + 1 + rng() % 1000;
    const auto packed = pack_context(candidates(est), static_cast<std::int64_t>(budget), static_cast<std::int64_t>(reserved));
    CHECK(packed.total_token_estimate <= budget - reserved);
    const auto trace = oracle::greedy_trace(est, budget, reserved);
    REQUIRE(packed.entries.size() == trace.size());
    for (std::size_t k = 0; k < trace.size(); ++k) CHECK(packed.entries[k].ordinal == trace[k]);
  }
}

TEST_CASE("packing from an index uses the model's divisor") {
  auto reg = testing::mock_registry({{"m", "mock://"}});
  std::vector<Chunk> chunks;
  for (int i = 0; i < 3; ++i) {
    Chunk c;
    c.doc_id = "d";
    c.ordinal = static_cast<std::size_t>(i);
    c.chunk_id = "d#" + std::to_string(i);
    c.text = std::string(40 * (i + 1), 'a') + " falcon";
    c.token_estimate = 999;
    chunks.push_back(c);
  }
  const auto index = build_index(chunks);
  const auto hits = index.retrieve("falcon", 3);
  const auto packed = pack_context(index, hits, *reg, ModelId{"m"}, 60, 10);
  std::size_t total = 0;
  for (const auto& e : packed.entries) {
    CHECK(e.token_estimate == (e.text.size() + 3) / 4);
    total += e.token_estimate;
  }
  CHECK(packed.total_token_estimate == total);
  CHECK(total <= 50);
}

TEST_CASE("summarization plans") {
  auto reg = testing::mock_registry({{"m", "mock://"}});
  const ModelId m{"m"};
  const auto small = summarize_plan(doc_of("Falcon is a model."), *reg, m, 200);
  REQUIRE(small.size() == 1);
  CHECK(small[0].text == "user: Summarize the following passage:\nFalcon is a model.\nassistant:");

  const auto big = doc_of(std::string(1200, 'x'));
  const auto plan = summarize_plan(big, *reg, m, 200);
  // Map wrapper is 50 bytes (13 tokens); 200 - 64 - 13 = 123-token chunks, overlap 12.
  CHECK(chunk(big, 123, 12).size() == 3);
  REQUIRE(plan.size() == 4);
  for (std::size_t i = 0; i < 3; ++i) CHECK(plan[i].text.starts_with("user: Summarize the following passage:\nxxx"));
  CHECK(plan[3].text ==
        "user: Combine the following partial summaries into a single summary:\n{summaries}\nassistant:");
  for (const auto& p : plan) CHECK(reg->estimate_tokens(m, p.text) <= 200 - 64);

  CHECK(code_of([&] { summarize_plan(big, *reg, m, 32); }) == ErrorCode::budget_too_small);
}

TEST_CASE("document library query and grounding") {
  DocumentLibrary lib({.chunk_tokens = 24, .overlap = 4, .token_divisor = 4});
  CHECK(lib.query("falcon", 5).empty());
  for (auto d : fixture_corpus()) lib.add(std::move(d));
  CHECK(lib.size() == 6);
  const auto info = lib.find("falcon");
  REQUIRE(info);
  CHECK(info->format == DocumentFormat::markdown);
  CHECK(info->chunk_count == chunk(*lib.document("falcon"), 24, 4).size());

  const auto hits = lib.query("falcon", 4);
  REQUIRE_FALSE(hits.empty());
  std::vector<Chunk> all = lib.index()->chunks();
  CHECK(oracle::compare_retrieval(hits, oracle::bm25(all, "falcon", 4)) == "");

  const std::vector<std::string> only{"llama"};
  for (const auto& h : lib.query("falcon llama", 5, only)) CHECK(h.doc_id == "llama");
  const std::vector<std::string> missing{"nope"};
  CHECK(code_of([&] { lib.query("x", 5, missing); }) == ErrorCode::unknown_document);

  // Replacing a document keeps one entry.
  lib.add(ingest("falcon falcon", DocumentFormat::text, "mpt", "mpt.txt"));
  CHECK(lib.size() == 6);
  CHECK(lib.find("mpt")->chunk_count == 1);

  auto reg = testing::mock_registry({{"wide", "mock://"}}, 4096);
  reg->register_backend("narrow@backend", BackendBinding::from_url("mock://"));
  ModelDescriptor narrow;
  narrow.name = "narrow";
  narrow.family = Family::mock;
  narrow.context_window = 120;
  narrow.template_id = "mock";
  narrow.backend_id = "narrow@backend";
  reg->register_model(narrow);

  const auto conv = testing::user_turn("falcon sizes");
  const std::vector<ModelId> models{ModelId{"wide"}, ModelId{"narrow"}};
  const auto packed = ground(lib, *reg, models, conv, "falcon sizes", 5, 16);
  CHECK_FALSE(packed.entries.empty());
  // The result fits the narrow model once wrapped into the prompt.
  const auto rendered = reg->render_prompt(ModelId{"narrow"}, with_context(conv, packed));
  CHECK(reg->estimate_tokens(ModelId{"narrow"}, rendered.text) + 16 <= 120);
  CHECK(packed.total_token_estimate <= packed.budget_used_of);

  CHECK(ground(lib, *reg, models, conv, "zzz", 5, 16).entries.empty());
}
