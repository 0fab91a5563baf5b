#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "iclb/backends/cache.hpp"
#include "iclb/backends/completion.hpp"
#include "iclb/backends/mock.hpp"
#include "iclb/backends/numeric.hpp"
#include "iclb/baselines/model.hpp"
#include "support.hpp"
#include "test_server.hpp"

using namespace iclb;
using iclb::testing::TestServer;

namespace {

ProbeContext small_context(int n = 8) {
  std::vector<LabeledPoint> ex;
  for (int i = 0; i < n; ++i) {
    const double x = i % 2 ? 80.0 - i : 20.0 + i;
    ex.push_back({{x, 50.0 + i}, {x, 50.0 + i}, i % 2});
  }
  return ProbeContext::make(ex, PromptConfig{});
}

std::vector<QueryPoint> queries(int n) {
  std::vector<QueryPoint> q;
  for (int i = 0; i < n; ++i) {
    const Point p{static_cast<double>(i % 100), static_cast<double>(i / 100)};
    q.push_back({p, p});
  }
  return q;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "iclb_tests";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::filesystem::remove(p);
  return p;
}

LabelMap foo_bar() { return make_label_map(PromptConfig{}); }

}  // namespace

TEST(Scores, TopTokensToProbabilities) {
  const ClassPrediction p = predict_from_logits(logits_from_top_tokens({{"Bar", -0.1}, {"Foo", -2.3}}, foo_bar()));
  EXPECT_EQ(p.cls, 1);
  const double e0 = std::exp(-2.3), e1 = std::exp(-0.1);
  EXPECT_NEAR(p.probs[0], e0 / (e0 + e1), 1e-12);
  EXPECT_NEAR(p.probs[1], e1 / (e0 + e1), 1e-12);
  EXPECT_NEAR(p.probs[0], 0.0998, 5e-5);
  EXPECT_NEAR(p.probs[1], 0.9002, 5e-5);
  EXPECT_TRUE(p.genuine_probs());
}

TEST(Scores, TieGoesToLowestClass) {
  EXPECT_EQ(predict_from_logits(logits_from_top_tokens({{" Bar", -0.7}, {" Foo", -0.7}}, foo_bar())).cls, 0);
}

TEST(Scores, LeadingSpaceAndPrefixTokensMatch) {
  const ClassLogits l = logits_from_top_tokens({{" ba", -0.2}, {" FOO", -1.0}, {" zzz", -0.01}}, foo_bar());
  EXPECT_EQ(l.scores[0], -1.0);
  EXPECT_EQ(l.scores[1], -0.2);
}

TEST(Scores, MissingLabelGetsFloor) {
  const ClassLogits l = logits_from_top_tokens({{"Bar", -0.1}}, foo_bar());
  EXPECT_EQ(l.scores[0], kLogFloor);
  const ClassPrediction p = predict_from_logits(l);
  EXPECT_EQ(p.cls, 1);
  EXPECT_NEAR(p.probs[1], 1.0, 1e-12);
}

TEST(Scores, NoLabelTokensIsNoSignal) {
  EXPECT_CODE(predict_from_logits(logits_from_top_tokens({{"???", -0.1}}, foo_bar())), no_label_signal);
}

TEST(Scores, GenerationExactMatch) {
  const ClassPrediction p = predict_from_logits(logits_from_generation("Bar\n", foo_bar()));
  EXPECT_EQ(p.cls, 1);
  EXPECT_EQ(p.probs, (std::vector<double>{0.0, 1.0}));
  EXPECT_FALSE(p.genuine_probs());
  EXPECT_CODE(logits_from_generation("Maybe", foo_bar()), unparseable_generation);
}

TEST(Scores, NaNRejected) {
  ClassLogits l;
  l.scores = {0.0, std::nan("")};
  EXPECT_CODE(predict_from_logits(l), protocol);
}

TEST(Mock, RendersParsesAndAnswers) {
  MockBackend mock(mock_scripts::threshold(50), {});
  const ProbeContext ctx = small_context();
  const QueryPoint hi{{70, 1}, {70, 1}}, lo{{30, 1}, {30, 1}};
  EXPECT_EQ(classify_query(mock, ctx, hi).cls, 1);
  EXPECT_EQ(classify_query(mock, ctx, lo).cls, 0);
  EXPECT_EQ(mock.call_count(), 2u);
  EXPECT_EQ(mock.calls()[0], render_prompt(ctx.examples, hi.prompt, ctx.prompt));
}

TEST(Mock, ConstantMockIsDeterministic) {
  MockBackend mock(mock_scripts::nearest_centroid(10), {});
  const ProbeContext ctx = small_context();
  const auto q = queries(50);
  const auto a = classify_batch(mock, ctx, q);
  const auto b = classify_batch(mock, ctx, q);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_EQ(a[i].prediction->probs, b[i].prediction->probs);
}

TEST(Batch, OrderedResultsAndBoundedConcurrency) {
  MockBackend::Options o;
  o.max_in_flight = 8;
  o.latency = std::chrono::microseconds(200);
  MockBackend mock(mock_scripts::threshold(50), o);
  const auto q = queries(2500);
  const auto res = classify_batch(mock, small_context(), q);
  ASSERT_EQ(res.size(), 2500u);
  for (std::size_t i = 0; i < q.size(); ++i) {
    ASSERT_TRUE(res[i].ok());
    EXPECT_EQ(res[i].prediction->cls, q[i].prompt[0] > 50 ? 1 : 0);
  }
  EXPECT_LE(mock.peak_in_flight(), 8);
  EXPECT_GE(mock.peak_in_flight(), 1);
  EXPECT_EQ(mock.call_count(), 2500u);
}

TEST(Batch, OneFailureAbstainsOneCell) {
  MockBackend::Options o;
  o.fail_when = [](const ParsedPrompt& p) { return p.query == Point{17, 3}; };
  MockBackend mock(mock_scripts::threshold(50), o);
  const auto res = classify_batch(mock, small_context(), queries(2500));
  int failed = 0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    if (!res[i].ok()) {
      ++failed;
      EXPECT_EQ(i, 317u);
      EXPECT_EQ(res[i].error, ErrorCode::backend_unavailable);
    }
  }
  EXPECT_EQ(failed, 1);
}

TEST(Batch, PermutationOracle) {
  MockBackend mock(mock_scripts::nearest_centroid(15), {});
  const ProbeContext ctx = small_context();
  const auto q = queries(300);
  std::vector<std::size_t> perm(q.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(123);
  fisher_yates(perm, rng);
  std::vector<QueryPoint> shuffled;
  for (std::size_t i : perm) shuffled.push_back(q[i]);
  const auto direct = classify_batch(mock, ctx, q);
  const auto permuted = classify_batch(mock, ctx, shuffled);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    EXPECT_EQ(permuted[k].prediction->cls, direct[perm[k]].prediction->cls);
    EXPECT_EQ(permuted[k].prediction->probs, direct[perm[k]].prediction->probs);
  }
}

TEST(Batch, EmptyQueries) {
  MockBackend mock(mock_scripts::constant(0), {});
  EXPECT_TRUE(classify_batch(mock, small_context(), {}).empty());
  EXPECT_EQ(mock.call_count(), 0u);
}

TEST(Cache, SamePromptOneUpstreamCall) {
  auto mock = std::make_shared<MockBackend>(mock_scripts::threshold(50), MockBackend::Options{});
  auto cache = std::make_shared<ResponseCache>();
  auto b = cached(mock, cache);
  const ProbeContext ctx = small_context();
  const QueryPoint q{{70, 1}, {70, 1}};
  EXPECT_EQ(classify_query(*b, ctx, q).cls, 1);
  EXPECT_EQ(classify_query(*b, ctx, q).cls, 1);
  EXPECT_EQ(mock->call_count(), 1u);
  const QueryPoint q2{{70, 2}, {70, 2}};
  classify_query(*b, ctx, q2);
  EXPECT_EQ(mock->call_count(), 2u);
}

TEST(Cache, DuplicatesInOneBatchFetchedOnce) {
  auto mock = std::make_shared<MockBackend>(mock_scripts::threshold(50), MockBackend::Options{});
  auto b = cached(mock, std::make_shared<ResponseCache>());
  std::vector<QueryPoint> q(40, QueryPoint{{10, 10}, {10, 10}});
  const auto more = queries(10);
  q.insert(q.end(), more.begin(), more.end());
  const auto res = classify_batch(*b, small_context(), q);
  for (const auto& r : res) EXPECT_TRUE(r.ok());
  EXPECT_EQ(mock->call_count(), 11u);
  EXPECT_EQ(b->upstream_calls(), 11u);
}

TEST(Cache, PersistsAcrossRestart) {
  const auto path = temp_path("restart.jsonl");
  const ProbeContext ctx = small_context();
  const auto q = queries(2500);
  std::vector<CellOutcome> first;
  {
    auto mock = std::make_shared<MockBackend>(mock_scripts::nearest_centroid(10), MockBackend::Options{});
    first = classify_batch(*cached(mock, std::make_shared<ResponseCache>(path)), ctx, q);
    EXPECT_EQ(mock->call_count(), 2500u);
  }
  auto mock = std::make_shared<MockBackend>(mock_scripts::nearest_centroid(10), MockBackend::Options{});
  const auto second = classify_batch(*cached(mock, std::make_shared<ResponseCache>(path)), ctx, q);
  EXPECT_EQ(mock->call_count(), 0u);
  for (std::size_t i = 0; i < q.size(); ++i) {
    EXPECT_EQ(first[i].prediction->cls, second[i].prediction->cls);
    EXPECT_EQ(first[i].prediction->probs, second[i].prediction->probs);
  }
}

TEST(Cache, CorruptLinesAreMisses) {
  const auto path = temp_path("corrupt.jsonl");
  const ProbeContext ctx = small_context();
  const QueryPoint q{{70, 1}, {70, 1}};
  {
    auto mock = std::make_shared<MockBackend>(mock_scripts::threshold(50), MockBackend::Options{});
    classify_query(*cached(mock, std::make_shared<ResponseCache>(path)), ctx, q);
  }
  std::string line;
  std::getline(std::ifstream(path), line);
  std::ofstream(path, std::ios::trunc) << line.substr(0, line.size() / 2) << "\n{\"bogus\":1}\n";
  auto cache = std::make_shared<ResponseCache>(path);
  EXPECT_EQ(cache->size(), 0u);
  EXPECT_EQ(cache->corrupt_lines(), 2u);
  auto mock = std::make_shared<MockBackend>(mock_scripts::threshold(50), MockBackend::Options{});
  EXPECT_EQ(classify_query(*cached(mock, cache), ctx, q).cls, 1);
  EXPECT_EQ(mock->call_count(), 1u);
}

TEST(Cache, TransparentForAnyRequestSequence) {
  auto plain = std::make_shared<MockBackend>(mock_scripts::nearest_centroid(12), MockBackend::Options{});
  auto inner = std::make_shared<MockBackend>(mock_scripts::nearest_centroid(12), MockBackend::Options{});
  auto b = cached(inner, std::make_shared<ResponseCache>());
  const ProbeContext ctx = small_context();
  Rng rng(5);
  std::vector<QueryPoint> q;
  for (int i = 0; i < 200; ++i) {
    const Point p{static_cast<double>(uniform_index(rng, 30)), static_cast<double>(uniform_index(rng, 30))};
    q.push_back({p, p});
  }
  const auto a = classify_batch(*plain, ctx, q);
  const auto c = classify_batch(*b, ctx, q);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_EQ(a[i].prediction->probs, c[i].prediction->probs);
  EXPECT_LT(inner->call_count(), plain->call_count());
}

TEST(Cache, FailuresAreNotCached) {
  std::atomic<bool> broken{true};
  MockBackend::Options o;
  o.fail_when = [&](const ParsedPrompt&) { return broken.load(); };
  auto mock = std::make_shared<MockBackend>(mock_scripts::threshold(50), o);
  auto b = cached(mock, std::make_shared<ResponseCache>());
  const QueryPoint q{{70, 1}, {70, 1}};
  EXPECT_FALSE(classify_batch(*b, small_context(), std::span(&q, 1))[0].ok());
  broken = false;
  EXPECT_TRUE(classify_batch(*b, small_context(), std::span(&q, 1))[0].ok());
  EXPECT_EQ(mock->call_count(), 2u);
}

TEST(Completion, LogprobModeOverHttp) {
  nlohmann::json seen;
  TestServer srv("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    nlohmann::json reply = {{"choices", {{{"text", " Bar"}, {"logprobs", {{"top_logprobs", {{{" Bar", -0.1}, {" Foo", -2.3}}}}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  CompletionBackend::Options o;
  o.endpoint = srv.url();
  o.model = "m";
  CompletionBackend b(o);
  const ProbeContext ctx = small_context(2);
  const QueryPoint q{{2, 3}, {2, 3}};
  const ClassPrediction p = classify_query(b, ctx, q);
  EXPECT_EQ(p.cls, 1);
  EXPECT_NEAR(p.probs[1], 0.9002, 5e-5);
  EXPECT_EQ(seen.at("prompt"), render_prompt(ctx.examples, q.prompt, ctx.prompt));
  EXPECT_EQ(seen.at("temperature"), 0.0);
  EXPECT_EQ(seen.at("logprobs"), 20);
  EXPECT_EQ(seen.at("echo"), false);
  EXPECT_EQ(seen.at("model"), "m");
}

TEST(Completion, GenerationMode) {
  TestServer srv("/v1/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"text":"Foo\n"}]})", "application/json");
  });
  CompletionBackend::Options o;
  o.endpoint = srv.url();
  o.model = "m";
  o.mode = ProbeMode::generation;
  const ClassPrediction p = classify_query(CompletionBackend(o), small_context(2), {{1, 1}, {1, 1}});
  EXPECT_EQ(p.cls, 0);
  EXPECT_EQ(p.logits.source, ScoreSource::generated_text);
}

TEST(Completion, NonZeroTemperatureRejected) {
  CompletionBackend::Options o;
  o.decode.temperature = 0.7;
  EXPECT_CODE(CompletionBackend(o), config);
}

TEST(Completion, TransientErrorsRetriedThenUnavailable) {
  std::atomic<int> hits{0};
  TestServer srv("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  CompletionBackend::Options o;
  o.endpoint = srv.url();
  o.model = "m";
  o.retry = {3, 0.01};
  CompletionBackend b(o);
  const QueryPoint q{{1, 1}, {1, 1}};
  const auto res = classify_batch(b, small_context(2), std::span(&q, 1));
  EXPECT_EQ(res[0].error, ErrorCode::backend_unavailable);
  EXPECT_EQ(hits.load(), 3);
}

TEST(Completion, ClientErrorIsNotRetried) {
  std::atomic<int> hits{0};
  TestServer srv("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 400;
  });
  CompletionBackend::Options o;
  o.endpoint = srv.url();
  o.model = "m";
  o.retry = {3, 0.01};
  EXPECT_CODE(classify_query(CompletionBackend(o), small_context(2), {{1, 1}, {1, 1}}), protocol);
  EXPECT_EQ(hits.load(), 1);
}

TEST(Completion, UnreachableEndpoint) {
  CompletionBackend::Options o;
  o.endpoint = "http://127.0.0.1:1";
  o.model = "m";
  o.retry = {2, 0.01};
  EXPECT_CODE(classify_query(CompletionBackend(o), small_context(2), {{1, 1}, {1, 1}}), backend_unavailable);
}

namespace {

/// Answers the numeric protocol with a logistic regression fitted on the
/// request's context.
TestServer::Handler logreg_server(std::atomic<int>* hits = nullptr) {
  return [hits](const httplib::Request& req, httplib::Response& res) {
    if (hits) ++*hits;
    const auto body = nlohmann::json::parse(req.body);
    std::vector<LabeledPoint> ctx;
    for (const auto& e : body.at("context")) {
      const Point x = e.at("x").get<Point>();
      ctx.push_back({x, x, e.at("y").get<int>()});
    }
    const int k = body.at("num_classes").get<int>();
    nlohmann::json rows = nlohmann::json::array();
    if (!ctx.empty()) {
      const auto model = baselines::fit_model(baselines::classifier_from_name("logreg"), ctx, k);
      for (const auto& q : body.at("queries")) rows.push_back(model.scores(q.get<Point>()).scores);
    }
    res.set_content(nlohmann::json{{"logits", rows}}.dump(), "application/json");
  };
}

}  // namespace

TEST(Numeric, ShapesAndNormalization) {
  std::atomic<int> hits{0};
  TestServer srv("/predict", logreg_server(&hits));
  NumericBackend::Options o;
  o.endpoint = srv.url();
  NumericBackend b(o);
  const ProbeContext ctx = small_context(8);
  const auto q = queries(3);
  const auto rows = numeric_classify(b, ctx, q);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    ASSERT_EQ(r.scores.size(), 2u);
    const auto p = softmax(r.scores);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-9);
    EXPECT_EQ(r.source, ScoreSource::numeric_head);
  }
  EXPECT_TRUE(numeric_classify(b, ctx, {}).empty());
  EXPECT_EQ(hits.load(), 1);
}

TEST(Numeric, ChunkedRequests) {
  std::atomic<int> hits{0};
  TestServer srv("/predict", logreg_server(&hits));
  NumericBackend::Options o;
  o.endpoint = srv.url();
  o.chunk_size = 100;
  EXPECT_EQ(classify_batch(NumericBackend(o), small_context(), queries(250)).size(), 250u);
  EXPECT_EQ(hits.load(), 3);
}

TEST(Numeric, WireRequestShape) {
  const ProbeContext ctx = small_context(2);
  const auto q = queries(2);
  const auto j = numeric_wire::request(ctx, q);
  EXPECT_EQ(j.at("num_classes"), 2);
  EXPECT_EQ(j.at("context").size(), 2u);
  EXPECT_EQ(j.at("context")[0].at("x"), nlohmann::json(ctx.examples[0].raw));
  EXPECT_EQ(j.at("context")[1].at("y"), 1);
  EXPECT_EQ(j.at("queries")[1], nlohmann::json(q[1].raw));
}

TEST(Numeric, MalformedRepliesRejected) {
  using numeric_wire::parse_reply;
  EXPECT_CODE(parse_reply(nlohmann::json::object(), 1, 2), protocol);
  EXPECT_CODE(parse_reply(nlohmann::json::parse(R"({"logits":[[1,2]]})"), 2, 2), protocol);
  EXPECT_CODE(parse_reply(nlohmann::json::parse(R"({"logits":[[1,2,3]]})"), 1, 2), protocol);
  EXPECT_CODE(parse_reply(nlohmann::json::parse(R"({"logits":[[1,"a"]]})"), 1, 2), protocol);
  EXPECT_EQ(parse_reply(nlohmann::json::parse(R"({"logits":[[1,2]]})"), 1, 2)[0], (std::vector<double>{1, 2}));
}

TEST(Baseline, BackendIdentityIncludesSeedAndModel) {
  BaselineBackend a(baselines::classifier_from_name("mlp"), 1);
  BaselineBackend b(baselines::classifier_from_name("mlp"), 2);
  BaselineBackend c(baselines::classifier_from_name("knn"), 1);
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}
