#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "iclb/experiment/config.hpp"
#include "iclb/experiment/render.hpp"
#include "iclb/experiment/report.hpp"
#include "iclb/experiment/runner.hpp"
#include "support.hpp"

using namespace iclb;
using namespace iclb::experiment;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("iclb_exp_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

json base_doc(const fs::path& out) {
  json d = json::parse(R"({
    "seed": 1,
    "grid_G": 10,
    "n_test": 20,
    "tasks": [{"name": "lin", "kind": "linear", "seeds": [0, 1], "n_points": 200, "class_sep": 1.5}],
    "backends": [{"name": "thr", "type": "mock", "script": "threshold"}],
    "sweep": {"n_context": [8, 16]}
  })");
  d["outputs"] = out.string();
  return d;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, ParsesMinimalDocument) {
  const auto cfg = parse_config(base_doc("o"));
  EXPECT_EQ(cfg.tasks.size(), 1u);
  EXPECT_EQ(cfg.tasks[0].seeds, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(cfg.n_context, (std::vector<int>{8, 16}));
  EXPECT_EQ(cfg.prompts.size(), 1u);
  EXPECT_EQ(cfg.grid_G, 10);
  ASSERT_TRUE(cfg.cache.has_value());
  EXPECT_EQ(*cfg.cache, fs::path("o") / "cache.jsonl");
}

TEST(Config, RejectsInvalidDocuments) {
  const std::vector<std::function<void(json&)>> cases{
      [](json& d) { d["tasks"][0]["seeds"] = json::array(); },
      [](json& d) { d["tasks"][0]["kind"] = "spiral"; },
      [](json& d) { d["sweep"]["n_context"] = {7}; },
      [](json& d) { d["sweep"]["n_context"] = {400}; },
      [](json& d) { d["backends"][0]["type"] = "oracle"; },
      [](json& d) { d["backends"].push_back(d["backends"][0]); },
      [](json& d) { d["backends"][0] = {{"name", "c"}, {"type", "completion"}, {"endpoint", "x"}, {"model", "m"}, {"temperature", 0.7}}; },
      [](json& d) { d["prompts"] = {{{"labels", {"Foo", "Foo"}}}}; },
      [](json& d) { d["unknown_key"] = 1; },
      [](json& d) { d["grid_G"] = 1; },
      [](json& d) { d["active"] = {{"schedule", {32, 16}}}; },
      [](json& d) { d.erase("backends"); },
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    json d = base_doc("o");
    cases[i](d);
    EXPECT_CODE(parse_config(d), config) << "case " << i;
  }
}

TEST(Config, ReportsAllErrorsAtOnce) {
  json d = base_doc("o");
  d["grid_G"] = 1;
  d["n_test"] = -2;
  try {
    parse_config(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("grid_G"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("n_test"), std::string::npos);
  }
}

TEST(Config, InterpolatesEnvironment) {
  ::setenv("ICLB_TEST_ENDPOINT", "http://127.0.0.1:9", 1);
  json d = base_doc("o");
  d["backends"] = {{{"name", "n"}, {"type", "numeric"}, {"endpoint", "${ICLB_TEST_ENDPOINT}/predict"}}};
  const auto cfg = parse_config(d);
  EXPECT_EQ(cfg.backends[0].params.at("endpoint"), "http://127.0.0.1:9/predict");
  d["backends"][0]["endpoint"] = "${ICLB_TEST_UNSET_VARIABLE}";
  ::unsetenv("ICLB_TEST_UNSET_VARIABLE");
  EXPECT_CODE(parse_config(d), config);
}

TEST(Config, OrderingSeedsExpandPrompts) {
  json d = base_doc("o");
  d["prompts"] = {{{"name", "foo"}, {"ordering_seeds", {1, 2, 3}}}, {{"name", "ab"}, {"labels", {"A", "B"}}}};
  const auto cfg = parse_config(d);
  ASSERT_EQ(cfg.prompts.size(), 4u);
  EXPECT_EQ(cfg.prompts[0].name, "foo-o1");
  EXPECT_EQ(cfg.prompts[2].prompt.ordering_seed, 3u);
  EXPECT_FALSE(cfg.prompts[3].prompt.ordering_seed.has_value());
}

TEST(Config, TomlMatchesJson) {
  const fs::path dir = fresh_dir("toml");
  std::ofstream(dir / "c.toml") << "seed = 1\ngrid_G = 10\nn_test = 20\noutputs = \"o\"\n"
                                   "[[tasks]]\nname = \"lin\"\nkind = \"linear\"\nseeds = [0, 1]\nn_points = 200\n"
                                   "class_sep = 1.5\n[[backends]]\nname = \"thr\"\ntype = \"mock\"\n"
                                   "script = \"threshold\"\n[sweep]\nn_context = [8, 16]\n";
  std::ofstream(dir / "c.json") << base_doc("o").dump();
  EXPECT_EQ(load_config(dir / "c.toml").source, load_config(dir / "c.json").source);
  std::ofstream(dir / "bad.toml") << "seed = = 1\n";
  EXPECT_CODE(load_config(dir / "bad.toml"), config);
  EXPECT_CODE(load_config(dir / "missing.toml"), config);
}

#ifdef ICLB_SOURCE_DIR
TEST(Config, DemoConfigIsValid) {
  const auto cfg = load_config(fs::path(ICLB_SOURCE_DIR) / "configs" / "demo.toml");
  EXPECT_EQ(cfg.tasks.size(), 2u);
  EXPECT_EQ(cfg.backends.size(), 3u);
  EXPECT_EQ(cfg.prompts.size(), 3u);
  ASSERT_TRUE(cfg.active.has_value());
  EXPECT_EQ(cfg.active->schedule.back(), 256);
}
#endif

TEST(Sweep, FullGridOfRunsAndResume) {
  const fs::path dir = fresh_dir("sweep");
  json d = base_doc(dir);
  d["tasks"] = {{{"name", "lin"}, {"kind", "linear"}, {"seeds", {0, 1, 2, 3, 4}}, {"n_points", 400}},
                {{"name", "circ"}, {"kind", "circle"}, {"seeds", {0, 1, 2, 3, 4}}, {"n_points", 400}},
                {{"name", "moon"}, {"kind", "moon"}, {"seeds", {0, 1, 2, 3, 4}}, {"n_points", 400}}};
  d["sweep"]["n_context"] = {8, 16, 32, 64, 128, 256};
  d["grid_G"] = 6;
  const auto cfg = parse_config(d);
  {
    Runner r(cfg);
    const auto s = r.run();
    EXPECT_EQ(s.planned, 90);
    EXPECT_EQ(s.records.size(), 90u);
    EXPECT_EQ(s.failed, 0);
    std::set<std::string> fps;
    for (const auto& rec : s.records) {
      EXPECT_EQ(rec.at("status"), "ok");
      fps.insert(rec.at("run_fingerprint").get<std::string>());
      EXPECT_TRUE(fs::exists(dir / rec.at("map_file").get<std::string>()));
      EXPECT_TRUE(fs::exists(dir / rec.at("svg_file").get<std::string>()));
    }
    EXPECT_EQ(fps.size(), 90u);
  }
  Runner again(cfg);
  const auto s2 = again.run();
  EXPECT_EQ(s2.records.size(), 0u);
  EXPECT_EQ(s2.skipped, 90);
  EXPECT_EQ(again.ledger().read().size(), 90u);
}

TEST(Sweep, CacheMakesRerunFreeOfUpstreamCalls) {
  const fs::path dir = fresh_dir("cache");
  const auto cfg = parse_config(base_doc(dir));
  Runner first(cfg);
  first.run();
  const std::size_t entries = first.cache()->size();
  EXPECT_GT(entries, 0u);
  fs::remove(dir / "ledger.jsonl");
  Runner second(cfg);
  const auto s = second.run();
  EXPECT_EQ(s.records.size(), 4u);
  EXPECT_EQ(second.cache()->size(), entries);
}

TEST(Sweep, UnreachableBackendFailsItsRunsOnly) {
  const fs::path dir = fresh_dir("unreachable");
  json d = base_doc(dir);
  d["backends"].push_back({{"name", "down"},
                           {"type", "completion"},
                           {"endpoint", "http://127.0.0.1:1/v1/completions"},
                           {"model", "m"},
                           {"retries", 1},
                           {"backoff_seconds", 0.0}});
  Runner r(parse_config(d));
  const auto s = r.run();
  EXPECT_EQ(s.planned, 8);
  EXPECT_EQ(s.failed, 4);
  for (const auto& rec : s.records) {
    if (rec.at("backend") == "down") {
      EXPECT_EQ(rec.at("status"), "failed");
      EXPECT_EQ(rec.at("error"), to_string(ErrorCode::backend_unavailable));
    } else {
      EXPECT_EQ(rec.at("status"), "ok");
    }
  }
  // Failed runs are retried on resume.
  Runner again(parse_config(d));
  EXPECT_EQ(again.run().records.size(), 4u);
}

TEST(Render, MapHasOneRectPerCellAndLegend) {
  DecisionMap m;
  m.grid = make_grid({0, 0}, {1, 1}, 50);
  m.label_names = {"Foo", "Bar"};
  m.labels.assign(2500, 0);
  for (std::size_t c = 0; c < 2500; c += 3) m.labels[c] = 1;
  m.labels[7] = kAbstain;
  const std::string svg = render_map(m);
  const auto open = svg.find("<g id=\"cells\"");
  const auto close = svg.find("</g>", open);
  const std::string cells = svg.substr(open, close - open);
  EXPECT_EQ(count(cells, "<rect"), 2500u);
  EXPECT_EQ(count(cells, "url(#hatch)"), 1u);
  EXPECT_NE(svg.find(">Foo</text>"), std::string::npos);
  EXPECT_NE(svg.find(">Bar</text>"), std::string::npos);
  EXPECT_EQ(svg, render_map(m));
}

TEST(Render, EscapesLabels) {
  DecisionMap m;
  m.grid = make_grid({0, 0}, {1, 1}, 2);
  m.label_names = {"<a&b>", "\"q\""};
  m.labels.assign(4, 0);
  const std::string svg = render_map(m);
  EXPECT_NE(svg.find("&lt;a&amp;b&gt;"), std::string::npos);
  EXPECT_EQ(svg.find("<a&b>"), std::string::npos);
}

TEST(Render, CurveBandOnlyWithStandardError) {
  const auto with = render_curves({{"a", accuracy_curve({{8, 0.6}, {8, 0.7}, {16, 0.8}, {16, 0.9}})}});
  EXPECT_EQ(count(with.svg, "class=\"band\""), 1u);
  const auto without = render_curves({{"a", accuracy_curve({{8, 0.6}, {16, 0.8}})}});
  EXPECT_EQ(count(without.svg, "class=\"band\""), 0u);
  EXPECT_EQ(without.csv.at("a"), "n_context,mean,se,n_seeds\n8," + map_io::fmt_double(0.6) + ",,1\n16," +
                                     map_io::fmt_double(0.8) + ",,1\n");
}

TEST(Report, SummarizesLedger) {
  const fs::path dir = fresh_dir("report");
  json d = base_doc(dir);
  d["backends"].push_back({{"name", "lr"}, {"type", "baseline"}, {"model", "logreg"}});
  Runner r(parse_config(d));
  r.run();
  const auto records = r.ledger().read();
  const auto figs = write_curves(records, dir);
  ASSERT_EQ(figs.size(), 1u);
  EXPECT_TRUE(fs::exists(figs[0]));
  const std::string md = report(records, dir, figs);
  EXPECT_NE(md.find("| thr | 4 | 0 |"), std::string::npos) << md;
  EXPECT_NE(md.find("| lr | 4 | 0 |"), std::string::npos) << md;
  EXPECT_NE(md.find("## Accuracy by context size"), std::string::npos);
  EXPECT_CODE(report({}, dir), empty_ledger);
}

TEST(Report, LatestRecordPrefersSuccess) {
  const std::vector<json> recs{{{"run_fingerprint", "a"}, {"status", "failed"}},
                               {{"run_fingerprint", "a"}, {"status", "ok"}},
                               {{"run_fingerprint", "a"}, {"status", "failed"}},
                               {{"run_fingerprint", "b"}, {"status", "failed"}}};
  const auto latest = latest_records(recs);
  ASSERT_EQ(latest.size(), 2u);
  EXPECT_EQ(latest[0].at("status"), "ok");
  EXPECT_EQ(latest[1].at("status"), "failed");
}

TEST(Ledger, SkipsCorruptLines) {
  const fs::path dir = fresh_dir("ledger");
  Ledger l(dir / "ledger.jsonl");
  l.append({{"a", 1}});
  std::ofstream(dir / "ledger.jsonl", std::ios::app) << "{not json\n";
  l.append({{"a", 2}});
  EXPECT_EQ(l.read().size(), 2u);
}

#ifdef ICLB_CLI
namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ICLB_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("cli");
  const fs::path log = dir / "log.txt";
  EXPECT_EQ(run_cli("--help", log), 0);
  EXPECT_EQ(run_cli("", log), 2);
  EXPECT_EQ(run_cli("frobnicate", log), 2);
  std::ofstream(dir / "bad.json") << R"({"tasks": []})";
  EXPECT_EQ(run_cli("sweep --config " + (dir / "bad.json").string(), log), 2);
  EXPECT_EQ(run_cli("report --out " + (dir / "empty").string(), log), 1);
  EXPECT_EQ(run_cli("probe --backend numeric:http://127.0.0.1:1/predict --grid 4 --n-context 8 --n-test 0 --out " +
                        (dir / "p").string(),
                    log),
            3);
}

TEST(Cli, ProbeSweepReport) {
  const fs::path dir = fresh_dir("cli_flow");
  const fs::path log = dir / "log.txt";
  ASSERT_EQ(run_cli("probe --backend mock:threshold --grid 12 --n-context 16 --n-test 20 --out " +
                        (dir / "p").string(),
                    log),
            0)
      << slurp(log);
  EXPECT_TRUE(fs::exists(dir / "p.map.csv"));
  EXPECT_TRUE(fs::exists(dir / "p.svg"));
  std::ofstream(dir / "c.json") << base_doc(dir / "out").dump();
  ASSERT_EQ(run_cli("sweep --config " + (dir / "c.json").string(), log), 0) << slurp(log);
  EXPECT_NE(slurp(log).find("\"executed\":4"), std::string::npos) << slurp(log);
  EXPECT_TRUE(fs::exists(dir / "out" / "report.md"));
  ASSERT_EQ(run_cli("sweep --config " + (dir / "c.json").string(), log), 0);
  EXPECT_NE(slurp(log).find("\"skipped\":4"), std::string::npos) << slurp(log);
  ASSERT_EQ(run_cli("report --out " + (dir / "out").string(), log), 0);
  EXPECT_NE(slurp(log).find("# Decision boundary report"), std::string::npos);
  ASSERT_EQ(run_cli("gen --kind moon --seed 3 --n-context 32 --n-test 20 --out " + (dir / "tasks").string(), log), 0);
  ASSERT_EQ(run_cli("active --task " + (dir / "tasks" / "moon-s3.json").string() +
                        " --backend mock:soft_threshold --grid 40 --out " + (dir / "act").string(),
                    log),
            0)
      << slurp(log);
  const auto manifest = json::parse(slurp(dir / "act" / "manifest.json"));
  EXPECT_EQ(manifest.at("steps").size(), 4u);
  EXPECT_EQ(manifest.at("steps")[3].at("context_size"), 256);
  EXPECT_EQ(run_cli("active --task " + (dir / "tasks" / "moon-s3.json").string() +
                        " --backend baseline:knn --grid 40 --out " + (dir / "act2").string(),
                    log),
            1)
      << slurp(log);
}
#endif
