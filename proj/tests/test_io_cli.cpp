#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hmln/cli.hpp"
#include "hmln/io.hpp"
#include "hmln/pipeline.hpp"

namespace hmln {
namespace {

namespace fs = std::filesystem;

const fs::path kFixtures = HMLN_FIXTURES;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hmln_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string parse_error(const std::string& text) {
  std::istringstream in(text);
  try {
    io::parse_dataset(in, "data.jsonl");
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

TEST(Dataset, EmptyFileIsEmptyList) {
  std::istringstream in("");
  EXPECT_TRUE(io::parse_dataset(in, "empty").empty());
}

TEST(Dataset, OutOfRangeGNamesField) {
  const std::string msg = parse_error(
      R"({"schema_version":1,"instance_id":"a","split":"train","predicates":[{"subject":"man","relation":"on","object":"horse","g":0.1}]})"
      "\n"
      R"({"schema_version":1,"instance_id":"b","split":"train","predicates":[{"subject":"man","relation":"on","object":"horse","g":1.5}]})");
  EXPECT_NE(msg.find("data.jsonl:2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("predicates[0].g"), std::string::npos) << msg;
}

TEST(Dataset, MalformedLineReportsLineNumber) {
  const std::string msg = parse_error("\n{not json}\n");
  EXPECT_NE(msg.find("data.jsonl:2"), std::string::npos) << msg;
}

TEST(Dataset, DuplicateIdAndUnknownFieldRejected) {
  const std::string rec =
      R"({"schema_version":1,"instance_id":"a","split":"train","predicates":[]})";
  EXPECT_NE(parse_error(rec + "\n" + rec).find("duplicate instance_id"), std::string::npos);
  EXPECT_NE(parse_error(R"({"schema_version":1,"instance_id":"a","split":"train","predicates":[],"extra":1})")
                .find("unknown field 'extra'"),
            std::string::npos);
  EXPECT_NE(parse_error(R"({"schema_version":2,"instance_id":"a","split":"train","predicates":[]})")
                .find("schema_version"),
            std::string::npos);
}

TEST(Dataset, ProvenanceHeaderSkipped) {
  std::istringstream in(
      R"({"provenance":{"clip":"vit-b-32"}})"
      "\n"
      R"({"schema_version":1,"instance_id":"a","split":"test","predicates":[]})");
  const auto recs = io::parse_dataset(in, "x");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].split, io::Split::kTest);
}

TEST(Dataset, FixtureRoundTripsByteIdentically) {
  for (const char* name : {"train.jsonl", "test.jsonl"}) {
    const auto records = io::load_dataset(kFixtures / name);
    std::ostringstream out;
    io::save_dataset(out, records);
    EXPECT_EQ(out.str(), slurp(kFixtures / name)) << name;
  }
  EXPECT_EQ(io::load_dataset(kFixtures / "train.jsonl").size(), 12u);
}

TEST(Similarity, AsymmetryAndRangeRejected) {
  std::istringstream asym("a\tb\t0.5\nb\ta\t0.4\n");
  EXPECT_THROW(io::parse_similarity(asym, "s"), ValidationError);
  std::istringstream range("a\tb\t1.5\n");
  EXPECT_THROW(io::parse_similarity(range, "s"), ValidationError);
  std::istringstream fields("a\tb\n");
  EXPECT_THROW(io::parse_similarity(fields, "s"), ValidationError);
}

TEST(Similarity, FixtureRoundTrip) {
  const auto table = io::load_similarity(kFixtures / "similarity.tsv");
  EXPECT_EQ(table.entries().size(), 66u);
  EXPECT_EQ(table.lookup("man", "boy"), 0.8);
  EXPECT_EQ(table.lookup("boy", "man"), 0.8);
  EXPECT_EQ(table.lookup("kite", "kite"), 1.0);
  std::ostringstream out;
  io::save_similarity(out, table);
  std::istringstream in(out.str());
  EXPECT_EQ(io::parse_similarity(in, "copy").entries(), table.entries());
}

TEST(Model, RoundTripIsLossless) {
  const auto train = io::load_dataset(kFixtures / "train.jsonl");
  HmlnModel m = build_model(grounding_instances(train));
  std::vector<double> w;
  for (std::size_t k = 0; k < m.features().size(); ++k) w.push_back(0.1 / (k + 3.0));
  m.set_weights(w);
  std::ostringstream a;
  io::save_model(a, m);
  const HmlnModel back = io::parse_model(io::json::parse(a.str()), "mem");
  EXPECT_EQ(back.atoms().size(), m.atoms().size());
  for (std::size_t i = 0; i < m.num_atoms(); ++i) {
    EXPECT_EQ(back.atoms()[i].id, m.atoms()[i].id);
    EXPECT_EQ(back.atoms()[i].g, m.atoms()[i].g);
  }
  EXPECT_EQ(back.features(), m.features());
  EXPECT_EQ(back.epsilon(), m.epsilon());
  std::ostringstream b;
  io::save_model(b, back);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Config, RelativePathsAndOverrides) {
  const auto c = io::load_config(kFixtures / "config.json");
  EXPECT_EQ(c.train, kFixtures / "train.jsonl");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.sampler.total_samples, 2000u);
  EXPECT_EQ(c.clip_mode, ClipMode::kCap);
  EXPECT_THROW(io::parse_config(io::json::parse(R"({"bogus":1})"), "."), ValidationError);
  EXPECT_THROW(io::parse_config(io::json::parse(R"({"sampler":{"thinning_interval":0}})"), "."),
               ValidationError);
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const std::string kConfig = (kFixtures / "config.json").string();

TEST(Cli, LearnWritesModel) {
  const fs::path model = scratch("learned.json");
  fs::remove(model);
  const auto r = run({"learn", "--config", kConfig, "--out", model.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(model));
  EXPECT_NO_THROW(io::load_model(model));
}

TEST(Cli, MapWithoutModelFails) {
  const auto r = run({"map", "--config", kConfig});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--model"), std::string::npos) << r.err;
}

TEST(Cli, UnknownFlagPrintsUsage) {
  const auto r = run({"--frobnicate", "ground"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_EQ(run({}).code, 1);
}

TEST(Cli, MissingFileIsValidationError) {
  const auto r = run({"map", "--config", kConfig, "--model", "/nonexistent/model.json"});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, GuardRefusalExitsTwo) {
  const fs::path model = scratch("guard_model.json");
  ASSERT_EQ(run({"ground", "--config", kConfig, "--out", model.string()}).code, 0);
  auto cfg = io::json::parse(slurp(kConfig));
  for (const char* key : {"train", "test", "similarity"}) {
    cfg[key] = (kFixtures / cfg[key].get<std::string>()).string();
  }
  cfg["map"]["max_binary_vars"] = 1;
  const fs::path cfg_path = scratch("guard_config.json");
  std::ofstream(cfg_path) << cfg.dump();
  const auto r = run({"map", "--config", cfg_path.string(), "--model", model.string()});
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST(Cli, BacktraceReportMatchesLibrary) {
  const fs::path model = scratch("bt_model.json");
  const fs::path bt = scratch("bt.json");
  const fs::path report = scratch("report.json");
  ASSERT_EQ(run({"learn", "--config", kConfig, "--out", model.string()}).code, 0);
  auto r = run({"backtrace", "--config", kConfig, "--model", model.string(), "--seed",
                "19", "--out", bt.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"report", "--backtrace", bt.string(), "--out", report.string()});
  ASSERT_EQ(r.code, 0) << r.err;

  const auto c = io::load_config(kConfig);
  const auto train = io::load_dataset(c.train);
  const auto test = io::load_dataset(c.test);
  const auto sim = io::load_similarity(c.similarity);
  BacktraceConfig b;
  b.sampler = c.sampler;
  const auto direct = backtrace_all(io::load_model(model), test, train, sim, b, 19);

  const auto rep = io::json::parse(slurp(report));
  EXPECT_EQ(rep["seed"], 19);
  ASSERT_EQ(rep["records"].size(), direct.size());
  for (std::size_t k = 0; k < direct.size(); ++k) {
    const auto& rec = rep["records"][k];
    if (!direct[k].result) {
      EXPECT_TRUE(rec["densities"].empty());
      continue;
    }
    const auto& per = direct[k].result->per_example;
    ASSERT_EQ(rec["densities"].size(), per.size());
    for (std::size_t i = 0; i < per.size(); ++i) {
      EXPECT_EQ(rec["densities"][i]["example_id"], per[i].example_id);
      EXPECT_EQ(rec["densities"][i]["density"].get<double>(), io::round_sig9(per[i].density));
    }
    EXPECT_EQ(rec["maximal"], direct[k].result->maximal);
    EXPECT_EQ(rec["minimal"], direct[k].result->minimal);
  }
}

TEST(Cli, OutputsAreByteStable) {
  const fs::path m1 = scratch("stable_m1.json");
  const fs::path m2 = scratch("stable_m2.json");
  ASSERT_EQ(run({"learn", "--config", kConfig, "--out", m1.string()}).code, 0);
  ASSERT_EQ(run({"learn", "--config", kConfig, "--out", m2.string()}).code, 0);
  EXPECT_EQ(slurp(m1), slurp(m2));
  const auto a = run({"backtrace", "--config", kConfig, "--model", m1.string()});
  const auto b = run({"backtrace", "--config", kConfig, "--model", m2.string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
}

TEST(Cli, MapAndExportLp) {
  const fs::path model = scratch("map_model.json");
  ASSERT_EQ(run({"learn", "--config", kConfig, "--out", model.string()}).code, 0);
  const auto r = run({"map", "--config", kConfig, "--model", model.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = io::json::parse(r.out);
  EXPECT_EQ(j["records"].size(), 4u);
  EXPECT_EQ(j["records"][0]["proof"], "optimal");
  const auto lp = run({"export-lp", "--config", kConfig, "--model", model.string(),
                       "--instance", "t1"});
  ASSERT_EQ(lp.code, 0) << lp.err;
  EXPECT_NE(lp.out.find("Subject To"), std::string::npos);
  EXPECT_EQ(run({"export-lp", "--config", kConfig, "--model", model.string(),
                 "--instance", "nope"})
                .code,
            1);
}

}  // namespace
}  // namespace hmln
