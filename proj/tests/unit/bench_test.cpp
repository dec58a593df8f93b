#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "evidx/bench/dataset.hpp"
#include "evidx/bench/report.hpp"
#include "evidx/bench/scenario.hpp"
#include "test_support.hpp"

namespace evidx::bench {
namespace {

using evidx::testing::TempDir;
namespace fs = std::filesystem;

DatasetSpec tiny(std::uint64_t events, std::uint64_t seed = 1) {
  DatasetSpec s = DatasetSpec::small();
  s.events = events;
  s.runs = 4;
  s.payload_bytes = 400;
  s.seed = seed;
  return s;
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).string();
    // The manifest records absolute paths and access times.
    if (rel.find("pool/") == 0 || rel.find("catalog.lock") != std::string::npos) continue;
    out[rel] = evidx::testing::read_bytes(e.path());
  }
  return out;
}

TEST(DatasetSpec, TextRoundTrip) {
  DatasetSpec s = DatasetSpec::desk();
  s.flag_probability[9] = 0.125;
  s.seed = 1234567;
  EXPECT_EQ(DatasetSpec::from_text(s.to_text()), s);
  EXPECT_EQ(DatasetSpec::desk().events, 50000u);
  EXPECT_EQ(DatasetSpec::desk().payload_bytes, 25000u);
}

TEST(DatasetSpec, Validation) {
  DatasetSpec s = tiny(10);
  s.runs = 0;
  EXPECT_THROW(s.validate(), Error);
  s = tiny(10);
  s.payload_bytes = 10;
  EXPECT_THROW(s.validate(), Error);
  s = tiny(10);
  s.flag_probability[0] = 0.3;  // flag 0 follows the summary
  EXPECT_THROW(s.validate(), Error);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(5), b(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Summary, GeneratedValuesAreValidAndFloat32Exact) {
  Rng rng(3);
  const DatasetSpec spec = tiny(1);
  for (int i = 0; i < 2000; ++i) {
    const PhysicsSummary s = generate_summary(rng, spec);
    ASSERT_TRUE(summary_valid(s));
    EXPECT_EQ(s.et_total, static_cast<double>(static_cast<float>(s.et_total)));
    EXPECT_EQ(s.vtx_z, static_cast<double>(static_cast<float>(s.vtx_z)));
  }
}

TEST(Generate, EmptyDataset) {
  TempDir tmp;
  const GenerateStats st = generate_dataset(tiny(0), tmp / "ds");
  EXPECT_EQ(st.events, 0u);
  const DatasetPaths p{tmp / "ds"};
  EXPECT_TRUE(load_directory(p.directory()).entries.empty());
  EXPECT_EQ(Federation::open(p.tagdb()).record_count(), 0u);
}

TEST(Generate, SameSpecIsByteIdentical) {
  TempDir tmp;
  generate_dataset(tiny(1500, 9), tmp / "a");
  generate_dataset(tiny(1500, 9), tmp / "b");
  const auto a = snapshot(tmp / "a");
  const auto b = snapshot(tmp / "b");
  EXPECT_GE(a.size(), 4u);
  EXPECT_EQ(a, b);
  generate_dataset(tiny(1500, 10), tmp / "c");
  EXPECT_NE(snapshot(tmp / "c").at("tape/events.evst"), a.at("tape/events.evst"));
}

TEST(Generate, RefusesToOverwrite) {
  TempDir tmp;
  generate_dataset(tiny(10), tmp / "a");
  try {
    generate_dataset(tiny(10), tmp / "a");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kAlreadyExists);
  }
}

TEST(Generate, Flag3WithinBinomialBound) {
  TempDir tmp;
  DatasetSpec spec = tiny(10000, 1);
  spec.payload_bytes = kPhysicsSummarySize;
  spec.non_event_fraction = 0;
  generate_store(spec, tmp / "ds");
  const EventDirectory dir = build_dataset_directory(tmp / "ds");
  ASSERT_EQ(dir.entries.size(), 10000u);
  const double n = 10000, p = 0.5;
  const double sigma = std::sqrt(n * p * (1 - p));
  const double got = static_cast<double>(count_selected(dir, FlagExpr::flag(3)));
  EXPECT_LE(std::fabs(got - n * p), 3 * sigma) << got;
  // Flag 5 at 1/20 and flag 0 following the electron probability.
  const double got5 = static_cast<double>(count_selected(dir, FlagExpr::flag(5)));
  EXPECT_LE(std::fabs(got5 - n * 0.05), 3 * std::sqrt(n * 0.05 * 0.95)) << got5;
  const double got0 = static_cast<double>(count_selected(dir, FlagExpr::flag(0)));
  EXPECT_LE(std::fabs(got0 - n * spec.electron_probability),
            3 * std::sqrt(n * spec.electron_probability * (1 - spec.electron_probability)))
      << got0;
}

TEST(Generate, NonEventFillerPresent) {
  TempDir tmp;
  DatasetSpec spec = tiny(2000, 4);
  const GenerateStats st = generate_dataset(spec, tmp / "ds");
  const EventDirectory dir = load_directory(DatasetPaths{tmp / "ds"}.directory());
  EXPECT_EQ(dir.metas.size(), st.non_events);
  EXPECT_GT(st.non_events, 0u);
  EXPECT_EQ(dir.files.size(), 1u);
  EXPECT_EQ(dir.files[0].name, DatasetPaths::store_name());
}

class ScenarioTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    tmp_ = new TempDir("evidx-sc");
    generate_dataset(tiny(2000, 2), tmp_->path() / "ds");
  }
  static void TearDownTestSuite() {
    delete tmp_;
    tmp_ = nullptr;
  }
  static fs::path root() { return tmp_->path() / "ds"; }
  static TempDir* tmp_;
};
TempDir* ScenarioTest::tmp_ = nullptr;

TEST_F(ScenarioTest, CountsAreConsistentAcrossPaths) {
  ScenarioParams flag3;
  flag3.query = "flag(3)";
  const auto seq = run_scenario(root(), "sequential-read-all");
  const auto all = run_scenario(root(), "directory-no-selection");
  const auto sel = run_scenario(root(), "directory-select", flag3);
  const auto scan = run_scenario(root(), "directory-scan-only", flag3);
  const auto tag = run_scenario(root(), "tag-query-fetch", flag3);
  const auto only = run_scenario(root(), "tag-query-only", flag3);
  ScenarioParams et;
  et.query = "ET_TOTAL > 30";
  const auto fallback = run_scenario(root(), "directory-fallback", et);
  const auto tag_et = run_scenario(root(), "tag-query-fetch", et);

  EXPECT_EQ(seq.selected, 2000u);
  EXPECT_GT(seq.scanned, 2000u) << "non-event records are read too";
  EXPECT_EQ(all.read, 2000u);
  ScenarioParams everything;
  everything.query = "true";
  EXPECT_EQ(all.checksum, run_scenario(root(), "directory-select", everything).checksum);
  EXPECT_EQ(sel.selected, scan.selected);
  EXPECT_EQ(sel.selected, tag.selected);
  EXPECT_EQ(sel.checksum, tag.checksum);
  EXPECT_EQ(only.selected, tag.selected);
  EXPECT_EQ(scan.read, 0u);
  EXPECT_EQ(only.read, 0u);
  EXPECT_EQ(fallback.selected, tag_et.selected);
  EXPECT_EQ(fallback.read, 2000u);
  for (const auto* r : {&seq, &all, &sel, &scan, &tag, &only, &fallback, &tag_et}) {
    EXPECT_LE(r->selected, r->scanned) << r->scenario;
    EXPECT_GE(r->cpu_seconds, 0.0);
  }
}

TEST_F(ScenarioTest, Errors) {
  EXPECT_THROW(run_scenario(root(), "no-such-scenario"), Error);
  ScenarioParams p;
  p.query = "ET_TOTAL > 3";
  EXPECT_THROW(run_scenario(root(), "directory-select", p), Error);
  p.query = "XYZZY > 3";
  EXPECT_THROW(run_scenario(root(), "tag-query-only", p), Error);
}

TEST(VariableSweep, DistinctVariableCounts) {
  const TagSchema& s = TagSchema::builtin();
  for (std::uint32_t k = 0; k <= 6; ++k) {
    EXPECT_EQ(count_variables(parse_query(variable_sweep_query(k), s)), k);
  }
  EXPECT_THROW(variable_sweep_query(9), Error);
}

ScenarioResult result(const std::string& series, double x, std::uint64_t scanned, double cpu) {
  ScenarioResult r;
  r.scenario = "tag-query-only";
  r.label = "q";
  r.series = series;
  r.x = x;
  r.scanned = scanned;
  r.selected = scanned / 2;
  r.cpu_seconds = cpu;
  return r;
}

TEST(Report, CsvHasHeaderAndOneRowPerResult) {
  const std::vector<ScenarioResult> one = {result("", 0, 100, 0.5)};
  const std::string csv = emit_report(one, "csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.rfind("scenario,", 0), 0u);
}

TEST(Report, PlotdataHasOnePointPerSweepStep) {
  std::vector<ScenarioResult> rs;
  for (int k = 0; k <= 6; ++k) rs.push_back(result("fig5a", k, 1000, 0.1 + 0.01 * k));
  const std::string text = emit_report(rs, "plotdata");
  std::size_t points = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') ++points;
  }
  EXPECT_EQ(points, 7u);
  EXPECT_NE(text.find("# fig5a"), std::string::npos);
}

TEST(Report, TableAndErrors) {
  const std::vector<ScenarioResult> one = {result("", 0, 100, 0.5)};
  const std::string t = emit_report(one, "table");
  EXPECT_NE(t.find("Events scanned"), std::string::npos);
  EXPECT_NE(t.find("0.500"), std::string::npos);
  const std::vector<ScenarioResult> none;
  EXPECT_THROW(emit_report(none, "csv"), Error);
  EXPECT_THROW(emit_report(one, "xml"), Error);
}

}  // namespace
}  // namespace evidx::bench
