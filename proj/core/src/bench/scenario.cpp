#include "evidx/bench/scenario.hpp"

#include <time.h>

#include <chrono>
#include <functional>

#include "evidx/bench/dataset.hpp"
#include "evidx/query.hpp"
#include "evidx/tag_db.hpp"
#include "le.hpp"

namespace evidx::bench {

namespace fs = std::filesystem;

namespace {

std::uint64_t fold(const std::vector<std::uint8_t>& payload, std::uint64_t h) {
  const std::uint8_t* p = payload.data();
  std::size_t i = 0;
  for (; i + 8 <= payload.size(); i += 8) h = (h ^ le::get_u64(p + i)) * 0x100000001B3ull;
  for (; i < payload.size(); ++i) h = (h ^ p[i]) * 0x100000001B3ull;
  return h;
}

double wall_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

using Body = std::function<void(ScenarioResult&)>;

ScenarioResult timed(const std::string& name, const ScenarioParams& params, const Body& body) {
  ScenarioResult best;
  const std::uint32_t repeat = std::max<std::uint32_t>(1, params.repeat);
  for (std::uint32_t i = 0; i < repeat; ++i) {
    ScenarioResult r;
    r.scenario = name;
    r.label = params.label.empty() ? params.query : params.label;
    r.series = params.series;
    r.x = params.x;
    const double c0 = process_cpu_seconds();
    const double w0 = wall_seconds();
    body(r);
    r.cpu_seconds = process_cpu_seconds() - c0;
    r.wall_seconds = wall_seconds() - w0;
    if (i == 0 || r.cpu_seconds < best.cpu_seconds) best = r;
  }
  return best;
}

void drain(FetchCursor& cursor, ScenarioResult& r) {
  FetchedEvent ev;
  while (cursor.next(ev)) {
    if (!ev.ok()) throw *ev.error;
    r.checksum = fold(ev.record.payload, r.checksum);
    ++r.read;
  }
}

}  // namespace

double process_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
}

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names = {
      "sequential-read-all", "directory-no-selection", "directory-select", "directory-scan-only",
      "directory-fallback",  "tag-query-fetch",        "tag-query-only"};
  return names;
}

std::string variable_sweep_query(std::uint32_t k) {
  static const char* terms[] = {"ET_TOTAL >= 0",       "E_TOTAL >= 0",   "MISS_ET >= 0",
                                "E_MINUS_PZ >= 0",     "VTX_Z > -1e6",   "N_PRIM_TRK >= 0",
                                "LPS_XL >= 0",         "FNC_E >= 0"};
  if (k > std::size(terms)) {
    throw Error(Errc::kOutOfRange, "variable sweep supports at most " + std::to_string(std::size(terms)) + " variables");
  }
  if (k == 0) return "true";
  std::string q = terms[0];
  for (std::uint32_t i = 1; i < k; ++i) q += std::string(" and ") + terms[i];
  return q;
}

ScenarioResult run_scenario(const fs::path& dataset, const std::string& scenario,
                            const ScenarioParams& params) {
  const DatasetPaths paths{dataset};
  const TagSchema& schema = TagSchema::builtin();

  if (scenario == "tag-query-only") {
    const fs::path fed_dir = params.federation.empty() ? paths.tagdb() : params.federation;
    const QueryAST ast = parse_query(params.query, schema);
    return timed(scenario, params, [&](ScenarioResult& r) {
      const Federation fed = Federation::open(fed_dir);
      QueryStats stats;
      fed.count(ast, std::nullopt, &stats);
      r.scanned = stats.scanned;
      r.selected = stats.matched;
    });
  }

  if (scenario == "sequential-read-all") {
    StoreReader store = open_dataset_store(dataset);
    return timed(scenario, params, [&](ScenarioResult& r) {
      store.rewind();
      EventRecord rec;
      while (store.next_record(rec)) {
        ++r.scanned;
        ++r.read;
        if (rec.is_event()) ++r.selected;
        r.checksum = fold(rec.payload, r.checksum);
      }
    });
  }

  if (scenario == "directory-no-selection") {
    StoreReader store = open_dataset_store(dataset);
    return timed(scenario, params, [&](ScenarioResult& r) {
      const EventDirectory dir = load_directory(paths.directory());
      r.scanned = dir.entries.size();
      r.selected = dir.entries.size();
      FetchCursor cursor = fetch(dir.entries, store);
      drain(cursor, r);
    });
  }

  if (scenario == "directory-select" || scenario == "directory-scan-only") {
    const auto expr = to_flag_expr(parse_query(params.query, schema));
    if (!expr) {
      throw Error(Errc::kInvalidArgument, scenario + " needs a query of OFFLINE flags only: " + params.query);
    }
    const bool do_fetch = scenario == "directory-select";
    std::optional<StoreReader> store;
    if (do_fetch) store.emplace(open_dataset_store(dataset));
    return timed(scenario, params, [&](ScenarioResult& r) {
      const EventDirectory dir = load_directory(paths.directory());
      const std::vector<DirEntry> sel = select(dir, *expr);
      r.scanned = dir.entries.size();
      r.selected = sel.size();
      if (do_fetch) {
        FetchCursor cursor = fetch(sel, *store);
        drain(cursor, r);
      }
    });
  }

  if (scenario == "directory-fallback") {
    const QueryAST ast = parse_query(params.query, schema);
    const FlagFunction flag_fn = FlagModel(load_spec(dataset)).function();
    StoreReader store = open_dataset_store(dataset);
    return timed(scenario, params, [&](ScenarioResult& r) {
      const EventDirectory dir = load_directory(paths.directory());
      r.scanned = dir.entries.size();
      FetchCursor cursor = fetch(dir.entries, store);
      FetchedEvent ev;
      while (cursor.next(ev)) {
        if (!ev.ok()) throw *ev.error;
        r.checksum = fold(ev.record.payload, r.checksum);
        ++r.read;
        const TagRecord tag = derive_tag(ev.record, schema, flag_fn);
        if (evaluate(ast, tag.view())) ++r.selected;
      }
    });
  }

  if (scenario == "tag-query-fetch") {
    const QueryAST ast = parse_query(params.query, schema);
    StoreReader store = open_dataset_store(dataset);
    return timed(scenario, params, [&](ScenarioResult& r) {
      const Federation fed = Federation::open(paths.tagdb());
      QueryStats stats;
      const std::vector<TagHit> hits = fed.query(ast, std::nullopt, &stats);
      r.scanned = stats.scanned;
      r.selected = stats.matched;
      FetchCursor cursor = fetch_events(hits, store);
      drain(cursor, r);
    });
  }

  throw Error(Errc::kInvalidArgument, "unknown scenario '" + scenario + "'");
}

}  // namespace evidx::bench
