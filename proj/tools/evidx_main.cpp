// evidx: generate synthetic event datasets, build the directory and tag
// indexes, run selections and queries, benchmark the access paths and
// manage the two-tier filestore.

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "evidx/bench/dataset.hpp"
#include "evidx/bench/report.hpp"
#include "evidx/bench/scenario.hpp"
#include "evidx/event_directory.hpp"
#include "evidx/filestore.hpp"
#include "evidx/query.hpp"
#include "evidx/tag_db.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace evidx;
using namespace evidx::bench;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::kNotFound, "cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw Error(Errc::kUnwritablePath, "cannot write " + p.string());
}

std::optional<RunRange> parse_runs(const std::string& text) {
  if (text.empty()) return std::nullopt;
  RunRange r;
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      r.first = r.last = static_cast<std::uint32_t>(std::stoul(text));
    } else {
      if (colon > 0) r.first = static_cast<std::uint32_t>(std::stoul(text.substr(0, colon)));
      if (colon + 1 < text.size()) r.last = static_cast<std::uint32_t>(std::stoul(text.substr(colon + 1)));
    }
  } catch (const std::exception&) {
    throw Error(Errc::kInvalidArgument, "run range must look like A, A:B, A: or :B");
  }
  return r;
}

std::vector<std::string> query_texts(const std::string& query, const std::string& file) {
  if (!file.empty()) return read_query_file(file);
  return {query.empty() ? std::string("true") : query};
}

json to_json(const ScenarioResult& r) {
  return json{{"scenario", r.scenario}, {"label", r.label},         {"scanned", r.scanned},
              {"selected", r.selected}, {"read", r.read},           {"cpu_seconds", r.cpu_seconds},
              {"wall_seconds", r.wall_seconds}, {"checksum", r.checksum}, {"series", r.series},
              {"x", r.x}};
}

ScenarioResult from_json(const json& j) {
  ScenarioResult r;
  r.scenario = j.at("scenario").get<std::string>();
  r.label = j.value("label", "");
  r.scanned = j.at("scanned").get<std::uint64_t>();
  r.selected = j.at("selected").get<std::uint64_t>();
  r.read = j.value("read", std::uint64_t{0});
  r.cpu_seconds = j.at("cpu_seconds").get<double>();
  r.wall_seconds = j.value("wall_seconds", 0.0);
  r.checksum = j.value("checksum", std::uint64_t{0});
  r.series = j.value("series", "");
  r.x = j.value("x", 0.0);
  return r;
}

// Pool settings live next to the manifest so that later commands agree.
struct PoolSettings {
  std::uint64_t capacity = 0;
  double eviction_age_hours = 72;
  std::uint64_t latency_ms = 0;
};

PoolSettings load_pool_settings(const fs::path& pool) {
  const fs::path p = pool / "pool.json";
  if (!fs::exists(p)) throw Error(Errc::kNotFound, "no pool in " + pool.string() + " (run 'evidx fs init')");
  const json j = json::parse(read_file(p));
  return PoolSettings{j.at("capacity").get<std::uint64_t>(), j.at("eviction_age_hours").get<double>(),
                      j.at("staging_latency_ms").get<std::uint64_t>()};
}

FileStore open_pool(const fs::path& pool) {
  const PoolSettings s = load_pool_settings(pool);
  PoolConfig c;
  c.capacity = s.capacity;
  c.eviction_age = std::chrono::milliseconds(static_cast<std::int64_t>(s.eviction_age_hours * 3.6e6));
  c.staging_latency = std::chrono::milliseconds(s.latency_ms);
  return FileStore::open(pool, c);
}

std::string time_text(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event store indexing: directories, tag databases and access-path benchmarks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "evidx 0.1.0");

  // generate ---------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  fs::path gen_out;
  std::string profile = "desk";
  std::optional<std::uint64_t> g_events, g_seed, g_cap;
  std::optional<std::uint32_t> g_runs, g_payload, g_first_run;
  std::optional<double> g_nef, g_elec, g_et;
  std::vector<std::string> g_flags;
  bool store_only = false;
  gen->add_option("--out", gen_out, "Dataset directory")->required();
  gen->add_option("--profile", profile, "Base profile")->check(CLI::IsMember({"desk", "small"}));
  gen->add_option("--events", g_events, "Number of events");
  gen->add_option("--runs", g_runs, "Number of runs");
  gen->add_option("--payload-bytes", g_payload, "Payload bytes per record");
  gen->add_option("--seed", g_seed, "Random seed");
  gen->add_option("--non-event-fraction", g_nef, "Fraction of non-event records");
  gen->add_option("--electron-probability", g_elec, "Probability of an electron candidate");
  gen->add_option("--et-mean", g_et, "Mean of the transverse-energy spectrum (GeV)");
  gen->add_option("--flag-probability", g_flags, "Flag set probability as FLAG=P (repeatable)");
  gen->add_option("--first-run", g_first_run, "First run number");
  gen->add_option("--size-cap", g_cap, "Tag database file size cap (bytes)");
  gen->add_flag("--store-only", store_only, "Write only the store; build indexes later");

  // build-dir / build-tagdb ---------------------------------------------------
  auto* bdir = app.add_subcommand("build-dir", "Build the event directory of a dataset");
  fs::path bdir_ds;
  bdir->add_option("--dataset", bdir_ds, "Dataset directory")->required();
  auto* btag = app.add_subcommand("build-tagdb", "Build the tag federation of a dataset");
  fs::path btag_ds;
  btag->add_option("--dataset", btag_ds, "Dataset directory")->required();

  // select ---------------------------------------------------------------------
  auto* sel = app.add_subcommand("select", "Select events through the event directory");
  fs::path sel_ds, sel_dir;
  std::string sel_expr;
  bool sel_list = false;
  sel->add_option("--dataset", sel_ds, "Dataset directory");
  sel->add_option("--directory", sel_dir, "Directory file (instead of --dataset)");
  sel->add_option("--flags", sel_expr, "Flag expression, e.g. 'flag(3) and not flag(0)'")->required();
  sel->add_flag("--list", sel_list, "Print run, event and offset of every selected event");

  // query --------------------------------------------------------------------
  auto* qry = app.add_subcommand("query", "Query the tag federation");
  fs::path q_ds, q_tagdb;
  std::string q_text, q_file, q_runs;
  bool q_list = false, q_fetch = false;
  qry->add_option("--dataset", q_ds, "Dataset directory");
  qry->add_option("--tagdb", q_tagdb, "Federation directory (instead of --dataset)");
  qry->add_option("--query", q_text, "Query text");
  qry->add_option("--query-file", q_file, "File with one query per line");
  qry->add_option("--runs", q_runs, "Run range A:B");
  qry->add_flag("--list", q_list, "Print run, event and location of every hit");
  qry->add_flag("--fetch", q_fetch, "Read the selected events from the store (needs --dataset)");

  // export -------------------------------------------------------------------
  auto* exp = app.add_subcommand("export", "Export tag variables of matching events");
  fs::path e_ds, e_tagdb, e_out;
  std::string e_query = "true";
  std::vector<std::string> e_vars;
  char e_delim = ',';
  exp->add_option("--dataset", e_ds, "Dataset directory");
  exp->add_option("--tagdb", e_tagdb, "Federation directory (instead of --dataset)");
  exp->add_option("--vars", e_vars, "Variables to export")->delimiter(',');
  exp->add_option("--query", e_query, "Query text");
  exp->add_option("--delimiter", e_delim, "Field delimiter");
  exp->add_option("--out", e_out, "Output file (default stdout)");

  // bench --------------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "Run timed access-path scenarios");
  fs::path b_ds, b_out, b_work;
  std::vector<std::string> b_scen, b_suites;
  std::string b_query = "true";
  std::uint32_t b_repeat = 3;
  std::vector<std::uint64_t> b_sizes = {100000, 1000000};
  std::string b_format = "table";
  bench->add_option("--dataset", b_ds, "Dataset directory");
  bench->add_option("--scenario", b_scen, "Scenario name (repeatable)")
      ->check(CLI::IsMember(scenario_names()));
  bench->add_option("--query", b_query, "Query or flag expression for --scenario");
  bench->add_option("--suite", b_suites, "Preset: table1, table2, fig5a, fig5b")
      ->check(CLI::IsMember({"table1", "table2", "fig5a", "fig5b"}));
  bench->add_option("--repeat", b_repeat, "Repetitions per scenario (fastest kept)");
  bench->add_option("--sizes", b_sizes, "Federation sizes for fig5b")->delimiter(',');
  bench->add_option("--work", b_work, "Scratch directory for fig5b federations");
  bench->add_option("--out", b_out, "Write results as JSON");
  bench->add_option("--format", b_format, "Report format printed to stdout")
      ->check(CLI::IsMember({"table", "csv", "plotdata"}));

  // report -------------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "Format benchmark results");
  fs::path r_in;
  std::string r_format = "table";
  rep->add_option("--in", r_in, "Results JSON from 'evidx bench --out'")->required();
  rep->add_option("--format", r_format, "table, csv or plotdata")
      ->check(CLI::IsMember({"table", "csv", "plotdata"}));

  // fs -----------------------------------------------------------------------
  auto* fsc = app.add_subcommand("fs", "Manage the two-tier filestore");
  fsc->require_subcommand(1);
  fs::path pool;
  fsc->add_option("--pool", pool, "Pool directory")->required();
  auto* fs_init = fsc->add_subcommand("init", "Create a pool");
  std::uint64_t f_capacity = 0;
  double f_age = 72;
  std::uint64_t f_latency = 0;
  fs_init->add_option("--capacity", f_capacity, "Pool capacity in bytes")->required();
  fs_init->add_option("--eviction-age-hours", f_age, "Idle time before sweep evicts");
  fs_init->add_option("--staging-latency-ms", f_latency, "Added delay per staged file");
  auto* fs_reg = fsc->add_subcommand("register", "Register a slow-tier file");
  std::string f_name;
  fs::path f_path;
  bool f_pinned = false;
  fs_reg->add_option("name", f_name, "Dataset name")->required();
  fs_reg->add_option("path", f_path, "Slow-tier file")->required();
  fs_reg->add_flag("--pinned", f_pinned, "Never evict");
  auto* fs_req = fsc->add_subcommand("request", "Stage a dataset and print its pool path");
  fs_req->add_option("name", f_name, "Dataset name")->required();
  auto* fs_list = fsc->add_subcommand("list", "List registered datasets");
  auto* fs_sweep = fsc->add_subcommand("sweep", "Evict idle unpinned files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      DatasetSpec spec = profile == "small" ? DatasetSpec::small() : DatasetSpec::desk();
      if (g_events) spec.events = *g_events;
      if (g_runs) spec.runs = *g_runs;
      if (g_payload) spec.payload_bytes = *g_payload;
      if (g_seed) spec.seed = *g_seed;
      if (g_nef) spec.non_event_fraction = *g_nef;
      if (g_elec) spec.electron_probability = *g_elec;
      if (g_et) spec.et_mean = *g_et;
      if (g_first_run) spec.first_run = *g_first_run;
      if (g_cap) spec.size_cap = *g_cap;
      for (const auto& f : g_flags) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) throw Error(Errc::kInvalidArgument, "--flag-probability wants FLAG=P");
        spec.flag_probability[static_cast<std::uint32_t>(std::stoul(f.substr(0, eq)))] = std::stod(f.substr(eq + 1));
      }
      const GenerateStats st = store_only ? generate_store(spec, gen_out) : generate_dataset(spec, gen_out);
      std::printf("wrote %" PRIu64 " events and %" PRIu64 " non-event records (%" PRIu64 " bytes) to %s\n",
                  st.events, st.non_events, st.bytes, DatasetPaths{gen_out}.store().c_str());
      return 0;
    }
    if (*bdir) {
      const EventDirectory d = build_dataset_directory(bdir_ds);
      std::printf("%zu entries, %zu non-event records -> %s\n", d.entries.size(), d.metas.size(),
                  DatasetPaths{bdir_ds}.directory().c_str());
      return 0;
    }
    if (*btag) {
      build_dataset_tagdb(btag_ds);
      const Federation fed = Federation::open(DatasetPaths{btag_ds}.tagdb());
      std::printf("%" PRIu64 " records in %zu runs, %zu database files -> %s\n", fed.record_count(),
                  fed.runs().size(), fed.database_files().size(), fed.directory().c_str());
      return 0;
    }
    if (*sel) {
      if (sel_dir.empty() && sel_ds.empty()) throw Error(Errc::kInvalidArgument, "need --dataset or --directory");
      const fs::path path = sel_dir.empty() ? DatasetPaths{sel_ds}.directory() : sel_dir;
      const auto expr = to_flag_expr(parse_query(sel_expr, TagSchema::builtin()));
      if (!expr) throw Error(Errc::kInvalidArgument, "--flags accepts only flag tests, and, or, not");
      const EventDirectory dir = load_directory(path);
      const auto hits = select(dir, *expr);
      if (sel_list) {
        for (const auto& e : hits) std::printf("%u %u %" PRIu64 "\n", e.run, e.event, e.offset);
      }
      std::printf("selected %zu of %zu events: %s\n", hits.size(), dir.entries.size(), expr->to_string().c_str());
      return 0;
    }
    if (*qry) {
      if (q_tagdb.empty() && q_ds.empty()) throw Error(Errc::kInvalidArgument, "need --dataset or --tagdb");
      const Federation fed = Federation::open(q_tagdb.empty() ? DatasetPaths{q_ds}.tagdb() : q_tagdb);
      std::optional<StoreReader> store;
      if (q_fetch) {
        if (q_ds.empty()) throw Error(Errc::kInvalidArgument, "--fetch needs --dataset");
        store.emplace(open_dataset_store(q_ds));
      }
      for (const auto& text : query_texts(q_text, q_file)) {
        const QueryAST ast = parse_query(text, fed.schema());
        QueryStats stats;
        const auto hits = fed.query(ast, parse_runs(q_runs), &stats);
        if (q_list) {
          for (const auto& h : hits) {
            std::printf("%u %u %s %" PRIu64 "\n", h.run, h.event, h.location.file_id.c_str(), h.location.offset);
          }
        }
        std::uint64_t fetched = 0;
        if (store) {
          FetchCursor cursor = fetch_events(hits, *store);
          FetchedEvent ev;
          while (cursor.next(ev)) {
            if (!ev.ok()) std::fprintf(stderr, "evidx: %s\n", ev.error->what());
            else ++fetched;
          }
        }
        std::printf("%" PRIu64 " of %" PRIu64 " records match (%zu variables): %s", stats.matched,
                    stats.scanned, stats.variables, ast.to_string().c_str());
        if (store) std::printf(", %" PRIu64 " events fetched", fetched);
        std::printf("\n");
      }
      return 0;
    }
    if (*exp) {
      if (e_tagdb.empty() && e_ds.empty()) throw Error(Errc::kInvalidArgument, "need --dataset or --tagdb");
      const Federation fed = Federation::open(e_tagdb.empty() ? DatasetPaths{e_ds}.tagdb() : e_tagdb);
      const ExportTable table = fed.export_columns(e_vars, parse_query(e_query, fed.schema()));
      if (e_out.empty()) {
        write_delimited(table, std::cout, e_delim);
      } else {
        std::ofstream out(e_out);
        write_delimited(table, out, e_delim);
        if (!out) throw Error(Errc::kUnwritablePath, "cannot write " + e_out.string());
      }
      return 0;
    }
    if (*bench) {
      std::vector<ScenarioResult> results;
      auto run = [&](const std::string& scenario, const std::string& query, const std::string& label = {},
                     const std::string& series = {}, double x = 0, const fs::path& federation = {}) {
        ScenarioParams p;
        p.query = query;
        p.repeat = b_repeat;
        p.label = label;
        p.series = series;
        p.x = x;
        p.federation = federation;
        results.push_back(run_scenario(b_ds, scenario, p));
        std::fprintf(stderr, "%-24s %-40s %.3f s\n", scenario.c_str(), results.back().label.c_str(),
                     results.back().cpu_seconds);
      };
      auto need_dataset = [&] {
        if (b_ds.empty()) throw Error(Errc::kInvalidArgument, "this suite needs --dataset");
      };
      for (const auto& s : b_scen) {
        if (s != "tag-query-only") need_dataset();
        run(s, b_query);
      }
      for (const auto& suite : b_suites) {
        if (suite == "table1") {
          need_dataset();
          run("sequential-read-all", "true", "all records");
          run("directory-no-selection", "true", "all events");
          run("directory-scan-only", "flag(5)", "flag(5), no fetch");
        } else if (suite == "table2") {
          need_dataset();
          run("directory-no-selection", "true", "no selection");
          run("directory-select", "flag(0)", "electron (flag 0)");
          run("tag-query-fetch", "flag(0)", "electron (flag 0)");
          run("directory-select", "flag(3)", "flag(3), about 1/2");
          run("directory-select", "flag(5)", "flag(5), about 1/20");
          run("directory-fallback", "ET_TOTAL > 30", "ET_TOTAL > 30");
          run("tag-query-fetch", "ET_TOTAL > 30", "ET_TOTAL > 30");
        } else if (suite == "fig5a") {
          need_dataset();
          for (std::uint32_t k = 0; k <= 6; ++k) {
            run("tag-query-only", variable_sweep_query(k), std::to_string(k) + " variables", "rate-vs-variables", k);
          }
        } else if (suite == "fig5b") {
          if (b_work.empty()) throw Error(Errc::kInvalidArgument, "fig5b needs --work");
          for (std::uint64_t n : b_sizes) {
            const fs::path dir = b_work / ("fed-" + std::to_string(n));
            if (!fs::exists(dir / "catalog.txt")) {
              fs::remove_all(dir);
              build_synthetic_federation(dir, n, static_cast<std::uint32_t>(std::max<std::uint64_t>(1, n / 5000)), 7);
            }
            run("tag-query-only", "true", std::to_string(n) + " records", "rate-vs-dbsize", static_cast<double>(n), dir);
          }
        }
      }
      if (results.empty()) throw Error(Errc::kInvalidArgument, "nothing to run: give --scenario or --suite");
      if (!b_out.empty()) {
        json arr = json::array();
        for (const auto& r : results) arr.push_back(to_json(r));
        write_file(b_out, arr.dump(2) + "\n");
      }
      std::cout << emit_report(results, b_format);
      return 0;
    }
    if (*rep) {
      const json arr = json::parse(read_file(r_in));
      std::vector<ScenarioResult> results;
      for (const auto& j : arr) results.push_back(from_json(j));
      std::cout << emit_report(results, r_format);
      return 0;
    }
    if (*fsc) {
      if (*fs_init) {
        fs::create_directories(pool);
        if (f_capacity == 0) throw Error(Errc::kInvalidArgument, "capacity must be positive");
        write_file(pool / "pool.json",
                   json{{"capacity", f_capacity}, {"eviction_age_hours", f_age}, {"staging_latency_ms", f_latency}}
                           .dump(2) + "\n");
        open_pool(pool);
        std::printf("pool %s: capacity %" PRIu64 " bytes\n", pool.c_str(), f_capacity);
      } else if (*fs_reg) {
        open_pool(pool).register_dataset(f_name, f_path, f_pinned);
      } else if (*fs_req) {
        std::printf("%s\n", open_pool(pool).request(f_name).c_str());
      } else if (*fs_list) {
        FileStore store = open_pool(pool);
        for (const auto& d : store.list()) {
          std::printf("%s\t%s\t%s\t%s\t%s\t%" PRIu64 "\n", d.name.c_str(), d.slow_path.c_str(),
                      d.fast_path ? d.fast_path->c_str() : "-", d.pinned ? "pinned" : "-",
                      time_text(d.last_access).c_str(), d.size);
        }
        std::printf("staged %" PRIu64 " of %" PRIu64 " bytes\n", store.staged_bytes(), store.config().capacity);
      } else if (*fs_sweep) {
        for (const auto& n : open_pool(pool).sweep()) std::printf("evicted %s\n", n.c_str());
      }
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "evidx: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "evidx: %s\n", e.what());
    return 1;
  }
  return 0;
}
