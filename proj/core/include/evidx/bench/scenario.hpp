#pragma once

// Timed access-path scenarios over a generated dataset. Events that a
// scenario reads are checksummed but not otherwise analysed. Timing is
// process CPU time; wall time is recorded alongside.
//
//   sequential-read-all     read every store record in order
//   directory-no-selection  load the directory, fetch every entry
//   directory-select        load the directory, select by flag expression,
//                           fetch the selection
//   directory-scan-only     load the directory and select, no fetch
//   directory-fallback      load the directory, fetch every entry and apply
//                           a value predicate to the event itself
//   tag-query-fetch         query the tag federation, fetch the hits
//   tag-query-only          query the tag federation, no fetch

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace evidx::bench {

struct ScenarioParams {
  // Query text for the tag and fallback scenarios; a flag-only query for
  // directory-select (translated to a flag expression).
  std::string query = "true";
  // Runs the scenario this many times and keeps the fastest CPU time.
  std::uint32_t repeat = 1;
  // Federation to query instead of the dataset's own (tag-query-only).
  std::filesystem::path federation;
  std::string label;
  std::string series;
  double x = 0;
};

struct ScenarioResult {
  std::string scenario;
  std::string label;
  std::uint64_t scanned = 0;
  std::uint64_t selected = 0;
  // Events whose payload was read.
  std::uint64_t read = 0;
  double cpu_seconds = 0;
  double wall_seconds = 0;
  // Folded payload checksum; keeps reads from being optimised away.
  std::uint64_t checksum = 0;
  std::string series;
  double x = 0;

  double cpu_per_scanned() const { return scanned ? cpu_seconds / static_cast<double>(scanned) : 0; }
  double cpu_per_read() const { return read ? cpu_seconds / static_cast<double>(read) : 0; }
  // Scanned events per CPU second.
  double rate() const { return cpu_seconds > 0 ? static_cast<double>(scanned) / cpu_seconds : 0; }

  friend bool operator==(const ScenarioResult&, const ScenarioResult&) = default;
};

const std::vector<std::string>& scenario_names();

// Throws kInvalidArgument for an unknown scenario and kParse / kUnknownName
// for a bad query.
ScenarioResult run_scenario(const std::filesystem::path& dataset, const std::string& scenario,
                            const ScenarioParams& params = {});

// Process CPU time in seconds.
double process_cpu_seconds();

// A conjunction of k always-true comparisons on distinct tag variables
// (k <= 8); "true" for k = 0.
std::string variable_sweep_query(std::uint32_t k);

}  // namespace evidx::bench
