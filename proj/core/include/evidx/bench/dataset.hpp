#pragma once

// Synthetic datasets for the access-path benchmarks: a sequential store of
// events (and interleaved non-event records) whose payloads start with a
// PhysicsSummary, plus the event directory and tag federation built from
// it, with the store registered in a two-tier filestore.
//
// Layout of a dataset directory:
//   dataset.txt    the DatasetSpec it was generated from
//   tape/          slow tier holding the store file
//   pool/          fast tier and filestore manifest
//   events.dir     event directory
//   tagdb/         tag federation

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>

#include "evidx/event_directory.hpp"
#include "evidx/physics_summary.hpp"
#include "evidx/tag_db.hpp"

namespace evidx::bench {

struct DatasetSpec {
  std::uint64_t events = 10000;
  std::uint32_t runs = 10;
  std::uint32_t payload_bytes = 25000;
  std::uint64_t seed = 1;
  // Fraction of store records that are non-event records.
  double non_event_fraction = 0.05;
  // Probability that electron finder A reports a candidate (flag 0).
  double electron_probability = 0.44;
  // Mean of the exponential transverse-energy spectrum, GeV. With 10.7 a
  // 30 GeV threshold keeps about 6% of events.
  double et_mean = 10.7;
  // Set probabilities of the hash-driven flags (every flag except 0, 1, 2
  // and 4, which follow the summary). Unlisted flags use default_flag_probability.
  std::map<std::uint32_t, double> flag_probability = {{3, 0.5}, {5, 0.05}};
  double default_flag_probability = 0.25;
  std::uint32_t first_run = 35762;
  std::uint64_t size_cap = kDefaultSizeCap;

  // 50 000 events of 25 kB.
  static DatasetSpec desk();
  // 5 000 events of 5 kB.
  static DatasetSpec small();

  // Throws kInvalidArgument.
  void validate() const;

  std::string to_text() const;
  static DatasetSpec from_text(std::string_view text);

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

// Deterministic 64-bit generator with a platform-independent mapping to
// doubles in [0, 1).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double exponential(double mean);
  double normal(double mean, double sigma);
  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

 private:
  std::mt19937_64 engine_;
};

// Flags derived from a summary: 0 electron from finder A, 1 electron from
// finder B, 2 at least two jets, 4 muon; every other flag is set from a
// hash of the trigger word with its configured probability.
class FlagModel {
 public:
  explicit FlagModel(const DatasetSpec& spec);

  FlagBits flags(const PhysicsSummary& s) const;
  double probability(std::uint32_t flag) const { return p_[flag]; }
  // Decodes the payload summary; throws kCorruptRecord without one.
  FlagFunction function() const;

 private:
  std::array<double, kFlagCount> p_{};
};

// One event's summary, with every quantity representable as float32.
PhysicsSummary generate_summary(Rng& rng, const DatasetSpec& spec);

struct DatasetPaths {
  std::filesystem::path root;

  std::filesystem::path spec() const { return root / "dataset.txt"; }
  std::filesystem::path tape() const { return root / "tape"; }
  std::filesystem::path pool() const { return root / "pool"; }
  std::filesystem::path store() const { return tape() / "events.evst"; }
  std::filesystem::path directory() const { return root / "events.dir"; }
  std::filesystem::path tagdb() const { return root / "tagdb"; }
  // Filestore name of the store, also used as its file id.
  static std::string store_name() { return "mdst/events.evst"; }
};

struct GenerateStats {
  std::uint64_t events = 0;
  std::uint64_t non_events = 0;
  std::uint64_t bytes = 0;
};

// Writes the store into tape/ and registers it (pinned) in the filestore.
// Throws kAlreadyExists when the dataset directory already has a store.
GenerateStats generate_store(const DatasetSpec& spec, const std::filesystem::path& root);
// Builds events.dir from the store.
EventDirectory build_dataset_directory(const std::filesystem::path& root);
// Builds tagdb/ from the store (replacing an existing federation).
void build_dataset_tagdb(const std::filesystem::path& root);
// All three steps.
GenerateStats generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root);

DatasetSpec load_spec(const std::filesystem::path& root);

// Pool capacity used for dataset filestores: room for the store twice.
std::uint64_t dataset_pool_capacity(const DatasetSpec& spec);

// Stages the store into the pool and opens it.
StoreReader open_dataset_store(const std::filesystem::path& root);

// A federation of `records` tag records spread over `runs` runs, derived
// from generated summaries without an event store behind them.
void build_synthetic_federation(const std::filesystem::path& dir, std::uint64_t records,
                                std::uint32_t runs, std::uint64_t seed,
                                std::uint64_t size_cap = kDefaultSizeCap);

}  // namespace evidx::bench
