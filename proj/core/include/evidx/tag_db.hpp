#pragma once

// Tag database: per-event tag records grouped one container per run, with
// containers packed into size-capped database files under a catalog.
//
// A federation directory holds catalog.txt plus database files
// db0000.tdb, db0001.tdb, ... Each database file starts with a 32-byte
// header and is followed by containers. A container is a run's records
// (fixed size, sorted by event) followed by a footer with the run number,
// record count, the store file ids referenced by the records and the
// schema hash. The catalog is rewritten through a temporary file and
// rename(2) after every ingest, so a crash leaves the previous catalog in
// place. Formats are described in docs/FORMATS.md.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "evidx/event_directory.hpp"
#include "evidx/event_store.hpp"
#include "evidx/query.hpp"
#include "evidx/tag_schema.hpp"

namespace evidx {

inline constexpr std::uint64_t kDefaultSizeCap = 200'000'000;
inline constexpr std::size_t kDatabaseHeaderSize = 32;
// run, event, store file index, reserved, store offset.
inline constexpr std::size_t kTagRecordPrefix = 24;
inline constexpr std::uint32_t kCatalogVersion = 1;

// Fills a tag record from the PhysicsSummary at the start of the event
// payload. The offline bit group receives flag_fn(event); trigger bit
// groups are expanded from the summary's trigger word. Quantities the
// summary does not carry are given deterministic pseudo-values derived from
// the trigger word. Electron, kinematics, jet and muon quantities are marked
// missing when the corresponding objects were not found. Throws
// kCorruptRecord if the payload carries no summary.
TagRecord derive_tag(const EventRecord& event, const TagSchema& schema,
                     const FlagFunction& flag_fn, RecordLocation location = {});

enum class OpenMode { kReadOnly, kReadWrite };

struct FederationOptions {
  std::uint64_t size_cap = kDefaultSizeCap;
};

struct DatabaseFileInfo {
  std::uint32_t index = 0;
  std::string name;  // relative to the federation directory
  std::uint64_t size = 0;
  std::uint32_t schema_version = 0;

  friend bool operator==(const DatabaseFileInfo&, const DatabaseFileInfo&) = default;
};

struct ContainerRef {
  std::uint32_t run = 0;
  std::uint32_t file_index = 0;
  std::uint64_t offset = 0;  // first record within the database file
  std::uint64_t bytes = 0;   // records plus footer
  std::uint64_t records = 0;

  friend bool operator==(const ContainerRef&, const ContainerRef&) = default;
};

struct TagHit {
  std::uint32_t run = 0;
  std::uint32_t event = 0;
  RecordLocation location;

  friend bool operator==(const TagHit&, const TagHit&) = default;
};

// Inclusive run interval.
struct RunRange {
  std::uint32_t first = 0;
  std::uint32_t last = 0xFFFFFFFFu;

  bool contains(std::uint32_t run) const { return run >= first && run <= last; }
};

// Missing value, number, or a bit group as hex (most significant first).
using ExportCell = std::variant<std::monostate, double, std::string>;

struct ExportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<ExportCell>> rows;
};

// Delimiter-separated text with a header row; missing values become "NA".
void write_delimited(const ExportTable& table, std::ostream& out, char delimiter = ',');

class Federation {
 public:
  // Creates an empty federation; throws kAlreadyExists if a catalog is
  // already present.
  static Federation create(const std::filesystem::path& dir, const TagSchema& schema,
                           const FederationOptions& options = {});

  // Throws kNotFound for a missing catalog or database file and
  // kSchemaMismatch / kInconsistent when files and catalog disagree. A
  // read-write handle takes an exclusive advisory lock on the catalog.
  static Federation open(const std::filesystem::path& dir, OpenMode mode = OpenMode::kReadOnly);

  Federation(Federation&&) noexcept;
  Federation& operator=(Federation&&) noexcept;
  ~Federation();

  // Appends one container. Tags must carry `run` and strictly increasing
  // events. Throws kDuplicate, kUnsorted, kInvalidArgument or kReadOnly.
  ContainerRef ingest_run(std::uint32_t run, std::span<const TagRecord> tags);

  // Matching records in (run, event) order. Reads only database files.
  std::vector<TagHit> query(const QueryAST& ast, std::optional<RunRange> runs = std::nullopt,
                            QueryStats* stats = nullptr) const;
  // Same scan without materialising hits.
  std::uint64_t count(const QueryAST& ast, std::optional<RunRange> runs = std::nullopt,
                      QueryStats* stats = nullptr) const;

  // Visits every record of the selected runs in order.
  void scan(const std::function<void(const TagView&, const RecordLocation&)>& visit,
            std::optional<RunRange> runs = std::nullopt) const;

  using Updater = std::function<void(TagRecord&)>;
  // For every record of the given runs, calls updater with the current
  // record and writes back only the bytes of the named variables. Returns
  // the number of records visited. Throws kUnknownName, kNotFound for an
  // unknown run, or kReadOnly.
  std::uint64_t update_columns(std::span<const std::uint32_t> runs,
                               std::span<const std::string> variables, const Updater& updater);

  // Rows for matching records: run, event, then the requested variables.
  // "RUN" and "EVENT" may be requested explicitly and are then not
  // repeated. Throws kUnknownName.
  ExportTable export_columns(std::span<const std::string> variables, const QueryAST& ast) const;

  std::optional<ContainerRef> lookup(std::uint32_t run) const;
  // The records refer to this federation's schema and must not outlive it.
  std::vector<TagRecord> read_container(std::uint32_t run) const;

  std::vector<std::uint32_t> runs() const;
  std::vector<ContainerRef> containers() const;
  const std::vector<DatabaseFileInfo>& database_files() const;
  std::filesystem::path database_path(std::uint32_t index) const;
  std::uint64_t record_count() const;

  const TagSchema& schema() const;
  std::uint64_t size_cap() const;
  const std::filesystem::path& directory() const;
  bool writable() const;

  // Database bytes read since open (or the last reset).
  std::uint64_t bytes_read() const;
  void reset_counters();

 private:
  struct Impl;
  explicit Federation(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

// Direct reads of the events behind a list of hits, in hit order. Hits
// whose location names another store, or whose offset no longer holds the
// expected event, come back with a kStaleOffset error.
FetchCursor fetch_events(std::span<const TagHit> hits, const StoreReader& store);

}  // namespace evidx
