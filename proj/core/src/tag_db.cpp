#include "evidx/tag_db.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "evidx/physics_summary.hpp"
#include "le.hpp"
#include "posix_file.hpp"

namespace evidx {

namespace fs = std::filesystem;

namespace {

constexpr char kDbMagic[8] = {'E', 'V', 'T', 'A', 'G', 'D', 'B', '\0'};
constexpr std::uint32_t kDbFormatVersion = 1;
constexpr char kFooterMagic[4] = {'C', 'N', 'T', 'R'};
constexpr const char* kCatalogName = "catalog.txt";
constexpr const char* kLockName = "catalog.lock";
constexpr std::size_t kScanChunkBytes = 4u << 20;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

std::string db_file_name(std::uint32_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "db%04" PRIu32 ".tdb", index);
  return buf;
}

void put_db_header(std::uint8_t* p, const TagSchema& schema) {
  std::memset(p, 0, kDatabaseHeaderSize);
  std::memcpy(p, kDbMagic, 8);
  le::put_u32(p + 8, kDbFormatVersion);
  le::put_u32(p + 12, schema.version());
  le::put_u64(p + 16, schema.hash());
  le::put_u32(p + 24, static_cast<std::uint32_t>(kTagRecordPrefix + schema.slab_size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// derive_tag

namespace {

// Variable indices derive_tag needs, resolved once per schema.
struct DerivePlan {
  struct Known {
    std::size_t var;
    double PhysicsSummary::*field = nullptr;
    std::uint32_t PhysicsSummary::*count = nullptr;
  };
  std::vector<Known> known;
  std::optional<std::size_t> run, event;
  std::array<std::optional<std::size_t>, 16> elec;  // [alg][cand][E, THETA, PHI, PROB]
  std::array<std::optional<std::size_t>, 4> jet_et;
  std::vector<std::size_t> bit_groups;  // excluding OFFLINE
  // Variables to mark missing when fewer than N objects were found.
  std::array<std::vector<std::size_t>, 2> elec_a, elec_b;  // index = needed - 1
  std::vector<std::size_t> kin_a, kin_b;
  std::array<std::vector<std::size_t>, 2> jets, muons;
};

DerivePlan make_plan(const TagSchema& schema) {
  DerivePlan plan;
  auto find = [&](const std::string& n) { return schema.find(n); };
  plan.run = find("RUN");
  plan.event = find("EVENT");
  auto known = [&](const char* n, double PhysicsSummary::*f) {
    if (auto i = find(n)) plan.known.push_back({*i, f, nullptr});
  };
  auto counted = [&](const char* n, std::uint32_t PhysicsSummary::*c) {
    if (auto i = find(n)) plan.known.push_back({*i, nullptr, c});
  };
  known("E_TOTAL", &PhysicsSummary::e_total);
  known("ET_TOTAL", &PhysicsSummary::et_total);
  known("MISS_ET", &PhysicsSummary::miss_et);
  known("E_MINUS_PZ", &PhysicsSummary::e_minus_pz);
  known("KA_Q2_EL", &PhysicsSummary::q2_a);
  known("KA_X_EL", &PhysicsSummary::x_a);
  known("KA_Y_EL", &PhysicsSummary::y_a);
  known("KB_Q2_EL", &PhysicsSummary::q2_b);
  known("KB_X_EL", &PhysicsSummary::x_b);
  known("KB_Y_EL", &PhysicsSummary::y_b);
  known("KA_Y_JB", &PhysicsSummary::y_jb);
  known("KB_Y_JB", &PhysicsSummary::y_jb);
  known("VTX_X", &PhysicsSummary::vtx_x);
  known("VTX_Y", &PhysicsSummary::vtx_y);
  known("VTX_Z", &PhysicsSummary::vtx_z);
  counted("N_PRIM_TRK", &PhysicsSummary::n_prim_tracks);
  counted("N_SEC_TRK", &PhysicsSummary::n_sec_tracks);
  known("ET_TRACKS", &PhysicsSummary::et_tracks);
  counted("N_MUONS", &PhysicsSummary::n_muons);
  known("MU1_P", &PhysicsSummary::muon_p);
  known("LPS_XL", &PhysicsSummary::lps_xl);
  known("FNC_E", &PhysicsSummary::fnc_e);
  known("BPC_E", &PhysicsSummary::bpc_e);
  known("LUMI_EGAMMA", &PhysicsSummary::lumi_egamma);

  const char* algs[2] = {"A", "B"};
  const char* parts[4] = {"E", "THETA", "PHI", "PROB"};
  for (int a = 0; a < 2; ++a) {
    for (int c = 0; c < 2; ++c) {
      for (int q = 0; q < 4; ++q) {
        plan.elec[a * 8 + c * 4 + q] =
            find(std::string("E") + algs[a] + std::to_string(c + 1) + "_" + parts[q]);
      }
    }
  }
  for (int j = 0; j < 4; ++j) {
    plan.jet_et[j] = find("J" + std::to_string(j + 1) + "_ET1");
    if (auto i = find("J" + std::to_string(j + 1) + "_N")) {
      plan.known.push_back({*i, nullptr, &PhysicsSummary::n_jets});
    }
  }

  for (const VariableInfo& v : schema.variables()) {
    const std::string& n = v.desc.name;
    if (!v.scalar()) {
      if (n != kOfflineGroup) plan.bit_groups.push_back(v.index);
      continue;
    }
    if (starts_with(n, "EA1_")) plan.elec_a[0].push_back(v.index);
    if (starts_with(n, "EA2_")) plan.elec_a[1].push_back(v.index);
    if (starts_with(n, "EB1_")) plan.elec_b[0].push_back(v.index);
    if (starts_with(n, "EB2_")) plan.elec_b[1].push_back(v.index);
    if (starts_with(n, "KA_") && n != "KA_Y_JB") plan.kin_a.push_back(v.index);
    if (starts_with(n, "KB_") && n != "KB_Y_JB") plan.kin_b.push_back(v.index);
    if (n.size() > 3 && n[0] == 'J' && n[1] >= '1' && n[1] <= '4' && n[2] == '_' &&
        n.substr(3) != "N") {
      if (n.back() == '1') plan.jets[0].push_back(v.index);
      if (n.back() == '2') plan.jets[1].push_back(v.index);
    }
    if (starts_with(n, "MU1_")) plan.muons[0].push_back(v.index);
    if (starts_with(n, "MU2_")) plan.muons[1].push_back(v.index);
  }
  return plan;
}

const DerivePlan& plan_for(const TagSchema& schema) {
  static std::mutex mu;
  static std::unordered_map<std::uint64_t, std::unique_ptr<DerivePlan>> plans;
  std::lock_guard lock(mu);
  auto& p = plans[schema.hash()];
  if (!p) p = std::make_unique<DerivePlan>(make_plan(schema));
  return *p;
}

}  // namespace

TagRecord derive_tag(const EventRecord& event, const TagSchema& schema,
                     const FlagFunction& flag_fn, RecordLocation location) {
  if (!event.is_event()) {
    throw Error(Errc::kInvalidArgument, "cannot derive a tag from non-event record '" +
                                            event.type_tag.trimmed() + "'");
  }
  const PhysicsSummary s = decode_summary(event.payload);
  const DerivePlan& plan = plan_for(schema);

  TagRecord t(schema);
  t.run = event.run;
  t.event = event.event;
  t.location = std::move(location);

  // Pseudo-values for quantities the summary does not carry.
  for (const VariableInfo& v : schema.variables()) {
    if (!v.scalar()) continue;
    for (std::uint32_t slot = 0; slot < v.desc.width; ++slot) {
      const std::uint64_t h = splitmix64(s.trigger_word ^ (std::uint64_t{v.index} << 40) ^ slot);
      const double u = static_cast<double>(h >> 40) / static_cast<double>(1ull << 24);
      t.set_value(v.index, v.desc.kind == VarKind::kInt32 ? std::floor(u * 100) : u * 100, slot);
    }
  }
  // Trigger bits expanded from the trigger word.
  std::uint8_t bytes[64];
  for (std::size_t var : plan.bit_groups) {
    const VariableInfo& v = schema.at(var);
    std::uint64_t h = s.trigger_word ^ (std::uint64_t{v.index} << 48);
    std::vector<std::uint8_t> big;
    std::uint8_t* out = bytes;
    if (v.bytes > sizeof bytes) {
      big.resize(v.bytes);
      out = big.data();
    }
    for (std::size_t i = 0; i < v.bytes; ++i) {
      if (i % 8 == 0) h = splitmix64(h);
      out[i] = static_cast<std::uint8_t>(h >> (8 * (i % 8)));
    }
    t.set_bits(var, std::span<const std::uint8_t>(out, v.bytes));
  }

  if (plan.run) t.set_value(*plan.run, static_cast<double>(static_cast<std::int32_t>(event.run)));
  if (plan.event) t.set_value(*plan.event, static_cast<double>(static_cast<std::int32_t>(event.event)));
  for (const auto& k : plan.known) {
    t.set_value(k.var, k.field ? s.*k.field : static_cast<double>(s.*k.count));
  }
  for (int a = 0; a < 2; ++a) {
    const auto& cands = a == 0 ? s.elec_a : s.elec_b;
    for (int c = 0; c < 2; ++c) {
      const double values[4] = {cands[c].energy, cands[c].theta, cands[c].phi, cands[c].probability};
      for (int q = 0; q < 4; ++q) {
        if (auto i = plan.elec[a * 8 + c * 4 + q]) t.set_value(*i, values[q]);
      }
    }
  }
  for (int j = 0; j < 4; ++j) {
    if (plan.jet_et[j]) t.set_value(*plan.jet_et[j], s.jet_et[j]);
  }

  // Quantities of objects that were not found.
  auto drop = [&](const std::vector<std::size_t>& vars) {
    for (std::size_t v : vars) t.set_missing(v);
  };
  for (std::uint32_t need = 1; need <= 2; ++need) {
    if (s.n_elec_a < need) drop(plan.elec_a[need - 1]);
    if (s.n_elec_b < need) drop(plan.elec_b[need - 1]);
    if (s.n_jets < need) drop(plan.jets[need - 1]);
    if (s.n_muons < need) drop(plan.muons[need - 1]);
  }
  if (s.n_elec_a < 1) drop(plan.kin_a);
  if (s.n_elec_b < 1) drop(plan.kin_b);

  t.set_offline_flags(encode_flags(flag_fn(event)));
  return t;
}

// ---------------------------------------------------------------------------
// Export

void write_delimited(const ExportTable& table, std::ostream& out, char delimiter) {
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out << delimiter;
    out << table.columns[i];
  }
  out << '\n';
  char buf[64];
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << delimiter;
      const ExportCell& cell = row[i];
      if (std::holds_alternative<std::monostate>(cell)) {
        out << "NA";
      } else if (const double* d = std::get_if<double>(&cell)) {
        if (*d == std::trunc(*d) && std::fabs(*d) < 9.007199254740992e15) {
          std::snprintf(buf, sizeof buf, "%.0f", *d);
        } else {
          std::snprintf(buf, sizeof buf, "%.9g", *d);
        }
        out << buf;
      } else {
        out << std::get<std::string>(cell);
      }
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Federation

struct Federation::Impl {
  struct Container {
    ContainerRef ref;
    std::vector<std::string> file_ids;
  };

  Impl(fs::path d, OpenMode m, TagSchema s, std::uint64_t cap)
      : dir(std::move(d)), mode(m), schema(std::move(s)), size_cap(cap) {}

  ~Impl() {
    for (int fd : fds) {
      if (fd >= 0) ::close(fd);
    }
    if (lock_fd >= 0) ::close(lock_fd);
  }

  std::uint32_t record_size() const {
    return static_cast<std::uint32_t>(kTagRecordPrefix + schema.slab_size());
  }

  fs::path db_path(std::uint32_t index) const { return dir / files.at(index).name; }

  void require_writable() const {
    if (mode != OpenMode::kReadWrite) {
      throw Error(Errc::kReadOnly, "federation " + dir.string() + " is open read-only");
    }
  }

  void take_lock() {
    lock_fd = ::open((dir / kLockName).c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (lock_fd < 0) throw Error(Errc::kIo, "cannot open lock file: " + detail::errno_text(errno));
    if (::flock(lock_fd, LOCK_EX | LOCK_NB) != 0) {
      throw Error(Errc::kBusy, "federation " + dir.string() + " is open for writing elsewhere");
    }
  }

  int open_db(std::uint32_t index) {
    const fs::path p = db_path(index);
    const int flags = (mode == OpenMode::kReadWrite ? O_RDWR : O_RDONLY) | O_CLOEXEC;
    int fd = ::open(p.c_str(), flags);
    if (fd < 0) {
      if (errno == ENOENT) throw Error(Errc::kNotFound, "database file missing: " + p.string());
      throw Error(Errc::kIo, "cannot open " + p.string() + ": " + detail::errno_text(errno));
    }
    return fd;
  }

  void pread(std::uint32_t file, void* dst, std::size_t n, std::uint64_t offset) const {
    detail::pread_all(fds.at(file), dst, n, offset, files.at(file).name);
    bytes_read.fetch_add(n, std::memory_order_relaxed);
  }

  std::string catalog_text() const {
    std::ostringstream out;
    out << "evidx-tag-catalog " << kCatalogVersion << '\n';
    out << "size_cap " << size_cap << '\n';
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016" PRIx64, schema.hash());
    out << "schema_hash " << hash << '\n';
    out << schema.to_text();
    out << "files " << files.size() << '\n';
    for (const auto& f : files) {
      out << "file " << f.index << ' ' << f.name << ' ' << f.size << ' ' << f.schema_version << '\n';
    }
    out << "containers " << containers.size() << '\n';
    for (const auto& [run, c] : containers) {
      out << "container " << run << ' ' << c.ref.file_index << ' ' << c.ref.offset << ' '
          << c.ref.bytes << ' ' << c.ref.records << '\n';
    }
    return out.str();
  }

  void save_catalog() const { detail::atomic_write_text(dir / kCatalogName, catalog_text()); }

  void load_footer(Container& c) const {
    const std::uint64_t records_bytes = c.ref.records * record_size();
    if (c.ref.bytes < records_bytes + 36) {
      throw Error(Errc::kInconsistent, "container of run " + std::to_string(c.ref.run) +
                                           " is too small for its records");
    }
    const std::uint64_t footer_len = c.ref.bytes - records_bytes;
    std::vector<std::uint8_t> f(footer_len);
    pread(c.ref.file_index, f.data(), f.size(), c.ref.offset + records_bytes);
    auto bad = [&](const std::string& what) {
      return Error(Errc::kInconsistent, "container of run " + std::to_string(c.ref.run) + " in " +
                                            files[c.ref.file_index].name + ": " + what);
    };
    if (std::memcmp(f.data(), kFooterMagic, 4) != 0) throw bad("footer magic missing");
    if (le::get_u32(f.data() + 4) != c.ref.run) throw bad("footer names another run");
    if (le::get_u64(f.data() + 8) != c.ref.records) throw bad("record count differs from catalog");
    if (le::get_u64(f.data() + 16) != c.ref.offset) throw bad("records offset differs from catalog");
    if (le::get_u32(f.data() + 24) != record_size()) throw bad("record size differs from schema");
    const std::uint32_t n_ids = le::get_u32(f.data() + 28);
    std::size_t p = 32;
    c.file_ids.clear();
    for (std::uint32_t i = 0; i < n_ids; ++i) {
      if (p + 2 > f.size()) throw bad("truncated file-id table");
      const std::size_t len = le::get_u16(f.data() + p);
      p += 2;
      if (p + len > f.size()) throw bad("truncated file-id table");
      c.file_ids.emplace_back(reinterpret_cast<const char*>(f.data() + p), len);
      p += len;
    }
    if (p + 12 != f.size()) throw bad("footer length mismatch");
    if (le::get_u64(f.data() + p) != schema.hash()) throw bad("schema hash differs");
    if (le::get_u32(f.data() + p + 8) != footer_len) throw bad("footer length field mismatch");
  }

  // Calls fn(record_bytes, count, first_record_offset) for consecutive chunks
  // of a container.
  template <typename Fn>
  void for_each_chunk(const Container& c, std::vector<std::uint8_t>& buf, Fn&& fn) const {
    const std::uint32_t rs = record_size();
    const std::uint64_t per_chunk = std::max<std::uint64_t>(1, kScanChunkBytes / rs);
    buf.resize(static_cast<std::size_t>(std::min(per_chunk, std::max<std::uint64_t>(c.ref.records, 1)) * rs));
    for (std::uint64_t first = 0; first < c.ref.records; first += per_chunk) {
      const std::uint64_t n = std::min(per_chunk, c.ref.records - first);
      const std::uint64_t at = c.ref.offset + first * rs;
      pread(c.ref.file_index, buf.data(), static_cast<std::size_t>(n * rs), at);
      fn(buf.data(), n, at);
    }
  }

  template <typename Fn>
  void for_each_container(std::optional<RunRange> runs, Fn&& fn) const {
    auto it = runs ? containers.lower_bound(runs->first) : containers.begin();
    for (; it != containers.end(); ++it) {
      if (runs && it->first > runs->last) break;
      fn(it->second);
    }
  }

  fs::path dir;
  OpenMode mode;
  TagSchema schema;
  std::uint64_t size_cap;
  std::vector<DatabaseFileInfo> files;
  std::vector<int> fds;
  std::map<std::uint32_t, Container> containers;
  std::uint64_t records = 0;
  int lock_fd = -1;
  mutable std::atomic<std::uint64_t> bytes_read{0};
};

Federation::Federation(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Federation::Federation(Federation&&) noexcept = default;
Federation& Federation::operator=(Federation&&) noexcept = default;
Federation::~Federation() = default;

Federation Federation::create(const fs::path& dir, const TagSchema& schema,
                              const FederationOptions& options) {
  if (options.size_cap <= kDatabaseHeaderSize) {
    throw Error(Errc::kInvalidArgument, "size cap must exceed the database header size");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::kUnwritablePath, "cannot create " + dir.string() + ": " + ec.message());
  if (fs::exists(dir / kCatalogName)) {
    throw Error(Errc::kAlreadyExists, "federation already exists in " + dir.string());
  }
  auto impl = std::make_unique<Impl>(dir, OpenMode::kReadWrite, schema, options.size_cap);
  impl->take_lock();
  impl->save_catalog();
  return Federation(std::move(impl));
}

Federation Federation::open(const fs::path& dir, OpenMode mode) {
  const fs::path catalog = dir / kCatalogName;
  if (!fs::exists(catalog)) throw Error(Errc::kNotFound, "no catalog in " + dir.string());
  const std::string text = detail::read_text_file(catalog);

  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    return Error(Errc::kParse, catalog.string() + ":" + std::to_string(line_no) + ": " + msg);
  };
  auto next = [&]() -> std::istringstream {
    if (!std::getline(in, line)) {
      ++line_no;
      throw fail("unexpected end of catalog");
    }
    ++line_no;
    return std::istringstream(line);
  };

  std::string word;
  std::uint32_t version = 0;
  if (!(next() >> word >> version) || word != "evidx-tag-catalog") throw fail("not a tag catalog");
  if (version != kCatalogVersion) {
    throw Error(Errc::kSchemaMismatch, "unsupported catalog version " + std::to_string(version));
  }
  std::uint64_t cap = 0;
  if (!(next() >> word >> cap) || word != "size_cap") throw fail("expected size_cap");
  std::string hash_hex;
  if (!(next() >> word >> hash_hex) || word != "schema_hash") throw fail("expected schema_hash");

  std::string schema_text;
  std::size_t n_vars = 0;
  {
    auto ls = next();
    std::uint32_t sv = 0;
    if (!(ls >> word >> sv >> n_vars) || word != "schema") throw fail("expected schema line");
    schema_text = line + "\n";
  }
  for (std::size_t i = 0; i < n_vars; ++i) {
    next();
    schema_text += line + "\n";
  }
  TagSchema schema = TagSchema::from_text(schema_text);
  char expected_hash[32];
  std::snprintf(expected_hash, sizeof expected_hash, "%016" PRIx64, schema.hash());
  if (hash_hex != expected_hash) {
    throw Error(Errc::kSchemaMismatch, "catalog schema hash " + hash_hex +
                                           " does not match its schema (" + expected_hash + ")");
  }

  auto impl = std::make_unique<Impl>(dir, mode, std::move(schema), cap);
  if (mode == OpenMode::kReadWrite) impl->take_lock();

  std::size_t n_files = 0;
  if (!(next() >> word >> n_files) || word != "files") throw fail("expected files");
  for (std::size_t i = 0; i < n_files; ++i) {
    DatabaseFileInfo f;
    if (!(next() >> word >> f.index >> f.name >> f.size >> f.schema_version) || word != "file" ||
        f.index != i) {
      throw fail("malformed file line");
    }
    impl->files.push_back(f);
  }
  std::size_t n_containers = 0;
  if (!(next() >> word >> n_containers) || word != "containers") throw fail("expected containers");
  for (std::size_t i = 0; i < n_containers; ++i) {
    Impl::Container c;
    if (!(next() >> word >> c.ref.run >> c.ref.file_index >> c.ref.offset >> c.ref.bytes >>
          c.ref.records) ||
        word != "container") {
      throw fail("malformed container line");
    }
    if (c.ref.file_index >= n_files) throw fail("container refers to unknown database file");
    if (!impl->containers.emplace(c.ref.run, std::move(c)).second) {
      throw fail("run listed twice");
    }
  }

  for (const DatabaseFileInfo& f : impl->files) {
    if (f.schema_version != impl->schema.version()) {
      throw Error(Errc::kSchemaMismatch, f.name + " has schema version " +
                                             std::to_string(f.schema_version) + ", catalog has " +
                                             std::to_string(impl->schema.version()));
    }
    impl->fds.push_back(impl->open_db(f.index));
    const std::uint64_t actual = detail::fd_size(impl->fds.back(), f.name);
    if (actual < f.size) {
      throw Error(Errc::kInconsistent, f.name + " is shorter (" + std::to_string(actual) +
                                           " bytes) than the catalog records (" +
                                           std::to_string(f.size) + ")");
    }
    std::uint8_t h[kDatabaseHeaderSize];
    impl->pread(f.index, h, sizeof h, 0);
    std::uint8_t want[kDatabaseHeaderSize];
    put_db_header(want, impl->schema);
    if (std::memcmp(h, kDbMagic, 8) != 0) {
      throw Error(Errc::kCorruptHeader, f.name + " is not a tag database file");
    }
    if (std::memcmp(h, want, kDatabaseHeaderSize) != 0) {
      throw Error(Errc::kSchemaMismatch, f.name + " was written with a different schema");
    }
  }
  for (auto& [run, c] : impl->containers) {
    if (c.ref.offset + c.ref.bytes > impl->files[c.ref.file_index].size) {
      throw Error(Errc::kInconsistent, "container of run " + std::to_string(run) +
                                           " extends past the end of " +
                                           impl->files[c.ref.file_index].name);
    }
    impl->load_footer(c);
    impl->records += c.ref.records;
  }
  impl->bytes_read = 0;
  return Federation(std::move(impl));
}

ContainerRef Federation::ingest_run(std::uint32_t run, std::span<const TagRecord> tags) {
  Impl& m = *impl_;
  m.require_writable();
  if (m.containers.count(run)) {
    throw Error(Errc::kDuplicate, "run " + std::to_string(run) + " is already in the federation");
  }
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const TagRecord& t = tags[i];
    if (t.schema().hash() != m.schema.hash()) {
      throw Error(Errc::kSchemaMismatch, "tag record built with a different schema");
    }
    if (t.run != run) {
      throw Error(Errc::kInvalidArgument, "tag for run " + std::to_string(t.run) +
                                              " passed with run " + std::to_string(run));
    }
    if (i > 0 && t.event <= tags[i - 1].event) {
      throw Error(Errc::kUnsorted, "events of run " + std::to_string(run) +
                                       " not strictly increasing at event " +
                                       std::to_string(t.event));
    }
  }

  const std::uint32_t rs = m.record_size();
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::uint32_t> id_index;
  for (const TagRecord& t : tags) {
    if (t.location.file_id.size() > 0xFFFF) {
      throw Error(Errc::kInvalidArgument, "store file id longer than 65535 bytes");
    }
    if (id_index.emplace(t.location.file_id, static_cast<std::uint32_t>(ids.size())).second) {
      ids.push_back(t.location.file_id);
    }
  }
  std::size_t footer_len = 32 + 12;
  for (const auto& id : ids) footer_len += 2 + id.size();
  const std::uint64_t bytes = static_cast<std::uint64_t>(tags.size()) * rs + footer_len;

  // Pick the database file.
  bool new_file = m.files.empty();
  if (!new_file) {
    const DatabaseFileInfo& last = m.files.back();
    const bool has_containers = last.size > kDatabaseHeaderSize;
    if (has_containers && last.size + bytes > m.size_cap) new_file = true;
  }

  std::uint32_t file_index;
  std::uint64_t offset;
  if (new_file) {
    file_index = static_cast<std::uint32_t>(m.files.size());
    DatabaseFileInfo f{file_index, db_file_name(file_index), kDatabaseHeaderSize, m.schema.version()};
    const fs::path p = m.dir / f.name;
    int fd = ::open(p.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(Errc::kIo, "cannot create " + p.string() + ": " + detail::errno_text(errno));
    std::uint8_t h[kDatabaseHeaderSize];
    put_db_header(h, m.schema);
    try {
      detail::pwrite_all(fd, h, sizeof h, 0, f.name);
    } catch (...) {
      ::close(fd);
      throw;
    }
    m.files.push_back(f);
    m.fds.push_back(fd);
    offset = kDatabaseHeaderSize;
  } else {
    file_index = static_cast<std::uint32_t>(m.files.size() - 1);
    offset = m.files.back().size;
  }

  std::vector<std::uint8_t> buf(static_cast<std::size_t>(bytes), 0);
  std::uint8_t* p = buf.data();
  for (const TagRecord& t : tags) {
    le::put_u32(p, t.run);
    le::put_u32(p + 4, t.event);
    le::put_u32(p + 8, id_index.at(t.location.file_id));
    le::put_u32(p + 12, 0);
    le::put_u64(p + 16, t.location.offset);
    std::memcpy(p + kTagRecordPrefix, t.slab().data(), t.slab().size());
    p += rs;
  }
  std::memcpy(p, kFooterMagic, 4);
  le::put_u32(p + 4, run);
  le::put_u64(p + 8, tags.size());
  le::put_u64(p + 16, offset);
  le::put_u32(p + 24, rs);
  le::put_u32(p + 28, static_cast<std::uint32_t>(ids.size()));
  p += 32;
  for (const auto& id : ids) {
    le::put_u16(p, static_cast<std::uint16_t>(id.size()));
    std::memcpy(p + 2, id.data(), id.size());
    p += 2 + id.size();
  }
  le::put_u64(p, m.schema.hash());
  le::put_u32(p + 8, static_cast<std::uint32_t>(footer_len));

  const int fd = m.fds[file_index];
  const std::string& name = m.files[file_index].name;
  // Drop anything a crashed ingest may have left past the catalogued end.
  if (::ftruncate(fd, static_cast<off_t>(offset)) != 0) {
    throw Error(Errc::kIo, "cannot truncate " + name + ": " + detail::errno_text(errno));
  }
  detail::pwrite_all(fd, buf.data(), buf.size(), offset, name);
  if (::fdatasync(fd) != 0) throw Error(Errc::kIo, "fdatasync " + name + ": " + detail::errno_text(errno));

  Impl::Container c;
  c.ref = ContainerRef{run, file_index, offset, bytes, tags.size()};
  c.file_ids = std::move(ids);
  const std::uint64_t old_size = m.files[file_index].size;
  m.files[file_index].size = offset + bytes;
  m.containers.emplace(run, c);
  try {
    m.save_catalog();
  } catch (...) {
    m.containers.erase(run);
    m.files[file_index].size = old_size;
    throw;
  }
  m.records += tags.size();
  return c.ref;
}

std::uint64_t Federation::count(const QueryAST& ast, std::optional<RunRange> runs,
                                QueryStats* stats) const {
  const Impl& m = *impl_;
  const CompiledQuery cq(ast, m.schema);
  const std::uint32_t rs = m.record_size();
  std::vector<std::uint8_t> buf;
  std::uint64_t scanned = 0, matched = 0;
  m.for_each_container(runs, [&](const Impl::Container& c) {
    m.for_each_chunk(c, buf, [&](const std::uint8_t* recs, std::uint64_t n, std::uint64_t) {
      for (std::uint64_t i = 0; i < n; ++i) {
        if (cq.matches(recs + i * rs + kTagRecordPrefix)) ++matched;
      }
      scanned += n;
    });
  });
  if (stats) *stats = QueryStats{scanned, matched, count_variables(ast)};
  return matched;
}

std::vector<TagHit> Federation::query(const QueryAST& ast, std::optional<RunRange> runs,
                                      QueryStats* stats) const {
  const Impl& m = *impl_;
  const CompiledQuery cq(ast, m.schema);
  const std::uint32_t rs = m.record_size();
  std::vector<std::uint8_t> buf;
  std::vector<TagHit> hits;
  std::uint64_t scanned = 0;
  m.for_each_container(runs, [&](const Impl::Container& c) {
    m.for_each_chunk(c, buf, [&](const std::uint8_t* recs, std::uint64_t n, std::uint64_t) {
      for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint8_t* r = recs + i * rs;
        if (!cq.matches(r + kTagRecordPrefix)) continue;
        TagHit h;
        h.run = le::get_u32(r);
        h.event = le::get_u32(r + 4);
        const std::uint32_t id = le::get_u32(r + 8);
        if (id < c.file_ids.size()) h.location.file_id = c.file_ids[id];
        h.location.offset = le::get_u64(r + 16);
        hits.push_back(std::move(h));
      }
      scanned += n;
    });
  });
  if (stats) *stats = QueryStats{scanned, hits.size(), count_variables(ast)};
  return hits;
}

void Federation::scan(const std::function<void(const TagView&, const RecordLocation&)>& visit,
                      std::optional<RunRange> runs) const {
  const Impl& m = *impl_;
  const std::uint32_t rs = m.record_size();
  std::vector<std::uint8_t> buf;
  RecordLocation loc;
  m.for_each_container(runs, [&](const Impl::Container& c) {
    m.for_each_chunk(c, buf, [&](const std::uint8_t* recs, std::uint64_t n, std::uint64_t) {
      for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint8_t* r = recs + i * rs;
        const std::uint32_t id = le::get_u32(r + 8);
        loc.file_id = id < c.file_ids.size() ? c.file_ids[id] : std::string();
        loc.offset = le::get_u64(r + 16);
        visit(TagView(m.schema, le::get_u32(r), le::get_u32(r + 4), r + kTagRecordPrefix), loc);
      }
    });
  });
}

std::uint64_t Federation::update_columns(std::span<const std::uint32_t> runs,
                                         std::span<const std::string> variables,
                                         const Updater& updater) {
  Impl& m = *impl_;
  std::vector<const VariableInfo*> vars;
  for (const auto& name : variables) vars.push_back(&m.schema.get(name));
  m.require_writable();
  for (std::uint32_t run : runs) {
    if (!m.containers.count(run)) {
      throw Error(Errc::kNotFound, "run " + std::to_string(run) + " is not in the federation");
    }
  }

  const std::uint32_t rs = m.record_size();
  const std::uint32_t presence = m.schema.presence_offset();
  std::vector<std::uint8_t> buf;
  std::uint64_t visited = 0;
  TagRecord rec(m.schema);
  for (std::uint32_t run : runs) {
    const Impl::Container& c = m.containers.at(run);
    const int fd = m.fds[c.ref.file_index];
    const std::string& name = m.files[c.ref.file_index].name;
    m.for_each_chunk(c, buf, [&](const std::uint8_t* recs, std::uint64_t n, std::uint64_t at) {
      for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint8_t* r = recs + i * rs;
        const std::uint8_t* old = r + kTagRecordPrefix;
        const std::uint64_t slab_at = at + i * rs + kTagRecordPrefix;
        rec.run = le::get_u32(r);
        rec.event = le::get_u32(r + 4);
        const std::uint32_t id = le::get_u32(r + 8);
        rec.location.file_id = id < c.file_ids.size() ? c.file_ids[id] : std::string();
        rec.location.offset = le::get_u64(r + 16);
        std::memcpy(rec.slab().data(), old, rs - kTagRecordPrefix);
        updater(rec);
        const std::uint8_t* now = rec.slab().data();

        for (const VariableInfo* v : vars) {
          if (std::memcmp(old + v->offset, now + v->offset, v->bytes) != 0) {
            detail::pwrite_all(fd, now + v->offset, v->bytes, slab_at + v->offset, name);
          }
        }
        // Presence bits of the named variables only; neighbours keep theirs.
        std::vector<std::pair<std::uint32_t, std::uint8_t>> masks;
        for (const VariableInfo* v : vars) {
          const std::uint32_t byte = presence + (v->index >> 3);
          const std::uint8_t bit = static_cast<std::uint8_t>(1u << (v->index & 7));
          auto it = std::find_if(masks.begin(), masks.end(), [&](auto& e) { return e.first == byte; });
          if (it == masks.end()) masks.emplace_back(byte, bit);
          else it->second |= bit;
        }
        for (const auto& [byte, mask] : masks) {
          const std::uint8_t merged = static_cast<std::uint8_t>((old[byte] & ~mask) | (now[byte] & mask));
          if (merged != old[byte]) detail::pwrite_all(fd, &merged, 1, slab_at + byte, name);
        }
        ++visited;
      }
    });
  }
  if (!runs.empty() && !vars.empty()) {
    for (std::uint32_t run : runs) {
      const int fd = m.fds[m.containers.at(run).ref.file_index];
      if (::fdatasync(fd) != 0) throw Error(Errc::kIo, "fdatasync: " + detail::errno_text(errno));
    }
  }
  return visited;
}

ExportTable Federation::export_columns(std::span<const std::string> variables,
                                       const QueryAST& ast) const {
  const Impl& m = *impl_;
  struct Column {
    const VariableInfo* var;
    std::uint32_t slot;
  };
  ExportTable table;
  table.columns = {"RUN", "EVENT"};
  std::vector<Column> cols;
  for (const auto& name : variables) {
    const VariableInfo& v = m.schema.get(name);
    if (v.desc.name == "RUN" || v.desc.name == "EVENT") continue;
    if (v.scalar() && v.desc.width > 1) {
      for (std::uint32_t s = 0; s < v.desc.width; ++s) {
        table.columns.push_back(v.desc.name + "[" + std::to_string(s) + "]");
        cols.push_back({&v, s});
      }
    } else {
      table.columns.push_back(v.desc.name);
      cols.push_back({&v, 0});
    }
  }

  const CompiledQuery cq(ast, m.schema);
  static const char kHex[] = "0123456789ABCDEF";
  scan([&](const TagView& view, const RecordLocation&) {
    if (!cq.matches(view.slab().data())) return;
    std::vector<ExportCell> row;
    row.reserve(cols.size() + 2);
    row.emplace_back(static_cast<double>(view.run()));
    row.emplace_back(static_cast<double>(view.event()));
    for (const Column& col : cols) {
      if (!view.present(col.var->index)) {
        row.emplace_back(std::monostate{});
      } else if (col.var->scalar()) {
        row.emplace_back(*view.value(col.var->index, col.slot));
      } else {
        // Most significant nibble first.
        std::string hex;
        const std::uint8_t* b = view.slab().data() + col.var->offset;
        for (std::uint32_t i = col.var->bytes; i-- > 0;) {
          hex += kHex[b[i] >> 4];
          hex += kHex[b[i] & 15];
        }
        row.emplace_back(std::move(hex));
      }
    }
    table.rows.push_back(std::move(row));
  });
  return table;
}

std::optional<ContainerRef> Federation::lookup(std::uint32_t run) const {
  auto it = impl_->containers.find(run);
  if (it == impl_->containers.end()) return std::nullopt;
  return it->second.ref;
}

std::vector<TagRecord> Federation::read_container(std::uint32_t run) const {
  const Impl& m = *impl_;
  auto it = m.containers.find(run);
  if (it == m.containers.end()) {
    throw Error(Errc::kNotFound, "run " + std::to_string(run) + " is not in the federation");
  }
  std::vector<TagRecord> out;
  scan(
      [&](const TagView& view, const RecordLocation& loc) {
        TagRecord t(m.schema);
        t.run = view.run();
        t.event = view.event();
        t.location = loc;
        std::memcpy(t.slab().data(), view.slab().data(), view.slab().size());
        out.push_back(std::move(t));
      },
      RunRange{run, run});
  return out;
}

std::vector<std::uint32_t> Federation::runs() const {
  std::vector<std::uint32_t> out;
  for (const auto& [run, c] : impl_->containers) out.push_back(run);
  return out;
}

std::vector<ContainerRef> Federation::containers() const {
  std::vector<ContainerRef> out;
  for (const auto& [run, c] : impl_->containers) out.push_back(c.ref);
  return out;
}

const std::vector<DatabaseFileInfo>& Federation::database_files() const { return impl_->files; }
fs::path Federation::database_path(std::uint32_t index) const { return impl_->db_path(index); }
std::uint64_t Federation::record_count() const { return impl_->records; }
const TagSchema& Federation::schema() const { return impl_->schema; }
std::uint64_t Federation::size_cap() const { return impl_->size_cap; }
const fs::path& Federation::directory() const { return impl_->dir; }
bool Federation::writable() const { return impl_->mode == OpenMode::kReadWrite; }
std::uint64_t Federation::bytes_read() const { return impl_->bytes_read.load(); }
void Federation::reset_counters() { impl_->bytes_read = 0; }

FetchCursor fetch_events(std::span<const TagHit> hits, const StoreReader& store) {
  std::vector<FetchTarget> targets;
  targets.reserve(hits.size());
  for (const TagHit& h : hits) {
    targets.push_back(FetchTarget{h.run, h.event, h.location.offset, h.location.file_id});
  }
  return FetchCursor(store, std::move(targets));
}

}  // namespace evidx
