#include "evidx/bench/dataset.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <sstream>

#include "evidx/filestore.hpp"
#include "le.hpp"
#include "posix_file.hpp"

namespace evidx::bench {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void fill_pseudo(std::uint8_t* p, std::size_t n, std::uint64_t seed) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    le::put_u64(p + i, splitmix64(seed));
  }
  if (i < n) {
    std::uint8_t tail[8];
    le::put_u64(tail, splitmix64(seed));
    std::memcpy(p + i, tail, n - i);
  }
}

bool flag_follows_summary(std::uint32_t flag) { return flag <= 2 || flag == 4; }

constexpr const char* kNonEventTags[] = {"CALB", "HSYO", "LUMI"};

}  // namespace

// ---------------------------------------------------------------------------
// DatasetSpec

DatasetSpec DatasetSpec::desk() {
  DatasetSpec s;
  s.events = 50000;
  s.runs = 10;
  s.payload_bytes = 25000;
  return s;
}

DatasetSpec DatasetSpec::small() {
  DatasetSpec s;
  s.events = 5000;
  s.runs = 5;
  s.payload_bytes = 5000;
  return s;
}

void DatasetSpec::validate() const {
  auto bad = [](const std::string& msg) { return Error(Errc::kInvalidArgument, msg); };
  if (runs == 0) throw bad("runs must be at least 1");
  if (first_run == 0 || std::uint64_t{first_run} + runs - 1 > 0xFFFFFFFFull) {
    throw bad("run numbers must lie in 1..2^32-1");
  }
  if (payload_bytes < kPhysicsSummarySize) {
    throw bad("payload_bytes must be at least " + std::to_string(kPhysicsSummarySize));
  }
  if (payload_bytes > kDefaultMaxPayload) throw bad("payload_bytes exceeds the store maximum");
  if (!(non_event_fraction >= 0 && non_event_fraction < 0.9)) {
    throw bad("non_event_fraction must lie in [0, 0.9)");
  }
  if (!(electron_probability >= 0 && electron_probability <= 1)) {
    throw bad("electron_probability must lie in [0, 1]");
  }
  if (!(et_mean > 0)) throw bad("et_mean must be positive");
  if (!(default_flag_probability >= 0 && default_flag_probability <= 1)) {
    throw bad("default_flag_probability must lie in [0, 1]");
  }
  for (const auto& [flag, p] : flag_probability) {
    if (flag >= kFlagCount) throw bad("flag " + std::to_string(flag) + " out of range");
    if (flag_follows_summary(flag)) {
      throw bad("flag " + std::to_string(flag) + " is derived from the summary");
    }
    if (!(p >= 0 && p <= 1)) throw bad("flag probability must lie in [0, 1]");
  }
  if (size_cap <= kDatabaseHeaderSize) throw bad("size_cap too small");
}

std::string DatasetSpec::to_text() const {
  std::ostringstream out;
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "events " << events << '\n';
  out << "runs " << runs << '\n';
  out << "payload_bytes " << payload_bytes << '\n';
  out << "seed " << seed << '\n';
  out << "non_event_fraction " << real(non_event_fraction) << '\n';
  out << "electron_probability " << real(electron_probability) << '\n';
  out << "et_mean " << real(et_mean) << '\n';
  out << "default_flag_probability " << real(default_flag_probability) << '\n';
  for (const auto& [flag, p] : flag_probability) {
    out << "flag_probability " << flag << ' ' << real(p) << '\n';
  }
  out << "first_run " << first_run << '\n';
  out << "size_cap " << size_cap << '\n';
  return out.str();
}

DatasetSpec DatasetSpec::from_text(std::string_view text) {
  DatasetSpec s;
  s.flag_probability.clear();
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    bool ok = true;
    if (key == "events") ok = static_cast<bool>(ls >> s.events);
    else if (key == "runs") ok = static_cast<bool>(ls >> s.runs);
    else if (key == "payload_bytes") ok = static_cast<bool>(ls >> s.payload_bytes);
    else if (key == "seed") ok = static_cast<bool>(ls >> s.seed);
    else if (key == "non_event_fraction") ok = static_cast<bool>(ls >> s.non_event_fraction);
    else if (key == "electron_probability") ok = static_cast<bool>(ls >> s.electron_probability);
    else if (key == "et_mean") ok = static_cast<bool>(ls >> s.et_mean);
    else if (key == "default_flag_probability") ok = static_cast<bool>(ls >> s.default_flag_probability);
    else if (key == "first_run") ok = static_cast<bool>(ls >> s.first_run);
    else if (key == "size_cap") ok = static_cast<bool>(ls >> s.size_cap);
    else if (key == "flag_probability") {
      std::uint32_t flag = 0;
      double p = 0;
      ok = static_cast<bool>(ls >> flag >> p);
      if (ok) s.flag_probability[flag] = p;
    } else {
      throw Error(Errc::kParse, "dataset spec line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!ok) throw Error(Errc::kParse, "dataset spec line " + std::to_string(line_no) + ": bad value");
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Rng

double Rng::exponential(double mean) { return -mean * std::log1p(-uniform()); }

double Rng::normal(double mean, double sigma) {
  // Box-Muller; one value per call keeps the stream position predictable.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return mean + sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------
// FlagModel

FlagModel::FlagModel(const DatasetSpec& spec) {
  p_.fill(spec.default_flag_probability);
  for (const auto& [flag, p] : spec.flag_probability) p_[flag] = p;
}

FlagBits FlagModel::flags(const PhysicsSummary& s) const {
  FlagBits bits;
  bits[0] = s.n_elec_a > 0;
  bits[1] = s.n_elec_b > 0;
  bits[2] = s.n_jets >= 2;
  bits[4] = s.n_muons > 0;
  for (std::uint32_t i = 0; i < kFlagCount; ++i) {
    if (flag_follows_summary(i)) continue;
    std::uint64_t state = s.trigger_word ^ (0xD1B54A32D192ED03ull * (i + 1));
    const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    bits[i] = u < p_[i];
  }
  return bits;
}

FlagFunction FlagModel::function() const {
  return [model = *this](const EventRecord& r) { return model.flags(decode_summary(r.payload)); };
}

// ---------------------------------------------------------------------------
// Summaries

PhysicsSummary generate_summary(Rng& rng, const DatasetSpec& spec) {
  PhysicsSummary s;
  s.trigger_word = rng.bits();

  s.et_total = f32(rng.exponential(spec.et_mean));
  s.e_total = f32(s.et_total * (1.0 + 3.0 * rng.uniform()) + 5.0 * rng.uniform());
  s.miss_et = f32(rng.exponential(3.0));
  s.e_minus_pz = f32(25.0 + 40.0 * rng.uniform());

  s.n_elec_a = rng.uniform() < spec.electron_probability ? (rng.uniform() < 0.1 ? 2 : 1) : 0;
  if (s.n_elec_a > 0) {
    s.n_elec_b = rng.uniform() < 0.9 ? s.n_elec_a : 0;
  } else {
    s.n_elec_b = rng.uniform() < 0.05 ? 1 : 0;
  }
  auto candidate = [&] {
    ElectronCandidate c;
    c.energy = f32(5.0 + 25.0 * rng.uniform());
    c.theta = f32(std::acos(1.0 - 2.0 * rng.uniform()));
    c.phi = f32(2.0 * std::numbers::pi * rng.uniform() - std::numbers::pi);
    c.probability = f32(rng.uniform());
    return c;
  };
  for (std::uint32_t i = 0; i < 2; ++i) {
    if (i < s.n_elec_a) s.elec_a[i] = candidate();
    if (i < s.n_elec_b) s.elec_b[i] = candidate();
  }
  if (s.n_elec_a > 0) {
    s.q2_a = f32(4.0 + rng.exponential(40.0));
    s.x_a = f32(std::pow(10.0, -4.0 + 3.5 * rng.uniform()));
    s.y_a = f32(0.01 + 0.94 * rng.uniform());
  }
  if (s.n_elec_b > 0) {
    s.q2_b = f32(4.0 + rng.exponential(40.0));
    s.x_b = f32(std::pow(10.0, -4.0 + 3.5 * rng.uniform()));
    s.y_b = f32(0.01 + 0.94 * rng.uniform());
  }
  s.y_jb = f32(rng.uniform());

  s.vtx_x = f32(rng.normal(0.0, 0.1));
  s.vtx_y = f32(rng.normal(0.0, 0.05));
  s.vtx_z = f32(rng.normal(0.0, 15.0));
  s.n_prim_tracks = static_cast<std::uint32_t>(rng.below(30));
  s.n_sec_tracks = static_cast<std::uint32_t>(rng.below(5));
  s.et_tracks = f32(s.et_total * (0.3 + 0.5 * rng.uniform()));

  const double j = rng.uniform();
  s.n_jets = j < 0.5 ? 0 : j < 0.8 ? 1 : j < 0.95 ? 2 : 3;
  for (auto& et : s.jet_et) et = s.n_jets > 0 ? f32(4.0 + rng.exponential(6.0)) : 0.0;

  s.n_muons = rng.uniform() < 0.08 ? 1 : 0;
  s.muon_p = s.n_muons > 0 ? f32(2.0 + rng.exponential(5.0)) : 0.0;

  s.lps_xl = f32(rng.uniform());
  s.fnc_e = f32(rng.exponential(100.0));
  s.bpc_e = f32(rng.exponential(8.0));
  s.lumi_egamma = f32(rng.exponential(2.0));
  return s;
}

// ---------------------------------------------------------------------------
// Dataset construction

std::uint64_t dataset_pool_capacity(const DatasetSpec& spec) {
  const double records = static_cast<double>(spec.events) / (1.0 - spec.non_event_fraction) * 1.5 + 64;
  const double bytes = records * (spec.payload_bytes + kRecordHeaderSize) + kStoreFileHeaderSize;
  return static_cast<std::uint64_t>(2 * bytes) + (64u << 20);
}

DatasetSpec load_spec(const fs::path& root) {
  return DatasetSpec::from_text(detail::read_text_file(DatasetPaths{root}.spec()));
}

GenerateStats generate_store(const DatasetSpec& spec, const fs::path& root) {
  spec.validate();
  const DatasetPaths paths{root};
  std::error_code ec;
  fs::create_directories(paths.tape(), ec);
  if (ec) throw Error(Errc::kUnwritablePath, "cannot create " + paths.tape().string() + ": " + ec.message());

  StoreConfig config;
  config.max_payload = std::max<std::uint32_t>(spec.payload_bytes, kDefaultMaxPayload);
  StoreWriter writer = StoreWriter::create(paths.store(), config);
  writer.set_file_id(DatasetPaths::store_name());

  Rng rng(spec.seed);
  GenerateStats stats;
  std::vector<std::uint8_t> payload(spec.payload_bytes);
  EventRecord rec;
  for (std::uint32_t r = 0; r < spec.runs; ++r) {
    const std::uint64_t n = spec.events / spec.runs + (r < spec.events % spec.runs ? 1 : 0);
    const std::uint32_t run = spec.first_run + r;
    std::uint32_t event = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      while (rng.uniform() < spec.non_event_fraction) {
        fill_pseudo(payload.data(), payload.size(), rng.bits());
        rec.kind = RecordKind::kNonEvent;
        rec.type_tag = TypeTag(kNonEventTags[rng.below(3)]);
        rec.run = 0;
        rec.event = 0;
        rec.payload = payload;
        writer.append(rec);
        ++stats.non_events;
      }
      event += 1 + (rng.below(4) == 0 ? static_cast<std::uint32_t>(rng.below(3)) : 0);
      const PhysicsSummary s = generate_summary(rng, spec);
      encode_summary(s, payload.data());
      fill_pseudo(payload.data() + kPhysicsSummarySize, payload.size() - kPhysicsSummarySize,
                  rng.bits());
      rec.kind = RecordKind::kEvent;
      rec.type_tag = TypeTag("EVTF");
      rec.run = run;
      rec.event = event;
      rec.payload = payload;
      writer.append(rec);
      ++stats.events;
    }
  }
  writer.close();
  stats.bytes = writer.size();

  detail::atomic_write_text(paths.spec(), spec.to_text());
  FileStore store = FileStore::open(paths.pool(), PoolConfig{dataset_pool_capacity(spec)});
  if (!store.info(DatasetPaths::store_name())) {
    store.register_dataset(DatasetPaths::store_name(), paths.store(), true);
  }
  return stats;
}

StoreReader open_dataset_store(const fs::path& root) {
  const DatasetPaths paths{root};
  const DatasetSpec spec = load_spec(root);
  FileStore store = FileStore::open(paths.pool(), PoolConfig{dataset_pool_capacity(spec)});
  const fs::path fast = store.request(DatasetPaths::store_name());
  return StoreReader::open(fast, DatasetPaths::store_name());
}

EventDirectory build_dataset_directory(const fs::path& root) {
  const DatasetSpec spec = load_spec(root);
  StoreReader reader = open_dataset_store(root);
  EventDirectory dir = build_directory(reader, FlagModel(spec).function());
  for (auto& f : dir.files) f.options = "MEDIUM=DISK,FILFOR=EVST";
  save_directory(dir, DatasetPaths{root}.directory());
  return dir;
}

void build_dataset_tagdb(const fs::path& root) {
  const DatasetPaths paths{root};
  const DatasetSpec spec = load_spec(root);
  StoreReader reader = open_dataset_store(root);
  const FlagFunction flag_fn = FlagModel(spec).function();
  const TagSchema& schema = TagSchema::builtin();

  fs::remove_all(paths.tagdb());
  Federation fed = Federation::create(paths.tagdb(), schema, FederationOptions{spec.size_cap});

  std::vector<TagRecord> tags;
  std::uint32_t run = 0;
  EventRecord rec;
  for (;;) {
    const std::uint64_t offset = reader.position();
    if (!reader.next_record(rec)) break;
    if (!rec.is_event()) continue;
    if (rec.run != run && !tags.empty()) {
      fed.ingest_run(run, tags);
      tags.clear();
    }
    run = rec.run;
    tags.push_back(derive_tag(rec, schema, flag_fn, RecordLocation{reader.file_id(), offset}));
  }
  if (!tags.empty()) fed.ingest_run(run, tags);
}

GenerateStats generate_dataset(const DatasetSpec& spec, const fs::path& root) {
  GenerateStats stats = generate_store(spec, root);
  build_dataset_directory(root);
  build_dataset_tagdb(root);
  return stats;
}

void build_synthetic_federation(const fs::path& dir, std::uint64_t records, std::uint32_t runs,
                                std::uint64_t seed, std::uint64_t size_cap) {
  if (runs == 0) throw Error(Errc::kInvalidArgument, "runs must be at least 1");
  DatasetSpec spec;
  spec.seed = seed;
  spec.size_cap = size_cap;
  const TagSchema& schema = TagSchema::builtin();
  const FlagFunction flag_fn = FlagModel(spec).function();
  Federation fed = Federation::create(dir, schema, FederationOptions{size_cap});
  Rng rng(seed);
  std::vector<std::uint8_t> payload(kPhysicsSummarySize);
  std::vector<TagRecord> tags;
  std::uint64_t offset = kStoreFileHeaderSize;
  for (std::uint32_t r = 0; r < runs; ++r) {
    const std::uint64_t n = records / runs + (r < records % runs ? 1 : 0);
    const std::uint32_t run = spec.first_run + r;
    tags.clear();
    tags.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      encode_summary(generate_summary(rng, spec), payload.data());
      const EventRecord ev = EventRecord::make_event(run, static_cast<std::uint32_t>(i + 1), payload);
      tags.push_back(derive_tag(ev, schema, flag_fn, RecordLocation{"synthetic", offset}));
      offset += kRecordHeaderSize + payload.size();
    }
    fed.ingest_run(run, tags);
  }
}

}  // namespace evidx::bench
