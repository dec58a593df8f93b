#include "evidx/filestore.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <sstream>
#include <thread>

#include "evidx/error.hpp"
#include "posix_file.hpp"

namespace evidx {

namespace fs = std::filesystem;
using std::chrono::system_clock;

namespace {

constexpr const char* kManifestName = "manifest.txt";
constexpr const char* kManifestHeader = "evidx-filestore 1";
constexpr std::size_t kCopyChunk = 1u << 20;

std::int64_t to_ms(system_clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

system_clock::time_point from_ms(std::int64_t ms) {
  return system_clock::time_point(std::chrono::milliseconds(ms));
}

void check_name(const std::string& name) {
  if (name.empty() || name.front() == '/' || name.back() == '/') {
    throw Error(Errc::kInvalidArgument, "bad dataset name '" + name + "'");
  }
  for (char c : name) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\0') {
      throw Error(Errc::kInvalidArgument, "dataset name '" + name + "' contains whitespace");
    }
  }
  for (const auto& part : fs::path(name)) {
    if (part == ".." || part == ".") {
      throw Error(Errc::kInvalidArgument, "dataset name '" + name + "' has a relative component");
    }
  }
}

class Fd {
 public:
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }

 private:
  int fd_;
};

// Copies src to dst, returning the bytes read from src.
std::uint64_t copy_counted(const fs::path& src, const fs::path& dst) {
  Fd in(::open(src.c_str(), O_RDONLY | O_CLOEXEC));
  if (in.get() < 0) {
    throw Error(errno == ENOENT ? Errc::kNotFound : Errc::kIo,
                "cannot open " + src.string() + ": " + detail::errno_text(errno));
  }
  Fd out(::open(dst.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
  if (out.get() < 0) {
    throw Error(Errc::kUnwritablePath, "cannot create " + dst.string() + ": " + detail::errno_text(errno));
  }
  std::vector<char> buf(kCopyChunk);
  std::uint64_t total = 0;
  for (;;) {
    ssize_t n = ::read(in.get(), buf.data(), buf.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::kIo, "read " + src.string() + ": " + detail::errno_text(errno));
    }
    if (n == 0) break;
    detail::write_all(out.get(), buf.data(), static_cast<std::size_t>(n), dst.string());
    total += static_cast<std::uint64_t>(n);
  }
  return total;
}

}  // namespace

std::uint32_t file_crc32(const fs::path& path) {
  Fd in(::open(path.c_str(), O_RDONLY | O_CLOEXEC));
  if (in.get() < 0) {
    throw Error(errno == ENOENT ? Errc::kNotFound : Errc::kIo,
                "cannot open " + path.string() + ": " + detail::errno_text(errno));
  }
  std::vector<unsigned char> buf(kCopyChunk);
  uLong crc = crc32_z(0, nullptr, 0);
  for (;;) {
    ssize_t n = ::read(in.get(), buf.data(), buf.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::kIo, "read " + path.string() + ": " + detail::errno_text(errno));
    }
    if (n == 0) break;
    crc = crc32_z(crc, buf.data(), static_cast<std::size_t>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

FileStore FileStore::open(const fs::path& pool_dir, const PoolConfig& config, Clock clock) {
  if (config.capacity == 0) throw Error(Errc::kInvalidArgument, "pool capacity must be positive");
  if (!clock) clock = [] { return system_clock::now(); };
  return FileStore(pool_dir, config, std::move(clock));
}

FileStore::FileStore(fs::path pool_dir, const PoolConfig& config, Clock clock)
    : pool_dir_(std::move(pool_dir)), config_(config), clock_(std::move(clock)) {
  std::error_code ec;
  fs::create_directories(pool_dir_ / "data", ec);
  if (ec) {
    throw Error(Errc::kUnwritablePath, "cannot create pool " + pool_dir_.string() + ": " + ec.message());
  }
  std::lock_guard lock(mu_);
  load_locked();
}

fs::path FileStore::fast_path_for(const std::string& name) const { return pool_dir_ / "data" / name; }

void FileStore::load_locked() {
  const fs::path manifest = pool_dir_ / kManifestName;
  if (!fs::exists(manifest)) return;
  std::istringstream in(detail::read_text_file(manifest));
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw Error(Errc::kParse, manifest.string() + ":1: not a filestore manifest");
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      std::size_t tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 6 || (f[3] != "0" && f[3] != "1")) {
      throw Error(Errc::kParse, manifest.string() + ":" + std::to_string(line_no) +
                                    ": expected name, slow path, fast path, pinned, last access, size");
    }
    DatasetInfo d;
    d.name = f[0];
    d.slow_path = f[1];
    if (f[2] != "-") d.fast_path = fs::path(f[2]);
    d.pinned = f[3] == "1";
    try {
      d.last_access = from_ms(std::stoll(f[4]));
      d.size = std::stoull(f[5]);
    } catch (const std::exception&) {
      throw Error(Errc::kParse, manifest.string() + ":" + std::to_string(line_no) + ": bad number");
    }
    // A staged copy that vanished from the pool is simply unstaged.
    if (d.fast_path && !fs::exists(*d.fast_path)) d.fast_path.reset();
    if (d.fast_path) staged_bytes_ += d.size;
    datasets_.emplace(d.name, std::move(d));
  }
}

void FileStore::save_locked() const {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& [name, d] : datasets_) {
    out << name << '\t' << d.slow_path.string() << '\t'
        << (d.fast_path ? d.fast_path->string() : std::string("-")) << '\t' << (d.pinned ? 1 : 0)
        << '\t' << to_ms(d.last_access) << '\t' << d.size << '\n';
  }
  detail::atomic_write_text(pool_dir_ / kManifestName, out.str());
}

void FileStore::register_dataset(const std::string& name, const fs::path& slow_path, bool pinned) {
  check_name(name);
  std::error_code ec;
  if (!fs::is_regular_file(slow_path, ec)) {
    throw Error(Errc::kNotFound, "slow-tier file " + slow_path.string() + " does not exist");
  }
  const std::uint64_t size = fs::file_size(slow_path);
  std::lock_guard lock(mu_);
  if (datasets_.count(name)) throw Error(Errc::kDuplicate, "dataset '" + name + "' already registered");
  DatasetInfo d;
  d.name = name;
  d.slow_path = fs::absolute(slow_path);
  d.pinned = pinned;
  d.last_access = clock_();
  d.size = size;
  datasets_.emplace(name, std::move(d));
  save_locked();
}

void FileStore::evict_locked(DatasetInfo& d) {
  std::error_code ec;
  fs::remove(*d.fast_path, ec);
  d.fast_path.reset();
  staged_bytes_ -= d.size;
  ++counters_.files_evicted;
}

fs::path FileStore::request(const std::string& name) {
  std::unique_lock lock(mu_);
  auto it = datasets_.find(name);
  if (it == datasets_.end()) throw Error(Errc::kNotFound, "no dataset '" + name + "'");
  staged_cv_.wait(lock, [&] { return !in_flight_.count(name); });

  DatasetInfo& d = it->second;
  if (d.fast_path) {
    d.last_access = clock_();
    save_locked();
    return *d.fast_path;
  }

  std::error_code ec;
  const std::uint64_t size = fs::file_size(d.slow_path, ec);
  if (ec) throw Error(Errc::kNotFound, "slow-tier file " + d.slow_path.string() + " is gone");
  d.size = size;

  const std::uint64_t used = staged_bytes_ + reserved_bytes_;
  std::uint64_t free = config_.capacity > used ? config_.capacity - used : 0;
  if (free < size) {
    std::vector<DatasetInfo*> victims;
    std::uint64_t reclaimable = 0;
    for (auto& [n, other] : datasets_) {
      if (other.fast_path && !other.pinned) {
        victims.push_back(&other);
        reclaimable += other.size;
      }
    }
    if (free + reclaimable < size) {
      throw Error(Errc::kCapacityExceeded,
                  "dataset '" + name + "' (" + std::to_string(size) + " bytes) does not fit in the pool (" +
                      std::to_string(config_.capacity) + " bytes, " + std::to_string(free + reclaimable) +
                      " free after evicting every unpinned file)");
    }
    std::sort(victims.begin(), victims.end(), [](const DatasetInfo* a, const DatasetInfo* b) {
      return a->last_access != b->last_access ? a->last_access < b->last_access : a->name < b->name;
    });
    for (DatasetInfo* v : victims) {
      if (free >= size) break;
      evict_locked(*v);
      free += v->size;
    }
  }

  reserved_bytes_ += size;
  in_flight_.insert(name);
  const fs::path slow = d.slow_path;
  const fs::path fast = fast_path_for(name);
  lock.unlock();

  std::uint64_t copied = 0;
  try {
    if (config_.staging_latency.count() > 0) std::this_thread::sleep_for(config_.staging_latency);
    fs::create_directories(fast.parent_path());
    fs::path tmp = fast;
    tmp += ".staging";
    copied = copy_counted(slow, tmp);
    fs::rename(tmp, fast);
  } catch (...) {
    lock.lock();
    reserved_bytes_ -= size;
    in_flight_.erase(name);
    staged_cv_.notify_all();
    throw;
  }

  lock.lock();
  reserved_bytes_ -= size;
  in_flight_.erase(name);
  counters_.slow_bytes_read += copied;
  ++counters_.files_staged;
  d.size = copied;
  d.fast_path = fast;
  d.last_access = clock_();
  staged_bytes_ += copied;
  staged_cv_.notify_all();
  save_locked();
  return fast;
}

std::vector<std::string> FileStore::sweep() { return sweep(clock_()); }

std::vector<std::string> FileStore::sweep(system_clock::time_point now) {
  std::lock_guard lock(mu_);
  std::vector<std::string> evicted;
  for (auto& [name, d] : datasets_) {
    if (d.fast_path && !d.pinned && now - d.last_access > config_.eviction_age) {
      evict_locked(d);
      evicted.push_back(name);
    }
  }
  if (!evicted.empty()) save_locked();
  return evicted;
}

void FileStore::set_pinned(const std::string& name, bool pinned) {
  std::lock_guard lock(mu_);
  auto it = datasets_.find(name);
  if (it == datasets_.end()) throw Error(Errc::kNotFound, "no dataset '" + name + "'");
  it->second.pinned = pinned;
  save_locked();
}

std::optional<DatasetInfo> FileStore::info(const std::string& name) const {
  std::lock_guard lock(mu_);
  auto it = datasets_.find(name);
  if (it == datasets_.end()) return std::nullopt;
  return it->second;
}

std::vector<DatasetInfo> FileStore::list() const {
  std::lock_guard lock(mu_);
  std::vector<DatasetInfo> out;
  for (const auto& [name, d] : datasets_) out.push_back(d);
  return out;
}

std::uint64_t FileStore::staged_bytes() const {
  std::lock_guard lock(mu_);
  return staged_bytes_;
}

FileStoreCounters FileStore::counters() const {
  std::lock_guard lock(mu_);
  return counters_;
}

}  // namespace evidx
