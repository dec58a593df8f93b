#pragma once

// Two-tier file namespace: every dataset has a permanent copy on a slow
// tier and is copied on demand into a capacity-limited fast pool. Pinned
// datasets are never evicted; others go oldest-access-first under capacity
// pressure, or once they have been idle longer than the eviction age.
//
// The namespace is persisted as a text manifest next to the pool.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace evidx {

using Clock = std::function<std::chrono::system_clock::time_point()>;

struct PoolConfig {
  std::uint64_t capacity = 0;  // bytes; must be > 0
  std::chrono::milliseconds eviction_age = std::chrono::hours(72);
  // Added once per staged file, standing in for tape mount and seek time.
  std::chrono::milliseconds staging_latency{0};
};

struct DatasetInfo {
  std::string name;
  std::filesystem::path slow_path;
  std::optional<std::filesystem::path> fast_path;
  bool pinned = false;
  std::chrono::system_clock::time_point last_access{};
  std::uint64_t size = 0;

  bool staged() const { return fast_path.has_value(); }
};

struct FileStoreCounters {
  std::uint64_t slow_bytes_read = 0;
  std::uint64_t files_staged = 0;
  std::uint64_t files_evicted = 0;
};

class FileStore {
 public:
  // Creates (or reopens) a namespace whose pool lives in pool_dir and whose
  // manifest is pool_dir/manifest.txt. Throws kInvalidArgument for zero
  // capacity.
  static FileStore open(const std::filesystem::path& pool_dir, const PoolConfig& config,
                        Clock clock = {});

  FileStore(FileStore&&) = delete;
  FileStore& operator=(FileStore&&) = delete;

  // Throws kDuplicate for a known name and kNotFound for a missing
  // slow_path. Names may contain '/' but no whitespace.
  void register_dataset(const std::string& name, const std::filesystem::path& slow_path,
                        bool pinned = false);

  // Fast-tier path of the dataset, staging it first when needed. Throws
  // kNotFound for an unknown name and kCapacityExceeded when the file does
  // not fit even after evicting every unpinned file (nothing is evicted in
  // that case).
  std::filesystem::path request(const std::string& name);

  // Evicts unpinned staged files idle for longer than the eviction age.
  std::vector<std::string> sweep();
  std::vector<std::string> sweep(std::chrono::system_clock::time_point now);

  void set_pinned(const std::string& name, bool pinned);

  std::optional<DatasetInfo> info(const std::string& name) const;
  std::vector<DatasetInfo> list() const;
  std::uint64_t staged_bytes() const;
  const PoolConfig& config() const { return config_; }
  FileStoreCounters counters() const;
  const std::filesystem::path& pool_dir() const { return pool_dir_; }

 private:
  FileStore(std::filesystem::path pool_dir, const PoolConfig& config, Clock clock);

  std::filesystem::path fast_path_for(const std::string& name) const;
  void evict_locked(DatasetInfo& d);
  void save_locked() const;
  void load_locked();

  std::filesystem::path pool_dir_;
  PoolConfig config_;
  Clock clock_;

  mutable std::mutex mu_;
  std::condition_variable staged_cv_;
  std::set<std::string> in_flight_;
  std::map<std::string, DatasetInfo> datasets_;
  std::uint64_t staged_bytes_ = 0;
  // Bytes of copies in progress, reserved against capacity.
  std::uint64_t reserved_bytes_ = 0;
  FileStoreCounters counters_;
};

// Whole-file CRC32, used to compare tiers.
std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace evidx
