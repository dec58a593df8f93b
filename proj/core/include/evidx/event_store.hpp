#pragma once

// Append-only sequential record files.
//
// A store file is a 16-byte file header followed by records, each a fixed
// 25-byte header plus an opaque payload. All integers are little-endian.
//
//   file header:   magic "EVST" | u16 version | u16 flags | u32 max_payload | u32 reserved
//   record header: u32 total_length | u8 kind | char[4] type_tag | u32 run |
//                  u32 event | u32 payload_length | u32 crc32(payload)
//
// total_length counts header and payload, so a reader can step from one
// record to the next by reading only headers. See docs/FORMATS.md.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evidx/error.hpp"

namespace evidx {

inline constexpr std::size_t kStoreFileHeaderSize = 16;
inline constexpr std::size_t kRecordHeaderSize = 25;
inline constexpr std::uint16_t kStoreFormatVersion = 1;
inline constexpr std::uint32_t kDefaultMaxPayload = 1u << 20;

enum class RecordKind : std::uint8_t { kEvent = 1, kNonEvent = 2 };

// Four-character record type name, e.g. "EVTF" or "HEAD".
class TypeTag {
 public:
  constexpr TypeTag() : chars_{' ', ' ', ' ', ' '} {}
  // Pads with blanks; throws kInvalidArgument for more than four or
  // non-printable characters.
  explicit TypeTag(std::string_view text);

  static TypeTag from_bytes(const std::uint8_t* bytes);

  std::string str() const { return std::string(chars_.data(), chars_.size()); }
  // str() without trailing blanks.
  std::string trimmed() const;
  const std::array<char, 4>& chars() const { return chars_; }

  friend bool operator==(const TypeTag&, const TypeTag&) = default;

 private:
  std::array<char, 4> chars_;
};

struct EventRecord {
  RecordKind kind = RecordKind::kEvent;
  TypeTag type_tag{"EVTF"};
  std::uint32_t run = 0;
  std::uint32_t event = 0;
  std::vector<std::uint8_t> payload;

  static EventRecord make_event(std::uint32_t run, std::uint32_t event,
                                std::vector<std::uint8_t> payload,
                                TypeTag tag = TypeTag("EVTF"));
  static EventRecord make_non_event(TypeTag tag, std::vector<std::uint8_t> payload);

  bool is_event() const { return kind == RecordKind::kEvent; }

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct RecordLocation {
  std::string file_id;
  std::uint64_t offset = 0;

  friend bool operator==(const RecordLocation&, const RecordLocation&) = default;
};

struct RecordHeader {
  std::uint32_t total_length = 0;
  RecordKind kind = RecordKind::kEvent;
  TypeTag type_tag;
  std::uint32_t run = 0;
  std::uint32_t event = 0;
  std::uint32_t payload_length = 0;
  std::uint32_t crc = 0;
};

struct StoreConfig {
  std::uint32_t max_payload = kDefaultMaxPayload;
  bool checksum = true;
  // Replace an existing file instead of failing.
  bool truncate = false;
};

// Byte and call counters for an open reader. Shared by all copies of the
// counters pointer so that tests can observe exactly what was read.
struct IoCounters {
  std::atomic<std::uint64_t> bytes_read{0};
  std::atomic<std::uint64_t> read_calls{0};

  void reset() {
    bytes_read = 0;
    read_calls = 0;
  }
};

class StoreWriter {
 public:
  static StoreWriter create(const std::filesystem::path& path,
                            const StoreConfig& config = {});

  StoreWriter(StoreWriter&&) noexcept;
  StoreWriter& operator=(StoreWriter&&) noexcept;
  ~StoreWriter();

  // Appends one record and returns where it starts. The record becomes
  // visible to readers after flush() (or when the writer is closed).
  RecordLocation append(const EventRecord& record);

  void flush();
  void close();

  std::uint64_t size() const { return size_; }
  std::uint64_t committed_size() const { return committed_; }
  std::uint64_t record_count() const { return records_; }
  const StoreConfig& config() const { return config_; }
  const std::string& file_id() const { return file_id_; }
  void set_file_id(std::string id) { file_id_ = std::move(id); }

 private:
  StoreWriter() = default;

  int fd_ = -1;
  StoreConfig config_;
  std::string file_id_;
  std::vector<std::uint8_t> buffer_;
  std::uint64_t size_ = 0;
  std::uint64_t committed_ = 0;
  std::uint64_t records_ = 0;
};

class StoreReader {
 public:
  // file_id names the store in the filestore namespace; defaults to the
  // file name.
  static StoreReader open(const std::filesystem::path& path, std::string file_id = {});

  StoreReader(StoreReader&&) noexcept;
  StoreReader& operator=(StoreReader&&) noexcept;
  ~StoreReader();

  // Sequential cursor. Returns false at end of store; throws kTruncated on a
  // partial trailing record and kChecksumMismatch on a payload CRC failure.
  bool next_record(EventRecord& out);
  std::optional<EventRecord> next_record();

  // Reads only the next header and steps over the payload.
  std::optional<RecordHeader> skip_record();

  void rewind();
  std::uint64_t position() const { return position_; }

  // Direct read through an independent cursor; does not move position().
  // Throws kBadOffset when the offset is not a record boundary inside the
  // file.
  void read_at(std::uint64_t offset, EventRecord& out) const;
  EventRecord read_at(std::uint64_t offset) const;
  EventRecord read_at(const RecordLocation& location) const;

  // Reads the header at offset and validates it as a record boundary.
  RecordHeader header_at(std::uint64_t offset) const;

  // Picks up records committed by a concurrent writer.
  void refresh_size();

  std::uint64_t file_size() const { return file_size_; }
  std::uint32_t max_payload() const { return max_payload_; }
  bool checksums_enabled() const { return checksum_; }
  const std::string& file_id() const { return file_id_; }
  const std::filesystem::path& path() const { return path_; }

  const IoCounters& counters() const { return *counters_; }
  void reset_counters() { counters_->reset(); }

 private:
  StoreReader() = default;

  void pread_exact(std::uint8_t* dst, std::size_t n, std::uint64_t offset) const;
  RecordHeader decode_header(const std::uint8_t* bytes) const;
  bool plausible(const RecordHeader& h, std::uint64_t offset) const;
  void read_payload(const RecordHeader& h, std::uint64_t offset, EventRecord& out) const;

  int fd_ = -1;
  std::filesystem::path path_;
  std::string file_id_;
  std::uint64_t file_size_ = 0;
  std::uint64_t position_ = kStoreFileHeaderSize;
  std::uint32_t max_payload_ = 0;
  bool checksum_ = true;
  std::unique_ptr<IoCounters> counters_;
};

// Target of a direct fetch: where an index believes an event lives.
struct FetchTarget {
  std::uint32_t run = 0;
  std::uint32_t event = 0;
  std::uint64_t offset = 0;
  // Empty matches any store; otherwise must equal the reader's file_id.
  std::string file_id;
};

struct FetchedEvent {
  FetchTarget target;
  EventRecord record;
  // Set when the target could not be resolved to the expected event.
  std::optional<Error> error;

  bool ok() const { return !error.has_value(); }
};

// Ordered iterator over direct reads. A stale target yields an item with
// error set (kStaleOffset) and iteration continues with the next target.
class FetchCursor {
 public:
  FetchCursor(const StoreReader& reader, std::vector<FetchTarget> targets);

  bool next(FetchedEvent& out);
  std::size_t size() const { return targets_.size(); }
  std::size_t remaining() const { return targets_.size() - next_; }

 private:
  const StoreReader* reader_;
  std::vector<FetchTarget> targets_;
  std::size_t next_ = 0;
};

}  // namespace evidx
