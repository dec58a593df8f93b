#include "evidx/event_store.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>

#include "le.hpp"
#include "posix_file.hpp"

namespace evidx {

namespace {

constexpr std::uint8_t kStoreMagic[4] = {'E', 'V', 'S', 'T'};
constexpr std::uint16_t kFlagChecksum = 0x1;
constexpr std::size_t kWriteBufferLimit = 1u << 20;

bool printable(char c) { return c >= 0x20 && c <= 0x7e; }

std::uint32_t payload_crc(const std::vector<std::uint8_t>& payload) {
  return static_cast<std::uint32_t>(
      crc32_z(0, payload.data(), payload.size()));
}

void encode_header(const RecordHeader& h, std::uint8_t* p) {
  le::put_u32(p, h.total_length);
  p[4] = static_cast<std::uint8_t>(h.kind);
  std::copy(h.type_tag.chars().begin(), h.type_tag.chars().end(), p + 5);
  le::put_u32(p + 9, h.run);
  le::put_u32(p + 13, h.event);
  le::put_u32(p + 17, h.payload_length);
  le::put_u32(p + 21, h.crc);
}

}  // namespace

TypeTag::TypeTag(std::string_view text) : TypeTag() {
  if (text.size() > 4) {
    throw Error(Errc::kInvalidArgument, "type tag longer than 4 characters: " + std::string(text));
  }
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!printable(text[i])) throw Error(Errc::kInvalidArgument, "non-printable type tag");
    chars_[i] = text[i];
  }
}

TypeTag TypeTag::from_bytes(const std::uint8_t* bytes) {
  TypeTag tag;
  for (int i = 0; i < 4; ++i) tag.chars_[i] = static_cast<char>(bytes[i]);
  return tag;
}

std::string TypeTag::trimmed() const {
  std::string s = str();
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

EventRecord EventRecord::make_event(std::uint32_t run, std::uint32_t event,
                                    std::vector<std::uint8_t> payload, TypeTag tag) {
  EventRecord r;
  r.kind = RecordKind::kEvent;
  r.type_tag = tag;
  r.run = run;
  r.event = event;
  r.payload = std::move(payload);
  return r;
}

EventRecord EventRecord::make_non_event(TypeTag tag, std::vector<std::uint8_t> payload) {
  EventRecord r;
  r.kind = RecordKind::kNonEvent;
  r.type_tag = tag;
  r.payload = std::move(payload);
  return r;
}

// ---------------------------------------------------------------------------
// StoreWriter

StoreWriter StoreWriter::create(const std::filesystem::path& path, const StoreConfig& config) {
  if (config.max_payload == 0) {
    throw Error(Errc::kInvalidArgument, "max_payload must be positive");
  }
  int flags = O_WRONLY | O_CREAT | O_CLOEXEC | (config.truncate ? O_TRUNC : O_EXCL);
  int fd = ::open(path.c_str(), flags, 0644);
  if (fd < 0) {
    int err = errno;
    if (err == EEXIST) {
      throw Error(Errc::kAlreadyExists, path.string() + ": store exists (set truncate to replace)");
    }
    throw Error(Errc::kUnwritablePath, path.string() + ": " + detail::errno_text(err));
  }

  StoreWriter w;
  w.fd_ = fd;
  w.config_ = config;
  w.file_id_ = path.filename().string();

  std::uint8_t header[kStoreFileHeaderSize] = {};
  std::copy(std::begin(kStoreMagic), std::end(kStoreMagic), header);
  le::put_u16(header + 4, kStoreFormatVersion);
  le::put_u16(header + 6, config.checksum ? kFlagChecksum : 0);
  le::put_u32(header + 8, config.max_payload);
  w.buffer_.assign(header, header + kStoreFileHeaderSize);
  w.size_ = kStoreFileHeaderSize;
  w.flush();
  return w;
}

StoreWriter::StoreWriter(StoreWriter&& other) noexcept { *this = std::move(other); }

StoreWriter& StoreWriter::operator=(StoreWriter&& other) noexcept {
  if (this != &other) {
    try {
      close();
    } catch (...) {
    }
    fd_ = std::exchange(other.fd_, -1);
    config_ = other.config_;
    file_id_ = std::move(other.file_id_);
    buffer_ = std::move(other.buffer_);
    size_ = other.size_;
    committed_ = other.committed_;
    records_ = other.records_;
  }
  return *this;
}

StoreWriter::~StoreWriter() {
  try {
    close();
  } catch (...) {
  }
}

RecordLocation StoreWriter::append(const EventRecord& record) {
  if (fd_ < 0) throw Error(Errc::kIo, "append to closed store");
  if (record.kind == RecordKind::kEvent) {
    if (record.run == 0 || record.event == 0) {
      throw Error(Errc::kInvalidArgument, "event records need run >= 1 and event >= 1");
    }
  } else if (record.kind == RecordKind::kNonEvent) {
    if (record.run != 0 || record.event != 0) {
      throw Error(Errc::kInvalidArgument, "non-event records carry run = 0 and event = 0");
    }
  } else {
    throw Error(Errc::kInvalidArgument, "unknown record kind");
  }
  if (record.payload.size() > config_.max_payload) {
    throw Error(Errc::kPayloadTooLarge,
                std::to_string(record.payload.size()) + " bytes exceeds cap of " +
                    std::to_string(config_.max_payload));
  }

  RecordHeader h;
  h.payload_length = static_cast<std::uint32_t>(record.payload.size());
  h.total_length = static_cast<std::uint32_t>(kRecordHeaderSize + h.payload_length);
  h.kind = record.kind;
  h.type_tag = record.type_tag;
  h.run = record.run;
  h.event = record.event;
  h.crc = config_.checksum ? payload_crc(record.payload) : 0;

  RecordLocation loc{file_id_, size_};
  std::size_t at = buffer_.size();
  buffer_.resize(at + kRecordHeaderSize);
  encode_header(h, buffer_.data() + at);
  buffer_.insert(buffer_.end(), record.payload.begin(), record.payload.end());
  size_ += h.total_length;
  ++records_;
  if (buffer_.size() >= kWriteBufferLimit) flush();
  return loc;
}

void StoreWriter::flush() {
  if (fd_ < 0 || buffer_.empty()) return;
  detail::write_all(fd_, buffer_.data(), buffer_.size(), file_id_);
  buffer_.clear();
  committed_ = size_;
}

void StoreWriter::close() {
  if (fd_ < 0) return;
  flush();
  ::close(fd_);
  fd_ = -1;
}

// ---------------------------------------------------------------------------
// StoreReader

StoreReader StoreReader::open(const std::filesystem::path& path, std::string file_id) {
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    throw Error(Errc::kNotFound, path.string() + ": " + detail::errno_text(errno));
  }
  StoreReader r;
  r.fd_ = fd;
  r.path_ = path;
  r.file_id_ = file_id.empty() ? path.filename().string() : std::move(file_id);
  r.counters_ = std::make_unique<IoCounters>();
  r.file_size_ = detail::fd_size(fd, path.string());

  if (r.file_size_ < kStoreFileHeaderSize) {
    throw Error(Errc::kCorruptHeader, path.string() + ": too short for a store header");
  }
  std::uint8_t header[kStoreFileHeaderSize];
  r.pread_exact(header, sizeof header, 0);
  if (!std::equal(std::begin(kStoreMagic), std::end(kStoreMagic), header)) {
    throw Error(Errc::kCorruptHeader, path.string() + ": bad magic");
  }
  if (le::get_u16(header + 4) != kStoreFormatVersion) {
    throw Error(Errc::kCorruptHeader, path.string() + ": unsupported version " +
                                          std::to_string(le::get_u16(header + 4)));
  }
  r.checksum_ = (le::get_u16(header + 6) & kFlagChecksum) != 0;
  r.max_payload_ = le::get_u32(header + 8);
  if (r.max_payload_ == 0) throw Error(Errc::kCorruptHeader, path.string() + ": zero payload cap");
  return r;
}

StoreReader::StoreReader(StoreReader&& other) noexcept { *this = std::move(other); }

StoreReader& StoreReader::operator=(StoreReader&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    path_ = std::move(other.path_);
    file_id_ = std::move(other.file_id_);
    file_size_ = other.file_size_;
    position_ = other.position_;
    max_payload_ = other.max_payload_;
    checksum_ = other.checksum_;
    counters_ = std::move(other.counters_);
  }
  return *this;
}

StoreReader::~StoreReader() {
  if (fd_ >= 0) ::close(fd_);
}

void StoreReader::pread_exact(std::uint8_t* dst, std::size_t n, std::uint64_t offset) const {
  detail::pread_all(fd_, dst, n, offset, path_.string());
  counters_->bytes_read.fetch_add(n, std::memory_order_relaxed);
  counters_->read_calls.fetch_add(1, std::memory_order_relaxed);
}

RecordHeader StoreReader::decode_header(const std::uint8_t* p) const {
  RecordHeader h;
  h.total_length = le::get_u32(p);
  h.kind = static_cast<RecordKind>(p[4]);
  h.type_tag = TypeTag::from_bytes(p + 5);
  h.run = le::get_u32(p + 9);
  h.event = le::get_u32(p + 13);
  h.payload_length = le::get_u32(p + 17);
  h.crc = le::get_u32(p + 21);
  return h;
}

// Structural validity of a header, independent of file bounds.
bool StoreReader::plausible(const RecordHeader& h, std::uint64_t) const {
  if (h.kind == RecordKind::kEvent) {
    if (h.run == 0 || h.event == 0) return false;
  } else if (h.kind == RecordKind::kNonEvent) {
    if (h.run != 0 || h.event != 0) return false;
  } else {
    return false;
  }
  if (h.payload_length > max_payload_) return false;
  if (h.total_length != kRecordHeaderSize + std::uint64_t{h.payload_length}) return false;
  if (!checksum_ && h.crc != 0) return false;
  for (char c : h.type_tag.chars()) {
    if (!printable(c)) return false;
  }
  return true;
}

void StoreReader::read_payload(const RecordHeader& h, std::uint64_t offset, EventRecord& out) const {
  out.kind = h.kind;
  out.type_tag = h.type_tag;
  out.run = h.run;
  out.event = h.event;
  out.payload.resize(h.payload_length);
  if (h.payload_length > 0) {
    pread_exact(out.payload.data(), h.payload_length, offset + kRecordHeaderSize);
  }
  if (checksum_ && payload_crc(out.payload) != h.crc) {
    throw Error(Errc::kChecksumMismatch,
                file_id_ + " at offset " + std::to_string(offset) + ": payload CRC mismatch");
  }
}

bool StoreReader::next_record(EventRecord& out) {
  if (position_ >= file_size_) return false;
  if (file_size_ - position_ < kRecordHeaderSize) {
    throw Error(Errc::kTruncated, file_id_ + ": partial record header at offset " +
                                      std::to_string(position_));
  }
  std::uint8_t raw[kRecordHeaderSize];
  pread_exact(raw, sizeof raw, position_);
  RecordHeader h = decode_header(raw);
  if (!plausible(h, position_)) {
    throw Error(Errc::kCorruptRecord, file_id_ + ": malformed record header at offset " +
                                          std::to_string(position_));
  }
  if (position_ + h.total_length > file_size_) {
    throw Error(Errc::kTruncated, file_id_ + ": record at offset " + std::to_string(position_) +
                                      " extends past end of file");
  }
  read_payload(h, position_, out);
  position_ += h.total_length;
  return true;
}

std::optional<EventRecord> StoreReader::next_record() {
  EventRecord r;
  if (!next_record(r)) return std::nullopt;
  return r;
}

std::optional<RecordHeader> StoreReader::skip_record() {
  if (position_ >= file_size_) return std::nullopt;
  if (file_size_ - position_ < kRecordHeaderSize) {
    throw Error(Errc::kTruncated, file_id_ + ": partial record header at offset " +
                                      std::to_string(position_));
  }
  std::uint8_t raw[kRecordHeaderSize];
  pread_exact(raw, sizeof raw, position_);
  RecordHeader h = decode_header(raw);
  if (!plausible(h, position_)) {
    throw Error(Errc::kCorruptRecord, file_id_ + ": malformed record header at offset " +
                                          std::to_string(position_));
  }
  if (position_ + h.total_length > file_size_) {
    throw Error(Errc::kTruncated, file_id_ + ": record at offset " + std::to_string(position_) +
                                      " extends past end of file");
  }
  position_ += h.total_length;
  return h;
}

void StoreReader::rewind() { position_ = kStoreFileHeaderSize; }

void StoreReader::refresh_size() { file_size_ = detail::fd_size(fd_, path_.string()); }

RecordHeader StoreReader::header_at(std::uint64_t offset) const {
  if (offset < kStoreFileHeaderSize || offset >= file_size_ ||
      file_size_ - offset < kRecordHeaderSize) {
    throw Error(Errc::kBadOffset, file_id_ + ": offset " + std::to_string(offset) +
                                      " outside record area (file size " +
                                      std::to_string(file_size_) + ")");
  }
  std::uint8_t raw[kRecordHeaderSize];
  pread_exact(raw, sizeof raw, offset);
  RecordHeader h = decode_header(raw);
  if (!plausible(h, offset) || offset + h.total_length > file_size_) {
    throw Error(Errc::kBadOffset,
                file_id_ + ": offset " + std::to_string(offset) + " is not a record boundary");
  }
  return h;
}

void StoreReader::read_at(std::uint64_t offset, EventRecord& out) const {
  RecordHeader h = header_at(offset);
  read_payload(h, offset, out);
}

EventRecord StoreReader::read_at(std::uint64_t offset) const {
  EventRecord r;
  read_at(offset, r);
  return r;
}

EventRecord StoreReader::read_at(const RecordLocation& location) const {
  if (!location.file_id.empty() && location.file_id != file_id_) {
    throw Error(Errc::kBadOffset, "location refers to " + location.file_id + ", reader holds " +
                                      file_id_);
  }
  return read_at(location.offset);
}

}  // namespace evidx
