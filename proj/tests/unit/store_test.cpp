#include <gtest/gtest.h>

#include <unistd.h>

#include <random>

#include "evidx/event_store.hpp"
#include "test_support.hpp"

namespace evidx {
namespace {

using testing::TempDir;

std::vector<std::uint8_t> bytes_of(std::size_t n, std::uint8_t seed) {
  std::vector<std::uint8_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::uint8_t>(seed + i * 7);
  return v;
}

template <typename Fn>
Errc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an evidx::Error";
  return Errc::kInvalidArgument;
}

TEST(TypeTag, PadsAndTrims) {
  TypeTag t("HEA");
  EXPECT_EQ(t.str(), "HEA ");
  EXPECT_EQ(t.trimmed(), "HEA");
  EXPECT_THROW(TypeTag("TOOLONG"), Error);
}

TEST(Store, EmptyStoreHasNoRecords) {
  TempDir tmp;
  auto w = StoreWriter::create(tmp / "a.evt");
  EXPECT_EQ(w.record_count(), 0u);
  w.close();
  auto r = StoreReader::open(tmp / "a.evt");
  EXPECT_FALSE(r.next_record().has_value());
  EXPECT_EQ(r.file_size(), kStoreFileHeaderSize);
}

TEST(Store, ConfigIsEchoedAndPayloadCapEnforced) {
  TempDir tmp;
  StoreConfig cfg;
  cfg.max_payload = 64 * 1024;
  auto w = StoreWriter::create(tmp / "a.evt", cfg);
  EXPECT_EQ(w.config().max_payload, 64u * 1024);
  w.append(EventRecord::make_event(1, 1, bytes_of(64 * 1024, 0)));
  EXPECT_EQ(code_of([&] { w.append(EventRecord::make_event(1, 2, bytes_of(64 * 1024 + 1, 0))); }),
            Errc::kPayloadTooLarge);
  w.close();
  EXPECT_EQ(StoreReader::open(tmp / "a.evt").max_payload(), 64u * 1024);
}

TEST(Store, UnwritablePath) {
  TempDir tmp;
  testing::write_text(tmp / "plain", "x");
  EXPECT_EQ(code_of([&] { StoreWriter::create(tmp / "plain" / "a.evt"); }), Errc::kUnwritablePath);
}

TEST(Store, ExistingFileNeedsTruncate) {
  TempDir tmp;
  StoreWriter::create(tmp / "a.evt").close();
  EXPECT_EQ(code_of([&] { StoreWriter::create(tmp / "a.evt"); }), Errc::kAlreadyExists);
  StoreConfig cfg;
  cfg.truncate = true;
  EXPECT_NO_THROW(StoreWriter::create(tmp / "a.evt", cfg).close());
}

TEST(Store, RecordInvariantsRejected) {
  TempDir tmp;
  auto w = StoreWriter::create(tmp / "a.evt");
  EventRecord bad = EventRecord::make_event(1, 1, {});
  bad.event = 0;
  EXPECT_EQ(code_of([&] { w.append(bad); }), Errc::kInvalidArgument);
  EventRecord meta = EventRecord::make_non_event(TypeTag("HEAD"), {});
  meta.run = 7;
  EXPECT_EQ(code_of([&] { w.append(meta); }), Errc::kInvalidArgument);
}

TEST(Store, OffsetsFollowLayout) {
  TempDir tmp;
  auto w = StoreWriter::create(tmp / "a.evt");
  const auto a = w.append(EventRecord::make_event(35762, 16, bytes_of(100, 1)));
  const auto b = w.append(EventRecord::make_event(35762, 17, bytes_of(37, 2)));
  EXPECT_EQ(a.offset, kStoreFileHeaderSize);
  EXPECT_EQ(b.offset, a.offset + kRecordHeaderSize + 100);
  EXPECT_EQ(w.size(), b.offset + kRecordHeaderSize + 37);
}

TEST(Store, SequentialOrderPreserved) {
  TempDir tmp;
  auto w = StoreWriter::create(tmp / "a.evt");
  const EventRecord a = EventRecord::make_event(5, 1, bytes_of(10, 1));
  const EventRecord c = EventRecord::make_non_event(TypeTag("HEAD"), bytes_of(3, 9));
  const EventRecord b = EventRecord::make_event(5, 2, bytes_of(0, 0));
  w.append(a);
  w.append(c);
  w.append(b);
  w.close();
  auto r = StoreReader::open(tmp / "a.evt");
  EXPECT_EQ(r.next_record(), a);
  EXPECT_EQ(r.next_record(), c);
  EXPECT_EQ(r.next_record(), b);
  EXPECT_FALSE(r.next_record().has_value());
}

TEST(Store, RoundTripRandomRecords) {
  TempDir tmp;
  std::mt19937_64 rng(42);
  std::vector<EventRecord> written;
  std::vector<RecordLocation> locs;
  {
    auto w = StoreWriter::create(tmp / "a.evt");
    std::uint32_t event = 0;
    for (int i = 0; i < 500; ++i) {
      std::vector<std::uint8_t> p(rng() % 3000);
      for (auto& x : p) x = static_cast<std::uint8_t>(rng());
      EventRecord rec = rng() % 10 == 0 ? EventRecord::make_non_event(TypeTag("CALB"), std::move(p))
                                        : EventRecord::make_event(35762, ++event, std::move(p));
      locs.push_back(w.append(rec));
      written.push_back(std::move(rec));
    }
  }
  auto r = StoreReader::open(tmp / "a.evt");
  std::size_t n = 0;
  EventRecord rec;
  while (r.next_record(rec)) {
    ASSERT_LT(n, written.size());
    EXPECT_EQ(rec, written[n]);
    ++n;
  }
  EXPECT_EQ(n, written.size());
  for (std::size_t i = 0; i < written.size(); i += 13) {
    EXPECT_EQ(r.read_at(locs[i].offset), written[i]);
    EXPECT_EQ(r.read_at(locs[i].offset), written[i]) << "read_at is idempotent";
  }
  EXPECT_EQ(r.read_at(locs[2]), written[2]);
}

TEST(Store, SkipRecordReadsHeadersOnly) {
  TempDir tmp;
  {
    auto w = StoreWriter::create(tmp / "a.evt");
    for (std::uint32_t i = 1; i <= 10; ++i) w.append(EventRecord::make_event(1, i, bytes_of(1000, 0)));
  }
  auto r = StoreReader::open(tmp / "a.evt");
  r.reset_counters();
  std::size_t n = 0;
  while (auto h = r.skip_record()) {
    EXPECT_EQ(h->payload_length, 1000u);
    ++n;
  }
  EXPECT_EQ(n, 10u);
  EXPECT_EQ(r.counters().bytes_read, 10 * kRecordHeaderSize);
}

TEST(Store, NonStoreFileIsCorruptHeader) {
  TempDir tmp;
  testing::write_text(tmp / "junk", "this is definitely not a store file");
  EXPECT_EQ(code_of([&] { StoreReader::open(tmp / "junk"); }), Errc::kCorruptHeader);
  EXPECT_EQ(code_of([&] { StoreReader::open(tmp / "missing"); }), Errc::kNotFound);
}

TEST(Store, TruncatedTailReportedAfterLastCompleteRecord) {
  TempDir tmp;
  std::uint64_t second = 0;
  {
    auto w = StoreWriter::create(tmp / "a.evt");
    w.append(EventRecord::make_event(1, 1, bytes_of(50, 0)));
    second = w.append(EventRecord::make_event(1, 2, bytes_of(50, 0))).offset;
  }
  // Cut the second record in the middle of its payload, then in its header.
  for (std::uint64_t cut : {second + kRecordHeaderSize + 20, second + 10}) {
    std::filesystem::resize_file(tmp / "a.evt", cut);
    auto r = StoreReader::open(tmp / "a.evt");
    EventRecord rec;
    ASSERT_TRUE(r.next_record(rec));
    EXPECT_EQ(rec.event, 1u);
    EXPECT_EQ(code_of([&] { r.next_record(rec); }), Errc::kTruncated);
  }
}

TEST(Store, ChecksumMismatchDetected) {
  TempDir tmp;
  std::uint64_t off = 0;
  {
    auto w = StoreWriter::create(tmp / "a.evt");
    off = w.append(EventRecord::make_event(1, 1, bytes_of(50, 0))).offset;
  }
  auto bytes = testing::read_bytes(tmp / "a.evt");
  bytes[off + kRecordHeaderSize + 5] ^= 0xFF;
  testing::write_text(tmp / "a.evt", std::string(bytes.begin(), bytes.end()));
  auto r = StoreReader::open(tmp / "a.evt");
  EXPECT_EQ(code_of([&] { r.next_record(); }), Errc::kChecksumMismatch);
  EXPECT_EQ(code_of([&] { r.read_at(off); }), Errc::kChecksumMismatch);
}

TEST(Store, ReadAtInsideRecordIsBadOffset) {
  TempDir tmp;
  {
    auto w = StoreWriter::create(tmp / "a.evt");
    w.append(EventRecord::make_event(1, 1, bytes_of(200, 0)));
  }
  auto r = StoreReader::open(tmp / "a.evt");
  EXPECT_EQ(code_of([&] { r.read_at(7); }), Errc::kBadOffset);
  EXPECT_EQ(code_of([&] { r.read_at(kStoreFileHeaderSize + 30); }), Errc::kBadOffset);
  EXPECT_EQ(code_of([&] { r.read_at(1u << 30); }), Errc::kBadOffset);
}

TEST(Store, ReaderSeesFlushedRecordsAfterRefresh) {
  TempDir tmp;
  auto w = StoreWriter::create(tmp / "a.evt");
  w.append(EventRecord::make_event(1, 1, bytes_of(10, 0)));
  w.flush();
  auto r = StoreReader::open(tmp / "a.evt");
  EXPECT_TRUE(r.next_record().has_value());
  EXPECT_FALSE(r.next_record().has_value());
  w.append(EventRecord::make_event(1, 2, bytes_of(10, 0)));
  w.flush();
  r.refresh_size();
  auto rec = r.next_record();
  ASSERT_TRUE(rec.has_value());
  EXPECT_EQ(rec->event, 2u);
}

TEST(Fetch, StaleTargetIsIsolated) {
  TempDir tmp;
  std::vector<FetchTarget> targets;
  {
    auto w = StoreWriter::create(tmp / "a.evt");
    for (std::uint32_t i = 1; i <= 3; ++i) {
      const auto loc = w.append(EventRecord::make_event(9, i, bytes_of(40, 0)));
      targets.push_back({9, i, loc.offset, {}});
    }
    const auto meta = w.append(EventRecord::make_non_event(TypeTag("HEAD"), {}));
    targets.push_back({9, 4, meta.offset, {}});
  }
  targets[1].event = 99;  // offset no longer holds the expected event
  auto r = StoreReader::open(tmp / "a.evt");
  FetchCursor cur(r, targets);
  FetchedEvent ev;
  std::vector<bool> ok;
  while (cur.next(ev)) {
    ok.push_back(ev.ok());
    if (!ev.ok()) EXPECT_EQ(ev.error->code(), Errc::kStaleOffset);
  }
  EXPECT_EQ(ok, (std::vector<bool>{true, false, true, false}));
}

}  // namespace
}  // namespace evidx
