#include <gtest/gtest.h>

#include <random>

#include "evidx/event_directory.hpp"
#include "test_support.hpp"

namespace evidx {
namespace {

using testing::TempDir;

EventDirectory golden_excerpt() { return load_directory(testing::data_file("run35762_excerpt.dir")); }

FlagBits bits_of(std::initializer_list<std::size_t> on) {
  FlagBits b;
  for (auto i : on) b.set(i);
  return b;
}

TEST(FlagWords, EncodeZero) {
  EXPECT_EQ(encode_flags(FlagBits{}).words, (std::array<std::uint32_t, 4>{0, 0, 0, 0}));
}

TEST(FlagWords, EncodeGoldenRow) {
  const FlagWords w = encode_flags(bits_of({3, 5, 6, 10}));
  EXPECT_EQ(w.words, (std::array<std::uint32_t, 4>{0x468, 0, 0, 0}));
}

TEST(FlagWords, DecodeBoundaries) {
  EXPECT_EQ(decode_flags(FlagWords{{0x468, 0, 0, 0}}), bits_of({3, 5, 6, 10}));
  EXPECT_TRUE(decode_flags(FlagWords{{~0u, ~0u, ~0u, ~0u}}).all());
  EXPECT_EQ(decode_flags(FlagWords{{0, 0, 0, 0x80000000u}}), bits_of({127}));
}

TEST(FlagWords, SpanEncodingChecksLength) {
  bool small[127] = {};
  EXPECT_THROW(encode_flags(std::span<const bool>(small, 127)), Error);
  bool full[128] = {};
  full[32] = true;
  EXPECT_EQ(encode_flags(std::span<const bool>(full, 128)).words[1], 1u);
}

TEST(FlagWords, RoundTripRandom) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    FlagBits b;
    for (std::size_t k = 0; k < kFlagCount; ++k) b[k] = rng() & 1;
    const FlagWords w = encode_flags(b);
    EXPECT_EQ(decode_flags(w), b);
    // Independent statement of the packing rule.
    for (std::size_t k = 0; k < kFlagCount; ++k) {
      ASSERT_EQ(((w.words[k / 32] >> (k % 32)) & 1u) != 0, b[k]);
    }
  }
}

TEST(FlagExpr, RejectsOutOfRangeIndex) {
  EXPECT_THROW(FlagExpr::flag(128), Error);
  EXPECT_NO_THROW(FlagExpr::flag(127));
}

TEST(GoldenExcerpt, ParsesExcerpt) {
  const EventDirectory d = golden_excerpt();
  ASSERT_EQ(d.files.size(), 1u);
  EXPECT_EQ(d.files[0].name, "MDST2.D000331.T224552.R035762A.cz");
  EXPECT_EQ(d.files[0].options, "MEDIUM=COMP,DRIVER=FZ,FILFOR=EXCH,SFGET");
  ASSERT_EQ(d.metas.size(), 3u);
  EXPECT_EQ(d.metas[1], (DirMetaRef{2, "HEAD", 62751}));
  ASSERT_EQ(d.entries.size(), 6u);
  const std::uint32_t events[] = {16, 17, 20, 21, 22, 23};
  const std::uint64_t offsets[] = {62751, 90011, 102480, 131195, 142054, 151840};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(d.entries[i].seq_id, i + 1);
    EXPECT_EQ(d.entries[i].type_tag, TypeTag("EVTF"));
    EXPECT_EQ(d.entries[i].run, 35762u);
    EXPECT_EQ(d.entries[i].event, events[i]);
    EXPECT_EQ(d.entries[i].offset, offsets[i]);
  }
  EXPECT_EQ(d.entries[0].flags.words, (std::array<std::uint32_t, 4>{0x468, 0x60, 0, 0}));
  EXPECT_EQ(d.entries[2].flags.words, (std::array<std::uint32_t, 4>{0x20000460, 0x2020, 0x12000000, 0x40000}));
  EXPECT_NO_THROW(d.validate());
}

TEST(GoldenExcerpt, SerializeReparseIsIdentical) {
  const EventDirectory d = golden_excerpt();
  const std::string text = serialize_directory(d);
  EXPECT_EQ(parse_directory(text), d);
  EXPECT_EQ(serialize_directory(parse_directory(text)), text);
}

TEST(GoldenExcerpt, SerializedRowMatchesGoldenRow) {
  const std::string text = serialize_directory(golden_excerpt());
  EXPECT_NE(text.find("1, 'EVTF', 35762,   16, X'00000468', X'00000060', X'00000000', X'00000000', 62751;"),
            std::string::npos)
      << text;
}

TEST(GoldenExcerpt, SelectFlag3AndNotFlag0) {
  const EventDirectory d = golden_excerpt();
  const auto sel = select(d, FlagExpr::flag(3) && !FlagExpr::flag(0));
  std::vector<std::uint32_t> ids;
  for (const auto& e : sel) ids.push_back(e.seq_id);
  EXPECT_EQ(ids, (std::vector<std::uint32_t>{1, 2, 4, 6}));
  EXPECT_EQ(select(d, FlagExpr::constant(true)).size(), 6u);
  EXPECT_EQ(count_selected(d, FlagExpr::constant(false)), 0u);
}

TEST(DirectoryText, EmptyDirectoryHasThreeSections) {
  const std::string text = serialize_directory(EventDirectory{});
  for (const char* t : {"TABLE 10", "TABLE 11", "TABLE 12"}) EXPECT_NE(text.find(t), std::string::npos);
  std::size_t ends = 0;
  for (std::size_t p = text.find("END TABLE"); p != std::string::npos; p = text.find("END TABLE", p + 1)) ++ends;
  EXPECT_EQ(ends, 3u);
  EXPECT_EQ(parse_directory(text), EventDirectory{});
}

TEST(DirectoryText, ShortHexIsLeftPadded) {
  const std::string text =
      "TABLE 12\n"
      "1, 'EVTF', 1, 1, X'0000060', X'1', X'00', X'000000', 100;\n"
      "END TABLE\n";
  const EventDirectory d = parse_directory(text);
  ASSERT_EQ(d.entries.size(), 1u);
  EXPECT_EQ(d.entries[0].flags.words, (std::array<std::uint32_t, 4>{0x60, 1, 0, 0}));
}

TEST(DirectoryText, MissingEndTableNamesTable) {
  const std::string text =
      "TABLE 12\n"
      "1, 'EVTF', 1, 1, X'0', X'0', X'0', X'0', 100;\n";
  try {
    parse_directory(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("12"), std::string::npos) << e.what();
  }
}

TEST(DirectoryText, ErrorsCarryLineNumbers) {
  const std::string out_of_order =
      "TABLE 12\n"
      "1, 'EVTF', 1, 1, X'0', X'0', X'0', X'0', 100;\n"
      "3, 'EVTF', 1, 2, X'0', X'0', X'0', X'0', 200;\n"
      "2, 'EVTF', 1, 3, X'0', X'0', X'0', X'0', 300;\n"
      "END TABLE\n";
  try {
    parse_directory(out_of_order);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  EXPECT_THROW(parse_directory("TABLE 99\nEND TABLE\n"), ParseError);
  EXPECT_THROW(parse_directory("TABLE 12\n1, 'EVTF', 1;\nEND TABLE\n"), ParseError);
  EXPECT_THROW(parse_directory("TABLE 12\n1, 'EVTF', 1, 1, X'123456789', X'0', X'0', X'0', 1;\nEND TABLE\n"),
               ParseError);
}

TEST(DirectoryValidate, DuplicateEventRejected) {
  EventDirectory d = golden_excerpt();
  d.entries[1].event = d.entries[0].event;
  try {
    d.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kInconsistent);
  }
}

// Random directories, random expressions, brute-force per-row oracle.
class RandomExpr {
 public:
  explicit RandomExpr(std::uint64_t seed) : rng_(seed) {}

  // Returns an expression plus an independent evaluator for it.
  std::pair<FlagExpr, std::function<bool(const FlagBits&)>> make(int depth) {
    const int pick = depth <= 0 ? 0 : static_cast<int>(rng_() % 5);
    if (pick == 0) {
      const std::size_t i = rng_() % 12;  // few distinct flags so outcomes vary
      return {FlagExpr::flag(i), [i](const FlagBits& b) { return b.test(i); }};
    }
    if (pick == 1) {
      auto [e, f] = make(depth - 1);
      return {!e, [f](const FlagBits& b) { return !f(b); }};
    }
    auto [a, fa] = make(depth - 1);
    auto [b, fb] = make(depth - 1);
    if (pick % 2 == 0) return {a && b, [fa, fb](const FlagBits& x) { return fa(x) && fb(x); }};
    return {a || b, [fa, fb](const FlagBits& x) { return fa(x) || fb(x); }};
  }

 private:
  std::mt19937_64 rng_;
};

TEST(DirectorySelect, MatchesBruteForce) {
  std::mt19937_64 rng(11);
  EventDirectory d;
  for (std::uint32_t i = 1; i <= 2000; ++i) {
    DirEntry e;
    e.seq_id = i;
    e.run = 1 + i / 500;
    e.event = i;
    e.offset = 16 + 100ull * i;
    for (auto& w : e.flags.words) w = static_cast<std::uint32_t>(rng());
    d.entries.push_back(e);
  }
  RandomExpr gen(5);
  for (int q = 0; q < 200; ++q) {
    auto [expr, oracle] = gen.make(4);
    std::vector<std::uint32_t> want;
    for (const auto& e : d.entries) {
      if (oracle(decode_flags(e.flags))) want.push_back(e.seq_id);
    }
    std::vector<std::uint32_t> got;
    for (const auto& e : select(d, expr)) got.push_back(e.seq_id);
    ASSERT_EQ(got, want) << expr.to_string();
    EXPECT_EQ(count_selected(d, expr), want.size());
  }
}

TEST(DirectoryBuild, CountsEventsAndMetas) {
  TempDir tmp;
  {
    auto w = StoreWriter::create(tmp / "s.evt");
    w.append(EventRecord::make_event(35762, 16, {1, 2, 3}));
    w.append(EventRecord::make_non_event(TypeTag("HEAD"), {}));
    w.append(EventRecord::make_event(35762, 17, {4}));
  }
  auto r = StoreReader::open(tmp / "s.evt");
  const FlagFunction flag_fn = [](const EventRecord& ev) {
    FlagBits b;
    b.set(ev.event % 128);
    return b;
  };
  const EventDirectory d = build_directory(r, flag_fn);
  ASSERT_EQ(d.entries.size(), 2u);
  ASSERT_EQ(d.metas.size(), 1u);
  EXPECT_EQ(d.metas[0].name, "HEAD");
  EXPECT_TRUE(decode_flags(d.entries[0].flags).test(16));
  for (const auto& e : d.entries) {
    const EventRecord ev = r.read_at(e.offset);
    EXPECT_EQ(ev.run, e.run);
    EXPECT_EQ(ev.event, e.event);
  }
  // Fetch everything: same events as the sequential scan restricted to events.
  FetchCursor cur = fetch(d.entries, r);
  FetchedEvent fe;
  std::vector<std::uint32_t> fetched;
  while (cur.next(fe)) {
    ASSERT_TRUE(fe.ok());
    fetched.push_back(fe.record.event);
  }
  EXPECT_EQ(fetched, (std::vector<std::uint32_t>{16, 17}));

  auto empty_sel = std::span<const DirEntry>();
  FetchCursor none = fetch(empty_sel, r);
  EXPECT_FALSE(none.next(fe));
}

TEST(DirectoryBuild, EmptyStore) {
  TempDir tmp;
  StoreWriter::create(tmp / "s.evt").close();
  auto r = StoreReader::open(tmp / "s.evt");
  const EventDirectory d = build_directory(r, [](const EventRecord&) { return FlagBits{}; });
  EXPECT_TRUE(d.entries.empty());
  EXPECT_TRUE(d.metas.empty());
}

TEST(DirectoryFetch, OffsetAtNonEventIsStale) {
  TempDir tmp;
  std::uint64_t meta_off = 0;
  {
    auto w = StoreWriter::create(tmp / "s.evt");
    w.append(EventRecord::make_event(1, 1, {}));
    meta_off = w.append(EventRecord::make_non_event(TypeTag("HEAD"), {})).offset;
    w.append(EventRecord::make_event(1, 2, {}));
  }
  auto r = StoreReader::open(tmp / "s.evt");
  EventDirectory d = build_directory(r, [](const EventRecord&) { return FlagBits{}; });
  d.entries[0].offset = meta_off;
  FetchCursor cur = fetch(d.entries, r);
  FetchedEvent fe;
  ASSERT_TRUE(cur.next(fe));
  EXPECT_FALSE(fe.ok());
  ASSERT_TRUE(cur.next(fe));
  EXPECT_TRUE(fe.ok());
  EXPECT_EQ(fe.record.event, 2u);
}

TEST(DirectoryFile, SaveLoadRoundTrip) {
  TempDir tmp;
  const EventDirectory d = golden_excerpt();
  save_directory(d, tmp / "x.dir");
  EXPECT_EQ(load_directory(tmp / "x.dir"), d);
}

}  // namespace
}  // namespace evidx
