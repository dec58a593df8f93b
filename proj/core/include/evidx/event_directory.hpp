#pragma once

// Event directories: one index row per event holding run/event numbers,
// 128 precomputed selection flags packed into four 32-bit words, and the
// byte offset of the event in its sequential store. Selection evaluates a
// boolean flag expression over the rows only; the store is touched only to
// fetch what was selected.

#include <array>
#include <bitset>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evidx/event_store.hpp"

namespace evidx {

inline constexpr std::size_t kFlagCount = 128;

using FlagBits = std::bitset<kFlagCount>;

// Flag i lives in bit (i % 32) of word (i / 32); bit 0 is least significant.
struct FlagWords {
  std::array<std::uint32_t, 4> words{};

  bool test(std::size_t i) const { return (words[i >> 5] >> (i & 31)) & 1u; }
  void set(std::size_t i, bool value = true) {
    const std::uint32_t mask = 1u << (i & 31);
    words[i >> 5] = value ? (words[i >> 5] | mask) : (words[i >> 5] & ~mask);
  }

  friend bool operator==(const FlagWords&, const FlagWords&) = default;
};

// Throws kInvalidArgument unless bits.size() == 128.
FlagWords encode_flags(std::span<const bool> bits);
FlagWords encode_flags(const FlagBits& bits);
FlagBits decode_flags(const FlagWords& words);

// Immutable boolean expression over flag atoms. Cheap to copy.
class FlagExpr {
 public:
  enum class Kind { kConst, kFlag, kAnd, kOr, kNot };

  static FlagExpr constant(bool value);
  // Throws kOutOfRange for index >= 128.
  static FlagExpr flag(std::size_t index);
  static FlagExpr all_of(FlagExpr a, FlagExpr b);
  static FlagExpr any_of(FlagExpr a, FlagExpr b);
  static FlagExpr negate(FlagExpr a);

  friend FlagExpr operator&&(FlagExpr a, FlagExpr b) { return all_of(std::move(a), std::move(b)); }
  friend FlagExpr operator||(FlagExpr a, FlagExpr b) { return any_of(std::move(a), std::move(b)); }
  friend FlagExpr operator!(FlagExpr a) { return negate(std::move(a)); }

  bool evaluate(const FlagWords& flags) const;

  Kind kind() const;
  bool value() const;        // kConst
  std::size_t index() const; // kFlag
  const FlagExpr& lhs() const;
  const FlagExpr& rhs() const;

  // Canonical text, e.g. "(flag(3) and not flag(0))".
  std::string to_string() const;

 private:
  struct Node;
  explicit FlagExpr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

struct DirFileRef {
  std::uint32_t id = 0;
  std::string name;
  std::string options;

  friend bool operator==(const DirFileRef&, const DirFileRef&) = default;
};

// A non-event record of the store (run headers, calibration blocks, ...).
struct DirMetaRef {
  std::uint32_t id = 0;
  std::string name;
  std::uint64_t offset = 0;

  friend bool operator==(const DirMetaRef&, const DirMetaRef&) = default;
};

struct DirEntry {
  std::uint32_t seq_id = 0;
  TypeTag type_tag{"EVTF"};
  std::uint32_t run = 0;
  std::uint32_t event = 0;
  FlagWords flags;
  std::uint64_t offset = 0;

  friend bool operator==(const DirEntry&, const DirEntry&) = default;
};

struct EventDirectory {
  std::vector<DirFileRef> files;
  std::vector<DirMetaRef> metas;
  std::vector<DirEntry> entries;

  // Checks (run, event) uniqueness and strictly increasing seq ids and
  // offsets; throws kInconsistent naming the first offending row.
  void validate() const;

  friend bool operator==(const EventDirectory&, const EventDirectory&) = default;
};

using FlagFunction = std::function<FlagBits(const EventRecord&)>;

// Scans the store from its first record. Events become entries (seq ids
// 1..N), non-event records become meta refs.
EventDirectory build_directory(StoreReader& reader, const FlagFunction& flag_fn);

// Human-readable table format (TABLE 10/11/12 with ZEDFILEX, ZEDMETAX and
// ZEDIRX rows). Flag words are always written as eight hex digits.
std::string serialize_directory(const EventDirectory& dir);

// Accepts /* */ comments and 1-8 digit hex words. Throws ParseError with
// the line number on malformed rows, unknown table ids, out-of-order seq
// ids and unterminated tables.
EventDirectory parse_directory(std::string_view text);

EventDirectory load_directory(const std::filesystem::path& path);
void save_directory(const EventDirectory& dir, const std::filesystem::path& path);

std::vector<DirEntry> select(const EventDirectory& dir, const FlagExpr& expr);
std::size_t count_selected(const EventDirectory& dir, const FlagExpr& expr);

// Direct reads of the selected events, in selection order.
FetchCursor fetch(std::span<const DirEntry> selection, const StoreReader& store);

}  // namespace evidx
