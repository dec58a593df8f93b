#include "evidx/event_directory.hpp"

#include <set>
#include <utility>

#include "posix_file.hpp"

namespace evidx {

FlagWords encode_flags(std::span<const bool> bits) {
  if (bits.size() != kFlagCount) {
    throw Error(Errc::kInvalidArgument,
                "expected 128 flags, got " + std::to_string(bits.size()));
  }
  FlagWords w;
  for (std::size_t i = 0; i < kFlagCount; ++i) {
    if (bits[i]) w.set(i);
  }
  return w;
}

FlagWords encode_flags(const FlagBits& bits) {
  FlagWords w;
  for (std::size_t i = 0; i < kFlagCount; ++i) {
    if (bits.test(i)) w.set(i);
  }
  return w;
}

FlagBits decode_flags(const FlagWords& words) {
  FlagBits bits;
  for (std::size_t i = 0; i < kFlagCount; ++i) bits.set(i, words.test(i));
  return bits;
}

// ---------------------------------------------------------------------------
// FlagExpr

struct FlagExpr::Node {
  Kind kind;
  bool value = false;
  std::size_t index = 0;
  std::vector<FlagExpr> children;
};

namespace {

bool eval_node(const FlagExpr& e, const FlagWords& flags) {
  switch (e.kind()) {
    case FlagExpr::Kind::kConst: return e.value();
    case FlagExpr::Kind::kFlag: return flags.test(e.index());
    case FlagExpr::Kind::kAnd: return eval_node(e.lhs(), flags) && eval_node(e.rhs(), flags);
    case FlagExpr::Kind::kOr: return eval_node(e.lhs(), flags) || eval_node(e.rhs(), flags);
    case FlagExpr::Kind::kNot: return !eval_node(e.lhs(), flags);
  }
  return false;
}

}  // namespace

FlagExpr FlagExpr::constant(bool value) {
  return FlagExpr(std::make_shared<const Node>(Node{Kind::kConst, value, 0, {}}));
}

FlagExpr FlagExpr::flag(std::size_t index) {
  if (index >= kFlagCount) {
    throw Error(Errc::kOutOfRange, "flag index " + std::to_string(index) + " not in [0,128)");
  }
  return FlagExpr(std::make_shared<const Node>(Node{Kind::kFlag, false, index, {}}));
}

FlagExpr FlagExpr::all_of(FlagExpr a, FlagExpr b) {
  return FlagExpr(std::make_shared<const Node>(
      Node{Kind::kAnd, false, 0, {std::move(a), std::move(b)}}));
}

FlagExpr FlagExpr::any_of(FlagExpr a, FlagExpr b) {
  return FlagExpr(std::make_shared<const Node>(
      Node{Kind::kOr, false, 0, {std::move(a), std::move(b)}}));
}

FlagExpr FlagExpr::negate(FlagExpr a) {
  return FlagExpr(std::make_shared<const Node>(Node{Kind::kNot, false, 0, {std::move(a)}}));
}

FlagExpr::Kind FlagExpr::kind() const { return node_->kind; }
bool FlagExpr::value() const { return node_->value; }
std::size_t FlagExpr::index() const { return node_->index; }

const FlagExpr& FlagExpr::lhs() const { return node_->children[0]; }
const FlagExpr& FlagExpr::rhs() const { return node_->children[1]; }

bool FlagExpr::evaluate(const FlagWords& flags) const { return eval_node(*this, flags); }

std::string FlagExpr::to_string() const {
  switch (kind()) {
    case Kind::kConst: return value() ? "true" : "false";
    case Kind::kFlag: return "flag(" + std::to_string(index()) + ")";
    case Kind::kAnd: return "(" + lhs().to_string() + " and " + rhs().to_string() + ")";
    case Kind::kOr: return "(" + lhs().to_string() + " or " + rhs().to_string() + ")";
    case Kind::kNot: return "not " + lhs().to_string();
  }
  return {};
}

// ---------------------------------------------------------------------------
// EventDirectory

void EventDirectory::validate() const {
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const DirEntry& e = entries[i];
    if (!seen.emplace(e.run, e.event).second) {
      throw Error(Errc::kInconsistent, "duplicate run " + std::to_string(e.run) + " event " +
                                           std::to_string(e.event) + " at seq id " +
                                           std::to_string(e.seq_id));
    }
    if (i > 0) {
      if (e.seq_id <= entries[i - 1].seq_id) {
        throw Error(Errc::kInconsistent, "seq id " + std::to_string(e.seq_id) + " not increasing");
      }
      if (e.offset <= entries[i - 1].offset) {
        throw Error(Errc::kInconsistent,
                    "offset of seq id " + std::to_string(e.seq_id) + " not increasing");
      }
    }
  }
}

EventDirectory build_directory(StoreReader& reader, const FlagFunction& flag_fn) {
  EventDirectory dir;
  dir.files.push_back(DirFileRef{1, reader.file_id(), ""});
  reader.rewind();
  EventRecord rec;
  std::uint64_t offset = reader.position();
  while (reader.next_record(rec)) {
    if (rec.is_event()) {
      DirEntry e;
      e.seq_id = static_cast<std::uint32_t>(dir.entries.size() + 1);
      e.type_tag = rec.type_tag;
      e.run = rec.run;
      e.event = rec.event;
      e.flags = encode_flags(flag_fn(rec));
      e.offset = offset;
      dir.entries.push_back(e);
    } else {
      dir.metas.push_back(DirMetaRef{static_cast<std::uint32_t>(dir.metas.size() + 1),
                                     rec.type_tag.trimmed(), offset});
    }
    offset = reader.position();
  }
  return dir;
}

std::vector<DirEntry> select(const EventDirectory& dir, const FlagExpr& expr) {
  std::vector<DirEntry> out;
  for (const DirEntry& e : dir.entries) {
    if (expr.evaluate(e.flags)) out.push_back(e);
  }
  return out;
}

std::size_t count_selected(const EventDirectory& dir, const FlagExpr& expr) {
  std::size_t n = 0;
  for (const DirEntry& e : dir.entries) n += expr.evaluate(e.flags) ? 1 : 0;
  return n;
}

FetchCursor fetch(std::span<const DirEntry> selection, const StoreReader& store) {
  std::vector<FetchTarget> targets;
  targets.reserve(selection.size());
  for (const DirEntry& e : selection) targets.push_back(FetchTarget{e.run, e.event, e.offset, {}});
  return FetchCursor(store, std::move(targets));
}

EventDirectory load_directory(const std::filesystem::path& path) {
  return parse_directory(detail::read_text_file(path));
}

void save_directory(const EventDirectory& dir, const std::filesystem::path& path) {
  detail::atomic_write_text(path, serialize_directory(dir));
}

}  // namespace evidx
