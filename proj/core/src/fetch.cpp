#include "evidx/event_store.hpp"

namespace evidx {

FetchCursor::FetchCursor(const StoreReader& reader, std::vector<FetchTarget> targets)
    : reader_(&reader), targets_(std::move(targets)) {}

bool FetchCursor::next(FetchedEvent& out) {
  if (next_ >= targets_.size()) return false;
  out.target = targets_[next_++];
  out.error.reset();
  const FetchTarget& t = out.target;
  auto where = [&] {
    return "run " + std::to_string(t.run) + " event " + std::to_string(t.event) + " at offset " +
           std::to_string(t.offset);
  };

  if (!t.file_id.empty() && t.file_id != reader_->file_id()) {
    out.error = Error(Errc::kStaleOffset,
                      where() + ": located in " + t.file_id + ", not " + reader_->file_id());
    return true;
  }
  try {
    reader_->read_at(t.offset, out.record);
  } catch (const Error& e) {
    out.error = Error(Errc::kStaleOffset, where() + ": " + e.what());
    return true;
  }
  if (!out.record.is_event()) {
    out.error = Error(Errc::kStaleOffset, where() + ": record is a non-event '" +
                                              out.record.type_tag.trimmed() + "'");
  } else if (out.record.run != t.run || out.record.event != t.event) {
    out.error = Error(Errc::kStaleOffset, where() + ": found run " +
                                              std::to_string(out.record.run) + " event " +
                                              std::to_string(out.record.event));
  }
  return true;
}

}  // namespace evidx
