#pragma once

// Fixed record layout for tag records.
//
// A slab holds, in order: every scalar variable (4 bytes per slot,
// float32 or int32, little-endian), every bit group (packed, LSB first,
// byte aligned), and one presence bit per variable. The layout follows
// from the descriptor list alone, so a variable can be located and
// rewritten in place without touching its neighbours.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evidx/event_directory.hpp"
#include "evidx/event_store.hpp"

namespace evidx {

enum class VarKind : std::uint8_t { kFloat32, kInt32, kBitGroup };

const char* var_kind_name(VarKind kind);

struct VariableDescriptor {
  std::string name;
  VarKind kind = VarKind::kFloat32;
  // Scalar slots for float32/int32, bits for a bit group.
  std::uint32_t width = 1;
  std::string group;

  friend bool operator==(const VariableDescriptor&, const VariableDescriptor&) = default;
};

struct VariableInfo {
  VariableDescriptor desc;
  std::uint32_t index = 0;
  std::uint32_t offset = 0;  // byte offset in the slab
  std::uint32_t bytes = 0;   // bytes occupied in the slab

  bool scalar() const { return desc.kind != VarKind::kBitGroup; }
};

// Bit groups every schema must carry, with their exact widths.
struct RequiredBitGroup {
  const char* name;
  std::uint32_t bits;
};
inline constexpr RequiredBitGroup kRequiredBitGroups[] = {
    {"FLT", 64}, {"SLT", 192}, {"TLT", 352}, {"OFFLINE", 128}, {"MISC", 64}};
inline constexpr std::uint32_t kMinScalarSlots = 201;
inline constexpr const char* kOfflineGroup = "OFFLINE";

class TagSchema {
 public:
  // Throws kDuplicate for repeated names (case-insensitive), kSchemaMismatch
  // for a missing or mis-sized bit group or too few scalar slots.
  static TagSchema define(std::vector<VariableDescriptor> descriptors, std::uint32_t version = 1);

  // Run/event numbers, the five flag groups and 212 physics quantities
  // grouped as calorimeter electrons, kinematics, calorimetry, tracking,
  // luminosity, muons, forward detectors, jets and charm.
  static const TagSchema& builtin();

  std::size_t size() const { return vars_.size(); }
  const std::vector<VariableInfo>& variables() const { return vars_; }
  const VariableInfo& at(std::size_t index) const { return vars_.at(index); }
  // Case-insensitive lookup.
  std::optional<std::size_t> find(std::string_view name) const;
  // Throws kUnknownName.
  const VariableInfo& get(std::string_view name) const;

  std::uint32_t slab_size() const { return slab_size_; }
  std::uint32_t value_bytes() const { return value_bytes_; }
  std::uint32_t bit_bytes() const { return bit_bytes_; }
  std::uint32_t presence_offset() const { return value_bytes_ + bit_bytes_; }
  std::uint32_t presence_bytes() const { return slab_size_ - presence_offset(); }
  std::uint32_t scalar_slots() const { return scalar_slots_; }

  std::uint32_t version() const { return version_; }
  std::uint64_t hash() const { return hash_; }

  std::string to_text() const;
  static TagSchema from_text(std::string_view text);

 private:
  TagSchema() = default;

  std::vector<VariableInfo> vars_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::uint32_t slab_size_ = 0;
  std::uint32_t value_bytes_ = 0;
  std::uint32_t bit_bytes_ = 0;
  std::uint32_t scalar_slots_ = 0;
  std::uint32_t version_ = 1;
  std::uint64_t hash_ = 0;
};

// Read-only view of one tag record in a slab.
class TagView {
 public:
  TagView(const TagSchema& schema, std::uint32_t run, std::uint32_t event,
          const std::uint8_t* slab)
      : schema_(&schema), run_(run), event_(event), slab_(slab) {}

  std::uint32_t run() const { return run_; }
  std::uint32_t event() const { return event_; }
  const TagSchema& schema() const { return *schema_; }
  std::span<const std::uint8_t> slab() const { return {slab_, schema_->slab_size()}; }

  bool present(std::size_t var) const;
  // nullopt when the variable is marked missing.
  std::optional<double> value(std::size_t var, std::uint32_t slot = 0) const;
  std::optional<double> value(std::string_view name, std::uint32_t slot = 0) const;
  bool bit(std::size_t var, std::uint32_t bit) const;
  FlagWords offline_flags() const;

 private:
  const TagSchema* schema_;
  std::uint32_t run_;
  std::uint32_t event_;
  const std::uint8_t* slab_;
};

class TagRecord {
 public:
  explicit TagRecord(const TagSchema& schema);

  std::uint32_t run = 0;
  std::uint32_t event = 0;
  RecordLocation location;

  const TagSchema& schema() const { return *schema_; }
  TagView view() const { return TagView(*schema_, run, event, slab_.data()); }

  void set_value(std::size_t var, double value, std::uint32_t slot = 0);
  void set_value(std::string_view name, double value, std::uint32_t slot = 0);
  void set_missing(std::size_t var);
  void set_bit(std::size_t var, std::uint32_t bit, bool value);
  // Packed bits, LSB first; bytes.size() must equal the group's byte width.
  void set_bits(std::size_t var, std::span<const std::uint8_t> bytes);
  void set_offline_flags(const FlagWords& flags);

  std::vector<std::uint8_t>& slab() { return slab_; }
  const std::vector<std::uint8_t>& slab() const { return slab_; }

 private:
  void set_present(std::size_t var, bool present);

  const TagSchema* schema_;
  std::vector<std::uint8_t> slab_;
};

}  // namespace evidx
