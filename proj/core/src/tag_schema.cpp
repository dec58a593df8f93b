#include "evidx/tag_schema.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "le.hpp"

namespace evidx {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void add_group(std::vector<VariableDescriptor>& out, const std::string& group,
               std::initializer_list<const char*> names) {
  for (const char* n : names) out.push_back({n, VarKind::kFloat32, 1, group});
}

std::vector<VariableDescriptor> builtin_descriptors() {
  std::vector<VariableDescriptor> d;
  d.push_back({"RUN", VarKind::kInt32, 1, "RUN_EVENT"});
  d.push_back({"EVENT", VarKind::kInt32, 1, "RUN_EVENT"});
  for (const auto& g : kRequiredBitGroups) {
    d.push_back({g.name, VarKind::kBitGroup, g.bits, "FLAGS"});
  }

  for (const char* alg : {"A", "B"}) {
    std::string e1 = std::string("E") + alg + "1_";
    std::string e2 = std::string("E") + alg + "2_";
    for (const char* n : {"E", "THETA", "PHI", "X", "Y", "Z", "ECORR", "EMFRAC", "ISOL", "PROB",
                          "NCELL", "EHAD", "PT"}) {
      d.push_back({e1 + n, VarKind::kFloat32, 1, std::string("ELEC_") + alg + "1_CAL"});
    }
    for (const char* n : {"TRK_X", "TRK_Y", "TRK_Z", "TRK_P", "TRK_DCA", "SRTD_X", "SRTD_Y",
                          "HES_X", "HES_Y", "PRES_E", "RCAL_D"}) {
      d.push_back({e1 + n, VarKind::kFloat32, 1, std::string("ELEC_") + alg + "1_POS"});
    }
    for (const char* n : {"E", "THETA", "PHI", "PROB", "ISOL"}) {
      d.push_back({e2 + n, VarKind::kFloat32, 1, std::string("ELEC_") + alg + "2"});
    }
  }
  for (const char* alg : {"A", "B"}) {
    std::string k = std::string("K") + alg + "_";
    for (const char* n : {"Q2_EL", "X_EL", "Y_EL", "Q2_DA", "X_DA", "Y_DA", "Y_JB"}) {
      d.push_back({k + n, VarKind::kFloat32, 1, std::string("KIN_") + alg});
    }
  }
  add_group(d, "CAL_GLOBAL",
            {"E_TOTAL", "ET_TOTAL", "MISS_ET", "E_MINUS_PZ", "PX_TOTAL", "PY_TOTAL", "PZ_TOTAL",
             "PT_TOTAL", "ET_NOFCALIR", "E_FCALIR", "ET_FCAL", "ET_BCAL", "ET_RCAL",
             "MISS_ET_PHI", "SUMET_EMC", "SUMET_HAC", "E_MAX_CELL", "T_FCAL", "T_RCAL",
             "T_GLOBAL", "E_RCAL_EMC", "E_FCAL_EMC", "ET_CONE", "ET_ISO_RATIO", "N_CELLS",
             "E_UNMATCHED"});
  add_group(d, "CAL_PARTS", {"E_FCAL", "E_BCAL", "E_RCAL"});
  add_group(d, "HADRONIC",
            {"HAD1_PX", "HAD1_PY", "HAD1_PZ", "HAD1_E", "HAD2_PX", "HAD2_PY", "HAD2_PZ", "HAD2_E"});
  add_group(d, "TRACKING",
            {"N_PRIM_TRK", "N_SEC_TRK", "VTX_X", "VTX_Y", "VTX_Z", "VTX_CHI2", "N_VTX_TRK",
             "SEC_VTX_X", "SEC_VTX_Y", "SEC_VTX_Z"});
  add_group(d, "TRACK_ET", {"ET_TRACKS", "PT_TRACKS", "PT_MAX_TRACK", "ET_TRK_FWD", "ET_TRK_BWD"});
  add_group(d, "LUMI", {"LUMI_EGAMMA", "LUMI_EELEC", "LUMI_X", "LUMI_Y", "LUMI_TIME", "LUMI_FLAG"});
  add_group(d, "MUON_SYSTEM",
            {"MU_HITS_F", "MU_HITS_B", "MU_HITS_R", "MU_SEGMENTS", "MU_BAC_E", "MU_BAC_NPAD",
             "MU_TIME"});
  add_group(d, "MUON_ID", {"N_MUONS", "MU1_P", "MU1_THETA", "MU1_PHI", "MU1_QUAL", "MU2_P"});
  add_group(d, "LEADING_PROTON",
            {"LPS_XL", "LPS_PT", "LPS_T", "LPS_PX", "LPS_PY", "LPS_NTRK", "LPS_QUAL"});
  add_group(d, "BEAMPIPE_CAL",
            {"BPC_E", "BPC_X", "BPC_Y", "BPC_THETA", "BPC_PHI", "BPC_Q2", "BPC_Y_EL"});
  add_group(d, "FORWARD_NEUTRON", {"FNC_E", "FNC_X", "FNC_Y", "FNC_THETA", "FNC_TIME"});
  add_group(d, "LOW_ANGLE_TAGGERS",
            {"TAG6_E", "TAG6_X", "TAG8_E", "TAG8_X", "TAG44_E", "TAG44_X", "TAG_TIME"});
  for (int f = 1; f <= 4; ++f) {
    std::string j = "J" + std::to_string(f) + "_";
    for (const char* n : {"N", "ET1", "ETA1", "PHI1", "ET2", "ETA2", "PHI2"}) {
      d.push_back({j + n, VarKind::kFloat32, 1, "JETS"});
    }
  }
  add_group(d, "CHARM",
            {"DSTAR_N", "DSTAR_M", "DSTAR_DM", "DSTAR_PT", "DSTAR_ETA", "D0_N", "D0_M", "D0_PT",
             "D0_ETA", "D0_DL", "DS_N", "DS_M", "DS_PT", "DS_ETA", "DS_CHI2"});
  return d;
}

VarKind parse_kind(std::string_view s) {
  if (s == "f32") return VarKind::kFloat32;
  if (s == "i32") return VarKind::kInt32;
  if (s == "bits") return VarKind::kBitGroup;
  throw Error(Errc::kParse, "unknown variable kind '" + std::string(s) + "'");
}

}  // namespace

const char* var_kind_name(VarKind kind) {
  switch (kind) {
    case VarKind::kFloat32: return "f32";
    case VarKind::kInt32: return "i32";
    case VarKind::kBitGroup: return "bits";
  }
  return "?";
}

TagSchema TagSchema::define(std::vector<VariableDescriptor> descriptors, std::uint32_t version) {
  TagSchema s;
  s.version_ = version;

  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    const auto& d = descriptors[i];
    if (d.name.empty() || d.width == 0) {
      throw Error(Errc::kInvalidArgument, "variable " + std::to_string(i) + " needs a name and width");
    }
    for (char c : d.name) {
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) {
        throw Error(Errc::kInvalidArgument, "variable name '" + d.name + "' has invalid characters");
      }
    }
    if (d.group.find_first_of(" \t\n") != std::string::npos) {
      throw Error(Errc::kInvalidArgument, "group label '" + d.group + "' contains whitespace");
    }
    if (!s.by_name_.emplace(upper(d.name), i).second) {
      throw Error(Errc::kDuplicate, "variable '" + d.name + "' defined twice");
    }
  }

  for (const auto& g : kRequiredBitGroups) {
    auto it = s.by_name_.find(g.name);
    if (it == s.by_name_.end() || descriptors[it->second].kind != VarKind::kBitGroup) {
      throw Error(Errc::kSchemaMismatch, std::string("missing bit group ") + g.name);
    }
    if (descriptors[it->second].width != g.bits) {
      throw Error(Errc::kSchemaMismatch, std::string("bit group ") + g.name + " must have " +
                                             std::to_string(g.bits) + " bits, not " +
                                             std::to_string(descriptors[it->second].width));
    }
  }
  for (const auto& d : descriptors) {
    if (d.kind != VarKind::kBitGroup) continue;
    bool known = std::any_of(std::begin(kRequiredBitGroups), std::end(kRequiredBitGroups),
                             [&](const RequiredBitGroup& g) { return upper(d.name) == g.name; });
    if (!known) throw Error(Errc::kSchemaMismatch, "unexpected bit group " + d.name);
  }

  s.vars_.reserve(descriptors.size());
  std::uint32_t offset = 0;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (descriptors[i].kind == VarKind::kBitGroup) continue;
    VariableInfo v{descriptors[i], static_cast<std::uint32_t>(i), offset, descriptors[i].width * 4};
    offset += v.bytes;
    s.scalar_slots_ += descriptors[i].width;
    s.vars_.push_back(std::move(v));
  }
  s.value_bytes_ = offset;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (descriptors[i].kind != VarKind::kBitGroup) continue;
    VariableInfo v{descriptors[i], static_cast<std::uint32_t>(i), offset,
                   (descriptors[i].width + 7) / 8};
    offset += v.bytes;
    s.vars_.push_back(std::move(v));
  }
  s.bit_bytes_ = offset - s.value_bytes_;
  s.slab_size_ = offset + static_cast<std::uint32_t>((descriptors.size() + 7) / 8);

  if (s.scalar_slots_ < kMinScalarSlots) {
    throw Error(Errc::kSchemaMismatch, "schema needs more than 200 scalar slots, has " +
                                           std::to_string(s.scalar_slots_));
  }

  // Variables are addressed by declaration index.
  std::sort(s.vars_.begin(), s.vars_.end(),
            [](const VariableInfo& a, const VariableInfo& b) { return a.index < b.index; });
  s.hash_ = fnv1a(s.to_text());
  return s;
}

const TagSchema& TagSchema::builtin() {
  static const TagSchema schema = define(builtin_descriptors(), 1);
  return schema;
}

std::optional<std::size_t> TagSchema::find(std::string_view name) const {
  auto it = by_name_.find(upper(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

const VariableInfo& TagSchema::get(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw Error(Errc::kUnknownName, "no variable '" + std::string(name) + "' in schema");
  return vars_[*idx];
}

std::string TagSchema::to_text() const {
  std::ostringstream out;
  out << "schema " << version_ << ' ' << vars_.size() << '\n';
  for (const auto& v : vars_) {
    out << "var " << v.desc.name << ' ' << var_kind_name(v.desc.kind) << ' ' << v.desc.width << ' '
        << (v.desc.group.empty() ? "-" : v.desc.group) << '\n';
  }
  return out.str();
}

TagSchema TagSchema::from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string word;
  std::uint32_t version = 0;
  std::size_t count = 0;
  if (!(in >> word >> version >> count) || word != "schema") {
    throw Error(Errc::kParse, "schema text must start with 'schema <version> <count>'");
  }
  std::vector<VariableDescriptor> descriptors;
  for (std::size_t i = 0; i < count; ++i) {
    VariableDescriptor d;
    std::string kind;
    if (!(in >> word >> d.name >> kind >> d.width >> d.group) || word != "var") {
      throw Error(Errc::kParse, "bad schema variable line " + std::to_string(i + 1));
    }
    if (d.group == "-") d.group.clear();
    d.kind = parse_kind(kind);
    descriptors.push_back(std::move(d));
  }
  return define(std::move(descriptors), version);
}

// ---------------------------------------------------------------------------
// TagView / TagRecord

bool TagView::present(std::size_t var) const {
  std::size_t bit = var;
  return (slab_[schema_->presence_offset() + (bit >> 3)] >> (bit & 7)) & 1u;
}

std::optional<double> TagView::value(std::size_t var, std::uint32_t slot) const {
  const VariableInfo& v = schema_->at(var);
  if (!v.scalar() || slot >= v.desc.width) {
    throw Error(Errc::kOutOfRange, "no slot " + std::to_string(slot) + " in " + v.desc.name);
  }
  if (!present(var)) return std::nullopt;
  const std::uint8_t* p = slab_ + v.offset + 4 * slot;
  if (v.desc.kind == VarKind::kInt32) return static_cast<double>(static_cast<std::int32_t>(le::get_u32(p)));
  return static_cast<double>(le::get_f32(p));
}

std::optional<double> TagView::value(std::string_view name, std::uint32_t slot) const {
  return value(schema_->get(name).index, slot);
}

bool TagView::bit(std::size_t var, std::uint32_t bit) const {
  const VariableInfo& v = schema_->at(var);
  if (v.scalar() || bit >= v.desc.width) {
    throw Error(Errc::kOutOfRange, "no bit " + std::to_string(bit) + " in " + v.desc.name);
  }
  if (!present(var)) return false;
  return (slab_[v.offset + (bit >> 3)] >> (bit & 7)) & 1u;
}

FlagWords TagView::offline_flags() const {
  const VariableInfo& v = schema_->get(kOfflineGroup);
  FlagWords w;
  if (!present(v.index)) return w;
  for (int i = 0; i < 4; ++i) w.words[i] = le::get_u32(slab_ + v.offset + 4 * i);
  return w;
}

TagRecord::TagRecord(const TagSchema& schema)
    : schema_(&schema), slab_(schema.slab_size(), 0) {}

void TagRecord::set_present(std::size_t var, bool present) {
  std::uint8_t& byte = slab_[schema_->presence_offset() + (var >> 3)];
  const std::uint8_t mask = static_cast<std::uint8_t>(1u << (var & 7));
  byte = present ? (byte | mask) : (byte & ~mask);
}

void TagRecord::set_value(std::size_t var, double value, std::uint32_t slot) {
  const VariableInfo& v = schema_->at(var);
  if (!v.scalar() || slot >= v.desc.width) {
    throw Error(Errc::kOutOfRange, "no slot " + std::to_string(slot) + " in " + v.desc.name);
  }
  std::uint8_t* p = slab_.data() + v.offset + 4 * slot;
  if (v.desc.kind == VarKind::kInt32) {
    if (!(value >= -2147483648.0 && value <= 2147483647.0)) {
      throw Error(Errc::kOutOfRange, v.desc.name + " value outside int32 range");
    }
    le::put_u32(p, static_cast<std::uint32_t>(static_cast<std::int32_t>(value)));
  } else {
    le::put_f32(p, static_cast<float>(value));
  }
  set_present(var, true);
}

void TagRecord::set_value(std::string_view name, double value, std::uint32_t slot) {
  set_value(schema_->get(name).index, value, slot);
}

void TagRecord::set_missing(std::size_t var) {
  const VariableInfo& v = schema_->at(var);
  std::fill_n(slab_.begin() + v.offset, v.bytes, 0);
  set_present(var, false);
}

void TagRecord::set_bit(std::size_t var, std::uint32_t bit, bool value) {
  const VariableInfo& v = schema_->at(var);
  if (v.scalar() || bit >= v.desc.width) {
    throw Error(Errc::kOutOfRange, "no bit " + std::to_string(bit) + " in " + v.desc.name);
  }
  std::uint8_t& byte = slab_[v.offset + (bit >> 3)];
  const std::uint8_t mask = static_cast<std::uint8_t>(1u << (bit & 7));
  byte = value ? (byte | mask) : (byte & ~mask);
  set_present(var, true);
}

void TagRecord::set_bits(std::size_t var, std::span<const std::uint8_t> bytes) {
  const VariableInfo& v = schema_->at(var);
  if (v.scalar() || bytes.size() != v.bytes) {
    throw Error(Errc::kInvalidArgument, v.desc.name + " needs " + std::to_string(v.bytes) + " bytes");
  }
  std::copy(bytes.begin(), bytes.end(), slab_.begin() + v.offset);
  if (v.desc.width % 8 != 0) slab_[v.offset + v.bytes - 1] &= static_cast<std::uint8_t>((1u << (v.desc.width % 8)) - 1);
  set_present(var, true);
}

void TagRecord::set_offline_flags(const FlagWords& flags) {
  const VariableInfo& v = schema_->get(kOfflineGroup);
  for (int i = 0; i < 4; ++i) le::put_u32(slab_.data() + v.offset + 4 * i, flags.words[i]);
  set_present(v.index, true);
}

}  // namespace evidx
