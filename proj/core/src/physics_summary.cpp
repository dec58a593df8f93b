#include "evidx/physics_summary.hpp"

#include "evidx/error.hpp"
#include "le.hpp"

namespace evidx {

namespace {

constexpr std::uint8_t kMagic[4] = {'P', 'S', 'U', 'M'};
constexpr std::uint16_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::uint8_t* p) : p_(p) {}
  void u32(std::uint32_t v) { le::put_u32(p_, v); p_ += 4; }
  void u64(std::uint64_t v) { le::put_u64(p_, v); p_ += 8; }
  void f64(double v) { le::put_f64(p_, v); p_ += 8; }
  void electron(const ElectronCandidate& e) {
    f64(e.energy); f64(e.theta); f64(e.phi); f64(e.probability);
  }
  std::uint8_t* p_;
};

class Reader {
 public:
  explicit Reader(const std::uint8_t* p) : p_(p) {}
  std::uint32_t u32() { auto v = le::get_u32(p_); p_ += 4; return v; }
  std::uint64_t u64() { auto v = le::get_u64(p_); p_ += 8; return v; }
  double f64() { auto v = le::get_f64(p_); p_ += 8; return v; }
  ElectronCandidate electron() {
    ElectronCandidate e;
    e.energy = f64(); e.theta = f64(); e.phi = f64(); e.probability = f64();
    return e;
  }
  const std::uint8_t* p_;
};

}  // namespace

void encode_summary(const PhysicsSummary& s, std::uint8_t* out) {
  std::copy(std::begin(kMagic), std::end(kMagic), out);
  le::put_u16(out + 4, kVersion);
  le::put_u16(out + 6, 0);
  Writer w(out + 8);
  w.u64(s.trigger_word);
  w.f64(s.e_total); w.f64(s.et_total); w.f64(s.miss_et); w.f64(s.e_minus_pz);
  w.u32(s.n_elec_a); w.u32(s.n_elec_b);
  for (const auto& e : s.elec_a) w.electron(e);
  for (const auto& e : s.elec_b) w.electron(e);
  w.f64(s.q2_a); w.f64(s.x_a); w.f64(s.y_a);
  w.f64(s.q2_b); w.f64(s.x_b); w.f64(s.y_b);
  w.f64(s.y_jb);
  w.f64(s.vtx_x); w.f64(s.vtx_y); w.f64(s.vtx_z);
  w.u32(s.n_prim_tracks); w.u32(s.n_sec_tracks);
  w.f64(s.et_tracks);
  w.u32(s.n_jets);
  for (double et : s.jet_et) w.f64(et);
  w.u32(s.n_muons);
  w.f64(s.muon_p);
  w.f64(s.lps_xl); w.f64(s.fnc_e); w.f64(s.bpc_e); w.f64(s.lumi_egamma);
}

std::vector<std::uint8_t> encode_summary(const PhysicsSummary& s) {
  std::vector<std::uint8_t> out(kPhysicsSummarySize);
  encode_summary(s, out.data());
  return out;
}

PhysicsSummary decode_summary(std::span<const std::uint8_t> payload) {
  if (payload.size() < kPhysicsSummarySize ||
      !std::equal(std::begin(kMagic), std::end(kMagic), payload.begin())) {
    throw Error(Errc::kCorruptRecord, "payload does not start with a physics summary");
  }
  if (le::get_u16(payload.data() + 4) != kVersion) {
    throw Error(Errc::kCorruptRecord, "unsupported physics summary version");
  }
  Reader r(payload.data() + 8);
  PhysicsSummary s;
  s.trigger_word = r.u64();
  s.e_total = r.f64(); s.et_total = r.f64(); s.miss_et = r.f64(); s.e_minus_pz = r.f64();
  s.n_elec_a = r.u32(); s.n_elec_b = r.u32();
  for (auto& e : s.elec_a) e = r.electron();
  for (auto& e : s.elec_b) e = r.electron();
  s.q2_a = r.f64(); s.x_a = r.f64(); s.y_a = r.f64();
  s.q2_b = r.f64(); s.x_b = r.f64(); s.y_b = r.f64();
  s.y_jb = r.f64();
  s.vtx_x = r.f64(); s.vtx_y = r.f64(); s.vtx_z = r.f64();
  s.n_prim_tracks = r.u32(); s.n_sec_tracks = r.u32();
  s.et_tracks = r.f64();
  s.n_jets = r.u32();
  for (double& et : s.jet_et) et = r.f64();
  s.n_muons = r.u32();
  s.muon_p = r.f64();
  s.lps_xl = r.f64(); s.fnc_e = r.f64(); s.bpc_e = r.f64(); s.lumi_egamma = r.f64();
  return s;
}

bool summary_valid(const PhysicsSummary& s) {
  return s.et_total >= 0 && s.miss_et >= 0 && s.e_total >= 0 && s.et_tracks >= 0;
}

}  // namespace evidx
