#pragma once

// Synthetic per-event reconstruction summary carried at the start of an
// event payload. It is the stand-in for reconstruction output from which
// event flags and tag variables are derived. Energies in GeV, lengths in cm.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace evidx {

struct ElectronCandidate {
  double energy = 0;
  double theta = 0;
  double phi = 0;
  double probability = 0;

  friend bool operator==(const ElectronCandidate&, const ElectronCandidate&) = default;
};

struct PhysicsSummary {
  // Seeds the pseudo-random trigger and selection bits of the event.
  std::uint64_t trigger_word = 0;

  double e_total = 0;
  double et_total = 0;
  double miss_et = 0;
  double e_minus_pz = 0;

  // Up to two candidates per electron finder; n_* may exceed 2.
  std::uint32_t n_elec_a = 0;
  std::uint32_t n_elec_b = 0;
  std::array<ElectronCandidate, 2> elec_a{};
  std::array<ElectronCandidate, 2> elec_b{};

  double q2_a = 0, x_a = 0, y_a = 0;
  double q2_b = 0, x_b = 0, y_b = 0;
  double y_jb = 0;

  double vtx_x = 0, vtx_y = 0, vtx_z = 0;
  std::uint32_t n_prim_tracks = 0;
  std::uint32_t n_sec_tracks = 0;
  double et_tracks = 0;

  std::uint32_t n_jets = 0;
  // Leading-jet transverse energy for each of the four jet finders.
  std::array<double, 4> jet_et{};

  std::uint32_t n_muons = 0;
  double muon_p = 0;

  double lps_xl = 0;
  double fnc_e = 0;
  double bpc_e = 0;
  double lumi_egamma = 0;

  friend bool operator==(const PhysicsSummary&, const PhysicsSummary&) = default;
};

inline constexpr std::size_t kPhysicsSummarySize = 8 + 8 + 4 * 8 + 2 * 4 + 16 * 8 + 7 * 8 +
                                                   3 * 8 + 2 * 4 + 8 + 4 + 4 * 8 + 4 + 8 +
                                                   4 * 8;

// Serialized form is little-endian, prefixed with "PSUM" and a version.
std::vector<std::uint8_t> encode_summary(const PhysicsSummary& s);
void encode_summary(const PhysicsSummary& s, std::uint8_t* out);

// Decodes the summary at the start of a payload; trailing padding is
// ignored. Throws kCorruptRecord if the payload does not start with one.
PhysicsSummary decode_summary(std::span<const std::uint8_t> payload);

// Checks the value-level invariants (non-negative energies and so on).
bool summary_valid(const PhysicsSummary& s);

}  // namespace evidx
