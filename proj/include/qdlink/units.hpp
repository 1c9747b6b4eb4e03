#pragma once

#include <cstdint>

namespace qdlink {

/// Absolute simulation time and event timestamps.
using Picoseconds = std::int64_t;

inline constexpr Picoseconds kPsPerSecond = 1'000'000'000'000;

constexpr Picoseconds seconds_to_ps(double s) { return static_cast<Picoseconds>(s * 1e12 + (s >= 0 ? 0.5 : -0.5)); }
constexpr double ps_to_seconds(Picoseconds t) { return static_cast<double>(t) * 1e-12; }

/// Reduced Planck constant, micro-eV * ps.
inline constexpr double kHbarUevPs = 658.211956947;
/// Planck constant, micro-eV * ps.
inline constexpr double kPlanckUevPs = 4135.66769692;

}  // namespace qdlink
