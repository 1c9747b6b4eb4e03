// Generated by tools/oracle/lock_bound.py; do not edit.
#pragma once

namespace qdlink::oracle {

/// Worst-case Phi+ fidelity penalty of a residual rotation that keeps both
/// Stokes-orthogonal references at projection >= kLockThreshold.
inline constexpr double kLockThreshold = 0.985;
inline constexpr double kLockPenaltyBound = 0.015000000;
inline constexpr double kLockWorstAngleRad = 0.245565517506;

}  // namespace qdlink::oracle
