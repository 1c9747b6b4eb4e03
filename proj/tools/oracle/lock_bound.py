#!/usr/bin/env python3
"""Worst-case Phi+ fidelity penalty for a residual rotation that keeps two
Stokes-orthogonal references within a projection threshold.

Searches axis/angle space exhaustively on a grid, then refines the best
candidates with random local perturbations. Prints the bound and writes the
generated header when --header is given.
"""
import argparse
import numpy as np


def rotation_matrix(axis, angle):
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def penalty(angle):
    # 1 - |<Phi+| I (x) U |Phi+>|^2 with |tr U / 2| = |cos(angle / 2)|
    return 1.0 - np.cos(angle / 2.0) ** 2


def max_angle(axis, a, b, threshold):
    # Largest angle keeping both references at projection >= threshold.
    c = min((axis @ a) ** 2, (axis @ b) ** 2)
    if c >= 1.0:
        return np.pi
    cos_t = (threshold - c) / (1.0 - c)
    return np.arccos(np.clip(cos_t, -1.0, 1.0))


def feasible(axis, angle, a, b, threshold):
    r = rotation_matrix(axis, angle)
    return (r @ a) @ a >= threshold and (r @ b) @ b >= threshold


def search(threshold, n_axis=20000, n_angle=2000, n_refine=200000, seed=1):
    rng = np.random.default_rng(seed)
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 0.0, 1.0])
    # Fibonacci sphere of axes.
    i = np.arange(n_axis) + 0.5
    phi = np.arccos(1 - 2 * i / n_axis)
    theta = np.pi * (1 + 5 ** 0.5) * i
    axes = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    angles = np.linspace(0.0, np.pi, n_angle)
    best = (0.0, None, 0.0)
    for ax in axes:
        ca = (ax @ a) ** 2
        cb = (ax @ b) ** 2
        # (R v).v = cos t + (1 - cos t)(n.v)^2
        eta_a = np.cos(angles) + (1 - np.cos(angles)) * ca
        eta_b = np.cos(angles) + (1 - np.cos(angles)) * cb
        ok = (eta_a >= threshold) & (eta_b >= threshold)
        if ok.any():
            t = angles[ok].max()
            if penalty(t) > best[0]:
                best = (penalty(t), ax, t)
    _, ax, t = best
    scale = 1e-2
    for k in range(n_refine):
        if k % 20000 == 19999:
            scale *= 0.3
        cand = ax + rng.normal(scale=scale, size=3)
        cand /= np.linalg.norm(cand)
        ct = max_angle(cand, a, b, threshold)
        if feasible(cand, ct * (1 - 1e-12), a, b, threshold) and penalty(ct) > best[0]:
            best = (penalty(ct), cand, ct)
            ax = cand
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--threshold", type=float, default=0.985)
    parser.add_argument("--header")
    args = parser.parse_args()
    bound, axis, angle = search(args.threshold)
    # Round up so the committed constant is never below the supremum.
    bound = np.ceil(bound * 1e9) / 1e9
    print(f"threshold={args.threshold} bound={bound:.9f} angle_deg={np.degrees(angle):.6f} axis={axis}")
    if args.header:
        with open(args.header, "w") as f:
            f.write(
                "// Generated by tools/oracle/lock_bound.py; do not edit.\n"
                "#pragma once\n\n"
                "namespace qdlink::oracle {\n\n"
                "/// Worst-case Phi+ fidelity penalty of a residual rotation that keeps both\n"
                "/// Stokes-orthogonal references at projection >= kLockThreshold.\n"
                f"inline constexpr double kLockThreshold = {args.threshold};\n"
                f"inline constexpr double kLockPenaltyBound = {bound:.9f};\n"
                f"inline constexpr double kLockWorstAngleRad = {angle:.12f};\n\n"
                "}  // namespace qdlink::oracle\n"
            )


if __name__ == "__main__":
    main()
