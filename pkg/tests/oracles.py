"""Independent reference implementations used by several test modules."""

import itertools

import numpy as np


def brute_force_positions(dim, side, stride):
    """Every offset that is a multiple of the stride, plus the flush far-edge offset."""
    return [p for p in range(dim - side + 1) if p % stride == 0 or p == dim - side]


def brute_force_patch_count(P, Q, window_ratio, step_ratio):
    """Window count by scanning all placements (min-side square windows)."""
    side = int(round(window_ratio * min(P, Q)))
    if side > min(P, Q):
        return 1
    stride = max(1, int(round(step_ratio * side)))
    return len(brute_force_positions(P, side, stride)) * len(brute_force_positions(Q, side, stride))


def brute_force_vote(decisions, k):
    return sum(int(bool(d)) for d in decisions) >= k


def all_decision_vectors():
    return [tuple(v) for v in itertools.product((0, 1), repeat=4)]


def coverage_by_pixel(rects, P, Q):
    """Count windows covering each pixel by testing every (pixel, window) pair."""
    cov = np.zeros((P, Q), dtype=np.int64)
    for y in range(P):
        for x in range(Q):
            cov[y, x] = sum(r.x <= x < r.x + r.w and r.y <= y < r.y + r.h for r in rects)
    return cov
