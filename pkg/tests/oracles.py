"""Brute-force reference implementations used only by tests.

Each one is written independently of the code it checks: decimal arithmetic
instead of fractions, loops instead of closed forms, shapely instead of
hand-rolled intersection.
"""

from __future__ import annotations

from decimal import ROUND_FLOOR, ROUND_HALF_UP, Decimal, getcontext
from fractions import Fraction

import numpy as np
from shapely.geometry import box as shapely_box

getcontext().prec = 60


def window_size(base: int, r: float, k: int) -> int:
    v = Decimal(base) * Decimal(str(r)) ** k
    return int(v.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def stride(window: int, o: float) -> int:
    v = (Decimal(window) * Decimal(str(o))).to_integral_value(rounding=ROUND_FLOOR)
    return max(1, int(v))


def positions(extent: int, window: int, step: int, clamp: bool) -> list[int]:
    """Walk the window across the axis one stride at a time."""
    out = []
    x = 0
    while x + window <= extent:
        out.append(x)
        x += step
    if clamp and out and out[-1] + window < extent:
        out.append(extent - window)
    return out


def windows(width: int, height: int, bw: int, bh: int, r: float, K: int, o: float, clamp: bool = True):
    out = []
    for k in range(K):
        w, h = window_size(bw, r, k), window_size(bh, r, k)
        if w < 1 or h < 1 or w > width or h > height:
            continue
        for y in positions(height, h, stride(h, o), clamp):
            for x in positions(width, w, stride(w, o), clamp):
                out.append((k, x, y, w, h))
    return out


def coverage_mask(width: int, height: int, rects) -> np.ndarray:
    """Pixel coverage count of axis-aligned (x, y, w, h) rectangles via a 2-D difference array."""
    diff = np.zeros((height + 1, width + 1), dtype=np.int64)
    for x, y, w, h in rects:
        diff[y, x] += 1
        diff[y, x + w] -= 1
        diff[y + h, x] -= 1
        diff[y + h, x + w] += 1
    return diff.cumsum(0).cumsum(1)[:height, :width]


def visible_fraction(box, window) -> float:
    a = shapely_box(box.x1, box.y1, box.x2, box.y2)
    w = shapely_box(window.origin_x, window.origin_y, window.origin_x + window.width, window.origin_y + window.height)
    return a.intersection(w).area / a.area


def ap_bruteforce(tp_flags, n_gt: int) -> float:
    """AP from the full list of ranked (recall, precision) points, exact fractions.

    For every distinct recall level reached, the interpolated precision is the
    best precision at that recall or beyond; AP sums recall increments times
    that value.
    """
    if n_gt == 0 or not tp_flags:
        return 0.0
    points = []
    tp = 0
    for k, flag in enumerate(tp_flags, start=1):
        tp += bool(flag)
        points.append((Fraction(tp, n_gt), Fraction(tp, k)))
    total = Fraction(0)
    prev = Fraction(0)
    for rec, _ in points:
        if rec == prev:
            continue
        best = max(p for r2, p in points if r2 >= rec)
        total += (rec - prev) * best
        prev = rec
    return float(total)
