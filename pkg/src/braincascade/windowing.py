"""Sliding-window planning and deterministic probability-map accumulation."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .predictor import Predictor
from .volume import BoundingBox, Kind, Volume


class WindowError(Exception):
    """Prediction failure for a specific window; names the origin."""


@dataclass(frozen=True)
class WindowPlan:
    """Origins of w-cube windows covering a region with step s.

    Origins are sorted lexicographically with no duplicates; every window
    intersects the region and their union covers it entirely.
    """

    region: BoundingBox
    window: int
    step: int
    origins: list[tuple[int, int, int]]


def _axis_origins(lo: int, hi: int, w: int, s: int) -> list[int]:
    if hi - lo < w:
        return [lo]
    out = list(range(lo, hi - w + 1, s))
    snapped = max(lo, hi - w)
    if out[-1] != snapped:
        out.append(snapped)
    return out


def plan_windows(region: BoundingBox, w: int, s: int) -> WindowPlan:
    """Enumerate window origins per axis and take their Cartesian product.

    Per axis the origins step by s from the region minimum; when the extent
    is not a multiple of the step, a final window snapped to the far edge is
    added so the region is fully covered. Regions smaller than the window get
    a single origin at the region minimum (window clipped at extraction).
    """
    if w < 1 or s < 1:
        raise ValueError("window and step must be >= 1")
    per_axis = [
        _axis_origins(lo, hi, w, s) for lo, hi in zip(region.mins, region.maxs)
    ]
    origins = [tuple(o) for o in itertools.product(*per_axis)]
    return WindowPlan(region, int(w), int(s), origins)


def snap_plan_into(plan: WindowPlan, dims) -> WindowPlan:
    """Shift window origins to lie inside a volume where possible.

    Keeps every window covering its share of the region (windows only grow
    their overlap when clamped inward) so coverage is preserved.
    """
    w = plan.window
    snapped = []
    seen = set()
    for o in plan.origins:
        so = tuple(min(max(v, 0), max(0, d - w)) for v, d in zip(o, dims))
        if so not in seen:
            seen.add(so)
            snapped.append(so)
    snapped.sort()
    return WindowPlan(plan.region, w, plan.step, snapped)


def coverage_counts(plan: WindowPlan) -> Volume:
    """Number of windows covering each voxel of the region."""
    counts = np.zeros(plan.region.shape, dtype=np.int32)
    w = plan.window
    rmin, rmax = plan.region.mins, plan.region.maxs
    for o in plan.origins:
        sl = tuple(
            slice(max(a, lo) - lo, min(a + w, hi) - lo)
            for a, lo, hi in zip(o, rmin, rmax)
        )
        if all(s.start < s.stop for s in sl):
            counts[sl] += 1
    return Volume(counts, (1.0, 1.0, 1.0), Kind.LABEL)


def run_windows(vol: Volume, plan: WindowPlan, predictor: Predictor,
                mode: str = "sum", threads: int = 1) -> Volume:
    """Predict every window and accumulate into a region-sized map.

    mode="sum" adds overlapping predictions; mode="mean" divides each voxel
    by its coverage count. Windows reaching past the volume are zero-padded
    on input and the out-of-region output portion is discarded. Predictions
    may run in parallel but are always reduced in lexicographic origin
    order, so the result is bit-identical for any thread count.
    """
    if mode not in ("sum", "mean"):
        raise ValueError(f"unknown accumulation mode {mode!r}")
    if predictor.window != plan.window:
        raise ValueError(
            f"predictor window {predictor.window} != plan window {plan.window}"
        )
    w = plan.window
    rmin, rmax = plan.region.mins, plan.region.maxs

    def one(origin):
        patch = _extract_window(vol, origin, w)
        try:
            return predictor.predict(patch, origin)
        except Exception as e:
            raise WindowError(f"prediction failed at window origin {origin}: {e}") from e

    origins = plan.origins
    if threads > 1 and len(origins) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, origins))
    else:
        results = [one(o) for o in origins]

    acc = np.zeros(plan.region.shape, dtype=np.float32)
    for origin, pred in zip(origins, results):
        dst = []
        src = []
        for a, lo, hi in zip(origin, rmin, rmax):
            s0, s1 = max(a, lo), min(a + w, hi)
            dst.append(slice(s0 - lo, s1 - lo))
            src.append(slice(s0 - a, s1 - a))
        if all(s.start < s.stop for s in dst):
            acc[tuple(dst)] += pred.data[tuple(src)]

    if mode == "mean":
        counts = coverage_counts(plan).data
        acc = np.divide(acc, counts, out=np.zeros_like(acc), where=counts > 0)
    return Volume(acc, vol.spacing, Kind.PROBABILITY)


def _extract_window(vol: Volume, origin, w: int) -> Volume:
    out = np.zeros((w, w, w), dtype=np.float32)
    src, dst = [], []
    inside = True
    for a, d in zip(origin, vol.dims):
        lo, hi = max(a, 0), min(a + w, d)
        if lo >= hi:
            inside = False
            break
        src.append(slice(lo, hi))
        dst.append(slice(lo - a, hi - a))
    if inside:
        out[tuple(dst)] = vol.data[tuple(src)]
    return Volume(out, vol.spacing, vol.kind)
