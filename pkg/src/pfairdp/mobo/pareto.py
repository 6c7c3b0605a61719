"""Pareto dominance, exact hypervolume and the evaluation archive.

Everything here works in maximisation form: larger is better on every axis.
"""

from __future__ import annotations

import numpy as np


def dominates(a, b) -> bool:
    """True iff ``a >= b`` on every coordinate and ``a > b`` on at least one."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("points must have the same dimension")
    return bool(np.all(a >= b) and np.any(a > b))


def pareto_mask(points) -> np.ndarray:
    """Boolean mask of non-dominated rows; duplicates of a front point all survive."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n = pts.shape[0]
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return mask
    # lexicographic descending sweep: a point can only be dominated by one
    # that sorts before it, so compare against the kept set only
    order = np.lexsort(tuple(-pts[:, k] for k in reversed(range(pts.shape[1]))))
    kept = np.empty((0, pts.shape[1]))
    for i in order:
        p = pts[i]
        if kept.shape[0]:
            ge = np.all(kept >= p, axis=1)
            gt = np.any(kept > p, axis=1)
            if np.any(ge & gt):
                continue
        mask[i] = True
        kept = np.vstack([kept, p])
    return mask


def pareto_filter(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts[pareto_mask(pts)]


def _hv_sweep(pts: np.ndarray, ref: np.ndarray) -> float:
    """Hypervolume by slicing along the last axis; pts all strictly above ref."""
    m = pts.shape[1]
    if pts.shape[0] == 0:
        return 0.0
    if m == 1:
        return float(pts[:, 0].max() - ref[0])
    if m == 2:
        order = np.argsort(-pts[:, 0], kind="stable")
        area = 0.0
        best_y = ref[1]
        for x, y in pts[order]:
            if y > best_y:
                area += (x - ref[0]) * (y - best_y)
                best_y = y
        return float(area)
    levels = np.unique(pts[:, -1])[::-1]
    volume = 0.0
    for k, level in enumerate(levels):
        below = levels[k + 1] if k + 1 < levels.size else ref[-1]
        active = pts[pts[:, -1] >= level][:, :-1]
        volume += _hv_sweep(active, ref[:-1]) * (level - below)
    return float(volume)


def hypervolume(front, reference) -> float:
    """Lebesgue measure of the region dominated by ``front`` and bounded by ``reference``.

    Points that do not strictly dominate the reference on every axis are
    dropped first. Exact for any dimension (recursive slicing), intended
    for m <= 3.
    """
    ref = np.asarray(reference, dtype=np.float64)
    pts = np.asarray(front, dtype=np.float64).reshape(-1, ref.size)
    pts = pts[np.all(pts > ref, axis=1)]
    if pts.shape[0] == 0:
        return 0.0
    pts = pts[pareto_mask(pts)]
    return _hv_sweep(pts, ref)


class BoxDecomposition:
    """Non-dominated region of a 3-D front split into axis-aligned cells.

    Grid lines are the front's coordinates on the first two axes; over each
    (x, y) cell the front dominates up to a height ``h``, and the cell
    column above ``h`` is non-dominated. Hypervolume improvement of any
    point ``y`` is then a closed-form sum over cells.
    """

    def __init__(self, front, reference):
        ref = np.asarray(reference, dtype=np.float64)
        if ref.size != 3:
            raise ValueError("box decomposition is implemented for 3 objectives")
        pts = np.asarray(front, dtype=np.float64).reshape(-1, 3)
        pts = pts[np.all(pts > ref, axis=1)]
        self.reference = ref
        self.front = pts
        xs = np.unique(np.concatenate([[ref[0]], pts[:, 0]]))
        ys = np.unique(np.concatenate([[ref[1]], pts[:, 1]]))
        self.x_lo = xs
        self.x_hi = np.append(xs[1:], np.inf)
        self.y_lo = ys
        self.y_hi = np.append(ys[1:], np.inf)
        heights = np.full((xs.size, ys.size), ref[2])
        for p in pts:
            cover = (self.x_hi[:, None] <= p[0]) & (self.y_hi[None, :] <= p[1])
            heights = np.where(cover & (p[2] > heights), p[2], heights)
        self.heights = heights

    def improvement(self, y: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Hypervolume improvement of each row of ``y`` (shape ``(N, 3)``)."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        out = np.zeros(y.shape[0])
        if self.front.shape[0]:
            dominated = np.zeros(y.shape[0], dtype=bool)
            for start in range(0, y.shape[0], chunk):
                block = y[start : start + chunk]
                dominated[start : start + chunk] = np.any(
                    np.all(self.front[None, :, :] >= block[:, None, :], axis=2), axis=1
                )
        else:
            dominated = np.zeros(y.shape[0], dtype=bool)
        live = np.flatnonzero(~dominated & np.all(y > self.reference, axis=1))
        for start in range(0, live.size, chunk):
            idx = live[start : start + chunk]
            block = y[idx]
            wx = np.clip(np.minimum(block[:, :1], self.x_hi[None, :]) - self.x_lo[None, :], 0.0, None)
            wy = np.clip(np.minimum(block[:, 1:2], self.y_hi[None, :]) - self.y_lo[None, :], 0.0, None)
            wz = np.clip(block[:, 2][:, None, None] - self.heights[None, :, :], 0.0, None)
            out[idx] = np.einsum("ni,nj,nij->n", wx, wy, wz)
        return out


def hypervolume_improvement(point, front, reference) -> float:
    return hypervolume(np.vstack([np.asarray(front).reshape(-1, len(reference)), point]), reference) - hypervolume(
        front, reference
    )


class ParetoArchive:
    """All evaluations, the current non-dominated subset and the hypervolume trace.

    Objectives are stored in the transformed (maximisation) space.
    """

    def __init__(self, reference):
        self.reference = np.asarray(reference, dtype=np.float64)
        self.records: list = []
        self._y = np.empty((0, self.reference.size))
        self.front: list[int] = []
        self.hv_trace: list[float] = []

    def __len__(self) -> int:
        return len(self.records)

    @property
    def objectives(self) -> np.ndarray:
        return self._y

    def add(self, record, transformed) -> None:
        t = np.asarray(transformed, dtype=np.float64).reshape(1, -1)
        self.records.append(record)
        self._y = np.vstack([self._y, t])
        self.front = [int(i) for i in np.flatnonzero(pareto_mask(self._y))]
        self.hv_trace.append(hypervolume(self._y[self.front], self.reference))

    def front_points(self) -> np.ndarray:
        return self._y[self.front]

    def on_front(self) -> np.ndarray:
        mask = np.zeros(len(self.records), dtype=bool)
        mask[self.front] = True
        return mask
