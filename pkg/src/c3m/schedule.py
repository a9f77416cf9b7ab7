"""Decode orders over an h x w latent grid.

Three schedule kinds are supported:

``serial``
    raster order, one position per pass.
``checkerboard``
    two passes, anchors with even ``row + col`` first.
``c3m``
    corner-to-center subdivision.  Each axis starts from its two end points
    and at every step inserts the floor midpoint between every pair of
    consecutive decoded coordinates that are at least two apart.  The decoded
    set after step t is the product of the two axis sets; pass t holds the
    newly covered positions in row-major order.

A schedule stores its decode order compactly (a flat coordinate array plus
pass offsets) so that very long serial schedules stay cheap.
"""

from dataclasses import dataclass, field
from functools import cached_property
import json

import numpy as np

KINDS = ("serial", "checkerboard", "c3m")
BACKBONES = ("none", "conv3x3", "transformer")


@dataclass(frozen=True)
class Pass:
    index: int
    positions: tuple
    causal_size: int
    backbone: str

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class Schedule:
    h: int
    w: int
    kind: str
    coords: np.ndarray  # (h*w, 2) int64, decode order
    offsets: np.ndarray  # (passes + 1,) int64
    backbones: tuple = field(default=())

    @property
    def pass_count(self):
        return len(self.offsets) - 1

    def pass_coords(self, t):
        return self.coords[self.offsets[t]:self.offsets[t + 1]]

    def pass_at(self, t):
        pos = tuple((int(r), int(c)) for r, c in self.pass_coords(t))
        return Pass(t, pos, int(self.offsets[t]), self.backbones[t])

    @cached_property
    def passes(self):
        return [self.pass_at(t) for t in range(self.pass_count)]

    @cached_property
    def order(self):
        """(h, w) array holding the pass index that decodes each position; -1 if never."""
        grid = np.full((self.h, self.w), -1, dtype=np.int64)
        counts = np.diff(self.offsets)
        grid[self.coords[:, 0], self.coords[:, 1]] = np.repeat(np.arange(self.pass_count), counts)
        return grid

    def causal_mask(self, t):
        """Boolean grid of positions decoded strictly before pass ``t``."""
        mask = np.zeros((self.h, self.w), dtype=bool)
        prev = self.coords[:self.offsets[t]]
        mask[prev[:, 0], prev[:, 1]] = True
        return mask

    def causal(self, t):
        return frozenset((int(r), int(c)) for r, c in self.coords[:self.offsets[t]])

    def validate(self):
        """Raise ``ValueError`` unless passes partition the grid."""
        n = self.h * self.w
        if self.coords.shape != (n, 2):
            raise ValueError(f"expected {n} positions, got {self.coords.shape[0]}")
        if self.offsets[0] != 0 or self.offsets[-1] != n or np.any(np.diff(self.offsets) < 0):
            raise ValueError("pass offsets are not a monotone cover")
        r, c = self.coords[:, 0], self.coords[:, 1]
        if r.min() < 0 or c.min() < 0 or r.max() >= self.h or c.max() >= self.w:
            raise ValueError("position outside grid")
        hits = np.bincount(r * self.w + c, minlength=n)
        if not np.all(hits == 1):
            raise ValueError("passes do not partition the grid")
        if len(self.backbones) != self.pass_count:
            raise ValueError("one backbone per pass required")


def _build(h, w, kind, pass_lists, backbones):
    coords = np.concatenate(pass_lists).astype(np.int64).reshape(-1, 2)
    offsets = np.concatenate([[0], np.cumsum([len(p) for p in pass_lists])]).astype(np.int64)
    return Schedule(h, w, kind, coords, offsets, tuple(backbones))


def _check_extent(h, w):
    if h < 1 or w < 1:
        raise ValueError(f"grid extents must be positive, got {h}x{w}")


def serial_schedule(h, w):
    _check_extent(h, w)
    rr, cc = np.divmod(np.arange(h * w, dtype=np.int64), w)
    coords = np.stack([rr, cc], axis=1)
    offsets = np.arange(h * w + 1, dtype=np.int64)
    backbones = ("none",) + ("conv3x3",) * (h * w - 1)
    return Schedule(h, w, "serial", coords, offsets, backbones)


def checkerboard_schedule(h, w):
    _check_extent(h, w)
    rr, cc = np.divmod(np.arange(h * w, dtype=np.int64), w)
    coords = np.stack([rr, cc], axis=1)
    even = (rr + cc) % 2 == 0
    # always two passes; the second is empty on a 1x1 grid
    return _build(h, w, "checkerboard", [coords[even], coords[~even]], ("none", "conv3x3"))


def axis_steps(n):
    """Nested coordinate sets produced by midpoint refinement of ``range(n)``."""
    current = sorted({0, n - 1})
    steps = [current]
    while True:
        mids = [(a + b) // 2 for a, b in zip(current, current[1:]) if b - a >= 2]
        if not mids:
            return steps
        current = sorted(current + mids)
        steps.append(current)


def c3m_schedule(h, w):
    _check_extent(h, w)
    xs, ys = axis_steps(h), axis_steps(w)
    n_steps = max(len(xs), len(ys))
    decoded = np.zeros((h, w), dtype=bool)
    passes = []
    for t in range(n_steps):
        rows = xs[min(t, len(xs) - 1)]
        cols = ys[min(t, len(ys) - 1)]
        now = np.zeros((h, w), dtype=bool)
        now[np.ix_(rows, cols)] = True
        fresh = now & ~decoded
        passes.append(np.argwhere(fresh))
        decoded = now
    last = len(passes) - 1
    backbones = ["none" if t == 0 else "conv3x3" if t == last else "transformer"
                 for t in range(len(passes))]
    return _build(h, w, "c3m", passes, backbones)


def make_schedule(kind, h, w):
    try:
        fn = {"serial": serial_schedule, "checkerboard": checkerboard_schedule,
              "c3m": c3m_schedule}[kind]
    except KeyError:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {KINDS}") from None
    return fn(h, w)


@dataclass
class PassStats:
    index: int
    size: int
    causal_size: int
    backbone: str
    receptive_min: int
    receptive_max: int
    receptive_mean: float


@dataclass
class StatsReport:
    kind: str
    h: int
    w: int
    pass_count: int
    zero_context_count: int
    causal_counts: np.ndarray  # (h, w) causal-set size at decode time
    passes: list

    @property
    def zero_context_fraction(self):
        return self.zero_context_count / (self.h * self.w)

    def to_dict(self, with_grid=False):
        out = {
            "kind": self.kind,
            "h": self.h,
            "w": self.w,
            "pass_count": self.pass_count,
            "zero_context_count": self.zero_context_count,
            "zero_context_fraction": self.zero_context_fraction,
            "passes": [vars(p).copy() for p in self.passes],
        }
        if with_grid:
            out["causal_counts"] = self.causal_counts.tolist()
        return out

    def to_json(self, with_grid=False):
        return json.dumps(self.to_dict(with_grid), indent=2)

    def to_text(self):
        lines = [
            f"kind: {self.kind}",
            f"grid: {self.h}x{self.w}",
            f"pass_count: {self.pass_count}",
            f"zero_context_count: {self.zero_context_count}",
            f"zero_context_fraction: {self.zero_context_fraction:.4f}",
        ]
        for p in self.passes:
            lines.append(
                f"pass {p.index}: size={p.size} causal={p.causal_size} backbone={p.backbone} "
                f"receptive=[{p.receptive_min},{p.receptive_max}] mean={p.receptive_mean:.3f}"
            )
        return "\n".join(lines)


def conv_receptive_counts(decoded, coords):
    """Number of decoded cells in the 3x3 neighbourhood of each coordinate."""
    h, w = decoded.shape
    padded = np.pad(decoded, 1).astype(np.int64)
    r, c = coords[:, 0] + 1, coords[:, 1] + 1
    total = np.zeros(len(coords), dtype=np.int64)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            total += padded[r + dr, c + dc]
    return total


def schedule_stats(s):
    counts = np.diff(s.offsets)
    causal_counts = np.zeros((s.h, s.w), dtype=np.int64)
    causal_counts[s.coords[:, 0], s.coords[:, 1]] = np.repeat(s.offsets[:-1], counts)
    order = s.order
    per_pass = []
    for t in range(s.pass_count):
        pc = s.pass_coords(t)
        causal_size = int(s.offsets[t])
        if s.backbones[t] == "transformer":
            rf = np.full(len(pc), causal_size)
        elif s.backbones[t] == "conv3x3":
            rf = conv_receptive_counts(order < t, pc)
        else:
            rf = np.zeros(len(pc), dtype=np.int64)
        if len(rf) == 0:
            rf = np.zeros(1, dtype=np.int64)
        per_pass.append(PassStats(t, len(pc), causal_size, s.backbones[t],
                                  int(rf.min()), int(rf.max()), float(rf.mean())))
    zero = int(np.count_nonzero(causal_counts == 0))
    return StatsReport(s.kind, s.h, s.w, s.pass_count, zero, causal_counts, per_pass)
