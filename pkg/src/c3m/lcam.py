"""Long-range crossing attention block.

Channels are split into four equal groups.  Each group attends inside its own
window partition of the token grid:

1. horizontal strips ``K`` rows tall spanning the full width,
2. vertical strips ``K`` columns wide spanning the full height,
3. ``K x K`` tiles,
4. ``2K x 2K`` tiles.

Edge windows are truncated rather than padded.  The block is a pre-norm
transformer layer: ``x + W_o(attn(LN(x)))`` followed by ``x + MLP(LN(x))``.
"""

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .numerics import attention, gelu, layer_norm, linear, relative_bias

GROUPS = 4
BIAS_CLIP = 7
BIAS_SIZE = 2 * BIAS_CLIP + 1
MLP_RATIO = 2


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class WindowPartition:
    group_index: int
    h: int
    w: int
    rects: tuple  # (r0, r1, c0, c1), half-open

    @property
    def windows(self):
        return [frozenset((r, c) for r in range(r0, r1) for c in range(c0, c1))
                for r0, r1, c0, c1 in self.rects]

    def sizes(self):
        return [(r1 - r0) * (c1 - c0) for r0, r1, c0, c1 in self.rects]


def _tiles(h, w, th, tw):
    return tuple((r, min(r + th, h), c, min(c + tw, w))
                 for r in range(0, h, th) for c in range(0, w, tw))


def partition_windows(h, w, group, k):
    """Window rectangles for channel group ``group`` (1..4) with window size ``k``."""
    if h < 1 or w < 1 or k < 1:
        raise ValueError("extents and window size must be positive")
    if group == 1:
        rects = _tiles(h, w, k, w)
    elif group == 2:
        rects = _tiles(h, w, h, k)
    elif group == 3:
        rects = _tiles(h, w, k, k)
    elif group == 4:
        rects = _tiles(h, w, 2 * k, 2 * k)
    else:
        raise ValueError(f"group must be 1..4, got {group}")
    return WindowPartition(group, h, w, rects)


def lcam_param_shapes(c):
    if c % GROUPS:
        raise ConfigurationError(f"channel count {c} not divisible by {GROUPS}")
    hidden = MLP_RATIO * c
    return {
        "ln1_g": (c,), "ln1_b": (c,),
        "w_q": (c, c), "w_k": (c, c), "w_v": (c, c),
        "w_o": (c, c), "b_o": (c,),
        "pos_bias": (GROUPS, BIAS_SIZE, BIAS_SIZE),
        "ln2_g": (c,), "ln2_b": (c,),
        "fc1_w": (c, hidden), "fc1_b": (hidden,),
        "fc2_w": (hidden, c), "fc2_b": (c,),
    }


def _window_attention(q, k, v, h, w, group, win, table):
    """Attention of one channel group inside every window; inputs are (H*W, d)."""
    out = np.empty_like(q)
    part = partition_windows(h, w, group, win)
    by_shape = defaultdict(list)
    for r0, r1, c0, c1 in part.rects:
        by_shape[(r1 - r0, c1 - c0)].append((r0, c0))
    for (th, tw), origins in by_shape.items():
        lr, lc = np.divmod(np.arange(th * tw), tw)
        origins = np.asarray(origins)
        # flat token indices, (n_windows, th*tw)
        idx = (origins[:, :1] + lr[None, :]) * w + origins[:, 1:] + lc[None, :]
        bias = relative_bias(table, lr, lc, lr, lc, BIAS_CLIP)
        y, _ = attention(q[idx], k[idx], v[idx], bias)
        out[idx] = y
    return out


def crossing_attention(x, p, win):
    """Grouped windowed attention followed by the output projection; x is (H, W, C)."""
    h, w, c = x.shape
    if c % GROUPS:
        raise ConfigurationError(f"channel count {c} not divisible by {GROUPS}")
    tokens = x.reshape(h * w, c)
    q = linear(tokens, p["w_q"])
    k = linear(tokens, p["w_k"])
    v = linear(tokens, p["w_v"])
    d = c // GROUPS
    y = np.empty_like(q)
    for g in range(GROUPS):
        sl = slice(g * d, (g + 1) * d)
        y[:, sl] = _window_attention(q[:, sl], k[:, sl], v[:, sl], h, w, g + 1, win,
                                     p["pos_bias"][g])
    return linear(y, p["w_o"], p["b_o"]).reshape(h, w, c)


def lcam_forward(x, p, win, mlp=True):
    """One LCAM transformer block on an (H, W, C) token grid."""
    x = np.asarray(x, dtype=np.float64)
    h, w, c = x.shape
    if c % GROUPS:
        raise ConfigurationError(f"channel count {c} not divisible by {GROUPS}")
    x = x + crossing_attention(layer_norm(x, p["ln1_g"], p["ln1_b"]), p, win)
    if not mlp:
        return x
    hidden = gelu(linear(layer_norm(x, p["ln2_g"], p["ln2_b"]), p["fc1_w"], p["fc1_b"]))
    return x + linear(hidden, p["fc2_w"], p["fc2_b"])
