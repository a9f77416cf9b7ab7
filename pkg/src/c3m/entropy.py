"""Quantization, discretized-Gaussian likelihoods and a byte-oriented range coder.

Symbols live on the integer support [-128, 127].  A symbol model is a 257-entry
cumulative frequency table with total 2**16 in which every bin has mass >= 1.
"""

from bisect import bisect_right

import numpy as np
from scipy.special import ndtr

SUPPORT_MIN = -128
SUPPORT_MAX = 127
NUM_SYMBOLS = SUPPORT_MAX - SUPPORT_MIN + 1
PRECISION = 16
TOTAL = 1 << PRECISION
SIGMA_MIN = 0.04
SIGMA_MAX = 256.0

_TOP = 1 << 32
_BOT = 1 << 24
_MASK32 = _TOP - 1


class DecodeError(ValueError):
    """Raised on malformed or truncated entropy-coded data."""


def quantize(y):
    """Round half away from zero and clamp to the symbol support."""
    y = np.asarray(y, dtype=np.float64)
    q = np.sign(y) * np.floor(np.abs(y) + 0.5)
    return np.clip(q, SUPPORT_MIN, SUPPORT_MAX).astype(np.int64)


def _edge_tails(edges, mu, sigma):
    """Standardised edge positions and their Gaussian tail mass ``Phi(-|t|)``."""
    t = (edges - mu) / sigma
    return t, ndtr(-np.abs(t))


def _combine(t_lo, tail_lo, t_hi, tail_hi):
    # bins entirely below the mean use lower tails, entirely above use upper
    # tails, straddling bins take the complement of both tails
    out = np.asarray(tail_hi - tail_lo)
    np.negative(out, out=out, where=np.asarray(t_lo >= 0))
    mid = (t_lo < 0) & (t_hi > 0)
    if np.any(mid):
        out[mid] = 1.0 - (tail_lo + tail_hi)[mid]
    return out[()] if out.ndim == 0 else out


def likelihood(k, mu, sigma):
    """P(symbol == k) under N(mu, sigma^2) convolved with U(-0.5, 0.5).

    Mass beyond the support is folded into the end bins.  Vectorised over
    broadcastable arguments.
    """
    k = np.asarray(k, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    lo = np.where(k <= SUPPORT_MIN, -np.inf, k - 0.5)
    hi = np.where(k >= SUPPORT_MAX, np.inf, k + 0.5)
    t_lo, tail_lo = _edge_tails(lo, mu, sigma)
    t_hi, tail_hi = _edge_tails(hi, mu, sigma)
    return _combine(t_lo, tail_lo, t_hi, tail_hi)


_EDGES = np.concatenate([[-np.inf], np.arange(SUPPORT_MIN, SUPPORT_MAX) + 0.5, [np.inf]])


def pmf(mu, sigma):
    """Full (..., 256) probability table for each (mu, sigma)."""
    mu = np.asarray(mu, dtype=np.float64)[..., None]
    sigma = np.asarray(sigma, dtype=np.float64)[..., None]
    t, tail = _edge_tails(_EDGES, mu, sigma)
    return _combine(t[..., :-1], tail[..., :-1], t[..., 1:], tail[..., 1:])


def quantize_pmf(p):
    """Integer bin masses summing to 2**16 with every bin >= 1.

    Bins whose share would fall below one unit are pinned at 1.  The remaining
    budget is split over the other bins in proportion to their probability:
    each gets the floor of its share and the shortfall goes one unit at a time
    to the largest fractional remainders (lowest index wins ties).  Pinning is
    repeated until no rescaled bin drops below one unit.
    """
    p = np.asarray(p, dtype=np.float64)
    flat = p.reshape(-1, NUM_SYMBOLS)
    small = flat * TOTAL < 1.0
    scaled = np.empty_like(flat)
    active = np.arange(len(flat))
    while len(active):
        sm = small[active]
        budget = TOTAL - sm.sum(axis=1)
        mass = np.where(sm, 0.0, flat[active]).sum(axis=1)
        sc = np.where(sm, 0.0, flat[active] * (budget / mass)[:, None])
        scaled[active] = sc
        grown = sm | (sc < 1.0)
        changed = np.any(grown != sm, axis=1)
        small[active] = grown
        active = active[changed]
    base = np.floor(scaled)
    freq = np.where(small, 1, base).astype(np.int64)
    rem = np.where(small, -1.0, scaled - base)
    deficit = TOTAL - freq.sum(axis=1)

    pos = np.flatnonzero(deficit > 0)
    if len(pos):
        r = rem[pos]
        need = deficit[pos]
        # the need-th largest remainder is the cut-off; ties at the cut-off go to lower indices
        ranked = -np.sort(-r, axis=1)
        cut = ranked[np.arange(len(pos)), need - 1][:, None]
        above = r > cut
        at = r == cut
        room = need - above.sum(axis=1)
        take = above | (at & (np.cumsum(at, axis=1) <= room[:, None]))
        freq[pos] += take

    neg = np.flatnonzero(deficit < 0)
    if len(neg):
        # only reachable through rounding in the rescale
        top = np.argmax(freq[neg], axis=1)
        freq[neg, top] += deficit[neg]
    return freq.reshape(p.shape)


def cdf_from_freq(freq):
    freq = np.asarray(freq, dtype=np.int64)
    cdf = np.zeros(freq.shape[:-1] + (NUM_SYMBOLS + 1,), dtype=np.int64)
    np.cumsum(freq, axis=-1, out=cdf[..., 1:])
    return cdf


def build_symbol_models(mu, sigma):
    """Quantized CDF tables, shape (..., 257), for arrays of (mu, sigma)."""
    return cdf_from_freq(quantize_pmf(pmf(mu, sigma)))


def build_symbol_model(mu, sigma):
    """Quantized CDF table (257 ints, cdf[0] == 0, cdf[256] == 2**16) for one (mu, sigma)."""
    return build_symbol_models(np.float64(mu), np.float64(sigma))


def model_bits(symbols, cdfs):
    """Ideal code length in bits of ``symbols`` under quantized models."""
    idx = np.asarray(symbols, dtype=np.int64) - SUPPORT_MIN
    cdfs = np.asarray(cdfs)
    lo = np.take_along_axis(cdfs, idx[..., None], axis=-1)[..., 0]
    hi = np.take_along_axis(cdfs, idx[..., None] + 1, axis=-1)[..., 0]
    return float(np.sum(PRECISION - np.log2(hi - lo)))


def estimate_rate(symbols, mu, sigma):
    """Sum of -log2 likelihood over the symbols, using real-valued likelihoods."""
    p = likelihood(np.asarray(symbols, dtype=np.float64), mu, sigma)
    return float(-np.sum(np.log2(p)))


class RangeEncoder:
    """Carry-propagating range encoder (32-bit range, 2**16 total frequency)."""

    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low >= _TOP:
            carry = low >> 32
            temp = self._cache
            while True:
                self._out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if not self._cache_size:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, start, freq):
        if freq <= 0:
            raise ValueError("symbol has zero frequency")
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * freq
        while self.range < _BOT:
            self.range <<= 8
            self._shift_low()

    def finish(self):
        for _ in range(5):
            self._shift_low()
        # the first emitted byte is always zero; the decoder re-inserts it
        return bytes(self._out[1:])


class RangeDecoder:
    def __init__(self, data):
        self._data = bytes(data)
        self._pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self):
        if self._pos >= len(self._data):
            raise DecodeError("range-coded stream is truncated")
        b = self._data[self._pos]
        self._pos += 1
        return b

    @property
    def exhausted(self):
        return self._pos == len(self._data)

    def decode(self, cdf):
        """Decode one symbol index given a cumulative table (ints or an int array)."""
        r = self.range >> PRECISION
        value = self.code // r
        if value >= TOTAL:
            raise DecodeError("code value outside model range")
        s = bisect_right(cdf, value) - 1
        start = int(cdf[s])
        freq = int(cdf[s + 1]) - start
        self.code -= r * start
        self.range = r * freq
        while self.range < _BOT:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8
        return s


def encode_symbols(symbols, cdfs):
    """Range-code integer ``symbols`` (support values) with matching CDF rows."""
    idx = (np.asarray(symbols, dtype=np.int64).reshape(-1) - SUPPORT_MIN).tolist()
    table = np.asarray(cdfs, dtype=np.int64).reshape(-1, NUM_SYMBOLS + 1)
    if len(idx) != len(table):
        raise ValueError("one model per symbol required")
    if idx and (min(idx) < 0 or max(idx) >= NUM_SYMBOLS):
        raise ValueError("symbol outside support")
    lows = np.take_along_axis(table, np.asarray(idx, dtype=np.int64)[:, None], axis=1)[:, 0].tolist()
    highs = np.take_along_axis(table, np.asarray(idx, dtype=np.int64)[:, None] + 1, axis=1)[:, 0].tolist()
    enc = RangeEncoder()
    for lo, hi in zip(lows, highs):
        enc.encode(lo, hi - lo)
    return enc.finish()


def decode_symbols(data, cdfs):
    """Decode one symbol per CDF row; returns an int64 array of support values."""
    table = np.asarray(cdfs, dtype=np.int64).reshape(-1, NUM_SYMBOLS + 1)
    dec = RangeDecoder(data)
    out = [dec.decode(row) for row in table]
    if not dec.exhausted:
        raise DecodeError("trailing bytes after range-coded stream")
    return np.asarray(out, dtype=np.int64) + SUPPORT_MIN


def decode_symbol(cdf, decoder):
    """Decode a single support value from ``decoder`` with one CDF table."""
    return decoder.decode(cdf) + SUPPORT_MIN
