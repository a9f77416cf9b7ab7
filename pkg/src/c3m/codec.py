"""End-to-end image codec and its container format.

Container layout (little-endian)::

    magic     4s   b"C3M1"
    version   u8
    kind      u8   0 serial, 1 checkerboard, 2 c3m
    profile   u8   0 tiny, 1 paper
    seed      u64  weight seed
    height    u16  original image height
    width     u16  original image width
    hyper     u32 length + bytes
    passes    u32 count, then per pass u32 length + bytes

Every latent pass is coded into its own byte-aligned sub-stream.  Within a
pass, positions follow the schedule order and channels are coded in
ascending order at each position.
"""

from dataclasses import dataclass, field
import math
import struct
import time

import numpy as np

from . import entropy
from .context import predict_pass
from .schedule import KINDS, make_schedule, schedule_stats
from .transforms import (PROFILE_BY_CODE, ModelWeights, analysis, get_profile,
                         hyper_analysis, hyper_synthesis, synthesis)

MAGIC = b"C3M1"
VERSION = 1
KIND_CODES = {kind: i for i, kind in enumerate(KINDS)}
_HEADER = struct.Struct("<4sBBBQHH")
HEADER_SIZE = _HEADER.size
MAX_EXTENT = 0xFFFF


class FormatError(ValueError):
    """Malformed container."""


class InputError(ValueError):
    """Image cannot be encoded."""


@dataclass
class CodecContainer:
    kind: str
    profile: str
    seed: int
    height: int
    width: int
    hyper: bytes
    passes: list
    version: int = VERSION

    @property
    def latent_hw(self):
        return latent_extent(self.height, self.width)

    @property
    def payload_bytes(self):
        return len(self.hyper) + sum(len(p) for p in self.passes)

    def to_bytes(self):
        parts = [_HEADER.pack(MAGIC, self.version, KIND_CODES[self.kind],
                              get_profile(self.profile).code, self.seed, self.height, self.width),
                 struct.pack("<I", len(self.hyper)), self.hyper,
                 struct.pack("<I", len(self.passes))]
        for p in self.passes:
            parts.append(struct.pack("<I", len(p)))
            parts.append(p)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if len(data) < HEADER_SIZE:
            raise FormatError("container shorter than its header")
        magic, version, kind, profile, seed, height, width = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError("bad magic")
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        if kind >= len(KINDS):
            raise FormatError(f"unknown context kind code {kind}")
        if profile not in PROFILE_BY_CODE:
            raise FormatError(f"unknown profile code {profile}")
        if height < 1 or width < 1:
            raise FormatError("image extents must be positive")
        pos = HEADER_SIZE

        def chunk():
            nonlocal pos
            if pos + 4 > len(data):
                raise FormatError("truncated container")
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + n > len(data):
                raise FormatError("truncated container")
            out = data[pos:pos + n]
            pos += n
            return out

        hyper = chunk()
        if pos + 4 > len(data):
            raise FormatError("truncated container")
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        c = cls(KINDS[kind], PROFILE_BY_CODE[profile].name, seed, height, width, hyper, [], version)
        expected = make_schedule(c.kind, *c.latent_hw).pass_count
        if count != expected:
            raise FormatError(f"container holds {count} passes, schedule needs {expected}")
        c.passes = [chunk() for _ in range(count)]
        if pos != len(data):
            raise FormatError("trailing bytes after container")
        return c


@dataclass
class CodecReport:
    bpp: float
    psnr: float
    pass_count: int
    zero_context_count: int
    encode_ms: float = float("nan")
    decode_ms: float = float("nan")
    kind: str = ""
    profile: str = ""
    payload_bytes: int = 0
    container_bytes: int = 0
    estimated_bits: float = float("nan")
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {k: v for k, v in vars(self).items() if k != "extra"}
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None if math.isnan(v) else ("inf" if v > 0 else "-inf")
        d.update(self.extra)
        return d

    def to_text(self):
        return "\n".join(f"{k}: {v}" for k, v in self.to_dict().items())


def latent_extent(height, width):
    return -(-height // 16), -(-width // 16)


def pad_to_multiple(img, multiple=16):
    """Edge-replicate an (H, W, 3) image to extents divisible by ``multiple``."""
    h, w = img.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")


def _check_image(img):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise InputError("image must be 8-bit")
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"expected an (H, W, 3) RGB image, got shape {img.shape}")
    h, w = img.shape[:2]
    if not (1 <= h <= MAX_EXTENT and 1 <= w <= MAX_EXTENT):
        raise InputError(f"image extents {h}x{w} do not fit the 16-bit header")
    return img


def _resolve_weights(profile, seed, weights):
    if weights is None:
        return ModelWeights.seeded(profile, seed)
    if weights.profile.name != get_profile(profile).name:
        raise ValueError(f"weights are for profile {weights.profile.name!r}, not {profile!r}")
    return weights


def hyper_models(weights, z_shape):
    """Static per-channel (mu=0) models for hyper-latents, in coding order."""
    cz, hz, wz = z_shape
    sigma = np.clip(np.exp(weights["entropy.z_log_scale"]), entropy.SIGMA_MIN, entropy.SIGMA_MAX)
    cdf = entropy.build_symbol_models(np.zeros(cz), sigma)
    return np.tile(cdf, (hz * wz, 1)), np.tile(sigma, hz * wz)


def _pass_symbols(y_hat, coords):
    # (n, C) in position-major, channel-minor order
    return y_hat[:, coords[:, 0], coords[:, 1]].T


def encode_latents(y_hat, psi, kind, weights):
    """Code integer latents (C, h, w) pass by pass; returns (streams, estimated_bits)."""
    c, h, w = y_hat.shape
    sched = make_schedule(kind, h, w)
    streams = []
    bits = 0.0
    for t in range(sched.pass_count):
        field_ = predict_pass(y_hat, psi, sched, t, weights)
        syms = _pass_symbols(y_hat, sched.pass_coords(t))
        cdfs = entropy.build_symbol_models(field_.mu, field_.sigma)
        streams.append(entropy.encode_symbols(syms, cdfs))
        bits += entropy.estimate_rate(syms, field_.mu, field_.sigma)
    return streams, bits


def decode_latents(streams, psi, kind, weights, shape):
    """Inverse of :func:`encode_latents`; ``shape`` is (C, h, w)."""
    c, h, w = shape
    sched = make_schedule(kind, h, w)
    if len(streams) != sched.pass_count:
        raise FormatError(f"{len(streams)} sub-streams for a {sched.pass_count}-pass schedule")
    y_hat = np.zeros(shape, dtype=np.int64)
    for t in range(sched.pass_count):
        field_ = predict_pass(y_hat, psi, sched, t, weights)
        cdfs = entropy.build_symbol_models(field_.mu, field_.sigma)
        syms = entropy.decode_symbols(streams[t], cdfs).reshape(field_.mu.shape)
        coords = sched.pass_coords(t)
        y_hat[:, coords[:, 0], coords[:, 1]] = syms.T
    return y_hat


@dataclass
class EncodeResult:
    container: CodecContainer
    y_hat: np.ndarray
    z_hat: np.ndarray
    latent_bits: float
    hyper_bits: float


def encode_detailed(img, kind="c3m", profile="tiny", seed=0, weights=None):
    if kind not in KIND_CODES:
        raise ValueError(f"unknown context kind {kind!r}")
    profile = get_profile(profile).name
    img = _check_image(img)
    weights = _resolve_weights(profile, seed, weights)
    height, width = img.shape[:2]
    x = pad_to_multiple(img).transpose(2, 0, 1).astype(np.float64) / 255.0
    y = analysis(x, weights)
    y_hat = entropy.quantize(y)
    z_hat = entropy.quantize(hyper_analysis(y, weights))
    z_cdfs, z_sigma = hyper_models(weights, z_hat.shape)
    z_syms = z_hat.transpose(1, 2, 0).reshape(-1)
    hyper = entropy.encode_symbols(z_syms, z_cdfs)
    hyper_bits = entropy.estimate_rate(z_syms, 0.0, z_sigma)
    psi = hyper_synthesis(z_hat, weights, y_hat.shape[1:])
    streams, latent_bits = encode_latents(y_hat, psi, kind, weights)
    container = CodecContainer(kind, profile, int(seed) if weights.seed is None else int(weights.seed),
                               height, width, hyper, streams)
    return EncodeResult(container, y_hat, z_hat, latent_bits, hyper_bits)


def encode_image(img, kind="c3m", profile="tiny", seed=0, weights=None):
    """Compress an 8-bit RGB (or gray) image into a :class:`CodecContainer`."""
    return encode_detailed(img, kind, profile, seed, weights).container


def decode_image(container, weights=None):
    """Return ``(x_hat, y_hat)``: the (H, W, 3) uint8 reconstruction and integer latents."""
    if isinstance(container, (bytes, bytearray, memoryview)):
        container = CodecContainer.from_bytes(container)
    weights = _resolve_weights(container.profile, container.seed, weights)
    profile = weights.profile
    h, w = container.latent_hw
    hz, wz = -(-h // 4), -(-w // 4)
    z_shape = (profile.hyper_channels, hz, wz)
    z_cdfs, _ = hyper_models(weights, z_shape)
    z_syms = entropy.decode_symbols(container.hyper, z_cdfs)
    z_hat = z_syms.reshape(hz, wz, -1).transpose(2, 0, 1)
    psi = hyper_synthesis(z_hat, weights, (h, w))
    y_hat = decode_latents(container.passes, psi, container.kind, weights,
                           (profile.latent_channels, h, w))
    x = synthesis(y_hat, weights)
    x = x[:, :container.height, :container.width]
    x_hat = np.round(x * 255.0).astype(np.uint8).transpose(1, 2, 0)
    return np.ascontiguousarray(x_hat), y_hat


def psnr(a, b):
    """Peak signal-to-noise ratio in dB between two 8-bit images; ``inf`` if identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def bpp(container, pixels=None):
    """Bits per pixel of the entropy-coded payload (framing and header excluded)."""
    if pixels is None:
        pixels = container.height * container.width
    return 8.0 * container.payload_bytes / pixels


def encode_report(img, kind="c3m", profile="tiny", seed=0, weights=None):
    weights = _resolve_weights(profile, seed, weights)
    t0 = time.perf_counter()
    res = encode_detailed(img, kind, profile, seed, weights)
    ms = 1000.0 * (time.perf_counter() - t0)
    c = res.container
    stats = schedule_stats(make_schedule(kind, *c.latent_hw))
    report = CodecReport(bpp(c), float("nan"), stats.pass_count, stats.zero_context_count,
                         encode_ms=ms, kind=kind, profile=c.profile,
                         payload_bytes=c.payload_bytes, container_bytes=len(c.to_bytes()),
                         estimated_bits=res.latent_bits + res.hyper_bits)
    return res, report


def decode_report(container, weights=None, reference=None):
    if isinstance(container, (bytes, bytearray, memoryview)):
        container = CodecContainer.from_bytes(container)
    t0 = time.perf_counter()
    x_hat, y_hat = decode_image(container, weights)
    ms = 1000.0 * (time.perf_counter() - t0)
    stats = schedule_stats(make_schedule(container.kind, *container.latent_hw))
    quality = float("nan")
    if reference is not None:
        ref = np.asarray(reference)
        if ref.ndim == 2:
            ref = np.repeat(ref[:, :, None], 3, axis=2)
        quality = psnr(ref, x_hat)
    report = CodecReport(bpp(container), quality, stats.pass_count, stats.zero_context_count,
                         decode_ms=ms, kind=container.kind, profile=container.profile,
                         payload_bytes=container.payload_bytes,
                         container_bytes=len(container.to_bytes()))
    return x_hat, y_hat, report
