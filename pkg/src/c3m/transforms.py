"""Analysis / synthesis / hyper transforms and their parameter store.

Each transform alternates stride-2 convolutions (or 3x3 transposed
convolutions for upsampling) with stacks of LCAM blocks.  Feature maps are
carried as (C, H, W); LCAM blocks see them as (H, W, C) token grids.
"""

from dataclasses import dataclass
import hashlib
import io
import struct

import numpy as np

from . import lcam
from .numerics import ConvSpec, DimensionError, conv2d, conv_transpose2d

WEIGHT_MAGIC = b"C3MW"
WEIGHT_VERSION = 1
# widens the seeded latent distribution so quantized symbols are not all zero
LATENT_GAIN = 2.0
# seeded entropy head is centred on this scale so the untrained model is not badly miscalibrated
SCALE_PRIOR = 4.0


@dataclass(frozen=True)
class Profile:
    name: str
    code: int
    stage_channels: tuple
    lcam_depths: tuple
    hyper_depths: tuple
    context_dim: int
    context_heads: int
    context_depth: int
    window: int
    hyper_channels: int

    @property
    def latent_channels(self):
        return self.stage_channels[-1]

    @property
    def psi_channels(self):
        return 2 * self.latent_channels


PROFILES = {
    "tiny": Profile("tiny", 0, (32, 32, 48, 48), (1, 1, 2, 1), (2, 2), 48, 3, 2, 4, 32),
    "paper": Profile("paper", 1, (128, 128, 192, 192), (2, 4, 6, 2), (2, 2), 384, 6, 6, 8, 128),
}
PROFILE_BY_CODE = {p.code: p for p in PROFILES.values()}


def get_profile(name):
    if isinstance(name, Profile):
        return name
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}") from None


def _down(cin, cout):
    return ConvSpec(3, 3, 2, cin, cout, padding=1)


def _up(cin, cout):
    return ConvSpec(3, 3, 2, cin, cout, padding=1, output_padding=1)


def context_layer_shapes(dim, heads):
    hidden = lcam.MLP_RATIO * dim
    return {
        "ln1_g": (dim,), "ln1_b": (dim,),
        "w_q": (dim, dim), "w_k": (dim, dim), "w_v": (dim, dim),
        "w_o": (dim, dim), "b_o": (dim,),
        "pos_bias": (heads, lcam.BIAS_SIZE, lcam.BIAS_SIZE),
        "ln2_g": (dim,), "ln2_b": (dim,),
        "fc1_w": (dim, hidden), "fc1_b": (hidden,),
        "fc2_w": (hidden, dim), "fc2_b": (dim,),
    }


def parameter_shapes(profile):
    """Ordered map of every parameter path to its shape."""
    profile = get_profile(profile)
    shapes = {}

    def block(prefix, c, depth):
        for j in range(depth):
            for name, shape in lcam.lcam_param_shapes(c).items():
                shapes[f"{prefix}.lcam{j}.{name}"] = shape

    chans = profile.stage_channels
    cin = 3
    for i, (c, depth) in enumerate(zip(chans, profile.lcam_depths)):
        shapes[f"g_a.stage{i}.conv.w"] = (c, cin, 3, 3)
        shapes[f"g_a.stage{i}.conv.b"] = (c,)
        block(f"g_a.stage{i}", c, depth)
        cin = c
    for i in reversed(range(4)):
        c = chans[i]
        cout = chans[i - 1] if i else 3
        block(f"g_s.stage{i}", c, profile.lcam_depths[i])
        shapes[f"g_s.stage{i}.up.w"] = (c, cout, 3, 3)
        shapes[f"g_s.stage{i}.up.b"] = (cout,)

    cy, cz = profile.latent_channels, profile.hyper_channels
    cin = cy
    for j, depth in enumerate(profile.hyper_depths):
        shapes[f"h_a.stage{j}.conv.w"] = (cz, cin, 3, 3)
        shapes[f"h_a.stage{j}.conv.b"] = (cz,)
        block(f"h_a.stage{j}", cz, depth)
        cin = cz
    for j in reversed(range(len(profile.hyper_depths))):
        cout = profile.psi_channels if j == 0 else cz
        block(f"h_s.stage{j}", cz, profile.hyper_depths[j])
        shapes[f"h_s.stage{j}.up.w"] = (cz, cout, 3, 3)
        shapes[f"h_s.stage{j}.up.b"] = (cout,)

    d = profile.context_dim
    shapes["context.embed.w"] = (cy + 1, d)
    shapes["context.embed.b"] = (d,)
    for layer in range(profile.context_depth):
        for name, shape in context_layer_shapes(d, profile.context_heads).items():
            shapes[f"context.layer{layer}.{name}"] = shape
    shapes["context.conv.w"] = (d, cy, 3, 3)
    shapes["context.conv.b"] = (d,)

    ep_in = profile.psi_channels + d
    shapes["g_ep.fc1.w"] = (ep_in, profile.psi_channels)
    shapes["g_ep.fc1.b"] = (profile.psi_channels,)
    shapes["g_ep.fc2.w"] = (profile.psi_channels, 2 * cy)
    shapes["g_ep.fc2.b"] = (2 * cy,)
    shapes["entropy.z_log_scale"] = (cz,)
    return shapes


def _fan_in(path, shape):
    if path.endswith(".up.w"):
        return shape[0] * shape[2] * shape[3] / 4
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    return shape[0]


def _rng_for(seed, path):
    digest = hashlib.blake2b(path.encode(), digest_size=8).digest()
    key = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & (2**64 - 1), key])))


def _init_param(seed, path, shape):
    name = path.rsplit(".", 1)[-1]
    if name.endswith("_g"):
        return np.ones(shape)
    if name.endswith("ln1_b") or name.endswith("ln2_b"):
        return np.zeros(shape)
    u = 2.0 * _rng_for(seed, path).random(shape) - 1.0
    if name == "pos_bias":
        return 0.5 * u
    if name == "z_log_scale":
        return np.log(SCALE_PRIOR) + 0.25 * u
    if path == "g_ep.fc2.b":
        half = shape[0] // 2
        return np.concatenate([0.05 * u[:half], np.log(SCALE_PRIOR) + 0.05 * u[half:]])
    if path == "g_ep.fc2.w":
        half = shape[1] // 2
        scale = np.sqrt(3.0 / shape[0])
        return np.concatenate([0.25 * scale * u[:, :half], 0.1 * scale * u[:, half:]], axis=1)
    if path == "g_s.stage0.up.b":
        return 0.5 + 0.05 * u
    if name.startswith("b") or name.endswith("_b") or name == "b":
        return 0.05 * u
    scale = np.sqrt(3.0 / _fan_in(path, shape))
    if path == "g_a.stage3.conv.w":
        scale *= LATENT_GAIN
    return scale * u


class ModelWeights(dict):
    """Parameter path -> float64 array for one profile."""

    def __init__(self, profile, params, seed=None):
        super().__init__(params)
        self.profile = get_profile(profile)
        self.seed = seed

    @classmethod
    def seeded(cls, profile, seed):
        profile = get_profile(profile)
        params = {path: _init_param(seed, path, shape)
                  for path, shape in parameter_shapes(profile).items()}
        return cls(profile, params, seed)

    def validate(self):
        expected = parameter_shapes(self.profile)
        missing = sorted(set(expected) - set(self))
        extra = sorted(set(self) - set(expected))
        if missing or extra:
            raise ValueError(f"weight set mismatch: missing={missing[:5]} extra={extra[:5]}")
        for path, shape in expected.items():
            if tuple(self[path].shape) != tuple(shape):
                raise ValueError(f"{path}: shape {self[path].shape} != {shape}")

    def scope(self, prefix):
        """Parameters under ``prefix.`` with the prefix stripped."""
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.items() if k.startswith(prefix + ".")}

    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(WEIGHT_MAGIC)
        buf.write(struct.pack("<BBI", WEIGHT_VERSION, self.profile.code, len(self)))
        for path in parameter_shapes(self.profile):
            arr = np.ascontiguousarray(self[path], dtype="<f8")
            name = path.encode()
            buf.write(struct.pack("<H", len(name)))
            buf.write(name)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        view = memoryview(data)
        if bytes(view[:4]) != WEIGHT_MAGIC:
            raise ValueError("not a weight file (bad magic)")
        version, code, count = struct.unpack_from("<BBI", view, 4)
        if version != WEIGHT_VERSION:
            raise ValueError(f"unsupported weight file version {version}")
        if code not in PROFILE_BY_CODE:
            raise ValueError(f"unknown profile code {code}")
        pos = 10
        params = {}
        try:
            for _ in range(count):
                (n,) = struct.unpack_from("<H", view, pos)
                pos += 2
                path = bytes(view[pos:pos + n]).decode()
                pos += n
                (ndim,) = struct.unpack_from("<B", view, pos)
                pos += 1
                shape = struct.unpack_from(f"<{ndim}I", view, pos)
                pos += 4 * ndim
                size = int(np.prod(shape, dtype=np.int64))
                if pos + 8 * size > len(view):
                    raise ValueError("weight file truncated")
                params[path] = np.frombuffer(view, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
                pos += 8 * size
        except struct.error as exc:
            raise ValueError("weight file truncated") from exc
        if pos != len(view):
            raise ValueError("trailing bytes in weight file")
        weights = cls(PROFILE_BY_CODE[code], params)
        weights.validate()
        return weights

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def lcam_stack(x, weights, prefix, depth, window):
    """Apply ``depth`` LCAM blocks to a (C, H, W) map."""
    if depth == 0:
        return x
    t = x.transpose(1, 2, 0)
    for j in range(depth):
        t = lcam.lcam_forward(t, weights.scope(f"{prefix}.lcam{j}"), window)
    return np.ascontiguousarray(t.transpose(2, 0, 1))


def analysis(x, weights, profile=None):
    """Main encoder: (3, H, W) image in [0, 1] -> (C, H/16, W/16) latents."""
    profile = get_profile(profile or weights.profile)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise DimensionError(f"expected (3, H, W) input, got {x.shape}")
    if x.shape[1] % 16 or x.shape[2] % 16:
        raise DimensionError(f"extents {x.shape[1:]} are not multiples of 16")
    cin = 3
    for i, c in enumerate(profile.stage_channels):
        x = conv2d(x, weights[f"g_a.stage{i}.conv.w"], weights[f"g_a.stage{i}.conv.b"], _down(cin, c))
        x = lcam_stack(x, weights, f"g_a.stage{i}", profile.lcam_depths[i], profile.window)
        cin = c
    return x


def synthesis(y_hat, weights, profile=None):
    """Main decoder: (C, h, w) latents -> (3, 16h, 16w) image clamped to [0, 1]."""
    profile = get_profile(profile or weights.profile)
    x = np.asarray(y_hat, dtype=np.float64)
    chans = profile.stage_channels
    if x.ndim != 3 or x.shape[0] != chans[-1]:
        raise DimensionError(f"expected ({chans[-1]}, h, w) latents, got {x.shape}")
    for i in reversed(range(4)):
        x = lcam_stack(x, weights, f"g_s.stage{i}", profile.lcam_depths[i], profile.window)
        cout = chans[i - 1] if i else 3
        x = conv_transpose2d(x, weights[f"g_s.stage{i}.up.w"], weights[f"g_s.stage{i}.up.b"],
                             _up(chans[i], cout))
    return np.clip(x, 0.0, 1.0)


def hyper_analysis(y, weights, profile=None):
    """(C, h, w) latents -> (C_z, ceil(h/4), ceil(w/4)) hyper-latents."""
    profile = get_profile(profile or weights.profile)
    x = np.asarray(y, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != profile.latent_channels:
        raise DimensionError(f"expected ({profile.latent_channels}, h, w) latents, got {x.shape}")
    cin = profile.latent_channels
    for j, depth in enumerate(profile.hyper_depths):
        x = conv2d(x, weights[f"h_a.stage{j}.conv.w"], weights[f"h_a.stage{j}.conv.b"],
                   _down(cin, profile.hyper_channels))
        x = lcam_stack(x, weights, f"h_a.stage{j}", depth, profile.window)
        cin = profile.hyper_channels
    return x


def hyper_synthesis(z_hat, weights, latent_hw, profile=None):
    """Hyper-latents -> context parameters with 2C channels on the latent grid.

    The upsampled map covers at least ``latent_hw`` and is cropped to it.
    """
    profile = get_profile(profile or weights.profile)
    x = np.asarray(z_hat, dtype=np.float64)
    cz = profile.hyper_channels
    if x.ndim != 3 or x.shape[0] != cz:
        raise DimensionError(f"expected ({cz}, h, w) hyper-latents, got {x.shape}")
    h, w = latent_hw
    if x.shape[1] * 4 < h or x.shape[2] * 4 < w:
        raise DimensionError(f"hyper-latents {x.shape[1:]} too small for latent grid {latent_hw}")
    for j in reversed(range(len(profile.hyper_depths))):
        x = lcam_stack(x, weights, f"h_s.stage{j}", profile.hyper_depths[j], profile.window)
        cout = profile.psi_channels if j == 0 else cz
        x = conv_transpose2d(x, weights[f"h_s.stage{j}.up.w"], weights[f"h_s.stage{j}.up.b"],
                             _up(cz, cout))
    return np.ascontiguousarray(x[:, :h, :w])
