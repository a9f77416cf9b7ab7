"""Context-feature prediction and the entropy-parameters head.

Two context backbones are provided.  The masked transformer embeds every
decoded latent plus the query tokens (whose value is unknown and flagged as
such) and lets every token attend only to decoded tokens.  The masked 3x3
convolution sums decoded neighbours only.  Both return one context vector per
query, which the entropy-parameters head combines with the hyperprior
context to produce a Gaussian mean and scale per latent channel.
"""

from dataclasses import dataclass

import numpy as np

from .entropy import SIGMA_MAX, SIGMA_MIN
from .lcam import BIAS_CLIP
from .numerics import DimensionError, attention, gelu, layer_norm, linear, relative_bias, relu


class ContractViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class CausalMask:
    allowed: np.ndarray  # (h, w) bool, decoded positions
    queries: np.ndarray  # (n, 2) int, positions to predict

    def __post_init__(self):
        allowed = np.asarray(self.allowed, dtype=bool)
        queries = np.asarray(self.queries, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "allowed", allowed)
        object.__setattr__(self, "queries", queries)
        if len(queries) and np.any(allowed[queries[:, 0], queries[:, 1]]):
            raise ContractViolation("a query position is already decoded")

    @property
    def h(self):
        return self.allowed.shape[0]

    @property
    def w(self):
        return self.allowed.shape[1]

    @classmethod
    def for_pass(cls, schedule, t):
        return cls(schedule.causal_mask(t), schedule.pass_coords(t))


@dataclass(frozen=True)
class GaussianField:
    mu: np.ndarray
    sigma: np.ndarray


def _tokens(y_hat, mask):
    """Embedding inputs for decoded tokens followed by query tokens."""
    c = y_hat.shape[0]
    dec = np.argwhere(mask.allowed)
    coords = np.concatenate([dec, mask.queries]).astype(np.int64)
    feats = np.zeros((len(coords), c + 1))
    feats[:len(dec), :c] = y_hat[:, dec[:, 0], dec[:, 1]].T
    feats[len(dec):, c] = 1.0  # not-yet-decoded flag
    return feats, coords, len(dec)


def _masked_msa(x, p, heads, coords, n_keys):
    n, d = x.shape
    dh = d // heads

    def split(t):
        return t.reshape(len(t), heads, dh).transpose(1, 0, 2)

    # only decoded tokens are keys; they occupy the first n_keys rows
    q = split(linear(x, p["w_q"]))
    k = split(linear(x[:n_keys], p["w_k"]))
    v = split(linear(x[:n_keys], p["w_v"]))
    bias = relative_bias(p["pos_bias"], coords[:, 0], coords[:, 1],
                         coords[:n_keys, 0], coords[:n_keys, 1], BIAS_CLIP)
    out, weights = attention(q, k, v, bias)
    out = out.transpose(1, 0, 2).reshape(n, d)
    return linear(out, p["w_o"], p["b_o"]), weights


def masked_transformer_context(y_hat_partial, mask, weights, profile=None, return_attention=False):
    """Context features at ``mask.queries`` from decoded latents; (n_queries, D).

    Tokens that are neither decoded nor queried can never be attended to, so
    they are left out of the computation entirely.
    """
    profile = profile or weights.profile
    if len(mask.queries) and not mask.allowed.any():
        raise ContractViolation("transformer context needs at least one decoded latent")
    y = np.asarray(y_hat_partial, dtype=np.float64)
    feats, coords, n_keys = _tokens(y, mask)
    # (n, C+1) @ (C+1, D)
    x = linear(feats, weights["context.embed.w"], weights["context.embed.b"])
    maps = []
    for layer in range(profile.context_depth):
        p = weights.scope(f"context.layer{layer}")
        a, att = _masked_msa(layer_norm(x, p["ln1_g"], p["ln1_b"]), p, profile.context_heads,
                             coords, n_keys)
        x = x + a
        hidden = gelu(linear(layer_norm(x, p["ln2_g"], p["ln2_b"]), p["fc1_w"], p["fc1_b"]))
        x = x + linear(hidden, p["fc2_w"], p["fc2_b"])
        maps.append(att)
    phi = x[n_keys:]
    if return_attention:
        return phi, maps
    return phi


def neighbourhoods(y_hat, allowed, queries):
    """Masked 3x3 patches around each query, flattened to (n, C*9)."""
    c, h, w = y_hat.shape
    vals = np.pad(np.where(allowed, y_hat, 0.0), ((0, 0), (1, 1), (1, 1)))
    keep = np.pad(allowed, 1)
    r, col = queries[:, 0], queries[:, 1]
    patch = np.zeros((len(queries), c, 3, 3))
    for dr in range(3):
        for dc in range(3):
            m = keep[r + dr, col + dc]
            patch[:, :, dr, dc] = vals[:, r + dr, col + dc].T * m[:, None]
    return patch.reshape(len(queries), c * 9)


def masked_conv_context(y_hat_partial, mask, weights):
    """3x3 convolution over decoded neighbours only, evaluated at the queries."""
    y = np.asarray(y_hat_partial, dtype=np.float64)
    w = weights["context.conv.w"]
    cols = neighbourhoods(y, mask.allowed, mask.queries)
    return linear(cols, w.reshape(w.shape[0], -1).T, weights["context.conv.b"])


def entropy_parameters(psi_at, phi_at, weights):
    """(mu, sigma) per query and latent channel from hyper and context features."""
    psi_at = np.asarray(psi_at, dtype=np.float64)
    phi_at = np.asarray(phi_at, dtype=np.float64)
    if psi_at.shape[0] != phi_at.shape[0]:
        raise DimensionError(f"psi rows {psi_at.shape[0]} != phi rows {phi_at.shape[0]}")
    x = np.concatenate([psi_at, phi_at], axis=1)
    hidden = relu(linear(x, weights["g_ep.fc1.w"], weights["g_ep.fc1.b"]))
    out = linear(hidden, weights["g_ep.fc2.w"], weights["g_ep.fc2.b"])
    c = out.shape[1] // 2
    return GaussianField(out[:, :c], scale_from_raw(out[:, c:]))


def scale_from_raw(raw):
    lo, hi = np.log(SIGMA_MIN), np.log(SIGMA_MAX)
    sigma = np.clip(np.exp(np.clip(raw, lo, hi)), SIGMA_MIN, SIGMA_MAX)
    # exp(log(b)) need not round back to b; saturated inputs map to the bounds exactly
    return np.where(raw <= lo, SIGMA_MIN, np.where(raw >= hi, SIGMA_MAX, sigma))


def context_features(y_hat, mask, backbone, weights):
    d = weights.profile.context_dim
    if backbone == "none":
        return np.zeros((len(mask.queries), d))
    if backbone == "conv3x3":
        return masked_conv_context(y_hat, mask, weights)
    if backbone == "transformer":
        return masked_transformer_context(y_hat, mask, weights)
    raise ValueError(f"unknown backbone {backbone!r}")


def predict_pass(y_hat, psi, schedule, t, weights):
    """Gaussian parameters for every position of pass ``t``, shape (n, C).

    Only latents decoded before pass ``t`` are read from ``y_hat``.
    """
    mask = CausalMask.for_pass(schedule, t)
    y = np.where(mask.allowed, np.asarray(y_hat, dtype=np.float64), 0.0)
    phi = context_features(y, mask, schedule.backbones[t], weights)
    q = mask.queries
    psi_at = psi[:, q[:, 0], q[:, 1]].T
    return entropy_parameters(psi_at, phi, weights)
