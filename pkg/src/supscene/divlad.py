"""Attention-gated VLAD aggregation.

Patch tokens ``x_n`` (C x N) are softly assigned to K clusters. Each
attention head contributes a token quality score; heads are ranked per image
by a confidence score, and a learned K x N_h gate mixes the heads per cluster.
The gated weight multiplies the soft assignment in the residual sum::

    v_k = sum_n a[k, n] * (sum_h g[k, h] * w[h, n]) * (x_n - c_k)

Residual sums are intra-normalized per cluster, concatenated and
L2-normalized. All functions accept optional leading batch dimensions.

Modes of :func:`aggregate`:

``divlad``    the full gated aggregation
``netvlad``   attention factor replaced by 1
``gate_off``  gate fixed to uniform 1 / N_h, token quality kept
``avg``       mean token, L2-normalized
``gem``       generalized mean with learnable exponent p
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor

MODES = ("divlad", "netvlad", "gate_off", "avg", "gem")
DEGENERATE_STD = 1e-8
GEM_EPS = 1e-6


class AggregationError(ValueError):
    pass


@dataclass
class DiVLADParams:
    centers: Tensor        # K x C
    assign_weight: Tensor  # K x C
    assign_bias: Tensor    # K
    gate: Tensor           # K x N_h
    gamma_g: float = 0.5
    gem_p: Tensor = field(default_factory=lambda: Tensor(3.0, requires_grad=True, name="gem_p"))

    def __post_init__(self):
        K, C = self.centers.shape
        if K < 1 or self.gate.shape[0] != K or self.gate.shape[1] < 1:
            raise AggregationError("need K >= 1 clusters and N_h >= 1 heads")
        if self.assign_weight.shape != (K, C) or self.assign_bias.shape != (K,):
            raise AggregationError(
                f"assignment head {self.assign_weight.shape}/{self.assign_bias.shape} "
                f"does not match {K} clusters x {C} channels")
        if not self.gamma_g > 0:
            raise AggregationError("gamma_g must be positive")

    @property
    def num_clusters(self) -> int:
        return self.centers.shape[0]

    @property
    def channels(self) -> int:
        return self.centers.shape[1]

    @property
    def num_heads(self) -> int:
        return self.gate.shape[1]

    @classmethod
    def init(cls, num_clusters: int, channels: int, num_heads: int,
             rng: np.random.Generator, gamma_g: float = 0.5, alpha: float = 1.0,
             centers: np.ndarray | None = None) -> "DiVLADParams":
        """Random unit centers (unless given) with the matching NetVLAD assignment head."""
        if centers is None:
            centers = rng.normal(size=(num_clusters, channels))
            centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        centers = np.asarray(centers, dtype=np.float64)
        return cls(
            Tensor(centers, requires_grad=True, name="centers"),
            Tensor(2.0 * alpha * centers, requires_grad=True, name="assign_weight"),
            Tensor(-alpha * (centers ** 2).sum(axis=1), requires_grad=True, name="assign_bias"),
            Tensor(np.zeros((num_clusters, num_heads)), requires_grad=True, name="gate"),
            gamma_g,
        )

    def parameters(self, mode: str = "divlad") -> dict[str, Tensor]:
        """Learnable tensors used by ``mode``."""
        if mode == "avg":
            return {}
        if mode == "gem":
            return {"gem_p": self.gem_p}
        out = {"centers": self.centers, "assign_weight": self.assign_weight,
               "assign_bias": self.assign_bias}
        if mode == "divlad":
            out["gate"] = self.gate
        return out

    def all_tensors(self) -> dict[str, Tensor]:
        return {"centers": self.centers, "assign_weight": self.assign_weight,
                "assign_bias": self.assign_bias, "gate": self.gate, "gem_p": self.gem_p}


def soft_assign(params: DiVLADParams, features) -> Tensor:
    """Softmax over clusters of a per-token linear map; (..., C, N) -> (..., K, N)."""
    x = nx.as_tensor(features)
    if x.shape[-2] != params.channels:
        raise AggregationError(
            f"features have {x.shape[-2]} channels, parameters expect {params.channels}")
    logits = nx.matmul(params.assign_weight, x) + nx.reshape(params.assign_bias, (-1, 1))
    return nx.softmax(logits, axis=-2)


def degenerate_heads(attention) -> np.ndarray:
    """Boolean (..., N_h, 1) mask of heads whose attention is (numerically) constant."""
    a = nx.as_tensor(attention).data
    return a.std(axis=-1, keepdims=True) < DEGENERATE_STD


def token_quality(attention, gamma_g: float = 0.5, events: list | None = None) -> Tensor:
    """``sigmoid((A - mean) / std) ** gamma_g`` with per-head, per-image statistics.

    A head with standard deviation below 1e-8 scores ``0.5 ** gamma_g`` on
    every token.
    """
    A = nx.as_tensor(attention)
    deg = degenerate_heads(A)
    if events is not None and deg.any():
        events.append(("degenerate_head", int(deg.sum())))
    mu = nx.reduce_mean(A, axis=-1, keepdims=True)
    centred = A - mu
    var = nx.reduce_mean(centred * centred, axis=-1, keepdims=True)
    # degenerate heads: shift var away from zero, then zero the standardized value
    std = nx.sqrt(var + deg.astype(np.float64))
    z = centred / std * (~deg).astype(np.float64)
    return nx.pow(nx.sigmoid(z), gamma_g)


def normalized_entropy(attention) -> Tensor:
    """Per-head attention entropy divided by ``ln N``; (..., N_h, N) -> (..., N_h)."""
    A = nx.as_tensor(attention)
    N = A.shape[-1]
    if N < 2:
        return nx.reduce_sum(A * 0.0, axis=-1)
    return nx.reduce_sum(nx.xlogx(A), axis=-1) * (-1.0 / math.log(N))


def head_confidence(quality, attention) -> Tensor:
    """Mean token quality times ``1 - entropy`` per head; lands in [0, 1]."""
    w = nx.as_tensor(quality)
    A = nx.as_tensor(attention)
    if w.shape != A.shape:
        raise AggregationError(f"quality {w.shape} and attention {A.shape} differ")
    deg = degenerate_heads(A)[..., 0]
    certainty = nx.clamp_min(1.0 - normalized_entropy(A), 0.0)
    # constant heads carry exactly zero confidence (entropy is 1 up to rounding)
    certainty = certainty * (~deg).astype(np.float64)
    return nx.reduce_mean(w, axis=-1) * certainty


def gate_weights(params: DiVLADParams, confidence) -> Tensor:
    """Per-cluster head mixture ``softplus(G) * s`` normalized over heads.

    Images whose confidences are all zero get a uniform mixture.
    """
    s = nx.as_tensor(confidence)
    Nh = params.num_heads
    if s.shape[-1] != Nh:
        raise AggregationError(f"confidence has {s.shape[-1]} heads, gate expects {Nh}")
    lead = s.shape[:-1]
    raw = nx.softplus(params.gate) * nx.reshape(s, lead + (1, Nh))      # (..., K, N_h)
    total = nx.reduce_sum(raw, axis=-1, keepdims=True)
    dead = (s.data.sum(axis=-1) <= 0.0).reshape(lead + (1, 1)).astype(np.float64)
    return raw / (total + dead) + dead * (1.0 / Nh)


def attention_factor(params: DiVLADParams, attention, mode: str = "divlad",
                     events: list | None = None) -> Tensor:
    """The (..., K, N) multiplier ``sum_h g[k, h] * w[h, n]``."""
    A = nx.as_tensor(attention)
    if A.shape[-2] != params.num_heads:
        raise AggregationError(
            f"attention has {A.shape[-2]} heads, parameters expect {params.num_heads}")
    w = token_quality(A, params.gamma_g, events)
    if mode == "gate_off":
        K = params.num_clusters
        g = Tensor(np.full((K, params.num_heads), 1.0 / params.num_heads))
    else:
        g = gate_weights(params, head_confidence(w, A))
    return nx.matmul(g, w)


def vlad_residuals(params: DiVLADParams, features, weights) -> Tensor:
    """Unnormalized ``v_k = sum_n weights[k, n] (x_n - c_k)``; returns (..., K, C)."""
    x = nx.as_tensor(features)
    weights = nx.as_tensor(weights)
    # explicit differences per cluster, so tokens sitting on a center cancel exactly
    rows = []
    for k in range(params.num_clusters):
        diff = x - nx.reshape(params.centers[k], (-1, 1))
        w_k = weights[..., k, :]
        rows.append(nx.reduce_sum(diff * nx.reshape(w_k, w_k.shape[:-1] + (1, -1)), axis=-1))
    return nx.stack(rows, axis=-2)


def aggregate(params: DiVLADParams, features, attention=None, mode: str = "divlad",
              events: list | None = None) -> Tensor:
    """Global descriptor(s) for (..., C, N) tokens and (..., N_h, N) attention."""
    if mode not in MODES:
        raise AggregationError(f"unknown mode {mode!r}; expected one of {MODES}")
    x = nx.as_tensor(features)
    if x.shape[-2] != params.channels:
        raise AggregationError(
            f"features have {x.shape[-2]} channels, parameters expect {params.channels}")
    if mode == "avg":
        return nx.l2_normalize(nx.reduce_mean(x, axis=-1), axis=-1)
    if mode == "gem":
        p = params.gem_p
        xp = nx.exp(nx.log(nx.clamp_min(x, GEM_EPS)) * p)
        pooled = nx.exp(nx.log(nx.reduce_mean(xp, axis=-1)) / p)
        return nx.l2_normalize(pooled, axis=-1)

    a = soft_assign(params, x)
    if mode == "netvlad":
        eff = a
    else:
        if attention is None:
            raise AggregationError(f"mode {mode!r} needs attention maps")
        A = nx.as_tensor(attention)
        if A.shape[:-2] != x.shape[:-2] or A.shape[-1] != x.shape[-1]:
            raise AggregationError(f"attention {A.shape} does not match features {x.shape}")
        eff = a * attention_factor(params, A, mode, events)
    v = vlad_residuals(params, x, eff)
    v = nx.l2_normalize(v, axis=-1)
    K, C = params.num_clusters, params.channels
    return nx.l2_normalize(nx.reshape(v, x.shape[:-2] + (K * C,)), axis=-1)


def contribution_map(params: DiVLADParams, features, attention, mode: str = "divlad") -> np.ndarray:
    """Per-token total weight ``sum_k a[k, n] * factor[k, n]``."""
    a = soft_assign(params, features)
    if mode == "netvlad":
        eff = a
    else:
        eff = a * attention_factor(params, attention, mode)
    return eff.data.sum(axis=-2)


def assignment_heatmap(params: DiVLADParams, features, attention, grid: tuple[int, int],
                       mode: str = "divlad") -> np.ndarray:
    """Contribution map reshaped to ``grid`` and min-max scaled to [0, 1].

    A map with (numerically) no spread is returned as all zeros.
    """
    contrib = contribution_map(params, features, attention, mode)
    H, W = grid
    m = contrib.reshape(H, W)
    lo, hi = m.min(), m.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)
