"""Overlap-weighted supervised contrastive loss over a subgraph batch."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor

logger = logging.getLogger(__name__)

VARIANTS = ("soft", "hard")


@dataclass(frozen=True)
class LossConfig:
    tau_iou: float = 0.25
    gamma_s: float = 0.7
    temperature: float = 0.1
    variant: str = "soft"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("loss.temperature must be positive")
        if not 0.0 < self.gamma_s <= 1.0:
            raise ValueError("loss.gamma_s must lie in (0, 1]")
        if not 0.0 < self.tau_iou < 1.0:
            raise ValueError("loss.tau_iou must lie in (0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"loss.variant must be one of {VARIANTS}")


def soft_weight_matrix(overlap: np.ndarray, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Pair weights from overlaps; the diagonal is always zero.

    soft: ``O**gamma_s`` at or above ``tau_iou``, ``O**(1/gamma_s)`` strictly
    between 0 and ``tau_iou``, else 0.
    hard: 1 where ``O > tau_iou``, else 0.
    """
    O = np.asarray(overlap, dtype=np.float64)
    if cfg.variant == "hard":
        W = (O > cfg.tau_iou).astype(np.float64)
    else:
        W = np.where(O >= cfg.tau_iou, np.power(O, cfg.gamma_s),
                     np.where(O > 0, np.power(np.maximum(O, 0.0), 1.0 / cfg.gamma_s), 0.0))
    np.fill_diagonal(W, 0.0)
    return W


def similarity_matrix(descriptors, mask=None) -> Tensor:
    """Dot products of (n, D) descriptors; padded rows and columns are zero."""
    D = nx.as_tensor(descriptors)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (D.shape[0],):
            raise ValueError(f"mask of shape {mask.shape} does not match {D.shape[0]} descriptors")
        D = D * mask[:, None].astype(np.float64)
    return nx.matmul(D, nx.swapaxes(D, -1, -2))


def soft_supcon_loss(S, W: np.ndarray, mask=None, cfg: LossConfig = LossConfig(),
                     events: list | None = None) -> Tensor:
    """Weighted contrastive loss; anchors without positive weight are dropped.

    For each valid anchor i with ``Z_i = sum_j W_ij > 0``::

        -(1/Z_i) sum_j W_ij (S_ij / t - logsumexp_{k != i, k valid} S_ik / t)

    averaged over those anchors. If no anchor qualifies the loss is 0 and a
    ``no_valid_anchors`` event is appended to ``events``.
    """
    S = nx.as_tensor(S)
    n = S.shape[0]
    if S.shape != (n, n) or np.shape(W) != (n, n):
        raise ValueError(f"S {S.shape} and W {np.shape(W)} must both be n x n")
    valid = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    pair = valid[:, None] & valid[None, :]
    np.fill_diagonal(pair, False)
    W = np.where(pair, np.asarray(W, dtype=np.float64), 0.0)
    Z = W.sum(axis=1)
    anchors = valid & (Z > 0)
    if not anchors.any():
        if events is not None:
            events.append("no_valid_anchors")
        logger.debug("batch has no valid anchors")
        return Tensor(0.0)

    logits = S * (1.0 / cfg.temperature)
    lse = nx.masked_logsumexp(logits, pair, axis=1)
    Zs = np.where(anchors, Z, 1.0)
    coef = np.where(anchors, 1.0 / (Zs * anchors.sum()), 0.0)
    pos = nx.reduce_sum(logits * W, axis=1)
    per_anchor = pos - lse * Z
    return -nx.reduce_sum(per_anchor * coef)


def valid_anchor_count(W: np.ndarray, mask=None) -> int:
    W = np.array(W, dtype=np.float64)
    n = W.shape[0]
    valid = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    np.fill_diagonal(W, 0.0)
    W = W * (valid[:, None] & valid[None, :])
    return int((valid & (W.sum(axis=1) > 0)).sum())

