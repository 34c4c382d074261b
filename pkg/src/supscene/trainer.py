"""Training loop: subgraph batches -> shared encoder -> contrastive loss -> AdamW."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from . import numerics as nx
from . import tensorio
from .features import FeatureStore
from .loss import LossConfig, similarity_matrix, soft_supcon_loss, soft_weight_matrix
from .metrics import RelevanceOracle, RetrievalIndex, evaluate, rank_all
from .model import SupSceneModel, stack_bundles
from .overlap_graph import OverlapGraph
from .sampler import PAD_ID, SamplerConfig, epoch_schedule

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    """Raised by :func:`adamw_step` before touching any parameter."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    max_steps: int | None = None
    base_lr: float = 2e-4
    warmup_fraction: float = 0.10
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float | None = None
    seed: int = 0
    strategy: str = "anchor"
    aggregator: str = "divlad"
    attention_source: str = "provided"
    num_clusters: int = 8
    gamma_g: float = 0.5
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    preset: str = "custom"

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if not self.base_lr >= 0:
            raise ValueError("base_lr must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if not self.gamma_g > 0:
            raise ValueError("gamma_g must be positive")
        if self.strategy not in ("anchor", "balanced"):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "sampler" in d and isinstance(d["sampler"], dict):
            d["sampler"] = SamplerConfig(**d["sampler"])
        if "loss" in d and isinstance(d["loss"], dict):
            d["loss"] = LossConfig(**d["loss"])
        return cls(**d)


# "desk" runs on a laptop CPU in minutes. "paper" records the large multi-GPU setting
# (n=128, 50 epochs, lr 2e-4 with 10% warmup, K=32 over 768-dim ViT-B tokens); not for CI.
PRESETS: dict[str, TrainConfig] = {
    "desk": TrainConfig(epochs=50, max_steps=2000, base_lr=3e-2, warmup_fraction=0.10,
                        weight_decay=0.0, num_clusters=8,
                        sampler=SamplerConfig(subgraph_size=16), preset="desk"),
    "paper": TrainConfig(epochs=50, base_lr=2e-4, warmup_fraction=0.10, num_clusters=32,
                         sampler=SamplerConfig(subgraph_size=128), preset="paper"),
}


def lr_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``base_lr`` then cosine decay to 0 at ``total_steps``."""
    if total_steps <= 0:
        return 0.0
    step = min(max(step, 0), total_steps)
    warm = math.ceil(cfg.warmup_fraction * total_steps)
    if step < warm:
        return cfg.base_lr * step / warm
    if total_steps == warm:
        return cfg.base_lr
    progress = (step - warm) / (total_steps - warm)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"opt.step": np.array(float(self.step))}
        out.update({f"opt.m.{k}": a for k, a in self.m.items()})
        out.update({f"opt.v.{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, state: dict[str, np.ndarray]) -> "OptimizerState":
        m = {k[6:]: a for k, a in state.items() if k.startswith("opt.m.")}
        v = {k[6:]: a for k, a in state.items() if k.startswith("opt.v.")}
        return cls(m, v, int(state.get("opt.step", 0)))


def adamw_step(params: dict[str, nx.Tensor], grads: dict[str, np.ndarray],
               state: OptimizerState, lr: float, cfg: TrainConfig) -> OptimizerState:
    """One AdamW update with decoupled weight decay and bias-corrected moments.

    Parameter tensors are rebound to new arrays; the old arrays are untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = b1 * state.m.get(name, np.zeros_like(g)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(g)) + (1 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new = p.data * (1.0 - lr * cfg.weight_decay) - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new.setflags(write=False)
        p.data = new
    state.step = t
    return state


def positive_pair_spearman(S: np.ndarray, O: np.ndarray, mask: np.ndarray, tau: float) -> float | None:
    """Rank correlation between similarity and overlap over valid positive pairs."""
    n = S.shape[0]
    iu = np.triu_indices(n, k=1)
    keep = mask[iu[0]] & mask[iu[1]] & (O[iu] >= tau)
    if keep.sum() < 3:
        return None
    s, o = S[iu][keep], O[iu][keep]
    if np.ptp(s) == 0 or np.ptp(o) == 0:
        return None
    return float(spearmanr(s, o).statistic)


@dataclass
class TrainResult:
    model: SupSceneModel
    optimizer: OptimizerState
    log: list[dict]
    events: list = field(default_factory=list)
    total_steps: int = 0


def build_model(cfg: TrainConfig, channels: int, num_heads: int) -> SupSceneModel:
    rng = np.random.default_rng([cfg.seed, 7])
    return SupSceneModel.init(channels, num_heads, cfg.num_clusters, rng, mode=cfg.aggregator,
                              attention_source=cfg.attention_source, gamma_g=cfg.gamma_g)


def steps_per_epoch(graphs: Sequence[OverlapGraph], n: int) -> int:
    return sum(g.num_nodes // n + 1 for g in graphs)


def save_checkpoint(path, model: SupSceneModel, opt: OptimizerState) -> None:
    tensors = model.state_dict()
    tensors.update(opt.tensors())
    tensorio.save(path, tensors)


def load_checkpoint(path) -> tuple[SupSceneModel, OptimizerState]:
    state = tensorio.load(path)
    return SupSceneModel.from_state_dict(state), OptimizerState.from_tensors(state)


def batch_loss(model: SupSceneModel, tokens: np.ndarray, att: np.ndarray, overlap: np.ndarray,
               mask: np.ndarray, loss_cfg: LossConfig, events: list | None = None):
    """Loss and similarity for one padded batch; padded slots get zero descriptors.

    ``tokens``/``att`` hold only the valid images, in slot order.
    """
    n = mask.size
    desc = model.encode(tokens, att, events)
    select = np.zeros((n, desc.shape[0]))
    select[np.flatnonzero(mask), np.arange(desc.shape[0])] = 1.0
    full = nx.matmul(select, desc)
    S = similarity_matrix(full, mask)
    W = soft_weight_matrix(overlap, loss_cfg)
    return soft_supcon_loss(S, W, mask, loss_cfg, events), S


def train(graphs: Sequence[OverlapGraph], provider: FeatureStore, cfg: TrainConfig,
          out_dir: str | os.PathLike | None = None,
          model: SupSceneModel | None = None) -> TrainResult:
    """Optimize the encoder on subgraph batches drawn from ``graphs``.

    Writes ``checkpoint.ssck`` (initial, then after every epoch) and
    ``train_log.jsonl`` into ``out_dir`` when given.
    """
    if not graphs:
        raise TrainingError("no training scenes")
    for g in graphs:
        for nid in g.node_ids:
            if nid not in provider:
                raise TrainingError(f"provider has no features for image {nid!r}")
    C, _H, _W, Nh = provider.dims
    model = build_model(cfg, C, Nh) if model is None else model
    for nid in (graphs[0].node_ids[0],):
        model.check_dims(provider[nid])
    opt = OptimizerState()
    sampler_cfg = dataclasses.replace(cfg.sampler, seed=cfg.seed)
    per_epoch = steps_per_epoch(graphs, sampler_cfg.n)
    total = cfg.epochs * per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)

    ckpt = log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "checkpoint.ssck")
        log_path = os.path.join(out_dir, "train_log.jsonl")
        save_checkpoint(ckpt, model, opt)
        open(log_path, "w").close()

    cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def fetch(nid):
        if nid not in cache:
            b = provider[nid]
            cache[nid] = (b.tokens(), b.attention_tokens())
        return cache[nid]

    log: list[dict] = []
    events: list = []
    params = model.parameters()
    names = list(params)
    step = 0
    for epoch in range(cfg.epochs):
        if step >= total:
            break
        for batch in epoch_schedule(graphs, sampler_cfg, cfg.strategy, epoch):
            if step >= total:
                break
            ids = [nid for nid in batch.node_ids if nid != PAD_ID]
            tokens = np.stack([fetch(nid)[0] for nid in ids])
            att = np.stack([fetch(nid)[1] for nid in ids])
            version = model.version
            step_events: list = []
            with nx.GradTape() as tape:
                loss, S = batch_loss(model, tokens, att, batch.overlap, batch.valid_mask,
                                     cfg.loss, step_events)
            grads = dict(zip(names, tape.gradient(loss, [params[k] for k in names]))) if names else {}
            if model.version != version:
                raise TrainingError("parameters changed during a forward pass")
            gnorm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if cfg.max_grad_norm is not None and gnorm > cfg.max_grad_norm:
                scale = cfg.max_grad_norm / gnorm
                grads = {k: g * scale for k, g in grads.items()}
            lr = lr_schedule(step, total, cfg)
            record = {
                "step": step, "epoch": epoch, "loss": loss.item(), "lr": lr,
                "grad_norm": gnorm,
                "spearman": positive_pair_spearman(S.data, batch.overlap, batch.valid_mask,
                                                   cfg.loss.tau_iou),
            }
            if names:
                try:
                    adamw_step(params, grads, opt, lr, cfg)
                    model.version += 1
                except NonFiniteGradientError as exc:
                    step_events.append(("gradient_explosion", str(exc)))
                    logger.warning("step %d skipped: %s", step, exc)
            if step_events:
                events.extend((step, e) for e in step_events)
            log.append(record)
            if log_path is not None:
                with open(log_path, "a") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
            step += 1
        if ckpt is not None:
            save_checkpoint(ckpt, model, opt)
    return TrainResult(model, opt, log, events, total)


def embed(model: SupSceneModel, provider: FeatureStore, ids: Sequence[str] | None = None,
          chunk: int = 256) -> tuple[list[str], np.ndarray]:
    """Descriptors for ``ids`` (default: all provider images)."""
    ids = list(provider.ids() if ids is None else ids)
    out = np.zeros((len(ids), model.descriptor_dim))
    for start in range(0, len(ids), chunk):
        block = [provider[i] for i in ids[start:start + chunk]]
        for b in block:
            model.check_dims(b)
        tokens, att = stack_bundles(block)
        out[start:start + len(block)] = model.encode(tokens, att).data
    return ids, out


def evaluate_model(model: SupSceneModel, graphs: Sequence[OverlapGraph], provider: FeatureStore,
                   ks=(25, 50, 100), tau: float = 0.25) -> dict:
    """Retrieval metrics over all images of ``graphs`` searched as one database."""
    ids = [nid for g in graphs for nid in g.node_ids]
    ids, desc = embed(model, provider, ids)
    index = RetrievalIndex(ids, desc)
    rankings = rank_all(index, max(ks))
    return evaluate(rankings, RelevanceOracle.from_graphs(graphs, tau), ks)


def overlap_spearman(model: SupSceneModel, graphs: Sequence[OverlapGraph], provider: FeatureStore,
                     tau: float = 0.25) -> float:
    """Rank correlation of descriptor similarity with overlap over all positive pairs."""
    sims, overlaps = [], []
    for g in graphs:
        _, desc = embed(model, provider, g.node_ids)
        S = desc @ desc.T
        for i, j, w in g.edges:
            if w >= tau:
                sims.append(S[i, j])
                overlaps.append(w)
    return float(spearmanr(sims, overlaps).statistic)
