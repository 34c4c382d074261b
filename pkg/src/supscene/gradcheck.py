"""Finite-difference check of the whole training loss.

Each case draws a random encoder (attention stub + gated VLAD), a random
padded batch with graded overlaps, and compares tape gradients of the batch
loss against central differences for every learnable tensor.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .loss import LossConfig
from .model import SupSceneModel


@dataclass
class GradCase:
    seed: int
    channels: int
    clusters: int
    heads: int
    tokens: int
    batch: int
    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values())


def random_batch(rng: np.random.Generator, n: int, tau: float):
    """Overlap matrix with graded positives, weak links and one optional padded slot."""
    valid = n - int(rng.integers(0, 2))
    O = np.zeros((n, n))
    for i in range(valid):
        for j in range(i + 1, valid):
            u = rng.uniform()
            if u < 0.4:
                O[i, j] = rng.uniform(tau, 1.0)
            elif u < 0.7:
                O[i, j] = rng.uniform(0.01, tau)
    O[0, 1] = max(O[0, 1], 0.5)  # at least one usable anchor
    O = O + O.T
    O[np.arange(valid), np.arange(valid)] = 1.0
    mask = np.zeros(n, dtype=bool)
    mask[:valid] = True
    return O, mask


def _with_tensors(model: SupSceneModel, named: dict[str, nx.Tensor]) -> SupSceneModel:
    p = {k.split(".", 1)[1]: v for k, v in named.items() if k.startswith("divlad.")}
    s = {k.split(".", 1)[1]: v for k, v in named.items() if k.startswith("stub.")}
    params = dataclasses.replace(model.params, **p)
    stub = dataclasses.replace(model.stub, **s) if model.stub is not None else None
    return SupSceneModel(params, model.mode, stub, model.attention_source)


def check_case(seed: int, h: float = 1e-5, loss_cfg: LossConfig = LossConfig(),
               max_entries: int | None = 256) -> GradCase:
    """One random configuration; large tensors are probed on ``max_entries`` positions."""
    # imported here: trainer pulls in the metrics stack, which this module does not need otherwise
    from .trainer import batch_loss

    rng = np.random.default_rng([seed, 31])
    heads = int(rng.integers(2, 5))
    channels = heads * int(rng.integers(max(8 // heads, 2), 64 // heads + 1))
    clusters = int(rng.integers(2, 9))
    N = int(rng.integers(16, 65))
    n = int(rng.integers(4, 9))
    model = SupSceneModel.init(channels, heads, clusters, rng, attention_source="stub")
    # move off the symmetric init so every tensor has a generic gradient
    params = model.parameters()
    named = {k: nx.Tensor(v.data + 0.1 * rng.normal(size=v.shape), requires_grad=True)
             for k, v in params.items()}
    O, mask = random_batch(rng, n, loss_cfg.tau_iou)
    tokens = rng.normal(size=(int(mask.sum()), channels, N))
    names = list(named)

    def fn(*tensors):
        m = _with_tensors(model, dict(zip(names, tensors)))
        return batch_loss(m, tokens, None, O, mask, loss_cfg)[0]

    errs = nx.check_gradients(fn, [named[k] for k in names], h, max_entries,
                              np.random.default_rng([seed, 32]))
    return GradCase(seed, channels, clusters, heads, N, n, dict(zip(names, errs)))


def run_suite(seeds=range(20), h: float = 1e-5, max_entries: int | None = 256) -> list[GradCase]:
    return [check_case(s, h, max_entries=max_entries) for s in seeds]


def summarize(cases: list[GradCase]) -> dict[str, float]:
    """Largest relative error per tensor name over all cases."""
    out: dict[str, float] = {}
    for c in cases:
        for k, e in c.errors.items():
            out[k] = max(out.get(k, 0.0), e)
    return out
