"""Shared-weight encoder: optional last-block attention stub followed by an aggregator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .divlad import MODES, DiVLADParams, aggregate
from .features import ConfigurationError, FeatureBundle, LastBlockStub, stub_attention_from_tokens
from .numerics import Tensor

ATTENTION_SOURCES = ("provided", "stub")


@dataclass
class SupSceneModel:
    params: DiVLADParams
    mode: str = "divlad"
    stub: LastBlockStub | None = None
    attention_source: str = "provided"
    version: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown aggregator {self.mode!r}")
        if self.attention_source not in ATTENTION_SOURCES:
            raise ConfigurationError(f"attention_source must be one of {ATTENTION_SOURCES}")
        if self.attention_source == "stub" and self.stub is None:
            raise ConfigurationError("attention_source 'stub' needs a LastBlockStub")

    @classmethod
    def init(cls, channels: int, num_heads: int, num_clusters: int, rng: np.random.Generator,
             mode: str = "divlad", attention_source: str = "provided",
             gamma_g: float = 0.5) -> "SupSceneModel":
        params = DiVLADParams.init(num_clusters, channels, num_heads, rng, gamma_g=gamma_g)
        stub = LastBlockStub.init(channels, num_heads, rng) if attention_source == "stub" else None
        return cls(params, mode, stub, attention_source)

    @property
    def descriptor_dim(self) -> int:
        if self.mode in ("avg", "gem"):
            return self.params.channels
        return self.params.num_clusters * self.params.channels

    def parameters(self) -> dict[str, Tensor]:
        """Learnable tensors, in a fixed order."""
        out = {f"divlad.{k}": v for k, v in self.params.parameters(self.mode).items()}
        if self.attention_source == "stub" and self.mode in ("divlad", "gate_off"):
            out.update(self.stub.parameters())
        return out

    def attention(self, tokens, attention=None):
        if self.attention_source == "stub":
            return stub_attention_from_tokens(self.stub, tokens)
        return attention

    def encode(self, tokens, attention=None, events: list | None = None) -> Tensor:
        """Descriptors for (m, C, N) tokens and (m, N_h, N) attention; returns (m, D)."""
        att = None if self.mode in ("netvlad", "avg", "gem") else self.attention(tokens, attention)
        return aggregate(self.params, tokens, att, self.mode, events)

    def check_dims(self, bundle: FeatureBundle) -> None:
        C, _H, _W, Nh = bundle.dims
        if C != self.params.channels or Nh != self.params.num_heads:
            raise ConfigurationError(
                f"{bundle.image_id}: features have C={C}, N_h={Nh}; model expects "
                f"C={self.params.channels}, N_h={self.params.num_heads}")

    # --- serialization ----------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"divlad.{k}": v.data for k, v in self.params.all_tensors().items()}
        if self.stub is not None:
            out.update({k: v.data for k, v in self.stub.parameters().items()})
            out["meta.stub_heads"] = np.array(float(self.stub.num_heads))
        out["meta.mode"] = np.array(float(MODES.index(self.mode)))
        out["meta.attention_stub"] = np.array(float(self.attention_source == "stub"))
        out["meta.gamma_g"] = np.array(self.params.gamma_g)
        out["meta.version"] = np.array(float(self.version))
        return out

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray]) -> "SupSceneModel":
        def t(name):
            return Tensor(state[name], requires_grad=True, name=name.split(".", 1)[1])
        params = DiVLADParams(t("divlad.centers"), t("divlad.assign_weight"),
                              t("divlad.assign_bias"), t("divlad.gate"),
                              float(state["meta.gamma_g"]), t("divlad.gem_p"))
        stub = None
        if "stub.w_query" in state:
            stub = LastBlockStub(Tensor(state["stub.w_query"], requires_grad=True),
                                 Tensor(state["stub.w_key"], requires_grad=True),
                                 int(state["meta.stub_heads"]))
        mode = MODES[int(state["meta.mode"])]
        source = "stub" if float(state["meta.attention_stub"]) else "provided"
        return cls(params, mode, stub, source, int(state["meta.version"]))


def stack_bundles(bundles: list[FeatureBundle]) -> tuple[np.ndarray, np.ndarray]:
    """(m, C, N) tokens and (m, N_h, N) attention for a list of bundles."""
    tokens = np.stack([b.tokens() for b in bundles])
    att = np.stack([b.attention_tokens() for b in bundles])
    return tokens, att

