"""Feature providers: patch features ``F`` (C x H x W) and cls->patch attention ``A``.

Three sources are supported:

* :func:`cls_attention` computes per-head attention from a trainable
  last-block stub (query for the cls token, keys for the patches);
* :func:`synth_scene` generates scene-consistent synthetic images whose
  ground-truth overlap is the Jaccard index of observed landmark sets;
* :func:`read_features` / :func:`write_features` handle the binary feature
  file used to ingest exports from a real backbone.
"""

from __future__ import annotations

import math
import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .overlap_graph import OverlapGraph

ATTN_SUM_TOL = 1e-6
FEATURE_MAGIC = b"SSFB"
FEATURE_VERSION = 1


class ConfigurationError(ValueError):
    pass


class FeatureFormatError(ValueError):
    pass


class FeatureCorruptionError(FeatureFormatError):
    pass


class AttentionSumWarning(UserWarning):
    pass


@dataclass
class FeatureBundle:
    """Backbone outputs for one image."""

    features: np.ndarray   # C x H x W
    attention: np.ndarray  # N_h x H x W
    image_id: str
    warnings: list[str] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.attention = np.asarray(self.attention, dtype=np.float64)
        if self.features.ndim != 3 or self.attention.ndim != 3:
            raise ConfigurationError("features must be C x H x W and attention N_h x H x W")
        if self.features.shape[1:] != self.attention.shape[1:]:
            raise ConfigurationError(
                f"grid mismatch: features {self.features.shape} vs attention {self.attention.shape}")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        C, H, W = self.features.shape
        return C, H, W, self.attention.shape[0]

    def tokens(self) -> np.ndarray:
        """Features flattened to C x N (row-major over the grid)."""
        C = self.features.shape[0]
        return self.features.reshape(C, -1)

    def attention_tokens(self) -> np.ndarray:
        return self.attention.reshape(self.attention.shape[0], -1)

    def attention_row_sums(self) -> np.ndarray:
        return self.attention_tokens().sum(axis=1)


def check_attention(bundle: FeatureBundle, tol: float = ATTN_SUM_TOL) -> bool:
    """Record (and warn about) heads whose attention does not sum to one."""
    sums = bundle.attention_row_sums()
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    negative = bool(np.any(bundle.attention < 0))
    problems = []
    if bad.size:
        problems.append(f"heads {bad.tolist()} do not sum to 1 within {tol} "
                        f"(sums {sums[bad].tolist()})")
    if negative:
        problems.append("negative attention values")
    for msg in problems:
        msg = f"{bundle.image_id}: {msg}"
        bundle.warnings.append(msg)
        warnings.warn(msg, AttentionSumWarning, stacklevel=2)
    return not problems


# --- last-block stub ------------------------------------------------------


@dataclass
class LastBlockStub:
    """Trainable query/key projections of the final transformer block."""

    w_query: Tensor
    w_key: Tensor
    num_heads: int

    def __post_init__(self):
        D = self.w_query.shape[0]
        if self.w_query.shape != (D, D) or self.w_key.shape != (D, D):
            raise ConfigurationError("stub projections must be square D x D")
        if D % self.num_heads:
            raise ConfigurationError(
                f"embedding width {D} is not divisible by {self.num_heads} heads")

    @property
    def width(self) -> int:
        return self.w_query.shape[0]

    @property
    def head_dim(self) -> int:
        return self.width // self.num_heads

    @classmethod
    def init(cls, width: int, num_heads: int, rng: np.random.Generator,
             scale: float = 1.0) -> "LastBlockStub":
        if num_heads < 1 or width % num_heads:
            raise ConfigurationError(
                f"embedding width {width} is not divisible by {num_heads} heads")
        std = scale / math.sqrt(width)
        return cls(Tensor(rng.normal(0.0, std, (width, width)), requires_grad=True, name="stub.w_query"),
                   Tensor(rng.normal(0.0, std, (width, width)), requires_grad=True, name="stub.w_key"),
                   num_heads)

    def parameters(self) -> dict[str, Tensor]:
        return {"stub.w_query": self.w_query, "stub.w_key": self.w_key}


def cls_attention(stub: LastBlockStub, cls_embed, patch_embeds) -> Tensor:
    """Per-head softmax of cls-query / patch-key scores scaled by ``sqrt(d_k)``.

    ``cls_embed`` is (..., D) and ``patch_embeds`` is (..., N, D); the result
    is (..., N_h, N) with every row a probability distribution.
    """
    cls_embed = nx.as_tensor(cls_embed)
    patch_embeds = nx.as_tensor(patch_embeds)
    D = stub.width
    if cls_embed.shape[-1] != D or patch_embeds.shape[-1] != D:
        raise ConfigurationError(
            f"stub width {D} does not match embeddings {cls_embed.shape}, {patch_embeds.shape}")
    lead = patch_embeds.shape[:-2]
    N = patch_embeds.shape[-2]
    q = nx.matmul(nx.reshape(cls_embed, lead + (1, D)), stub.w_query)   # (..., 1, D)
    k = nx.matmul(patch_embeds, stub.w_key)                             # (..., N, D)
    prod = nx.reshape(k * q, lead + (N, stub.num_heads, stub.head_dim))
    scores = nx.swapaxes(nx.reduce_sum(prod, axis=-1), -1, -2)          # (..., N_h, N)
    return nx.softmax(scores * (1.0 / math.sqrt(stub.head_dim)), axis=-1)


def stub_attention_from_tokens(stub: LastBlockStub, tokens) -> Tensor:
    """Attention for (..., C, N) tokens with the cls embedding taken as the token mean."""
    tokens = nx.as_tensor(tokens)
    patches = nx.swapaxes(tokens, -1, -2)
    cls = nx.reduce_mean(tokens, axis=-1)
    return cls_attention(stub, cls, patches)


# --- synthetic scenes -----------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic scene generator settings.

    Landmarks sit on a closed loop; image ``i`` looks at a window of the loop
    centred near ``i * landmarks / images`` and keeps each landmark in view
    with probability ``keep_prob``. Every patch feature mixes a shared
    semantic word (from a vocabulary common to all scenes) with an instance
    component, so semantically similar but geometrically unrelated patches
    abound. Patches not covered by a landmark hold per-image clutter.
    """

    images: int = 30
    grid: tuple[int, int] = (8, 8)
    channels: int = 64
    heads: int = 4
    landmarks: int = 480
    noise: float = 0.05
    window: int = 48
    keep_prob: float = 0.95
    jitter: float = 0.75
    vocab_size: int = 8
    semantic_scale: float = 1.0
    instance_scale: float = 0.6
    attention_peak: float = 4.0
    distractor_heads: int = 1
    vocab_seed: int = 1234

    def __post_init__(self):
        H, W = self.grid
        if self.landmarks < 1:
            raise ConfigurationError("landmark count must be >= 1")
        if H < 1 or W < 1:
            raise ConfigurationError("grid must be non-empty")
        if self.images < 1 or self.channels < 1 or self.heads < 1:
            raise ConfigurationError("images, channels and heads must be >= 1")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigurationError("keep_prob must lie in (0, 1]")
        if self.distractor_heads >= self.heads and self.heads > 1:
            raise ConfigurationError("at least one head must attend to landmarks")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def semantic_vocabulary(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.vocab_seed)
    return _unit_rows(rng.normal(size=(cfg.vocab_size, cfg.channels)))


def jaccard(a: frozenset, b: frozenset) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def synth_scene(cfg: SynthConfig, seed, scene_id: str = "scene0"
                ) -> tuple[OverlapGraph, list[FeatureBundle]]:
    rng = np.random.default_rng(seed)
    H, W = cfg.grid
    N = H * W
    C = cfg.channels
    vocab = semantic_vocabulary(cfg)

    word, instance, head_of, views = _scene_layout(cfg, rng)
    landmark_vec = cfg.semantic_scale * vocab[word] + cfg.instance_scale * instance
    informative = max(cfg.heads - cfg.distractor_heads, 1)

    ids = [f"{scene_id}_{i:03d}" for i in range(cfg.images)]
    bundles = []
    for i, view in enumerate(views):
        lms = np.array(sorted(view), dtype=int)
        cells = rng.permutation(N)
        lm_cells = cells[:lms.size]
        clutter_cells = cells[lms.size:]
        feats = np.empty((N, C))
        feats[lm_cells] = landmark_vec[lms]
        cw = rng.integers(cfg.vocab_size, size=clutter_cells.size)
        feats[clutter_cells] = (cfg.semantic_scale * vocab[cw]
                                + cfg.instance_scale * _unit_rows(rng.normal(size=(clutter_cells.size, C))))
        if cfg.noise > 0:
            feats = feats + rng.normal(0.0, cfg.noise / math.sqrt(C), size=feats.shape)

        logits = np.zeros((cfg.heads, N))
        for h in range(cfg.heads):
            if h < informative:
                cells_h = lm_cells[head_of[lms] == h]
            else:
                cells_h = rng.choice(clutter_cells, size=min(4, clutter_cells.size), replace=False) \
                    if clutter_cells.size else np.array([], dtype=int)
            logits[h, cells_h] = cfg.attention_peak
        logits += 0.1 * rng.normal(size=logits.shape)
        att = np.exp(logits - logits.max(axis=1, keepdims=True))
        att /= att.sum(axis=1, keepdims=True)

        bundles.append(FeatureBundle(feats.T.reshape(C, H, W), att.reshape(cfg.heads, H, W), ids[i]))

    edges = []
    for i in range(cfg.images):
        for j in range(i + 1, cfg.images):
            w = jaccard(views[i], views[j])
            if w > 0:
                edges.append((i, j, w))
    graph = OverlapGraph.from_edges(scene_id, ids, edges)
    return graph, bundles


def _scene_layout(cfg: SynthConfig, rng: np.random.Generator):
    L = cfg.landmarks
    N = cfg.grid[0] * cfg.grid[1]
    word = rng.integers(cfg.vocab_size, size=L)
    instance = _unit_rows(rng.normal(size=(L, cfg.channels)))
    head_of = rng.integers(max(cfg.heads - cfg.distractor_heads, 1), size=L)
    spacing = L / cfg.images
    half = cfg.window / 2.0
    views: list[frozenset] = []
    for i in range(cfg.images):
        centre = (i + cfg.jitter * rng.uniform(-0.5, 0.5)) * spacing
        dist = np.abs((np.arange(L) - centre + L / 2.0) % L - L / 2.0)
        seen = np.flatnonzero(dist <= half)
        kept = seen[rng.uniform(size=seen.size) < cfg.keep_prob]
        if kept.size == 0:
            kept = seen[:1] if seen.size else np.array([int(round(centre)) % L])
        views.append(frozenset(int(k) for k in kept[:N]))
    return word, instance, head_of, views


def synth_dataset(cfg: SynthConfig, scenes: int, seed: int, prefix: str = "scene"
                  ) -> list[tuple[OverlapGraph, list[FeatureBundle]]]:
    """``scenes`` independent scenes; scene ``i`` is seeded with ``[seed, i]``."""
    return [synth_scene(cfg, [seed, i], f"{prefix}{i:03d}") for i in range(scenes)]


def synth_views(cfg: SynthConfig, seed: int) -> list[frozenset]:
    """Landmark sets observed by each image of ``synth_scene(cfg, seed)``."""
    return _scene_layout(cfg, np.random.default_rng(seed))[3]


# --- feature files --------------------------------------------------------


def write_features(bundle: FeatureBundle, path: str | os.PathLike) -> None:
    C, H, W, Nh = bundle.dims
    name = bundle.image_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<H", FEATURE_VERSION))
        fh.write(struct.pack("<4I", C, H, W, Nh))
        fh.write(np.ascontiguousarray(bundle.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.attention, dtype="<f8").tobytes())
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)


def read_features(path: str | os.PathLike) -> FeatureBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 22:
        raise FeatureCorruptionError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    C, H, W, Nh = struct.unpack_from("<4I", blob, 6)
    off = 22
    nf, na = C * H * W, Nh * H * W
    end = off + 8 * (nf + na)
    if len(blob) < end + 2:
        raise FeatureCorruptionError(f"{path}: payload shorter than header dims {C}x{H}x{W}, {Nh} heads")
    feats = np.frombuffer(blob, dtype="<f8", count=nf, offset=off).astype(np.float64).reshape(C, H, W)
    att = np.frombuffer(blob, dtype="<f8", count=na, offset=off + 8 * nf).astype(np.float64).reshape(Nh, H, W)
    (nlen,) = struct.unpack_from("<H", blob, end)
    if len(blob) != end + 2 + nlen:
        raise FeatureCorruptionError(f"{path}: trailing size mismatch")
    image_id = blob[end + 2:end + 2 + nlen].decode("utf-8")
    bundle = FeatureBundle(feats, att, image_id)
    check_attention(bundle)
    return bundle


class FeatureStore:
    """In-memory provider keyed by image id."""

    def __init__(self, bundles=()):
        self._bundles: dict[str, FeatureBundle] = {}
        for b in bundles:
            self.add(b)

    def add(self, bundle: FeatureBundle) -> None:
        if self._bundles:
            ref = next(iter(self._bundles.values())).dims
            if bundle.dims != ref:
                raise ConfigurationError(
                    f"{bundle.image_id}: dims {bundle.dims} differ from store dims {ref}")
        self._bundles[bundle.image_id] = bundle

    def __getitem__(self, image_id: str) -> FeatureBundle:
        return self._bundles[image_id]

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._bundles

    def __len__(self) -> int:
        return len(self._bundles)

    def ids(self) -> list[str]:
        return list(self._bundles)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return next(iter(self._bundles.values())).dims

    @classmethod
    def from_dir(cls, root: str | os.PathLike) -> "FeatureStore":
        paths = []
        for dirpath, _dirs, files in os.walk(root):
            paths += [os.path.join(dirpath, f) for f in files if f.endswith(".ssfb")]
        return cls(read_features(p) for p in sorted(paths))
