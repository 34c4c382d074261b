"""
Subgraph batches and the overlap-weighted loss
==============================================

Samples training batches from a synthetic overlap graph and shows how graded
overlaps turn into loss weights.
"""

import numpy as np

from supscene.features import SynthConfig, synth_scene
from supscene.loss import LossConfig, similarity_matrix, soft_supcon_loss, soft_weight_matrix
from supscene.sampler import SamplerConfig, anchor_expansion, balanced_sampling, positive_ratio

graph, _ = synth_scene(SynthConfig(images=30), seed=1)
print(f"{graph.num_nodes} images, {len(graph.edges)} overlapping pairs")

cfg = SamplerConfig(subgraph_size=8)
b = anchor_expansion(graph, graph.node_ids[0], cfg)
print("anchor batch:", b.node_ids)
m = int(b.valid_mask.sum())
print("positive ratio", round(positive_ratio(b.overlap[:m, :m], cfg.tau_iou), 3))

# balanced sampling swaps members until the positive ratio is near rho
bb = balanced_sampling(graph, SamplerConfig(subgraph_size=8, rho=0.5, seed=3))
print("balanced swaps, |ratio - rho| per step:", [round(v, 3) for v in bb.swap_trace])

# soft weights keep the overlap grading, hard weights flatten it
O = b.overlap
np.set_printoptions(precision=2, suppress=True)
print("overlap row 0   ", O[0])
print("soft weights    ", soft_weight_matrix(O)[0])
print("hard weights    ", soft_weight_matrix(O, LossConfig(variant="hard"))[0])

# loss drops when descriptors line up with overlap
rng = np.random.default_rng(0)
rand = rng.normal(size=(8, 16))
rand /= np.linalg.norm(rand, axis=1, keepdims=True)
W = soft_weight_matrix(O)
print("loss, random descriptors:", round(soft_supcon_loss(similarity_matrix(rand, b.valid_mask), W, b.valid_mask).item(), 4))
emb = O[:, :8] + 1e-3 * rng.normal(size=(8, 8))
emb /= np.linalg.norm(emb, axis=1, keepdims=True)
print("loss, overlap-shaped descriptors:",
      round(soft_supcon_loss(similarity_matrix(emb, b.valid_mask), W, b.valid_mask).item(), 4))
