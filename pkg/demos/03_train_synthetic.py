"""
Training on synthetic scenes
============================

Trains the desk preset on 20 synthetic scenes and scores retrieval on 5
held-out scenes. Pass a step budget as the first argument for a quicker run
(the full preset takes about half a minute per model).
"""

import sys

from supscene.benchmark import make_benchmark, run, untrained_recall5
from supscene.trainer import PRESETS

steps = int(sys.argv[1]) if len(sys.argv) > 1 else None
bench = make_benchmark(seed=0)
print(len(bench.train_graphs), "training scenes,", len(bench.held_graphs), "held-out scenes")

cfg = PRESETS["desk"]
if steps is not None:
    cfg = cfg.replace(max_steps=steps)

print("untrained Recall@5:", round(untrained_recall5(bench, cfg), 3))

for agg in ("divlad", "netvlad"):
    r = run(bench, cfg.replace(aggregator=agg))
    print(f"{agg:8s} steps {r.steps}  loss {r.initial_loss:.3f} -> {r.final_loss:.3f}  "
          f"spearman {r.logged_spearman:.3f}  held-out Recall@5 {r.recall5:.3f}  ({r.seconds:.0f}s)")

# the log keeps per-step records; mean loss for a handful of epochs
epochs = r.log[-1]["epoch"] + 1
for e in range(0, epochs, max(1, epochs // 5)):
    chunk = [x["loss"] for x in r.log if x["epoch"] == e]
    print(f"  epoch {e:3d}  mean loss {sum(chunk) / len(chunk):.4f}")
