"""Command-line front end: ``python -m supscene <command> ...``.

Commands write into ``--out`` (refused when non-empty unless ``--force``) and
always leave one ``manifest.json`` there. The manifest holds the fully
resolved configuration, so ``<command> --config <out>/manifest.json --out
<new dir>`` repeats a run and reproduces its outputs byte for byte (only the
manifest timestamps differ).

Configuration precedence: built-in defaults, then ``--preset``, then the
``--config`` file, then explicit flags.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime as _dt
import json
import logging
import math
import os
import re
import sys
import types
import typing

import numpy as np

from . import __version__, tensorio
from .features import (ConfigurationError, FeatureStore, SynthConfig, synth_dataset,
                       write_features)
from .gradcheck import run_suite, summarize
from .metrics import (DEFAULT_KS, RelevanceOracle, RetrievalIndex, evaluate, export_pairs,
                      rank_all, write_report)
from .model import SupSceneModel
from .overlap_graph import load_graph, save_graph
from .trainer import (PRESETS, OptimizerState, TrainConfig, build_model, embed,
                      load_checkpoint, save_checkpoint, train)

log = logging.getLogger("supscene")

COMMANDS = ("synth", "train", "embed", "eval", "heatmap", "pairs", "kmeans-init", "gradcheck")


# --- configuration ----------------------------------------------------------


def default_config(preset: str = "desk") -> dict:
    if preset not in PRESETS:
        raise ConfigurationError(f"preset: unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    return {
        "seed": 0,
        "preset": preset,
        "synth": dict(dataclasses.asdict(SynthConfig()), scenes=20),
        "train": PRESETS[preset].to_dict(),
        "eval": {"ks": [], "tau": 0.25},
        "heatmap": {"image": None, "scale": 16},
        "pairs": {"k": 100},
        "kmeans": {"samples": 20000, "alpha": 1.0},
        "gradcheck": {"seeds": 20, "entries": 256, "h": 1e-5},
        "inputs": {"data": None, "checkpoint": None, "descriptors": None, "init": None},
    }


def merge(base: dict, override: dict, path: str = "") -> dict:
    """Recursive dict update; unknown keys are configuration errors."""
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigurationError(f"{where}: unknown key")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ConfigurationError(f"{where}: expected an object")
            out[key] = merge(out[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _check_value(value, hint, where: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        for a in args:
            if a is type(None):
                continue
            try:
                return _check_value(value, a, where)
            except ConfigurationError:
                pass
        raise ConfigurationError(f"{where}: expected {hint}, got {value!r}")
    if origin is tuple:
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigurationError(f"{where}: expected a list of {len(args)} values, got {value!r}")
        return tuple(_check_value(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def build_dataclass(cls, data: dict, path: str):
    """Instantiate ``cls`` from a dict, reporting problems with dotted key paths."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}"
        if key not in names:
            raise ConfigurationError(f"{where}: unknown key")
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{where}: expected an object")
            kwargs[key] = build_dataclass(hint, value, where)
        else:
            kwargs[key] = _check_value(value, hint, where)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        named = [n for n in names if re.search(rf"\b{re.escape(n)}\b", msg)]
        where = f"{path}.{max(named, key=len)}" if named else path
        raise ConfigurationError(f"{where}: {msg}") from None


def synth_config(cfg: dict) -> tuple[SynthConfig, int]:
    d = dict(cfg["synth"])
    scenes = d.pop("scenes")
    if isinstance(scenes, bool) or not isinstance(scenes, int) or scenes < 1:
        raise ConfigurationError(f"synth.scenes: expected a positive integer, got {scenes!r}")
    return build_dataclass(SynthConfig, d, "synth"), scenes


def train_config(cfg: dict) -> TrainConfig:
    return build_dataclass(TrainConfig, cfg["train"], "train").replace(seed=cfg["seed"])


def eval_ks(cfg: dict) -> list[int]:
    extra = cfg["eval"]["ks"]
    if not isinstance(extra, list) or any(isinstance(k, bool) or not isinstance(k, int) or k < 1
                                          for k in extra):
        raise ConfigurationError(f"eval.ks: expected a list of positive integers, got {extra!r}")
    return sorted(set(DEFAULT_KS) | set(extra))


def load_config_file(path: str) -> tuple[dict, str | None]:
    """A config JSON or a run manifest; returns (config-like dict, preset or None)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    if "manifest_version" in data:
        data = data["config"]
    return data, data.get("preset")


# --- run manifest -------------------------------------------------------------


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    artifacts: list = dataclasses.field(default_factory=list)
    tool_version: str = __version__
    started: str = dataclasses.field(default_factory=_now)
    finished: str | None = None

    def write(self, out_dir: str) -> str:
        self.finished = _now()
        path = os.path.join(out_dir, "manifest.json")
        body = {"manifest_version": 1, "tool": "supscene", **dataclasses.asdict(self)}
        body["artifacts"] = sorted(self.artifacts)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def prepare_out(out: str | None, force: bool) -> str:
    if not out:
        raise ConfigurationError("--out is required")
    if os.path.isdir(out) and os.listdir(out) and not force:
        raise ConfigurationError(f"output directory {out} is not empty (use --force to overwrite)")
    if os.path.exists(out) and not os.path.isdir(out):
        raise ConfigurationError(f"output path {out} exists and is not a directory")
    os.makedirs(out, exist_ok=True)
    return out


# --- data access --------------------------------------------------------------


def load_data(data_dir: str | None):
    if not data_dir:
        raise ConfigurationError("inputs.data: a data directory is required (--data)")
    gdir = os.path.join(data_dir, "graphs")
    if not os.path.isdir(gdir):
        raise ConfigurationError(f"inputs.data: {data_dir} has no graphs/ directory")
    graphs = [load_graph(os.path.join(gdir, f)) for f in sorted(os.listdir(gdir)) if f.endswith(".graph")]
    store = FeatureStore.from_dir(os.path.join(data_dir, "features"))
    if len(store) == 0:
        raise ConfigurationError(f"inputs.data: {data_dir} has no feature files")
    return graphs, store


def load_model(cfg: dict) -> SupSceneModel:
    path = cfg["inputs"]["checkpoint"]
    if not path:
        raise ConfigurationError("inputs.checkpoint: a checkpoint is required (--checkpoint)")
    return load_checkpoint(path)[0]


def save_descriptors(path: str, ids, desc: np.ndarray) -> None:
    tensorio.save(path, {f"desc/{i}": d for i, d in zip(ids, desc)})


def load_descriptors(path: str) -> tuple[list[str], np.ndarray]:
    state = tensorio.load(path)
    ids = [k[5:] for k in state if k.startswith("desc/")]
    if not ids:
        raise ConfigurationError(f"{path}: no descriptors inside")
    return ids, np.stack([state["desc/" + i] for i in ids])


def descriptors_for(cfg: dict, store: FeatureStore | None, ids=None):
    if cfg["inputs"]["descriptors"]:
        return load_descriptors(cfg["inputs"]["descriptors"])
    model = load_model(cfg)
    for nid in list(store.ids())[:1]:
        model.check_dims(store[nid])
    return embed(model, store, ids)


def write_pgm(path: str, image: np.ndarray, scale: int = 1) -> None:
    """Plain (P2) 8-bit grayscale from values in [0, 1], upscaled by pixel repetition."""
    if scale < 1:
        raise ConfigurationError("heatmap.scale: must be >= 1")
    pix = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(int)
    pix = np.repeat(np.repeat(pix, scale, axis=0), scale, axis=1)
    H, W = pix.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{W} {H}\n255\n")
        for row in pix:
            fh.write(" ".join(str(v) for v in row) + "\n")


def read_pgm(path: str) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        tokens = [t for line in fh for t in line.split("#")[0].split()]
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM")
    W, H, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:4 + W * H], dtype=int).reshape(H, W)


# --- commands -----------------------------------------------------------------


def cmd_synth(cfg: dict, out: str, man: RunManifest) -> None:
    sc, scenes = synth_config(cfg)
    os.makedirs(os.path.join(out, "graphs"), exist_ok=True)
    for graph, bundles in synth_dataset(sc, scenes, cfg["seed"]):
        gpath = os.path.join("graphs", f"{graph.scene_id}.graph")
        save_graph(graph, os.path.join(out, gpath))
        man.artifacts.append(gpath)
        fdir = os.path.join("features", graph.scene_id)
        os.makedirs(os.path.join(out, fdir), exist_ok=True)
        for b in bundles:
            fpath = os.path.join(fdir, f"{b.image_id}.ssfb")
            write_features(b, os.path.join(out, fpath))
            man.artifacts.append(fpath)
    print(f"wrote {scenes} scenes x {sc.images} images to {out}")


def cmd_train(cfg: dict, out: str, man: RunManifest) -> None:
    tc = train_config(cfg)
    graphs, store = load_data(cfg["inputs"]["data"])
    model = None
    if cfg["inputs"]["init"]:
        model = load_checkpoint(cfg["inputs"]["init"])[0]
        if model.mode != tc.aggregator:
            model = SupSceneModel(model.params, tc.aggregator, model.stub, model.attention_source)
    res = train(graphs, store, tc, out_dir=out, model=model)
    man.artifacts += ["checkpoint.ssck", "train_log.jsonl"]
    if not res.log:
        print("no training steps run; wrote the initial checkpoint")
        return
    last_epoch = res.log[-1]["epoch"]
    tail = [r for r in res.log if r["epoch"] == last_epoch]
    loss = float(np.mean([r["loss"] for r in tail]))
    sp = [r["spearman"] for r in tail if r["spearman"] is not None]
    sp_txt = f"{np.mean(sp):.4f}" if sp else "n/a"
    print(f"steps {len(res.log)}  final loss {loss:.4f}  spearman {sp_txt}")
    for step, ev in res.events:
        log.info("step %d: %s", step, ev)


def cmd_embed(cfg: dict, out: str, man: RunManifest) -> None:
    _graphs, store = load_data(cfg["inputs"]["data"])
    ids, desc = descriptors_for(dict(cfg, inputs=dict(cfg["inputs"], descriptors=None)), store)
    save_descriptors(os.path.join(out, "descriptors.ssck"), ids, desc)
    man.artifacts.append("descriptors.ssck")
    print(f"embedded {len(ids)} images, descriptor dim {desc.shape[1]}")


def _rankings(cfg: dict, k: int):
    graphs, store = load_data(cfg["inputs"]["data"])
    ids = [nid for g in graphs for nid in g.node_ids]
    got_ids, desc = descriptors_for(cfg, store, ids)
    missing = set(ids) - set(got_ids)
    if missing:
        raise ConfigurationError(f"inputs.descriptors: no descriptor for {sorted(missing)[0]!r}")
    index = RetrievalIndex(got_ids, desc)
    return graphs, rank_all(index, k, query_ids=ids)


def cmd_eval(cfg: dict, out: str, man: RunManifest) -> None:
    ks = eval_ks(cfg)
    graphs, rankings = _rankings(cfg, max(ks))
    report = evaluate(rankings, RelevanceOracle.from_graphs(graphs, cfg["eval"]["tau"]), ks)
    write_report(report, os.path.join(out, "metrics.json"))
    man.artifacts.append("metrics.json")
    for k in ks:
        print(f"k={k:<4d} recall {report[f'recall@{k}']:.4f}  map {report[f'map@{k}']:.4f}  "
              f"ndcg {report[f'ndcg@{k}']:.4f}")
    print(f"queries {report['queries']} (skipped {report['skipped_queries']})")


def cmd_heatmap(cfg: dict, out: str, man: RunManifest) -> None:
    from .divlad import assignment_heatmap

    model = load_model(cfg)
    _graphs, store = load_data(cfg["inputs"]["data"])
    image = cfg["heatmap"]["image"] or store.ids()[0]
    if image not in store:
        raise ConfigurationError(f"heatmap.image: no features for {image!r}")
    b = store[image]
    model.check_dims(b)
    X = b.tokens()
    A = model.attention(X, b.attention_tokens())
    heat = assignment_heatmap(model.params, X, A, b.features.shape[1:], model.mode)
    name = f"heatmap_{image}.pgm"
    write_pgm(os.path.join(out, name), heat, cfg["heatmap"]["scale"])
    man.artifacts.append(name)
    print(f"wrote {name}")


def cmd_pairs(cfg: dict, out: str, man: RunManifest) -> None:
    k = cfg["pairs"]["k"]
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise ConfigurationError(f"pairs.k: expected a positive integer, got {k!r}")
    _graphs, rankings = _rankings(cfg, k)
    count = export_pairs(rankings, k, os.path.join(out, "pairs.txt"))
    man.artifacts.append("pairs.txt")
    print(f"wrote {count} pairs")


def cmd_kmeans_init(cfg: dict, out: str, man: RunManifest) -> None:
    from scipy.cluster.vq import kmeans2

    from .divlad import DiVLADParams

    tc = train_config(cfg)
    _graphs, store = load_data(cfg["inputs"]["data"])
    C, _H, _W, Nh = store.dims
    rng = np.random.default_rng([cfg["seed"], 11])
    tokens = np.concatenate([store[i].tokens().T for i in sorted(store.ids())])
    take = min(cfg["kmeans"]["samples"], len(tokens))
    sample = tokens[np.sort(rng.choice(len(tokens), size=take, replace=False))]
    sample = sample / np.linalg.norm(sample, axis=1, keepdims=True)
    centers, _labels = kmeans2(sample, tc.num_clusters, minit="++", seed=rng)
    model = build_model(tc, C, Nh)
    model.params = DiVLADParams.init(tc.num_clusters, C, Nh, rng, gamma_g=tc.gamma_g,
                                     alpha=cfg["kmeans"]["alpha"], centers=centers)
    save_checkpoint(os.path.join(out, "checkpoint.ssck"), model, OptimizerState())
    man.artifacts.append("checkpoint.ssck")
    print(f"k-means init: {tc.num_clusters} centers from {take} tokens")


def cmd_gradcheck(cfg: dict, out: str, man: RunManifest) -> None:
    gc = cfg["gradcheck"]
    cases = run_suite(range(cfg["seed"], cfg["seed"] + gc["seeds"]), gc["h"], gc["entries"])
    summary = summarize(cases)
    report = {
        "max_relative_error": summary,
        "cases": [dataclasses.asdict(c) for c in cases],
    }
    with open(os.path.join(out, "gradcheck.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    man.artifacts.append("gradcheck.json")
    for name, err in summary.items():
        print(f"{name:24s} {err:.3e}")
    print(f"overall max relative error {max(summary.values()):.3e} over {len(cases)} cases")


HANDLERS = {
    "synth": cmd_synth, "train": cmd_train, "embed": cmd_embed, "eval": cmd_eval,
    "heatmap": cmd_heatmap, "pairs": cmd_pairs, "kmeans-init": cmd_kmeans_init,
    "gradcheck": cmd_gradcheck,
}


# --- argument parsing -------------------------------------------------------


def _grid(text: str) -> list[int]:
    m = re.fullmatch(r"(\d+)[xX,](\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError("grid must look like 8x8")
    return [int(m.group(1)), int(m.group(2))]


# flag dest -> config path
FLAG_PATHS = {
    "seed": ("seed",),
    "data": ("inputs", "data"), "checkpoint": ("inputs", "checkpoint"),
    "descriptors": ("inputs", "descriptors"), "init": ("inputs", "init"),
    "scenes": ("synth", "scenes"), "images": ("synth", "images"),
    "landmarks": ("synth", "landmarks"), "grid": ("synth", "grid"),
    "heads": ("synth", "heads"), "channels": ("synth", "channels"),
    "noise": ("synth", "noise"), "window": ("synth", "window"),
    "keep_prob": ("synth", "keep_prob"),
    "steps": ("train", "max_steps"), "epochs": ("train", "epochs"),
    "lr": ("train", "base_lr"), "aggregator": ("train", "aggregator"),
    "strategy": ("train", "strategy"), "clusters": ("train", "num_clusters"),
    "attention_source": ("train", "attention_source"),
    "max_grad_norm": ("train", "max_grad_norm"),
    "batch_size": ("train", "sampler", "subgraph_size"), "loss": ("train", "loss", "variant"),
    "tau": ("eval", "tau"),
    "image": ("heatmap", "image"), "scale": ("heatmap", "scale"),
    "samples": ("kmeans", "samples"),
    "gc_seeds": ("gradcheck", "seeds"), "entries": ("gradcheck", "entries"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="JSON config or a previous run's manifest.json")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="supscene", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic scenes")
    p.add_argument("--scenes", type=int)
    p.add_argument("--images", type=int, help="images per scene")
    p.add_argument("--landmarks", type=int)
    p.add_argument("--grid", type=_grid, help="patch grid, e.g. 8x8")
    p.add_argument("--heads", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--keep-prob", type=float, dest="keep_prob")

    p = sub.add_parser("train", parents=[common], help="train an encoder")
    p.add_argument("--data")
    p.add_argument("--init", help="start from this checkpoint (e.g. from kmeans-init)")
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--aggregator", choices=["divlad", "netvlad", "gate_off", "avg", "gem"])
    p.add_argument("--strategy", choices=["anchor", "balanced"])
    p.add_argument("--clusters", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--loss", choices=["soft", "hard"])
    p.add_argument("--attention-source", choices=["provided", "stub"], dest="attention_source")
    p.add_argument("--max-grad-norm", type=float, dest="max_grad_norm")

    for name, what in (("embed", "write global descriptors"), ("eval", "retrieval metrics"),
                       ("pairs", "export top-k image pairs")):
        p = sub.add_parser(name, parents=[common], help=what)
        p.add_argument("--data")
        p.add_argument("--checkpoint")
        if name != "embed":
            p.add_argument("--descriptors", help="descriptor file from embed")
        if name == "eval":
            p.add_argument("--k", type=int, action="append", dest="ks", help="extra cutoff (repeatable)")
            p.add_argument("--tau", type=float)
        if name == "pairs":
            p.add_argument("--k", type=int, dest="pairs_k")

    p = sub.add_parser("heatmap", parents=[common], help="per-patch contribution map as PGM")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--image")
    p.add_argument("--scale", type=int)

    p = sub.add_parser("kmeans-init", parents=[common], help="initialize centers by k-means")
    p.add_argument("--data")
    p.add_argument("--clusters", type=int)
    p.add_argument("--samples", type=int)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, dest="gc_seeds")
    p.add_argument("--entries", type=int)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    file_cfg, file_preset = ({}, None)
    if args.config:
        file_cfg, file_preset = load_config_file(args.config)
    preset = args.preset or file_preset or "desk"
    cfg = default_config(preset)
    if args.preset and file_cfg.get("train") is not None:
        # an explicit preset replaces the training section of the file
        file_cfg = {k: v for k, v in file_cfg.items() if k != "train"}
    cfg = merge(cfg, file_cfg)
    cfg["preset"] = preset
    for dest, path in FLAG_PATHS.items():
        val = getattr(args, dest, None)
        if val is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = val
    if getattr(args, "ks", None):
        cfg["eval"]["ks"] = sorted(set(cfg["eval"]["ks"]) | set(args.ks))
    if getattr(args, "pairs_k", None) is not None:
        cfg["pairs"]["k"] = args.pairs_k
    cfg["train"]["seed"] = cfg["seed"]
    cfg["train"]["sampler"]["seed"] = cfg["seed"]
    return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        # validate the sections every command depends on before touching the disk
        train_config(cfg)
        synth_config(cfg)
        eval_ks(cfg)
        out = prepare_out(args.out, args.force)
        man = RunManifest(args.command, _jsonable(cfg), cfg["seed"])
        HANDLERS[args.command](cfg, out, man)
        man.write(out)
    except ConfigurationError as exc:
        print(f"supscene {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"supscene {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
