"""mine -> train -> embed -> rank -> evaluate, with files on disk.

Outputs written to ``config.output_dir``:

``metrics.csv``      method, metric, K, value
``loss.csv``         step, mean_loss
``model.ckpt``       see :func:`pose_embed.model.save_checkpoint`
``manifest.json``    config, derived seeds, versions, triplet count, output hashes
``triplets.txt``     optional, ``anchor,positive,negative`` per line
``ranklists.jsonl``  optional
``renders/*.pgm``    optional
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .data import generate_synthetic, read_annotations, split_dataset
from .mining import TripletStream, write_triplets
from .model import save_checkpoint
from .pose import PoseDataset
from .render import render_fitted, write_pgm
from .retrieval import (
    all_metrics,
    check_curve,
    embed_all,
    embedding_distances,
    fuse_distances,
    noisy_joint_distances,
    oracle_ranklists,
    random_ranklists,
    rank_from_distances,
    write_metrics_csv,
    write_ranklists,
)
from .train import train, write_loss_csv

log = logging.getLogger(__name__)

MANIFEST_KEYS = ("package", "version", "status", "config", "seeds", "environment", "triplet_count", "outputs")


def load_dataset(config: RunConfig) -> PoseDataset:
    """The configured annotation file, or synthetic poses when none is set."""
    if config.annotations:
        ds, report = read_annotations(config.annotations, config.root_index)
        log.info("annotations: %d accepted, %d rejected", report.accepted, report.rejected)
        return ds
    return generate_synthetic(config.n_synthetic, config.seeds["synthetic"], config.synthetic_spec())


def prepare_splits(config: RunConfig) -> PoseDataset:
    return split_dataset(load_dataset(config), config.n_train, config.n_db, config.n_query,
                         config.seeds["split"])


def evaluate_methods(config: RunConfig, model, dataset: PoseDataset) -> tuple[list, dict]:
    """Metric curves for every method, plus the rank lists that produced them."""
    canvas = config.canvas()
    queries = dataset.split("query")
    database = dataset.split("database")
    k = max(config.ks)
    q_table = embed_all(model, queries, canvas)
    d_table = embed_all(model, database, canvas)
    learned_d = embedding_distances(q_table, d_table)

    ranked = {
        "learned": rank_from_distances(learned_d, queries.ids, database.ids, k),
        "oracle": oracle_ranklists(queries, database, k),
        "random": random_ranklists(queries, database, k, config.seeds["random_baseline"]),
    }
    if config.fusion:
        joint_d = noisy_joint_distances(queries, database, config.fusion_noise_sigma,
                                        config.seeds["joint_noise"])
        ranked["noisy_joints"] = rank_from_distances(joint_d, queries.ids, database.ids, k)
        ranked["fused"] = rank_from_distances(fuse_distances(learned_d, joint_d), queries.ids,
                                              database.ids, k)

    results = []
    for method, lists in ranked.items():
        for curve in all_metrics(lists, queries, database, config.ks, config.hit_threshold,
                                 config.relative_slack):
            check_curve(curve)
            results.append((method, curve))
    oracle_rel = [c for m, c in results if m == "oracle" and c.kind == "hit_rel"][0]
    if not np.all(oracle_rel.values == 1.0):
        raise AssertionError("oracle relative hit rate is not identically 1")
    return results, ranked


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _environment() -> dict:
    import numba

    return {"python": platform.python_version(), "numpy": np.__version__, "numba": numba.__version__}


@dataclass
class RunReport:
    output_dir: Path
    metrics: list = field(default_factory=list)
    losses: np.ndarray | None = None
    triplet_count: int = 0
    model: object = None

    def value(self, method: str, kind: str, k: int) -> float:
        for m, curve in self.metrics:
            if m == method and curve.kind == kind:
                return curve.at(k)
        raise KeyError((method, kind, k))


def run_pipeline(config: RunConfig) -> RunReport:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(out)
    outputs: list[str] = []
    manifest = {
        "package": "pose_embed",
        "version": __version__,
        "status": "partial",
        "config": config.to_dict(),
        "seeds": config.seeds,
        "environment": _environment(),
        "triplet_count": None,
        "outputs": {},
    }
    try:
        dataset = prepare_splits(config)
        stream = TripletStream(dataset, config.triplet_spec())
        report.triplet_count = stream.count()
        manifest["triplet_count"] = report.triplet_count
        log.info("mined %d triplets", report.triplet_count)
        if config.write_triplets:
            write_triplets(stream, out / "triplets.txt")
            outputs.append("triplets.txt")

        model, losses = train(stream, config.train_config(), config.canvas(), config.augmentation())
        report.model, report.losses = model, losses
        save_checkpoint(model, out / "model.ckpt")
        write_loss_csv(losses, out / "loss.csv")
        outputs += ["model.ckpt", "loss.csv"]

        results, ranked = evaluate_methods(config, model, dataset)
        report.metrics = results
        write_metrics_csv(results, out / "metrics.csv")
        outputs.append("metrics.csv")
        if config.write_ranklists:
            path = out / "ranklists.jsonl"
            path.unlink(missing_ok=True)
            for method, lists in ranked.items():
                write_ranklists(lists, path, method)
            outputs.append("ranklists.jsonl")
        if config.n_renders:
            (out / "renders").mkdir(exist_ok=True)
            queries = dataset.split("query")
            for i in range(min(config.n_renders, len(queries))):
                name = f"renders/{queries.ids[i]}.pgm"
                write_pgm(render_fitted(queries.joints[i], config.canvas()), out / name)
                outputs.append(name)
        manifest["status"] = "complete"
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest["outputs"] = {name: _sha256(out / name) for name in outputs}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return report


def validate_manifest(path) -> dict:
    """Check a manifest's keys, completion status, and output hashes; returns it."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    missing = [k for k in MANIFEST_KEYS if k not in manifest]
    if missing:
        raise ValueError(f"manifest lacks {missing}")
    if manifest["status"] != "complete":
        raise ValueError(f"run status is {manifest['status']!r}")
    RunConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in manifest["config"].items()})
    for name, digest in manifest["outputs"].items():
        target = path.parent / name
        if not target.exists():
            raise ValueError(f"output {name} is missing")
        if _sha256(target) != digest:
            raise ValueError(f"output {name} does not match its recorded hash")
    for required in ("metrics.csv", "loss.csv", "model.ckpt"):
        if required not in manifest["outputs"]:
            raise ValueError(f"manifest does not list {required}")
    return manifest
