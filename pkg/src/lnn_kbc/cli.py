"""Command-line entry point: ``lnn-kbc {train,eval,rules,path-stats,train-embeddings}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path

from . import __version__
from .backends import make_backend
from .evaluation import evaluate
from .kg import load_dataset
from .kge import EdgeScorer, EmbeddingConfig, embedding_mrr, load_embeddings, save_embeddings, train_embeddings
from .models import model_from_json
from .paths import (
    path_count_matrix,
    reachability_fraction,
    write_matrix_csv,
    write_reachability_csv,
)
from .training import TrainConfig, train_all

logger = logging.getLogger("lnn_kbc")

PACKAGE_ROOT = Path(__file__).resolve().parents[2]


class UsageError(Exception):
    pass


# config keys shared by the file format and the command line; value = (type, default)
RUN_DEFAULTS = {
    "data": (str, None),
    "model": (str, "mp"),
    "embeddings": (str, None),
    "out": (str, "runs/latest"),
    "relations": (str, None),
    "threads": (int, os.cpu_count() or 1),
    "backend": (str, "auto"),
    "max_len": (int, 3),
    "eta": (float, 1.0),
    "gamma": (float, 1.0),
    "batch_size": (int, 8),
    "iterations": (int, 1000),
    "patience": (int, 10),
    "eval_every": (int, 20),
    "alpha": (float, 0.7),
    "seed": (int, 0),
    "step_scale": (str, "relative"),
}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in RUN_DEFAULTS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit command-line flags."""
    cfg = {k: default for k, (_, default) in RUN_DEFAULTS.items()}
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            cfg[k] = RUN_DEFAULTS[k][0](v)
    for k in RUN_DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def resolve_data_dir(name: str) -> Path:
    """A dataset directory, or a name looked up under $KBC_DATA and the bundled ``data/``."""
    p = Path(name)
    if p.is_dir():
        return p
    for root in (os.environ.get("KBC_DATA"), PACKAGE_ROOT / "data"):
        if root and (Path(root) / name).is_dir():
            return Path(root) / name
    raise UsageError(f"dataset {name!r} not found (checked the path, $KBC_DATA and {PACKAGE_ROOT / 'data'})")


def parse_relations(spec: str | None) -> list[int] | None:
    if spec is None or spec == "":
        return None
    try:
        return sorted({int(x) for x in str(spec).split(",") if x.strip()})
    except ValueError as exc:
        raise UsageError(f"--relations expects comma-separated ids, got {spec!r}") from exc


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=PACKAGE_ROOT,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def train_config_from(cfg: dict) -> TrainConfig:
    kind = "cm" if cfg["model"] == "cm" else "mp"
    return TrainConfig(
        step_size=cfg["eta"], margin=cfg["gamma"], batch_size=cfg["batch_size"], max_iterations=cfg["iterations"],
        max_length=cfg["max_len"], seed=cfg["seed"], alpha=cfg["alpha"], patience=cfg["patience"],
        eval_every=cfg["eval_every"], model=kind, step_scale=cfg["step_scale"],
    )


def _edge_scorer(cfg: dict):
    if cfg["model"] != "mp-kge":
        return None
    if not cfg["embeddings"]:
        raise UsageError("model mp-kge needs --embeddings")
    return EdgeScorer(load_embeddings(cfg["embeddings"]))


# -- commands -------------------------------------------------------------


def cmd_train(cfg: dict) -> Path:
    if cfg["model"] not in ("cm", "mp", "mp-kge"):
        raise UsageError(f"unknown model {cfg['model']!r}")
    if cfg["data"] is None:
        raise UsageError("--data is required")
    scorer = _edge_scorer(cfg)
    tcfg = train_config_from(cfg)
    ds = load_dataset(resolve_data_dir(cfg["data"]))
    graph = ds.train_graph()
    relations = parse_relations(cfg["relations"])
    if relations is not None and any(r >= graph.num_augmented_relations for r in relations):
        raise UsageError(f"relation ids must be < {graph.num_augmented_relations}")
    out = Path(cfg["out"])
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(exist_ok=True)
    backend = make_backend(graph, tcfg.max_length, scorer, cfg["backend"])
    known = ds.known_tails()
    started = time.perf_counter()

    def save(r, res):
        with (out / "logs" / f"relation_{r:04d}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "valid_mrr", "wall_time"])
            for row in res.log:
                w.writerow([row["iteration"], row["loss"], row["valid_mrr"], f"{row['wall_time']:.4f}"])
        if res.model is not None:
            (out / "checkpoints" / f"relation_{r:04d}.json").write_text(
                json.dumps(res.model.to_json()) + "\n", encoding="utf-8")
        else:
            logger.warning("relation %d skipped: %s", r, res.skipped)
        logger.info("relation %d done (best valid MRR %s)", r, res.best_valid_mrr)

    results = train_all(graph, tcfg, backend, ds.valid, known, relations, cfg["threads"], save)
    manifest = {
        "version": version_string(),
        "config": cfg,
        "train_config": tcfg.to_dict(),
        "dataset": {"name": ds.name, "entities": len(ds.entities), "relations": len(ds.relations),
                    "train": len(ds.train), "valid": len(ds.valid), "test": len(ds.test)},
        "relations_trained": sorted(r for r, res in results.items() if res.model is not None),
        "relations_skipped": {str(r): res.skipped for r, res in results.items() if res.model is None},
        "wall_time": time.perf_counter() - started,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"trained {len(manifest['relations_trained'])} relations -> {out}")
    return out


def load_checkpoints(run_dir: Path, relations: list[int] | None = None) -> tuple[dict, dict]:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"{run_dir} has no manifest.json; is it a train output directory?")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    models = {}
    for f in sorted((run_dir / "checkpoints").glob("relation_*.json")):
        model = model_from_json(json.loads(f.read_text(encoding="utf-8")))
        if relations is None or model.relation in relations:
            models[model.relation] = model
    return manifest, models


def cmd_eval(cfg: dict, run_dir: Path, direct_only: bool, split: str = "test") -> Path:
    manifest, models = load_checkpoints(run_dir)
    run_cfg = dict(manifest["config"])
    for k in ("data", "embeddings", "backend", "threads"):
        if cfg.get(k) is not None and cfg[k] != RUN_DEFAULTS[k][1]:
            run_cfg[k] = cfg[k]
    ds = load_dataset(resolve_data_dir(run_cfg["data"]))
    graph = ds.train_graph()
    max_len = manifest["train_config"]["max_length"]
    for m in models.values():
        if m.codec.num_relations != graph.num_augmented_relations or m.codec.max_length != max_len:
            raise ValueError(f"checkpoint for relation {m.relation} does not match the dataset/run config")
    backend = make_backend(graph, max_len, _edge_scorer(run_cfg), run_cfg["backend"])
    mode = "direct-only" if direct_only else "with-inverses"
    triples = ds.split(split)
    if len(triples) == 0:
        raise ValueError(f"{split} split is empty")
    report = evaluate(models, backend, triples, ds.known_tails(), graph.num_relations, mode)
    labels = list(ds.relations.labels) + [f"{l}^-1" for l in ds.relations.labels]
    suffix = "_direct" if direct_only else ""
    report.write(run_dir / f"report_{split}{suffix}.json", run_dir / f"report_{split}{suffix}_per_relation.csv", labels)
    print(json.dumps(report.to_json()))
    return run_dir


def cmd_rules(run_dir: Path, top_k: int, relations: list[int] | None) -> Path:
    manifest, models = load_checkpoints(run_dir, relations)
    ds = load_dataset(resolve_data_dir(manifest["config"]["data"]))
    labels = list(ds.relations.labels)
    R = len(labels)
    out = run_dir / "rules"
    out.mkdir(exist_ok=True)
    for r, model in sorted(models.items()):
        rules = model.extract_rules(top_k)
        (out / f"relation_{r:04d}.txt").write_text(
            "".join(rule.render(labels, R) + "\n" for rule in rules), encoding="utf-8")
        (out / f"relation_{r:04d}.json").write_text(
            json.dumps([rule.to_json(labels) for rule in rules], indent=1) + "\n", encoding="utf-8")
    print(f"wrote rules for {len(models)} relations -> {out}")
    return out


def cmd_path_stats(cfg: dict, length: int, depths: list[int], split: str) -> Path:
    if cfg["data"] is None:
        raise UsageError("--data is required")
    ds = load_dataset(resolve_data_dir(cfg["data"]))
    graph = ds.train_graph()
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    labels = list(ds.relations.labels) + [f"{l}^-1" for l in ds.relations.labels]
    M = path_count_matrix(graph, length)
    write_matrix_csv(out / f"path_counts_len{length}.csv", M, labels)
    if cfg["embeddings"]:
        scorer = EdgeScorer(load_embeddings(cfg["embeddings"]))
        W = path_count_matrix(graph, length, scorer)
        write_matrix_csv(out / f"path_scores_len{length}.csv", W, labels)
    queries = ds.split(split)
    if not depths or min(depths) < 1:
        raise UsageError("--depths expects positive integers")
    # cumulative fractions for depths 1..max
    fractions = reachability_fraction(graph, queries, max(depths))
    write_reachability_csv(out / f"reachability_{split}.csv", fractions)
    for d in depths:
        print(f"depth {d}: {fractions[d - 1]:.4f} of {split} queries reachable")
    return out


def cmd_train_embeddings(cfg: dict, ecfg: EmbeddingConfig, path: Path) -> Path:
    if cfg["data"] is None:
        raise UsageError("--data is required")
    ds = load_dataset(resolve_data_dir(cfg["data"]))
    graph = ds.train_graph()
    table = train_embeddings(graph, ecfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_embeddings(table, path)
    mrr = embedding_mrr(table, ds.valid, ds.known_tails(), graph.num_relations)
    print(f"saved {table.family} embeddings (d={table.dim}) -> {path}; validation MRR {mrr:.4f}")
    return path


# -- argument parsing -----------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    # defaults are None so that only explicit flags override the config file
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    p.add_argument("--data", help="dataset directory or name (e.g. kinship)")
    p.add_argument("--model", choices=["cm", "mp", "mp-kge"])
    p.add_argument("--embeddings", help="embedding file for mp-kge")
    p.add_argument("--out", help="output directory")
    p.add_argument("--relations", help="comma-separated relation ids (inverses are id + R)")
    p.add_argument("--threads", type=int)
    p.add_argument("--backend", choices=["auto", "dense", "frontier"])
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--eta", type=float, help="Adagrad step size")
    p.add_argument("--gamma", type=float, help="ranking margin")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--iterations", type=int, help="maximum iterations per relation")
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--step-scale", dest="step_scale", choices=["relative", "absolute"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lnn-kbc", description="Rule learning for knowledge base completion.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per relation")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="evaluate a trained run")
    _add_run_flags(p)
    p.add_argument("--run", required=True, type=Path, help="directory written by train")
    p.add_argument("--direct-only", action="store_true", help="skip inverse queries")
    p.add_argument("--split", default="test", choices=["valid", "test"])

    p = sub.add_parser("rules", help="export the top rules of a trained run")
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--relations")

    p = sub.add_parser("path-stats", help="path count matrices and reachability")
    _add_run_flags(p)
    p.add_argument("--length", type=int, default=2, help="relation path length of the matrix")
    p.add_argument("--depths", default="1,2,3", help="comma-separated reachability depths")
    p.add_argument("--split", default="valid", choices=["train", "valid", "test"])

    p = sub.add_parser("train-embeddings", help="fit a desk-scale embedding table")
    _add_run_flags(p)
    p.add_argument("--family", choices=["similarity", "distance"], default="similarity")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--epochs", type=int, default=EmbeddingConfig.epochs)
    p.add_argument("--lr", type=float, default=EmbeddingConfig.step_size)
    p.add_argument("--negatives", type=int, default=EmbeddingConfig.negatives)
    p.add_argument("--reg", type=float, default=EmbeddingConfig.regularization)
    p.add_argument("--margin", type=float, default=EmbeddingConfig.margin)
    p.add_argument("--output", type=Path, required=True, help="embedding file to write")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rules":
            cmd_rules(args.run, args.top_k, parse_relations(args.relations))
            return 0
        cfg = resolve_config(args)
        if args.print_config:
            for k in RUN_DEFAULTS:
                print(f"{k} = {'' if cfg[k] is None else cfg[k]}")
            return 0
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.run, args.direct_only, args.split)
        elif args.command == "path-stats":
            try:
                depths = [int(d) for d in args.depths.split(",") if d.strip()]
            except ValueError as exc:
                raise UsageError(f"--depths expects comma-separated integers, got {args.depths!r}") from exc
            cmd_path_stats(cfg, args.length, depths, args.split)
        elif args.command == "train-embeddings":
            ecfg = EmbeddingConfig(family=args.family, dim=args.dim, epochs=args.epochs, step_size=args.lr,
                                   negatives=args.negatives, regularization=args.reg, margin=args.margin,
                                   seed=cfg["seed"])
            cmd_train_embeddings(cfg, ecfg, args.output)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
