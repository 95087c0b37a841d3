"""Command-line pipeline: ingest, validate, augment, train, eval, early-eval, report.

Stages communicate through files only (threads.jsonl, EMB1, CND1, CKPT),
so the embedding exporter can run between augment and train. Every run
writes a manifest recording the effective config, seed, and input digests.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import (DataError, Dataset, ingest_pheme, read_threads_jsonl,
                   validate_dataset, write_threads_jsonl)
from .evaluate import (DEFAULT_DELAYS, parse_curve_table, render_curve_plot,
                       render_curve_table, render_results_table, run_early_eval,
                       run_loocv)
from .features import FileEmbedding, HashEmbedding, text_key
from .models import GAT, GCN, TrainConfig, save_model, train
from .mos import (AugmentationStrategy, AugmentStats, CandidateTable,
                  oversample_dataset)
from .preprocess import normalize_tweet

ENV_SEED = "THREADFORGE_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Config file + seed resolution

# config key -> (argparse dest, converter)
_CONFIG_KEYS = {
    "paths.root": ("root", str),
    "paths.threads": ("threads_file", str),
    "paths.emb": ("emb", str),
    "paths.cand": ("cand", str),
    "paths.out": ("out", str),
    "strategy.variant": ("variant", str),
    "strategy.p_aug": ("p_aug", float),
    "strategy.fold_cap": ("fold_cap", int),
    "model.kind": ("model", str),
    "model.layers": ("layers", int),
    "model.hidden_dim": ("hidden_dim", int),
    "model.heads": ("heads", int),
    "model.adjacency": ("adjacency", str),
    "train.lr": ("lr", float),
    "train.weight_decay": ("weight_decay", float),
    "train.batch_size": ("batch_size", int),
    "train.epochs": ("epochs", int),
    "eval.delays": ("delays", str),
    "eval.scheme": ("scheme", str),
    "run.seed": ("seed", int),
    "run.threads": ("jobs", int),
    "run.dim": ("dim", int),
    "run.fallback_hash": ("fallback_hash", lambda s: s.lower() in ("1", "true", "yes")),
}


def _load_config(path_str: str | None) -> dict:
    if not path_str:
        return {}
    path = Path(path_str)
    if not path.is_file():
        raise UsageError(f"config file {path} not found")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            full = f"{section}.{key}"
            if full not in _CONFIG_KEYS:
                raise UsageError(f"unknown config key {full!r}")
            dest, conv = _CONFIG_KEYS[full]
            try:
                out[dest] = conv(value)
            except ValueError:
                raise UsageError(f"bad value for config key {full!r}: {value!r}")
    return out


def _apply_config(args: argparse.Namespace, config: dict) -> None:
    """Flags beat config file; config beats built-in defaults (None)."""
    for dest, value in config.items():
        if getattr(args, dest, None) is None:
            setattr(args, dest, value)


def _resolve_seed(args: argparse.Namespace) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{ENV_SEED} must be an integer, got {env!r}")
    return 0


def _default(args, name, value):
    if getattr(args, name, None) is None:
        setattr(args, name, value)
    return getattr(args, name)


# ---------------------------------------------------------------------------
# Manifest


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(args: argparse.Namespace, command: str, inputs: list,
                    effective: dict) -> None:
    digests = {}
    for p in inputs:
        if p and Path(p).is_file():
            digests[str(p)] = _sha256(Path(p))
    blob = json.dumps(effective, sort_keys=True, default=str).encode("utf-8")
    manifest = {
        "command": command,
        "config": effective,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "seed": effective.get("seed"),
        "inputs": digests,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "threadforge": __version__,
        },
    }
    out = getattr(args, "manifest", None)
    if out is None:
        primary = getattr(args, "out", None)
        out = f"{primary}.manifest.json" if primary else "threadforge.manifest.json"
    Path(out).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")


# ---------------------------------------------------------------------------
# Shared stage helpers


def _read_threads(args) -> Dataset:
    if not getattr(args, "threads_file", None):
        raise UsageError("missing --threads-file (canonical threads file)")
    path = Path(args.threads_file)
    if not path.is_file():
        raise DataError(f"threads file {path} not found")
    return read_threads_jsonl(path)


def _provider(args, dataset: Dataset, seed: int):
    dim = _default(args, "dim", 64)
    hash_provider = HashEmbedding(dim=dim, seed=0)
    emb = getattr(args, "emb", None)
    if not emb:
        return hash_provider
    if not Path(emb).is_file():
        raise DataError(f"embedding file {emb} not found")
    fallback = hash_provider if getattr(args, "fallback_hash", None) else None
    provider = FileEmbedding.load(emb, fallback=fallback)
    if fallback is None:
        missing = set()
        for thread in dataset.all_threads():
            for tweet in thread.tweets:
                key = text_key(normalize_tweet(tweet.text).tokens)
                if key not in provider.table:
                    missing.add(key)
        if missing:
            raise DataError(
                f"{len(missing)} text keys missing from {emb}; rerun the exporter "
                f"or pass --fallback-hash")
    return provider


def _candidates(args) -> CandidateTable | None:
    cand = getattr(args, "cand", None)
    if not cand:
        return None
    if not Path(cand).is_file():
        raise DataError(f"candidate file {cand} not found")
    return CandidateTable.load(cand)


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(
        lr=_default(args, "lr", 5e-3),
        weight_decay=_default(args, "weight_decay", 1e-3),
        batch_size=_default(args, "batch_size", 128),
        epochs=_default(args, "epochs", 100),
        hidden_dim=_default(args, "hidden_dim", 64),
        layers=_default(args, "layers", 2),
        heads=_default(args, "heads", 4),
        adjacency=_default(args, "adjacency", "directed"),
        seed=seed,
    )


def _strategy_fields(args):
    variant = _default(args, "variant", "nonrandom")
    p_aug = _default(args, "p_aug", 0.20)
    fold_cap = _default(args, "fold_cap", 3)
    return variant, p_aug, fold_cap


def _effective(args, seed: int, extra: dict | None = None) -> dict:
    skip = {"func", "command", "config", "manifest", "seed"}
    out = {k: v for k, v in sorted(vars(args).items())
           if k not in skip and not k.startswith("_") and v is not None}
    out["seed"] = seed
    if extra:
        out.update(extra)
    return out


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_ingest(args) -> int:
    if not getattr(args, "root", None):
        raise UsageError("missing --root (archive directory)")
    if not getattr(args, "out", None):
        raise UsageError("missing --out (threads file)")
    scheme = _default(args, "scheme", "binary")
    result = ingest_pheme(args.root, scheme)
    for skip in result.skipped:
        _log(f"skip: {skip.thread_dir}: {skip.reason}")
    if not result.dataset.events:
        raise DataError(f"no events found under {args.root}")
    write_threads_jsonl(result.dataset, args.out)
    seed = _resolve_seed(args)
    _write_manifest(args, "ingest", [args.root], _effective(args, seed))
    _log(f"ingested {len(result.dataset.events)} events, "
         f"{result.dataset.thread_count()} threads, {len(result.skipped)} skipped -> {args.out}")
    return 0


def _cmd_validate(args) -> int:
    dataset = _read_threads(args)
    report = validate_dataset(dataset)
    print(report.render_text())
    if getattr(args, "out", None):
        Path(args.out).write_text(report.render_text() + "\n", encoding="utf-8")
    seed = _resolve_seed(args)
    _write_manifest(args, "validate", [args.threads_file], _effective(args, seed))
    if not report.ok():
        raise DataError(f"validation failed: {len(report.violations)} violations, "
                        f"{len(report.duplicate_thread_ids)} duplicate ids")
    return 0


def _cmd_augment(args) -> int:
    if not getattr(args, "out", None):
        raise UsageError("missing --out (augmented threads file)")
    dataset = _read_threads(args)
    seed = _resolve_seed(args)
    variant, p_aug, fold_cap = _strategy_fields(args)
    if variant == "none":
        raise UsageError("augment needs --variant random or nonrandom")
    strategy = AugmentationStrategy(kind=variant, p_aug=p_aug, fold_cap=fold_cap, seed=seed)
    stats = AugmentStats()
    out = oversample_dataset(dataset, strategy, _candidates(args), seed, stats=stats)
    write_threads_jsonl(out, args.out)
    _write_manifest(args, "augment", [args.threads_file, getattr(args, "cand", None)],
                    _effective(args, seed))
    _log(f"augmented {stats.threads_created} threads "
         f"({stats.tweets_selected} tweets selected, {stats.tokens_substituted} tokens "
         f"substituted, {stats.tweets_unchanged} tweets unchanged) -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    if not getattr(args, "out", None):
        raise UsageError("missing --out (checkpoint file)")
    model = _default(args, "model", GCN)
    if model not in (GCN, GAT):
        raise UsageError(f"unknown model {model!r}")
    dataset = _read_threads(args)
    seed = _resolve_seed(args)
    config = _train_config(args, seed)
    provider = _provider(args, dataset, seed)
    threads = list(dataset.all_threads())
    params, history = train(model, threads, provider, config)
    in_dim = provider.dim + 4
    save_model(args.out, model, params, config, dataset.scheme, in_dim)
    _write_manifest(args, "train",
                    [args.threads_file, getattr(args, "emb", None)],
                    _effective(args, seed, {"config": asdict(config)}))
    last = history[-1] if history else None
    tail = f"loss {last.loss:.4f} acc {last.accuracy:.3f}" if last else "no epochs"
    _log(f"trained {model} on {len(threads)} threads ({tail}) -> {args.out}")
    return 0


def _run_eval_common(args, early: bool) -> int:
    if not getattr(args, "out", None):
        raise UsageError("missing --out (results file)")
    model = _default(args, "model", GCN)
    if model not in (GCN, GAT):
        raise UsageError(f"unknown model {model!r}")
    variant, p_aug, fold_cap = _strategy_fields(args)
    if variant not in ("none", "random", "nonrandom"):
        raise UsageError(f"unknown variant {variant!r}")
    dataset = _read_threads(args)
    seed = _resolve_seed(args)
    config = _train_config(args, seed)
    provider = _provider(args, dataset, seed)
    candidates = _candidates(args)
    jobs = _default(args, "jobs", os.cpu_count() or 1)
    if early:
        if getattr(args, "delays", None):
            schedule = tuple(float(x) for x in str(args.delays).split(","))
        else:
            schedule = DEFAULT_DELAYS
        points = run_early_eval(model, dataset, variant, schedule, config, provider,
                                candidates, p_aug, fold_cap, n_threads=jobs)
        Path(args.out).write_text(render_curve_table(points), encoding="utf-8")
        _log(f"early-eval wrote {len(points)} curve points -> {args.out}")
    else:
        result = run_loocv(model, dataset, variant, config, provider,
                           candidates, p_aug, fold_cap, n_threads=jobs)
        Path(args.out).write_text(render_results_table(result), encoding="utf-8")
        a = result.aggregate
        _log(f"eval {model}/{variant}: aggregate acc {a.accuracy:.4f} "
             f"micro_f1 {a.micro_f1:.4f} macro_f1 {a.macro_f1:.4f} -> {args.out}")
    _write_manifest(args, "early-eval" if early else "eval",
                    [args.threads_file, getattr(args, "emb", None), getattr(args, "cand", None)],
                    _effective(args, seed, {"config": asdict(config)}))
    return 0


def _cmd_eval(args) -> int:
    return _run_eval_common(args, early=False)


def _cmd_early_eval(args) -> int:
    return _run_eval_common(args, early=True)


def _cmd_report(args) -> int:
    curve = getattr(args, "curve", None)
    if not curve:
        raise UsageError("missing --curve (curve table from early-eval)")
    if not getattr(args, "out", None):
        raise UsageError("missing --out (image file)")
    path = Path(curve)
    if not path.is_file():
        raise DataError(f"curve file {path} not found")
    try:
        points = parse_curve_table(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}")
    render_curve_plot(points, args.out)
    seed = _resolve_seed(args)
    _write_manifest(args, "report", [curve], _effective(args, seed))
    _log(f"report plot -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="threadforge", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"threadforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p):
        p.add_argument("--config", help="INI config file; flags override it")
        p.add_argument("--seed", type=int, help=f"RNG seed (also {ENV_SEED})")
        p.add_argument("--threads", dest="jobs", type=int, metavar="N",
                       help="worker threads for evaluation (default: cores)")
        p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")

    p = sub.add_parser("ingest", help="read a raw thread archive into threads.jsonl")
    p.add_argument("--root", help="archive root directory")
    p.add_argument("--scheme", choices=["binary", "ternary"], default=None)
    p.add_argument("--out", help="output threads file")
    common(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("validate", help="audit a threads file")
    p.add_argument("--threads-file", dest="threads_file", help="canonical threads file")
    p.add_argument("--out", help="also write the report here")
    common(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("augment", help="balance events by multifold oversampling")
    p.add_argument("--threads-file", dest="threads_file", help="canonical threads file")
    p.add_argument("--out", help="augmented threads file")
    p.add_argument("--variant", choices=["random", "nonrandom"], default=None)
    p.add_argument("--cand", help="CND1 candidate table (omit for vocabulary fallback)")
    p.add_argument("--p-aug", dest="p_aug", type=float, help="tweet selection fraction")
    p.add_argument("--fold-cap", dest="fold_cap", type=int, help="max whole-set rounds")
    common(p)
    p.set_defaults(func=_cmd_augment)

    def model_flags(p, with_cand=False):
        p.add_argument("--threads-file", dest="threads_file", help="canonical threads file")
        p.add_argument("--model", choices=[GCN, GAT], default=None)
        p.add_argument("--emb", help="EMB1 embedding table (omit for hash fallback)")
        p.add_argument("--fallback-hash", dest="fallback_hash", action="store_const",
                       const=True, help="hash-embed texts missing from --emb")
        p.add_argument("--dim", type=int, help="hash embedding width (default 64)")
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--adjacency", choices=["directed", "symmetrized"], default=None)
        if with_cand:
            p.add_argument("--variant", choices=["none", "random", "nonrandom"], default=None)
            p.add_argument("--cand", help="CND1 candidate table")
            p.add_argument("--p-aug", dest="p_aug", type=float)
            p.add_argument("--fold-cap", dest="fold_cap", type=int)

    p = sub.add_parser("train", help="train one model on a threads file")
    model_flags(p)
    p.add_argument("--out", help="checkpoint file (CKPT + .json sidecar)")
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="leave-one-event-out cross-validation")
    model_flags(p, with_cand=True)
    p.add_argument("--out", help="results table (tsv)")
    common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("early-eval", help="accuracy-vs-delay curves")
    model_flags(p, with_cand=True)
    p.add_argument("--delays", help="comma-separated hours (default 17-point schedule)")
    p.add_argument("--out", help="curve table (tsv)")
    common(p)
    p.set_defaults(func=_cmd_early_eval)

    p = sub.add_parser("report", help="render an early-detection plot")
    p.add_argument("--curve", help="curve table from early-eval")
    p.add_argument("--out", help="output image (png)")
    common(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args, _load_config(getattr(args, "config", None)))
        return args.func(args)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return 1
    except (DataError, FileNotFoundError) as exc:
        _log(f"data error: {exc}")
        return 2
    except ValueError as exc:
        _log(f"usage error: {exc}")
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
