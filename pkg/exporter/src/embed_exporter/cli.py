"""Command line entry point.

    embed-export export --threads <file> --emb <out> --cand <out> \
        --model <name> [--top-k K] [--batch-size B] [--first-token]

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .export import ExportError, ExportJob, run_export
from .formats import FormatError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="embed-export", description="Export tweet embeddings and substitution candidates")
    parser.add_argument("--version", action="version", version=f"embed-export {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("export", help="write EMB1 and CND1 files for a threads.jsonl")
    exp.add_argument("--threads", required=True, help="input threads.jsonl file")
    exp.add_argument("--emb", required=True, help="output EMB1 embedding table")
    exp.add_argument("--cand", required=True, help="output CND1 candidate table")
    exp.add_argument("--model", required=True, help="masked-LM name or local path")
    exp.add_argument("--top-k", type=int, default=10, help="candidates per token position")
    exp.add_argument("--batch-size", type=int, default=32, help="inference batch size")
    exp.add_argument("--first-token", action="store_true",
                     help="pool with the first token's state instead of the mask mean")
    return parser


def run(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    job = ExportJob(
        threads_file=args.threads,
        emb_out=args.emb,
        cand_out=args.cand,
        model_name=args.model,
        top_k=args.top_k,
        batch_size=args.batch_size,
        pooling="first" if args.first_token else "mean",
    )
    stats = run_export(job)
    _log(f"read {stats['texts']} texts, {stats['distinct']} distinct")
    _log(f"wrote {stats['embeddings']} embeddings (dim {stats['dim']}) to {args.emb}")
    _log(f"wrote {stats['candidate_records']} candidate records to {args.cand}")
    return 0


def entry(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        return run(argv)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return 1
    except (ExportError, FormatError, FileNotFoundError) as exc:
        _log(f"error: {exc}")
        return 2
    except ValueError as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(entry())
