"""Command-line entry point: ``privae {train,eval,audit,generate}``.

Exit codes: 0 on success, 2 on a configuration or input error, 3 when
training hits a numeric failure. ``PRIVAE_LOG_LEVEL`` sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .audit import audit_suite, render_jsonl, render_table
from .config import ConfigError, parse_config
from .data import DatasetFormatError
from .runner import NumericFailure, evaluate, generate_to_file, load_checkpoint, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privae", description="Differentially private VAE training.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write checkpoint.bin and metrics.jsonl")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--seed", type=int, default=None, help="override [training] seed")
    t.add_argument("--out", type=Path, default=Path("run"), help="output directory (default: ./run)")

    e = sub.add_parser("eval", help="print a metrics report for a checkpoint as one JSON line")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--config", required=True, type=Path)
    e.add_argument("--seed", type=int, default=None)

    a = sub.add_parser("audit", help="empirical sensitivity audit; JSONL on stdout, table on stderr")
    a.add_argument("--config", required=True, type=Path)
    a.add_argument("--trials", type=int, default=200)
    a.add_argument("--jsonl", type=Path, default=None, help="also write the JSONL report here")

    g = sub.add_parser("generate", help="decode prior samples into a dataset file")
    g.add_argument("--checkpoint", required=True, type=Path)
    g.add_argument("--config", type=Path, default=None,
                   help="config describing the architecture (default: config.ini next to the checkpoint)")
    g.add_argument("-n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True, type=Path)
    return p


def _load(path: Path, seed: int | None = None):
    cfg = parse_config(path)
    return cfg if seed is None else cfg.replace(seed=seed)


def _run(args) -> int:
    if args.command == "train":
        cfg = _load(args.config, args.seed)
        _, records = train(cfg, args.out)
        (args.out / "config.ini").write_text(args.config.read_text(encoding="utf-8"), encoding="utf-8")
        print(json.dumps(records[-1], sort_keys=True))
    elif args.command == "eval":
        cfg = _load(args.config)
        params, _ = load_checkpoint(args.checkpoint)
        print(json.dumps(evaluate(cfg, params, seed=args.seed), sort_keys=True))
    elif args.command == "audit":
        reports = audit_suite(_load(args.config), trials=args.trials)
        text = render_jsonl(reports)
        sys.stdout.write(text)
        if args.jsonl is not None:
            args.jsonl.write_text(text, encoding="utf-8")
        print(render_table(reports), file=sys.stderr)
        return EXIT_OK if all(r.passed for r in reports) else 1
    elif args.command == "generate":
        if args.n < 0:
            raise ConfigError(f"-n must be non-negative, got {args.n}")
        cfg_path = args.config or args.checkpoint.parent / "config.ini"
        generate_to_file(_load(cfg_path), args.checkpoint, args.n, args.seed, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    level = os.environ.get("PRIVAE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, DatasetFormatError, FileNotFoundError, ValueError) as exc:
        print(f"privae: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, FloatingPointError) as exc:
        print(f"privae: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
