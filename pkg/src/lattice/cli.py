"""``lattice`` command line: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline as pl
from .config import ConfigError, load_config
from .synth import ScriptError
from .timeseries import IngestionError

log = logging.getLogger("lattice")

EXIT_CODES = {
    "invalid-flags": 2,
    "config-error": 3,
    "missing-artifact": 4,
    "data-error": 5,
    "schema-mismatch": 6,
    "training-error": 7,
}


def _common(p: argparse.ArgumentParser, seed=False):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--out-dir", default=".", help="directory for artifacts (default: .)")
    if seed:
        p.add_argument("--seed", type=int, help="RNG seed (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lattice", description="Curriculum-trained attack detection for CPS time series.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="simulate the plant and write train/test episodes")
    _common(p, seed=True)
    p.add_argument("--ticks", type=int)
    p.add_argument("--tanks", type=int)

    p = sub.add_parser("learn-dtm", help="learn the timed automaton from normal data")
    _common(p)
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("score", help="score samples and build the curriculum")
    _common(p)
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--automaton", required=True)
    p.add_argument("--variant")
    p.add_argument("--buckets", type=int)
    p.add_argument("--lambda", dest="lam", type=float)

    p = sub.add_parser("train", help="train the detector along the curriculum")
    _common(p, seed=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--curriculum", required=True)
    p.add_argument("--automaton", help="needed only when the data is unlabeled")
    p.add_argument("--window-size", type=int)
    p.add_argument("--variant", help="rescore with this ablation variant before training (needs --automaton)")

    p = sub.add_parser("detect", help="label an episode with a trained model")
    _common(p)
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--tau", type=float)

    p = sub.add_parser("eval", help="score predictions against labels")
    _common(p)
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--train-run", help="run.json of the training stage, for tt/utt")
    p.add_argument("--scores", help="scores.csv, to add Spearman correlations")
    p.add_argument("--train-data", help="labeled training CSV matching --scores")

    p = sub.add_parser("compare", help="Mann-Whitney U and A12 between two arrays of reports")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--metric", action="append", help="metric to compare (repeatable; default: all shared numeric)")
    return ap


def _config(args) -> dict:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "ticks", None) is not None:
        cfg["synth"]["ticks"] = args.ticks
    if getattr(args, "tanks", None) is not None:
        cfg["synth"]["tanks"] = args.tanks
    if getattr(args, "variant", None) is not None:
        cfg["score"]["variant"] = args.variant
    if getattr(args, "buckets", None) is not None:
        cfg["curriculum"]["buckets"] = args.buckets
    if getattr(args, "lam", None) is not None:
        cfg["score"]["lambda"] = args.lam
    if getattr(args, "window_size", None) is not None:
        cfg["train"]["window_size"] = args.window_size
    if getattr(args, "tau", None) is not None:
        cfg["detect"]["tau"] = args.tau
    return cfg


def _load_runs(path) -> list[dict]:
    doc = json.loads(pl.require(path, "report array").read_text())
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list) or not all(isinstance(r, dict) for r in doc):
        raise pl.PipelineError("data-error", f"{path}: expected a JSON array of report objects")
    return doc


def run(args) -> int:
    if args.command == "compare":
        rows = pl.compare_runs(_load_runs(args.a), _load_runs(args.b), args.metric)
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["metric", "U", "p", "A12"])
        for r in rows:
            w.writerow([r["metric"], repr(r["U"]), repr(r["p"]), repr(r["A12"])])
        return 0

    cfg = _config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "synth":
        paths = pl.run_synth(out, int(cfg["seed"]), cfg)
        for p in paths.values():
            print(p)
    elif args.command == "learn-dtm":
        print(pl.run_learn_dtm(out, args.schema, args.data))
    elif args.command == "score":
        for p in pl.run_score(out, args.schema, args.data, args.automaton, cfg):
            print(p)
    elif args.command == "train":
        if args.variant is not None:
            cfg["train"]["variant"] = args.variant
        model, trace, tt = pl.run_train(out, args.schema, args.data, args.curriculum, args.automaton, int(cfg["seed"]), cfg)
        print(model)
        print(trace)
        log.info("training took %.2fs", tt)
    elif args.command == "detect":
        print(pl.run_detect(out, args.schema, args.data, args.model, cfg["detect"]["tau"] if args.tau is None else args.tau))
    elif args.command == "eval":
        report = pl.run_eval(out, args.schema, args.data, args.predictions, cfg, args.train_run, args.scores, args.train_data)
        print(json.dumps({k: report[k] for k in ("precision", "recall", "f1")}, sort_keys=True))
    return 0


def main(argv=None) -> int:
    level = os.environ.get("LATTICE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except pl.PipelineError as exc:
        category, msg = exc.category, str(exc)
    except ConfigError as exc:
        category, msg = "config-error", str(exc)
    except (IngestionError, ScriptError) as exc:
        category, msg = "data-error", str(exc)
    except ValueError as exc:
        category, msg = "invalid-flags", str(exc)
    print(f"lattice {args.command}: {category}: {msg}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
