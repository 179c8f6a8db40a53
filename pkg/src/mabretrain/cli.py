"""Command-line entry point: ``mabretrain run`` and ``mabretrain report``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import build_spec, load_config, parse_config
from .errors import ConfigError, FormatError
from .harness import run_method
from .report import load_metrics, render, write_summary_csv

OUT_ENV = "MABRETRAIN_OUT"
log = logging.getLogger("mabretrain")


def _run_job(raw_cfg: dict, base_dir: str, method_index: int, seed: int, ckpt_dir):
    cfg = parse_config(raw_cfg)
    spec = build_spec(cfg, base_dir, ckpt_dir)
    return run_method(spec, spec.methods[method_index], seed)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(e, file=sys.stderr)
        return 2
    out = Path(args.out or os.environ.get(OUT_ENV) or cfg.output.dir or "runs")
    out.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed_override] if args.seed_override is not None else list(cfg.seeds)
    base_dir = str(Path(args.config).resolve().parent)
    ckpt_dir = str(out / "checkpoints") if cfg.output.checkpoints else None
    raw = cfg.model_dump()
    jobs = [(m, s) for s in seeds for m in range(len(cfg.method_specs()))]

    results, failed = {}, 0
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {job: pool.submit(_run_job, raw, base_dir, *job, ckpt_dir) for job in jobs}
            for job, fut in futures.items():
                try:
                    results[job] = fut.result()
                except Exception as e:  # one failed experiment must not hide the others
                    log.error("experiment method=%d seed=%d failed: %s", job[0], job[1], e)
                    failed += 1
    else:
        for job in jobs:
            try:
                results[job] = _run_job(raw, base_dir, *job, ckpt_dir)
            except Exception as e:
                log.error("experiment method=%d seed=%d failed: %s", job[0], job[1], e)
                failed += 1

    rows = [row for job in jobs if job in results for row in results[job]]
    metrics = out / "metrics.jsonl"
    with open(metrics, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    if rows:
        write_summary_csv(rows, out / "summary.csv")
    print(f"wrote {len(rows)} rows to {metrics}")
    return 1 if failed else 0


def cmd_report(args) -> int:
    try:
        rows = load_metrics(args.metrics)
        sys.stdout.write(render(rows, args.format, args.baseline))
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mabretrain", description="Continual retraining experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the experiment matrix of a YAML config")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1, help="parallel (seed, method) experiments")
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV}, config, or ./runs)")
    r.add_argument("--seed-override", type=int, default=None, help="run only this seed")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="aggregate metrics JSONL files")
    s.add_argument("metrics", nargs="+")
    s.add_argument("--format", choices=("csv", "md"), default="md")
    s.add_argument("--baseline", default=None,
                   help="reference method for relative improvement (default: best random replay)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
