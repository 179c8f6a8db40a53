"""Aggregation of metrics JSONL files into comparison tables."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

REQUIRED = ("session", "method", "seed", "accuracy")
ROW_FIELDS = ("session", "method", "seed", "accuracy", "train_seconds", "weight_update_fraction",
              "replay_size")


def load_metrics(paths) -> list[dict]:
    rows = []
    for path in paths:
        with open(path) as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as e:
                    raise FormatError(f"{path}:{line_no}: invalid JSON ({e.msg})") from None
                missing = [k for k in REQUIRED if k not in row]
                if missing:
                    raise FormatError(f"{path}:{line_no}: missing fields {missing}")
                rows.append(row)
    if not rows:
        raise FormatError("no metrics rows found")
    return rows


@dataclass
class MethodSummary:
    method: str
    replay: str | None
    mean: float
    std: float
    n_seeds: int
    sessions: dict  # session -> mean accuracy across seeds


def summarize(rows: list[dict], first_session: int = 1) -> list[MethodSummary]:
    """Per method: mean/std across seeds of the session-averaged accuracy.

    Sessions before ``first_session`` are excluded unless a run has no others.
    Methods keep their order of first appearance.
    """
    by_method: dict = defaultdict(lambda: defaultdict(dict))
    replay = {}
    for r in rows:
        by_method[r["method"]][r["seed"]][int(r["session"])] = float(r["accuracy"])
        replay.setdefault(r["method"], r.get("replay"))
    out = []
    for method, seeds in by_method.items():
        per_seed = []
        per_session = defaultdict(list)
        for sessions in seeds.values():
            keep = {s: a for s, a in sessions.items() if s >= first_session} or sessions
            per_seed.append(np.mean(list(keep.values())))
            for s, a in keep.items():
                per_session[s].append(a)
        std = float(np.std(per_seed, ddof=1)) if len(per_seed) > 1 else 0.0
        out.append(MethodSummary(method, replay[method], float(np.mean(per_seed)), std,
                                 len(per_seed), {s: float(np.mean(v)) for s, v in sorted(per_session.items())}))
    return out


def pick_baseline(summaries: list[MethodSummary], baseline: str | None = None) -> MethodSummary:
    """Named method, else the best random-replay method, else the first method."""
    if baseline is not None:
        for s in summaries:
            if s.method == baseline:
                return s
        raise FormatError(f"baseline method {baseline!r} not in metrics")
    random_runs = [s for s in summaries if s.replay == "random"]
    if random_runs:
        return max(random_runs, key=lambda s: s.mean)
    return summaries[0]


def relative_improvement(summaries: list[MethodSummary], baseline: str | None = None) -> dict:
    """Per method and session: 100 * (acc - acc_baseline) / acc_baseline."""
    ref = pick_baseline(summaries, baseline)
    out = {}
    for s in summaries:
        out[s.method] = {k: 100.0 * (a - ref.sessions[k]) / ref.sessions[k]
                         for k, a in s.sessions.items() if k in ref.sessions}
    return out


def _tables(summaries, improvement):
    sessions = sorted({k for s in summaries for k in s.sessions})
    head = ["method", "mean_accuracy", "std_accuracy", "n_seeds"] + [f"session_{k}" for k in sessions]
    main = [head] + [[s.method, f"{s.mean:.6f}", f"{s.std:.6f}", str(s.n_seeds)]
                     + [f"{s.sessions[k]:.6f}" if k in s.sessions else "" for k in sessions]
                     for s in summaries]
    rel_head = ["method"] + [f"session_{k}" for k in sessions]
    rel = [rel_head] + [[m] + [f"{imp[k]:.4f}" if k in imp else "" for k in sessions]
                        for m, imp in improvement.items()]
    return main, rel


def _md(table) -> str:
    lines = ["| " + " | ".join(table[0]) + " |", "|" + "---|" * len(table[0])]
    lines += ["| " + " | ".join(r) + " |" for r in table[1:]]
    return "\n".join(lines)


def render(rows: list[dict], fmt: str = "md", baseline: str | None = None) -> str:
    summaries = summarize(rows)
    improvement = relative_improvement(summaries, baseline)
    ref = pick_baseline(summaries, baseline).method
    main, rel = _tables(summaries, improvement)
    if fmt == "md":
        return (_md(main) + f"\n\nRelative improvement (%) over {ref}:\n\n" + _md(rel) + "\n")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerows(main)
        buf.write(f"\n# relative improvement (%) over {ref}\n")
        w.writerows(rel)
        return buf.getvalue()
    raise FormatError(f"unknown report format {fmt!r}")


def write_summary_csv(rows: list[dict], path) -> None:
    main, _ = _tables(summarize(rows), {})
    with open(Path(path), "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(main)
