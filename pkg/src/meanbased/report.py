"""Experiment orchestration and result files (CSV tables, series, schedules, figures)."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import Config, Experiment
from .core import ValueDistribution, myerson, welfare
from .engine import run_trials
from .lp import solve_lp_prime, solve_mbrev

SUMMARY_HEAD = ["scenario", "T", "trials", "mode", "revenue_mean", "revenue_se", "welfare_mean",
                "buyer_utility_mean", "regret_max_mean"]
TRIALS_HEAD = ["scenario", "trial", "seed", "T", "mode", "revenue", "welfare", "buyer_utility", "regret_max"]
TAIL = ["revenue_per_round_mean"]


class OutputError(OSError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _vkey(v: float) -> str:
    return f"{v:g}"


@dataclass
class CellResult:
    experiment: Experiment
    dist: ValueDistribution
    results: list

    @property
    def revenues(self) -> np.ndarray:
        return np.array([r.revenue for r in self.results])

    def summary(self) -> dict:
        T = self.experiment.engine.T
        n = len(self.results)
        rev = self.revenues
        se = float(rev.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        row = {
            "scenario": self.experiment.scenario, "T": T, "trials": n, "mode": self.experiment.engine.mode,
            "revenue_mean": float(rev.mean()), "revenue_se": se,
            "welfare_mean": float(np.mean([r.welfare for r in self.results])),
            "buyer_utility_mean": float(np.mean([r.buyer_utility for r in self.results])),
            "regret_max_mean": float(np.mean([r.regret.max() for r in self.results])),
        }
        # h and r are reported per round, so sum_v v * h_v is welfare / T
        H = np.mean([r.h for r in self.results], axis=0) / T
        R = np.mean([r.r for r in self.results], axis=0) / T
        for v, h, r in zip(self.dist.values, H, R):
            row[f"h_v{_vkey(v)}"] = float(h)
            row[f"r_v{_vkey(v)}"] = float(r)
        row["revenue_per_round_mean"] = float(rev.mean()) / T
        return row

    def trial_rows(self) -> list[dict]:
        e = self.experiment
        rows = []
        for res in self.results:
            row = {"scenario": e.scenario, "trial": res.trial, "seed": res.seed, "T": res.T, "mode": res.mode,
                   "revenue": res.revenue, "welfare": res.welfare, "buyer_utility": res.buyer_utility,
                   "regret_max": float(res.regret.max())}
            for v, h, r in zip(self.dist.values, res.h, res.r):
                row[f"h_v{_vkey(v)}"] = float(h) / res.T
                row[f"r_v{_vkey(v)}"] = float(r) / res.T
            rows.append(row)
        return rows


def run_cell(e: Experiment, workers: Optional[int] = None, seed: Optional[int] = None) -> tuple[CellResult, object]:
    """Run every trial of one experiment; returns the cell and its schedule."""
    eng = e.engine if seed is None else replace(e.engine, seed=seed)
    dist = e.distribution.build()
    schedule = e.mechanism.build(dist, eng.T)
    bins = e.output.series_bins if (e.output.series or e.output.plots) else 0
    results = run_trials(schedule, dist, e.learner, eng.trials, seed=eng.seed, mode=eng.mode,
                         workers=workers, series_bins=bins)
    cell = CellResult(replace(e, engine=eng), dist, results)
    return cell, schedule


def _columns(rows: list[dict], head: list[str]) -> list[str]:
    extra = []
    for row in rows:
        for k in row:
            if k not in head and k not in TAIL and k not in extra:
                extra.append(k)
    tail = [k for k in TAIL if any(k in r for r in rows)]
    return head + extra + tail


def write_csv(path: Path, rows: list[dict], head: list[str], stamp: Optional[str]) -> Path:
    cols = _columns(rows, head)
    buf = io.StringIO()
    if stamp:
        buf.write(f"# generated {stamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(row[c]) if c in row else "" for c in cols])
    path.write_text(buf.getvalue())
    return path


def _series_files(cell: CellResult, schedule, out: Path, stamp: Optional[str]) -> list[Path]:
    e = cell.experiment
    series = [r.series for r in cell.results if r.series is not None]
    if not series:
        return []
    rounds = series[0]["rounds"]
    revenue = np.mean([s["revenue"] for s in series], axis=0)
    occ = np.mean([s["occupancy"] for s in series], axis=0)
    bids = series[0]["bids"]
    written = []
    if e.output.series:
        rows = [{"round": int(t), "cumulative_revenue": float(x)} for t, x in zip(rounds, revenue)]
        written.append(write_csv(out / f"{e.scenario}_revenue.csv", rows, ["round", "cumulative_revenue"], stamp))
        rows = []
        for b, t in enumerate(rounds):
            for c, v in enumerate(cell.dist.values):
                for k in np.flatnonzero(occ[b, c] > 0):
                    rows.append({"round": int(t), "value": float(v), "arm": int(k), "bid": float(bids[k]),
                                 "share": float(occ[b, c, k])})
        written.append(write_csv(out / f"{e.scenario}_occupancy.csv", rows,
                                 ["round", "value", "arm", "bid", "share"], stamp))
    if e.output.plots:
        from .plotting import plot_expected_bid, plot_revenue

        bench = {"Val": welfare(cell.dist), "Mye": myerson(cell.dist)[1]}
        written.append(plot_revenue(rounds, revenue, out / f"{e.scenario}_revenue.png", e.scenario, bench))
        written.append(plot_expected_bid(rounds, occ, bids, cell.dist.values,
                                         out / f"{e.scenario}_expected_bid.png", e.scenario))
    return written


def prepare_out(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc.strerror}") from None
    return out


def run_config(cfg: Config, out: Path, seed: Optional[int] = None, timestamp: bool = True,
               workers: Optional[int] = None, log=None) -> list[dict]:
    """Execute every experiment of ``cfg`` and write the result files into ``out``."""
    out = prepare_out(Path(out))
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds") if timestamp else None
    summary, trials = [], []
    for e in cfg.experiments:
        cell, schedule = run_cell(e, workers, seed)
        row = cell.summary()
        summary.append(row)
        trials.extend(cell.trial_rows())
        if e.output.schedule:
            (out / f"{e.scenario}_schedule.json").write_text(json.dumps(schedule.to_dict(), indent=1) + "\n")
        _series_files(cell, schedule, out, stamp)
        if log:
            log(f"{e.scenario}: revenue/T = {row['revenue_per_round_mean']:.6f} "
                f"(se {row['revenue_se'] / e.engine.T:.2g}, {row['trials']} trial(s))")
    write_csv(out / "summary.csv", summary, SUMMARY_HEAD, stamp)
    write_csv(out / "trials.csv", trials, TRIALS_HEAD, stamp)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    return summary


# -- analysis tables ----------------------------------------------------------


def analyze_rows(dist: ValueDistribution) -> dict:
    """Benchmarks of one distribution on its own scale."""
    r, mye = myerson(dist)
    sol = solve_mbrev(dist)
    return {"Val": welfare(dist), "Mye": mye, "reserve": r, "MBRev": sol.objective, "x": sol.x,
            "LP'": solve_lp_prime(dist, dist.values)}


def format_analysis(dist: ValueDistribution) -> str:
    a = analyze_rows(dist)
    lp_prime = a["LP'"]
    lines = [f"support size  {dist.m}", f"scale         {dist.scale:g}",
             f"Val           {a['Val']:.10g}",
             f"Mye           {a['Mye']:.10g}  (reserve {a['reserve']:g})",
             f"MBRev         {a['MBRev']:.10g}",
             f"LP' (support) {lp_prime:.10g}"]
    lines.append("x by value:")
    for v, x in zip(dist.values, a["x"]):
        lines.append(f"  {v:<12g} {x:.10g}")
    return "\n".join(lines)


def erc_sweep(Hs, m: int) -> list[dict]:
    from .core import equal_revenue_truncated

    rows = []
    for H in Hs:
        d = equal_revenue_truncated(float(H), m)
        _, mye = myerson(d)
        mb = solve_mbrev(d).objective
        val = welfare(d)
        rows.append({"H": float(H), "m": m, "Val": val, "Mye": mye, "MBRev": mb, "Val/MBRev": val / mb,
                     "MBRev/Mye": mb / mye, "loglogH": math.log(math.log(H)) if H > math.e else float("nan")})
    return rows


def format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    cells = [[c for c in cols]] + [[(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c])) for c in cols]
                                   for r in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(cols))]
    return "\n".join("  ".join(s.rjust(w) for s, w in zip(row, widths)) for row in cells)


def default_out(name: str) -> Path:
    base = os.environ.get("MEANBASED_OUT")
    return Path(base) if base else Path("results") / name
