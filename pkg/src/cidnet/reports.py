"""Offline analysis of run logs: delimited tables plus matplotlib
figures rendered next to them.

Inputs are line-delimited JSON event logs (simulator runs) or gateway
access logs. Every report kind emits a CSV and, when an output path is
given, a PNG of the same data.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Dict, List, Optional, Sequence, Tuple

from .node import PhaseTiming, compute_stretch
from .simnet.churn import SessionObservation, churn_cdf_create_based
from .simnet.clock import NS_PER_S

REPORT_KINDS = ("publication-cdf", "retrieval-cdf", "stretch", "churn-cdf",
                "crawl-summary", "gateway-stats")


def load_jsonl(path: str) -> List[Dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def empirical_cdf(values: Sequence[float]) -> List[Tuple[float, float]]:
    ordered = sorted(values)
    n = len(ordered)
    out: List[Tuple[float, float]] = []
    for i, v in enumerate(ordered, start=1):
        if out and out[-1][0] == v:
            out[-1] = (v, i / n)
        else:
            out.append((v, i / n))
    return out


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _op_durations(records: List[Dict], op: str) -> List[float]:
    return [r["total_ns"] / NS_PER_S for r in records
            if r.get("ev") == "op" and r.get("op") == op and r.get("success")]


def _phase_timings(records: List[Dict]) -> List[PhaseTiming]:
    timings = []
    for r in records:
        if r.get("ev") == "op" and r.get("op") == "retrieve" \
                and r.get("success") and "phases" in r:
            p = r["phases"]
            timings.append(PhaseTiming(p["discover_ns"], p["dial_ns"],
                                       p["negotiate_ns"], p["fetch_ns"]))
    return timings


def _plot_cdf(series: Dict[str, List[Tuple[float, float]]], xlabel: str,
              out_path: str, logx: bool = False) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, cdf in series.items():
        xs = [x for x, _ in cdf]
        ys = [y for _, y in cdf]
        ax.step(xs, ys, where="post", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.02)
    if logx:
        ax.set_xscale("log")
    ax.grid(True, alpha=0.3)
    if len(series) > 1 or any(series):
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def report(kind: str, records: List[Dict],
           figure_path: Optional[str] = None) -> str:
    """Build a report of the given kind; returns the CSV text and writes
    the figure when a path is given."""
    if kind == "publication-cdf":
        cdf = empirical_cdf(_op_durations(records, "publish"))
        if figure_path:
            _plot_cdf({"publication": cdf}, "duration (s)", figure_path)
        return _csv_text(("duration_s", "cdf"), cdf)
    if kind == "retrieval-cdf":
        cdf = empirical_cdf(_op_durations(records, "retrieve"))
        if figure_path:
            _plot_cdf({"retrieval": cdf}, "duration (s)", figure_path)
        return _csv_text(("duration_s", "cdf"), cdf)
    if kind == "stretch":
        timings = _phase_timings(records)
        if not timings:
            raise ValueError("no successful retrievals with phase data")
        full = empirical_cdf([compute_stretch(t) for t in timings])
        trimmed = empirical_cdf(
            [compute_stretch(t, exclude_bitswap_timeout=True)
             for t in timings])
        if figure_path:
            _plot_cdf({"stretch": full,
                       "stretch (no exchange timeout)": trimmed},
                      "retrieval stretch", figure_path)
        rows = [("full", x, y) for x, y in full] \
            + [("no-bitswap-timeout", x, y) for x, y in trimmed]
        return _csv_text(("variant", "stretch", "cdf"), rows)
    if kind == "churn-cdf":
        window = None
        sessions = []
        for r in records:
            if r.get("ev") == "churn-window":
                window = r["window_ns"]
            elif r.get("ev") == "session":
                sessions.append(SessionObservation(
                    r.get("peer"), r["start_ns"], r["end_ns"],
                    r.get("censored", False)))
        if window is None or not sessions:
            raise ValueError("log carries no churn observations")
        cdf = churn_cdf_create_based(sessions, window)
        scaled = [(length / NS_PER_S, frac) for length, frac in cdf]
        if figure_path:
            _plot_cdf({"session length": scaled}, "session length (s)",
                      figure_path, logx=True)
        return _csv_text(("session_s", "cdf"), scaled)
    if kind == "crawl-summary":
        rows = [(r["found"], r["dialable"], r["undialable"], r["queried"])
                for r in records if r.get("ev") == "crawl-done"]
        if not rows:
            raise ValueError("log carries no crawl results")
        return _csv_text(("found", "dialable", "undialable", "queried"), rows)
    if kind == "gateway-stats":
        hits = [r for r in records if "tier" in r]
        if not hits:
            raise ValueError("not a gateway access log")
        total = len(hits)
        total_bytes = sum(r["size"] for r in hits) or 1
        rows = []
        for tier in ("front", "node", "network"):
            tier_hits = [r for r in hits
                         if r["tier"] == tier and r["status"] == 200]
            rows.append((tier, len(tier_hits), len(tier_hits) / total,
                         sum(r["size"] for r in tier_hits) / total_bytes))
        return _csv_text(("tier", "requests", "request_share", "byte_share"),
                         rows)
    raise ValueError(f"unknown report kind {kind!r}; "
                     f"expected one of {', '.join(REPORT_KINDS)}")


def percentile_csv(rows: List[Dict]) -> str:
    return _csv_text(("region", "p50", "p90", "p95"),
                     [(r["region"], r["p50"], r["p90"], r["p95"])
                      for r in rows])
