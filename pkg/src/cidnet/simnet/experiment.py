"""The desk-scale publication/retrieval workload: one node per region
publishes a fresh object, every other workload node retrieves it, then
disconnects so the next round cannot resolve over already-open
connections."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from ..node import Node, PhaseTiming, compute_stretch
from .clock import Process, SimClock, NS_PER_S, unwrap

DEFAULT_OBJECT_BYTES = 500_000


@dataclass
class PublicationRecord:
    region: str
    iteration: int
    total_ns: int
    walk_ns: int
    rpc_ns: int
    stored_at: int
    success: bool


@dataclass
class RetrievalRecord:
    region: str
    iteration: int
    total_ns: int
    discover_ns: int
    dial_ns: int
    negotiate_ns: int
    fetch_ns: int
    provider_walk_ns: int
    peer_walk_ns: int
    stretch: float
    success: bool


@dataclass
class ExperimentResult:
    publications: List[PublicationRecord] = field(default_factory=list)
    retrievals: List[RetrievalRecord] = field(default_factory=list)


def percentile(values: Sequence[float], p: float) -> float:
    """Linear-interpolation percentile over a non-empty sample."""
    if not values:
        raise ValueError("empty sample")
    ordered = sorted(values)
    if len(ordered) == 1:
        return ordered[0]
    rank = (len(ordered) - 1) * p / 100.0
    low = int(rank)
    high = min(low + 1, len(ordered) - 1)
    frac = rank - low
    return ordered[low] * (1 - frac) + ordered[high] * frac


def percentile_rows(records, value_fn) -> List[Dict]:
    """Per-region p50/p90/p95 rows in seconds (the published table shape)."""
    by_region: Dict[str, List[float]] = {}
    for rec in records:
        if rec.success:
            by_region.setdefault(rec.region, []).append(
                value_fn(rec) / NS_PER_S)
    rows = []
    for region in sorted(by_region):
        vals = by_region[region]
        rows.append({"region": region,
                     "p50": percentile(vals, 50),
                     "p90": percentile(vals, 90),
                     "p95": percentile(vals, 95)})
    return rows


def experiment_process(clock: SimClock, net, workload_nodes: List[Node],
                       iterations: int,
                       object_bytes: int = DEFAULT_OBJECT_BYTES,
                       seed: int = 0, log=None):
    """Process body producing an ExperimentResult."""
    rng = random.Random(seed)
    result = ExperimentResult()
    for iteration in range(iterations):
        for publisher in workload_nodes:
            content = rng.randbytes(object_bytes)
            region = net.peers[publisher.peer_id].region
            t0 = clock.now
            report = yield Process(clock, publisher.publish(content))
            if isinstance(report, Exception):
                result.publications.append(PublicationRecord(
                    region, iteration, clock.now - t0, 0, 0, 0, False))
                if log is not None:
                    log("op", op="publish", region=region,
                        iteration=iteration, success=False,
                        total_ns=clock.now - t0)
                continue
            result.publications.append(PublicationRecord(
                region, iteration, clock.now - t0, report.walk_ns,
                report.rpc_ns, len(report.provides[0].stored_at), True))
            if log is not None:
                log("op", op="publish", region=region, iteration=iteration,
                    cid=str(report.root), success=True,
                    total_ns=clock.now - t0, walk_ns=report.walk_ns,
                    rpc_ns=report.rpc_ns)
            for retriever in workload_nodes:
                if retriever is publisher:
                    continue
                r_region = net.peers[retriever.peer_id].region
                t1 = clock.now
                outcome = yield Process(clock, retriever.retrieve(report.root))
                if isinstance(outcome, Exception):
                    result.retrievals.append(RetrievalRecord(
                        r_region, iteration, clock.now - t1,
                        0, 0, 0, 0, 0, 0, 0.0, False))
                    if log is not None:
                        log("op", op="retrieve", region=r_region,
                            iteration=iteration, cid=str(report.root),
                            success=False, total_ns=clock.now - t1)
                else:
                    _, timing = outcome
                    result.retrievals.append(RetrievalRecord(
                        r_region, iteration, timing.total, timing.discover,
                        timing.dial, timing.negotiate, timing.fetch,
                        timing.provider_walk, timing.peer_walk,
                        compute_stretch(timing), True))
                    if log is not None:
                        log("op", op="retrieve", region=r_region,
                            iteration=iteration, cid=str(report.root),
                            success=True, total_ns=timing.total,
                            walk_ns=timing.provider_walk + timing.peer_walk,
                            phases={"discover_ns": timing.discover,
                                    "dial_ns": timing.dial,
                                    "negotiate_ns": timing.negotiate,
                                    "fetch_ns": timing.fetch})
                # drop the session so the next round starts cold
                for other in net.connections_of(retriever.peer_id):
                    net.disconnect(retriever.peer_id, other)
            for other in net.connections_of(publisher.peer_id):
                net.disconnect(publisher.peer_id, other)
    return result


def experiment_publish_retrieve(clock: SimClock, net,
                                workload_nodes: List[Node], iterations: int,
                                object_bytes: int = DEFAULT_OBJECT_BYTES,
                                seed: int = 0, log=None) -> ExperimentResult:
    if len(workload_nodes) < 2:
        raise ValueError("need at least two workload nodes")
    proc = Process(clock, experiment_process(
        clock, net, workload_nodes, iterations, object_bytes, seed, log))
    clock.run()
    return unwrap(proc.value)
