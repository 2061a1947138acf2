"""Scenario configs and the deterministic runner.

A scenario file is flat ``key = value`` text ('#' starts a comment):

    seed = 7
    nodes = 120
    clients = 0
    regions = bahrain,sydney,cape-town,n-california,frankfurt,sao-paulo
    dead-fraction = 0.0
    dead-multi-addr-fraction = 0.0   # dead peers advertising 9 addresses
    ws-fraction = 0.0                # peers on the websocket transport
    jitter-sigma = 0.0
    workload = publish-retrieve      # none | publish-retrieve | crawl
    iterations = 5
    object-bytes = 500000
    churn = off
    churn-mean-session-s = 3600
    churn-mean-gap-s = 600
    republish = on
    duration-s = 0                   # extra idle time after the workload

Identical (scenario, seed) pairs produce byte-identical event logs.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

from ..kaddht import ROLE_CLIENT, ROLE_SERVER, BucketEntry
from ..multiformats import PeerId, peer_id_from_public_key
from ..node import Node, NodeConfig
from .churn import ChurnModel, apply_churn, churn_cdf_create_based
from .clock import Process, SimClock, NS_PER_S, unwrap
from .crawler import crawl_process
from .experiment import (ExperimentResult, experiment_process,
                         percentile_rows, DEFAULT_OBJECT_BYTES)
from .network import (DEFAULT_REGIONS, RegionLatencyModel, SimNetwork,
                      SimPeer, TransportProfile)


@dataclass
class Scenario:
    seed: int = 0
    nodes: int = 60
    clients: int = 0
    regions: Tuple[str, ...] = DEFAULT_REGIONS
    dead_fraction: float = 0.0
    dead_multi_addr_fraction: float = 0.0
    ws_fraction: float = 0.0
    jitter_sigma: float = 0.0
    workload: str = "publish-retrieve"
    iterations: int = 5
    object_bytes: int = DEFAULT_OBJECT_BYTES
    churn: bool = False
    churn_mean_session_s: float = 3600.0
    churn_mean_gap_s: float = 600.0
    republish: bool = True
    duration_s: float = 0.0

    def __post_init__(self):
        if self.nodes < 0 or self.clients < 0 or self.iterations < 0:
            raise ValueError("counts must be non-negative")
        for frac in (self.dead_fraction, self.dead_multi_addr_fraction,
                     self.ws_fraction):
            if not 0.0 <= frac <= 1.0:
                raise ValueError("fractions must be in [0, 1]")
        if self.workload not in ("none", "publish-retrieve", "crawl"):
            raise ValueError(f"unknown workload {self.workload!r}")

    @classmethod
    def from_file(cls, path: str) -> "Scenario":
        values: Dict[str, str] = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> "Scenario":
        kwargs = {}
        converters = {
            "seed": int, "nodes": int, "clients": int, "iterations": int,
            "object-bytes": int,
            "dead-fraction": float, "dead-multi-addr-fraction": float,
            "ws-fraction": float, "jitter-sigma": float,
            "churn-mean-session-s": float, "churn-mean-gap-s": float,
            "duration-s": float,
            "workload": str,
            "regions": lambda v: tuple(r.strip() for r in v.split(",")),
            "churn": lambda v: v.lower() in ("on", "true", "1", "yes"),
            "republish": lambda v: v.lower() in ("on", "true", "1", "yes"),
        }
        for key, raw in values.items():
            if key not in converters:
                raise ValueError(f"unknown scenario key {key!r}")
            kwargs[key.replace("-", "_")] = converters[key](raw)
        return cls(**kwargs)


def build_network(scenario: Scenario, clock: SimClock,
                  seed: Optional[int] = None):
    """Create and fully converge a static network per the scenario.
    Returns (net, servers, clients)."""
    if seed is None:
        seed = scenario.seed
    rng = random.Random(seed)
    latency = RegionLatencyModel(scenario.regions,
                                 jitter_sigma=scenario.jitter_sigma)
    net = SimNetwork(clock, seed=seed, latency=latency)
    servers: List[Node] = []
    clients: List[Node] = []
    total = scenario.nodes + scenario.clients
    for i in range(total):
        pid = peer_id_from_public_key(rng.randbytes(32))
        is_client = i >= scenario.nodes
        config = NodeConfig(
            role_policy="force-client" if is_client else "force-server")
        node = Node(pid, net, clock, config)
        region = scenario.regions[i % len(scenario.regions)]
        transport = TransportProfile.for_kind(
            "ws" if rng.random() < scenario.ws_fraction else "tcp")
        addrs = (f"/ip4/10.{i // 250}.{i % 250}.1/tcp/4001/p2p/{pid}",)
        peer = SimPeer(pid, node, region, transport=transport,
                       addresses=addrs)
        if not is_client and rng.random() < scenario.dead_fraction:
            peer.online = False
            if rng.random() < scenario.dead_multi_addr_fraction:
                peer.addr_count = 9
        net.add_peer(peer)
        (clients if is_client else servers).append(node)
    converge_tables(net, servers)
    return net, servers, clients


def converge_tables(net, servers: List[Node]) -> None:
    """Static convergence: offer every server to every routing table.

    Builds each bucket directly (first k offered win, matching the
    insert-without-probe policy) instead of calling ``insert`` n^2 times.
    """
    entries = [(node.dht.key, node.peer_id, net.peers[node.peer_id].addresses)
               for node in servers]
    for node in servers:
        self_key = node.dht.key
        k = node.dht.k
        buckets = node.dht.table.buckets
        for key, peer_id, addrs in entries:
            dist = key ^ self_key
            if dist == 0:
                continue
            bucket = buckets[dist.bit_length() - 1]
            if len(bucket) < k:
                bucket.append(BucketEntry(peer_id, key, addrs, 0))


class EventLog:
    def __init__(self, clock: SimClock):
        self.clock = clock
        self.lines: List[str] = []

    def __call__(self, event: str, **fields) -> None:
        record = {"t_ns": self.clock.now, "ev": event}
        record.update(fields)
        self.lines.append(json.dumps(record, sort_keys=True))


@dataclass
class RunResult:
    log_lines: List[str]
    metrics: Dict

    def log_text(self) -> str:
        return "\n".join(self.log_lines) + ("\n" if self.log_lines else "")


def run(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    """Run one scenario to completion; byte-identical output per seed."""
    if seed is None:
        seed = scenario.seed
    clock = SimClock()
    log = EventLog(clock)
    metrics: Dict = {"seed": seed, "scenario": asdict(scenario)}
    if scenario.nodes + scenario.clients == 0:
        metrics["empty"] = True
        return RunResult(log.lines, metrics)
    net, servers, clients = build_network(scenario, clock, seed)
    log("network-ready", servers=len(servers), clients=len(clients))

    observations = None
    window = round(scenario.duration_s * NS_PER_S)
    horizon = window if window > 0 else None
    if scenario.churn:
        model = ChurnModel(
            mean_session=round(scenario.churn_mean_session_s * NS_PER_S),
            mean_gap=round(scenario.churn_mean_gap_s * NS_PER_S),
            seed=seed + 1)
        if window <= 0:
            raise ValueError("churn requires duration-s > 0")
        observations = apply_churn(
            clock, net, [n.peer_id for n in servers], model, window)
        log("churn-window", window_ns=window, sessions=len(observations))
        for obs in observations:
            log("session", peer=str(obs.peer), start_ns=obs.start,
                end_ns=obs.end, censored=obs.censored)

    if scenario.republish and horizon is not None:
        # periodic ticks reschedule themselves, so they need a horizon
        for node in servers:
            node.schedule_republish()

    if scenario.workload == "publish-retrieve":
        workload = [servers[i] for i in range(min(len(scenario.regions),
                                                  len(servers)))]
        proc = Process(clock, experiment_process(
            clock, net, workload, scenario.iterations,
            scenario.object_bytes, seed=seed + 2, log=log))
        clock.run(until=horizon)
        if not proc.triggered:
            metrics["workload_incomplete"] = True
        else:
            result: ExperimentResult = unwrap(proc.value)
            metrics["publications"] = [vars(r) for r in result.publications]
            metrics["retrievals"] = [vars(r) for r in result.retrievals]
            metrics["publication_percentiles"] = percentile_rows(
                result.publications, lambda r: r.total_ns)
            metrics["retrieval_percentiles"] = percentile_rows(
                result.retrievals, lambda r: r.total_ns)
    elif scenario.workload == "crawl":
        rng = random.Random(seed + 3)
        pid = peer_id_from_public_key(rng.randbytes(32))
        crawler_node = Node(pid, net, clock,
                            NodeConfig(role_policy="force-client"))
        net.add_peer(SimPeer(pid, crawler_node, scenario.regions[0]))
        bootstrap = [n.peer_id for n in servers[:6]]
        proc = Process(clock, crawl_process(pid, net, clock, bootstrap))
        clock.run(until=horizon)
        result = unwrap(proc.value)
        metrics["crawl"] = {
            "found": len(result.entries),
            "dialable": len(result.dialable),
            "undialable": len(result.undialable),
            "queried": result.queried,
        }
        log("crawl-done", **metrics["crawl"])
    else:
        clock.run(until=horizon)

    if observations is not None:
        clock.run(until=window)
        cdf = churn_cdf_create_based(observations, window)
        metrics["churn_cdf"] = [[length, frac] for length, frac in cdf]

    sent = sum(p.sent_bytes for p in net.peers.values())
    recv = sum(p.recv_bytes for p in net.peers.values())
    metrics["counters"] = {
        "sent_bytes": sent,
        "recv_bytes": recv,
        "dropped_bytes": net.dropped_bytes,
    }
    log("run-done", sent_bytes=sent, recv_bytes=recv,
        dropped_bytes=net.dropped_bytes)
    return RunResult(log.lines, metrics)
