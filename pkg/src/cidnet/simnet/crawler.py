"""Network crawler: breadth-first enumeration of routing tables starting
from bootstrap peers, plus the adaptive revisit schedule.

The simulator exposes a direct bucket-dump RPC; the live protocol
approximates the same enumeration with targeted closest-peer queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set, Tuple

from ..multiformats import PeerId
from .. import wire
from .clock import Process, SimClock, NS_PER_S, unwrap

REVISIT_MIN = 30 * NS_PER_S
REVISIT_MAX = 900 * NS_PER_S


def revisit_schedule(observed_uptime: int,
                     minimum: int = REVISIT_MIN,
                     maximum: int = REVISIT_MAX) -> int:
    """Next probe interval: half the observed uptime, clamped."""
    if observed_uptime < 0:
        raise ValueError("uptime cannot be negative")
    return min(max(observed_uptime // 2, minimum), maximum)


@dataclass
class CrawlEntry:
    peer_id: PeerId
    addrs: Tuple[str, ...]
    dialable: bool


@dataclass
class CrawlResult:
    entries: Dict[PeerId, CrawlEntry] = field(default_factory=dict)
    queried: int = 0

    @property
    def dialable(self) -> List[PeerId]:
        return [p for p, e in self.entries.items() if e.dialable]

    @property
    def undialable(self) -> List[PeerId]:
        return [p for p, e in self.entries.items() if not e.dialable]


def crawl_process(crawler_pid: PeerId, net, clock: SimClock,
                  bootstrap: Sequence[PeerId]):
    """Process body: BFS over bucket dumps until the frontier empties."""
    result = CrawlResult()
    frontier: List[Tuple[PeerId, Tuple[str, ...]]] = \
        [(pid, net.peers[pid].addresses if pid in net.peers else ())
         for pid in bootstrap]
    seen: Set[PeerId] = set(pid for pid, _ in frontier)
    while frontier:
        pid, addrs = frontier.pop(0)
        result.queried += 1
        if not net.is_connected(crawler_pid, pid):
            dial = yield net.dial(crawler_pid, pid)
            if not dial.connected:
                result.entries[pid] = CrawlEntry(pid, addrs, False)
                continue
        reply = yield net.request(crawler_pid, pid,
                                  wire.Message(wire.DUMP_BUCKETS))
        if reply is None or reply.tag != wire.NODES:
            result.entries[pid] = CrawlEntry(pid, addrs, False)
            continue
        result.entries[pid] = CrawlEntry(pid, addrs, True)
        for peer_id, peer_addrs in reply.peers:
            if peer_id in seen or peer_id == crawler_pid:
                continue
            seen.add(peer_id)
            frontier.append((peer_id, peer_addrs))
    return result


def crawl(crawler_pid: PeerId, net, clock: SimClock,
          bootstrap: Sequence[PeerId]) -> CrawlResult:
    """Run a crawl to completion on an otherwise idle clock."""
    proc = Process(clock, crawl_process(crawler_pid, net, clock, bootstrap))
    clock.run()
    return unwrap(proc.value)
