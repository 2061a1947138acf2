"""Peer engine: publish and retrieve flows over the block store, DHT,
and block exchange, with per-phase timing and the retrieval stretch
metric."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import wire
from .bitswap import BitswapEngine, BITSWAP_TIMEOUT
from .kaddht import (DhtEngine, DhtError, EXPIRY_INTERVAL, REPUBLISH_INTERVAL,
                     ProvideReport, ROLE_CLIENT, ROLE_SERVER, ALPHA, K)
from .merkledag import (BlockStore, DEFAULT_CHUNK_SIZE, DEFAULT_FANOUT,
                        dag_children, import_content, reassemble)
from .multiformats import Cid, PeerId, dht_key
from .simnet.clock import (AllOf, Process, SimClock, Timeout, NS_PER_S,
                           unwrap)

GC_TTL = 24 * 3600 * NS_PER_S


class RetrieveError(Exception):
    pass


@dataclass
class NodeConfig:
    role_policy: str = "auto"          # auto | force-client | force-server
    chunk_size: int = DEFAULT_CHUNK_SIZE
    fanout: int = DEFAULT_FANOUT
    k: int = K
    alpha: int = ALPHA
    republish: int = REPUBLISH_INTERVAL
    expiry: int = EXPIRY_INTERVAL
    bitswap_timeout: int = BITSWAP_TIMEOUT
    provide_granularity: str = "root-only"  # root-only | all-blocks
    negotiate_rtts: int = 1
    cache_ttl: int = GC_TTL
    provide_after_retrieve: bool = True
    addrs_with_records: float = 1.0

    def __post_init__(self):
        if self.k < 1 or self.alpha < 1:
            raise ValueError("k and alpha must be >= 1")
        for name in ("chunk_size", "republish", "expiry", "bitswap_timeout",
                     "cache_ttl"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.role_policy not in ("auto", "force-client", "force-server"):
            raise ValueError(f"bad role policy {self.role_policy!r}")
        if self.provide_granularity not in ("root-only", "all-blocks"):
            raise ValueError(f"bad granularity {self.provide_granularity!r}")


@dataclass
class PhaseTiming:
    discover: int = 0
    dial: int = 0
    negotiate: int = 0
    fetch: int = 0
    dht_fallback: bool = False
    provider_walk: int = 0
    peer_walk: int = 0

    @property
    def total(self) -> int:
        return self.discover + self.dial + self.negotiate + self.fetch


def compute_stretch(timing: PhaseTiming,
                    exclude_bitswap_timeout: bool = False,
                    bitswap_timeout: int = BITSWAP_TIMEOUT) -> float:
    """Retrieval time over discovery-free retrieval time. The variant flag
    drops the fixed block-exchange timeout from the discovery phase."""
    denominator = timing.dial + timing.negotiate + timing.fetch
    if denominator <= 0:
        raise ValueError("dial + negotiate + fetch must be positive")
    discover = timing.discover
    if exclude_bitswap_timeout and discover >= bitswap_timeout:
        discover -= bitswap_timeout
    return (discover + denominator) / denominator


@dataclass
class PublishReport:
    root: Cid
    new_blocks: int
    provides: List[ProvideReport]

    @property
    def walk_ns(self) -> int:
        return sum(p.walk_ns for p in self.provides)

    @property
    def rpc_ns(self) -> int:
        return sum(p.rpc_ns for p in self.provides)


class Node:
    """A peer: block store + DHT engine + block exchange engine."""

    def __init__(self, peer_id: PeerId, net, clock: SimClock,
                 config: Optional[NodeConfig] = None):
        self.peer_id = peer_id
        self.net = net
        self.clock = clock
        self.config = config or NodeConfig()
        self.store = BlockStore()
        role = ROLE_CLIENT if self.config.role_policy == "force-client" \
            else ROLE_SERVER
        self.dht = DhtEngine(peer_id, net, clock, role=role,
                             k=self.config.k, alpha=self.config.alpha,
                             expiry=self.config.expiry,
                             republish=self.config.republish,
                             addrs_with_records=self.config.addrs_with_records)
        self.bitswap = BitswapEngine(peer_id, self.store, net, clock,
                                     timeout=self.config.bitswap_timeout)

    @property
    def role(self) -> str:
        return self.dht.role

    @property
    def pins(self) -> Dict[bytes, Cid]:
        return self.dht.pins

    def on_message(self, src: PeerId, msg: wire.Message):
        peer = self.net.peers.get(src)
        if peer is not None:
            self.bitswap.book.touch(src, peer.addresses, self.clock.now)
        if msg.tag < 0x10:
            return self.dht.handle_rpc(src, msg)
        return self.bitswap.on_message(src, msg)

    # -- publish -----------------------------------------------------------------

    def publish(self, content: bytes):
        """Process body: import, pin, and announce content. Returns a
        PublishReport."""
        if self.role != ROLE_SERVER:
            raise DhtError("client-role nodes cannot publish content")
        root, new = import_content(self.store, content,
                                   self.config.chunk_size,
                                   self.config.fanout, self.clock.now)
        self.pins[root.encode_bytes()] = root
        targets = [root]
        if self.config.provide_granularity == "all-blocks":
            targets = [b for b in self.store.cids()
                       if self._reachable_from(root, b)]
        provides = []
        for cid in targets:
            report = unwrap((yield Process(self.clock,
                                           self.dht.provide(cid))))
            provides.append(report)
        return PublishReport(root, new, provides)

    def _reachable_from(self, root: Cid, cid: Cid) -> bool:
        stack = [root]
        seen = set()
        while stack:
            cur = stack.pop()
            if cur == cid:
                return True
            key = cur.encode_bytes()
            if key in seen:
                continue
            seen.add(key)
            block = self.store.get(cur)
            if block is not None:
                stack.extend(dag_children(block))
        return False

    # -- retrieve ----------------------------------------------------------------

    def _find_addresses(self, provider: PeerId, known: Tuple[str, ...]):
        """Process body: address book first, else a second DHT walk."""
        if known:
            return known
        booked = self.bitswap.book.lookup(provider)
        if booked:
            return booked
        target = dht_key(provider)
        lookup = yield Process(self.clock,
                               self.dht.iterative_find_peers(target))
        if isinstance(lookup, Exception):
            return ()
        # ask the closest peers for the record directly
        for pid, _, _ in lookup.peers[:self.config.alpha]:
            reply = yield self.net.request(
                self.peer_id, pid, wire.Message(wire.FIND_PEER, peer=provider))
            if reply is not None and reply.tag == wire.PEER_RECORD:
                return reply.addrs
        return ()

    def retrieve(self, cid: Cid):
        """Process body. Returns (content bytes, PhaseTiming)."""
        t0 = self.clock.now
        timing = PhaseTiming()
        outcome = unwrap((yield Process(self.clock, self.bitswap.want(cid))))
        provider = None
        root_block = None
        if outcome.resolved:
            timing.discover = outcome.have_at - t0
            provider = outcome.provider
            root_block = outcome.block
            fetch_start = outcome.have_at
        else:
            timing.dht_fallback = True
            walk_start = self.clock.now
            found = unwrap((yield Process(
                self.clock, self.dht.iterative_find_providers(cid))))
            timing.provider_walk = self.clock.now - walk_start
            if not found.providers:
                raise RetrieveError(f"no providers found for {cid}")
            candidates = list(found.providers.items())
            discover_end = dial_end = None
            for pid, addrs in candidates:
                peer_walk_start = self.clock.now
                addrs = yield Process(self.clock,
                                      self._find_addresses(pid, addrs))
                if isinstance(addrs, Exception) or not addrs:
                    continue
                timing.peer_walk += self.clock.now - peer_walk_start
                discover_end = self.clock.now
                timing.discover = discover_end - t0
                if self.net.is_connected(self.peer_id, pid):
                    provider = pid
                    dial_end = self.clock.now
                    break
                result = yield self.net.dial(self.peer_id, pid)
                if result.connected:
                    provider = pid
                    dial_end = self.clock.now
                    break
            if provider is None:
                raise RetrieveError(f"all provider dials failed for {cid}")
            timing.dial = dial_end - discover_end
            negotiate = self.config.negotiate_rtts * self.net.rtt(
                self.peer_id, provider)
            yield Timeout(self.clock, negotiate)
            timing.negotiate = self.clock.now - dial_end
            fetch_start = self.clock.now
            root_block = yield Process(
                self.clock, self.bitswap.fetch_block(provider, cid))
            if root_block is None or isinstance(root_block, Exception):
                raise RetrieveError(f"provider failed to serve root {cid}")
        # fetch children sequentially from the same provider
        queue = dag_children(root_block)
        while queue:
            child = queue.pop(0)
            if child in self.store:
                block = self.store.get(child)
            else:
                block = yield Process(
                    self.clock, self.bitswap.fetch_block(provider, child))
                if block is None or isinstance(block, Exception):
                    raise RetrieveError(f"provider failed to serve {child}")
            queue.extend(dag_children(block))
        content = reassemble(self.store, cid)
        timing.fetch = self.clock.now - fetch_start
        if self.config.provide_after_retrieve and self.role == ROLE_SERVER:
            # become a temporary provider; runs in the background
            Process(self.clock, self.dht.provide(cid))
        return content, timing

    # -- maintenance ---------------------------------------------------------------

    def republish_tick(self):
        return self.dht.republish_tick()

    def schedule_republish(self, interval: Optional[int] = None) -> None:
        """Run republish checks forever at ``interval`` (default 1 h)."""
        if interval is None:
            interval = 3600 * NS_PER_S

        def tick():
            Process(self.clock, self.republish_tick())
            self.clock.schedule(interval, tick)

        self.clock.schedule(interval, tick)

    def gc_tick(self, now: Optional[int] = None) -> List[Cid]:
        """Evict unpinned blocks older than the cache TTL."""
        if now is None:
            now = self.clock.now
        keep = set()
        stack = list(self.pins.values())
        while stack:
            cid = stack.pop()
            key = cid.encode_bytes()
            if key in keep:
                continue
            keep.add(key)
            block = self.store.get(cid)
            if block is not None:
                stack.extend(dag_children(block))
        evicted = []
        for block_cid in self.store.cids():
            key = block_cid.encode_bytes()
            if key in keep:
                continue
            added = self.store.added_at(block_cid)
            if added is not None and now - added >= self.config.cache_ttl:
                self.store.delete(block_cid)
                evicted.append(block_cid)
        return evicted
