"""Kademlia-variant DHT: 256 k-buckets over a 256-bit XOR metric,
provider/peer record stores with expiry, iterative lookups with up to
three in-flight queries, fire-and-forget record publication, and the
client/server role probe.

All asynchronous operations are generator processes driven by the
simulator clock; one node's handlers and timers are serialized.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from . import wire
from .multiformats import Cid, PeerId, dht_key
from .simnet.clock import (AllOf, AnyOf, Event, Process, SimClock, Timeout,
                           NS_PER_S, unwrap)

K = 20
ALPHA = 3
BUCKET_COUNT = 256
EXPIRY_INTERVAL = 24 * 3600 * NS_PER_S
REPUBLISH_INTERVAL = 12 * 3600 * NS_PER_S

ROLE_CLIENT = "client"
ROLE_SERVER = "server"

AUTONAT_PROBES = 8
AUTONAT_THRESHOLD = 4  # strictly more than three inbound dials must land


class DhtError(Exception):
    pass


def xor_distance(a: int, b: int) -> int:
    return a ^ b


def bucket_index(self_key: int, other_key: int) -> int:
    d = self_key ^ other_key
    if d == 0:
        raise DhtError("keys are equal; no bucket for self")
    return d.bit_length() - 1


@dataclass
class BucketEntry:
    peer_id: PeerId
    key: int
    addrs: Tuple[str, ...]
    last_seen: int


class RoutingTable:
    """256 buckets of up to k entries, least-recently-seen first."""

    def __init__(self, self_key: int, k: int = K):
        self.self_key = self_key
        self.k = k
        self.buckets: List[List[BucketEntry]] = [[] for _ in range(BUCKET_COUNT)]

    def __len__(self) -> int:
        return sum(len(b) for b in self.buckets)

    def entries(self) -> Iterable[BucketEntry]:
        for bucket in self.buckets:
            yield from bucket

    def peer_ids(self) -> List[PeerId]:
        return [e.peer_id for e in self.entries()]

    def insert(self, peer_id: PeerId, key: int, addrs: Tuple[str, ...],
               now: int, role: str = ROLE_SERVER,
               probe=None) -> str:
        """Returns 'inserted', 'refreshed', or 'rejected-full'.

        ``probe`` is a liveness predicate for the least-recently-seen
        resident of a full bucket (a simulated dial)."""
        if key == self.self_key:
            raise DhtError("cannot insert self into routing table")
        if role != ROLE_SERVER:
            raise DhtError("client peers are not routable")
        bucket = self.buckets[bucket_index(self.self_key, key)]
        for i, entry in enumerate(bucket):
            if entry.peer_id == peer_id:
                bucket.pop(i)
                entry.last_seen = now
                entry.addrs = addrs or entry.addrs
                bucket.append(entry)
                return "refreshed"
        if len(bucket) < self.k:
            bucket.append(BucketEntry(peer_id, key, addrs, now))
            return "inserted"
        oldest = bucket[0]
        if probe is not None and not probe(oldest):
            bucket.pop(0)
            bucket.append(BucketEntry(peer_id, key, addrs, now))
            return "inserted"
        return "rejected-full"

    def remove(self, peer_id: PeerId, key: int) -> None:
        bucket = self.buckets[bucket_index(self.self_key, key)]
        for i, entry in enumerate(bucket):
            if entry.peer_id == peer_id:
                bucket.pop(i)
                return

    def closest(self, target: int, count: int) -> List[BucketEntry]:
        return heapq.nsmallest(count, self.entries(),
                               key=lambda e: e.key ^ target)


@dataclass
class ProviderRecord:
    key: int
    provider: PeerId
    addrs: Tuple[str, ...]
    received_at: int
    expires_at: int


class ProviderStore:
    def __init__(self, expiry: int = EXPIRY_INTERVAL):
        self.expiry = expiry
        self._records: Dict[int, Dict[PeerId, ProviderRecord]] = {}
        self.record_bytes = 0

    def put(self, key: int, provider: PeerId, addrs: Tuple[str, ...],
            now: int) -> None:
        rec = ProviderRecord(key, provider, addrs, now, now + self.expiry)
        bucket = self._records.setdefault(key, {})
        if provider not in bucket:
            self.record_bytes += 32 + len(provider.encode()) \
                + sum(len(a) for a in addrs)
        bucket[provider] = rec

    def get(self, key: int, now: int) -> List[ProviderRecord]:
        """Unexpired records; reads never extend a record's lifetime."""
        return [r for r in self._records.get(key, {}).values()
                if now < r.expires_at]


@dataclass
class PeerRecord:
    subject: PeerId
    addrs: Tuple[str, ...]
    received_at: int


@dataclass
class LookupResult:
    peers: List[Tuple[PeerId, int, Tuple[str, ...]]]  # (pid, key, addrs)
    rounds: int
    queried: int


@dataclass
class ProvidersResult:
    providers: Dict[PeerId, Tuple[str, ...]]
    rounds: int
    queried: int


@dataclass
class ProvideReport:
    cid: Cid
    walk_ns: int
    rpc_ns: int
    stored_at: List[PeerId]


class _Candidate:
    __slots__ = ("peer_id", "key", "addrs", "state")

    def __init__(self, peer_id, key, addrs):
        self.peer_id = peer_id
        self.key = key
        self.addrs = addrs
        self.state = "new"  # new | inflight | done | failed


class DhtEngine:
    """DHT state and behavior for one node."""

    def __init__(self, peer_id: PeerId, net, clock: SimClock,
                 role: str = ROLE_SERVER, k: int = K, alpha: int = ALPHA,
                 expiry: int = EXPIRY_INTERVAL,
                 republish: int = REPUBLISH_INTERVAL,
                 addrs_with_records: float = 1.0):
        self.peer_id = peer_id
        self.key = dht_key(peer_id)
        self.net = net
        self.clock = clock
        self.role = role
        self.k = k
        self.alpha = alpha
        self.republish_interval = republish
        self.addrs_with_records = addrs_with_records
        self.table = RoutingTable(self.key, k)
        self.providers = ProviderStore(expiry)
        self.peer_records: Dict[PeerId, PeerRecord] = {}
        self.last_provided: Dict[bytes, int] = {}  # cid bytes -> virtual time
        self.pins: Dict[bytes, Cid] = {}

    # -- table maintenance ---------------------------------------------------

    def _probe_alive(self, entry: BucketEntry) -> bool:
        return self.net.is_dialable(entry.peer_id)

    def observe_peer(self, peer_id: PeerId, addrs: Tuple[str, ...],
                     role: str) -> None:
        if role != ROLE_SERVER or peer_id == self.peer_id:
            return
        self.table.insert(peer_id, dht_key(peer_id), addrs,
                          self.clock.now, role, probe=self._probe_alive)

    def _peer_entries(self, entries: List[BucketEntry]) -> Tuple:
        return tuple((e.peer_id, e.addrs) for e in entries)

    # -- RPC handling ---------------------------------------------------------

    def handle_rpc(self, src: PeerId, msg: wire.Message) -> Optional[wire.Message]:
        sim_peer = self.net.peers.get(src)
        if sim_peer is not None:
            self.observe_peer(src, sim_peer.addresses,
                              getattr(sim_peer.node, "role", ROLE_SERVER))
        now = self.clock.now
        if msg.tag == wire.FIND_NODE:
            target = int.from_bytes(msg.key, "big")
            closest = self.table.closest(target, self.k)
            return wire.Message(wire.NODES, peers=self._peer_entries(closest))
        if msg.tag == wire.GET_PROVIDERS:
            key = int.from_bytes(msg.key, "big")
            records = self.providers.get(key, now)
            if records:
                entries = []
                for rec in records:
                    addrs = rec.addrs
                    if self.addrs_with_records < 1.0 and \
                            self.net.rng.random() >= self.addrs_with_records:
                        addrs = ()
                    entries.append((rec.provider, addrs))
                return wire.Message(wire.PROVIDERS, peers=tuple(entries))
            closer = self.table.closest(key, self.k)
            nested = wire.encode(wire.Message(
                wire.NODES, peers=self._peer_entries(closer)))
            return wire.Message(wire.PROVIDERS, peers=(), data=nested)
        if msg.tag == wire.ADD_PROVIDER:
            key = int.from_bytes(msg.key, "big")
            self.providers.put(key, msg.peer, msg.addrs, now)
            if msg.addrs:
                self.peer_records[msg.peer] = PeerRecord(msg.peer, msg.addrs, now)
            return None  # fire-and-forget: no reply required
        if msg.tag == wire.FIND_PEER:
            if msg.peer == self.peer_id:
                own = self.net.peers[self.peer_id].addresses
                return wire.Message(wire.PEER_RECORD, peer=self.peer_id,
                                    addrs=own)
            rec = self.peer_records.get(msg.peer)
            if rec is not None:
                return wire.Message(wire.PEER_RECORD, peer=rec.subject,
                                    addrs=rec.addrs)
            closest = self.table.closest(dht_key(msg.peer), self.k)
            return wire.Message(wire.NODES, peers=self._peer_entries(closest))
        if msg.tag == wire.PUT_PEER_RECORD:
            self.peer_records[msg.peer] = PeerRecord(msg.peer, msg.addrs, now)
            return wire.Message(wire.ACK)
        if msg.tag == wire.DUMP_BUCKETS:
            return wire.Message(
                wire.NODES, peers=self._peer_entries(list(self.table.entries())))
        raise DhtError(f"unhandled DHT message {msg.name}")

    # -- iterative lookups -----------------------------------------------------

    def _query_one(self, cand: _Candidate, request: wire.Message):
        if not self.net.is_connected(self.peer_id, cand.peer_id):
            result = yield self.net.dial(self.peer_id, cand.peer_id)
            if not result.connected:
                return cand, None
        reply = yield self.net.request(self.peer_id, cand.peer_id, request)
        return cand, reply

    def _iterate(self, target: int, make_request, on_reply):
        """Shared lookup loop. ``on_reply(cand, reply)`` may return a final
        value to terminate early; returns (final, candidates, rounds,
        queried)."""
        cands: Dict[PeerId, _Candidate] = {}

        def add(peer_id, key, addrs):
            if peer_id == self.peer_id or peer_id in cands:
                return
            cands[peer_id] = _Candidate(peer_id, key, addrs)

        for entry in self.table.closest(target, self.k):
            add(entry.peer_id, entry.key, entry.addrs)
        if not cands:
            return None, cands, 0, 0
        if self.role == ROLE_SERVER:
            # the local node competes for the k-closest set like anyone else
            me = _Candidate(self.peer_id, self.key,
                            self.net.peers[self.peer_id].addresses)
            me.state = "done"
            cands[self.peer_id] = me

        inflight: Dict[int, Tuple[Process, _Candidate]] = {}
        rounds = 0
        queried = 0
        while True:
            ordered = sorted(cands.values(), key=lambda c: c.key ^ target)
            top = ordered[:self.k]
            if all(c.state in ("done", "failed") for c in top) \
                    and not inflight:
                return None, cands, rounds, queried
            launchable = [c for c in ordered if c.state == "new"]
            while launchable and len(inflight) < self.alpha:
                cand = launchable.pop(0)
                cand.state = "inflight"
                proc = Process(self.clock,
                               self._query_one(cand, make_request()))
                inflight[id(proc)] = (proc, cand)
                queried += 1
            if not inflight:
                # nothing left to ask and top-k not fully queried
                return None, cands, rounds, queried
            procs = [p for p, _ in inflight.values()]
            _, (cand, reply) = yield AnyOf(self.clock, procs)
            rounds += 1
            done_key = next(k for k, (p, c) in inflight.items() if c is cand)
            del inflight[done_key]
            if reply is None:
                cand.state = "failed"
                continue
            cand.state = "done"
            final = on_reply(cand, reply, add)
            if final is not None:
                return final, cands, rounds, queried

    def iterative_find_peers(self, target: int):
        """Process body returning a LookupResult of the k globally closest
        reachable peers, or raising DhtError when nothing answered."""
        def on_reply(cand, reply, add):
            if reply.tag == wire.NODES:
                for peer_id, addrs in reply.peers:
                    add(peer_id, dht_key(peer_id), addrs)
            return None

        make = lambda: wire.Message(wire.FIND_NODE, key=wire.key_bytes(target))
        result = yield from self._iterate(target, make, on_reply)
        if result is None:
            raise DhtError("lookup started with an empty routing table")
        _, cands, rounds, queried = result
        # dead candidates stay in the result: records stored with them are
        # simply lost, which is the live network's failure mode too
        known = [c for c in cands.values() if c.state in ("done", "failed")]
        if not any(c.state == "done" for c in known):
            raise DhtError("all lookup candidates unreachable")
        known.sort(key=lambda c: c.key ^ target)
        peers = [(c.peer_id, c.key, c.addrs) for c in known[:self.k]]
        return LookupResult(peers, rounds, queried)

    def iterative_find_providers(self, cid: Cid):
        """Process body; terminates the moment any peer returns a provider
        record. Returns a ProvidersResult (empty providers = not found)."""
        target = dht_key(cid)

        def on_reply(cand, reply, add):
            if reply.tag == wire.PROVIDERS:
                if reply.peers:
                    return {pid: addrs for pid, addrs in reply.peers}
                if reply.data:
                    nested = wire.decode(reply.data)
                    for peer_id, addrs in nested.peers:
                        add(peer_id, dht_key(peer_id), addrs)
            return None

        make = lambda: wire.Message(wire.GET_PROVIDERS,
                                    key=wire.key_bytes(target))
        result = yield from self._iterate(target, make, on_reply)
        if result is None:
            return ProvidersResult({}, 0, 0)
        final, _, rounds, queried = result
        return ProvidersResult(final or {}, rounds, queried)

    # -- publication -----------------------------------------------------------

    def _store_at(self, peer_id: PeerId, msg: wire.Message):
        if peer_id == self.peer_id:
            key = int.from_bytes(msg.key, "big")
            self.providers.put(key, msg.peer, msg.addrs, self.clock.now)
            return peer_id
        if not self.net.is_connected(self.peer_id, peer_id):
            result = yield self.net.dial(self.peer_id, peer_id)
            if not result.connected:
                return None
        yield self.net.send(self.peer_id, peer_id, msg)
        return peer_id

    def provide(self, cid: Cid):
        """Process body: DHT walk to the k closest peers, then
        fire-and-forget ADD_PROVIDER to each. Reports walk and RPC-phase
        durations separately."""
        if self.role != ROLE_SERVER:
            raise DhtError("client-role nodes cannot provide content")
        target = dht_key(cid)
        own_addrs = self.net.peers[self.peer_id].addresses
        walk_start = self.clock.now
        lookup = unwrap((yield Process(self.clock,
                                       self.iterative_find_peers(target))))
        walk_ns = self.clock.now - walk_start
        msg = wire.Message(wire.ADD_PROVIDER, key=wire.key_bytes(target),
                           peer=self.peer_id, addrs=own_addrs)
        rpc_start = self.clock.now
        procs = [Process(self.clock, self._store_at(pid, msg))
                 for pid, _, _ in lookup.peers]
        results = yield AllOf(self.clock, procs)
        rpc_ns = self.clock.now - rpc_start
        self.last_provided[cid.encode_bytes()] = self.clock.now
        stored = [pid for pid in results if pid is not None]
        return ProvideReport(cid, walk_ns, rpc_ns, stored)

    def republish_tick(self):
        """Process body re-providing every pin whose last publication is at
        least one republish interval old; returns the re-provided CIDs."""
        now = self.clock.now
        due = [cid for key, cid in self.pins.items()
               if now - self.last_provided.get(key, -self.republish_interval)
               >= self.republish_interval]
        for cid in due:
            unwrap((yield Process(self.clock, self.provide(cid))))
        return due

    # -- role machinery ----------------------------------------------------------

    def autonat_probe(self, scripted: Optional[List[bool]] = None):
        """Process body asking up to eight connected peers for dial-backs;
        at least four inbound successes upgrade the role to server."""
        peers = self.net.connections_of(self.peer_id)[:AUTONAT_PROBES]
        if scripted is None:
            outcomes = []
            for pid in peers:
                # dial-back cost: one RTT when it lands, a dial timeout when not
                if self.net.is_dialable(self.peer_id) and \
                        self.net.peers[self.peer_id].reachable:
                    yield self.net.dial(pid, self.peer_id)
                    outcomes.append(True)
                else:
                    profile = self.net.peers[self.peer_id].transport
                    yield Timeout(self.clock, profile.dial_timeout)
                    outcomes.append(False)
        else:
            outcomes = scripted
        if sum(outcomes) >= AUTONAT_THRESHOLD:
            self.role = ROLE_SERVER
        else:
            self.role = ROLE_CLIENT
        return self.role
