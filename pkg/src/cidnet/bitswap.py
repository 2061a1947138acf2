"""Opportunistic block discovery and exchange among connected peers.

A want broadcasts WANT_HAVE to every connected peer, requests the block
from the first HAVE responder, and hands control back to the DHT after a
one-second timeout (or as soon as every target said DONT_HAVE).
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import wire
from .merkledag import Block, BlockStore, verify_block
from .multiformats import Cid, PeerId, decode_cid_bytes
from .simnet.clock import Event, SimClock, Timeout, NS_PER_S

BITSWAP_TIMEOUT = NS_PER_S  # 1 s before falling back to the DHT
ADDRESS_BOOK_CAPACITY = 900


class AddressBook:
    """Recently seen peers, capped at 900, least-recently-seen evicted."""

    def __init__(self, capacity: int = ADDRESS_BOOK_CAPACITY):
        self.capacity = capacity
        self._entries: "OrderedDict[PeerId, Tuple[Tuple[str, ...], int]]" = \
            OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, peer: PeerId) -> bool:
        return peer in self._entries

    def touch(self, peer: PeerId, addrs: Tuple[str, ...], now: int) -> None:
        if peer in self._entries:
            old_addrs, _ = self._entries.pop(peer)
            addrs = addrs or old_addrs
        self._entries[peer] = (addrs, now)
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)

    def lookup(self, peer: PeerId) -> Optional[Tuple[str, ...]]:
        entry = self._entries.get(peer)
        return entry[0] if entry else None

    def oldest(self) -> Optional[PeerId]:
        return next(iter(self._entries), None)


@dataclass
class WantOutcome:
    resolved: bool
    block: Optional[Block] = None
    provider: Optional[PeerId] = None
    have_at: int = 0       # when the first HAVE arrived
    done_at: int = 0       # when the block (or fallback) landed


class _WantState:
    __slots__ = ("cid", "targets", "dont_haves", "started", "have_at",
                 "provider", "block_requested", "event")

    def __init__(self, cid: Cid, targets: List[PeerId], started: int,
                 event: Event):
        self.cid = cid
        self.targets = set(targets)
        self.dont_haves = 0
        self.started = started
        self.have_at = None
        self.provider = None
        self.block_requested = False
        self.event = event


class BitswapEngine:
    """One per node; advanced by simulator events, never by threads."""

    def __init__(self, peer_id: PeerId, store: BlockStore, net,
                 clock: SimClock, timeout: int = BITSWAP_TIMEOUT):
        self.peer_id = peer_id
        self.store = store
        self.net = net
        self.clock = clock
        self.timeout = timeout
        self.book = AddressBook()
        self._wants: Dict[bytes, _WantState] = {}
        self._block_waiters: Dict[bytes, List[Event]] = {}

    # -- serving ---------------------------------------------------------------

    def on_message(self, src: PeerId, msg: wire.Message) -> Optional[wire.Message]:
        if msg.tag == wire.WANT_HAVE:
            cid = decode_cid_bytes(msg.key)
            tag = wire.HAVE if cid in self.store else wire.DONT_HAVE
            return wire.Message(tag, key=msg.key)
        if msg.tag == wire.WANT_BLOCK:
            cid = decode_cid_bytes(msg.key)
            block = self.store.get(cid)
            if block is None:
                return wire.Message(wire.DONT_HAVE, key=msg.key)
            return wire.Message(wire.BLOCK, key=msg.key, data=block.data)
        if msg.tag == wire.HAVE:
            self._on_have(src, msg.key)
            return None
        if msg.tag == wire.DONT_HAVE:
            self._on_dont_have(src, msg.key)
            return None
        if msg.tag == wire.BLOCK:
            self._on_block(src, msg.key, msg.data)
            return None
        raise ValueError(f"unhandled bitswap message {msg.name}")

    # -- session advance ---------------------------------------------------------

    def _on_have(self, src: PeerId, key: bytes) -> None:
        state = self._wants.get(key)
        if state is None or state.block_requested:
            return
        state.block_requested = True
        state.have_at = self.clock.now
        state.provider = src
        self.net.send(self.peer_id, src, wire.Message(wire.WANT_BLOCK, key=key))

    def _on_dont_have(self, src: PeerId, key: bytes) -> None:
        state = self._wants.get(key)
        if state is not None and src in state.targets:
            state.dont_haves += 1
            # early exit once every broadcast target declined
            if state.dont_haves >= len(state.targets) and \
                    not state.block_requested and not state.event.triggered:
                state.event.succeed(WantOutcome(False, done_at=self.clock.now))

    def _on_block(self, src: PeerId, key: bytes, data: bytes) -> None:
        cid = decode_cid_bytes(key)
        if not verify_block(cid, data):
            # penalize the sender; the want stays pending
            self.net.disconnect(self.peer_id, src)
            state = self._wants.get(key)
            if state is not None and state.provider == src:
                state.block_requested = False
                state.provider = None
            return
        block = Block(cid, data)
        self.store.put(block, self.clock.now)
        state = self._wants.pop(key, None)
        if state is not None and not state.event.triggered:
            state.event.succeed(WantOutcome(
                True, block=block, provider=src,
                have_at=state.have_at if state.have_at is not None
                else self.clock.now,
                done_at=self.clock.now))
        for waiter in self._block_waiters.pop(key, []):
            if not waiter.triggered:
                waiter.succeed(block)

    # -- requesting ----------------------------------------------------------------

    def want(self, cid: Cid):
        """Process body. Resolves with a WantOutcome: either a verified
        block, or resolved=False meaning fall back to the DHT (the want
        stays registered and a late block still lands in the store)."""
        key = cid.encode_bytes()
        if cid in self.store:
            block = self.store.get(cid)
            return WantOutcome(True, block=block, provider=self.peer_id,
                               have_at=self.clock.now, done_at=self.clock.now)
        targets = self.net.connections_of(self.peer_id)
        event = Event(self.clock)
        state = _WantState(cid, targets, self.clock.now, event)
        self._wants[key] = state
        for target in targets:
            self.net.send(self.peer_id, target,
                          wire.Message(wire.WANT_HAVE, key=key))

        def expire():
            if not event.triggered:
                event.succeed(WantOutcome(False, done_at=self.clock.now))

        self.clock.schedule(self.timeout, expire)
        outcome = yield event
        return outcome

    def fetch_block(self, provider: PeerId, cid: Cid,
                    timeout: Optional[int] = None):
        """Process body fetching one block from a known provider over
        WANT_BLOCK/BLOCK. Resolves with the Block or None."""
        if cid in self.store:
            return self.store.get(cid)
        key = cid.encode_bytes()
        event = Event(self.clock)
        self._block_waiters.setdefault(key, []).append(event)
        self.net.send(self.peer_id, provider,
                      wire.Message(wire.WANT_BLOCK, key=key))
        if timeout is None:
            timeout = self.net.rpc_timeout

        def expire():
            if not event.triggered:
                event.succeed(None)

        self.clock.schedule(timeout, expire)
        block = yield event
        return block
