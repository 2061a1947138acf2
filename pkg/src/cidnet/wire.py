"""Length-prefixed tagged binary envelope shared by DHT RPCs and block
exchange messages. The byte layout is pinned by golden tests because the
simulator's traffic counters are derived from encoded lengths.

Layout: varint(payload length) || tag byte || payload fields, where
variable-length fields are themselves varint-length-prefixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

from .multiformats import (
    Cid,
    FormatError,
    Multihash,
    PeerId,
    decode_cid_bytes,
    varint_decode,
    varint_encode,
)

# message tags
FIND_NODE = 0x01
NODES = 0x02
GET_PROVIDERS = 0x03
PROVIDERS = 0x04
ADD_PROVIDER = 0x05
FIND_PEER = 0x06
PEER_RECORD = 0x07
PUT_PEER_RECORD = 0x08
DUMP_BUCKETS = 0x09
ACK = 0x0A
WANT_HAVE = 0x10
HAVE = 0x11
DONT_HAVE = 0x12
WANT_BLOCK = 0x13
BLOCK = 0x14

TAG_NAMES = {
    FIND_NODE: "FIND_NODE", NODES: "NODES", GET_PROVIDERS: "GET_PROVIDERS",
    PROVIDERS: "PROVIDERS", ADD_PROVIDER: "ADD_PROVIDER",
    FIND_PEER: "FIND_PEER", PEER_RECORD: "PEER_RECORD",
    PUT_PEER_RECORD: "PUT_PEER_RECORD", DUMP_BUCKETS: "DUMP_BUCKETS",
    ACK: "ACK", WANT_HAVE: "WANT_HAVE", HAVE: "HAVE",
    DONT_HAVE: "DONT_HAVE", WANT_BLOCK: "WANT_BLOCK", BLOCK: "BLOCK",
}

PeerEntry = Tuple[PeerId, Tuple[str, ...]]


@dataclass(frozen=True)
class Message:
    tag: int
    key: bytes = b""              # 32-byte DHT key, or CID bytes
    data: bytes = b""             # block payload
    peer: PeerId = None           # subject peer (provider / record subject)
    addrs: Tuple[str, ...] = ()
    peers: Tuple[PeerEntry, ...] = ()   # closest-peer / bucket-dump entries

    @property
    def name(self) -> str:
        return TAG_NAMES.get(self.tag, f"0x{self.tag:02x}")


def _enc_bytes(b: bytes) -> bytes:
    return varint_encode(len(b)) + b


def _dec_bytes(data: bytes, pos: int) -> Tuple[bytes, int]:
    length, pos = varint_decode(data, pos)
    if pos + length > len(data):
        raise FormatError("truncated field")
    return data[pos:pos + length], pos + length


def _enc_addrs(addrs: Tuple[str, ...]) -> bytes:
    out = varint_encode(len(addrs))
    for a in addrs:
        out += _enc_bytes(a.encode("utf-8"))
    return out


def _dec_addrs(data: bytes, pos: int) -> Tuple[Tuple[str, ...], int]:
    count, pos = varint_decode(data, pos)
    addrs = []
    for _ in range(count):
        raw, pos = _dec_bytes(data, pos)
        addrs.append(raw.decode("utf-8"))
    return tuple(addrs), pos


def _enc_peers(peers: Tuple[PeerEntry, ...]) -> bytes:
    out = varint_encode(len(peers))
    for peer, addrs in peers:
        out += _enc_bytes(peer.encode())
        out += _enc_addrs(addrs)
    return out


def _dec_peers(data: bytes, pos: int) -> Tuple[Tuple[PeerEntry, ...], int]:
    count, pos = varint_decode(data, pos)
    peers = []
    for _ in range(count):
        raw, pos = _dec_bytes(data, pos)
        mh, end = Multihash.decode(raw)
        if end != len(raw):
            raise FormatError("trailing bytes in peer entry")
        addrs, pos = _dec_addrs(data, pos)
        peers.append((PeerId(mh), addrs))
    return tuple(peers), pos


def _enc_peer(peer: PeerId) -> bytes:
    return _enc_bytes(peer.encode() if peer is not None else b"")


def encode(msg: Message) -> bytes:
    body = bytes([msg.tag])
    if msg.tag in (FIND_NODE, GET_PROVIDERS, WANT_HAVE, HAVE, DONT_HAVE,
                   WANT_BLOCK):
        body += _enc_bytes(msg.key)
    elif msg.tag == BLOCK:
        body += _enc_bytes(msg.key) + _enc_bytes(msg.data)
    elif msg.tag == NODES:
        body += _enc_peers(msg.peers)
    elif msg.tag == PROVIDERS:
        body += _enc_peers(msg.peers)  # provider entries
        # closer peers ride in data as a nested NODES payload
        body += _enc_bytes(msg.data)
    elif msg.tag == ADD_PROVIDER:
        body += _enc_bytes(msg.key) + _enc_peer(msg.peer) + _enc_addrs(msg.addrs)
    elif msg.tag in (FIND_PEER, PEER_RECORD, PUT_PEER_RECORD):
        body += _enc_peer(msg.peer)
        if msg.tag != FIND_PEER:
            body += _enc_addrs(msg.addrs)
    elif msg.tag in (DUMP_BUCKETS, ACK):
        pass
    else:
        raise FormatError(f"unknown message tag 0x{msg.tag:02x}")
    return varint_encode(len(body)) + body


def decode(raw: bytes) -> Message:
    length, pos = varint_decode(raw)
    if pos + length != len(raw):
        raise FormatError("message length mismatch")
    if length == 0:
        raise FormatError("empty message")
    tag = raw[pos]
    pos += 1
    if tag in (FIND_NODE, GET_PROVIDERS, WANT_HAVE, HAVE, DONT_HAVE,
               WANT_BLOCK):
        key, pos = _dec_bytes(raw, pos)
        msg = Message(tag, key=key)
    elif tag == BLOCK:
        key, pos = _dec_bytes(raw, pos)
        data, pos = _dec_bytes(raw, pos)
        msg = Message(tag, key=key, data=data)
    elif tag == NODES:
        peers, pos = _dec_peers(raw, pos)
        msg = Message(tag, peers=peers)
    elif tag == PROVIDERS:
        peers, pos = _dec_peers(raw, pos)
        data, pos = _dec_bytes(raw, pos)
        msg = Message(tag, peers=peers, data=data)
    elif tag == ADD_PROVIDER:
        key, pos = _dec_bytes(raw, pos)
        praw, pos = _dec_bytes(raw, pos)
        mh, end = Multihash.decode(praw)
        if end != len(praw):
            raise FormatError("trailing bytes in provider id")
        addrs, pos = _dec_addrs(raw, pos)
        msg = Message(tag, key=key, peer=PeerId(mh), addrs=addrs)
    elif tag in (FIND_PEER, PEER_RECORD, PUT_PEER_RECORD):
        praw, pos = _dec_bytes(raw, pos)
        mh, end = Multihash.decode(praw)
        if end != len(praw):
            raise FormatError("trailing bytes in peer id")
        addrs: Tuple[str, ...] = ()
        if tag != FIND_PEER:
            addrs, pos = _dec_addrs(raw, pos)
        msg = Message(tag, peer=PeerId(mh), addrs=addrs)
    elif tag in (DUMP_BUCKETS, ACK):
        msg = Message(tag)
    else:
        raise FormatError(f"unknown message tag 0x{tag:02x}")
    if pos != len(raw):
        raise FormatError("trailing bytes after message")
    return msg


def encoded_size(msg: Message) -> int:
    return len(encode(msg))


def key_bytes(key: int) -> bytes:
    return key.to_bytes(32, "big")


def cid_key(cid: Cid) -> bytes:
    return cid.encode_bytes()


def cid_from_key(key: bytes) -> Cid:
    return decode_cid_bytes(key)
