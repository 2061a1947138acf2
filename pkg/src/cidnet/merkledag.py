"""Chunking, Merkle-DAG assembly, and the content-addressed block store.

Leaf blocks carry raw chunk bytes (codec 0x55); interior blocks carry a
deterministic length-prefixed link list (codec 0x70). The interior format
is private to this project and is pinned by golden tests.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .multiformats import (
    CODEC_DAG_PB,
    CODEC_RAW,
    Cid,
    FormatError,
    cid_for_data,
    multihash_sha256,
    varint_decode,
    varint_encode,
)

DEFAULT_CHUNK_SIZE = 256 * 1024
DEFAULT_FANOUT = 174


class BlockError(ValueError):
    """Raised for blocks that fail self-certification or cannot be parsed."""


@dataclass(frozen=True)
class Block:
    cid: Cid
    data: bytes


@dataclass(frozen=True)
class DagNode:
    """One DAG node: a leaf chunk, or an interior node of links.

    ``links`` pairs each child CID with the cumulative content size under
    that child, so reassembly can report sizes without fetching.
    """

    links: Tuple[Tuple[Cid, int], ...]
    payload: bytes

    @property
    def is_leaf(self) -> bool:
        return not self.links

    @property
    def size(self) -> int:
        if self.is_leaf:
            return len(self.payload)
        return sum(size for _, size in self.links)

    def serialize(self) -> bytes:
        if self.is_leaf:
            return self.payload
        out = bytearray(varint_encode(len(self.links)))
        for cid, size in self.links:
            raw = cid.encode_bytes()
            out += varint_encode(len(raw))
            out += raw
            out += varint_encode(size)
        out += varint_encode(len(self.payload))
        out += self.payload
        return bytes(out)

    def to_block(self) -> Block:
        data = self.serialize()
        codec = CODEC_RAW if self.is_leaf else CODEC_DAG_PB
        return Block(cid_for_data(data, codec), data)


def parse_interior(data: bytes) -> DagNode:
    """Parse the serialized form of an interior (codec 0x70) node."""
    count, pos = varint_decode(data)
    links: List[Tuple[Cid, int]] = []
    for _ in range(count):
        raw_len, pos = varint_decode(data, pos)
        if pos + raw_len > len(data):
            raise BlockError("truncated link CID")
        from .multiformats import decode_cid_bytes

        cid = decode_cid_bytes(data[pos:pos + raw_len])
        pos += raw_len
        size, pos = varint_decode(data, pos)
        links.append((cid, size))
    pay_len, pos = varint_decode(data, pos)
    if pos + pay_len != len(data):
        raise BlockError("interior node payload length mismatch")
    if not links:
        raise BlockError("interior node with no links")
    return DagNode(tuple(links), data[pos:])


def chunk(content: bytes, chunk_size: int = DEFAULT_CHUNK_SIZE) -> List[DagNode]:
    """Fixed-size split; empty content yields one empty leaf."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    if not content:
        return [DagNode((), b"")]
    return [DagNode((), content[i:i + chunk_size])
            for i in range(0, len(content), chunk_size)]


def build_dag(leaves: List[DagNode],
              fanout: int = DEFAULT_FANOUT) -> Tuple[Cid, List[Block]]:
    """Group leaves left-to-right into interior levels until one root
    remains. A single leaf is its own root."""
    if not leaves:
        raise ValueError("build_dag needs at least one leaf")
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    blocks: List[Block] = []
    level: List[Tuple[Cid, int]] = []
    for leaf in leaves:
        block = leaf.to_block()
        blocks.append(block)
        level.append((block.cid, leaf.size))
    while len(level) > 1:
        parents: List[Tuple[Cid, int]] = []
        for i in range(0, len(level), fanout):
            node = DagNode(tuple(level[i:i + fanout]), b"")
            block = node.to_block()
            blocks.append(block)
            parents.append((block.cid, node.size))
        level = parents
    return level[0][0], blocks


def verify_block(cid: Cid, data: bytes) -> bool:
    if cid.multihash.hash_code != 0x12:
        raise FormatError("only sha2-256 blocks can be verified")
    return multihash_sha256(data) == cid.multihash


class BlockStore:
    """Deduplicating CID-keyed block map; safe for concurrent readers."""

    def __init__(self):
        self._blocks: Dict[bytes, Block] = {}
        self._added_at: Dict[bytes, int] = {}
        self._lock = threading.RLock()
        self.total_bytes = 0

    def __len__(self) -> int:
        return len(self._blocks)

    def __contains__(self, cid: Cid) -> bool:
        return cid.encode_bytes() in self._blocks

    def put(self, block: Block, now: int = 0) -> str:
        """Store a verified block. Returns 'stored-new' or 'deduplicated'."""
        if not verify_block(block.cid, block.data):
            raise BlockError(f"block does not match its CID {block.cid}")
        key = block.cid.encode_bytes()
        with self._lock:
            if key in self._blocks:
                return "deduplicated"
            self._blocks[key] = block
            self._added_at[key] = now
            self.total_bytes += len(block.data)
            return "stored-new"

    def get(self, cid: Cid) -> Optional[Block]:
        return self._blocks.get(cid.encode_bytes())

    def added_at(self, cid: Cid) -> Optional[int]:
        return self._added_at.get(cid.encode_bytes())

    def delete(self, cid: Cid) -> None:
        key = cid.encode_bytes()
        with self._lock:
            block = self._blocks.pop(key, None)
            self._added_at.pop(key, None)
            if block is not None:
                self.total_bytes -= len(block.data)

    def cids(self) -> List[Cid]:
        return [b.cid for b in self._blocks.values()]


def dag_children(block: Block) -> List[Cid]:
    """Child CIDs of a block: empty for leaves."""
    if block.cid.codec_code == CODEC_RAW:
        return []
    return [cid for cid, _ in parse_interior(block.data).links]


def reassemble(store: BlockStore, root: Cid) -> bytes:
    """Depth-first traversal reproducing the original content."""
    out = bytearray()
    stack = [root]
    while stack:
        cid = stack.pop()
        block = store.get(cid)
        if block is None:
            raise BlockError(f"missing block {cid}")
        if not verify_block(block.cid, block.data):
            raise BlockError(f"corrupt block {cid}")
        if block.cid.codec_code == CODEC_RAW:
            out += block.data
        else:
            node = parse_interior(block.data)
            stack.extend(cid for cid, _ in reversed(node.links))
    return bytes(out)


def import_content(store: BlockStore, content: bytes,
                   chunk_size: int = DEFAULT_CHUNK_SIZE,
                   fanout: int = DEFAULT_FANOUT,
                   now: int = 0) -> Tuple[Cid, int]:
    """Chunk, build the DAG, and store every block. Returns the root CID
    and the number of newly stored blocks."""
    root, blocks = build_dag(chunk(content, chunk_size), fanout)
    new = 0
    for block in blocks:
        if store.put(block, now) == "stored-new":
            new += 1
    return root, new
