"""Self-describing identifier formats: varints, multibase, multihash,
CIDs, multiaddresses, and peer ids.

All types are immutable values; every function here is pure. Malformed
input raises :class:`FormatError`, never anything else.
"""

from __future__ import annotations

import base64
import hashlib
import ipaddress
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple, Union

SHA2_256 = 0x12
CODEC_RAW = 0x55
CODEC_DAG_PB = 0x70

CODEC_NAMES = {
    CODEC_RAW: "raw",
    CODEC_DAG_PB: "dag-pb",
}

_B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(_B58_ALPHABET)}


class FormatError(ValueError):
    """Raised for any malformed identifier, address, or binary layout."""


# ---------------------------------------------------------------------------
# varint (unsigned LEB128)

def varint_encode(value: int) -> bytes:
    if value < 0:
        raise FormatError("varint must be non-negative")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def varint_decode(data: bytes, offset: int = 0) -> Tuple[int, int]:
    """Decode one varint; returns (value, next offset)."""
    value = 0
    shift = 0
    pos = offset
    while True:
        if pos >= len(data):
            raise FormatError("truncated varint")
        if shift > 63:
            raise FormatError("varint too long")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7


# ---------------------------------------------------------------------------
# multibase (base32-lower-unpadded 'b' and base58btc 'z')

def base32_encode(data: bytes) -> str:
    return base64.b32encode(data).decode("ascii").lower().rstrip("=")


def base32_decode(text: str) -> bytes:
    pad = "=" * (-len(text) % 8)
    try:
        return base64.b32decode(text.upper() + pad)
    except Exception as exc:
        raise FormatError(f"invalid base32 payload: {exc}") from None


def base58btc_encode(data: bytes) -> str:
    num = int.from_bytes(data, "big")
    out = []
    while num:
        num, rem = divmod(num, 58)
        out.append(_B58_ALPHABET[rem])
    for byte in data:
        if byte:
            break
        out.append("1")
    return "".join(reversed(out))


def base58btc_decode(text: str) -> bytes:
    num = 0
    for ch in text:
        if ch not in _B58_INDEX:
            raise FormatError(f"invalid base58 character {ch!r}")
        num = num * 58 + _B58_INDEX[ch]
    raw = num.to_bytes((num.bit_length() + 7) // 8, "big")
    leading = 0
    for ch in text:
        if ch != "1":
            break
        leading += 1
    return b"\x00" * leading + raw


def multibase_encode(base: str, data: bytes) -> str:
    if base == "b":
        return "b" + base32_encode(data)
    if base == "z":
        return "z" + base58btc_encode(data)
    raise FormatError(f"unsupported multibase {base!r}")


def multibase_decode(text: str) -> bytes:
    if not text:
        raise FormatError("empty multibase string")
    prefix, payload = text[0], text[1:]
    if prefix == "b":
        return base32_decode(payload)
    if prefix == "z":
        return base58btc_decode(payload)
    raise FormatError(f"unknown multibase prefix {prefix!r}")


# ---------------------------------------------------------------------------
# multihash

@dataclass(frozen=True)
class Multihash:
    hash_code: int
    digest: bytes

    def __post_init__(self):
        if self.hash_code == SHA2_256 and len(self.digest) != 32:
            raise FormatError("sha2-256 digest must be 32 bytes")

    @property
    def digest_length(self) -> int:
        return len(self.digest)

    def encode(self) -> bytes:
        return (varint_encode(self.hash_code)
                + varint_encode(len(self.digest))
                + self.digest)

    @classmethod
    def decode(cls, data: bytes, offset: int = 0) -> Tuple["Multihash", int]:
        code, pos = varint_decode(data, offset)
        length, pos = varint_decode(data, pos)
        if pos + length > len(data):
            raise FormatError("multihash digest length mismatch")
        digest = data[pos:pos + length]
        return cls(code, digest), pos + length


def multihash_sha256(data: bytes) -> Multihash:
    return Multihash(SHA2_256, hashlib.sha256(data).digest())


# ---------------------------------------------------------------------------
# CID

@dataclass(frozen=True)
class Cid:
    version: int
    codec_code: int
    multihash: Multihash

    def __post_init__(self):
        if self.version not in (0, 1):
            raise FormatError(f"unsupported CID version {self.version}")
        if self.version == 0:
            if self.codec_code != CODEC_DAG_PB:
                raise FormatError("CIDv0 codec must be dag-pb")
            if self.multihash.hash_code != SHA2_256:
                raise FormatError("CIDv0 hash must be sha2-256")

    @property
    def codec_name(self) -> Optional[str]:
        return CODEC_NAMES.get(self.codec_code)

    def encode_bytes(self) -> bytes:
        """Canonical binary form: varint(version) || varint(codec) || multihash."""
        return (varint_encode(self.version)
                + varint_encode(self.codec_code)
                + self.multihash.encode())

    def __str__(self) -> str:
        return encode_cid(self)


def cid_for_data(data: bytes, codec_code: int = CODEC_RAW, version: int = 1) -> Cid:
    return Cid(version, codec_code, multihash_sha256(data))


def encode_cid(cid: Cid, base: str = "b") -> str:
    if cid.version == 0:
        # bare base58btc multihash, no multibase prefix
        return base58btc_encode(cid.multihash.encode())
    return multibase_encode(base, cid.encode_bytes())


def decode_cid(text: str) -> Cid:
    if not text:
        raise FormatError("empty CID string")
    if text.startswith("Qm"):
        raw = base58btc_decode(text)
        mh, pos = Multihash.decode(raw)
        if pos != len(raw):
            raise FormatError("trailing bytes after CIDv0 multihash")
        return Cid(0, CODEC_DAG_PB, mh)
    raw = multibase_decode(text)
    return decode_cid_bytes(raw)


def decode_cid_bytes(raw: bytes) -> Cid:
    version, pos = varint_decode(raw)
    if version == 0:
        raise FormatError("binary CIDv0 is a bare multihash, not version 0")
    codec, pos = varint_decode(raw, pos)
    mh, pos = Multihash.decode(raw, pos)
    if pos != len(raw):
        raise FormatError("trailing bytes after CID")
    return Cid(version, codec, mh)


# ---------------------------------------------------------------------------
# PeerId

@dataclass(frozen=True, order=True)
class PeerId:
    multihash: Multihash

    def encode(self) -> bytes:
        return self.multihash.encode()

    def to_base58(self) -> str:
        return base58btc_encode(self.multihash.encode())

    @classmethod
    def from_base58(cls, text: str) -> "PeerId":
        raw = base58btc_decode(text)
        mh, pos = Multihash.decode(raw)
        if pos != len(raw):
            raise FormatError("trailing bytes after PeerId multihash")
        return cls(mh)

    def __str__(self) -> str:
        return self.to_base58()


def peer_id_from_public_key(pubkey: bytes) -> PeerId:
    if not pubkey:
        raise FormatError("empty public key")
    return PeerId(multihash_sha256(pubkey))


# ---------------------------------------------------------------------------
# DHT key space: 256-bit ints from SHA-256 of canonical binary forms

def dht_key(obj: Union[Cid, PeerId]) -> int:
    if isinstance(obj, Cid):
        raw = obj.encode_bytes()
    elif isinstance(obj, PeerId):
        raw = obj.encode()
    else:
        raise TypeError(f"cannot key a {type(obj).__name__}")
    return int.from_bytes(hashlib.sha256(raw).digest(), "big")


# ---------------------------------------------------------------------------
# Multiaddress

_PORT_PROTOCOLS = ("tcp", "udp")
_FLAG_PROTOCOLS = ("quic", "ws")


@dataclass(frozen=True)
class Multiaddress:
    components: Tuple[Tuple[str, Optional[str]], ...]

    def __str__(self) -> str:
        return format_multiaddr(self)

    def peer_id(self) -> Optional[PeerId]:
        for name, value in self.components:
            if name == "p2p":
                return PeerId.from_base58(value)
        return None

    def transport(self) -> Optional[str]:
        kinds = [n for n, _ in self.components if n in ("tcp", "udp", "quic", "ws")]
        if "ws" in kinds:
            return "ws"
        if "quic" in kinds:
            return "quic"
        if "tcp" in kinds:
            return "tcp"
        return None


def _validate_component(name: str, value: Optional[str]) -> None:
    if name in ("ip4", "ip6"):
        if value is None:
            raise FormatError(f"{name} requires an address")
        try:
            addr = ipaddress.ip_address(value)
        except ValueError:
            raise FormatError(f"invalid {name} address {value!r}") from None
        if name == "ip4" and addr.version != 4:
            raise FormatError(f"{value!r} is not an IPv4 address")
        if name == "ip6" and addr.version != 6:
            raise FormatError(f"{value!r} is not an IPv6 address")
    elif name in _PORT_PROTOCOLS:
        if value is None or not value.isdigit() or not 0 <= int(value) <= 65535:
            raise FormatError(f"invalid {name} port {value!r}")
    elif name in _FLAG_PROTOCOLS:
        if value is not None:
            raise FormatError(f"{name} takes no value")
    elif name == "p2p":
        if value is None:
            raise FormatError("p2p requires a PeerId")
        PeerId.from_base58(value)
    else:
        raise FormatError(f"unknown protocol {name!r}")


def multiaddr(*components: Tuple[str, Optional[str]]) -> Multiaddress:
    for name, value in components:
        _validate_component(name, value)
    return Multiaddress(tuple(components))


def parse_multiaddr(text: str) -> Multiaddress:
    if not text.startswith("/"):
        raise FormatError("multiaddress must start with '/'")
    parts = text.split("/")[1:]
    if parts == [""]:
        raise FormatError("empty multiaddress")
    components = []
    it: Iterator[str] = iter(parts)
    for name in it:
        if not name:
            raise FormatError("empty multiaddress component")
        if name in _FLAG_PROTOCOLS:
            value = None
        else:
            value = next(it, None)
            if value is None:
                raise FormatError(f"protocol {name!r} missing its value")
        _validate_component(name, value)
        components.append((name, value))
    return Multiaddress(tuple(components))


def format_multiaddr(addr: Multiaddress) -> str:
    parts = []
    for name, value in addr.components:
        parts.append("/" + name)
        if value is not None:
            parts.append("/" + value)
    return "".join(parts)
