"""Identifier layer: varints, base encodings, multihash, CID, PeerId,
and multiaddresses, checked against independent oracles and golden
vectors."""

import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cidnet.multiformats import (
    CODEC_DAG_PB,
    CODEC_RAW,
    Cid,
    FormatError,
    Multihash,
    PeerId,
    base32_decode,
    base32_encode,
    base58btc_decode,
    base58btc_encode,
    cid_for_data,
    decode_cid,
    decode_cid_bytes,
    dht_key,
    encode_cid,
    format_multiaddr,
    multibase_decode,
    multibase_encode,
    multihash_sha256,
    parse_multiaddr,
    peer_id_from_public_key,
    varint_decode,
    varint_encode,
)

GOLDEN_CIDV1 = "bafybeigdyrzt5sfp7udm7hu76uh7y26nf3efuylqabf3oclgtqy55fbzdi"


# ---------------------------------------------------------------------------
# varints

def varint_oracle(value):
    """Independent LEB128 encoder."""
    out = b""
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out += bytes([byte | 0x80])
        else:
            return out + bytes([byte])


@pytest.mark.parametrize("value,encoded", [
    (0, b"\x00"),
    (1, b"\x01"),
    (127, b"\x7f"),
    (128, b"\x80\x01"),
    (0x70, b"\x70"),
    (300, b"\xac\x02"),
])
def test_varint_golden(value, encoded):
    assert varint_encode(value) == encoded
    assert varint_decode(encoded) == (value, len(encoded))


@given(st.integers(min_value=0, max_value=2**64))
def test_varint_matches_oracle(value):
    assert varint_encode(value) == varint_oracle(value)
    decoded, pos = varint_decode(varint_encode(value))
    assert decoded == value and pos == len(varint_encode(value))


def test_varint_rejects_negative():
    with pytest.raises(FormatError):
        varint_encode(-1)


def test_varint_rejects_truncated():
    with pytest.raises(FormatError):
        varint_decode(b"\x80")


# ---------------------------------------------------------------------------
# base encodings

def base58_oracle(data):
    """Independent base58btc encoder (big-int division)."""
    alphabet = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
    n = int.from_bytes(data, "big")
    out = ""
    while n:
        n, rem = divmod(n, 58)
        out = alphabet[rem] + out
    pad = len(data) - len(data.lstrip(b"\x00"))
    return "1" * pad + out


@given(st.binary(max_size=64))
def test_base58_round_trip_and_oracle(data):
    text = base58btc_encode(data)
    assert text == base58_oracle(data)
    assert base58btc_decode(text) == data


@given(st.binary(max_size=64))
def test_base32_round_trip(data):
    text = base32_encode(data)
    assert text == text.lower()
    assert "=" not in text
    assert base32_decode(text) == data


def test_multibase_prefixes():
    data = b"hello multibase"
    assert multibase_encode("b", data)[0] == "b"
    assert multibase_encode("z", data)[0] == "z"
    assert multibase_decode(multibase_encode("b", data)) == data
    assert multibase_decode(multibase_encode("z", data)) == data
    with pytest.raises(FormatError):
        multibase_encode("q", data)
    with pytest.raises(FormatError):
        multibase_decode("qxyz")


# ---------------------------------------------------------------------------
# multihash / CID

def test_multihash_sha256_matches_hashlib():
    data = b"some content"
    mh = multihash_sha256(data)
    assert mh.hash_code == 0x12
    assert mh.digest == hashlib.sha256(data).digest()
    assert mh.encode()[:2] == b"\x12\x20"
    decoded, pos = Multihash.decode(mh.encode())
    assert decoded == mh and pos == len(mh.encode())


def test_golden_cidv1_vector():
    cid = decode_cid(GOLDEN_CIDV1)
    assert cid.version == 1
    assert cid.codec_code == CODEC_DAG_PB == 0x70
    assert cid.multihash.hash_code == 0x12
    assert len(cid.multihash.digest) == 32
    raw = cid.encode_bytes()
    assert raw[:4] == bytes([0x01, 0x70, 0x12, 0x20])
    assert len(raw) == 36
    assert encode_cid(cid) == GOLDEN_CIDV1
    assert decode_cid_bytes(raw) == cid


def test_cidv0_round_trip():
    mh = multihash_sha256(b"cid v0 payload")
    cid = Cid(0, CODEC_DAG_PB, mh)
    text = encode_cid(cid)
    assert text.startswith("Qm")
    assert decode_cid(text) == cid


def test_cidv0_constraints():
    mh = multihash_sha256(b"x")
    with pytest.raises(FormatError):
        Cid(0, CODEC_RAW, mh)
    with pytest.raises(FormatError):
        Cid(2, CODEC_RAW, mh)


@given(st.binary(min_size=1, max_size=256),
       st.sampled_from([CODEC_RAW, CODEC_DAG_PB]),
       st.sampled_from(["b", "z"]))
def test_cid_round_trip(data, codec, base):
    cid = cid_for_data(data, codec)
    assert decode_cid(encode_cid(cid, base)) == cid
    assert decode_cid_bytes(cid.encode_bytes()) == cid


def test_decode_cid_rejects_garbage():
    with pytest.raises(FormatError):
        decode_cid("not-a-cid")
    with pytest.raises(FormatError):
        decode_cid_bytes(b"\x01\x70")


# ---------------------------------------------------------------------------
# PeerId / DHT keys

def test_peer_id_base58_round_trip():
    pid = peer_id_from_public_key(b"\x01" * 32)
    assert PeerId.from_base58(pid.to_base58()) == pid
    assert str(pid).startswith("Qm")


def test_peer_id_rejects_empty_key():
    with pytest.raises(FormatError):
        peer_id_from_public_key(b"")


def test_dht_key_is_sha256_of_canonical_bytes():
    cid = cid_for_data(b"keyspace", CODEC_RAW)
    expected = int.from_bytes(
        hashlib.sha256(cid.encode_bytes()).digest(), "big")
    assert dht_key(cid) == expected
    pid = peer_id_from_public_key(b"pk")
    expected = int.from_bytes(hashlib.sha256(pid.encode()).digest(), "big")
    assert dht_key(pid) == expected
    with pytest.raises(TypeError):
        dht_key(b"raw bytes")


# ---------------------------------------------------------------------------
# multiaddresses

@pytest.mark.parametrize("text", [
    "/ip4/127.0.0.1/tcp/4001",
    "/ip4/10.1.2.3/udp/4001/quic",
    "/ip6/::1/tcp/443/ws",
    "/ip4/1.2.3.4/tcp/4001/p2p/" + str(peer_id_from_public_key(b"pk")),
])
def test_multiaddr_round_trip(text):
    addr = parse_multiaddr(text)
    assert format_multiaddr(addr) == text
    assert str(addr) == text


@pytest.mark.parametrize("text", [
    "ip4/1.2.3.4/tcp/80",      # missing leading slash
    "/",                        # empty
    "/ip4/999.0.0.1/tcp/80",   # bad address
    "/ip4/1.2.3.4/tcp/99999",  # bad port
    "/ip4/1.2.3.4/tcp",        # missing value
    "/quic/extra",              # flag protocol with a value
    "/carrier-pigeon/1",        # unknown protocol
])
def test_multiaddr_rejects(text):
    with pytest.raises(FormatError):
        parse_multiaddr(text)


def test_multiaddr_accessors():
    pid = peer_id_from_public_key(b"addressed")
    addr = parse_multiaddr(f"/ip4/1.2.3.4/tcp/443/ws/p2p/{pid}")
    assert addr.transport() == "ws"
    assert addr.peer_id() == pid
    assert parse_multiaddr("/ip4/1.2.3.4/udp/1/quic").transport() == "quic"
    assert parse_multiaddr("/ip4/1.2.3.4/tcp/1").peer_id() is None


@settings(max_examples=50)
@given(st.lists(st.tuples(
    st.sampled_from(["ip4", "tcp", "udp"]),
    st.integers(min_value=0, max_value=65535)), min_size=1, max_size=4))
def test_multiaddr_property_round_trip(parts):
    text = ""
    for name, n in parts:
        value = f"10.0.0.{n % 256}" if name == "ip4" else str(n)
        text += f"/{name}/{value}"
    addr = parse_multiaddr(text)
    assert format_multiaddr(addr) == text
