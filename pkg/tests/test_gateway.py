"""Gateway: byte-budget LRU cache, tier precedence, HTTP semantics."""

import json
import random
from collections import OrderedDict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cidnet.gateway import (Gateway, GatewayConfig, LruByteCache,
                            TIER_FRONT, TIER_NETWORK, TIER_NODE)
from cidnet.merkledag import import_content

from conftest import make_network, run_gen


# -- LRU byte cache ------------------------------------------------------------


def test_cache_rejects_nonpositive_capacity():
    with pytest.raises(ValueError):
        LruByteCache(0)


def test_cache_basic_get_put():
    cache = LruByteCache(100)
    cache.put("a", b"xyz")
    assert cache.get("a") == b"xyz"
    assert cache.get("b") is None
    assert cache.used == 3 and len(cache) == 1


def test_cache_evicts_by_bytes_not_count():
    cache = LruByteCache(10)
    cache.put("a", b"x" * 6)
    cache.put("b", b"y" * 6)   # 12 > 10: a evicted
    assert cache.get("a") is None
    assert cache.get("b") == b"y" * 6
    assert cache.used == 6


def test_cache_get_refreshes_recency():
    cache = LruByteCache(10)
    cache.put("a", b"x" * 4)
    cache.put("b", b"y" * 4)
    cache.get("a")
    cache.put("c", b"z" * 4)   # b is now the LRU entry
    assert cache.get("b") is None
    assert cache.get("a") and cache.get("c")


def test_cache_ignores_oversized_bodies():
    cache = LruByteCache(10)
    cache.put("a", b"x" * 4)
    cache.put("huge", b"h" * 11)
    assert cache.get("huge") is None
    assert cache.get("a") == b"x" * 4


def test_cache_replace_adjusts_used_bytes():
    cache = LruByteCache(100)
    cache.put("a", b"x" * 50)
    cache.put("a", b"y" * 20)
    assert cache.used == 20
    assert cache.get("a") == b"y" * 20


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(1, 8)),
                min_size=1, max_size=200))
def test_cache_matches_byte_lru_oracle(ops):
    cap = 20
    cache = LruByteCache(cap)
    oracle: "OrderedDict[str, bytes]" = OrderedDict()
    for key_i, size in ops:
        key, body = str(key_i), bytes([key_i]) * size
        cache.put(key, body)
        if size <= cap:
            oracle.pop(key, None)
            oracle[key] = body
            while sum(len(v) for v in oracle.values()) > cap:
                oracle.popitem(last=False)
    assert len(cache) == len(oracle)
    assert cache.used == sum(len(v) for v in oracle.values())
    for key, body in oracle.items():
        assert cache.get(key) == body


# -- request handling ----------------------------------------------------------


def make_gateway(n=25, seed=0, capacity=1 << 20, **cfg):
    clock, net, servers, _ = make_network(n, seed=seed)
    gw = Gateway(servers[0], clock,
                 GatewayConfig(front_capacity_bytes=capacity, **cfg))
    return clock, net, servers, gw


def test_non_get_is_405():
    _, _, _, gw = make_gateway(n=3)
    assert gw.handle_get("/ipfs/anything", method="POST").status == 405


@pytest.mark.parametrize("path", ["/", "/ipfs", "/other/x", ""])
def test_non_ipfs_path_is_400(path):
    _, _, _, gw = make_gateway(n=3)
    assert gw.handle_get(path).status == 400


def test_undecodable_cid_is_400():
    _, _, _, gw = make_gateway(n=3)
    response = gw.handle_get("/ipfs/not-a-cid")
    assert response.status == 400
    assert b"bad cid" in response.body


def test_unretrievable_cid_is_504():
    clock, net, servers, gw = make_gateway(n=10)
    scratch = type(servers[1].store)()
    root, _ = import_content(scratch, b"never published")
    response = gw.handle_get(f"/ipfs/{root}")
    assert response.status == 504
    assert gw.log[-1].tier == TIER_NETWORK and gw.log[-1].status == 504


def test_tier_precedence_node_then_front():
    clock, net, servers, gw = make_gateway()
    content = b"gatewayed" * 100
    report = run_gen(clock, servers[0].publish(content))
    path = f"/ipfs/{report.root}"
    first = gw.handle_get(path)
    assert first.status == 200 and first.body == content
    assert first.headers["X-Cache-Tier"] == TIER_NODE
    second = gw.handle_get(path)
    assert second.headers["X-Cache-Tier"] == TIER_FRONT
    assert second.body == content


def test_network_tier_populates_both_caches():
    clock, net, servers, gw = make_gateway(n=30, seed=3)
    content = bytes(random.Random(5).randbytes(20_000))
    report = run_gen(clock, servers[4].publish(content))
    path = f"/ipfs/{report.root}"
    first = gw.handle_get(path)
    assert first.status == 200 and first.body == content
    assert first.headers["X-Cache-Tier"] == TIER_NETWORK
    assert report.root in gw.node.store
    assert gw.handle_get(path).headers["X-Cache-Tier"] == TIER_FRONT


def test_front_hit_sends_no_rpcs():
    clock, net, servers, gw = make_gateway(n=30, seed=3)
    report = run_gen(clock, servers[4].publish(b"cached" * 500))
    path = f"/ipfs/{report.root}"
    gw.handle_get(path)
    clock.run()  # drain the background re-provide
    peer = net.peers[gw.node.peer_id]
    sent = (peer.dht_rpcs_sent, peer.bitswap_msgs_sent, peer.sent_bytes)
    response = gw.handle_get(path)
    assert response.headers["X-Cache-Tier"] == TIER_FRONT
    assert (peer.dht_rpcs_sent, peer.bitswap_msgs_sent,
            peer.sent_bytes) == sent
    assert gw.log[-1].upstream_ns == 0


def test_node_hit_populate_can_be_disabled():
    clock, net, servers, gw = make_gateway(populate_front_on_node_hit=False)
    report = run_gen(clock, servers[0].publish(b"node tier" * 20))
    path = f"/ipfs/{report.root}"
    assert gw.handle_get(path).headers["X-Cache-Tier"] == TIER_NODE
    assert gw.handle_get(path).headers["X-Cache-Tier"] == TIER_NODE


# -- accounting ----------------------------------------------------------------


def test_cache_stats_rates_sum_to_one_on_success_only_log():
    clock, net, servers, gw = make_gateway()
    report = run_gen(clock, servers[0].publish(b"stats" * 40))
    path = f"/ipfs/{report.root}"
    for _ in range(4):
        gw.handle_get(path)
    stats = gw.cache_stats()
    assert stats["requests"] == 4
    assert stats["front_rate"] == pytest.approx(0.75)
    assert stats["node_rate"] == pytest.approx(0.25)
    assert stats["network_rate"] == 0.0
    assert stats["front_rate"] + stats["node_rate"] + \
        stats["network_rate"] == pytest.approx(1.0)


def test_cache_stats_empty_window_raises():
    _, _, _, gw = make_gateway(n=3)
    with pytest.raises(ValueError):
        gw.cache_stats()


def test_access_log_is_jsonl():
    clock, net, servers, gw = make_gateway()
    report = run_gen(clock, servers[0].publish(b"logged"))
    gw.handle_get(f"/ipfs/{report.root}")
    gw.handle_get("/ipfs/not-a-cid")  # 400s are not logged
    text = gw.access_log_text()
    lines = [ln for ln in text.splitlines() if ln]
    assert len(lines) == 1
    entry = json.loads(lines[0])
    assert entry["cid"] == str(report.root)
    assert entry["tier"] == TIER_NODE and entry["status"] == 200
    assert entry["size"] == len(b"logged")


def test_access_log_empty_is_empty_string():
    _, _, _, gw = make_gateway(n=3)
    assert gw.access_log_text() == ""
