"""Routing table, provider store, RPC handlers, iterative lookups, and
publication, checked against brute-force oracles."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cidnet import wire
from cidnet.kaddht import (ALPHA, AUTONAT_PROBES, AUTONAT_THRESHOLD,
                           BUCKET_COUNT, EXPIRY_INTERVAL, K,
                           REPUBLISH_INTERVAL, DhtError, ProviderStore,
                           ROLE_CLIENT, ROLE_SERVER, RoutingTable,
                           bucket_index, xor_distance)
from cidnet.merkledag import import_content
from cidnet.multiformats import cid_for_data, dht_key, peer_id_from_public_key
from cidnet.simnet.clock import NS_PER_S, Process, unwrap

from conftest import make_network, run_gen

HOUR = 3600 * NS_PER_S


def test_constants():
    assert (K, ALPHA, BUCKET_COUNT) == (20, 3, 256)
    assert EXPIRY_INTERVAL == 24 * HOUR
    assert REPUBLISH_INTERVAL == 12 * HOUR
    assert AUTONAT_PROBES == 8 and AUTONAT_THRESHOLD == 4


# ---------------------------------------------------------------------------
# XOR metric / buckets

@given(st.integers(min_value=0, max_value=2**256 - 1),
       st.integers(min_value=0, max_value=2**256 - 1))
def test_bucket_index_bounds_distance(a, b):
    if a == b:
        with pytest.raises(DhtError):
            bucket_index(a, b)
        return
    i = bucket_index(a, b)
    d = xor_distance(a, b)
    assert 0 <= i < BUCKET_COUNT
    assert 2**i <= d < 2**(i + 1)


def test_routing_table_insert_refresh_reject():
    table = RoutingTable(self_key=0, k=2)
    pids = [peer_id_from_public_key(bytes([i])) for i in range(1, 5)]
    # keys 8..11 share bucket 3
    assert table.insert(pids[0], 8, ("a",), now=1) == "inserted"
    assert table.insert(pids[1], 9, ("b",), now=2) == "inserted"
    assert table.insert(pids[0], 8, ("a2",), now=3) == "refreshed"
    # refresh moved pids[0] to the most-recently-seen end
    assert table.buckets[3][-1].peer_id == pids[0]
    assert table.buckets[3][-1].addrs == ("a2",)
    assert table.insert(pids[2], 10, ("c",), now=4) == "rejected-full"
    assert len(table) == 2


def test_routing_table_evicts_dead_least_recently_seen():
    table = RoutingTable(self_key=0, k=2)
    pids = [peer_id_from_public_key(bytes([i])) for i in range(1, 4)]
    table.insert(pids[0], 8, (), now=1)
    table.insert(pids[1], 9, (), now=2)
    # oldest resident probes dead: newcomer replaces it
    result = table.insert(pids[2], 10, (), now=3, probe=lambda e: False)
    assert result == "inserted"
    assert [e.peer_id for e in table.buckets[3]] == [pids[1], pids[2]]
    # oldest probes alive: newcomer rejected
    pid4 = peer_id_from_public_key(b"\x05")
    assert table.insert(pid4, 11, (), now=4,
                        probe=lambda e: True) == "rejected-full"


def test_routing_table_rejects_self_and_clients():
    table = RoutingTable(self_key=7)
    pid = peer_id_from_public_key(b"x")
    with pytest.raises(DhtError):
        table.insert(pid, 7, (), now=0)
    with pytest.raises(DhtError):
        table.insert(pid, 8, (), now=0, role=ROLE_CLIENT)


def test_closest_matches_brute_force_oracle():
    rng = random.Random(77)
    table = RoutingTable(self_key=rng.getrandbits(256), k=1000)
    entries = []
    for i in range(500):
        key = rng.getrandbits(256)
        pid = peer_id_from_public_key(key.to_bytes(32, "big"))
        table.insert(pid, key, (), now=i)
        entries.append(key)
    for _ in range(20):
        target = rng.getrandbits(256)
        got = [e.key for e in table.closest(target, 20)]
        assert got == sorted(entries, key=lambda k: k ^ target)[:20]


def test_closest_small_table_returns_everything_sorted():
    table = RoutingTable(self_key=0)
    keys = [5, 300, 77, 1 << 200, 42]
    for i, key in enumerate(keys):
        table.insert(peer_id_from_public_key(bytes([i + 1])), key, (), now=0)
    got = [e.key for e in table.closest(60, 20)]
    assert got == sorted(keys, key=lambda k: k ^ 60)


def test_remove():
    table = RoutingTable(self_key=0)
    pid = peer_id_from_public_key(b"gone")
    table.insert(pid, 99, (), now=0)
    table.remove(pid, 99)
    assert len(table) == 0
    table.remove(pid, 99)  # idempotent


# ---------------------------------------------------------------------------
# provider records

def test_provider_record_lifetime_exact():
    store = ProviderStore()
    pid = peer_id_from_public_key(b"provider")
    store.put(1234, pid, ("addr",), now=0)
    assert store.get(1234, 0)
    assert store.get(1234, 24 * HOUR - 1)       # one ns before expiry
    assert store.get(1234, 24 * HOUR) == []     # exact boundary: gone
    assert store.get(1234, 25 * HOUR) == []


def test_provider_reads_never_extend_lifetime():
    store = ProviderStore()
    pid = peer_id_from_public_key(b"provider")
    store.put(1, pid, (), now=0)
    for t in range(0, 24, 6):
        store.get(1, t * HOUR)
    assert store.get(1, 24 * HOUR) == []


def test_provider_republish_resets_expiry():
    store = ProviderStore()
    pid = peer_id_from_public_key(b"provider")
    store.put(1, pid, (), now=0)
    store.put(1, pid, (), now=12 * HOUR)
    assert store.get(1, 30 * HOUR)
    assert store.get(1, 36 * HOUR) == []


def test_provider_store_byte_accounting():
    store = ProviderStore()
    pid = peer_id_from_public_key(b"provider")
    store.put(1, pid, ("addr1",), now=0)
    first = store.record_bytes
    assert first > 0
    store.put(1, pid, ("addr1",), now=5)  # same provider: no double count
    assert store.record_bytes == first


# ---------------------------------------------------------------------------
# RPC handlers

def test_find_node_returns_closest_from_table():
    clock, net, servers, _ = make_network(30, seed=1)
    a, b = servers[0], servers[1]
    target = random.Random(5).getrandbits(256)
    reply = b.dht.handle_rpc(a.peer_id,
                             wire.Message(wire.FIND_NODE,
                                          key=wire.key_bytes(target)))
    assert reply.tag == wire.NODES
    got = [dht_key(pid) for pid, _ in reply.peers]
    table_keys = [e.key for e in b.dht.table.entries()]
    assert got == sorted(table_keys, key=lambda k: k ^ target)[:20]


def test_add_provider_then_get_providers():
    clock, net, servers, _ = make_network(5, seed=2)
    holder, asker = servers[0], servers[1]
    cid = cid_for_data(b"announced")
    key = wire.key_bytes(dht_key(cid))
    provider = servers[2].peer_id
    addrs = ("/ip4/10.0.0.9/tcp/4001",)
    assert holder.dht.handle_rpc(
        provider, wire.Message(wire.ADD_PROVIDER, key=key, peer=provider,
                               addrs=addrs)) is None  # fire and forget
    reply = holder.dht.handle_rpc(asker.peer_id,
                                  wire.Message(wire.GET_PROVIDERS, key=key))
    assert reply.tag == wire.PROVIDERS
    assert reply.peers == ((provider, addrs),)


def test_get_providers_without_records_returns_closer_peers():
    clock, net, servers, _ = make_network(10, seed=3)
    reply = servers[0].dht.handle_rpc(
        servers[1].peer_id,
        wire.Message(wire.GET_PROVIDERS, key=wire.key_bytes(42)))
    assert reply.tag == wire.PROVIDERS and reply.peers == ()
    nested = wire.decode(reply.data)
    assert nested.tag == wire.NODES and len(nested.peers) == 9


def test_find_peer_answers_for_self_and_records():
    clock, net, servers, _ = make_network(4, seed=4)
    a, b = servers[0], servers[1]
    reply = b.dht.handle_rpc(a.peer_id,
                             wire.Message(wire.FIND_PEER, peer=b.peer_id))
    assert reply.tag == wire.PEER_RECORD
    assert reply.addrs == net.peers[b.peer_id].addresses


def test_dump_buckets_lists_whole_table():
    clock, net, servers, _ = make_network(12, seed=5)
    reply = servers[0].dht.handle_rpc(servers[1].peer_id,
                                      wire.Message(wire.DUMP_BUCKETS))
    assert reply.tag == wire.NODES
    assert {pid for pid, _ in reply.peers} == \
        set(servers[0].dht.table.peer_ids())


def test_handler_learns_server_senders_but_not_clients():
    clock, net, servers, clients = make_network(3, n_clients=1, seed=6,
                                                converge=False)
    target = servers[0]
    target.dht.handle_rpc(servers[1].peer_id,
                          wire.Message(wire.DUMP_BUCKETS))
    assert servers[1].peer_id in target.dht.table.peer_ids()
    target.dht.handle_rpc(clients[0].peer_id,
                          wire.Message(wire.DUMP_BUCKETS))
    assert clients[0].peer_id not in target.dht.table.peer_ids()


# ---------------------------------------------------------------------------
# iterative lookups

def test_lookup_in_20_server_network_returns_all():
    clock, net, servers, _ = make_network(20, seed=7)
    src = servers[0]
    result = run_gen(clock, src.dht.iterative_find_peers(
        random.Random(0).getrandbits(256)))
    assert len(result.peers) == 20
    assert {pid for pid, _, _ in result.peers} == \
        {n.peer_id for n in servers}


def test_lookup_for_own_key_puts_that_server_first():
    clock, net, servers, _ = make_network(40, seed=8)
    src, subject = servers[0], servers[17]
    result = run_gen(clock, src.dht.iterative_find_peers(subject.dht.key))
    assert result.peers[0][0] == subject.peer_id


def test_lookup_matches_global_oracle_small():
    clock, net, servers, _ = make_network(120, seed=9)
    keys = sorted(n.dht.key for n in servers)
    rng = random.Random(10)
    for _ in range(10):
        target = rng.getrandbits(256)
        src = servers[rng.randrange(len(servers))]
        result = run_gen(clock, src.dht.iterative_find_peers(target))
        got = sorted(k for _, k, _ in result.peers)
        assert got == sorted(sorted(keys, key=lambda k: k ^ target)[:20])


def test_lookup_progress_is_monotone():
    clock, net, servers, _ = make_network(80, seed=11)
    src = servers[0]
    target = random.Random(3).getrandbits(256)
    result = run_gen(clock, src.dht.iterative_find_peers(target))
    assert result.rounds >= 1
    assert result.queried >= min(20, len(servers) - 1)


def test_lookup_with_empty_table_errors():
    clock, net, servers, _ = make_network(2, seed=12, converge=False)
    with pytest.raises(DhtError):
        run_gen(clock, servers[0].dht.iterative_find_peers(1))


def test_find_providers_early_termination():
    clock, net, servers, _ = make_network(50, seed=13)
    publisher = servers[0]
    root, _ = import_content(publisher.store, b"early-exit body")
    run_gen(clock, publisher.dht.provide(root))
    peer_report = run_gen(clock, publisher.dht.iterative_find_peers(
        dht_key(root)))
    full_walk_queries = peer_report.queried
    seeker = servers[30]
    found = run_gen(clock, seeker.dht.iterative_find_providers(root))
    assert publisher.peer_id in found.providers
    assert found.providers[publisher.peer_id]  # addresses ride along
    assert found.queried <= full_walk_queries


def test_find_providers_not_found():
    clock, net, servers, _ = make_network(25, seed=14)
    found = run_gen(clock, servers[0].dht.iterative_find_providers(
        cid_for_data(b"never published")))
    assert found.providers == {}


# ---------------------------------------------------------------------------
# provide

def test_provide_stores_at_oracle_set():
    clock, net, servers, _ = make_network(60, seed=15)
    src = servers[3]
    root, _ = import_content(src.store, b"provide me")
    report = run_gen(clock, src.dht.provide(root))
    target = dht_key(root)
    keys = {n.peer_id: n.dht.key for n in servers}
    oracle = set(sorted(keys.values(), key=lambda k: k ^ target)[:20])
    assert {keys[p] for p in report.stored_at} == oracle
    assert report.walk_ns > 0 and report.rpc_ns > 0
    # every stored-at node actually holds the record
    by_id = {n.peer_id: n for n in servers}
    for pid in report.stored_at:
        assert by_id[pid].dht.providers.get(target, clock.now)


def test_client_cannot_provide():
    clock, net, servers, clients = make_network(5, n_clients=1, seed=16)
    with pytest.raises(DhtError):
        run_gen(clock, clients[0].dht.provide(cid_for_data(b"nope")))


def test_republish_tick_reprovides_due_pins():
    clock, net, servers, _ = make_network(25, seed=17)
    src = servers[0]
    root, _ = import_content(src.store, b"republished")
    src.pins[root.encode_bytes()] = root
    due = run_gen(clock, src.dht.republish_tick())
    assert due == [root]  # never provided before: due immediately
    due = run_gen(clock, src.dht.republish_tick())
    assert due == []      # just provided: not due again yet


# ---------------------------------------------------------------------------
# role machinery

@pytest.mark.parametrize("successes,expected", [
    (8, ROLE_SERVER), (4, ROLE_SERVER), (3, ROLE_CLIENT), (0, ROLE_CLIENT),
])
def test_autonat_threshold(successes, expected):
    clock, net, servers, _ = make_network(3, seed=18)
    node = servers[0]
    outcomes = [True] * successes + [False] * (AUTONAT_PROBES - successes)
    role = run_gen(clock, node.dht.autonat_probe(scripted=outcomes))
    assert role == expected
    assert node.dht.role == expected
