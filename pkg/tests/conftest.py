"""Shared fixtures and helpers for the test suite."""

import random

import pytest

from cidnet.multiformats import peer_id_from_public_key
from cidnet.node import Node, NodeConfig
from cidnet.simnet.clock import Process, SimClock, unwrap
from cidnet.simnet.network import DEFAULT_REGIONS, SimNetwork, SimPeer
from cidnet.simnet.scenario import Scenario, build_network, converge_tables


def run_gen(clock, gen):
    """Drive a process generator to completion and unwrap its value."""
    proc = Process(clock, gen)
    clock.run()
    return unwrap(proc.value)


def make_network(n_servers, n_clients=0, seed=0, converge=True,
                 config_factory=None):
    """A small hand-built network: every server in every region slot,
    single tcp address each, optionally with converged routing tables.
    Returns (clock, net, servers, clients)."""
    clock = SimClock()
    net = SimNetwork(clock, seed=seed)
    rng = random.Random(seed)
    servers, clients = [], []
    for i in range(n_servers + n_clients):
        pid = peer_id_from_public_key(rng.randbytes(32))
        is_client = i >= n_servers
        if config_factory is not None:
            config = config_factory(is_client)
        else:
            config = NodeConfig(
                role_policy="force-client" if is_client else "force-server")
        node = Node(pid, net, clock, config)
        net.add_peer(SimPeer(
            pid, node, DEFAULT_REGIONS[i % len(DEFAULT_REGIONS)],
            addresses=(f"/ip4/10.0.{i // 250}.{i % 250}/tcp/4001",)))
        (clients if is_client else servers).append(node)
    if converge:
        converge_tables(net, servers)
    return clock, net, servers, clients


def scenario_network(seed=0, **overrides):
    """A network built through the scenario machinery."""
    values = {"seed": str(seed), "workload": "none"}
    values.update({k: str(v) for k, v in overrides.items()})
    scenario = Scenario.from_mapping(values)
    clock = SimClock()
    net, servers, clients = build_network(scenario, clock)
    return clock, net, servers, clients


@pytest.fixture
def rng():
    return random.Random(1234)
