"""Operator entry points.

Subcommands: add, get, daemon, gateway, sim, crawl, report. The sim,
crawl, and report commands are fully offline and reproducible from
(scenario, seed) alone.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

from .gateway import Gateway, GatewayConfig, serve_http
from .merkledag import Block, BlockStore, import_content, reassemble
from .multiformats import FormatError, decode_cid, peer_id_from_public_key
from .node import Node, NodeConfig
from .reports import REPORT_KINDS, load_jsonl, percentile_csv, report
from .simnet.clock import SimClock
from .simnet.network import SimNetwork, SimPeer
from .simnet.scenario import Scenario, run


def _repo_blocks_dir(repo: str) -> str:
    path = os.path.join(repo, "blocks")
    os.makedirs(path, exist_ok=True)
    return path


def _repo_store(repo: str) -> BlockStore:
    store = BlockStore()
    blocks_dir = os.path.join(repo, "blocks")
    if os.path.isdir(blocks_dir):
        for name in sorted(os.listdir(blocks_dir)):
            cid = decode_cid(name)
            with open(os.path.join(blocks_dir, name), "rb") as fh:
                store.put(Block(cid, fh.read()))
    return store


def _repo_dump(repo: str, store: BlockStore) -> None:
    blocks_dir = _repo_blocks_dir(repo)
    for cid in store.cids():
        path = os.path.join(blocks_dir, str(cid))
        if not os.path.exists(path):
            with open(path, "wb") as fh:
                fh.write(store.get(cid).data)


def _standalone_node(repo: str) -> Node:
    """A single offline node over a local repo, for daemon/gateway use."""
    clock = SimClock()
    net = SimNetwork(clock, seed=0)
    pid = peer_id_from_public_key(b"standalone:" + os.fsencode(repo))
    node = Node(pid, net, clock, NodeConfig(role_policy="force-server"))
    net.add_peer(SimPeer(pid, node, "frankfurt",
                         addresses=(f"/ip4/127.0.0.1/tcp/4001/p2p/{pid}",)))
    node.store = _repo_store(repo)
    node.bitswap.store = node.store
    return node


def cmd_add(args) -> int:
    with open(args.path, "rb") as fh:
        content = fh.read()
    store = _repo_store(args.repo)
    root, _ = import_content(store, content, chunk_size=args.chunk_size)
    _repo_dump(args.repo, store)
    print(root)
    return 0


def cmd_get(args) -> int:
    cid = decode_cid(args.cid)
    store = _repo_store(args.repo)
    content = reassemble(store, cid)
    if args.out == "-":
        sys.stdout.buffer.write(content)
    else:
        with open(args.out, "wb") as fh:
            fh.write(content)
    return 0


def _serve(args) -> int:
    node = _standalone_node(args.repo)
    gw = Gateway(node, node.clock,
                 GatewayConfig(front_capacity_bytes=args.cache_bytes))
    print(f"serving /ipfs/{{cid}} on http://{args.listen} "
          f"({len(node.store)} blocks pinned from {args.repo})",
          file=sys.stderr)
    serve_http(gw, args.listen)
    return 0


def cmd_daemon(args) -> int:
    return _serve(args)


def cmd_gateway(args) -> int:
    return _serve(args)


def cmd_sim(args) -> int:
    scenario = Scenario.from_file(args.scenario)
    result = run(scenario, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "events.jsonl"), "w") as fh:
        fh.write(result.log_text())
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(result.metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for key, name in (("publication_percentiles", "publication_percentiles"),
                      ("retrieval_percentiles", "retrieval_percentiles")):
        if key in result.metrics:
            with open(os.path.join(args.out, name + ".csv"), "w") as fh:
                fh.write(percentile_csv(result.metrics[key]))
    print(os.path.join(args.out, "events.jsonl"))
    return 0


def cmd_crawl(args) -> int:
    scenario = Scenario.from_file(args.scenario)
    scenario = Scenario(**{**vars(scenario), "workload": "crawl"})
    result = run(scenario, seed=args.seed)
    summary = result.metrics.get("crawl", {})
    text = "found,dialable,undialable,queried\n" + ",".join(
        str(summary.get(k, 0))
        for k in ("found", "dialable", "undialable", "queried")) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    records = load_jsonl(args.log)
    figure_path = None
    if args.out:
        figure_path = os.path.splitext(args.out)[0] + ".png"
    text = report(args.kind, records, figure_path=figure_path)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cidnet",
        description="Content-addressed storage, DHT routing, and a "
                    "deterministic network simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("add", help="import a file; print its root CID")
    p.add_argument("path")
    p.add_argument("--repo", default=".cidnet")
    p.add_argument("--chunk-size", type=int, default=262144)
    p.set_defaults(fn=cmd_add)

    p = sub.add_parser("get", help="reassemble content from a local repo")
    p.add_argument("cid")
    p.add_argument("--repo", default=".cidnet")
    p.add_argument("--out", default="-")
    p.set_defaults(fn=cmd_get)

    for name, help_text in (("daemon", "run a node with an HTTP gateway"),
                            ("gateway", "serve /ipfs/{cid} over HTTP")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--repo", default=".cidnet")
        p.add_argument("--listen", default="127.0.0.1:8080")
        p.add_argument("--cache-bytes", type=int, default=64 * 1024 * 1024)
        p.set_defaults(fn=cmd_daemon if name == "daemon" else cmd_gateway)

    p = sub.add_parser("sim", help="run a simulator scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sim)

    p = sub.add_parser("crawl", help="crawl a simulated network")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_crawl)

    p = sub.add_parser("report", help="derive tables/figures from a log")
    p.add_argument("--log", required=True)
    p.add_argument("--kind", required=True, choices=REPORT_KINDS)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except (FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
