"""Topology parsing and cluster provisioning.

A topology file is plain text: one key=value section per node, sections
separated by blank lines, ``#`` starts a comment::

    id = orderer
    role = Orderer
    address = 127.0.0.1:7050
    mode = tcp
    bandwidth_mbps = 200

Provisioning builds the registry (deterministic per-node keys from the run
seed), wires the transport, and starts services in dependency order: log,
block store, endorsers, orderer, committer.
"""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass, field

from .. import protocol as p
from ..blockstore import BlockStore, BlockStoreService
from ..committer import Committer, PipelineConfig
from ..endorser import Endorser
from ..errors import ChannelClosed, RecvTimeout, TopologyError
from ..identity import Registry, Role, make_scheme
from ..ledger import decode_block, encode_block
from ..orderer import Orderer, OrdererConfig
from ..ordering_log import LogService
from ..statestore import make_state_store
from ..transport import make_network
from ..wire import Version


@dataclass
class NodeSpec:
    node_id: str
    role: Role
    address: tuple[str, int] | None = None
    mode: str = "inproc"
    bandwidth_mbps: float | None = None
    mock: bool = False  # role stub that discards traffic (peer experiments)


def parse_topology(text: str) -> list[NodeSpec]:
    specs: list[NodeSpec] = []
    section: dict[str, str] = {}

    def flush():
        if not section:
            return
        try:
            node_id = section["id"]
            role = Role(section["role"])
        except KeyError as exc:
            raise TopologyError(f"node section missing key {exc}") from exc
        except ValueError as exc:
            raise TopologyError(str(exc)) from exc
        address = None
        if "address" in section:
            host, _, port = section["address"].rpartition(":")
            try:
                address = (host or "127.0.0.1", int(port))
            except ValueError as exc:
                raise TopologyError(f"bad address {section['address']!r}") from exc
        bw = float(section["bandwidth_mbps"]) if "bandwidth_mbps" in section else None
        mock = section.get("mock", "").lower() in ("1", "true", "yes")
        specs.append(
            NodeSpec(node_id, role, address, section.get("mode", "inproc"), bw, mock)
        )
        section.clear()

    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            flush()
            continue
        if "=" not in line:
            raise TopologyError(f"expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        section[key.strip()] = value.strip()
    flush()
    if not specs:
        raise TopologyError("topology defines no nodes")
    ids = [s.node_id for s in specs]
    if len(set(ids)) != len(ids):
        raise TopologyError("duplicate node ids in topology")
    return specs


def load_topology(path: str) -> list[NodeSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_topology(fh.read())


def default_nodes(
    n_endorsers: int = 5,
    include_store: bool = True,
    mode: str = "inproc",
    bandwidth_mbps: float | None = None,
    mock_peers: bool = False,
) -> list[NodeSpec]:
    nodes = [
        NodeSpec("client", Role.CLIENT, mode=mode, bandwidth_mbps=bandwidth_mbps),
        NodeSpec("log", Role.ORDERER, mode=mode, bandwidth_mbps=bandwidth_mbps),
        NodeSpec("orderer", Role.ORDERER, mode=mode, bandwidth_mbps=bandwidth_mbps),
        NodeSpec("committer", Role.COMMITTER, mode=mode, bandwidth_mbps=bandwidth_mbps),
    ]
    for i in range(n_endorsers):
        nodes.append(
            NodeSpec(
                f"endorser{i}", Role.ENDORSER, mode=mode,
                bandwidth_mbps=bandwidth_mbps, mock=mock_peers,
            )
        )
    if include_store:
        nodes.append(
            NodeSpec("store", Role.BLOCK_STORE, mode=mode,
                     bandwidth_mbps=bandwidth_mbps, mock=mock_peers)
        )
    return nodes


class MockSink:
    """Stands in for an endorser or store: accepts VALIDATED and discards."""

    def __init__(self, node_id: str, network):
        self.node_id = node_id
        self.blocks_seen = 0
        self._network = network
        self._listener = None
        self._stop = False

    def start(self) -> None:
        self._listener = self._network.listen(self.node_id)
        threading.Thread(target=self._accept_loop, name=f"{self.node_id}-sink", daemon=True).start()

    def _accept_loop(self) -> None:
        while not self._stop:
            try:
                ch = self._listener.accept()
            except (ChannelClosed, RecvTimeout):
                return
            threading.Thread(target=self._drain, args=(ch,), daemon=True).start()

    def _drain(self, ch) -> None:
        try:
            while True:
                msg_type, _ = ch.recv()
                if msg_type == p.VALIDATED:
                    self.blocks_seen += 1
        except (ChannelClosed, RecvTimeout):
            pass

    def close(self) -> None:
        self._stop = True
        if self._listener is not None:
            self._listener.close()


class BlockFeeder:
    """Plays the orderer's delivery role for pre-built block streams."""

    def __init__(self, node_id: str, network, blocks: list):
        self.node_id = node_id
        self._network = network
        self._encoded = [encode_block(b) if not isinstance(b, bytes) else b for b in blocks]
        self._listener = None
        self._stop = False

    def start(self) -> None:
        self._listener = self._network.listen(self.node_id)
        threading.Thread(target=self._accept_loop, name=f"{self.node_id}-feed", daemon=True).start()

    def _accept_loop(self) -> None:
        while not self._stop:
            try:
                ch = self._listener.accept()
            except (ChannelClosed, RecvTimeout):
                return
            threading.Thread(target=self._serve, args=(ch,), daemon=True).start()

    def _serve(self, ch) -> None:
        try:
            msg_type, body = ch.recv()
            if msg_type != p.DELIVER_REQ:
                ch.close()
                return
            start = max(1, p.unpack_deliver_req(body))
            for encoded in self._encoded[start - 1 :]:
                ch.send(p.BLOCK, encoded)
            # Keep the channel open; the committer decides when it is done.
            while not self._stop:
                ch.recv(timeout=0.5)
        except (ChannelClosed, RecvTimeout):
            pass

    def close(self) -> None:
        self._stop = True
        if self._listener is not None:
            self._listener.close()


@dataclass
class Cluster:
    registry: Registry
    network: object
    keys: dict
    nodes: dict = field(default_factory=dict)
    orderer: Orderer | None = None
    committer: Committer | None = None
    endorsers: list = field(default_factory=list)
    log_service: LogService | None = None
    store_service: BlockStoreService | None = None
    workdir: str = ""

    def key_of(self, node_id: str):
        return self.keys[node_id]

    def close(self) -> None:
        for node in self.nodes.values():
            try:
                node.close()
            except Exception:
                pass
        self.network.close()


def _key_seed(seed: int, node_id: str) -> bytes:
    return hashlib.sha256(f"permchain-key:{seed}:{node_id}".encode()).digest()


def provision(
    specs: list[NodeSpec],
    *,
    sig_mode: str = "ed25519",
    seed: int = 42,
    orderer_config: OrdererConfig | None = None,
    pipeline_config: PipelineConfig | None = None,
    workdir: str = ".",
    accounts: dict[str, bytes] | None = None,
    feeder_blocks: list | None = None,
    channel_id: str = "ch1",
    start: bool = True,
) -> Cluster:
    """Build registry + network + services for a node list.

    `feeder_blocks` replaces the real orderer with a pre-built block stream
    (peer-only experiments).  `accounts` pre-loads the genesis world state
    into the committer and every real endorser.
    """
    by_role: dict[Role, list[NodeSpec]] = {}
    for spec in specs:
        by_role.setdefault(spec.role, []).append(spec)
    if Role.COMMITTER in by_role and len(by_role[Role.COMMITTER]) != 1:
        raise TopologyError("exactly one committer per topology")

    mode = "tcp" if any(s.mode == "tcp" for s in specs) else "inproc"
    addresses = {s.node_id: s.address for s in specs if s.address}
    network = make_network(mode, addresses)
    for spec in specs:
        network.set_bandwidth(spec.node_id, spec.bandwidth_mbps)

    scheme = make_scheme(sig_mode)
    registry = Registry(scheme)
    keys = {}
    for spec in specs:
        key, pub = scheme.keypair(spec.node_id, _key_seed(seed, spec.node_id))
        keys[spec.node_id] = key
        registry.register(spec.node_id, spec.role, pub)

    cluster = Cluster(registry, network, keys, workdir=workdir)
    orderer_config = orderer_config or OrdererConfig()
    pipeline_config = pipeline_config or PipelineConfig()
    os.makedirs(workdir, exist_ok=True)

    # Ordering log (skipped when a feeder stands in for the orderer).
    log_specs = [s for s in specs if s.node_id == "log"]
    if log_specs and feeder_blocks is None:
        svc = LogService("log", network)
        cluster.log_service = svc
        cluster.nodes["log"] = svc

    store_spec = by_role.get(Role.BLOCK_STORE, [None])[0]
    if store_spec is not None:
        if store_spec.mock:
            cluster.nodes[store_spec.node_id] = MockSink(store_spec.node_id, network)
        else:
            store = BlockStore(os.path.join(workdir, f"{store_spec.node_id}_data"))
            svc = BlockStoreService(store_spec.node_id, network, store)
            cluster.store_service = svc
            cluster.nodes[store_spec.node_id] = svc

    for spec in by_role.get(Role.ENDORSER, []):
        if spec.mock:
            cluster.nodes[spec.node_id] = MockSink(spec.node_id, network)
        else:
            endorser = Endorser(spec.node_id, registry, network, keys[spec.node_id], channel_id)
            if accounts:
                endorser.load_genesis(accounts)
            cluster.endorsers.append(endorser)
            cluster.nodes[spec.node_id] = endorser

    orderer_spec = next((s for s in by_role.get(Role.ORDERER, []) if s.node_id != "log"), None)
    if orderer_spec is not None:
        if feeder_blocks is not None:
            feeder = BlockFeeder(orderer_spec.node_id, network, feeder_blocks)
            cluster.nodes[orderer_spec.node_id] = feeder
        else:
            orderer = Orderer(
                orderer_spec.node_id, registry, network, keys[orderer_spec.node_id],
                orderer_config, log_node="log",
            )
            cluster.orderer = orderer
            cluster.nodes[orderer_spec.node_id] = orderer

    committer_spec = by_role.get(Role.COMMITTER, [None])[0]
    if committer_spec is not None:
        cfg = pipeline_config
        backend = "memory" if cfg.opt_p1 else "durable"
        state = make_state_store(backend, os.path.join(workdir, "state.log"))
        if accounts:
            state.apply_writes(accounts.items(), Version(0, 0))
            state.sync()
        local_store = None
        store_id = None
        if store_spec is not None and cfg.opt_p2:
            store_id = store_spec.node_id
        elif not cfg.opt_p2:
            local_store = BlockStore(os.path.join(workdir, "committer_blocks"))
        committer = Committer(
            committer_spec.node_id,
            registry,
            network,
            cfg,
            state,
            orderer_id=orderer_spec.node_id if orderer_spec else "orderer",
            endorser_ids=[s.node_id for s in by_role.get(Role.ENDORSER, [])],
            store_id=store_id,
            local_store=local_store,
            channel_id=channel_id,
        )
        cluster.committer = committer
        cluster.nodes[committer_spec.node_id] = committer

    if start:
        order = [
            cluster.nodes.get("log"),
            cluster.nodes.get(store_spec.node_id) if store_spec else None,
            *[cluster.nodes[s.node_id] for s in by_role.get(Role.ENDORSER, [])],
            cluster.nodes.get(orderer_spec.node_id) if orderer_spec else None,
        ]
        for node in order:
            if node is not None:
                node.start()
        if cluster.committer is not None:
            cluster.committer.start()
    return cluster
