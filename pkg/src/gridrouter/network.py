"""Domain model for grid energy router (GER) networks.

Value types for router nodes, their R-layer ports and B-layer energy
buffers, the sharing topology and the two-timescale grid, plus validation
of an assembled network instance.

Units are fixed throughout the package: power in kW, energy in kWh,
durations in hours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MASTER = "master"
SLAVE = "slave"


@dataclass(frozen=True)
class Violation:
    """One structural problem found during validation.

    ``where`` identifies the offending node/field (or "topology"),
    ``message`` says what is wrong with it.
    """

    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.where}: {self.message}"


class NetworkValidationError(ValueError):
    """Raised when a network instance violates a structural invariant."""

    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        super().__init__(
            "invalid network: " + "; ".join(str(v) for v in self.violations)
        )


@dataclass(frozen=True)
class BufferSpec:
    """B-layer energy buffer: state bounds, power rating and efficiencies."""

    e_min: float
    e_max: float
    p_rate: float
    eta_ch: float
    eta_dis: float
    e_init: float

    def violations(self, where: str = "buffer") -> list[Violation]:
        out = []
        if not (0.0 <= self.e_min < self.e_max):
            out.append(Violation(f"{where}.e_min/e_max",
                                 f"need 0 <= e_min < e_max, got [{self.e_min}, {self.e_max}]"))
        if not self.p_rate > 0.0:
            out.append(Violation(f"{where}.p_rate", f"must be > 0, got {self.p_rate}"))
        if not (0.0 < self.eta_ch <= 1.0):
            out.append(Violation(f"{where}.eta_ch", f"must be in (0, 1], got {self.eta_ch}"))
        if not (0.0 < self.eta_dis <= 1.0):
            out.append(Violation(f"{where}.eta_dis", f"must be in (0, 1], got {self.eta_dis}"))
        if not (self.e_min <= self.e_init <= self.e_max):
            out.append(Violation(f"{where}.e_init", "e_init out of bounds"))
        return out

    def in_bounds(self, e, tol: float = 0.0):
        """True where energy e lies in [e_min, e_max] (within tol)."""
        return (e >= self.e_min - tol) & (e <= self.e_max + tol)


@dataclass(frozen=True)
class RouterPort:
    """R-layer port: rating, comfort fraction and objective weight.

    ``weight`` of None means "derive from the owning node's role":
    1/alpha on a master node, 0 on a slave.
    """

    id: str
    p_rate: float
    alpha: float
    weight: float | None = None

    def violations(self, where: str) -> list[Violation]:
        out = []
        if not self.p_rate > 0.0:
            out.append(Violation(f"{where}.p_rate", f"must be > 0, got {self.p_rate}"))
        if self.alpha < 0.0:
            out.append(Violation(f"{where}.alpha", f"must be >= 0, got {self.alpha}"))
        return out


@dataclass(frozen=True)
class GerNode:
    """One grid energy router, reduced to its dispatch-relevant surface.

    ``gamma`` (weight on the power-balance residual in the dispatch
    objective) of None derives from the role: 0 for a master, 1 for a
    slave.
    """

    id: str
    role: str
    ports: tuple[RouterPort, ...]
    buffer: BufferSpec
    gamma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "ports", tuple(self.ports))

    @property
    def is_master(self) -> bool:
        return self.role == MASTER

    @property
    def balance_weight(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return 0.0 if self.is_master else 1.0

    def port_ratings(self) -> np.ndarray:
        return np.array([p.p_rate for p in self.ports], dtype=float)

    def port_alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.ports], dtype=float)

    def port_weights(self) -> np.ndarray:
        """Objective weights per port, derived from role where unset."""
        out = np.empty(len(self.ports))
        for i, p in enumerate(self.ports):
            if p.weight is not None:
                out[i] = p.weight
            elif self.is_master:
                if p.alpha <= 0.0:
                    raise NetworkValidationError([Violation(
                        f"node {self.id}.ports[{p.id}].alpha",
                        "master port needs alpha > 0 (weight 1/alpha undefined)")])
                out[i] = 1.0 / p.alpha
            else:
                out[i] = 0.0
        return out

    def violations(self) -> list[Violation]:
        where = f"node {self.id}"
        out = []
        if self.role not in (MASTER, SLAVE):
            out.append(Violation(f"{where}.role", f"unknown role {self.role!r}"))
            return out
        out.extend(self.buffer.violations(f"{where}.buffer"))
        seen = set()
        for p in self.ports:
            pwhere = f"{where}.ports[{p.id}]"
            if p.id in seen:
                out.append(Violation(pwhere, "duplicate port id"))
            seen.add(p.id)
            out.extend(p.violations(pwhere))
            if self.is_master and p.alpha <= 0.0:
                out.append(Violation(f"{pwhere}.alpha",
                                     "master port needs alpha > 0"))
            if p.weight is not None:
                if self.is_master and p.alpha > 0.0:
                    if not math.isclose(p.weight, 1.0 / p.alpha, rel_tol=1e-9):
                        out.append(Violation(f"{pwhere}.weight",
                                             f"master port weight must be 1/alpha = {1.0 / p.alpha}"))
                if not self.is_master and p.weight != 0.0:
                    out.append(Violation(f"{pwhere}.weight",
                                         "slave port weight must be 0"))
        if self.gamma is not None:
            expected = 0.0 if self.is_master else 1.0
            if self.gamma != expected:
                out.append(Violation(f"{where}.gamma",
                                     f"{self.role} node requires gamma = {expected}"))
        return out


class Topology:
    """Undirected sharing graph over node ids (symmetric 0/1 adjacency)."""

    def __init__(self, node_ids, adjacency):
        self.node_ids = tuple(node_ids)
        self.adjacency = np.asarray(adjacency, dtype=float)
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}

    @classmethod
    def from_edges(cls, node_ids, edges) -> "Topology":
        node_ids = tuple(node_ids)
        index = {nid: i for i, nid in enumerate(node_ids)}
        a = np.zeros((len(node_ids), len(node_ids)))
        for u, v in edges:
            if u not in index or v not in index:
                raise NetworkValidationError([Violation(
                    "topology", f"edge ({u}, {v}) references unknown node")])
            a[index[u], index[v]] = 1.0
            a[index[v], index[u]] = 1.0
        return cls(node_ids, a)

    def index(self, node_id: str) -> int:
        return self._index[node_id]

    def neighbors(self, node_id: str) -> list[str]:
        i = self._index[node_id]
        return [self.node_ids[j] for j in np.flatnonzero(self.adjacency[i] > 0)]

    def edges(self) -> list[tuple[str, str]]:
        out = []
        n = len(self.node_ids)
        for i in range(n):
            for j in range(i + 1, n):
                if self.adjacency[i, j] > 0:
                    out.append((self.node_ids[i], self.node_ids[j]))
        return out

    def violations(self) -> list[Violation]:
        out = []
        a = self.adjacency
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            out.append(Violation("topology", "duplicate node id"))
        if a.shape != (n, n):
            out.append(Violation("topology",
                                 f"adjacency shape {a.shape} does not match {n} nodes"))
            return out
        if np.any(np.diag(a) != 0):
            out.append(Violation("topology", "nonzero diagonal"))
        if not np.array_equal(a, a.T):
            out.append(Violation("topology", "asymmetric adjacency"))
        if not np.all((a == 0) | (a == 1)):
            out.append(Violation("topology", "adjacency entries must be 0 or 1"))
        return out

    def __eq__(self, other):
        return (isinstance(other, Topology)
                and self.node_ids == other.node_ids
                and np.array_equal(self.adjacency, other.adjacency))

    def __repr__(self):
        return f"Topology({len(self.node_ids)} nodes, {int(self.adjacency.sum() / 2)} edges)"


@dataclass(frozen=True)
class TimeGrid:
    """The two timescales: dispatch step, tracking step and horizon length."""

    dt_dispatch: float
    dt_track: float
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.dt_dispatch <= 0 or self.dt_track <= 0:
            raise ValueError("time steps must be positive")
        ratio = self.dt_dispatch / self.dt_track
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"dt_dispatch ({self.dt_dispatch} h) must be an integer multiple "
                f"of dt_track ({self.dt_track} h)")

    @property
    def substeps(self) -> int:
        """Tracking sub-steps per dispatch step."""
        return round(self.dt_dispatch / self.dt_track)


def u_layer_power(dpv, dwt, dload, refs, literal: bool = False) -> float:
    """Net U-layer power for one dispatch step.

    Default (sign-corrected) form: sum(dpv) + sum(dwt) - dload - sum(refs),
    which makes the variation-free baseline (ports at their references,
    buffer idle) satisfy the node power balance exactly. ``literal=True``
    selects the +sum(refs) form instead.
    """
    vals = list(np.atleast_1d(dpv)) + list(np.atleast_1d(dwt)) + [dload] + list(np.atleast_1d(refs))
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("u_layer_power requires finite inputs")
    total = float(np.sum(dpv)) + float(np.sum(dwt)) - float(dload)
    ref_sum = float(np.sum(refs))
    return total + ref_sum if literal else total - ref_sum


@dataclass(frozen=True)
class NodeProfile:
    """Per-dispatch-step series for a single node.

    ``ref`` has one column per port (order given by ``port_ids``); the
    variation and exogenous series are one value per step.
    """

    port_ids: tuple[str, ...]
    ref: np.ndarray      # (T, n_ports)
    dpv: np.ndarray      # (T,)
    dwt: np.ndarray
    dload: np.ndarray
    pm: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "port_ids", tuple(self.port_ids))
        for name in ("ref", "dpv", "dwt", "dload", "pm"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        T = self.ref.shape[0]
        if self.ref.ndim != 2 or self.ref.shape[1] != len(self.port_ids):
            raise ValueError(f"ref must be (T, {len(self.port_ids)}), got {self.ref.shape}")
        for name in ("dpv", "dwt", "dload", "pm"):
            arr = getattr(self, name)
            if arr.shape != (T,):
                raise ValueError(f"{name} length {arr.shape} != horizon {T}")
        for name in ("ref", "dpv", "dwt", "dload", "pm"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"profile series {name} contains non-finite values")

    def __len__(self) -> int:
        return self.ref.shape[0]

    def u_series(self, literal: bool = False) -> np.ndarray:
        """U-layer power per step, with the exogenous pm series folded in."""
        ref_sum = self.ref.sum(axis=1)
        base = self.dpv + self.dwt - self.dload
        u = base + ref_sum if literal else base - ref_sum
        return u + self.pm

    def window(self, start: int, length: int) -> "NodeProfile":
        if start < 0 or start + length > len(self):
            raise ValueError(
                f"profile window [{start}, {start + length}) outside 0..{len(self)}")
        sl = slice(start, start + length)
        return NodeProfile(self.port_ids, self.ref[sl], self.dpv[sl],
                           self.dwt[sl], self.dload[sl], self.pm[sl])

    @classmethod
    def constant(cls, port_ids, refs, horizon: int) -> "NodeProfile":
        """Flat references, zero variations; handy baseline."""
        refs = np.asarray(refs, dtype=float)
        zeros = np.zeros(horizon)
        return cls(tuple(port_ids), np.tile(refs, (horizon, 1)),
                   zeros, zeros.copy(), zeros.copy(), zeros.copy())


@dataclass(frozen=True)
class Profiles:
    """Dispatch-step profiles for every node, with a shared horizon."""

    by_node: dict[str, NodeProfile]
    horizon: int

    def __post_init__(self):
        for nid, prof in self.by_node.items():
            if len(prof) != self.horizon:
                raise ValueError(
                    f"profile for node {nid} has {len(prof)} steps, expected {self.horizon}")

    def for_node(self, node_id: str) -> NodeProfile:
        return self.by_node[node_id]


@dataclass(frozen=True, eq=False)
class Network:
    """A validated set of GER nodes plus their sharing topology."""

    nodes: tuple[GerNode, ...]
    topology: Topology

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def node(self, node_id: str) -> GerNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def __eq__(self, other):
        return (isinstance(other, Network)
                and self.nodes == other.nodes
                and self.topology == other.topology)


def network_violations(nodes, topology: Topology) -> list[Violation]:
    """Every invariant violation in the proposed network, empty if valid."""
    out = []
    seen = set()
    for n in nodes:
        if n.id in seen:
            out.append(Violation(f"node {n.id}", "duplicate id"))
        seen.add(n.id)
        out.extend(n.violations())
    out.extend(topology.violations())
    if set(topology.node_ids) != seen:
        out.append(Violation(
            "topology",
            f"node set mismatch: topology has {sorted(topology.node_ids)}, "
            f"nodes are {sorted(seen)}"))
    return out


def validate_network(nodes, topology: Topology) -> Network:
    """Check every invariant and return the assembled network.

    Raises NetworkValidationError carrying the full list of violations
    otherwise. Validating an already validated network's parts returns an
    equal network (idempotent).
    """
    violations = network_violations(nodes, topology)
    if violations:
        raise NetworkValidationError(violations)
    return Network(tuple(nodes), topology)
