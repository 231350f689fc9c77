"""Network modelling and AC power flow.

Buses are identified by 1-based ids ``1..n``. Every per-bus array in this
module is indexed by ``id - 1``. All quantities are per unit; angles are in
radians except in the case-file format, which stores the slack angle in
degrees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    CaseFormatError,
    ConvergenceError,
    NetworkValidationError,
    SingularJacobianError,
)

BUS_TYPES = ("slack", "PQ")
R_RANGE = (0.005, 0.05)
X_RANGE = (0.01, 0.1)


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0


@dataclass(frozen=True)
class Network:
    """Single-phase equivalent network with one slack bus and PQ buses.

    ``bus_types[k]`` is the type of bus ``k + 1``. The constructor validates
    the structural invariants and raises :class:`NetworkValidationError`.
    """

    n: int
    bus_types: tuple
    branches: tuple
    slack_bus: int = 1
    slack_v: float = 1.0
    slack_theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bus_types", tuple(self.bus_types))
        object.__setattr__(self, "branches", tuple(self.branches))
        _validate(self)

    @property
    def buses(self):
        return [(k + 1, t) for k, t in enumerate(self.bus_types)]

    @property
    def pq_buses(self):
        return [k + 1 for k, t in enumerate(self.bus_types) if t == "PQ"]

    def adjacency(self):
        """Map bus id -> sorted list of neighbouring bus ids."""
        adj = {k: set() for k in range(1, self.n + 1)}
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        return {k: sorted(v) for k, v in adj.items()}

    def degree(self, bus):
        return len(self.adjacency()[bus])

    def leaves(self):
        """Non-slack buses with exactly one neighbour."""
        adj = self.adjacency()
        return [k for k in adj if k != self.slack_bus and len(adj[k]) == 1]


def _validate(net: Network) -> None:
    if net.n < 1:
        raise NetworkValidationError("network needs at least one bus")
    if len(net.bus_types) != net.n:
        raise NetworkValidationError(
            f"expected {net.n} bus types, got {len(net.bus_types)}")
    bad = [t for t in net.bus_types if t not in BUS_TYPES]
    if bad:
        raise NetworkValidationError(f"unknown bus type(s) {bad}")
    slacks = [k + 1 for k, t in enumerate(net.bus_types) if t == "slack"]
    if len(slacks) != 1:
        raise NetworkValidationError(f"exactly one slack bus required, found {len(slacks)}")
    if slacks[0] != net.slack_bus:
        raise NetworkValidationError(
            f"slack designation {net.slack_bus} disagrees with bus types ({slacks[0]})")
    if not net.slack_v > 0:
        raise NetworkValidationError("slack voltage magnitude must be positive")
    seen = set()
    for br in net.branches:
        for end in (br.from_bus, br.to_bus):
            if not 1 <= end <= net.n:
                raise NetworkValidationError(f"branch endpoint {end} outside 1..{net.n}")
        if br.from_bus == br.to_bus:
            raise NetworkValidationError(f"self-loop branch at bus {br.from_bus}")
        if br.r < 0:
            raise NetworkValidationError(f"negative resistance on branch {br.from_bus}-{br.to_bus}")
        key = frozenset((br.from_bus, br.to_bus))
        if key in seen:
            raise NetworkValidationError(f"duplicate branch {br.from_bus}-{br.to_bus}")
        seen.add(key)
    # connectivity
    adj = {k: [] for k in range(1, net.n + 1)}
    for br in net.branches:
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    stack, reached = [net.slack_bus], {net.slack_bus}
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in reached:
                reached.add(nb)
                stack.append(nb)
    if len(reached) != net.n:
        missing = sorted(set(adj) - reached)
        raise NetworkValidationError(f"network is disconnected; unreachable buses {missing}")


@dataclass(frozen=True)
class OperatingPoint:
    """Voltage phasors and net injections at every bus for one instant."""

    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iterations: int = 0
    mismatch: float = 0.0
    controller_q: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class DroopController:
    """Volt/var droop: reactive injection at ``bus`` driven by the mean
    voltage magnitude over ``signal_buses``."""

    bus: int
    signal_buses: tuple
    coefficient: float
    setpoint: float = 1.0
    deadband: float = 0.0
    q_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "signal_buses", tuple(self.signal_buses))
        if not self.signal_buses:
            raise ValueError("signal_buses must be non-empty")
        if self.coefficient < 0:
            raise ValueError("droop coefficient must be >= 0")
        if self.deadband < 0:
            raise ValueError("deadband must be >= 0")
        if not self.q_max > 0:
            raise ValueError("q_max must be > 0")


# --------------------------------------------------------------------------
# case files

def load_case(document: str) -> Network:
    """Parse a JSON case document into a validated :class:`Network`."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"case document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseFormatError("case document must be a JSON object")
    if "slack" not in doc:
        raise NetworkValidationError("case document has no slack designation")
    try:
        n = _as_int(doc["n"], "n")
        slack = doc["slack"]
        slack_bus = _as_int(slack["bus"], "slack.bus")
        slack_v = _as_float(slack.get("v", 1.0), "slack.v")
        slack_theta = math.radians(_as_float(slack.get("theta_deg", 0.0), "slack.theta_deg"))
        types = ["PQ"] * n
        ids = set()
        for entry in doc.get("buses", []):
            bid = _as_int(entry["id"], "buses.id")
            if bid in ids:
                raise NetworkValidationError(f"duplicate bus id {bid}")
            if not 1 <= bid <= n:
                raise NetworkValidationError(f"bus id {bid} outside 1..{n}")
            ids.add(bid)
            types[bid - 1] = str(entry.get("type", "PQ"))
        if ids and ids != set(range(1, n + 1)):
            raise NetworkValidationError("bus ids must be dense 1..n")
        if not ids and 1 <= slack_bus <= n:
            types[slack_bus - 1] = "slack"
        branches = [
            Branch(
                _as_int(b["from"], "branches.from"),
                _as_int(b["to"], "branches.to"),
                _as_float(b["r"], "branches.r"),
                _as_float(b["x"], "branches.x"),
                _as_float(b.get("b_shunt", 0.0), "branches.b_shunt"),
            )
            for b in doc.get("branches", [])
        ]
    except KeyError as exc:
        raise CaseFormatError(f"missing field {exc}") from exc
    except TypeError as exc:
        raise CaseFormatError(f"malformed case structure: {exc}") from exc
    return Network(n, tuple(types), tuple(branches), slack_bus, slack_v, slack_theta)


def _as_int(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise CaseFormatError(f"field {name!r} must be an integer, got {value!r}")
    return int(value)


def _as_float(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise CaseFormatError(f"field {name!r} must be a finite number, got {value!r}")
    return float(value)


def dump_case(network: Network) -> str:
    doc = {
        "n": network.n,
        "slack": {
            "bus": network.slack_bus,
            "v": network.slack_v,
            "theta_deg": math.degrees(network.slack_theta),
        },
        "buses": [{"id": i, "type": t} for i, t in network.buses],
        "branches": [
            {"from": b.from_bus, "to": b.to_bus, "r": b.r, "x": b.x, "b_shunt": b.b_shunt}
            for b in network.branches
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def load_case_file(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return load_case(fh.read())


def builtin_case(name: str = "feeder8") -> Network:
    """Load a case shipped with the package (currently ``feeder8``)."""
    res = resources.files("gridmap.data").joinpath(f"{name}.json")
    if not res.is_file():
        raise ValueError(f"no bundled case named {name!r}")
    return load_case(res.read_text(encoding="utf-8"))


def generate_feeder(n: int, topology: str = "radial", seed: int = 0) -> Network:
    """Random feeder rooted at slack bus 1.

    The radial base is a random recursive tree: bus ``k`` hangs off a bus
    drawn uniformly from ``1..k-1``. ``mesh`` adds ``ceil(n/20) + 1`` extra
    branches between non-adjacent bus pairs (fewer if the graph runs out of
    such pairs).
    """
    if n < 2:
        raise ValueError("a feeder needs at least 2 buses")
    if topology not in ("radial", "mesh"):
        raise ValueError(f"unknown topology {topology!r}")
    rng = np.random.default_rng(seed)
    edges = [(int(rng.integers(1, k)), k) for k in range(2, n + 1)]
    if topology == "mesh":
        present = {frozenset(e) for e in edges}
        candidates = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)
                      if frozenset((a, b)) not in present]
        n_extra = min(math.ceil(n / 20) + 1, len(candidates))
        if n_extra:
            picks = rng.choice(len(candidates), size=n_extra, replace=False)
            edges.extend(candidates[i] for i in sorted(picks))
    r = rng.uniform(*R_RANGE, size=len(edges))
    x = rng.uniform(*X_RANGE, size=len(edges))
    branches = tuple(Branch(a, b, float(ri), float(xi)) for (a, b), ri, xi in zip(edges, r, x))
    types = ("slack",) + ("PQ",) * (n - 1)
    return Network(n, types, branches)


# --------------------------------------------------------------------------
# admittance and injections

def build_admittance(network: Network) -> np.ndarray:
    """Bus admittance matrix ``Y = G + jB`` (read-only complex array)."""
    Y = np.zeros((network.n, network.n), dtype=complex)
    for br in network.branches:
        z = complex(br.r, br.x)
        if z == 0:
            raise ValueError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        y = 1.0 / z
        i, k = br.from_bus - 1, br.to_bus - 1
        half_shunt = 0.5j * br.b_shunt
        Y[i, i] += y + half_shunt
        Y[k, k] += y + half_shunt
        Y[i, k] -= y
        Y[k, i] -= y
    Y.flags.writeable = False
    return Y


def _check_state(Y, *vectors):
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise ValueError(f"admittance must be square, got shape {Y.shape}")
    n = Y.shape[0]
    out = []
    for vec in vectors:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (n,):
            raise ValueError(f"expected vector of length {n}, got shape {vec.shape}")
        out.append(vec)
    return Y, out


def evaluate_injections(Y, v, theta):
    """Net injections ``(p, q)`` from polar voltages."""
    Y, (v, theta) = _check_state(Y, v, theta)
    if np.any(v <= 0):
        raise ValueError("voltage magnitudes must be positive")
    V = v * np.exp(1j * theta)
    S = V * np.conj(Y @ V)
    return S.real.copy(), S.imag.copy()


def evaluate_injections_rect(Y, x):
    """Net injections from the rectangular state ``x = [u; w]``."""
    Y = np.asarray(Y)
    n = Y.shape[0]
    x = np.asarray(x, dtype=float)
    if x.shape != (2 * n,):
        raise ValueError(f"expected state of length {2 * n}, got shape {x.shape}")
    u, w = x[:n], x[n:]
    G, B = Y.real, Y.imag
    Gu, Gw, Bu, Bw = G @ u, G @ w, B @ u, B @ w
    p = u * Gu + w * Gw + w * Bu - u * Bw
    q = w * Gu - u * Gw - u * Bu - w * Bw
    return p, q


def power_flow_jacobian(Y, v, theta):
    """Full ``2n x 2n`` Jacobian ``d[p; q] / d[theta; v]``."""
    Y, (v, theta) = _check_state(Y, v, theta)
    V = v * np.exp(1j * theta)
    I = Y @ V
    Vnorm = np.exp(1j * theta)
    dS_dVm = np.diag(V) @ np.conj(Y * Vnorm[None, :]) + np.diag(np.conj(I) * Vnorm)
    dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(I) - Y * V[None, :])
    return np.block([[dS_dVa.real, dS_dVm.real], [dS_dVa.imag, dS_dVm.imag]])


# --------------------------------------------------------------------------
# droop control

def droop_output(controller: DroopController, v) -> float:
    v = np.asarray(v, dtype=float)
    err = _droop_error(controller, v)
    if abs(err) <= controller.deadband:
        return 0.0
    q = -controller.coefficient * (err - math.copysign(controller.deadband, err))
    return float(np.clip(q, -controller.q_max, controller.q_max))


def _droop_error(controller, v):
    idx = np.asarray(controller.signal_buses) - 1
    if np.any(idx < 0) or np.any(idx >= v.shape[0]):
        raise ValueError(f"signal bus ids {controller.signal_buses} out of range 1..{v.shape[0]}")
    return float(v[idx].mean()) - controller.setpoint


def _droop_slope(controller, v):
    """d q' / d |v_j| for each signal bus (zero inside deadband or saturation)."""
    err = _droop_error(controller, v)
    if abs(err) <= controller.deadband:
        return 0.0
    q = -controller.coefficient * (err - math.copysign(controller.deadband, err))
    if abs(q) >= controller.q_max:
        return 0.0
    return -controller.coefficient / len(controller.signal_buses)


# --------------------------------------------------------------------------
# Newton-Raphson

def solve_power_flow(Y, p_spec, q_spec, slack=0, slack_v=1.0, slack_theta=0.0,
                     init=None, tol=1e-8, max_iter=30):
    """Newton-Raphson on an arbitrary admittance matrix.

    ``slack`` is a 0-based row index here. Useful for Kron-reduced matrices
    that have no branch representation.
    """
    return _newton(np.asarray(Y), slack, slack_v, slack_theta, p_spec, q_spec,
                   (), init, tol, max_iter)


def solve_newton_raphson(network: Network, p_spec, q_spec,
                         controllers: Sequence[DroopController] = (),
                         init=None, tol: float = 1e-8, max_iter: int = 30) -> OperatingPoint:
    """Solve the power flow of ``network`` for the given PQ injections.

    ``p_spec``/``q_spec`` are length-``n`` arrays; slack entries are ignored.
    Droop controllers add their output to ``q_spec`` at their bus, evaluated
    at the current iterate. The returned point's ``q`` is the network
    injection (specification plus controller output).
    """
    Y = build_admittance(network)
    for ctrl in controllers:
        if not 1 <= ctrl.bus <= network.n or ctrl.bus == network.slack_bus:
            raise ValueError(f"controller bus {ctrl.bus} must be a PQ bus")
    return _newton(Y, network.slack_bus - 1, network.slack_v, network.slack_theta,
                   p_spec, q_spec, tuple(controllers), init, tol, max_iter)


def _newton(Y, slack, slack_v, slack_theta, p_spec, q_spec, controllers, init, tol, max_iter):
    n = Y.shape[0]
    p_spec = np.asarray(p_spec, dtype=float)
    q_spec = np.asarray(q_spec, dtype=float)
    if p_spec.shape != (n,) or q_spec.shape != (n,):
        raise ValueError(f"p_spec and q_spec must have length {n}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    pq = np.array([k for k in range(n) if k != slack], dtype=int)
    npq = pq.size

    if init is None:
        v = np.full(n, float(slack_v))
        theta = np.full(n, float(slack_theta))
    else:
        v0, th0 = (init.v, init.theta) if isinstance(init, OperatingPoint) else init
        v = np.array(v0, dtype=float)
        theta = np.array(th0, dtype=float)
    v[slack], theta[slack] = slack_v, slack_theta

    def controller_q(vm):
        extra = np.zeros(n)
        for ctrl in controllers:
            extra[ctrl.bus - 1] += droop_output(ctrl, vm)
        return extra

    mismatch = np.inf
    for it in range(max_iter + 1):
        p, q = evaluate_injections(Y, v, theta)
        q_ctrl = controller_q(v)
        F = np.concatenate([p[pq] - p_spec[pq], q[pq] - q_spec[pq] - q_ctrl[pq]])
        mismatch = float(np.max(np.abs(F))) if npq else 0.0
        if not np.isfinite(mismatch):
            break
        if mismatch < tol:
            return OperatingPoint(v, theta, p, q, iterations=it, mismatch=mismatch,
                                  controller_q=q_ctrl)
        if it == max_iter:
            break
        J = power_flow_jacobian(Y, v, theta)
        for ctrl in controllers:
            slope = _droop_slope(ctrl, v)
            if slope:
                row = n + ctrl.bus - 1
                for sb in ctrl.signal_buses:
                    J[row, n + sb - 1] -= slope
        cols = np.concatenate([pq, n + pq])
        Jr = J[np.ix_(cols, cols)]
        try:
            dx = np.linalg.solve(Jr, -F)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(
                f"singular Jacobian at iteration {it}", iterations=it, mismatch=mismatch) from exc
        theta[pq] += dx[:npq]
        v[pq] += dx[npq:]
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ConvergenceError(
                f"voltage collapse at iteration {it + 1}", iterations=it + 1, mismatch=mismatch)
    raise ConvergenceError(
        f"no convergence within {max_iter} iterations (mismatch {mismatch:.3e})",
        iterations=max_iter, mismatch=mismatch)


# --------------------------------------------------------------------------
# Kron reduction

def retained_buses(n: int, hidden: Iterable[int]) -> list:
    hidden = set(hidden)
    bad = [h for h in hidden if not 1 <= h <= n]
    if bad:
        raise ValueError(f"hidden bus ids {bad} outside 1..{n}")
    kept = [k for k in range(1, n + 1) if k not in hidden]
    if not kept:
        raise ValueError("cannot hide every bus")
    return kept


def kron_reduce(Y, hidden: Iterable[int]) -> np.ndarray:
    """Eliminate ``hidden`` buses by Schur complement.

    The result is indexed by the retained bus ids in ascending order (see
    :func:`retained_buses`).
    """
    Y = np.asarray(Y)
    n = Y.shape[0]
    keep = np.array(retained_buses(n, hidden)) - 1
    drop = np.array(sorted(set(hidden)), dtype=int) - 1
    if drop.size == 0:
        out = Y.copy()
    else:
        Yhh = Y[np.ix_(drop, drop)]
        if np.linalg.cond(Yhh) > 1e12:
            raise np.linalg.LinAlgError("hidden-bus block Y_hh is singular")
        out = Y[np.ix_(keep, keep)] - Y[np.ix_(keep, drop)] @ np.linalg.solve(Yhh, Y[np.ix_(drop, keep)])
        out = 0.5 * (out + out.T)
    out.flags.writeable = False
    return out
