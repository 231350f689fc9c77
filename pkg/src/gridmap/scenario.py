"""Synthetic telemetry: load series, solved operating points, measurement
corruption, bus masking and temporal splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConvergenceError
from .grid import Network, OperatingPoint, solve_newton_raphson

HOURS_PER_WEEK = 168
MEASURED_FIELDS = ("v", "theta", "p", "q")
CSV_COLUMNS = ("t", "bus", "v", "theta", "p", "q", "observed", "corrupted")


@dataclass(frozen=True)
class LoadProfile:
    """Shape of the synthetic demand.

    ``base_load`` is the mean consumption per PQ bus (scalar or one value per
    bus id 1..n; the slack entry is ignored). Each bus follows a daily
    sinusoid with a random phase, a weekly modulation and multiplicative
    jitter. A ``der_fraction`` share of buses carries a solar-like generator
    that can flip the sign of the net injection around noon. Real
    injections are clipped to ``[p_min, p_max]``. Reactive injections
    follow the power factor, optionally scaled per sample by
    ``1 + reactive_jitter * z``.
    """

    base_load: float | tuple = 0.5
    power_factor: float = 0.95
    daily_amplitude: float = 0.3
    weekly_amplitude: float = 0.1
    jitter: float = 0.2
    der_fraction: float = 0.0
    der_peak: float = 1.5
    p_min: float = -1.0
    p_max: float = 0.0
    reactive_jitter: float = 0.0

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise ValueError("p_min must not exceed p_max")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power factor must lie in (0, 1]")
        if not 0 <= self.der_fraction <= 1:
            raise ValueError("der_fraction must lie in [0, 1]")
        if self.reactive_jitter < 0:
            raise ValueError("reactive_jitter must be >= 0")

    @property
    def q_ratio(self) -> float:
        return math.tan(math.acos(self.power_factor))

    @property
    def peak_factor(self) -> float:
        return 1.0 + self.daily_amplitude + self.weekly_amplitude + 2.0 * self.jitter


@dataclass(frozen=True)
class InjectionSeries:
    """Specified injections, ``(T, n)`` arrays indexed by bus id - 1."""

    p: np.ndarray
    q: np.ndarray

    @property
    def T(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Time-indexed measurements restricted to ``bus_ids``.

    Arrays are ``(T, m)`` with columns in ``bus_ids`` order. Unobserved buses
    are absent by construction. ``q`` is the network injection;
    ``controller_q`` holds the part produced by droop controllers, which a
    customer meter does not see (use :attr:`metered_q`). ``corrupted``
    holds 0-based sample indices of injected outliers and is bookkeeping
    for evaluation only.
    """

    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    bus_ids: tuple
    n_buses: int
    timestamps: np.ndarray
    corrupted: frozenset = frozenset()
    controller_q: np.ndarray | None = field(default=None, repr=False)

    @property
    def T(self) -> int:
        return self.v.shape[0]

    @property
    def metered_q(self) -> np.ndarray:
        if self.controller_q is None:
            return self.q
        return self.q - self.controller_q

    def position(self, bus: int) -> int:
        try:
            return self.bus_ids.index(bus)
        except ValueError:
            raise KeyError(f"bus {bus} is not observed") from None

    @property
    def points(self):
        return [OperatingPoint(self.v[t], self.theta[t], self.p[t], self.q[t])
                for t in range(self.T)]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        remap = {int(old): new for new, old in enumerate(idx)}
        return replace(
            self,
            v=self.v[idx], theta=self.theta[idx], p=self.p[idx], q=self.q[idx],
            timestamps=self.timestamps[idx],
            corrupted=frozenset(remap[c] for c in self.corrupted if c in remap),
            controller_q=None if self.controller_q is None else self.controller_q[idx],
        )


def concatenate(first: Dataset, second: Dataset) -> Dataset:
    if first.bus_ids != second.bus_ids:
        raise ValueError("datasets observe different buses")
    ctrl = None
    if first.controller_q is not None or second.controller_q is not None:
        ctrl = np.vstack([_ctrl(first), _ctrl(second)])
    return replace(
        first,
        v=np.vstack([first.v, second.v]), theta=np.vstack([first.theta, second.theta]),
        p=np.vstack([first.p, second.p]), q=np.vstack([first.q, second.q]),
        timestamps=np.concatenate([first.timestamps, second.timestamps]),
        corrupted=first.corrupted | {c + first.T for c in second.corrupted},
        controller_q=ctrl,
    )


def _ctrl(ds):
    return np.zeros_like(ds.q) if ds.controller_q is None else ds.controller_q


# --------------------------------------------------------------------------
# loads

def calibrate_peak_load(network: Network, v_floor: float = 0.9,
                        power_factor: float = 0.95) -> float:
    """Largest uniform per-bus consumption keeping every voltage >= v_floor.

    Found by bisection on flat-start power flows; used to scale synthetic
    demand so that generated feeders of any size stay solvable.
    """
    ratio = math.tan(math.acos(power_factor))
    pq = np.array(network.pq_buses) - 1
    if pq.size == 0:
        raise ValueError("network has no PQ buses")

    def min_voltage(load):
        p = np.zeros(network.n)
        p[pq] = -load
        try:
            op = solve_newton_raphson(network, p, p * ratio, max_iter=40)
        except ConvergenceError:
            return 0.0
        return float(op.v.min())

    lo, hi = 0.0, 1.0
    while min_voltage(hi) >= v_floor and hi < 64:
        lo, hi = hi, hi * 2
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if min_voltage(mid) >= v_floor:
            lo = mid
        else:
            hi = mid
    return lo


def profile_for_network(network: Network, v_floor: float = 0.9, **kwargs) -> LoadProfile:
    """Profile whose peak demand keeps the feeder above ``v_floor``."""
    pf = kwargs.get("power_factor", LoadProfile.power_factor)
    peak = calibrate_peak_load(network, v_floor, pf)
    probe = LoadProfile(**{k: v for k, v in kwargs.items() if k not in ("base_load", "p_min")})
    base = peak / probe.peak_factor
    kwargs.setdefault("base_load", base)
    kwargs.setdefault("p_min", -peak)
    return LoadProfile(**kwargs)


def sample_loads(network: Network, profile: LoadProfile, T: int, seed: int) -> InjectionSeries:
    if T < 1:
        raise ValueError("T must be >= 1")
    pq = np.array(network.pq_buses, dtype=int) - 1
    if pq.size == 0:
        raise ValueError("network has no PQ buses to load")
    rng = np.random.default_rng(seed)
    n = network.n
    base = np.broadcast_to(np.asarray(profile.base_load, dtype=float), (n,))
    hours = np.arange(T, dtype=float)
    phase = rng.uniform(-1.0, 1.0, size=n)
    daily = np.sin(2 * np.pi * (hours[:, None] - 9.0) / 24.0 + phase[None, :])
    weekly = np.sin(2 * np.pi * hours / HOURS_PER_WEEK)[:, None]
    jitter = rng.standard_normal((T, n))
    level = base * (1.0 + profile.daily_amplitude * daily
                    + profile.weekly_amplitude * weekly + profile.jitter * jitter)
    p = -np.maximum(level, 0.0)
    n_der = int(round(profile.der_fraction * pq.size))
    if n_der:
        der_buses = rng.choice(pq, size=n_der, replace=False)
        solar = np.maximum(np.sin(np.pi * ((hours % 24.0) - 6.0) / 12.0), 0.0)
        cloud = rng.uniform(0.3, 1.0, size=(T // 24 + 1))[(hours // 24).astype(int)]
        p[:, der_buses] += profile.der_peak * base[der_buses] * (solar * cloud)[:, None]
    p = np.clip(p, profile.p_min, profile.p_max)
    out_p = np.zeros((T, n))
    out_p[:, pq] = p[:, pq]
    out_q = out_p * profile.q_ratio
    if profile.reactive_jitter > 0:
        out_q *= 1.0 + profile.reactive_jitter * rng.standard_normal((T, n))
    return InjectionSeries(out_p, out_q)


# --------------------------------------------------------------------------
# simulation

def simulate_dataset(network: Network, injections: InjectionSeries, controllers=(),
                     hidden_loss_fraction: float = 0.0, hidden=(),
                     tol: float = 1e-10) -> Dataset:
    """Solve one power flow per timestep.

    ``hidden`` buses have their specified injections replaced by zero; if
    ``hidden_loss_fraction`` is positive they instead consume that fraction
    of the total consumption at the remaining (measured) non-slack buses,
    split evenly.
    """
    hidden = sorted(set(hidden))
    if hidden_loss_fraction < 0:
        raise ValueError("hidden_loss_fraction must be >= 0")
    if hidden_loss_fraction > 0 and not hidden:
        raise ValueError("hidden_loss_fraction needs a set of hidden buses")
    n, T = network.n, injections.T
    if injections.p.shape != (T, n):
        raise ValueError(f"injections must be (T, {n})")
    hid = np.array(hidden, dtype=int) - 1
    leaves = np.array([k for k in network.pq_buses if k not in set(hidden)], dtype=int) - 1
    V = np.empty((T, n))
    TH = np.empty((T, n))
    P = np.empty((T, n))
    Q = np.empty((T, n))
    CQ = np.zeros((T, n))
    prev = None
    for t in range(T):
        p_spec = injections.p[t].copy()
        q_spec = injections.q[t].copy()
        if hid.size:
            p_spec[hid] = 0.0
            q_spec[hid] = 0.0
            if hidden_loss_fraction > 0:
                consumption = -p_spec[leaves].sum()
                p_spec[hid] = -hidden_loss_fraction * consumption / hid.size
        try:
            op = solve_newton_raphson(network, p_spec, q_spec, controllers, init=prev, tol=tol)
        except ConvergenceError as exc:
            try:
                op = solve_newton_raphson(network, p_spec, q_spec, controllers, tol=tol)
            except ConvergenceError:
                raise ConvergenceError(f"power flow failed at timestep {t}: {exc}",
                                       exc.iterations, exc.mismatch, timestep=t) from exc
        prev = op
        V[t], TH[t], P[t], Q[t] = op.v, op.theta, op.p, op.q
        CQ[t] = op.controller_q
    return Dataset(
        v=V, theta=TH, p=P, q=Q,
        bus_ids=tuple(range(1, n + 1)), n_buses=n,
        timestamps=np.arange(T),
        controller_q=CQ if controllers else None,
    )


# --------------------------------------------------------------------------
# corruption, masking, splitting

def add_noise(dataset: Dataset, relative_std: float, seed: int) -> Dataset:
    """Multiply every measured scalar by ``1 + relative_std * z``."""
    if relative_std < 0:
        raise ValueError("relative_std must be >= 0")
    if relative_std == 0:
        return dataset
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((len(MEASURED_FIELDS),) + dataset.v.shape)
    noisy = {f: getattr(dataset, f) * (1.0 + relative_std * z[k])
             for k, f in enumerate(MEASURED_FIELDS)}
    return replace(dataset, **noisy)


def outlier_count(fraction: float, T: int) -> int:
    return int(math.floor(fraction * T + 0.5))


def inject_outliers(dataset: Dataset, fraction: float, magnitude: float = 0.5,
                    seed: int = 0) -> Dataset:
    """Scale every measured scalar of ``round(fraction*T)`` random samples
    by ``1 +/- magnitude`` (independent random sign per scalar)."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    count = outlier_count(fraction, dataset.T)
    if count == 0:
        return dataset
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(dataset.T, size=count, replace=False))
    signs = rng.choice((-1.0, 1.0), size=(len(MEASURED_FIELDS), count, dataset.v.shape[1]))
    changed = {}
    for k, f in enumerate(MEASURED_FIELDS):
        arr = getattr(dataset, f).copy()
        arr[idx] *= 1.0 + magnitude * signs[k]
        changed[f] = arr
    return replace(dataset, corrupted=dataset.corrupted | {int(i) for i in idx}, **changed)


def mask_buses(dataset: Dataset, observed) -> Dataset:
    observed = sorted(set(observed))
    if not observed:
        raise ValueError("observed bus set must be non-empty")
    missing = [b for b in observed if b not in dataset.bus_ids]
    if missing:
        raise ValueError(f"buses {missing} are not available in the dataset")
    cols = [dataset.bus_ids.index(b) for b in observed]
    return replace(
        dataset,
        v=dataset.v[:, cols], theta=dataset.theta[:, cols],
        p=dataset.p[:, cols], q=dataset.q[:, cols],
        bus_ids=tuple(observed),
        controller_q=None if dataset.controller_q is None else dataset.controller_q[:, cols],
    )


def split_train_test(dataset: Dataset, train_weeks: int, test_weeks: int):
    if train_weeks < 1 or test_weeks < 1:
        raise ValueError("train_weeks and test_weeks must be >= 1")
    n_train = train_weeks * HOURS_PER_WEEK
    n_test = test_weeks * HOURS_PER_WEEK
    if dataset.T < n_train + n_test:
        raise ValueError(f"dataset has {dataset.T} samples, need {n_train + n_test}")
    return (dataset.take(np.arange(n_train)),
            dataset.take(np.arange(n_train, n_train + n_test)))


# --------------------------------------------------------------------------
# file format

def write_dataset(dataset: Dataset, path) -> None:
    """One row per (timestep, bus); unobserved buses get empty values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for t in range(dataset.T):
            bad = int(t in dataset.corrupted)
            for bus in range(1, dataset.n_buses + 1):
                if bus in dataset.bus_ids:
                    c = dataset.bus_ids.index(bus)
                    vals = [repr(float(getattr(dataset, f)[t, c])) for f in MEASURED_FIELDS]
                    writer.writerow([int(dataset.timestamps[t]), bus, *vals, 1, bad])
                else:
                    writer.writerow([int(dataset.timestamps[t]), bus, "", "", "", "", 0, bad])


def read_dataset(path) -> Dataset:
    rows = {}
    observed = set()
    corrupted_t = set()
    n = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        for row in reader:
            t, bus = int(row["t"]), int(row["bus"])
            n = max(n, bus)
            if row["corrupted"] == "1":
                corrupted_t.add(t)
            if row["observed"] == "1":
                observed.add(bus)
                rows[(t, bus)] = [float(row[f]) for f in MEASURED_FIELDS]
            else:
                rows.setdefault((t, bus), None)
    times = sorted({t for t, _ in rows})
    buses = sorted(observed)
    arr = np.array([[rows[(t, b)] for b in buses] for t in times], dtype=float)
    arr = arr.reshape(len(times), len(buses), len(MEASURED_FIELDS))
    pos = {t: k for k, t in enumerate(times)}
    return Dataset(
        v=arr[:, :, 0], theta=arr[:, :, 1], p=arr[:, :, 2], q=arr[:, :, 3],
        bus_ids=tuple(buses), n_buses=n, timestamps=np.array(times),
        corrupted=frozenset(pos[t] for t in corrupted_t),
    )
