"""Experiment harness: forward/inverse benchmarks, extrapolation, outlier and
controller sweeps, partial observation, and report emission.

Every experiment follows the same protocol: simulate ``train_weeks +
test_weeks`` of hourly data, corrupt the training split only, fit each
learner on the training split and score it on the clean test split.
Random streams for each stage are derived from the master seed so that a
report is a pure function of its :class:`ExperimentConfig`.
"""

from __future__ import annotations

import csv
import io
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from .baselines import fit_average, fit_lad, fit_least_squares, predict_linear
from .features import physical_features, to_rectangular
from .grid import (DroopController, Network, build_admittance, builtin_case,
                   generate_feeder, kron_reduce, load_case_file)
from .scenario import (HOURS_PER_WEEK, InjectionSeries, add_noise, inject_outliers,
                       mask_buses, profile_for_network, sample_loads, simulate_dataset,
                       split_train_test)
from .svr import KernelSpec, SvrConfig, cross_validate, fit_svr, predict_svr

EXPERIMENTS = ("forward", "inverse", "extrapolation", "outlier-sweep",
               "controller-sweep", "partial-observation")
LEARNERS = ("svr", "reg", "lad", "avg")
REPORT_COLUMNS = ("experiment", "case", "learner", "kernel", "bin", "metric", "value",
                  "fit_time_s", "predict_time_s", "n_support_vectors", "seed")
KERNEL_GRID = (KernelSpec("polynomial", 1), KernelSpec("polynomial", 2),
               KernelSpec("polynomial", 3), KernelSpec("rbf"))
QUADRATIC = (KernelSpec("polynomial", 2),)
OUTLIER_FRACTIONS = (0.0, 0.02, 0.04, 0.06, 0.08)
DROOP_COEFFICIENTS = (2.0, 5.0, 10.0, 20.0)
NOISE_LEVELS = (0.0, 0.005, 0.01, 0.02)
PARTIAL_OBSERVED = (1, 4, 5, 7, 8)
CONTROLLER_BUS = 7
CONTROLLER_II_SIGNAL = (4, 5, 7, 8)
EXTRAPOLATION_TRAIN = (-1.0, 0.0)
EXTRAPOLATION_TEST = (-2.0, 1.0)
BIN_WIDTH = 0.2


# --------------------------------------------------------------------------
# metrics

def _pair(predicted, actual):
    predicted = np.asarray(predicted, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if predicted.size == 0 or actual.size == 0:
        raise ValueError("metrics need at least one sample")
    if predicted.shape != actual.shape:
        raise ValueError(f"length mismatch: {predicted.size} vs {actual.size}")
    return predicted - actual


def metric_mse(predicted, actual) -> float:
    err = _pair(predicted, actual)
    return float(np.mean(err * err))


def metric_rmse(predicted, actual) -> float:
    return math.sqrt(metric_mse(predicted, actual))


def metric_mae(predicted, actual) -> float:
    return float(np.mean(np.abs(_pair(predicted, actual))))


METRICS = {"rmse": metric_rmse, "mae": metric_mae, "mse": metric_mse}


# --------------------------------------------------------------------------
# configuration and report

@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run.

    ``case`` is ``gen:N`` (generated feeder, ``topology`` applies), the name
    of a bundled case, or a path to a case file. ``target_bus`` defaults to
    the highest-degree non-slack bus. SVR hyper-parameters are chosen per
    kernel by contiguous ``cv_folds``-fold validation over ``Cs`` x
    ``epsilons``.
    """

    experiment: str
    case: str = "gen:8"
    topology: str = "radial"
    target_bus: int | None = None
    train_weeks: int = 6
    test_weeks: int = 3
    noise: float = 0.01
    outliers: float = 0.02
    outlier_magnitude: float = 0.5
    droop_coefficients: tuple = DROOP_COEFFICIENTS
    observed: tuple | None = None
    noise_levels: tuple = NOISE_LEVELS
    hidden_loss_fraction: float = 0.05
    seed: int = 0
    learners: tuple = LEARNERS
    kernels: tuple = KERNEL_GRID
    Cs: tuple = (0.1, 1.0, 10.0, 100.0)
    epsilons: tuple = (1e-4, 1e-3, 1e-2)
    cv_folds: int = 5
    kkt_tol: float = 1e-3
    max_passes: int = 20
    v_floor: float = 0.9
    reactive_jitter: float = 0.1
    scaling: str = "whiten"
    cv_scoring: str = "median"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        unknown = set(self.learners) - set(LEARNERS)
        if unknown or not self.learners:
            raise ValueError(f"learners must be a non-empty subset of {LEARNERS}")
        if self.observed is not None and self.experiment != "partial-observation":
            raise ValueError("an observed-bus set only applies to partial-observation")
        if self.noise < 0 or not 0 <= self.outliers <= 1:
            raise ValueError("noise must be >= 0 and outliers in [0, 1]")
        if self.train_weeks < 1 or self.test_weeks < 1:
            raise ValueError("train_weeks and test_weeks must be >= 1")
        if "svr" in self.learners and not self.kernels:
            raise ValueError("svr needs at least one kernel")

    @property
    def svr_grid(self):
        return lambda kernel: [
            SvrConfig(C=C, epsilon=e, kernel=kernel, kkt_tol=self.kkt_tol,
                      max_passes=self.max_passes)
            for C in self.Cs for e in self.epsilons]


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    case: str
    learner: str
    kernel: str
    bin: str
    metric: str
    value: float
    fit_time_s: float
    predict_time_s: float
    n_support_vectors: int | None
    seed: int


@dataclass(frozen=True)
class BenchReport:
    config: ExperimentConfig
    rows: tuple = ()
    # per-bin flags, e.g. empty extrapolation bins
    notes: tuple = field(default=(), compare=False)

    def select(self, learner=None, metric=None, bin=None, kernel=None):
        return [r for r in self.rows
                if (learner is None or r.learner == learner)
                and (metric is None or r.metric == metric)
                and (bin is None or r.bin == bin)
                and (kernel is None or r.kernel == kernel)]

    def value(self, learner, metric, bin="", kernel=None) -> float:
        rows = self.select(learner, metric, bin, kernel)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match ({learner}, {metric}, {bin!r}, {kernel})")
        return rows[0].value

    def bins(self):
        seen = []
        for r in self.rows:
            if r.bin not in seen:
                seen.append(r.bin)
        return seen


def derive_seed(master: int, *keys: int) -> int:
    """Independent per-stage seed from the master seed and integer keys."""
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


# stage keys for derive_seed
_LOADS, _NOISE, _OUTLIERS, _CASE, _EXTRA = 1, 2, 3, 4, 5


# --------------------------------------------------------------------------
# case and data helpers

def load_network(case: str, topology: str = "radial", seed: int = 0) -> Network:
    """``gen:N[:topology]``, a case-file path, or a bundled case name."""
    if case.startswith("gen:"):
        parts = case.split(":")
        try:
            n = int(parts[1])
        except (IndexError, ValueError):
            raise ValueError(f"malformed generated case {case!r}; expected gen:N") from None
        return generate_feeder(n, parts[2] if len(parts) > 2 else topology, seed)
    path = Path(case)
    if path.exists():
        return load_case_file(path)
    return builtin_case(case)


def resolve_case(config: ExperimentConfig) -> Network:
    return load_network(config.case, config.topology, config.seed)


def default_target(network: Network, candidates=None) -> int:
    """Highest-degree non-slack bus, ties to the smallest id."""
    adj = network.adjacency()
    ids = candidates or range(1, network.n + 1)
    pool = [b for b in ids if b != network.slack_bus]
    return max(pool, key=lambda b: (len(adj[b]), -b))


def _hours(config):
    return (config.train_weeks + config.test_weeks) * HOURS_PER_WEEK


def _injections(network, config, extra_seed=0):
    profile = profile_for_network(network, v_floor=config.v_floor,
                                  reactive_jitter=config.reactive_jitter)
    return sample_loads(network, profile, _hours(config),
                        derive_seed(config.seed, _LOADS, extra_seed)), profile


def _corrupt(train, config, noise, outliers, cell=0):
    train = add_noise(train, noise, derive_seed(config.seed, _NOISE, cell))
    return inject_outliers(train, outliers, config.outlier_magnitude,
                           derive_seed(config.seed, _OUTLIERS, cell))


def _forward_xy(ds, bus, target="p"):
    x = to_rectangular(ds.v, ds.theta)
    pos = ds.position(bus)
    y = ds.p[:, pos] if target == "p" else ds.metered_q[:, pos]
    return x, y, pos


def _inverse_xy(ds, bus):
    x = np.hstack([ds.p, ds.metered_q])
    return x, ds.v[:, ds.position(bus)]


def _affine(x):
    return np.hstack([np.ones((x.shape[0], 1)), x])


# --------------------------------------------------------------------------
# learners

@dataclass
class _Fitted:
    learner: str
    kernel: str
    predict: object
    fit_time: float
    n_support: int | None = None
    model: object = None


def _timed(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start


def _fit_learners(config, x, y, design):
    """Fit every configured learner.

    ``design`` maps raw inputs to the linear baselines' regressors.
    """
    fitted = []
    for learner in config.learners:
        if learner == "svr":
            for kernel in config.kernels:
                fitted.append(_fit_svr(config, kernel, x, y))
        elif learner in ("reg", "lad"):
            fit = fit_least_squares if learner == "reg" else fit_lad
            model, dt = _timed(fit, design(x), y)
            fitted.append(_Fitted(learner, "", lambda z, m=model: predict_linear(m, design(z)),
                                  dt, model=model))
        else:
            model, dt = _timed(fit_average, y)
            fitted.append(_Fitted(learner, "", lambda z, m=model: np.full(len(z), m.bias),
                                  dt, model=model))
    return fitted


def _fit_svr(config, kernel, x, y):
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        best, _ = cross_validate(x, y, config.cv_folds, config.svr_grid(kernel), config.scaling,
                                 config.cv_scoring)
        model = fit_svr(x, y, best, config.scaling)
    dt = time.perf_counter() - start
    return _Fitted("svr", kernel.label, lambda z, m=model: predict_svr(m, z), dt,
                   int(model.support.size), model)


def _score(config, fitted, x_test, y_test, case, bin="", metrics=("rmse", "mae", "mse"),
           mask=None):
    rows = []
    for f in fitted:
        pred, dt = _timed(f.predict, x_test)
        if mask is not None:
            pred, actual = pred[mask], y_test[mask]
        else:
            actual = y_test
        for metric in metrics:
            rows.append(ReportRow(config.experiment, case, f.learner, f.kernel, bin, metric,
                                  METRICS[metric](pred, actual), f.fit_time, dt,
                                  f.n_support, config.seed))
    return rows


# --------------------------------------------------------------------------
# experiments

def _mapping_data(config, network):
    injections, _ = _injections(network, config)
    ds = simulate_dataset(network, injections)
    train, test = split_train_test(ds, config.train_weeks, config.test_weeks)
    return _corrupt(train, config, config.noise, config.outliers), test


def run_forward(config: ExperimentConfig, return_models: bool = False):
    """Voltage phasors at all buses -> real injection at the target bus."""
    network = resolve_case(config)
    bus = config.target_bus or default_target(network)
    train, test = _mapping_data(config, network)
    x, y, pos = _forward_xy(train, bus)
    xt, yt, _ = _forward_xy(test, bus)
    fitted = _fit_learners(config, x, y, lambda z: physical_features(z, pos, "p"))
    report = BenchReport(config, tuple(_score(config, fitted, xt, yt, config.case)))
    return (report, fitted, train) if return_models else report


def run_inverse(config: ExperimentConfig, return_models: bool = False):
    """Real and reactive injections at all buses -> |v| at the target bus."""
    network = resolve_case(config)
    bus = config.target_bus or default_target(network)
    train, test = _mapping_data(config, network)
    x, y = _inverse_xy(train, bus)
    xt, yt = _inverse_xy(test, bus)
    fitted = _fit_learners(config, x, y, _affine)
    report = BenchReport(config, tuple(_score(config, fitted, xt, yt, config.case)))
    return (report, fitted, train) if return_models else report


def _bin_edges(lo, hi, width=BIN_WIDTH):
    count = int(round((hi - lo) / width))
    return [lo + k * width for k in range(count + 1)]


def _bin_label(lo, hi):
    return f"[{lo:.1f},{hi:.1f})"


def run_extrapolation(config: ExperimentConfig) -> BenchReport:
    """Train on target-bus injections in [-1, 0]; report MAE per 0.2 p.u.
    bin over [-2, 1] for the forward and the inverse mapping.

    The target bus draws its real injection uniformly from the train or
    test range (reactive power at the profile's power factor); other buses
    follow the load profile. Bins are labelled ``forward:[lo,hi)`` and
    ``inverse:[lo,hi)``; empty bins are skipped and listed in ``notes``.
    """
    network = resolve_case(config)
    bus = config.target_bus or default_target(network)
    injections, profile = _injections(network, config)
    rng = np.random.default_rng(derive_seed(config.seed, _EXTRA))
    n_train = config.train_weeks * HOURS_PER_WEEK
    n_test = config.test_weeks * HOURS_PER_WEEK
    p = injections.p.copy()
    p[:n_train, bus - 1] = rng.uniform(*EXTRAPOLATION_TRAIN, size=n_train)
    p[n_train:, bus - 1] = rng.uniform(*EXTRAPOLATION_TEST, size=n_test)
    q = injections.q.copy()
    q[:, bus - 1] = p[:, bus - 1] * profile.q_ratio
    ds = simulate_dataset(network, InjectionSeries(p, q))
    train, test = split_train_test(ds, config.train_weeks, config.test_weeks)
    train = _corrupt(train, config, config.noise, config.outliers)
    case = config.case
    edges = _bin_edges(*EXTRAPOLATION_TEST)
    p_test = test.p[:, test.position(bus)]
    rows, notes = [], []

    x, y, pos = _forward_xy(train, bus)
    xt, yt, _ = _forward_xy(test, bus)
    forward = _fit_learners(config, x, y, lambda z: physical_features(z, pos, "p"))
    xi, yi = _inverse_xy(train, bus)
    xit, yit = _inverse_xy(test, bus)
    inverse = _fit_learners(config, xi, yi, _affine)

    for mapping, fitted, xs, ys in (("forward", forward, xt, yt), ("inverse", inverse, xit, yit)):
        for lo, hi in zip(edges[:-1], edges[1:]):
            label = f"{mapping}:{_bin_label(lo, hi)}"
            mask = (p_test >= lo - 1e-12) & (p_test < hi - 1e-12)
            if not mask.any():
                notes.append(f"{label} empty")
                continue
            rows.extend(_score(config, fitted, xs, ys, case, label, ("mae",), mask))
    return BenchReport(config, tuple(rows), tuple(notes))


def run_outlier_sweep(config: ExperimentConfig) -> BenchReport:
    """Forward mapping with no additive noise; test MSE per outlier fraction."""
    network = resolve_case(config)
    bus = config.target_bus or default_target(network)
    injections, _ = _injections(network, config)
    ds = simulate_dataset(network, injections)
    clean, test = split_train_test(ds, config.train_weeks, config.test_weeks)
    xt, yt, pos = _forward_xy(test, bus)
    case = config.case
    rows = []
    for cell, fraction in enumerate(OUTLIER_FRACTIONS):
        train = _corrupt(clean, config, 0.0, fraction, cell)
        x, y, _ = _forward_xy(train, bus)
        fitted = _fit_learners(config, x, y, lambda z: physical_features(z, pos, "p"))
        rows.extend(_score(config, fitted, xt, yt, case, f"outliers={fraction:g}", ("mse",)))
    return BenchReport(config, tuple(rows))


def controller_variants(coefficients=DROOP_COEFFICIENTS):
    """``(label, controllers)`` pairs: none, Controller I at coefficient 10,
    then Controller II over ``coefficients``."""
    variants = [("none", ())]
    variants.append(("I:k=10", (DroopController(CONTROLLER_BUS, (CONTROLLER_BUS,), 10.0),)))
    for k in coefficients:
        variants.append((f"II:k={k:g}",
                         (DroopController(CONTROLLER_BUS, CONTROLLER_II_SIGNAL, float(k)),)))
    return variants


def run_controller_sweep(config: ExperimentConfig) -> BenchReport:
    """Reactive power metered at the controller bus, learned from voltage
    phasors while a droop controller at that bus injects unmetered
    reactive power. No noise or outliers are applied."""
    network = resolve_case(config)
    bus = config.target_bus or CONTROLLER_BUS
    injections, _ = _injections(network, config)
    case = config.case
    rows = []
    for label, controllers in controller_variants(config.droop_coefficients):
        controllers = tuple(replace(c, bus=bus) for c in controllers)
        ds = simulate_dataset(network, injections, controllers)
        train, test = split_train_test(ds, config.train_weeks, config.test_weeks)
        x, y, pos = _forward_xy(train, bus, "q")
        xt, yt, _ = _forward_xy(test, bus, "q")
        fitted = _fit_learners(config, x, y, lambda z: physical_features(z, pos, "q"))
        rows.extend(_score(config, fitted, xt, yt, case, label, ("rmse",)))
    return BenchReport(config, tuple(rows))


def run_partial_observation(config: ExperimentConfig) -> BenchReport:
    """Learners see only the observed buses.

    Two setups: ``zero-hidden`` (unobserved buses inject nothing, so an
    exact equivalent admittance exists) and ``hidden-loss`` (unobserved
    buses consume ``hidden_loss_fraction`` of the observed consumption).
    Each is run over ``noise_levels``; the zero-hidden setup also reports
    learner ``kron``, which predicts with the true Kron-reduced admittance
    row. No outliers are applied.
    """
    network = resolve_case(config)
    observed = tuple(sorted(config.observed or PARTIAL_OBSERVED))
    hidden = tuple(b for b in range(1, network.n + 1) if b not in observed)
    bus = config.target_bus or default_target(network, observed)
    if bus not in observed:
        raise ValueError(f"target bus {bus} is not observed")
    injections, _ = _injections(network, config)
    case = config.case
    Yr = kron_reduce(build_admittance(network), hidden)
    rows = []
    for setup, fraction in (("zero-hidden", 0.0), ("hidden-loss", config.hidden_loss_fraction)):
        ds = simulate_dataset(network, injections, hidden=hidden, hidden_loss_fraction=fraction)
        ds = mask_buses(ds, observed)
        clean, test = split_train_test(ds, config.train_weeks, config.test_weeks)
        xt, yt, pos = _forward_xy(test, bus)
        for cell, noise in enumerate(config.noise_levels):
            train = _corrupt(clean, config, noise, 0.0, cell)
            x, y, _ = _forward_xy(train, bus)
            fitted = _fit_learners(config, x, y, lambda z: physical_features(z, pos, "p"))
            if setup == "zero-hidden":
                beta = np.concatenate([Yr[pos].real, Yr[pos].imag])
                fitted.append(_Fitted("kron", "", lambda z, b=beta: physical_features(z, pos, "p") @ b,
                                      0.0))
            rows.extend(_score(config, fitted, xt, yt, case, f"{setup}:noise={noise:g}",
                               ("rmse",)))
    return BenchReport(config, tuple(rows))


RUNNERS = {
    "forward": run_forward,
    "inverse": run_inverse,
    "extrapolation": run_extrapolation,
    "outlier-sweep": run_outlier_sweep,
    "controller-sweep": run_controller_sweep,
    "partial-observation": run_partial_observation,
}


def run_experiment(config: ExperimentConfig) -> BenchReport:
    return RUNNERS[config.experiment](config)


# --------------------------------------------------------------------------
# emission

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def format_report(report: BenchReport, fmt: str = "csv", timing: bool = False) -> str:
    """Render a report as CSV or an aligned text table.

    Wall-clock columns are left blank unless ``timing`` is set, so that
    identical configurations produce identical bytes.
    """
    if fmt not in ("csv", "table"):
        raise ValueError(f"format must be 'csv' or 'table', got {fmt!r}")
    records = []
    for r in report.rows:
        rec = [_fmt(getattr(r, c)) for c in REPORT_COLUMNS]
        if not timing:
            rec[7] = rec[8] = ""
        records.append(rec)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        writer.writerows(records)
        return buf.getvalue()
    widths = [max([len(c)] + [len(rec[k]) for rec in records])
              for k, c in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for rec in records:
        lines.append("  ".join(v.ljust(w) for v, w in zip(rec, widths)).rstrip())
    return "\n".join(lines) + "\n"


def emit_report(report: BenchReport, path, fmt: str = "csv", timing: bool = False) -> None:
    text = format_report(report, fmt, timing)
    if path is None or str(path) == "-":
        print(text, end="")
        return
    Path(path).write_text(text)

