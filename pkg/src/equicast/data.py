"""Synthetic series generation, CSV ingestion, windowing, and splits.

The synthetic world is one shared "grid" signal plus per-agent outcome
streams derived from it.  Agent heterogeneity enters in two places: how far
each agent's outcome stream drifts from the shared signal (offset + noise
scale), and the private decision contexts (workloads and latency weights, or
charging demands and component mixes).  The "similar" setting keeps
per-agent perturbations small; "different" spreads the noise scales over
more than an order of magnitude.

CSV schemas (header row required, '#' comment lines allowed before it):

* carbon:   timestamp,carbon_intensity
* energy:   timestamp,E
* workload: timestamp,agent_id,demand
* charging: agent_id,initial,demand,rate,horizon[,water_weight,price_weight]
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import AgentSpec, ChargingContext, DataCenterContext
from .errors import ConfigError, SchemaError


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.67
    seed: int = 0
    chronological: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train fraction must lie in (0, 1), got {self.train_fraction}")


@dataclass(eq=False)
class SeriesDataset:
    """A shared input signal plus optional per-agent outcome/context streams."""

    timestamps: np.ndarray
    signal: np.ndarray | None = None
    agent_targets: np.ndarray | None = None  # (M, N) per-agent forecast targets
    outcome_targets: np.ndarray | None = None  # (M, N) decision streams, if distinct
    workloads: np.ndarray | None = None  # (M, N) per-agent demand series

    def __post_init__(self):
        n = len(self.timestamps)
        for name in ("signal",):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} length {len(arr)} != timestamps length {n}")
        for name in ("agent_targets", "outcome_targets", "workloads"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[1] != n:
                raise ValueError(f"{name} has {arr.shape[1]} steps, timestamps have {n}")


# ---------------------------------------------------------------------------
# Generators


def synth_carbon(
    length: int,
    seed: int,
    base: float = 2.0,
    daily_amplitude: float = 0.6,
    noise_std: float = 0.15,
    phase: float = 0.0,
) -> np.ndarray:
    """Daily sinusoid around `base` with Gaussian noise, floored at 0.05*base."""
    if base <= 0:
        raise ConfigError(f"base intensity must be positive, got {base}")
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    series = base + daily_amplitude * np.sin(2.0 * np.pi * t / 24.0 + phase)
    series = series + noise_std * rng.standard_normal(length)
    return np.clip(series, 0.05 * base, None)


def synth_agents(
    n_agents: int,
    heterogeneity: str = "similar",
    lambda_scheme: str = "same",
    seed: int = 0,
    length: int = 600,
    base: float = 2.0,
):
    """Data-center pool: shared signal, per-agent intensity and workload streams.

    Returns (agent specs, SeriesDataset).  Agent m's outcome stream is the
    shared signal plus a per-agent offset and noise.  "different" widens the
    offsets and splits the workload profiles into a tight cluster plus a
    scattered tail, so pairwise workload-distribution distances spread over
    at least an order of magnitude.
    """
    if n_agents < 1:
        raise ConfigError(f"need at least one agent, got {n_agents}")
    if heterogeneity not in ("similar", "different"):
        raise ConfigError(f"unknown heterogeneity '{heterogeneity}'")
    if lambda_scheme not in ("same", "grid"):
        raise ConfigError(f"unknown lambda scheme '{lambda_scheme}'")
    rng = np.random.default_rng(seed)
    signal = synth_carbon(length, seed=seed, base=base)

    if heterogeneity == "similar":
        offsets = rng.uniform(-0.03, 0.03, size=n_agents) * base
        noise_scales = rng.uniform(0.01, 0.03, size=n_agents) * base
        wl_bases = rng.uniform(4.5, 5.5, size=n_agents)
        wl_noise = rng.uniform(0.02, 0.05, size=n_agents)
    else:
        # ordered so later agents (larger latency weight under the grid
        # scheme) drift furthest from the shared signal: the worst-off
        # agents are the ones a reweighted forecast can actually help
        magnitudes = np.sort(rng.uniform(0.02, 0.35, size=n_agents)) * base
        offsets = magnitudes * rng.choice([-1.0, 1.0], size=n_agents)
        noise_scales = rng.uniform(0.02, 0.10, size=n_agents) * base
        # half the pool stays near one workload profile, the rest scatter
        # over a wide range: distance spread of >= one order of magnitude
        half = max(1, n_agents // 2)
        wl_bases = np.empty(n_agents)
        wl_noise = np.empty(n_agents)
        wl_bases[:half] = 5.0 * (1.0 + 0.02 * rng.uniform(-1, 1, size=half))
        wl_noise[:half] = 0.02
        wl_bases[half:] = np.exp(rng.uniform(np.log(2.0), np.log(12.0), size=n_agents - half))
        wl_noise[half:] = rng.uniform(0.1, 0.5, size=n_agents - half)

    targets = np.empty((n_agents, length))
    workloads = np.empty((n_agents, length))
    for m in range(n_agents):
        targets[m] = np.clip(
            signal + offsets[m] + noise_scales[m] * rng.standard_normal(length),
            0.05 * base,
            None,
        )
        workloads[m] = wl_bases[m] * np.exp(wl_noise[m] * rng.standard_normal(length))

    if lambda_scheme == "same":
        lams = np.full(n_agents, 2.0)
    else:
        lams = np.linspace(2.0, 100.0, n_agents)

    agent_list = [
        AgentSpec(
            agent_id=m,
            family="datacenter",
            context=DataCenterContext(workload=float(np.median(workloads[m])), latency_weight=float(lams[m])),
        )
        for m in range(n_agents)
    ]
    dataset = SeriesDataset(
        timestamps=np.arange(length),
        signal=signal,
        agent_targets=targets,
        workloads=workloads,
    )
    return agent_list, dataset


def synth_charging(
    n_agents: int,
    horizon: int = 12,
    heterogeneity: str = "similar",
    seed: int = 0,
    length: int = 600,
    water_weight: float = 1.0,
    price_weight: float = 1.0,
    predict_target: str = "combined",
):
    """Charging pool: shared reference energy signal, per-agent mixed streams.

    Each agent weighs the carbon/water/price components with its own
    (water_weight, price_weight) draw around the nominal mix, so agents
    disagree about which slots are cheap.  `predict_target` picks what the
    shared forecaster is trained on: the nominal combined signal windows
    ("combined") or the carbon component only ("carbon"); agent outcome
    streams always use the agent's own mix.
    """
    if n_agents < 1:
        raise ConfigError(f"need at least one agent, got {n_agents}")
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if heterogeneity not in ("similar", "different"):
        raise ConfigError(f"unknown heterogeneity '{heterogeneity}'")
    if predict_target not in ("combined", "carbon"):
        raise ConfigError(f"unknown predict_target '{predict_target}'")
    rng = np.random.default_rng(seed)
    carbon = synth_carbon(length, seed=seed, base=2.0, daily_amplitude=0.6, noise_std=0.10)
    water = synth_carbon(length, seed=seed + 1, base=1.0, daily_amplitude=0.45, noise_std=0.08, phase=2.1)
    price = synth_carbon(length, seed=seed + 2, base=1.5, daily_amplitude=0.7, noise_std=0.10, phase=4.2)

    if heterogeneity == "similar":
        gammas = water_weight * rng.uniform(0.85, 1.15, size=n_agents)
        etas = price_weight * rng.uniform(0.85, 1.15, size=n_agents)
        noise_scales = rng.uniform(0.01, 0.03, size=n_agents)
        rates = rng.uniform(1.5, 2.5, size=n_agents)
        slot_lo, slot_hi = max(1, horizon // 4), max(2, (3 * horizon) // 4)
    else:
        gammas = water_weight * np.exp(rng.uniform(np.log(0.15), np.log(2.8), size=n_agents))
        etas = price_weight * np.exp(rng.uniform(np.log(0.15), np.log(2.8), size=n_agents))
        noise_scales = np.exp(rng.uniform(np.log(0.01), np.log(0.20), size=n_agents))
        rates = np.exp(rng.uniform(np.log(0.6), np.log(4.0), size=n_agents))
        slot_lo, slot_hi = 1, max(1, horizon - 1)

    targets = np.empty((n_agents, length))
    specs = []
    for m in range(n_agents):
        stream = carbon + gammas[m] * water + etas[m] * price
        stream = stream + noise_scales[m] * rng.standard_normal(length)
        targets[m] = np.clip(stream, 0.01, None)
        k = int(rng.integers(slot_lo, slot_hi + 1))
        initial = float(rng.uniform(0.0, 1.0))
        demand = initial + (k - float(rng.uniform(0.2, 0.8))) * rates[m]
        specs.append(
            AgentSpec(
                agent_id=m,
                family="charging",
                context=ChargingContext(
                    initial=initial,
                    demand=float(demand),
                    rate=float(rates[m]),
                    horizon=horizon,
                    water_weight=float(gammas[m]),
                    price_weight=float(etas[m]),
                ),
            )
        )

    reference = carbon + water_weight * water + price_weight * price
    if predict_target == "carbon":
        # the forecaster is trained on the carbon component only, but each
        # agent's decisions are still scored against its own mixed stream
        dataset = SeriesDataset(
            timestamps=np.arange(length),
            signal=carbon,
            agent_targets=carbon[None, :].repeat(n_agents, axis=0),
            outcome_targets=targets,
        )
    else:
        dataset = SeriesDataset(
            timestamps=np.arange(length),
            signal=reference,
            agent_targets=targets,
        )
    return specs, dataset


def heterogeneity_summary(dataset: SeriesDataset) -> dict:
    """Spread of per-agent streams, reported as 1-D Wasserstein distances to agent 0."""
    out = {}
    for name in ("agent_targets", "workloads"):
        arr = getattr(dataset, name)
        if arr is None or arr.shape[0] < 2:
            continue
        ref = np.sort(arr[0])
        dists = [float(np.mean(np.abs(np.sort(arr[m]) - ref))) for m in range(1, arr.shape[0])]
        out[name] = {"min": min(dists), "max": max(dists)}
    return out


# ---------------------------------------------------------------------------
# CSV ingestion

_SCHEMAS = {
    "carbon": ["timestamp", "carbon_intensity"],
    "energy": ["timestamp", "E"],
    "workload": ["timestamp", "agent_id", "demand"],
    "charging": ["agent_id", "initial", "demand", "rate", "horizon"],
}


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    lines = Path(path).read_text().splitlines()
    rows = []
    header = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cells = next(csv.reader([line]))
        if header is None:
            header = [c.strip() for c in cells]
        else:
            rows.append((lineno, [c.strip() for c in cells]))
    if header is None:
        raise SchemaError(f"{path}: no header row found")
    return header, rows


def _parse_float(path, lineno, column, text) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise SchemaError(f"{path}:{lineno}: column '{column}' is not numeric: {text!r}") from exc
    if not math.isfinite(value):
        raise SchemaError(f"{path}:{lineno}: column '{column}' is not finite: {text!r}")
    return value


def load_csv(path, schema: str):
    """Parse and validate a CSV file against one of the documented schemas.

    Returns a SeriesDataset for the series schemas and a list of
    (agent_id, ChargingContext) pairs for the charging table.
    """
    if schema not in _SCHEMAS:
        raise SchemaError(f"unknown schema '{schema}', expected one of {sorted(_SCHEMAS)}")
    required = _SCHEMAS[schema]
    header, rows = _read_rows(path)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: header {header} is missing column(s) {missing}")
    idx = {c: header.index(c) for c in header}
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    def cell(row_cells, lineno, column):
        if idx[column] >= len(row_cells):
            raise SchemaError(f"{path}:{lineno}: row has no '{column}' cell")
        return row_cells[idx[column]]

    if schema in ("carbon", "energy"):
        value_col = required[1]
        ts, vals = [], []
        for lineno, cells in rows:
            ts.append(_parse_float(path, lineno, "timestamp", cell(cells, lineno, "timestamp")))
            vals.append(_parse_float(path, lineno, value_col, cell(cells, lineno, value_col)))
        ts = np.asarray(ts)
        if np.any(np.diff(ts) <= 0):
            bad = int(np.argmax(np.diff(ts) <= 0))
            raise SchemaError(f"{path}: timestamps must be strictly increasing (row {bad + 2})")
        return SeriesDataset(timestamps=ts, signal=np.asarray(vals))

    if schema == "workload":
        per_agent: dict[int, list[tuple[float, float]]] = {}
        for lineno, cells in rows:
            t = _parse_float(path, lineno, "timestamp", cell(cells, lineno, "timestamp"))
            a = int(_parse_float(path, lineno, "agent_id", cell(cells, lineno, "agent_id")))
            d = _parse_float(path, lineno, "demand", cell(cells, lineno, "demand"))
            if d <= 0:
                raise SchemaError(f"{path}:{lineno}: demand must be positive, got {d}")
            per_agent.setdefault(a, []).append((t, d))
        agent_ids = sorted(per_agent)
        ts0 = [t for t, _ in per_agent[agent_ids[0]]]
        if any(ts0[i] >= ts0[i + 1] for i in range(len(ts0) - 1)):
            raise SchemaError(f"{path}: timestamps must be strictly increasing per agent")
        for a in agent_ids:
            if [t for t, _ in per_agent[a]] != ts0:
                raise SchemaError(f"{path}: agent {a} does not cover the same timestamps as agent {agent_ids[0]}")
        workloads = np.asarray([[d for _, d in per_agent[a]] for a in agent_ids])
        return SeriesDataset(timestamps=np.asarray(ts0), workloads=workloads)

    # charging table
    out = []
    for lineno, cells in rows:
        a = int(_parse_float(path, lineno, "agent_id", cell(cells, lineno, "agent_id")))
        kwargs = {
            "initial": _parse_float(path, lineno, "initial", cell(cells, lineno, "initial")),
            "demand": _parse_float(path, lineno, "demand", cell(cells, lineno, "demand")),
            "rate": _parse_float(path, lineno, "rate", cell(cells, lineno, "rate")),
            "horizon": int(_parse_float(path, lineno, "horizon", cell(cells, lineno, "horizon"))),
        }
        for opt in ("water_weight", "price_weight"):
            if opt in idx:
                kwargs[opt] = _parse_float(path, lineno, opt, cell(cells, lineno, opt))
        try:
            ctx = ChargingContext(**kwargs)
        except ConfigError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        out.append((a, ctx))
    return out


def write_series_csv(path, timestamps, values, value_column: str, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["timestamp", value_column])
        for t, v in zip(timestamps, values):
            writer.writerow([int(t), repr(float(v))])


def write_workload_csv(path, timestamps, workloads, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "agent_id", "demand"])
        for m in range(workloads.shape[0]):
            for t, v in zip(timestamps, workloads[m]):
                writer.writerow([int(t), m, repr(float(v))])


def write_charging_csv(path, agents: list[AgentSpec], comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["agent_id", "initial", "demand", "rate", "horizon", "water_weight", "price_weight"])
        for a in agents:
            c = a.context
            writer.writerow(
                [a.agent_id, repr(c.initial), repr(c.demand), repr(c.rate), c.horizon,
                 repr(c.water_weight), repr(c.price_weight)]
            )


# ---------------------------------------------------------------------------
# Windowing and splits


@dataclass(eq=False)
class WindowSplit:
    """Windowed, normalized train/test arrays for one agent.

    Features are z-scored per column with train statistics; targets are
    scaled to zero mean / unit scale with a scalar train-fit transform, and
    the raw (unscaled) targets are kept alongside for regret evaluation.
    `outcome_*` carry the decision-relevant realized values when those differ
    from the forecaster's training target (they default to the raw targets).
    """

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    train_y_raw: np.ndarray
    test_y_raw: np.ndarray
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_scale: float
    train_idx: np.ndarray
    test_idx: np.ndarray
    train_ctx: np.ndarray | None = None
    test_ctx: np.ndarray | None = None
    train_outcome: np.ndarray | None = None
    test_outcome: np.ndarray | None = None
    predict_adapter: str = "direct"  # "direct" | "window_mean"

    def __post_init__(self):
        if self.train_outcome is None:
            self.train_outcome = self.train_y_raw
        if self.test_outcome is None:
            self.test_outcome = self.test_y_raw

    def to_raw(self, normalized: np.ndarray) -> np.ndarray:
        return self.target_mean + self.target_scale * normalized


def window_split(
    features_series,
    target_series,
    lookback: int,
    split: SplitSpec,
    target_steps: int = 1,
    context_series=None,
    outcome_series=None,
    outcome_steps: int | None = None,
    target_stats: tuple[float, float] | None = None,
) -> WindowSplit:
    """Slide a lookback window over `features_series`; predict the next value(s) of `target_series`."""
    x_series = np.asarray(features_series, dtype=float)
    y_series = np.asarray(target_series, dtype=float)
    n = x_series.shape[0]
    if y_series.shape[0] != n:
        raise ValueError("feature and target series must have equal length")
    if outcome_steps is None:
        outcome_steps = target_steps
    horizon = max(target_steps, outcome_steps)
    n_windows = n - lookback - horizon + 1
    if n_windows < 1:
        raise ValueError(f"series of length {n} is too short for lookback {lookback} + horizon {horizon}")

    X = np.stack([x_series[i : i + lookback] for i in range(n_windows)])
    Y = np.stack([y_series[i + lookback : i + lookback + target_steps] for i in range(n_windows)])
    ctx = None
    if context_series is not None:
        ctx_series = np.asarray(context_series, dtype=float)
        ctx = ctx_series[lookback : lookback + n_windows]
    outcome = None
    if outcome_series is not None:
        o_series = np.asarray(outcome_series, dtype=float)
        outcome = np.stack(
            [o_series[i + lookback : i + lookback + outcome_steps] for i in range(n_windows)]
        )

    n_train = int(round(split.train_fraction * n_windows))
    n_train = min(max(n_train, 1), n_windows - 1) if n_windows > 1 else 1
    if split.chronological:
        order = np.arange(n_windows)
    else:
        order = np.random.default_rng(split.seed).permutation(n_windows)
    train_idx, test_idx = np.sort(order[:n_train]), np.sort(order[n_train:])

    f_mean = X[train_idx].mean(axis=0)
    f_std = X[train_idx].std(axis=0)
    f_std = np.where(f_std < 1e-9, 1.0, f_std)
    if target_stats is not None:
        # pooled transform shared by every agent of the pool: one public
        # model emits one raw-unit forecast, so agents must not get
        # individually calibrated output scalings
        t_mean, t_scale = float(target_stats[0]), float(target_stats[1])
    else:
        t_mean = float(Y[train_idx].mean())
        t_scale = float(Y[train_idx].std())
    if t_scale < 1e-9:
        t_scale = 1.0

    def norm_x(a):
        return (a - f_mean) / f_std

    def norm_y(a):
        return (a - t_mean) / t_scale

    return WindowSplit(
        train_x=norm_x(X[train_idx]),
        train_y=norm_y(Y[train_idx]),
        test_x=norm_x(X[test_idx]),
        test_y=norm_y(Y[test_idx]),
        train_y_raw=Y[train_idx],
        test_y_raw=Y[test_idx],
        feature_mean=f_mean,
        feature_std=f_std,
        target_mean=t_mean,
        target_scale=t_scale,
        train_idx=train_idx,
        test_idx=test_idx,
        train_ctx=None if ctx is None else ctx[train_idx],
        test_ctx=None if ctx is None else ctx[test_idx],
        train_outcome=None if outcome is None else outcome[train_idx],
        test_outcome=None if outcome is None else outcome[test_idx],
    )


def window_split_batches(dataset: SeriesDataset, lookback: int, split: SplitSpec, batch_size: int, agent: int | None = None, target_steps: int = 1):
    """Spec-level convenience: batch iterators over a dataset's windows.

    Uses the shared signal as features; targets come from the agent's
    outcome stream when `agent` is given, else from the signal itself.
    Returns (train_batches, test_batches) generator factories are not needed
    by callers here, so plain generators are returned.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    targets = dataset.signal if agent is None else dataset.agent_targets[agent]
    ws = window_split(dataset.signal, targets, lookback, split, target_steps=target_steps)

    def batches(X, Y, shuffle_seed=None):
        order = np.arange(X.shape[0])
        if shuffle_seed is not None:
            order = np.random.default_rng(shuffle_seed).permutation(X.shape[0])
        for start in range(0, X.shape[0], batch_size):
            sel = order[start : start + batch_size]
            yield X[sel], Y[sel]

    return batches(ws.train_x, ws.train_y, shuffle_seed=split.seed), batches(ws.test_x, ws.test_y)
