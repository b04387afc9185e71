"""Experiment orchestration: pools, single runs, sweeps, and file emission.

An experiment is described by one declarative config (JSON or TOML source,
parsed into `ExperimentConfig`).  The same config drives `generate` (write
synthetic datasets to disk), `train` (fit one model and evaluate it), and
`sweep` (grid over fairness exponent / blend weight / repeat seeds).  Every
run is deterministic given the config and seed, and all emitted files carry
the config hash and seed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as datamod
from . import predictor, training
from .agents import AgentSpec, ChargingContext, DataCenterContext, load_agent_pool, save_agent_pool
from .data import SplitSpec, WindowSplit, load_csv, synth_agents, synth_carbon, synth_charging, window_split
from .errors import ConfigError
from .training import RunSummary, TrainConfig, TrainResult

APPLICATIONS = ("datacenter", "charging", "mixed")


@dataclass(frozen=True)
class ExperimentConfig:
    application: str = "datacenter"
    n_agents: int = 10
    heterogeneity: str = "different"
    lambda_scheme: str = "grid"
    horizon: int = 12
    lookback: int = 12
    hidden: int = 24
    length: int = 600
    train_fraction: float = 0.67
    chronological: bool = False
    water_weight: float = 1.0
    price_weight: float = 1.0
    predict_target: str = "combined"
    data_dir: str | None = None
    repeats: int = 1
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep_q_plus_1: tuple = (1.0,)
    sweep_beta: tuple = (0.0,)

    def __post_init__(self):
        if self.application not in APPLICATIONS:
            raise ConfigError(f"application must be one of {APPLICATIONS}, got '{self.application}'")
        if self.n_agents < 1:
            raise ConfigError(f"n_agents must be >= 1, got {self.n_agents}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.lookback < 1 or self.horizon < 1 or self.hidden < 1 or self.length < 1:
            raise ConfigError("lookback, horizon, hidden, and length must all be >= 1")
        if any(qp1 < 1.0 for qp1 in self.sweep_q_plus_1):
            raise ConfigError(f"q+1 values must be >= 1, got {self.sweep_q_plus_1}")
        if any(not 0.0 <= b <= 1.0 for b in self.sweep_beta):
            raise ConfigError(f"beta values must lie in [0, 1], got {self.sweep_beta}")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sweep_q_plus_1"] = list(self.sweep_q_plus_1)
        d["sweep_beta"] = list(self.sweep_beta)
        return d


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    train_doc = doc.pop("train", {})
    known_train = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(train_doc) - known_train
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"train"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("sweep_q_plus_1", "sweep_beta"):
        if key in doc:
            doc[key] = tuple(doc[key])
    try:
        return ExperimentConfig(train=TrainConfig(**train_doc), **doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.as_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Pool construction


@dataclass(eq=False)
class Pool:
    agents: list[AgentSpec]
    splits: list[WindowSplit]
    arch: list[int]
    dataset: datamod.SeriesDataset | None = None


def _shared_target_stats(splits: list[WindowSplit]) -> tuple[float, float]:
    pooled = np.concatenate([s.train_y_raw.ravel() for s in splits])
    return float(pooled.mean()), max(float(pooled.std()), 1e-9)


def build_pool(config: ExperimentConfig, seed: int) -> Pool:
    """Synthesize (or load) the agent pool and window its data."""
    if config.data_dir is not None:
        return load_pool(config.data_dir, config, seed)
    split_spec = SplitSpec(config.train_fraction, seed=seed, chronological=config.chronological)
    if config.application == "datacenter":
        agents, ds = synth_agents(
            config.n_agents, config.heterogeneity, config.lambda_scheme, seed=seed, length=config.length
        )

        def make(m, stats):
            return window_split(
                ds.signal, ds.agent_targets[m], config.lookback, split_spec,
                target_steps=1, context_series=ds.workloads[m], target_stats=stats,
            )

        prelim = [make(m, None) for m in range(config.n_agents)]
        stats = _shared_target_stats(prelim)
        splits = [make(m, stats) for m in range(config.n_agents)]
        return Pool(agents, splits, [config.lookback, config.hidden, 1], ds)
    if config.application == "charging":
        agents, ds = synth_charging(
            config.n_agents, horizon=config.horizon, heterogeneity=config.heterogeneity,
            seed=seed, length=config.length, water_weight=config.water_weight,
            price_weight=config.price_weight, predict_target=config.predict_target,
        )

        def make(m, stats):
            return window_split(
                ds.signal, ds.agent_targets[m], config.lookback, split_spec,
                target_steps=config.horizon,
                outcome_series=None if ds.outcome_targets is None else ds.outcome_targets[m],
                outcome_steps=config.horizon, target_stats=stats,
            )

        prelim = [make(m, None) for m in range(config.n_agents)]
        stats = _shared_target_stats(prelim)
        splits = [make(m, stats) for m in range(config.n_agents)]
        return Pool(agents, splits, [config.lookback, config.hidden, config.horizon], ds)
    return _build_mixed_pool(config, seed, split_spec)


def _build_mixed_pool(config: ExperimentConfig, seed: int, split_spec: SplitSpec) -> Pool:
    """Carbon-only forecaster serving data-center, vehicle, and device chargers.

    The model predicts the next `horizon` steps of the shared carbon signal.
    Data-center agents consume the window mean as their intensity forecast;
    charging agents schedule against the predicted window while their
    realized costs use their own component mixes (pure carbon for devices).
    """
    rng = np.random.default_rng(seed)
    n = config.n_agents
    n_dc = max(1, n // 3)
    n_ev = max(1, (n - n_dc) // 2)
    n_dev = max(1, n - n_dc - n_ev)

    carbon = synth_carbon(config.length, seed=seed, base=2.0, daily_amplitude=0.6, noise_std=0.10)
    water = synth_carbon(config.length, seed=seed + 1, base=1.0, daily_amplitude=0.45, noise_std=0.08, phase=2.1)
    price = synth_carbon(config.length, seed=seed + 2, base=1.5, daily_amplitude=0.7, noise_std=0.10, phase=4.2)

    agents: list[AgentSpec] = []
    splits: list[WindowSplit] = []
    agent_id = 0

    lams = np.linspace(2.0, 100.0, n_dc) if config.lambda_scheme == "grid" else np.full(n_dc, 2.0)
    for i in range(n_dc):
        wl = float(rng.uniform(2.0, 8.0))
        agents.append(
            AgentSpec(agent_id, "datacenter", DataCenterContext(workload=wl, latency_weight=float(lams[i])))
        )
        ws = window_split(
            carbon, carbon, config.lookback, split_spec,
            target_steps=config.horizon, outcome_series=carbon, outcome_steps=1,
        )
        ws.predict_adapter = "window_mean"
        splits.append(ws)
        agent_id += 1

    for i in range(n_ev + n_dev):
        is_device = i >= n_ev
        gamma = 0.0 if is_device else float(rng.uniform(0.5, 1.5)) * config.water_weight
        eta = 0.0 if is_device else float(rng.uniform(0.5, 1.5)) * config.price_weight
        rate = float(rng.uniform(0.05, 0.2)) if is_device else float(rng.uniform(1.0, 3.0))
        k = int(rng.integers(2, max(3, config.horizon - 1)))
        initial = float(rng.uniform(0.0, 0.5)) * rate
        demand = initial + (k - float(rng.uniform(0.2, 0.8))) * rate
        ctx = ChargingContext(
            initial=initial, demand=demand, rate=rate, horizon=config.horizon,
            water_weight=gamma, price_weight=eta,
        )
        agents.append(AgentSpec(agent_id, "charging", ctx))
        outcome = np.clip(carbon + gamma * water + eta * price, 0.01, None)
        splits.append(
            window_split(
                carbon, carbon, config.lookback, split_spec,
                target_steps=config.horizon, outcome_series=outcome, outcome_steps=config.horizon,
            )
        )
        agent_id += 1

    return Pool(agents, splits, [config.lookback, config.hidden, config.horizon], None)


# ---------------------------------------------------------------------------
# Dataset files


def generate_files(config: ExperimentConfig, out_dir) -> dict:
    """Write the synthetic pool to CSV + JSON files; returns the meta document."""
    if config.application == "mixed":
        raise ConfigError("mixed pools are synthesized in memory; file emission covers the two base applications")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seed
    tag = f"config_hash={config_hash(config)} seed={seed}"

    if config.application == "datacenter":
        agents, ds = synth_agents(
            config.n_agents, config.heterogeneity, config.lambda_scheme, seed=seed, length=config.length
        )
        schema_col = "carbon_intensity"
    else:
        agents, ds = synth_charging(
            config.n_agents, horizon=config.horizon, heterogeneity=config.heterogeneity,
            seed=seed, length=config.length, water_weight=config.water_weight,
            price_weight=config.price_weight, predict_target=config.predict_target,
        )
        schema_col = "E"

    datamod.write_series_csv(out / "signal.csv", ds.timestamps, ds.signal, schema_col, comment=tag)
    refs = []
    for m in range(config.n_agents):
        name = f"target_m{m:03d}.csv"
        datamod.write_series_csv(out / name, ds.timestamps, ds.agent_targets[m], schema_col, comment=tag)
        refs.append(name)
    outcome_refs = None
    if ds.outcome_targets is not None:
        outcome_refs = []
        for m in range(config.n_agents):
            name = f"outcome_m{m:03d}.csv"
            datamod.write_series_csv(out / name, ds.timestamps, ds.outcome_targets[m], schema_col, comment=tag)
            outcome_refs.append(name)
    if ds.workloads is not None:
        datamod.write_workload_csv(out / "workloads.csv", ds.timestamps, ds.workloads, comment=tag)
    agents = [replace(a, data_ref=refs[i]) for i, a in enumerate(agents)]
    save_agent_pool(out / "agents.json", agents)

    meta = {
        "config": config.as_dict(),
        "config_hash": config_hash(config),
        "seed": seed,
        "application": config.application,
        "schema_column": schema_col,
        "outcome_refs": outcome_refs,
        "heterogeneity_summary": datamod.heterogeneity_summary(ds),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    return meta


def load_pool(data_dir, config: ExperimentConfig, seed: int) -> Pool:
    """Rebuild a pool from files written by `generate_files`."""
    root = Path(data_dir)
    meta = json.loads((root / "meta.json").read_text())
    application = meta["application"]
    schema = "carbon" if application == "datacenter" else "energy"
    agents = load_agent_pool(root / "agents.json")
    signal = load_csv(root / "signal.csv", schema).signal
    workloads = None
    if (root / "workloads.csv").exists():
        workloads = load_csv(root / "workloads.csv", "workload").workloads
    split_spec = SplitSpec(config.train_fraction, seed=seed, chronological=config.chronological)

    def make(i, agent, stats):
        targets = load_csv(root / agent.data_ref, schema).signal
        outcome = None
        if meta.get("outcome_refs"):
            outcome = load_csv(root / meta["outcome_refs"][i], schema).signal
        if application == "datacenter":
            return window_split(
                signal, targets, config.lookback, split_spec, target_steps=1,
                context_series=None if workloads is None else workloads[i], target_stats=stats,
            )
        return window_split(
            signal, targets, config.lookback, split_spec, target_steps=config.horizon,
            outcome_series=outcome, outcome_steps=config.horizon, target_stats=stats,
        )

    prelim = [make(i, a, None) for i, a in enumerate(agents)]
    stats = _shared_target_stats(prelim)
    splits = [make(i, a, stats) for i, a in enumerate(agents)]
    out_size = 1 if application == "datacenter" else config.horizon
    return Pool(agents, splits, [config.lookback, config.hidden, out_size], None)


# ---------------------------------------------------------------------------
# Runs and sweeps


def run_experiment(config: ExperimentConfig, seed: int | None = None, train_config: TrainConfig | None = None) -> tuple[RunSummary, TrainResult, Pool]:
    """Build the pool, train one model, evaluate on the test split."""
    seed = config.seed if seed is None else seed
    tc = train_config if train_config is not None else config.train
    tc = replace(tc, seed=seed)
    pool = build_pool(config, seed)
    params = predictor.init_params(pool.arch, seed)
    result = training.train(tc, params, pool.agents, pool.splits)
    summary = training.evaluate(result.params, pool.agents, pool.splits, q=tc.q, beta=tc.beta, seed=seed)
    return summary, result, pool


@dataclass(eq=False)
class SweepRow:
    q_plus_1: float
    beta: float
    seed: int
    status: str
    summary: RunSummary | None = None
    error: str = ""


def _sweep_cell(args) -> SweepRow:
    config, qp1, beta, seed = args
    tc = replace(config.train, q=qp1 - 1.0, beta=beta)
    try:
        summary, _, _ = run_experiment(config, seed=seed, train_config=tc)
        return SweepRow(qp1, beta, seed, "ok", summary=summary)
    except Exception as exc:  # sweep keeps going; the row records the failure
        return SweepRow(qp1, beta, seed, "failed", error=f"{type(exc).__name__}: {exc}")


def run_sweep(config: ExperimentConfig, q_plus_1=None, betas=None, jobs: int = 1) -> list[SweepRow]:
    """One run per (q+1, beta, seed) cell, merged in deterministic cell order."""
    q_plus_1 = list(q_plus_1 if q_plus_1 is not None else config.sweep_q_plus_1)
    betas = list(betas if betas is not None else config.sweep_beta)
    if not q_plus_1 or not betas:
        raise ConfigError("sweep grids must be nonempty")
    cells = [
        (config, qp1, beta, config.seed + rep)
        for qp1 in q_plus_1
        for beta in betas
        for rep in range(config.repeats)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_cell, cells))
    return [_sweep_cell(c) for c in cells]


def write_sweep_files(rows: list[SweepRow], out_dir, config: ExperimentConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"config_hash={config_hash(config)} seed={config.seed}"
    sweep_path = out / "sweep.csv"
    with open(sweep_path, "w") as fh:
        fh.write(f"# {tag}\n")
        fh.write("q_plus_1,beta,seed,variance,mean,c95_minus_c5,mse,status\n")
        for row in rows:
            if row.summary is None:
                fh.write(f"{row.q_plus_1:g},{row.beta:g},{row.seed},,,,,{row.status}\n")
                continue
            s = row.summary
            fh.write(
                f"{row.q_plus_1:g},{row.beta:g},{row.seed},"
                f"{s.variance!r},{s.mean!r},{s.c95_minus_c5!r},{s.mse!r},{row.status}\n"
            )
    for row in rows:
        if row.summary is None:
            continue
        name = f"regrets_q{row.q_plus_1:g}_b{row.beta:g}_s{row.seed}.csv"
        with open(out / name, "w") as fh:
            fh.write(f"# {tag}\n")
            fh.write("agent_id,mean_regret\n")
            for m, val in enumerate(row.summary.per_agent_regret):
                fh.write(f"{m},{float(val)!r}\n")
    return sweep_path


def write_step_log(path, step_log: list[dict], config: ExperimentConfig, seed: int) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash(config)} seed={seed}\n")
        fh.write("step,lr,equitable,mse,combined\n")
        for row in step_log:
            fh.write(f"{row['step']},{row['lr']!r},{row['equitable']!r},{row['mse']!r},{row['combined']!r}\n")
