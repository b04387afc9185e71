"""Downstream decision processes: costs, prediction-driven policies, optima, regret.

Two agent families are supported.

* Data center: choose a resource allocation p > w trading off an emission
  term p*c against a latency term lam*w/(p - w).  The cost is smooth in the
  forecast, so both the closed-form optimum and the policy jacobian exist.
* Charging: choose a binary schedule over a horizon of T slots at a uniform
  rate; the cheapest-k-slots schedule is exactly optimal, but the schedule is
  discrete so there is no usable jacobian.

Regret of a sample is the cost of acting on the forecast minus the cost of
acting on the realized values; it is nonnegative up to floating point noise
and clamped at zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InfeasibleActionError, SchemaError

# Forecast values at or below this floor are clamped before the allocation
# policy inverts them, keeping the policy total under bad predictions.
FORECAST_FLOOR = 1e-6

# Minimum headroom of an allocation above the workload, relative to the
# workload; keeps the policy feasible (and the headroom representable next
# to w) even when an absurdly large forecast underflows sqrt(lam*w/c).
ALLOCATION_MARGIN = 1e-9

# Regret may dip this far below zero from floating point noise before we
# treat it as an oracle bug.
REGRET_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DataCenterContext:
    """Per-decision context: workload demand and the latency-vs-emission weight."""

    workload: float
    latency_weight: float

    def __post_init__(self):
        if self.workload <= 0:
            raise ConfigError(f"workload must be positive, got {self.workload}")
        if self.latency_weight <= 0:
            raise ConfigError(f"latency weight must be positive, got {self.latency_weight}")


@dataclass(frozen=True)
class ChargingContext:
    """A charging session: initial level, required level, uniform rate, horizon.

    `water_weight` and `price_weight` are the agent's mixing weights for the
    water-efficiency and price components of its energy signal; both zero
    reduces the agent to pure carbon-aware charging (e.g. a phone topping up
    overnight).
    """

    initial: float
    demand: float
    rate: float
    horizon: int
    water_weight: float = 0.0
    price_weight: float = 0.0

    def __post_init__(self):
        if self.initial < 0:
            raise ConfigError(f"initial charge must be nonnegative, got {self.initial}")
        if self.demand <= self.initial:
            raise ConfigError(f"demand {self.demand} must exceed initial charge {self.initial}")
        if self.rate <= 0:
            raise ConfigError(f"charge rate must be positive, got {self.rate}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.water_weight < 0 or self.price_weight < 0:
            raise ConfigError("mixing weights must be nonnegative")
        if required_slots(self) > self.horizon:
            raise ConfigError(
                f"demand needs {required_slots(self)} slots but horizon is {self.horizon}"
            )


@dataclass(frozen=True)
class AgentSpec:
    """One downstream agent: family tag, decision context, optional data reference."""

    agent_id: int
    family: str  # "datacenter" | "charging"
    context: DataCenterContext | ChargingContext
    data_ref: str | None = None

    def __post_init__(self):
        if self.family not in ("datacenter", "charging"):
            raise ConfigError(f"unknown agent family '{self.family}'")
        wanted = DataCenterContext if self.family == "datacenter" else ChargingContext
        if not isinstance(self.context, wanted):
            raise ConfigError(f"{self.family} agent needs a {wanted.__name__}")


@dataclass(frozen=True)
class RegretRecord:
    agent_id: int
    value: float


# ---------------------------------------------------------------------------
# Data-center family


def dc_cost(ctx: DataCenterContext, p: float, c: float) -> float:
    """Emission plus latency cost of allocating p under realized intensity c."""
    if c <= 0:
        raise ValueError(f"intensity must be positive, got {c}")
    if p <= ctx.workload:
        raise InfeasibleActionError(
            f"allocation {p} does not exceed workload {ctx.workload}"
        )
    return p * c + ctx.latency_weight * ctx.workload / (p - ctx.workload)


def dc_act(ctx: DataCenterContext, c_hat: float) -> float:
    """Allocation chosen from a forecast: w + sqrt(lam*w / max(c_hat, floor)).

    Total in c_hat: nonpositive forecasts hit the floor and still yield a
    feasible (large) allocation; enormous forecasts keep a tiny headroom
    above the workload instead of underflowing onto it.
    """
    c_eff = max(float(c_hat), FORECAST_FLOOR)
    margin = math.sqrt(ctx.latency_weight * ctx.workload / c_eff)
    return ctx.workload + max(margin, ALLOCATION_MARGIN * ctx.workload)


def dc_act_jacobian(ctx: DataCenterContext, c_hat: float) -> float:
    """d(allocation)/d(forecast); zero in the clamped region."""
    if c_hat <= FORECAST_FLOOR:
        return 0.0
    return -0.5 * math.sqrt(ctx.latency_weight * ctx.workload) * float(c_hat) ** -1.5


def dc_cost_grad_action(ctx: DataCenterContext, p: float, c: float) -> float:
    """d(cost)/d(allocation) at (p, c)."""
    if p <= ctx.workload:
        raise InfeasibleActionError(
            f"allocation {p} does not exceed workload {ctx.workload}"
        )
    return c - ctx.latency_weight * ctx.workload / (p - ctx.workload) ** 2


def dc_optimal(ctx: DataCenterContext, c: float) -> tuple[float, float]:
    """Exact minimizer of dc_cost and its cost, from the stationarity condition."""
    if c <= 0:
        raise ValueError(f"intensity must be positive, got {c}")
    p_star = ctx.workload + math.sqrt(ctx.latency_weight * ctx.workload / c)
    cost_star = ctx.workload * c + 2.0 * math.sqrt(ctx.latency_weight * ctx.workload * c)
    return p_star, cost_star


# ---------------------------------------------------------------------------
# Charging family


def required_slots(ctx: ChargingContext) -> int:
    """Smallest number of active slots that covers demand - initial at the uniform rate."""
    return int(math.ceil((ctx.demand - ctx.initial) / ctx.rate - 1e-12))


def ev_cost(ctx: ChargingContext, schedule, energy) -> float:
    """Cost of a binary schedule against a per-slot energy signal."""
    x = np.asarray(schedule, dtype=float)
    e = np.asarray(energy, dtype=float)
    if x.shape != (ctx.horizon,) or e.shape != (ctx.horizon,):
        raise ValueError(
            f"schedule/energy must have length {ctx.horizon}, got {x.shape} and {e.shape}"
        )
    return float(ctx.rate * np.sum(x * e))


def ev_act(ctx: ChargingContext, e_hat) -> np.ndarray:
    """Charge in the k slots with the smallest forecast signal, earliest index first on ties."""
    e = np.asarray(e_hat, dtype=float)
    if e.shape != (ctx.horizon,):
        raise ValueError(f"forecast must have length {ctx.horizon}, got shape {e.shape}")
    k = required_slots(ctx)
    if k > ctx.horizon:
        raise InfeasibleActionError(f"need {k} slots but horizon is {ctx.horizon}")
    order = np.argsort(e, kind="stable")
    schedule = np.zeros(ctx.horizon, dtype=int)
    schedule[order[:k]] = 1
    return schedule


def ev_optimal(ctx: ChargingContext, energy) -> tuple[np.ndarray, float]:
    """Cheapest-k schedule under the realized signal; exactly optimal for this cost."""
    schedule = ev_act(ctx, energy)
    return schedule, ev_cost(ctx, schedule, energy)


# ---------------------------------------------------------------------------
# Regret


def regret(agent: AgentSpec, y_hat, y, context=None) -> RegretRecord:
    """Decision regret of forecasting y_hat when y realized.

    For data-center agents y_hat and y are scalars (forecast and realized
    intensity); for charging agents they are length-T signal vectors.  An
    explicit `context` overrides the agent's stored one, which lets callers
    feed per-sample workloads without rebuilding specs.
    """
    ctx = context if context is not None else agent.context
    if agent.family == "datacenter":
        c_hat = float(np.asarray(y_hat).reshape(-1)[0]) if np.ndim(y_hat) else float(y_hat)
        c = float(np.asarray(y).reshape(-1)[0]) if np.ndim(y) else float(y)
        taken = dc_cost(ctx, dc_act(ctx, c_hat), c)
        _, best = dc_optimal(ctx, c)
    else:
        schedule = ev_act(ctx, y_hat)
        taken = ev_cost(ctx, schedule, y)
        _, best = ev_optimal(ctx, y)
    value = taken - best
    if value < -REGRET_TOLERANCE:
        raise ValueError(
            f"regret {value} below -{REGRET_TOLERANCE}: decision oracle is inconsistent"
        )
    return RegretRecord(agent_id=agent.agent_id, value=max(value, 0.0))


def dc_regret_batch(workloads, lams, c_hat, c) -> np.ndarray:
    """Vectorized data-center regret; matches `regret` sample by sample."""
    w = np.asarray(workloads, dtype=float)
    lam = np.asarray(lams, dtype=float)
    ch = np.maximum(np.asarray(c_hat, dtype=float), FORECAST_FLOOR)
    cv = np.asarray(c, dtype=float)
    if np.any(cv <= 0):
        raise ValueError("realized intensity must be positive")
    p_hat = w + np.maximum(np.sqrt(lam * w / ch), ALLOCATION_MARGIN * w)
    taken = p_hat * cv + lam * w / (p_hat - w)
    best = w * cv + 2.0 * np.sqrt(lam * w * cv)
    values = taken - best
    if np.any(values < -REGRET_TOLERANCE):
        raise ValueError(f"regret {values.min()} below -{REGRET_TOLERANCE}")
    return np.clip(values, 0.0, None)


def ev_regret_batch(ctx: ChargingContext, e_hat, e) -> np.ndarray:
    """Vectorized charging regret over (B, T) forecast/realized signal rows."""
    eh = np.asarray(e_hat, dtype=float)
    ev = np.asarray(e, dtype=float)
    if eh.ndim != 2 or eh.shape[1] != ctx.horizon or ev.shape != eh.shape:
        raise ValueError(f"expected matching (B, {ctx.horizon}) matrices, got {eh.shape} and {ev.shape}")
    k = required_slots(ctx)
    if k > ctx.horizon:
        raise InfeasibleActionError(f"need {k} slots but horizon is {ctx.horizon}")
    chosen = np.argsort(eh, axis=1, kind="stable")[:, :k]
    taken = ctx.rate * np.take_along_axis(ev, chosen, axis=1).sum(axis=1)
    ideal = np.argsort(ev, axis=1, kind="stable")[:, :k]
    best = ctx.rate * np.take_along_axis(ev, ideal, axis=1).sum(axis=1)
    values = taken - best
    if np.any(values < -REGRET_TOLERANCE):
        raise ValueError(f"regret {values.min()} below -{REGRET_TOLERANCE}")
    return np.clip(values, 0.0, None)


# ---------------------------------------------------------------------------
# Agent pool files (JSON)

_DC_FIELDS = {"workload", "latency_weight"}
_EV_FIELDS = {"initial", "demand", "rate", "horizon", "water_weight", "price_weight"}


def save_agent_pool(path, agents: list[AgentSpec]) -> None:
    entries = []
    for a in agents:
        entries.append(
            {
                "agent_id": a.agent_id,
                "family": a.family,
                "context": asdict(a.context),
                "data_ref": a.data_ref,
            }
        )
    Path(path).write_text(json.dumps({"agents": entries}, indent=2))


def load_agent_pool(path) -> list[AgentSpec]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "agents" not in doc:
        raise SchemaError(f"{path}: expected an object with an 'agents' list")
    agents = []
    for i, entry in enumerate(doc["agents"]):
        for key in ("agent_id", "family", "context"):
            if key not in entry:
                raise SchemaError(f"{path}: agent entry {i} missing '{key}'")
        family = entry["family"]
        ctx_fields = dict(entry["context"])
        try:
            if family == "datacenter":
                unknown = set(ctx_fields) - _DC_FIELDS
                if unknown:
                    raise SchemaError(f"unknown datacenter context fields {sorted(unknown)}")
                ctx = DataCenterContext(**ctx_fields)
            elif family == "charging":
                unknown = set(ctx_fields) - _EV_FIELDS
                if unknown:
                    raise SchemaError(f"unknown charging context fields {sorted(unknown)}")
                ctx = ChargingContext(**ctx_fields)
            else:
                raise SchemaError(f"unknown family '{family}'")
        except ConfigError as exc:
            raise SchemaError(f"{path}: agent entry {i}: {exc}") from exc
        agents.append(
            AgentSpec(
                agent_id=int(entry["agent_id"]),
                family=family,
                context=ctx,
                data_ref=entry.get("data_ref"),
            )
        )
    return agents
