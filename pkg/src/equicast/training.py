"""Training loops and evaluation for the shared forecaster.

Three modes share one loop:

* plain: squared-error training only (the accuracy-first baseline);
  exactly the beta = 1 slice of the chain gradient, built directly.
* chain: exact gradient through loss -> regret -> action -> forecast;
  valid only when every agent's decision is differentiable (data-center
  family).
* pg: score-function estimator: sample forecasts from the Gaussian head,
  multiply the summed log-density gradients by the scalar batch loss.  Works
  for discrete decisions (charging schedules).

Updates are theta <- theta - lr_t * g with lr_t = lr * decay^floor(t/step);
SGD (optionally with momentum) is the default, Adam is available for runs
that mix very different loss scales.  Everything is deterministic given the
config seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics, objective, predictor
from .agents import (
    AgentSpec,
    DataCenterContext,
    dc_act,
    dc_act_jacobian,
    dc_cost_grad_action,
    dc_regret_batch,
    ev_regret_batch,
    regret,
)
from .data import WindowSplit
from .errors import ConfigError, DivergenceError
from .objective import ChainSample
from .predictor import ParamVector

MODES = ("plain", "chain", "pg")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "plain"
    q: float = 0.0
    beta: float = 0.0
    lr: float = 0.05
    lr_step: int = 50
    lr_decay: float = 0.5
    epochs: int = 30
    batch_size: int = 128
    std: float | None = None  # None -> 0.1 * std of the (scaled) training targets
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.0
    grad_clip: float | None = None
    pg_baseline: bool = False
    pg_samples: int = 1  # independent draws of the per-batch estimator to average

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'")
        if self.q < 0:
            raise ConfigError(f"q must be nonnegative, got {self.q}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be nonnegative, got {self.lr}")
        if self.lr_step < 1:
            raise ConfigError(f"lr_step must be >= 1, got {self.lr_step}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.std is not None and self.std <= 0:
            raise ConfigError(f"std must be positive, got {self.std}")
        if self.pg_samples < 1:
            raise ConfigError(f"pg_samples must be >= 1, got {self.pg_samples}")


@dataclass(frozen=True, eq=False)
class RunSummary:
    per_agent_regret: np.ndarray
    variance: float
    mean: float
    c95_minus_c5: float
    mse: float
    entropy: float
    q: float
    beta: float
    seed: int

    def as_dict(self) -> dict:
        return {
            "per_agent_regret": [float(v) for v in self.per_agent_regret],
            "variance": self.variance,
            "mean": self.mean,
            "c95_minus_c5": self.c95_minus_c5,
            "mse": self.mse,
            "entropy": self.entropy,
            "q": self.q,
            "beta": self.beta,
            "seed": self.seed,
        }


@dataclass(eq=False)
class TrainResult:
    params: ParamVector
    step_log: list[dict] = field(default_factory=list)
    std: float = 0.0


def _check_family_support(config: TrainConfig, agents: list[AgentSpec]) -> None:
    if config.mode == "chain":
        bad = [a.agent_id for a in agents if a.family != "datacenter"]
        if bad:
            raise ConfigError(
                f"chain mode needs differentiable costs; charging agents {bad} are discrete"
            )


def _sample_context(agent: AgentSpec, ctx_value) -> DataCenterContext | None:
    """Per-sample context override (data-center workload streams)."""
    if ctx_value is None or agent.family != "datacenter":
        return None
    return replace(agent.context, workload=float(ctx_value))


def _forecast_to_decision(agent: AgentSpec, split: WindowSplit, y_raw: np.ndarray):
    """Map a raw forecast window to the scalar/vector the agent's policy consumes."""
    if agent.family == "datacenter":
        if split.predict_adapter == "window_mean":
            return float(np.mean(y_raw))
        return float(y_raw[0])
    return y_raw


def _outcome_to_decision(agent: AgentSpec, outcome_raw: np.ndarray):
    if agent.family == "datacenter":
        return float(outcome_raw[0])
    return outcome_raw


def _batch_regrets(agent: AgentSpec, split: WindowSplit, raws: np.ndarray, outcomes: np.ndarray, ctxs) -> np.ndarray:
    """Vectorized per-sample regrets for a (B, O) block of raw forecasts."""
    if agent.family == "datacenter":
        c_hat = raws.mean(axis=1) if split.predict_adapter == "window_mean" else raws[:, 0]
        w = np.full(raws.shape[0], agent.context.workload) if ctxs is None else np.asarray(ctxs, dtype=float)
        return dc_regret_batch(w, agent.context.latency_weight, c_hat, outcomes[:, 0])
    return ev_regret_batch(agent.context, raws, outcomes)


def _chain_samples(
    agent: AgentSpec,
    split: WindowSplit,
    X: np.ndarray,
    Y: np.ndarray,
    preds: np.ndarray,
    outcomes: np.ndarray,
    ctxs,
) -> list[ChainSample]:
    """Per-sample gradient factors for one agent's batch (data-center family)."""
    n_out = preds.shape[1]
    samples = []
    for i in range(X.shape[0]):
        ctx_value = None if ctxs is None else ctxs[i]
        ctx = _sample_context(agent, ctx_value) or agent.context
        y_raw = split.to_raw(preds[i])
        c_hat = _forecast_to_decision(agent, split, y_raw)
        c_true = _outcome_to_decision(agent, outcomes[i])
        p_hat = dc_act(ctx, c_hat)
        r = regret(agent, c_hat, c_true, context=ctx).value
        dcost = dc_cost_grad_action(ctx, p_hat, c_true)
        dact = dc_act_jacobian(ctx, c_hat)
        # d(c_hat)/d(model output): target scale, spread over the window if
        # the policy consumes the window mean
        d_adapter = split.target_scale / (n_out if split.predict_adapter == "window_mean" else 1.0)
        samples.append(
            ChainSample(
                agent=agent.agent_id,
                x=X[i],
                y_hat=preds[i],
                y=Y[i],
                regret=r,
                dcost_daction=dcost,
                daction_dyhat=np.full(n_out, dact * d_adapter),
            )
        )
    return samples


def default_std(config: TrainConfig, data: list[WindowSplit]) -> float:
    if config.std is not None:
        return config.std
    pooled = np.concatenate([d.train_y.ravel() for d in data])
    return 0.1 * max(float(pooled.std()), 1e-6)


def train(config: TrainConfig, params: ParamVector, agents: list[AgentSpec], data: list[WindowSplit]) -> TrainResult:
    """Run epochs of per-batch updates; returns final parameters and a step log."""
    if len(agents) != len(data):
        raise ConfigError(f"{len(agents)} agents but {len(data)} data splits")
    if not agents:
        raise ConfigError("empty agent pool")
    for a, d in zip(agents, data):
        if d.train_x.shape[0] == 0:
            raise ConfigError(f"agent {a.agent_id} has an empty training split")
    _check_family_support(config, agents)

    rng = np.random.default_rng(config.seed)
    std = default_std(config, data)
    theta = params.values.copy()
    velocity = np.zeros_like(theta)
    adam_m = np.zeros_like(theta)
    adam_v = np.zeros_like(theta)
    step_log: list[dict] = []

    counts = [d.train_x.shape[0] for d in data]
    batch_sizes = [min(config.batch_size, n) for n in counts]
    steps_per_epoch = min(n // b for n, b in zip(counts, batch_sizes))
    baseline_ema: float | None = None  # tracks past batch losses only

    t = 0
    for _ in range(config.epochs):
        perms = [rng.permutation(n) for n in counts]
        for k in range(steps_per_epoch):
            current = params.with_values(theta)
            grad = np.zeros_like(theta)
            eq_term = math.nan
            mse_term = 0.0
            # non-finite values are detected explicitly below; numpy's
            # overflow warnings on the way there are just noise
            with np.errstate(over="ignore", invalid="ignore"):
                if config.mode == "plain":
                    # squared-error gradient only: the beta=1 slice of the chain
                    # path, with the per-sample factors short-circuited
                    X_blocks, cot_blocks = [], []
                    for agent, split, perm, b in zip(agents, data, perms, batch_sizes):
                        sel = perm[k * b : (k + 1) * b]
                        X, Y = split.train_x[sel], split.train_y[sel]
                        preds = predictor.forward_batch(current, X)
                        mse_term += float(np.mean(np.sum((preds - Y) ** 2, axis=1)))
                        X_blocks.append(X)
                        cot_blocks.append((2.0 / b) * (preds - Y))
                    grad = predictor.vjp_batch(current, np.concatenate(X_blocks), np.concatenate(cot_blocks))
                    combined = mse_term
                elif config.mode == "chain":
                    all_samples: list[ChainSample] = []
                    regrets = []
                    for agent, split, perm, b in zip(agents, data, perms, batch_sizes):
                        sel = perm[k * b : (k + 1) * b]
                        X, Y = split.train_x[sel], split.train_y[sel]
                        outcomes = split.train_outcome[sel]
                        ctxs = None if split.train_ctx is None else split.train_ctx[sel]
                        preds = predictor.forward_batch(current, X)
                        mse_term += float(np.mean(np.sum((preds - Y) ** 2, axis=1)))
                        samples = _chain_samples(agent, split, X, Y, preds, outcomes, ctxs)
                        all_samples.extend(samples)
                        regrets.append(np.mean([s.regret for s in samples]))
                    grad = objective.chain_grad(current, all_samples, config.q, config.beta)
                    eq_term = objective.equitable_loss(regrets, config.q)
                    combined = (1.0 - config.beta) * eq_term + config.beta * mse_term
                else:  # pg
                    n_draws = config.pg_samples
                    X_blocks, eps_blocks = [], []
                    mse_by_draw = np.zeros(n_draws)
                    regret_means = np.zeros((n_draws, len(agents)))
                    for a_i, (agent, split, perm, b) in enumerate(zip(agents, data, perms, batch_sizes)):
                        sel = perm[k * b : (k + 1) * b]
                        X, Y = split.train_x[sel], split.train_y[sel]
                        outcomes = split.train_outcome[sel]
                        ctxs = None if split.train_ctx is None else split.train_ctx[sel]
                        preds = predictor.forward_batch(current, X)
                        eps = rng.standard_normal((n_draws, b, preds.shape[1]))
                        sampled = preds[None, :, :] + std * eps
                        raws = split.to_raw(sampled.reshape(n_draws * b, -1))
                        out_rep = np.tile(outcomes, (n_draws, 1))
                        ctx_rep = None if ctxs is None else np.tile(ctxs, n_draws)
                        regs = _batch_regrets(agent, split, raws, out_rep, ctx_rep).reshape(n_draws, b)
                        regret_means[:, a_i] = regs.mean(axis=1)
                        mse_by_draw += np.sum((sampled - Y[None, :, :]) ** 2, axis=2).mean(axis=1)
                        X_blocks.append(np.tile(X, (n_draws, 1)))
                        eps_blocks.append(eps)
                    eq_by_draw = np.sum(np.clip(regret_means, 0.0, None) ** (config.q + 1.0), axis=1)
                    losses = (1.0 - config.beta) * eq_by_draw + config.beta * mse_by_draw
                    # baseline: leave-one-out mean across draws when available,
                    # else an EMA of past batch losses; both are independent of
                    # the draw they are subtracted from
                    if config.pg_baseline and n_draws > 1:
                        base = (losses.sum() - losses) / (n_draws - 1)
                    elif config.pg_baseline and baseline_ema is not None:
                        base = np.full(n_draws, baseline_ema)
                    else:
                        base = np.zeros(n_draws)
                    weights = (losses - base) / (n_draws * std)
                    cot_blocks = [
                        (eps * weights[:, None, None]).reshape(eps.shape[0] * eps.shape[1], -1)
                        for eps in eps_blocks
                    ]
                    grad = predictor.vjp_batch(
                        current, np.concatenate(X_blocks), np.concatenate(cot_blocks)
                    )
                    eq_term = float(eq_by_draw.mean())
                    mse_term = float(mse_by_draw.mean())
                    combined = float(losses.mean())
                    if math.isfinite(combined):
                        baseline_ema = (
                            combined if baseline_ema is None else 0.9 * baseline_ema + 0.1 * combined
                        )

            if not math.isfinite(combined) or not np.all(np.isfinite(grad)):
                raise DivergenceError(
                    f"non-finite loss or gradient at step {t}: loss={combined}, "
                    f"|grad|max={np.max(np.abs(grad)) if grad.size else math.nan}",
                    step=t,
                    values=(combined,),
                )

            if config.grad_clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > config.grad_clip:
                    grad = grad * (config.grad_clip / norm)

            lr_t = config.lr * config.lr_decay ** (t // config.lr_step)
            if config.optimizer == "sgd":
                velocity = config.momentum * velocity + grad
                theta = theta - lr_t * velocity
            else:
                adam_m = 0.9 * adam_m + 0.1 * grad
                adam_v = 0.999 * adam_v + 0.001 * grad**2
                m_hat = adam_m / (1.0 - 0.9 ** (t + 1))
                v_hat = adam_v / (1.0 - 0.999 ** (t + 1))
                theta = theta - lr_t * m_hat / (np.sqrt(v_hat) + 1e-8)

            step_log.append(
                {"step": t, "lr": lr_t, "equitable": eq_term, "mse": mse_term, "combined": combined}
            )
            t += 1

    return TrainResult(params=params.with_values(theta), step_log=step_log, std=std)


def evaluate(params: ParamVector, agents: list[AgentSpec], data: list[WindowSplit], q: float = 0.0, beta: float = 0.0, seed: int = 0) -> RunSummary:
    """Deterministic (Gaussian-mean) inference on the test split, plus statistics."""
    if len(agents) != len(data):
        raise ConfigError(f"{len(agents)} agents but {len(data)} data splits")
    mean_regrets = []
    preds_raw = []
    targets_raw = []
    for agent, split in zip(agents, data):
        if split.test_x.shape[0] == 0:
            raise ConfigError(f"agent {agent.agent_id} has an empty test split")
        preds = predictor.forward_batch(params, split.test_x)
        raws = split.to_raw(preds)
        values = _batch_regrets(agent, split, raws, split.test_outcome, split.test_ctx)
        mean_regrets.append(float(np.mean(values)))
        preds_raw.append(raws)
        targets_raw.append(split.test_y_raw)
    r = np.asarray(mean_regrets)
    return RunSummary(
        per_agent_regret=r,
        variance=metrics.variance(r),
        mean=float(r.mean()),
        c95_minus_c5=metrics.percentile_gap(r),
        mse=metrics.mse(preds_raw, targets_raw),
        entropy=metrics.norm_entropy(r),
        q=q,
        beta=beta,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Analytic two-agent toys for the equity theorems.  These bypass the network:
# the statements are about the optimum of the objective itself.


@dataclass(frozen=True, eq=False)
class QuadraticToy:
    """Per-agent costs (theta - t_m)^2 + c_m: strictly convex, minimum c_m > 0 off-target."""

    targets: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float))
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=float))
        if self.targets.shape != self.offsets.shape or self.targets.size < 2:
            raise ConfigError("toy needs matching target/offset vectors of length >= 2")
        if np.any(self.offsets < 0):
            raise ConfigError("offsets must be nonnegative")

    def costs(self, theta: float) -> np.ndarray:
        return (theta - self.targets) ** 2 + self.offsets

    def loss(self, theta: float, q: float) -> float:
        return float(np.sum(self.costs(theta) ** (q + 1.0)))

    def loss_grad(self, theta: float, q: float) -> float:
        c = self.costs(theta)
        return float(np.sum((q + 1.0) * c**q * 2.0 * (theta - self.targets)))

    def loss_hess(self, theta: float, q: float) -> float:
        c = self.costs(theta)
        dc = 2.0 * (theta - self.targets)
        return float(np.sum((q + 1.0) * (q * np.where(c > 0, c, 1.0) ** (q - 1.0) * dc**2 + c**q * 2.0)))


def _golden_min(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def minimize_toy(toy: QuadraticToy, q: float) -> float:
    """Global minimizer of the toy's aggregate loss.

    Golden-section brackets the optimum; a few Newton steps on the gradient
    then push it to machine precision (golden alone stalls near sqrt(eps)
    because it compares nearly-equal function values).
    """
    lo = float(toy.targets.min()) - 1.0
    hi = float(toy.targets.max()) + 1.0
    theta = _golden_min(lambda th: toy.loss(th, q), lo, hi)
    for _ in range(50):
        g = toy.loss_grad(theta, q)
        h = toy.loss_hess(theta, q)
        if h <= 0:
            break
        step = g / h
        theta -= step
        if abs(step) < 1e-14 * max(1.0, abs(theta)):
            break
    return theta


def theorem_check_variance(toy: QuadraticToy) -> tuple[float, float]:
    """Variance of per-agent costs at the q=0 and q=1 optima; q=1 must not be worse."""
    var0 = metrics.variance(toy.costs(minimize_toy(toy, 0.0)))
    var1 = metrics.variance(toy.costs(minimize_toy(toy, 1.0)))
    if var1 > var0 + 1e-9:
        raise AssertionError(f"equity-by-variance violated: var(q=1)={var1} > var(q=0)={var0}")
    return var0, var1


def theorem_check_entropy(toy: QuadraticToy, q_grid, h: float = 1e-3) -> list[float]:
    """Central-difference d/dp of the normalized entropy of costs^(q+1) at theta*_p, p=q.

    Each derivative must be >= -1e-6 (entropy of the outcome distribution
    does not drop when the exponent is nudged up).
    """
    if np.any(toy.offsets <= 0):
        raise ConfigError("entropy check needs strictly positive offsets (log of costs)")
    derivs = []
    for q in q_grid:
        lo_p = q - h
        if lo_p < -0.999:
            raise ConfigError(f"q={q} too small for central step {h}")
        h_hi = metrics.norm_entropy(toy.costs(minimize_toy(toy, q + h)), exponent=q + 1.0)
        h_lo = metrics.norm_entropy(toy.costs(minimize_toy(toy, lo_p)), exponent=q + 1.0)
        d = (h_hi - h_lo) / (2.0 * h)
        if d < -1e-6:
            raise AssertionError(f"entropy derivative {d} < -1e-6 at q={q}")
        derivs.append(d)
    return derivs
