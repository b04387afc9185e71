"""The fairness-weighted training objective and its two gradient routes.

The loss aggregates per-agent mean regrets r_m as sum_m r_m^(q+1).  Raising
q shifts weight onto the worst-off agents; q = 0 recovers the plain sum.  A
mixing weight beta in [0, 1] blends in the forecaster's own squared error,
trading fairness against accuracy.

Two gradient paths are provided:

* `chain_grad` multiplies the per-sample factors loss->regret->action->
  prediction->parameters; it requires every factor to exist (differentiable
  costs only).
* `pg_batch_grad` is the score-function estimator: the summed log-density
  gradients of the sampled predictions times the scalar batch loss.  It only
  needs cost *values*, so it covers discrete actions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import predictor
from .predictor import ParamVector

NEG_REGRET_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class BatchLoss:
    """Loss components for one batch: per-agent regrets and the blended total."""

    per_agent_regret: np.ndarray
    q: float
    beta: float
    equitable: float
    mse: float
    combined: float


def _clean_regrets(mean_regrets) -> np.ndarray:
    r = np.asarray(mean_regrets, dtype=float)
    if r.size == 0:
        raise ValueError("need at least one agent")
    if np.any(r < -NEG_REGRET_TOL):
        raise ValueError(f"mean regret below -{NEG_REGRET_TOL}: {r.min()}")
    return np.clip(r, 0.0, None)


def equitable_loss(mean_regrets, q: float) -> float:
    """sum_m r_m^(q+1) over per-agent mean regrets."""
    if q < 0:
        raise ValueError(f"q must be nonnegative, got {q}")
    r = _clean_regrets(mean_regrets)
    return float(np.sum(r ** (q + 1.0)))


def combined_loss(mean_regrets, mean_sq_errors, q: float, beta: float) -> BatchLoss:
    """Blend the regret aggregate with the per-agent-mean squared error sum."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    r = _clean_regrets(mean_regrets)
    eq = equitable_loss(r, q)
    m = float(np.sum(np.asarray(mean_sq_errors, dtype=float)))
    return BatchLoss(
        per_agent_regret=r,
        q=float(q),
        beta=float(beta),
        equitable=eq,
        mse=m,
        combined=(1.0 - beta) * eq + beta * m,
    )


@dataclass(frozen=True, eq=False)
class ChainSample:
    """Per-sample factors needed by the exact gradient.

    `dcost_daction` and `daction_dyhat` are the downstream derivatives of the
    taken action's cost and of the policy; `y_hat`/`y` are on the scale the
    model emits (the residual drives the squared-error part of the gradient).
    """

    agent: int
    x: np.ndarray
    y_hat: np.ndarray
    y: np.ndarray
    regret: float
    dcost_daction: float
    daction_dyhat: np.ndarray


def chain_grad(params: ParamVector, samples: list[ChainSample], q: float, beta: float) -> np.ndarray:
    """Exact gradient of the blended objective along the differentiable path.

    Per sample the regret part contributes
        (1-beta) * (q+1) * rbar_m^q / N_m * dC/da * da/dyhat
    and the accuracy part contributes beta * (2/N_m) * (y_hat - y), both
    backpropagated through the network in one batched pass.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if q < 0:
        raise ValueError(f"q must be nonnegative, got {q}")
    if not samples:
        raise ValueError("empty batch")
    counts: dict[int, int] = {}
    sums: dict[int, float] = {}
    for s in samples:
        counts[s.agent] = counts.get(s.agent, 0) + 1
        sums[s.agent] = sums.get(s.agent, 0.0) + s.regret
    rbar = {m: max(sums[m] / counts[m], 0.0) for m in counts}

    X = np.stack([np.asarray(s.x, dtype=float) for s in samples])
    cots = np.zeros((len(samples), params.n_outputs))
    for i, s in enumerate(samples):
        n_m = counts[s.agent]
        if beta < 1.0:
            weight = (q + 1.0) * rbar[s.agent] ** q / n_m
            cots[i] += (1.0 - beta) * weight * s.dcost_daction * np.asarray(
                s.daction_dyhat, dtype=float
            )
        if beta > 0.0:
            cots[i] += beta * (2.0 / n_m) * (
                np.asarray(s.y_hat, dtype=float) - np.asarray(s.y, dtype=float)
            )
    return predictor.vjp_batch(params, X, cots)


def pg_batch_grad(
    score_grads,
    regrets_by_agent,
    q: float,
    beta: float = 0.0,
    sq_errors_by_agent=None,
    baseline: float = 0.0,
) -> np.ndarray:
    """Score-function gradient for one batch.

    `score_grads` holds one log-density gradient per sampled prediction (any
    agent); `regrets_by_agent` / `sq_errors_by_agent` hold the per-sample
    values grouped per agent.  The estimator is the summed scores times the
    scalar batch loss; `baseline` is subtracted from the loss before the
    multiplication and must not depend on the drawn samples.
    """
    scores = np.asarray(score_grads, dtype=float)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("score_grads must be a nonempty (B_total, P) array")
    if len(regrets_by_agent) == 0:
        raise ValueError("empty batch")
    mean_regrets = []
    for group in regrets_by_agent:
        g = np.asarray(group, dtype=float)
        if g.size == 0:
            raise ValueError("agent with empty batch")
        mean_regrets.append(g.mean())
    loss = (1.0 - beta) * equitable_loss(mean_regrets, q)
    if beta > 0.0:
        if sq_errors_by_agent is None:
            raise ValueError("beta > 0 requires per-agent squared errors")
        loss += beta * float(
            np.sum([np.mean(np.asarray(g, dtype=float)) for g in sq_errors_by_agent])
        )
    return scores.sum(axis=0) * (loss - baseline)


# ---------------------------------------------------------------------------
# Dual-norm identity


def holder_max_value(mean_regrets, q: float) -> float:
    """max over ||v||_p <= 1 of sum_m v_m r_m with 1/p + 1/(q+1) = 1.

    Computed through the explicit maximizer v_m proportional to r_m^q
    (v = all-ones when q = 0, where p is infinite).
    """
    if q < 0:
        raise ValueError(f"q must be nonnegative, got {q}")
    r = _clean_regrets(mean_regrets)
    if np.all(r == 0.0):
        return 0.0
    if q == 0:
        return float(np.sum(r))
    p = (q + 1.0) / q
    # the maximizer is invariant to scaling r, so normalize before the q-th
    # power to keep tiny regrets from underflowing
    w = (r / r.max()) ** q
    v = w / np.sum(w**p) ** (1.0 / p)
    return float(np.sum(v * r))


def dual_norm_value(mean_regrets, q: float) -> float:
    """(sum_m r_m^(q+1))^(1/(q+1)), cross-checked against the explicit maximizer."""
    r = _clean_regrets(mean_regrets)
    closed = equitable_loss(r, q) ** (1.0 / (q + 1.0))
    witness = holder_max_value(r, q)
    if abs(closed - witness) > 1e-9 * max(1.0, closed):
        raise AssertionError(
            f"dual-norm identity violated: closed form {closed} vs maximizer {witness}"
        )
    return closed
