"""Windowed feedforward forecaster with hand-rolled reverse-mode derivatives.

The network maps a flattened lookback window to a prediction vector through
tanh hidden layers and a linear output layer.  Parameters live in a single
flat float64 vector (`ParamVector`) so optimizers, checkpoints, and gradient
checks all see one array.  A Gaussian head with fixed standard deviation turns
the deterministic forecaster into a sampling policy; its log-density gradient
is what the score-function trainer consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

# A prediction is a plain float64 vector of length O.
Prediction = np.ndarray


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat parameter vector plus the (layer, rows, cols, bias) layout that shapes it."""

    values: np.ndarray
    layout: tuple[tuple[int, int, int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        expected = sum(r * c + b for (_, r, c, b) in self.layout)
        if self.values.shape != (expected,):
            raise ValueError(
                f"parameter vector has length {self.values.size}, layout needs {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite entries")

    @property
    def layer_sizes(self) -> list[int]:
        sizes = [self.layout[0][2]]
        sizes.extend(shape[1] for shape in self.layout)
        return sizes

    @property
    def n_inputs(self) -> int:
        return self.layout[0][2]

    @property
    def n_outputs(self) -> int:
        return self.layout[-1][1]

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values=np.asarray(values, dtype=float), layout=self.layout)


@dataclass(frozen=True, eq=False)
class FeatureWindow:
    """A flattened lookback window tagged with the agent it belongs to."""

    values: np.ndarray
    agent_id: int = 0


@dataclass(frozen=True, eq=False)
class PolicySample:
    """One draw from the Gaussian policy head, with the mean it was drawn around."""

    sample: np.ndarray
    mean: np.ndarray
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError(f"std must be positive, got {self.std}")


def init_params(arch, seed: int) -> ParamVector:
    """Fan-in uniform weights, zero biases; deterministic for a fixed seed."""
    arch = [int(n) for n in arch]
    if len(arch) < 2:
        raise ConfigError(f"architecture needs an input and an output size, got {arch}")
    if any(n < 1 for n in arch):
        raise ConfigError(f"layer sizes must be >= 1, got {arch}")
    rng = np.random.default_rng(seed)
    chunks = []
    layout = []
    for i, (fan_in, fan_out) in enumerate(zip(arch[:-1], arch[1:])):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        chunks.append(w.ravel())
        chunks.append(np.zeros(fan_out))
        layout.append((i, fan_out, fan_in, fan_out))
    return ParamVector(values=np.concatenate(chunks), layout=tuple(layout))


def unpack(params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat vector into (weight matrix, bias vector) pairs."""
    out = []
    offset = 0
    for (_, rows, cols, blen) in params.layout:
        w = params.values[offset : offset + rows * cols].reshape(rows, cols)
        offset += rows * cols
        b = params.values[offset : offset + blen]
        offset += blen
        out.append((w, b))
    return out


def _as_input(x) -> np.ndarray:
    values = getattr(x, "values", x)
    return np.asarray(values, dtype=float)


def _forward_cached(params: ParamVector, X: np.ndarray) -> list[np.ndarray]:
    """Return activations [X, h1, ..., output] for a (B, n_in) batch."""
    layers = unpack(params)
    acts = [X]
    for i, (w, b) in enumerate(layers):
        z = acts[-1] @ w.T + b
        acts.append(z if i == len(layers) - 1 else np.tanh(z))
    return acts


def forward_batch(params: ParamVector, X) -> np.ndarray:
    """Deterministic forward pass over a (B, n_in) batch of windows."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise ValueError(f"expected batch of shape (B, {params.n_inputs}), got {X.shape}")
    return _forward_cached(params, X)[-1]


def forward(params: ParamVector, x) -> Prediction:
    """Deterministic forward pass for one window; pure in (params, x)."""
    xv = _as_input(x)
    if xv.shape != (params.n_inputs,):
        raise ValueError(f"expected input of length {params.n_inputs}, got shape {xv.shape}")
    return forward_batch(params, xv[None, :])[0]


def vjp_batch(params: ParamVector, X, cotangents) -> np.ndarray:
    """Sum over the batch of cotangent^T * d(output)/d(params), as a flat vector."""
    X = np.asarray(X, dtype=float)
    cot = np.asarray(cotangents, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise ValueError(f"expected batch of shape (B, {params.n_inputs}), got {X.shape}")
    if cot.shape != (X.shape[0], params.n_outputs):
        raise ValueError(
            f"expected cotangents of shape ({X.shape[0]}, {params.n_outputs}), got {cot.shape}"
        )
    layers = unpack(params)
    acts = _forward_cached(params, X)
    grads = [None] * len(layers)
    delta = cot
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw = delta.T @ acts[i]
        gb = delta.sum(axis=0)
        grads[i] = (gw, gb)
        if i > 0:
            delta = (delta @ w) * (1.0 - acts[i] ** 2)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def vjp(params: ParamVector, x, cotangent) -> np.ndarray:
    """cotangent^T * d(output)/d(params) for a single window."""
    xv = _as_input(x)
    cot = np.asarray(cotangent, dtype=float)
    if cot.shape != (params.n_outputs,):
        raise ValueError(f"expected cotangent of length {params.n_outputs}, got shape {cot.shape}")
    return vjp_batch(params, xv[None, :], cot[None, :])


def sample_prediction(params: ParamVector, x, std: float, rng: np.random.Generator) -> PolicySample:
    """Draw sample = forward(params, x) + std * eps with eps ~ N(0, I)."""
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    mean = forward(params, x)
    sample = mean + std * rng.standard_normal(mean.shape)
    return PolicySample(sample=sample, mean=mean, std=float(std))


def score_grad(params: ParamVector, x, sample: PolicySample) -> np.ndarray:
    """Gradient of the Gaussian log-density of `sample` with respect to params.

    For an isotropic Gaussian centered on the forward pass this is the
    backpropagation of (sample - mean) / std^2.
    """
    cot = (sample.sample - sample.mean) / sample.std**2
    return vjp(params, x, cot)


# ---------------------------------------------------------------------------
# Checkpoint format: a single JSON document.  Floats round-trip bit-exactly
# because json serializes doubles via repr.


def save_checkpoint(path, params: ParamVector, std: float, lookback: int, extra: dict | None = None) -> None:
    doc = {
        "layer_sizes": params.layer_sizes,
        "std": float(std),
        "lookback": int(lookback),
        "values": [float(v) for v in params.values],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ParamVector, dict]:
    doc = json.loads(Path(path).read_text())
    for key in ("layer_sizes", "std", "lookback", "values"):
        if key not in doc:
            raise ConfigError(f"checkpoint missing field '{key}'")
    sizes = [int(n) for n in doc["layer_sizes"]]
    layout = tuple(
        (i, sizes[i + 1], sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)
    )
    params = ParamVector(values=np.asarray(doc["values"], dtype=float), layout=layout)
    meta = {"std": float(doc["std"]), "lookback": int(doc["lookback"])}
    meta.update(doc.get("extra", {}))
    return params, meta
