"""Elementary differentiable operations and a finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateInputError, DimensionError, EvaluationError, ParameterError


@dataclass(frozen=True)
class GradientReport:
    max_relative_error: float
    worst_coordinate: int
    analytic_value: float
    numeric_value: float
    coordinates_checked: int


def _as_vectors(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or a.shape != b.shape:
        raise DimensionError(f"cosine needs equal, non-empty lengths; got {a.size} and {b.size}")
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    if not (na > 0.0 and nb > 0.0):
        raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    return a, b, na, nb


def cosine_similarity(a, b) -> float:
    a, b, na, nb = _as_vectors(a, b)
    # rounding can push |cos| a hair past 1
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)``; lies in [0, 2]."""
    return 1.0 - cosine_similarity(a, b)


def cosine_distance_grad(a, b):
    """Return ``(distance, d/da, d/db)``.

    Gradients use the unclipped cosine, so they stay consistent with finite
    differences even when the clip above is active.
    """
    a, b, na, nb = _as_vectors(a, b)
    c = (a @ b) / (na * nb)
    dcos_da = b / (na * nb) - c * a / (na * na)
    dcos_db = a / (na * nb) - c * b / (nb * nb)
    return 1.0 - float(np.clip(c, -1.0, 1.0)), -dcos_da, -dcos_db


def softmax_temperature(scores, tau: float) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).ravel()
    if not (np.isfinite(tau) and tau > 0):
        raise ParameterError(f"temperature must be positive and finite, got {tau!r}")
    if s.size == 0:
        raise ParameterError("softmax of an empty score vector")
    if not np.all(np.isfinite(s)):
        raise ParameterError("scores must be finite")
    z = (s - s.max()) / tau
    e = np.exp(z)
    return e / e.sum()


def mean_pool_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ParameterError(f"mean_pool_rows needs an N x D matrix with N >= 1, got shape {m.shape}")
    return m.mean(axis=0)


def gradient_check(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x,
    step: float = 1e-5,
    n_coords: int = 64,
    seed: int = 0,
    floor: float = 1e-8,
    value_fn: Callable[[np.ndarray], float] | None = None,
) -> GradientReport:
    """Compare an analytic gradient with central finite differences.

    ``objective(x)`` must return ``(value, gradient)``. ``n_coords``
    coordinates are sampled without replacement (all of them if the input is
    smaller). Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    ``value_fn``, when given, is used for the perturbed evaluations so the
    backward pass is not recomputed at every probe.
    """
    if not step > 0:
        raise ParameterError(f"finite-difference step must be positive, got {step!r}")
    x = np.array(x, dtype=np.float64)
    value, grad = objective(x)
    if not np.isfinite(value):
        raise EvaluationError(f"objective is non-finite at the base point: {value!r}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise DimensionError(f"gradient shape {grad.shape} != input shape {x.shape}")

    f = value_fn if value_fn is not None else (lambda z: objective(z)[0])
    rng = np.random.default_rng(seed)
    k = min(n_coords, x.size)
    coords = np.sort(rng.choice(x.size, size=k, replace=False))
    flat_grad = grad.ravel()

    worst = (-1.0, -1, 0.0, 0.0)
    probe = x.copy()
    flat = probe.reshape(-1)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        fp = f(probe)
        flat[i] = orig - step
        fm = f(probe)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"objective is non-finite near coordinate {i}")
        num = (fp - fm) / (2.0 * step)
        ana = flat_grad[i]
        rel = abs(ana - num) / max(abs(ana), abs(num), floor)
        if rel > worst[0]:
            worst = (rel, int(i), float(ana), float(num))
    return GradientReport(
        max_relative_error=float(worst[0]),
        worst_coordinate=worst[1],
        analytic_value=worst[2],
        numeric_value=worst[3],
        coordinates_checked=k,
    )
