"""Two-phase targeted attack: anchor precompute, then sign-gradient PGD under an L-inf budget."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .anchors import AnchorSet, ReferencePool, build_anchor_set
from .errors import DimensionError, EvaluationError, ExportError, ParameterError
from .io import atomic_write_text, encode_ppm, atomic_write_bytes, quantize
from .objectives import LossBreakdown, LossWeights, TextTarget, evaluate, prepare_text_target
from .surrogate import SurrogateModel

PUBLISHED_LAYERS = {12: (7, 9, 11), 24: (14, 18, 22), 40: (23, 30, 37)}
TRACE_COLUMNS = ("iteration", "l_txt", "l_anc", "l_feat", "l_mid", "l_total", "max_abs_delta")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    alpha: float = 1 / 255
    steps: int = 100
    k: int = 5
    tau: float = 5.0
    layers: tuple = (7, 9, 11)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    record_trace: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(l) for l in self.layers))
        if not 0 <= self.epsilon <= 1:
            raise ParameterError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        # a zero budget is a legal no-op run whatever the step size
        if self.epsilon > 0 and self.alpha > self.epsilon:
            raise ParameterError(f"alpha {self.alpha} exceeds epsilon {self.epsilon}")
        if self.steps < 1 or self.k < 1:
            raise ParameterError("steps and K must be at least 1")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not self.layers:
            raise ParameterError("layer set must be non-empty")

    def check_depth(self, depth: int) -> None:
        bad = [l for l in self.layers if not 1 <= l <= depth]
        if bad:
            raise ParameterError(f"layers {bad} outside tower depth {depth}")


@dataclass
class AttackResult:
    x_adv: np.ndarray
    delta: np.ndarray
    final_breakdown: LossBreakdown
    initial_breakdown: LossBreakdown
    iterations_run: int
    loss_trace: list | None = None
    max_abs_delta: list | None = None


def select_layers(tower_depth: int) -> tuple:
    """Three uniformly spaced upper layers (the published sets for depths 12/24/40)."""
    if int(tower_depth) != tower_depth or tower_depth < 4:
        raise ParameterError(f"tower depth must be an integer >= 4, got {tower_depth}")
    if tower_depth in PUBLISHED_LAYERS:
        return PUBLISHED_LAYERS[tower_depth]
    raw = [int(np.floor(f * tower_depth + 0.5)) for f in (0.58, 0.75, 0.92)]
    out = tuple(sorted({min(max(l, 2), tower_depth - 1) for l in raw}))
    if len(out) != 3:
        raise ParameterError(f"depth {tower_depth} does not yield three distinct layers: {out}")
    return out


def pgd_step(delta, grad, alpha: float, epsilon: float) -> np.ndarray:
    """``clip(delta - alpha * sign(grad), -epsilon, epsilon)`` with sign(0) = 0."""
    delta = np.asarray(delta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if delta.shape != grad.shape:
        raise DimensionError(f"delta {delta.shape} and gradient {grad.shape} differ in shape")
    return np.clip(delta - alpha * np.sign(grad), -epsilon, epsilon)


def feasible_image(x, delta, epsilon: float | None = None) -> np.ndarray:
    """``clip(x + delta, 0, 1)``.

    With ``epsilon`` given, coordinates where float rounding of ``x + delta``
    leaves ``|x_adv - x| > epsilon`` are moved one ulp at a time back toward
    ``x``, so the measured L-inf distance never exceeds the budget.
    """
    x_adv = np.clip(x + delta, 0.0, 1.0)
    if epsilon is not None:
        over = np.abs(x_adv - x) > epsilon
        while over.any():
            x_adv[over] = np.nextafter(x_adv[over], x[over])
            over = np.abs(x_adv - x) > epsilon
    return x_adv


def run_attack(model: SurrogateModel, x, target_tokens, pool: ReferencePool | None, config: AttackConfig,
               anchor_set: AnchorSet | None = None, text: TextTarget | None = None) -> AttackResult:
    """Craft an adversarial image for one (image, target text) pair.

    ``anchor_set`` / ``text`` may be passed in to reuse Phase 1 work across
    images sharing a target; otherwise they are built from ``pool``.
    """
    cfg = model.config
    x = np.asarray(x, dtype=np.float64)
    if x.shape != cfg.image_shape:
        raise DimensionError(f"image must have shape {cfg.image_shape}, got {x.shape}")
    if x.min() < 0 or x.max() > 1:
        raise ParameterError("clean image pixels must lie in [0, 1]")
    config.check_depth(cfg.depth_img)

    if anchor_set is None:
        if pool is None:
            raise ParameterError("either a reference pool or a prebuilt anchor set is required")
        anchor_set = build_anchor_set(pool, model, target_tokens, config.k, config.tau, config.layers)
    if anchor_set.layers != sorted(config.layers):
        raise ParameterError(f"anchor set layers {anchor_set.layers} != config layers {sorted(config.layers)}")
    if text is None:
        text = prepare_text_target(model, target_tokens, config.layers)
    w = config.loss_weights

    delta = np.zeros_like(x)
    trace = [] if config.record_trace else None
    max_abs = [] if config.record_trace else None
    initial = None
    for t in range(config.steps):
        x_t = feasible_image(x, delta, config.epsilon)
        bd, g = evaluate(model, x_t, text, anchor_set, w)
        if not np.isfinite(bd.l_total) or not np.all(np.isfinite(g)):
            raise EvaluationError(f"non-finite loss or gradient at iteration {t}")
        if initial is None:
            initial = bd
        if trace is not None:
            trace.append(bd)
            max_abs.append(float(np.abs(delta).max()))
        # clamp passes gradient only where x + delta is inside [0, 1]
        inside = (x + delta >= 0.0) & (x + delta <= 1.0)
        delta = pgd_step(delta, np.where(inside, g, 0.0), config.alpha, config.epsilon)

    x_adv = feasible_image(x, delta, config.epsilon)
    final, _ = evaluate(model, x_adv, text, anchor_set, w, want_grad=False)
    return AttackResult(x_adv=x_adv, delta=delta, final_breakdown=final, initial_breakdown=initial,
                        iterations_run=config.steps, loss_trace=trace, max_abs_delta=max_abs)


def trace_csv(result: AttackResult) -> str:
    if result.loss_trace is None:
        raise ParameterError("attack was run without record_trace")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(TRACE_COLUMNS)
    for i, (bd, m) in enumerate(zip(result.loss_trace, result.max_abs_delta)):
        wr.writerow([i, *(repr(v) for v in bd.as_row()), repr(m)])
    return buf.getvalue()


def write_trace(result: AttackResult, path) -> None:
    atomic_write_text(Path(path), trace_csv(result))


def budget_levels(epsilon: float) -> int:
    return int(np.floor(epsilon * 255 + 0.5))


def quantize_checked(x_clean, x_adv, epsilon: float) -> np.ndarray:
    """Quantize ``x_adv`` to 8 bits and re-verify the integer L-inf budget against the quantized clean image."""
    q_adv = quantize(x_adv)
    q_clean = quantize(x_clean)
    diff = np.abs(q_adv.astype(np.int32) - q_clean.astype(np.int32))
    limit = budget_levels(epsilon)
    if diff.max() > limit:
        coord = tuple(int(c) for c in np.unravel_index(int(diff.argmax()), diff.shape))
        raise ExportError(f"quantized pixel {coord} deviates by {int(diff.max())} levels; budget is {limit}")
    return q_adv


def export_adversarial(result: AttackResult, path, x_clean, epsilon: float) -> int:
    """Write ``result.x_adv`` as PPM; returns the measured integer L-inf deviation."""
    q = quantize_checked(x_clean, result.x_adv, epsilon)
    atomic_write_bytes(Path(path), encode_ppm(q))
    return int(np.abs(q.astype(np.int32) - quantize(x_clean).astype(np.int32)).max())


def parse_fraction(text) -> float:
    """Accept ``0.03``, ``8/255`` or ``1e-3``."""
    return float(Fraction(str(text).strip()))
