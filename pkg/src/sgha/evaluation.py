"""Desk-scale evaluation: alignment transfer proxy, SSIM, PSNR and bit-depth reduction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .errors import DimensionError, ParameterError
from .io import atomic_write_text
from .numerics import cosine_similarity
from .surrogate import SurrogateModel, encode_image, encode_text

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

TRANSFER_COLUMNS = ("image_id", "surrogate_seed", "defense", "clean_alignment", "adv_alignment", "delta_alignment")
SUMMARY_COLUMNS = ("surrogate_seed", "defense", "pairs", "median_clean", "median_adv", "median_delta")
QUALITY_COLUMNS = ("image_id", "ssim", "psnr", "linf")


def alignment_score(model: SurrogateModel, x, target_tokens) -> float:
    return cosine_similarity(encode_image(model, x)[0], encode_text(model, target_tokens)[0])


def _same_dims(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def ssim(x, y) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows, averaged over channels."""
    x, y = _same_dims(x, y)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise DimensionError(f"image {x.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    filt = _kernels.K.filter_valid
    vals = []
    for c in range(x.shape[2]):
        a = np.ascontiguousarray(x[..., c])
        b = np.ascontiguousarray(y[..., c])
        mu_a, mu_b = filt(a, g), filt(b, g)
        var_a = filt(a * a, g) - mu_a * mu_a
        var_b = filt(b * b, g) - mu_b * mu_b
        cov = filt(a * b, g) - mu_a * mu_b
        num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
        vals.append(float((num / den).mean()))
    return float(np.mean(vals))


def psnr(x, y) -> float:
    x, y = _same_dims(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse)))


def bit_reduce(x, bits: int) -> np.ndarray:
    """Round each value to the nearest of ``2**bits`` evenly spaced levels in [0, 1] (ties up)."""
    if int(bits) != bits or not 1 <= bits <= 8:
        raise ParameterError(f"bits must be an integer in [1, 8], got {bits!r}")
    levels = 2**int(bits) - 1
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.floor(x * levels + 0.5), 0, levels) / levels


@dataclass(frozen=True)
class QualityReport:
    ssim: float
    psnr: float
    linf: float


def quality_report(x, x_adv) -> QualityReport:
    x, x_adv = _same_dims(x, x_adv)
    return QualityReport(ssim(x, x_adv), psnr(x, x_adv), float(np.abs(x_adv - x).max()))


@dataclass(frozen=True)
class TransferRow:
    image_id: str
    surrogate_seed: int
    defense: str
    clean_alignment: float
    adv_alignment: float

    @property
    def delta_alignment(self) -> float:
        return self.adv_alignment - self.clean_alignment


@dataclass(frozen=True)
class TransferReport:
    rows: tuple

    def deltas(self, seed=None, defense: str = "none") -> np.ndarray:
        return np.array([r.delta_alignment for r in self.rows
                         if (seed is None or r.surrogate_seed == seed) and r.defense == defense])

    def medians(self) -> list[tuple]:
        """One ``(seed, defense, n, median_clean, median_adv, median_delta)`` tuple per group, in first-seen order."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r.surrogate_seed, r.defense), []).append(r)
        out = []
        for (seed, defense), rs in groups.items():
            out.append((seed, defense, len(rs),
                        float(np.median([r.clean_alignment for r in rs])),
                        float(np.median([r.adv_alignment for r in rs])),
                        float(np.median([r.delta_alignment for r in rs]))))
        return out


def named_defense(name: str) -> Callable:
    """``none`` or ``bitN`` (bit-depth reduction to N bits)."""
    if name == "none":
        return lambda x: np.asarray(x, dtype=np.float64)
    if name.startswith("bit") and name[3:].isdigit():
        bits = int(name[3:])
        bit_reduce(np.zeros(1), bits)  # validates the range
        return lambda x: bit_reduce(x, bits)
    raise ParameterError(f"unknown defense {name!r}; expected 'none' or 'bitN'")


def run_transfer_eval(images, adversarials, target_tokens, surrogates, defenses=("none",), ids=None,
                      seeds=None) -> TransferReport:
    """Alignment of clean and adversarial images under each surrogate and defense.

    ``target_tokens`` is one token sequence per image. ``defenses`` are names
    accepted by :func:`named_defense`; each is applied to both the clean and
    the adversarial image.
    """
    if not (len(images) == len(adversarials) == len(target_tokens)):
        raise ParameterError("images, adversarials and targets must have equal lengths")
    if not surrogates:
        raise ParameterError("at least one surrogate is required")
    ids = ids or [f"img_{i:03d}" for i in range(len(images))]
    seeds = seeds or [m.config.seed for m in surrogates]
    rows = []
    for model, seed in zip(surrogates, seeds):
        text_cache = {}
        for name in defenses:
            transform = named_defense(name)
            for iid, x, xa, tok in zip(ids, images, adversarials, target_tokens):
                key = tuple(int(t) for t in tok)
                if key not in text_cache:
                    text_cache[key] = encode_text(model, tok)[0]
                te = text_cache[key]
                ca = cosine_similarity(encode_image(model, transform(x))[0], te)
                aa = cosine_similarity(encode_image(model, transform(xa))[0], te)
                rows.append(TransferRow(iid, int(seed), name, ca, aa))
    return TransferReport(tuple(rows))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def transfer_csv(report: TransferReport) -> str:
    return _csv(TRANSFER_COLUMNS, [(r.image_id, r.surrogate_seed, r.defense, r.clean_alignment,
                                     r.adv_alignment, r.delta_alignment) for r in report.rows])


def transfer_summary_csv(report: TransferReport) -> str:
    return _csv(SUMMARY_COLUMNS, report.medians())


def quality_csv(ids, reports) -> str:
    return _csv(QUALITY_COLUMNS, [(i, q.ssim, q.psnr, q.linf) for i, q in zip(ids, reports)])


def write_csv(path, text: str) -> None:
    atomic_write_text(Path(path), text)
