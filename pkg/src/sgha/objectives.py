"""Loss terms of the attack and their input gradients.

Every ``*_grad`` helper returns the loss value together with the gradient
with respect to the quantity the loss reads (embedding, CLS token, pooled
patches); :func:`evaluate` chains them back to the image.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .anchors import AnchorSet
from .errors import EvaluationError, ParameterError
from .numerics import cosine_distance, cosine_distance_grad, cosine_similarity
from .surrogate import (
    SurrogateModel,
    bundle_from_hidden,
    encode_text,
    image_backward,
    image_forward,
    layernorm_backward,
    normalize_text,
    normalize_visual,
    project_text,
    project_visual,
    text_layer_for,
)


@dataclass(frozen=True)
class LossWeights:
    lambda_anc: float = 1.0
    lambda_feat: float = 1.5
    lambda_cls: float = 1.0
    lambda_spa: float = 0.7
    lambda_mid: float = 2.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ParameterError(f"{f.name} must be a finite non-negative number, got {v!r}")


@dataclass(frozen=True)
class LossBreakdown:
    l_txt: float
    l_anc: float
    l_feat: float
    l_mid: float
    l_total: float

    def as_row(self) -> tuple:
        return (self.l_txt, self.l_anc, self.l_feat, self.l_mid, self.l_total)


@dataclass(frozen=True)
class TextTarget:
    """Detached text-side quantities: final embedding and projected EOS taps keyed by image layer."""

    tokens: np.ndarray
    embedding: np.ndarray
    eos: dict
    projected_eos: dict


def prepare_text_target(model: SurrogateModel, tokens, layers) -> TextTarget:
    cfg = model.config
    mapping = {l: text_layer_for(l, cfg.depth_img, cfg.depth_txt) for l in layers}
    emb, taps = encode_text(model, tokens, sorted(set(mapping.values())))
    by_depth = {t.layer_index: t.eos for t in taps}
    eos = {l: by_depth[mapping[l]] for l in layers}
    proj = {l: project_text(model, normalize_text(model, eos[l])[0]) for l in layers}
    return TextTarget(np.asarray(tokens), emb, eos, proj)


# --- individual terms ------------------------------------------------------------


def loss_txt(adv_embedding, text_embedding) -> float:
    return cosine_distance(adv_embedding, text_embedding)


def loss_txt_grad(adv_embedding, text_embedding):
    d, g, _ = cosine_distance_grad(adv_embedding, text_embedding)
    return d, g


def loss_anc(adv_embedding, anchor_set: AnchorSet) -> float:
    cos = [cosine_similarity(adv_embedding, t) for t in anchor_set.embedding_targets]
    return 1.0 - float(np.dot(anchor_set.weights, cos))


def loss_anc_grad(adv_embedding, anchor_set: AnchorSet):
    total = 1.0
    grad = np.zeros_like(np.asarray(adv_embedding, dtype=np.float64))
    for w, t in zip(anchor_set.weights, anchor_set.embedding_targets):
        d, g, _ = cosine_distance_grad(adv_embedding, t)
        total -= w * (1.0 - d)
        grad += w * g  # d(-cos) = d(D)
    return total, grad


def _check_cover(adv_layers, anchor_set: AnchorSet):
    if sorted(adv_layers) != anchor_set.layers:
        raise ParameterError(f"adversarial taps cover layers {sorted(adv_layers)}, anchor targets cover {anchor_set.layers}")


def loss_feat(adv_taps, anchor_set: AnchorSet, lambda_cls: float, lambda_spa: float) -> float:
    _check_cover([t.layer_index for t in adv_taps], anchor_set)
    total = 0.0
    for tap in adv_taps:
        tgt = anchor_set.layer_targets[tap.layer_index]
        if lambda_cls:
            total += lambda_cls * cosine_distance(tap.cls, tgt.cls_target)
        if lambda_spa:
            total += lambda_spa * cosine_distance(tap.pooled, tgt.pooled_target)
    return total


def loss_feat_grad(adv_taps, anchor_set: AnchorSet, lambda_cls: float, lambda_spa: float):
    """Return ``(value, {layer: (d_cls, d_pooled)})``."""
    _check_cover([t.layer_index for t in adv_taps], anchor_set)
    total, grads = 0.0, {}
    for tap in adv_taps:
        tgt = anchor_set.layer_targets[tap.layer_index]
        dc, gc, _ = cosine_distance_grad(tap.cls, tgt.cls_target)
        dp, gp, _ = cosine_distance_grad(tap.pooled, tgt.pooled_target)
        total += lambda_cls * dc + lambda_spa * dp
        grads[tap.layer_index] = (lambda_cls * gc, lambda_spa * gp)
    return total, grads


def _mid_pairs(model, adv_taps, text_taps):
    eos = {t.layer_index: t.eos for t in text_taps} if not isinstance(text_taps, dict) else text_taps
    missing = [t.layer_index for t in adv_taps if t.layer_index not in eos]
    if missing:
        raise ParameterError(f"no text tap for image layers {missing}")
    return eos


def loss_mid(model: SurrogateModel, adv_taps, text_taps) -> float:
    """Sum over layers of D(project(norm(cls)), project(norm(eos))).

    ``text_taps`` is either a list of text features whose ``layer_index``
    already uses image-layer numbering, or a ``{image_layer: eos}`` dict.
    """
    eos = _mid_pairs(model, adv_taps, text_taps)
    total = 0.0
    for tap in adv_taps:
        v = project_visual(model, normalize_visual(model, tap.cls)[0])
        t = project_text(model, normalize_text(model, eos[tap.layer_index])[0])
        total += cosine_distance(v, t)
    return total


def loss_mid_grad(model: SurrogateModel, adv_taps, projected_eos: dict):
    """Like :func:`loss_mid` but with precomputed projected text vectors; returns ``(value, {layer: d_cls})``."""
    total, grads = 0.0, {}
    for tap in adv_taps:
        n, cache = normalize_visual(model, tap.cls)
        v = project_visual(model, n)
        d, gv, _ = cosine_distance_grad(v, projected_eos[tap.layer_index])
        total += d
        grads[tap.layer_index] = layernorm_backward(gv @ model["img.proj"].T, cache)
    return total, grads


def loss_total(l_txt: float, l_anc: float, l_feat: float, l_mid: float, weights: LossWeights) -> LossBreakdown:
    comps = (l_txt, l_anc, l_feat, l_mid)
    if not all(np.isfinite(c) for c in comps):
        raise EvaluationError(f"non-finite loss component in {comps}")
    total = l_txt + weights.lambda_anc * l_anc + weights.lambda_feat * l_feat + weights.lambda_mid * l_mid
    return LossBreakdown(float(l_txt), float(l_anc), float(l_feat), float(l_mid), float(total))


# --- full objective -----------------------------------------------------------------


def evaluate(model: SurrogateModel, x, text: TextTarget, anchor_set: AnchorSet, weights: LossWeights,
             want_grad: bool = True):
    """Loss breakdown at image ``x`` and, optionally, ``dL_total/dx``.

    Terms whose weight is zero contribute nothing to the gradient (they are
    still reported in the breakdown).
    """
    layers = anchor_set.layers
    fwd = image_forward(model, x)
    taps = [bundle_from_hidden(l, fwd.hidden[l]) for l in layers]
    l_txt, g_txt = loss_txt_grad(fwd.embedding, text.embedding)
    l_anc, g_anc = loss_anc_grad(fwd.embedding, anchor_set)
    l_feat, g_feat = loss_feat_grad(taps, anchor_set, weights.lambda_cls, weights.lambda_spa)
    l_mid, g_mid = loss_mid_grad(model, taps, text.projected_eos)
    bd = loss_total(l_txt, l_anc, l_feat, l_mid, weights)
    if not want_grad:
        return bd, None

    d_emb = g_txt.copy()
    if weights.lambda_anc:
        d_emb += weights.lambda_anc * g_anc
    d_hidden = {}
    n_patches = fwd.hidden[0].shape[0] - 1
    for l in layers:
        g = np.zeros_like(fwd.hidden[l])
        if weights.lambda_feat:
            gc, gp = g_feat[l]
            g[0] += weights.lambda_feat * gc
            g[1:] += (weights.lambda_feat / n_patches) * gp
        if weights.lambda_mid:
            g[0] += weights.lambda_mid * g_mid[l]
        if weights.lambda_feat or weights.lambda_mid:
            d_hidden[l] = g
    return bd, image_backward(model, fwd, d_embedding=d_emb, d_hidden=d_hidden)
