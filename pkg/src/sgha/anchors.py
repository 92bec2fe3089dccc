"""Reference pool ingestion, Top-K anchor selection and detached anchor targets."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyPoolError, ImageFormatError, ParameterError
from .io import atomic_write_text, read_ppm
from .numerics import cosine_similarity, softmax_temperature
from .surrogate import SurrogateModel, encode_image, encode_text


@dataclass(frozen=True)
class PoolEntry:
    id: str
    image: np.ndarray


@dataclass(frozen=True)
class ReferencePool:
    entries: tuple
    source_dir: str | None = None

    def __post_init__(self):
        if not self.entries:
            raise EmptyPoolError("reference pool is empty")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ParameterError("reference pool ids must be unique")

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_images(cls, images, ids=None) -> "ReferencePool":
        ids = ids or [f"ref_{i:03d}" for i in range(len(images))]
        return cls(tuple(PoolEntry(i, _frozen(np.asarray(im, dtype=np.float64))) for i, im in zip(ids, images)))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def load_pool(directory, expected_dims) -> ReferencePool:
    """Read every ``*.ppm`` in ``directory``, ordered by filename; the id is the file stem."""
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyPoolError(f"pool directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".ppm")
    if not files:
        raise EmptyPoolError(f"no .ppm images in {directory}")
    entries = []
    for f in files:
        img = read_ppm(f)
        if img.shape != tuple(expected_dims):
            raise ImageFormatError(f"{f.name}: shape {img.shape} does not match expected {tuple(expected_dims)}")
        entries.append(PoolEntry(f.stem, _frozen(img)))
    return ReferencePool(tuple(entries), str(directory))


def rank_topk(ids, similarities, k: int) -> list[int]:
    """Indices of the ``k`` largest similarities; ties go to the smaller id."""
    sims = np.asarray(similarities, dtype=np.float64)
    if not 1 <= k <= sims.size:
        raise ParameterError(f"K={k} must lie in [1, {sims.size}]")
    id_rank = np.argsort(np.argsort(np.asarray(ids, dtype=object), kind="stable"), kind="stable")
    order = np.lexsort((id_rank, -sims))
    return [int(i) for i in order[:k]]


def pool_similarities(pool: ReferencePool, model: SurrogateModel, text_embedding) -> np.ndarray:
    return np.array([cosine_similarity(encode_image(model, e.image)[0], text_embedding) for e in pool.entries])


def select_topk(pool: ReferencePool, model: SurrogateModel, target_tokens, k: int):
    """Return ``[(entry, similarity), ...]`` for the K best-aligned pool images, best first."""
    if not 1 <= k <= len(pool):
        raise ParameterError(f"K={k} must lie in [1, {len(pool)}] (pool size)")
    text_emb, _ = encode_text(model, target_tokens)
    sims = pool_similarities(pool, model, text_emb)
    idx = rank_topk([e.id for e in pool.entries], sims, k)
    return [(pool.entries[i], float(sims[i])) for i in idx]


def compute_weights(similarities, tau: float) -> np.ndarray:
    return softmax_temperature(similarities, tau)


@dataclass(frozen=True)
class LayerTarget:
    cls_target: np.ndarray
    pooled_target: np.ndarray


@dataclass(frozen=True)
class AnchorSet:
    ids: tuple
    anchors: tuple
    similarities: np.ndarray
    weights: np.ndarray
    embedding_targets: np.ndarray
    layer_targets: dict
    tau: float

    @property
    def k(self) -> int:
        return len(self.ids)

    @property
    def layers(self) -> list[int]:
        return sorted(self.layer_targets)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.ids, self.tau)).encode())
        for a in (*self.anchors, self.similarities, self.weights, self.embedding_targets):
            h.update(np.ascontiguousarray(a).tobytes())
        for l in self.layers:
            h.update(self.layer_targets[l].cls_target.tobytes())
            h.update(self.layer_targets[l].pooled_target.tobytes())
        return h.hexdigest()


def mix_layer_targets(features, weights) -> dict:
    """Weighted sums of per-anchor ``{layer: (cls, pooled)}`` features."""
    w = np.asarray(weights, dtype=np.float64)
    out = {}
    for l in features[0]:
        cls = sum(wk * f[l][0] for wk, f in zip(w, features))
        pooled = sum(wk * f[l][1] for wk, f in zip(w, features))
        out[l] = LayerTarget(_frozen(cls), _frozen(pooled))
    return out


def build_anchor_set(pool, model, target_tokens, k: int, tau: float, layers) -> AnchorSet:
    """Select anchors, weight them and precompute detached targets."""
    picked = select_topk(pool, model, target_tokens, k)
    sims = np.array([s for _, s in picked])
    w = compute_weights(sims, tau)
    embs, feats = [], []
    for entry, _ in picked:
        emb, taps = encode_image(model, entry.image, layers)
        embs.append(emb)
        feats.append({t.layer_index: (t.cls, t.pooled) for t in taps})
    return AnchorSet(
        ids=tuple(e.id for e, _ in picked),
        anchors=tuple(e.image for e, _ in picked),
        similarities=_frozen(sims),
        weights=_frozen(w),
        embedding_targets=_frozen(np.stack(embs)),
        layer_targets=mix_layer_targets(feats, w),
        tau=float(tau),
    )


def manifest_text(anchor_set: AnchorSet, header: dict | None = None) -> str:
    """``# key = value`` header lines, then ``id,similarity,weight`` per anchor."""
    lines = [f"# {key} = {value}" for key, value in (header or {}).items()]
    lines.append("id,similarity,weight")
    for i, s, w in zip(anchor_set.ids, anchor_set.similarities, anchor_set.weights):
        lines.append(f"{i},{float(s)!r},{float(w)!r}")
    return "\n".join(lines) + "\n"


def write_manifest(anchor_set: AnchorSet, path, header: dict | None = None) -> None:
    atomic_write_text(Path(path), manifest_text(anchor_set, header))


def read_manifest(path):
    """Parse a manifest back into ``(header, [(id, similarity, weight), ...])``."""
    header, rows = {}, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
        elif line and line != "id,similarity,weight":
            i, s, w = line.rsplit(",", 2)
            rows.append((i, float(s), float(w)))
    return header, rows
