"""Miniature CLIP-style dual encoder with per-layer feature taps.

Image tower: patchify -> linear patch embedding -> [CLS; patches] + positions
-> pre-LN -> ``depth_img`` pre-norm transformer blocks -> post-LN on CLS ->
visual projection. Text tower: byte tokens -> embedding + positions ->
``depth_txt`` causal blocks -> final LN at the EOS position -> text projection.

Taps are the residual stream right after a block, before the tower's final
layer norm. Only input gradients of the image tower are implemented; weights
are frozen.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    BadMagicError,
    DimensionError,
    HeaderMismatchError,
    ParameterError,
    TokenizationError,
    TruncatedFileError,
    VersionMismatchError,
)
from .numerics import mean_pool_rows

BOS_ID = 256
EOS_ID = 257
PAD_ID = 258
MLP_RATIO = 4
PIXEL_MEAN = 0.5
PIXEL_STD = 0.5

MAGIC = b"SGHW"
FORMAT_VERSION = 1
_CONFIG_TENSOR = "config"


@dataclass(frozen=True)
class SurrogateConfig:
    image_size: int = 64
    patch_size: int = 8
    depth_img: int = 12
    depth_txt: int = 12
    width: int = 32
    heads: int = 4
    proj_dim: int = 16
    vocab_size: int = 259
    max_text_len: int = 77
    seed: int = 7

    def validate(self) -> "SurrogateConfig":
        ints = (self.image_size, self.patch_size, self.depth_img, self.depth_txt, self.width,
                self.heads, self.proj_dim, self.vocab_size, self.max_text_len)
        if any(int(v) != v or v < 1 for v in ints):
            raise ParameterError(f"all extents must be positive integers: {self}")
        if self.image_size % self.patch_size:
            raise ParameterError("image_size must be divisible by patch_size")
        if self.width % self.heads:
            raise ParameterError("width must be divisible by heads")
        if self.proj_dim > self.width:
            raise ParameterError("proj_dim must not exceed width")
        if self.vocab_size < PAD_ID + 1:
            raise ParameterError(f"byte-level tokenization needs vocab_size >= {PAD_ID + 1}")
        if self.max_text_len < 2:
            raise ParameterError("max_text_len must fit at least BOS and EOS")
        if not 0 <= self.seed < 2**32:
            raise ParameterError("seed must fit in 32 unsigned bits")
        return self

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid**2

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.image_size, self.image_size, 3)

    def as_vector(self) -> np.ndarray:
        return np.array([self.image_size, self.patch_size, self.depth_img, self.depth_txt,
                         self.width, self.heads, self.proj_dim, self.vocab_size,
                         self.max_text_len, self.seed >> 16, self.seed & 0xFFFF], dtype=np.float64)

    @classmethod
    def from_vector(cls, v) -> "SurrogateConfig":
        v = [int(round(float(t))) for t in v]
        if len(v) != 11:
            raise HeaderMismatchError(f"config tensor must hold 11 values, got {len(v)}")
        return cls(*v[:9], seed=(v[9] << 16) | v[10])


@dataclass(frozen=True)
class LayerFeatureBundle:
    layer_index: int
    cls: np.ndarray
    patches: np.ndarray
    pooled: np.ndarray


@dataclass(frozen=True)
class TextLayerFeature:
    layer_index: int
    eos: np.ndarray


# --- parameter layout --------------------------------------------------------


def _block_shapes(prefix: str, d: int):
    h = MLP_RATIO * d
    return [
        (f"{prefix}.ln1.g", (d,), "one"),
        (f"{prefix}.ln1.b", (d,), "zero"),
        (f"{prefix}.attn.qkv.w", (d, 3 * d), d),
        (f"{prefix}.attn.qkv.b", (3 * d,), d),
        (f"{prefix}.attn.out.w", (d, d), d),
        (f"{prefix}.attn.out.b", (d,), d),
        (f"{prefix}.ln2.g", (d,), "one"),
        (f"{prefix}.ln2.b", (d,), "zero"),
        (f"{prefix}.mlp.fc1.w", (d, h), d),
        (f"{prefix}.mlp.fc1.b", (h,), d),
        (f"{prefix}.mlp.fc2.w", (h, d), h),
        (f"{prefix}.mlp.fc2.b", (d,), h),
    ]


def parameter_layout(cfg: SurrogateConfig):
    """Ordered ``(name, shape, init)`` triples.

    ``init`` is ``"one"``, ``"zero"`` or the fan-in whose inverse square root
    bounds the uniform draw. The order is the PRNG stream order.
    """
    d, p = cfg.width, cfg.patch_size
    layout = [
        ("img.patch_embed", (p * p * 3, d), p * p * 3),
        ("img.cls", (d,), d),
        ("img.pos", (cfg.num_patches + 1, d), d),
        ("img.ln_pre.g", (d,), "one"),
        ("img.ln_pre.b", (d,), "zero"),
    ]
    for i in range(cfg.depth_img):
        layout += _block_shapes(f"img.blocks.{i}", d)
    layout += [
        ("img.ln_post.g", (d,), "one"),
        ("img.ln_post.b", (d,), "zero"),
        ("img.proj", (d, cfg.proj_dim), d),
        ("txt.token_embed", (cfg.vocab_size, d), d),
        ("txt.pos", (cfg.max_text_len, d), d),
    ]
    for i in range(cfg.depth_txt):
        layout += _block_shapes(f"txt.blocks.{i}", d)
    layout += [
        ("txt.ln_final.g", (d,), "one"),
        ("txt.ln_final.b", (d,), "zero"),
        ("txt.proj", (d, cfg.proj_dim), d),
    ]
    return layout


class SurrogateModel:
    """Frozen dual-encoder weights. Arrays are read-only float64 copies of float32 values."""

    def __init__(self, config: SurrogateConfig, params: dict[str, np.ndarray]):
        self.config = config.validate()
        expected = parameter_layout(config)
        if set(params) != {name for name, _, _ in expected}:
            missing = {n for n, _, _ in expected} - set(params)
            extra = set(params) - {n for n, _, _ in expected}
            raise HeaderMismatchError(f"parameter set mismatch; missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}")
        frozen = {}
        for name, shape, _ in expected:
            arr = np.asarray(params[name])
            if arr.shape != shape:
                raise HeaderMismatchError(f"{name}: extents {arr.shape} disagree with config {shape}")
            arr = np.ascontiguousarray(arr.astype(np.float32).astype(np.float64))
            arr.flags.writeable = False
            frozen[name] = arr
        self._p = frozen

    def __getitem__(self, name: str) -> np.ndarray:
        return self._p[name]

    def names(self) -> list[str]:
        return [name for name, _, _ in parameter_layout(self.config)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SurrogateModel) or other.config != self.config:
            return False
        return all(np.array_equal(self._p[n], other._p[n]) for n in self._p)

    __hash__ = None


def init_model(config: SurrogateConfig) -> SurrogateModel:
    """Deterministic init from ``numpy.random.Generator(PCG64(seed))``.

    Tensors are drawn in :func:`parameter_layout` order, each as one row-major
    ``uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`` block; layer-norm gains are 1
    and layer-norm biases 0 (these consume no draws). Values are rounded to
    float32 so that a saved file reproduces the model exactly.
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = {}
    for name, shape, init in parameter_layout(config):
        if init == "one":
            params[name] = np.ones(shape)
        elif init == "zero":
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(init)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return SurrogateModel(config, params)


# --- building blocks -----------------------------------------------------------


def layernorm(x, gain, bias):
    """Row-wise layer norm; returns ``(y, cache)``."""
    x2 = np.ascontiguousarray(np.atleast_2d(x))
    y, xhat, rstd = _kernels.K.layernorm_fwd(x2, gain, bias)
    return y.reshape(np.shape(x)), (xhat, rstd, gain)


def layernorm_backward(dy, cache):
    xhat, rstd, gain = cache
    dy2 = np.ascontiguousarray(np.atleast_2d(dy))
    return _kernels.K.layernorm_bwd(dy2, xhat, rstd, gain).reshape(np.shape(dy))


def _split_heads(t, heads):
    n, d = t.shape
    return t.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(t):
    h, n, dh = t.shape
    return t.transpose(1, 0, 2).reshape(n, h * dh)


def block_forward(model: SurrogateModel, prefix: str, h: np.ndarray, heads: int, causal: bool = False):
    """One pre-norm transformer block. Returns ``(out, cache)``."""
    P = model._p
    K = _kernels.K
    n, d = h.shape
    dh = d // heads
    a_in, ln1 = layernorm(h, P[f"{prefix}.ln1.g"], P[f"{prefix}.ln1.b"])
    qkv = a_in @ P[f"{prefix}.attn.qkv.w"] + P[f"{prefix}.attn.qkv.b"]
    q = _split_heads(qkv[:, :d], heads)
    k = _split_heads(qkv[:, d:2 * d], heads)
    v = _split_heads(qkv[:, 2 * d:], heads)
    scale = 1.0 / np.sqrt(dh)
    s = (q @ k.transpose(0, 2, 1)) * scale
    if causal:
        s = np.where(np.tril(np.ones((n, n), dtype=bool)), s, -np.inf)
    p = K.softmax_fwd(np.ascontiguousarray(s.reshape(heads * n, n))).reshape(heads, n, n)
    o = _merge_heads(p @ v)
    h1 = h + (o @ P[f"{prefix}.attn.out.w"] + P[f"{prefix}.attn.out.b"])
    m_in, ln2 = layernorm(h1, P[f"{prefix}.ln2.g"], P[f"{prefix}.ln2.b"])
    z = np.ascontiguousarray(m_in @ P[f"{prefix}.mlp.fc1.w"] + P[f"{prefix}.mlp.fc1.b"])
    act = K.quick_gelu_fwd(z)
    out = h1 + (act @ P[f"{prefix}.mlp.fc2.w"] + P[f"{prefix}.mlp.fc2.b"])
    return out, (ln1, q, k, v, p, scale, ln2, z)


def block_backward(model: SurrogateModel, prefix: str, dout: np.ndarray, cache, heads: int):
    P = model._p
    K = _kernels.K
    ln1, q, k, v, p, scale, ln2, z = cache
    n, d = dout.shape
    dact = dout @ P[f"{prefix}.mlp.fc2.w"].T
    dz = K.quick_gelu_bwd(np.ascontiguousarray(dact), z)
    dh1 = dout + layernorm_backward(dz @ P[f"{prefix}.mlp.fc1.w"].T, ln2)
    do = _split_heads(dh1 @ P[f"{prefix}.attn.out.w"].T, heads)
    dp = do @ v.transpose(0, 2, 1)
    dv = p.transpose(0, 2, 1) @ do
    ds = K.softmax_bwd(np.ascontiguousarray(dp.reshape(heads * n, n)), p.reshape(heads * n, n))
    ds = ds.reshape(heads, n, n) * scale
    dq = ds @ k
    dk = ds.transpose(0, 2, 1) @ q
    dqkv = np.concatenate([_merge_heads(dq), _merge_heads(dk), _merge_heads(dv)], axis=1)
    return dh1 + layernorm_backward(dqkv @ P[f"{prefix}.attn.qkv.w"].T, ln1)


# --- image tower -----------------------------------------------------------------


def _check_image(cfg: SurrogateConfig, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != cfg.image_shape:
        raise DimensionError(f"image must have shape {cfg.image_shape}, got {x.shape}")
    return x


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    """H x W x C -> (N, patch*patch*C), patches in row-major grid order."""
    hgt, wid, c = x.shape
    g_h, g_w = hgt // patch, wid // patch
    t = x.reshape(g_h, patch, g_w, patch, c).transpose(0, 2, 1, 3, 4)
    return t.reshape(g_h * g_w, patch * patch * c)


def unpatchify(rows: np.ndarray, patch: int, hgt: int, wid: int, c: int = 3) -> np.ndarray:
    g_h, g_w = hgt // patch, wid // patch
    t = rows.reshape(g_h, g_w, patch, patch, c).transpose(0, 2, 1, 3, 4)
    return t.reshape(hgt, wid, c)


@dataclass
class ImageForward:
    """Everything a backward pass needs. ``hidden[l]`` is the residual stream after block ``l``."""

    hidden: list
    embedding: np.ndarray
    caches: list = field(repr=False)
    pre_cache: tuple = field(repr=False)
    post_cache: tuple = field(repr=False)


def image_forward(model: SurrogateModel, x, depth: int | None = None) -> ImageForward:
    """Run the image tower, keeping activations.

    ``depth`` may stop early (no embedding is produced then) which is
    handy when only shallow taps are needed.
    """
    cfg = model.config
    P = model._p
    x = _check_image(cfg, x)
    depth = cfg.depth_img if depth is None else depth
    xn = (x - PIXEL_MEAN) / PIXEL_STD
    tokens = np.concatenate([P["img.cls"][None, :], patchify(xn, cfg.patch_size) @ P["img.patch_embed"]])
    h, pre_cache = layernorm(tokens + P["img.pos"], P["img.ln_pre.g"], P["img.ln_pre.b"])
    hidden = [h]
    caches = []
    for i in range(depth):
        h, c = block_forward(model, f"img.blocks.{i}", h, cfg.heads)
        hidden.append(h)
        caches.append(c)
    emb, post_cache = None, None
    if depth == cfg.depth_img:
        cls_n, post_cache = layernorm(h[0], P["img.ln_post.g"], P["img.ln_post.b"])
        emb = cls_n @ P["img.proj"]
    return ImageForward(hidden=hidden, embedding=emb, caches=caches, pre_cache=pre_cache, post_cache=post_cache)


def image_backward(model: SurrogateModel, fwd: ImageForward, d_embedding=None, d_hidden=None) -> np.ndarray:
    """Gradient w.r.t. the input image.

    ``d_embedding`` is the upstream gradient of the final embedding;
    ``d_hidden`` maps a layer index to an upstream gradient of ``hidden[l]``.
    """
    cfg = model.config
    P = model._p
    d_hidden = d_hidden or {}
    top = len(fwd.caches)
    g = np.zeros_like(fwd.hidden[top])
    if d_embedding is not None:
        if fwd.embedding is None:
            raise ParameterError("forward pass stopped before the embedding")
        d_cls = np.asarray(d_embedding) @ P["img.proj"].T
        g[0] += layernorm_backward(d_cls, fwd.post_cache)
    for layer in range(top, 0, -1):
        if layer in d_hidden:
            g = g + d_hidden[layer]
        g = block_backward(model, f"img.blocks.{layer - 1}", g, fwd.caches[layer - 1], cfg.heads)
    if 0 in d_hidden:
        g = g + d_hidden[0]
    d_tokens = layernorm_backward(g, fwd.pre_cache)
    d_rows = d_tokens[1:] @ P["img.patch_embed"].T
    s = cfg.image_size
    return unpatchify(d_rows, cfg.patch_size, s, s) / PIXEL_STD


def _check_layers(layers, depth: int, what: str) -> list[int]:
    out = []
    for l in layers:
        if int(l) != l or not 1 <= l <= depth:
            raise ParameterError(f"{what} layer index {l!r} outside [1, {depth}]")
        out.append(int(l))
    return out


def bundle_from_hidden(layer: int, h: np.ndarray) -> LayerFeatureBundle:
    return LayerFeatureBundle(layer_index=layer, cls=h[0].copy(), patches=h[1:].copy(),
                              pooled=mean_pool_rows(h[1:]))


def encode_image(model: SurrogateModel, x, tap_layers=()):
    """Return ``(embedding, taps)`` with one :class:`LayerFeatureBundle` per requested layer."""
    layers = _check_layers(tap_layers, model.config.depth_img, "image")
    fwd = image_forward(model, x)
    return fwd.embedding, [bundle_from_hidden(l, fwd.hidden[l]) for l in layers]


# --- text tower ---------------------------------------------------------------------


def tokenize(text: str, max_len: int | None = None) -> np.ndarray:
    """UTF-8 bytes wrapped as ``BOS bytes EOS``."""
    ids = [BOS_ID, *text.encode("utf-8"), EOS_ID]
    if max_len is not None and len(ids) > max_len:
        raise TokenizationError(f"text needs {len(ids)} tokens, limit is {max_len}")
    return np.array(ids, dtype=np.int64)


def _check_tokens(cfg: SurrogateConfig, tokens) -> np.ndarray:
    t = np.asarray(tokens)
    if t.ndim != 1 or t.size == 0:
        raise TokenizationError("token sequence must be a non-empty 1-D sequence")
    if t.size > cfg.max_text_len:
        raise TokenizationError(f"sequence length {t.size} exceeds max_text_len {cfg.max_text_len}")
    if not np.issubdtype(t.dtype, np.integer):
        raise TokenizationError("token ids must be integers")
    if t.min() < 0 or t.max() >= cfg.vocab_size:
        raise TokenizationError(f"token id out of vocabulary [0, {cfg.vocab_size})")
    if t[-1] != EOS_ID:
        raise TokenizationError("sequence must end with the EOS id")
    return t.astype(np.int64)


def text_layer_for(layer: int, depth_img: int, depth_txt: int) -> int:
    """Text depth paired with image layer ``layer``: proportional, half-up rounding."""
    if depth_img == depth_txt:
        return layer
    return int(min(depth_txt, max(1, np.floor(layer * depth_txt / depth_img + 0.5))))


def encode_text(model: SurrogateModel, tokens, tap_layers=()):
    """Return ``(embedding, taps)``; taps are EOS-position states at the requested text depths."""
    cfg = model.config
    P = model._p
    t = _check_tokens(cfg, tokens)
    layers = _check_layers(tap_layers, cfg.depth_txt, "text")
    h = P["txt.token_embed"][t] + P["txt.pos"][: t.size]
    states = [h]
    for i in range(cfg.depth_txt):
        h, _ = block_forward(model, f"txt.blocks.{i}", h, cfg.heads, causal=True)
        states.append(h)
    eos_n, _ = layernorm(h[-1], P["txt.ln_final.g"], P["txt.ln_final.b"])
    emb = eos_n @ P["txt.proj"]
    return emb, [TextLayerFeature(layer_index=l, eos=states[l][-1].copy()) for l in layers]


# --- projection heads ---------------------------------------------------------------


def _check_width(model, f):
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (model.config.width,):
        raise DimensionError(f"expected a width-{model.config.width} vector, got shape {f.shape}")
    return f


def project_visual(model: SurrogateModel, f) -> np.ndarray:
    return _check_width(model, f) @ model["img.proj"]


def project_text(model: SurrogateModel, t) -> np.ndarray:
    return _check_width(model, t) @ model["txt.proj"]


def normalize_visual(model: SurrogateModel, f):
    """Apply the image tower's post-LN; returns ``(y, cache)``."""
    return layernorm(_check_width(model, f), model["img.ln_post.g"], model["img.ln_post.b"])


def normalize_text(model: SurrogateModel, t):
    return layernorm(_check_width(model, t), model["txt.ln_final.g"], model["txt.ln_final.b"])


# --- weight file ---------------------------------------------------------------------


def _tensor_blob(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += b"".join(struct.pack("<Q", e) for e in arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def weights_to_bytes(model: SurrogateModel) -> bytes:
    names = model.names()
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(names) + 1)]
    out.append(_tensor_blob(_CONFIG_TENSOR, model.config.as_vector()))
    out += [_tensor_blob(n, model[n]) for n in names]
    return b"".join(out)


def save_weights(model: SurrogateModel, path) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(Path(path), weights_to_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file ends inside {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def weights_from_bytes(data: bytes) -> SurrogateModel:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {data[:4]!r}")
    r.pos = 4
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, reader supports {FORMAT_VERSION}")
    count = r.u32("tensor count")
    tensors = {}
    for i in range(count):
        what = f"tensor {i + 1} of {count}"
        name = r.take(r.u32(what), what).decode("utf-8")
        rank = r.u32(what)
        shape = tuple(struct.unpack("<Q", r.take(8, what))[0] for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * n, what), dtype="<f4").reshape(shape)
    if r.pos != len(data):
        raise HeaderMismatchError(f"{len(data) - r.pos} trailing bytes after {count} declared tensors")
    if _CONFIG_TENSOR not in tensors:
        raise HeaderMismatchError("weight file carries no config tensor")
    cfg = SurrogateConfig.from_vector(tensors.pop(_CONFIG_TENSOR))
    try:
        cfg.validate()
    except ParameterError as exc:
        raise HeaderMismatchError(f"stored config is invalid: {exc}") from exc
    return SurrogateModel(cfg, tensors)


def load_weights(path) -> SurrogateModel:
    return weights_from_bytes(Path(path).read_bytes())
