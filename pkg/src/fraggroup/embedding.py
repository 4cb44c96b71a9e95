"""Per-element modality embedders, their additive fusion and positional encoding."""
from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .prototype_io import CLASSES, UNK_CLASS, RGBA, ValidationError
from .raster import SIZE

MODALITIES = ("image", "text", "color", "frame", "class")
# index 0 is the frozen padding row of every lookup table
CLASS_INDEX = {c: i + 1 for i, c in enumerate(CLASSES + (UNK_CLASS,))}
CNN_WIDTHS = (8, 16, 32)
KERNEL = 2
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


class ConfigError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass
class EmbedConfig:
    d: int = 32
    text_len: int = 32
    text_vocab: int = 1024
    modalities: dict = field(default_factory=lambda: {m: True for m in MODALITIES})

    def validate(self):
        if self.d < 2 or self.d % 2:
            raise ConfigError(f"embedding dim must be even, got {self.d}")
        if self.text_len < 1:
            raise ConfigError("text_len must be >= 1")
        if self.text_vocab < 2:
            raise ConfigError("text_vocab must be >= 2")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise ConfigError(f"unknown modalities {sorted(unknown)}")
        return self

    def enabled(self, modality):
        return self.modalities.get(modality, True)

    def without(self, *removed):
        mods = {m: self.enabled(m) and m not in removed for m in MODALITIES}
        return EmbedConfig(self.d, self.text_len, self.text_vocab, mods)


# ------------------------------------------------------------- parameters

def _xavier(rng, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_embed_params(cfg, rng, dtype=np.float32):
    """Named parameter tensors for all five embedders."""
    d = cfg.d
    p = {}
    c_in = 3
    for i, c_out in enumerate(CNN_WIDTHS, 1):
        fan_in = c_in * KERNEL * KERNEL
        p[f"image.conv{i}.weight"] = rng.uniform(-1, 1, (c_out, c_in, KERNEL, KERNEL)).astype(dtype) * np.sqrt(6.0 / fan_in).astype(dtype)
        p[f"image.conv{i}.bias"] = np.zeros(c_out, dtype)
        c_in = c_out
    p["image.fc.weight"] = _xavier(rng, c_in, d, (c_in, d), dtype)
    p["image.fc.bias"] = np.zeros(d, dtype)

    text = rng.normal(0, 1.0 / np.sqrt(d), (cfg.text_vocab, d)).astype(dtype)
    text[0] = 0.0
    p["text.table"] = text
    p["color.weight"] = _xavier(rng, 4, d, (4, d), dtype)
    p["color.bias"] = np.zeros(d, dtype)
    p["frame.weight"] = _xavier(rng, 4, d, (4, d), dtype)
    p["frame.bias"] = np.zeros(d, dtype)
    cls = rng.normal(0, 1.0 / np.sqrt(d), (len(CLASS_INDEX) + 1, d)).astype(dtype)
    cls[0] = 0.0
    p["class.table"] = cls
    return {k: T.Tensor(v, requires_grad=True, dtype=dtype) for k, v in p.items()}


# ------------------------------------------------------------ featurizers

def tokenize_text(name, length=32, vocab=1024):
    """Lower-case, split on non-alphanumerics, hash tokens into [1, vocab).

    Keeps the first ``length`` tokens and pads with 0 on both sides (the odd
    pad goes to the right).
    """
    tokens = [t for t in _TOKEN_SPLIT.split(name.lower()) if t][:length]
    ids = [zlib.crc32(t.encode("utf-8")) % (vocab - 1) + 1 for t in tokens]
    pad = length - len(ids)
    left = pad // 2
    return np.array([0] * left + ids + [0] * (pad - left), dtype=np.int64)


def normalize_color(color):
    if color is None:
        return np.zeros(4)
    rgba = color if isinstance(color, RGBA) else RGBA(*color)
    return np.array(rgba.as_tuple(), dtype=float) / 255.0


def normalize_frame(frame, canvas):
    w_canvas, h_canvas = canvas
    if not (w_canvas > 0 and h_canvas > 0):
        raise ValidationError(f"canvas must be positive, got {canvas}")
    corners = np.array([frame.x, frame.y, frame.x + frame.w, frame.y + frame.h], dtype=float)
    return np.clip(corners / np.array([w_canvas, h_canvas, w_canvas, h_canvas]), 0.0, 1.0)


def class_index(cls):
    return CLASS_INDEX.get(cls, CLASS_INDEX[UNK_CLASS])


@dataclass
class SequenceFeatures:
    """Model-ready arrays for one element sequence."""
    uuids: list
    images: np.ndarray   # (n, 3, 64, 64) float in [0, 1], or uint8
    text: np.ndarray     # (n, text_len) int
    color: np.ndarray    # (n, 4)
    frame: np.ndarray    # (n, 4)
    cls: np.ndarray      # (n,) int
    labels: np.ndarray = None  # (n,) int or None

    def __len__(self):
        return len(self.uuids)


def featurize(seq, images, cfg, dtype=np.float32):
    """Turn an ElementSequence and its images into arrays.

    ``images`` is a list aligned with the sequence or a uuid -> image mapping.
    """
    from .grouping import LABEL_INDEX

    n = len(seq)
    if isinstance(images, dict):
        try:
            images = [images[r.uuid] for r in seq]
        except KeyError as exc:
            raise AlignmentError(f"no image for element {exc.args[0]!r}") from None
    if len(images) != n:
        raise AlignmentError(f"{len(images)} images for {n} elements")
    # 8-bit images stay 8-bit (a quarter of the memory); the CNN rescales them
    if n and all(np.asarray(im).dtype == np.uint8 for im in images):
        imgs = np.stack([np.asarray(im) for im in images])
    else:
        imgs = np.stack([np.asarray(im, dtype=dtype) for im in images]) if n else np.zeros((0, 3, SIZE, SIZE), dtype)
    if imgs.shape[1:] != (3, SIZE, SIZE):
        raise T.ShapeError(f"element images must be 3x{SIZE}x{SIZE}, got {imgs.shape[1:]}")
    labels = None
    if n and all(r.label is not None for r in seq):
        labels = np.array([LABEL_INDEX[r.label] for r in seq], dtype=np.int64)
    return SequenceFeatures(
        uuids=[r.uuid for r in seq],
        images=imgs,
        text=np.stack([tokenize_text(r.name, cfg.text_len, cfg.text_vocab) for r in seq]) if n
        else np.zeros((0, cfg.text_len), np.int64),
        color=np.array([normalize_color(r.color) for r in seq], dtype=dtype).reshape(n, 4),
        frame=np.array([normalize_frame(r.frame, seq.canvas) for r in seq], dtype=dtype).reshape(n, 4),
        cls=np.array([class_index(r.cls) for r in seq], dtype=np.int64),
        labels=labels,
    )


# -------------------------------------------------------------- embedders

def encode_image(images, params):
    """CNN image encoder: three stride-2 conv+ReLU stages, global average pool, linear to d.

    Accepts one image (3, 64, 64) or a batch (N, 3, 64, 64).
    """
    if not isinstance(images, T.Tensor):
        images = np.asarray(images)
        if images.dtype == np.uint8:
            images = images.astype(params["image.fc.weight"].dtype) / 255.0
    x = images if isinstance(images, T.Tensor) else T.Tensor(images, dtype=params["image.fc.weight"].dtype)
    if x.shape[-3:] != (3, SIZE, SIZE) or x.ndim not in (3, 4):
        raise T.ShapeError(f"expected a 3x{SIZE}x{SIZE} image, got {x.shape}")
    for i in range(1, len(CNN_WIDTHS) + 1):
        x = T.relu(T.conv2d(x, params[f"image.conv{i}.weight"], params[f"image.conv{i}.bias"], stride=2))
    pooled = T.global_avg_pool(x)
    return T.linear(pooled, params["image.fc.weight"], params["image.fc.bias"])


def encode_text(indices, table):
    """Look up each token row and sum over the token axis; padding rows are zero."""
    rows = T.embedding_lookup(table, indices)
    return rows.sum(axis=-2)


def encode_color(color, params):
    x = color if isinstance(color, np.ndarray) and color.ndim == 2 else normalize_color(color)
    return T.linear(T.Tensor(np.asarray(x), dtype=params["color.weight"].dtype), params["color.weight"], params["color.bias"])


def encode_frame(frame, canvas, params):
    x = frame if isinstance(frame, np.ndarray) else normalize_frame(frame, canvas)
    return T.linear(T.Tensor(x, dtype=params["frame.weight"].dtype), params["frame.weight"], params["frame.bias"])


def encode_class(cls, table):
    idx = cls if isinstance(cls, np.ndarray) else class_index(cls)
    return T.embedding_lookup(table, idx)


_PE_CACHE = {}


def positional_encoding(i, d):
    """Sinusoidal encoding of position ``i``: sin/cos pairs with wavelengths 10000^(2j/d)."""
    if d % 2:
        raise ConfigError(f"positional encoding needs an even dimension, got {d}")
    return positional_table(i + 1, d)[i]


def positional_table(n, d):
    """Rows 0..n-1 of the positional encoding, as a read-only float64 array."""
    if d % 2:
        raise ConfigError(f"positional encoding needs an even dimension, got {d}")
    key = (n, d)
    if key not in _PE_CACHE:
        pos = np.arange(n, dtype=np.float64)[:, None]
        freq = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
        table = np.zeros((n, d))
        table[:, 0::2] = np.sin(pos * freq)
        table[:, 1::2] = np.cos(pos * freq)
        table.flags.writeable = False
        _PE_CACHE[key] = table
    return _PE_CACHE[key]


def modality_vectors(feats, params, cfg):
    """Per-modality (n, d) tensors for the enabled modalities of a featurized batch."""
    out = {}
    dtype = params["image.fc.weight"].dtype
    if cfg.enabled("image"):
        out["image"] = encode_image(feats.images, params)
    if cfg.enabled("text"):
        out["text"] = encode_text(feats.text, params["text.table"])
    if cfg.enabled("color"):
        out["color"] = encode_color(feats.color.astype(dtype), params)
    if cfg.enabled("frame"):
        out["frame"] = encode_frame(feats.frame.astype(dtype), None, params)
    if cfg.enabled("class"):
        out["class"] = encode_class(feats.cls, params["class.table"])
    return out


def fuse(vectors, n, d, dtype):
    """Element-wise sum of modality vectors; an empty set gives zeros."""
    total = None
    for m in MODALITIES:
        if m in vectors:
            total = vectors[m] if total is None else total + vectors[m]
    return T.Tensor(np.zeros((n, d)), dtype=dtype) if total is None else total


def embed_sequence(feats, params, cfg):
    """F = (sum of enabled modality vectors) + positional encoding, shape (n, d)."""
    n, d = len(feats), cfg.d
    dtype = params["image.fc.weight"].dtype
    if n == 0:
        return T.Tensor(np.zeros((0, d)), dtype=dtype)
    fused = fuse(modality_vectors(feats, params, cfg), n, d, dtype)
    return fused + T.Tensor(positional_table(n, d), dtype=dtype)
