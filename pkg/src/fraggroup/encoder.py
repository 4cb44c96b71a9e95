"""Transformer encoder stack (post-norm) and the per-element classification head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .embedding import (
    EmbedConfig,
    SequenceFeatures,
    fuse,
    init_embed_params,
    modality_vectors,
    positional_table,
)

N_CLASSES = 3
MASK_VALUE = -1e9


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    d: int = 32
    ffn_dim: int = 64
    dropout: float = 0.2

    def validate(self):
        if self.layers < 1:
            raise ConfigError("need at least one encoder block")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        return self


def _xavier(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_encoder_params(cfg, rng, dtype=np.float32):
    d, f = cfg.d, cfg.ffn_dim
    p = {}
    for b in range(cfg.layers):
        pre = f"blocks.{b}"
        for proj in ("q", "k", "v", "o"):
            p[f"{pre}.attn.w{proj}"] = _xavier(rng, d, d, dtype)
            p[f"{pre}.attn.b{proj}"] = np.zeros(d, dtype)
        p[f"{pre}.ln1.gamma"] = np.ones(d, dtype)
        p[f"{pre}.ln1.beta"] = np.zeros(d, dtype)
        p[f"{pre}.ffn.w1"] = _xavier(rng, d, f, dtype)
        p[f"{pre}.ffn.b1"] = np.zeros(f, dtype)
        p[f"{pre}.ffn.w2"] = _xavier(rng, f, d, dtype)
        p[f"{pre}.ffn.b2"] = np.zeros(d, dtype)
        p[f"{pre}.ln2.gamma"] = np.ones(d, dtype)
        p[f"{pre}.ln2.beta"] = np.zeros(d, dtype)
    p["head.w1"] = _xavier(rng, d, d, dtype)
    p["head.b1"] = np.zeros(d, dtype)
    p["head.w2"] = _xavier(rng, d, N_CLASSES, dtype)
    p["head.b2"] = np.zeros(N_CLASSES, dtype)
    return {k: T.Tensor(v, requires_grad=True, dtype=dtype) for k, v in p.items()}


def block_params(params, b):
    pre = f"blocks.{b}."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def _split_heads(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def multi_head_attention(h, bp, heads, key_mask=None, dropout=0.0, training=False, rng=None,
                         return_weights=False):
    """Scaled dot-product self-attention over all positions.

    ``h`` is (n, d) or (batch, n, d). ``key_mask`` (batch, n) marks real
    positions; padded keys get zero weight so a padded batch matches running
    each sequence alone.
    """
    squeeze = h.ndim == 2
    if squeeze:
        h = h.reshape(1, *h.shape)
    bsz, n, d = h.shape
    if d % heads:
        raise ConfigError(f"d={d} is not divisible by heads={heads}")
    q = _split_heads(T.linear(h, bp["attn.wq"], bp["attn.bq"]), heads)
    k = _split_heads(T.linear(h, bp["attn.wk"], bp["attn.bk"]), heads)
    v = _split_heads(T.linear(h, bp["attn.wv"], bp["attn.bv"]), heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d // heads))
    if key_mask is not None:
        bias = np.where(key_mask, 0.0, MASK_VALUE).astype(h.dtype)[:, None, None, :]
        scores = scores + T.Tensor(bias, dtype=h.dtype)
    weights = T.softmax(scores, axis=-1)
    attn = T.dropout(weights, dropout, training, rng)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(bsz, n, d)
    out = T.linear(ctx, bp["attn.wo"], bp["attn.bo"])
    if squeeze:
        out = out.reshape(n, d)
    return (out, weights) if return_weights else out


def feed_forward(h, bp, dropout=0.0, training=False, rng=None):
    hidden = T.relu(T.linear(h, bp["ffn.w1"], bp["ffn.b1"]))
    hidden = T.dropout(hidden, dropout, training, rng)
    return T.linear(hidden, bp["ffn.w2"], bp["ffn.b2"])


def encoder_block(h, bp, heads, key_mask=None, dropout=0.0, training=False, rng=None):
    """LayerNorm(H + MHAtt(H)), then LayerNorm(H1 + FFN(H1))."""
    h1 = T.layer_norm(h + multi_head_attention(h, bp, heads, key_mask, dropout, training, rng),
                      bp["ln1.gamma"], bp["ln1.beta"])
    return T.layer_norm(h1 + feed_forward(h1, bp, dropout, training, rng), bp["ln2.gamma"], bp["ln2.beta"])


def encode(f, params, cfg, key_mask=None, training=False, rng=None):
    h = f
    for b in range(cfg.layers):
        h = encoder_block(h, block_params(params, b), cfg.heads, key_mask, cfg.dropout, training, rng)
    return h


def classify(h, params):
    """Two-layer ReLU head. Returns (logits, probabilities) with rows over the three labels."""
    hidden = T.relu(T.linear(h, params["head.w1"], params["head.b1"]))
    logits = T.linear(hidden, params["head.w2"], params["head.b2"])
    return logits, T.softmax(logits, axis=-1)


# ------------------------------------------------------------------- model

class Model:
    """Embedders + encoder + head over named parameters."""

    def __init__(self, embed_cfg, enc_cfg, params=None, seed=0, dtype=np.float32):
        if embed_cfg.d != enc_cfg.d:
            raise ConfigError(f"embedding dim {embed_cfg.d} != encoder dim {enc_cfg.d}")
        self.embed_cfg = embed_cfg.validate()
        self.enc_cfg = enc_cfg.validate()
        if params is None:
            rng = np.random.default_rng(seed)
            params = init_embed_params(embed_cfg, rng, dtype)
            params.update(init_encoder_params(enc_cfg, rng, dtype))
        self.params = params

    @property
    def dtype(self):
        return self.params["head.w2"].dtype

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def forward(self, batch, training=False, rng=None):
        """Logits for a list of SequenceFeatures.

        Returns the (total_n, 3) logits of all real positions, concatenated in
        batch order.
        """
        lengths = [len(f) for f in batch]
        total = sum(lengths)
        d = self.embed_cfg.d
        if total == 0:
            return T.Tensor(np.zeros((0, N_CLASSES)), dtype=self.dtype)
        feats = concat_features(batch)
        fused = fuse(modality_vectors(feats, self.params, self.embed_cfg), total, d, self.dtype)

        n_max = max(lengths)
        b = len(batch)
        # scatter fused rows into a padded (b, n_max, d) layout with a gather matrix
        slots = np.concatenate([i * n_max + np.arange(n) for i, n in enumerate(lengths)])
        scatter = np.zeros((b * n_max, total), dtype=self.dtype)
        scatter[slots, np.arange(total)] = 1.0
        padded = (T.Tensor(scatter, dtype=self.dtype) @ fused).reshape(b, n_max, d)
        mask = np.zeros((b, n_max), dtype=bool)
        for i, n in enumerate(lengths):
            mask[i, :n] = True
        pe = positional_table(n_max, d)[None] * mask[:, :, None]
        x = padded + T.Tensor(pe, dtype=self.dtype)
        x = T.dropout(x, self.enc_cfg.dropout, training, rng)
        h = encode(x, self.params, self.enc_cfg, mask if b > 1 or n_max != total else None, training, rng)
        flat = h.reshape(b * n_max, d)
        gather = scatter.T.copy()
        logits, _ = classify(T.Tensor(gather, dtype=self.dtype) @ flat, self.params)
        return logits

    def predict_proba(self, batch):
        logits = self.forward(batch, training=False)
        return T.softmax(logits, axis=-1).data

    def predict(self, feats):
        """Class indices for one sequence."""
        return self.predict_proba([feats]).argmax(axis=1)


def concat_features(batch):
    if len(batch) == 1:
        return batch[0]
    return SequenceFeatures(
        uuids=[u for f in batch for u in f.uuids],
        images=np.concatenate([f.images for f in batch]),
        text=np.concatenate([f.text for f in batch]),
        color=np.concatenate([f.color for f in batch]),
        frame=np.concatenate([f.frame for f in batch]),
        cls=np.concatenate([f.cls for f in batch]),
        labels=None if any(f.labels is None for f in batch) else np.concatenate([f.labels for f in batch]),
    )
