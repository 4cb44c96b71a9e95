"""Dataset loading, class weights, the training loop and classification evaluation."""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .embedding import MODALITIES, EmbedConfig, featurize
from .encoder import EncoderConfig, Model
from .grouping import LABELS, THRESHOLDS, GroupingReport, decode_groups, grouping_metrics, stratified_metrics
from .prototype_io import extract_sequence, leaf_map, load_prototype
from .raster import rasterize_element
from .synthgen import read_images, tag_strata

FORMAT_TAG = "fraggroup-model-1"


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, detail=""):
        super().__init__(f"training diverged at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


# ------------------------------------------------------------------ config

@dataclass
class TrainConfig:
    """Training hyperparameters. Defaults are the desk-scale schedule."""
    epochs: int = 60
    batch_size: int = 8
    lr: float = 3e-3
    lr_drop_epoch: int = 40
    lr_drop_factor: float = 10.0
    dropout: float = 0.2
    l2_lambda: float = 1e-5
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.lr_drop_epoch <= self.epochs:
            raise ConfigError(f"lr_drop_epoch {self.lr_drop_epoch} outside [0, epochs={self.epochs}]")
        if self.lr_drop_factor <= 0:
            raise ConfigError("lr_drop_factor must be positive")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if self.embed.d != self.encoder.d:
            raise ConfigError(f"embedding dim {self.embed.d} != encoder dim {self.encoder.d}")
        self.encoder.dropout = self.dropout
        try:
            self.encoder.validate()
            self.embed.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @classmethod
    def long_schedule(cls, **overrides):
        """The full-length schedule (300 epochs, drop after 200, lr 1e-4)."""
        base = dict(epochs=300, lr_drop_epoch=200, lr=1e-4)
        base.update(overrides)
        return cls(**base)

    def lr_at(self, epoch):
        """Learning rate for a 1-based epoch index."""
        return self.lr / self.lr_drop_factor if epoch > self.lr_drop_epoch else self.lr

    def to_dict(self):
        d = asdict(self)
        d["encoder"] = asdict(self.encoder)
        d["embed"] = asdict(self.embed)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        enc = EncoderConfig(**d.pop("encoder", {}))
        emb = dict(d.pop("embed", {}))
        mods = {m: True for m in MODALITIES}
        mods.update(emb.pop("modalities", {}))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        try:
            return cls(encoder=enc, embed=EmbedConfig(modalities=mods, **emb), **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# ------------------------------------------------------------- class weights

def compute_class_weights(counts):
    """Inverse-frequency weights ``n_total / (k * n_c)`` over the k classes."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or len(counts) == 0:
        raise DataError("counts must be a non-empty 1-D sequence")
    if np.any(counts <= 0):
        raise DataError(f"every class needs at least one example, got counts {counts.tolist()}")
    return counts.sum() / (len(counts) * counts)


# -------------------------------------------------------------------- data

@dataclass
class Example:
    id: str
    proto: object
    feats: object
    flags: dict


def _to_u8(img):
    """8-bit copy of a [0, 1] image when that is lossless, else the float image."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    q = np.rint(img * 255.0)
    if np.all((q >= 0) & (q <= 255)) and np.array_equal((q / 255.0).astype(np.float32), img.astype(np.float32)):
        return q.astype(np.uint8)
    return img.astype(np.float32)


def element_images(proto, path=None):
    """Images for every element: sidecar images when present, else attribute rasterization."""
    stored = read_images(path) if path is not None else {}
    leaves = leaf_map(proto)
    out = {}
    for rec in extract_sequence(proto):
        img = stored.get(rec.uuid)
        out[rec.uuid] = _to_u8(img if img is not None else rasterize_element(leaves[rec.uuid]))
    return out


def make_example(proto, embed_cfg, path=None):
    seq = extract_sequence(proto)
    feats = featurize(seq, element_images(proto, path), embed_cfg)
    return Example(proto.id, proto, feats, tag_strata(proto))


def check_disjoint(manifest):
    """File-wise split check: no prototype id may appear in two splits."""
    owner = {}
    for split, files in manifest.splits.items():
        for f in files:
            pid = Path(f).name.split(".")[0]
            if pid in owner and owner[pid] != split:
                raise DataError(f"prototype {pid!r} appears in splits {owner[pid]!r} and {split!r}")
            owner[pid] = split


def load_split(manifest, split, embed_cfg):
    check_disjoint(manifest)
    if split not in manifest.splits:
        raise DataError(f"manifest has no split {split!r}")
    out = []
    for path in manifest.paths(split):
        try:
            proto = load_prototype(path)
        except OSError:
            raise
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
        out.append(make_example(proto, embed_cfg, path))
    return out


def split_counts(examples):
    counts = np.zeros(len(LABELS), dtype=np.int64)
    for ex in examples:
        if ex.feats.labels is None:
            raise DataError(f"prototype {ex.id!r} is not fully labelled")
        counts += np.bincount(ex.feats.labels, minlength=len(LABELS))
    return counts


# ------------------------------------------------------------- evaluation

@dataclass
class ClassificationReport:
    confusion: np.ndarray  # rows = truth, columns = prediction, label order S, M, N

    @property
    def support(self):
        return self.confusion.sum(axis=1)

    def _ratio(self, num, den):
        return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)

    @property
    def precision(self):
        return self._ratio(np.diag(self.confusion).astype(float), self.confusion.sum(axis=0))

    @property
    def recall(self):
        return self._ratio(np.diag(self.confusion).astype(float), self.support)

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return self._ratio(2 * p * r, p + r)

    def macro(self):
        return {"precision": float(self.precision.mean()), "recall": float(self.recall.mean()),
                "f1": float(self.f1.mean())}

    def weighted(self):
        s = self.support
        w = s / s.sum() if s.sum() else np.zeros(len(s))
        return {"precision": float(self.precision @ w), "recall": float(self.recall @ w), "f1": float(self.f1 @ w)}

    @property
    def macro_f1(self):
        return self.macro()["f1"]

    @property
    def weighted_f1(self):
        return self.weighted()["f1"]

    def to_dict(self):
        per = {lab: {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                     "f1": float(self.f1[i]), "support": int(self.support[i])}
               for i, lab in enumerate(LABELS)}
        return {"per_class": per, "macro": self.macro(), "weighted": self.weighted(),
                "confusion": self.confusion.astype(int).tolist()}

    @classmethod
    def from_predictions(cls, truth, pred, k=len(LABELS)):
        cm = np.zeros((k, k), dtype=np.int64)
        np.add.at(cm, (np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
        return cls(cm)


def predict_labels(model, examples, batch_size=8):
    """Per-example predicted label indices (eval mode)."""
    out = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        probs = model.predict_proba([ex.feats for ex in chunk])
        pos = 0
        for ex in chunk:
            n = len(ex.feats)
            out.append(probs[pos:pos + n].argmax(axis=1))
            pos += n
    return out


def evaluate_classification(model, examples, predictions=None):
    if not examples:
        raise DataError("cannot evaluate an empty split")
    preds = predict_labels(model, examples) if predictions is None else predictions
    truth = np.concatenate([ex.feats.labels for ex in examples])
    return ClassificationReport.from_predictions(truth, np.concatenate(preds))


def evaluate_grouping(examples, predictions, thresholds=THRESHOLDS, strata_threshold=1):
    """Micro-aggregated grouping report, with tiny/overlapping strata at ``strata_threshold``."""
    total = grouping_metrics([], [], thresholds)
    total.thresholds = {t: type(c)() for t, c in total.thresholds.items()}
    for ex, pred in zip(examples, predictions):
        uuids = ex.feats.uuids
        gt = decode_groups(ex.feats.labels, uuids, "ground-truth")
        pg = decode_groups(pred, uuids)
        rep = grouping_metrics(gt, pg, thresholds)
        for name in ("tiny", "overlapping"):
            flags = {u: f[name] for u, f in ex.flags.items()}
            rep.strata[name] = stratified_metrics(gt, pg, flags, (strata_threshold,))
        total = total + rep
    return total


# ---------------------------------------------------------------- training

def model_from_checkpoint(ckpt):
    if ckpt.config.get("format") != FORMAT_TAG:
        raise ConfigError(f"checkpoint was written by an incompatible model version ({ckpt.config.get('format')!r})")
    cfg = TrainConfig.from_dict(ckpt.config["train"]).validate()
    model = Model(cfg.embed, cfg.encoder, seed=cfg.seed)
    missing = set(model.params) - set(ckpt.params)
    extra = set(ckpt.params) - set(model.params)
    if missing or extra:
        raise ConfigError(f"checkpoint parameters do not match the model (missing {sorted(missing)}, "
                          f"unexpected {sorted(extra)})")
    for name, p in model.params.items():
        if ckpt.params[name].shape != p.shape:
            raise ConfigError(f"parameter {name} has shape {ckpt.params[name].shape}, expected {p.shape}")
        p.data = np.array(ckpt.params[name], dtype=p.dtype)
    return model, cfg


def make_checkpoint(model, cfg, meta):
    params = {k: p.data.astype(np.float32).copy() for k, p in model.params.items()}
    return Checkpoint({"format": FORMAT_TAG, "train": cfg.to_dict()}, params, meta)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: Model
    log: list
    class_weights: np.ndarray


def train(manifest, config, log_fn=None):
    """Train on the manifest's ``train`` split, selecting by ``val`` macro-F1."""
    config.validate()
    train_set = load_split(manifest, "train", config.embed)
    val_set = load_split(manifest, "val", config.embed) if manifest.splits.get("val") else []
    return train_examples(train_set, val_set, config, log_fn)


def train_examples(train_set, val_set, config, log_fn=None):
    config.validate()
    if not train_set:
        raise DataError("training split is empty")
    weights = compute_class_weights(split_counts(train_set))
    model = Model(config.embed, config.encoder, seed=config.seed)
    state = T.AdamState(lr=config.lr, l2_lambda=config.l2_lambda)
    rng = np.random.default_rng([config.seed, 1])
    w = weights.astype(model.dtype)

    best = None  # (score, epoch, params)
    log = []
    for epoch in range(1, config.epochs + 1):
        state.lr = config.lr_at(epoch)
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i].feats for i in order[start:start + config.batch_size]]
            labels = np.concatenate([f.labels for f in batch])
            try:
                logits = model.forward(batch, training=True, rng=rng)
                loss = T.cross_entropy(logits, labels, w)
                model.zero_grad()
                loss.backward()
            except T.NonFiniteError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, "loss is not finite")
            T.adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state)
            losses.append(value)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "lr": state.lr}
        if val_set:
            entry["val_macro_f1"] = evaluate_classification(model, val_set).macro_f1
            score = entry["val_macro_f1"]
        else:
            score = -entry["train_loss"]
        if best is None or score > best[0]:
            best = (score, epoch, {k: p.data.copy() for k, p in model.params.items()})
        log.append(entry)
        if log_fn is not None:
            log_fn(entry)

    for k, data in best[2].items():
        model.params[k].data = data
    meta = {"epoch": best[1], "epochs_run": config.epochs, "seed": config.seed,
            "final_train_loss": log[-1]["train_loss"],
            "best_val_macro_f1": best[0] if val_set else None,
            "class_weights": [float(x) for x in weights]}
    ckpt = make_checkpoint(model, copy.deepcopy(config), meta)
    return TrainResult(ckpt, model, log, weights)
