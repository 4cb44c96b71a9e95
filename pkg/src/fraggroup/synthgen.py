"""Synthetic labelled design prototypes.

Each prototype is a mobile page assembled from sections (status bar, nav bar,
list rows, banners, tab bars, ...). Fragmented groups come from three
archetypes:

* icon: 2-6 partial shapes (arcs, strokes, wedges, dots) stacked in one small box
* decoration: a cluster of shapes next to a heading
* background: large overlapping shapes behind card content

Single-path glyphs, glyph+badge pairs and avatars fill the same slots as
fragmented icons but are not merged, so attribute-only cues are ambiguous and
the element image matters: the sidecar images carry the true path geometry,
which the hierarchy JSON does not.

Output per prototype: ``<id>.json`` plus ``<id>.img.bin`` (float32 LE,
3*64*64 values per element) and ``<id>.img.json`` (uuid -> record index).
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import raster
from .prototype_io import (
    LABELS,
    DesignPrototype,
    dumps_canonical,
    extract_sequence,
    load_prototype,
    parse_prototype,
)

IMAGE_SHAPE = (3, raster.SIZE, raster.SIZE)
IMAGE_VALUES = 3 * raster.SIZE * raster.SIZE
SPLITS = ("train", "val", "test")


class ConfigError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass
class GenConfig:
    n_prototypes: int = 500
    elements_per_prototype: tuple = (10, 64)
    group_count: tuple = (1, 2)
    group_size: tuple = (2, 5)
    tiny_fraction: float = 0.5
    overlap_fraction: float = 0.2
    target_merge_ratio: float = 1 / 8
    seed: int = 0

    def validate(self):
        for name in ("elements_per_prototype", "group_count", "group_size"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"{name} range ({lo}, {hi}) is empty")
        if self.group_size[0] < 2:
            raise ConfigError("groups need at least 2 members")
        if self.group_size[0] > self.elements_per_prototype[1]:
            raise ConfigError("group_size exceeds elements_per_prototype")
        if self.group_count[0] * self.group_size[0] > self.elements_per_prototype[1]:
            raise ConfigError("group_count * group_size exceeds elements_per_prototype")
        for name in ("tiny_fraction", "overlap_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not self.target_merge_ratio > 0:
            raise ConfigError("target_merge_ratio must be positive")
        if self.n_prototypes < 0:
            raise ConfigError("n_prototypes must be >= 0")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("elements_per_prototype", "group_count", "group_size"):
            if key in d:
                d[key] = tuple(d[key])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator options: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class DatasetManifest:
    seed: int
    splits: dict
    counts: dict = field(default_factory=dict)
    root: Path = field(default=Path("."), compare=False)

    def paths(self, split):
        return [self.root / p for p in self.splits[split]]

    def to_dict(self):
        return {"seed": self.seed, "splits": self.splits, "counts": self.counts}

    def save(self, path):
        path = Path(path)
        path.write_text(dumps_canonical(self.to_dict()) + "\n")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        doc = json.loads(path.read_text())
        return cls(int(doc["seed"]), {k: list(v) for k, v in doc["splits"].items()},
                   doc.get("counts", {}), path.parent)


# ------------------------------------------------------------ image sidecars

def image_paths(proto_path):
    proto_path = Path(proto_path)
    stem = proto_path.with_suffix("")
    return stem.with_name(stem.name + ".img.bin"), stem.with_name(stem.name + ".img.json")


def write_images(proto_path, images):
    """Store {uuid: uint8 or float image} as a float32 LE blob plus uuid index."""
    blob_path, index_path = image_paths(proto_path)
    uuids = list(images)
    arr = np.stack([_as_float(images[u]) for u in uuids]) if uuids else np.zeros((0,) + IMAGE_SHAPE, np.float32)
    blob_path.write_bytes(arr.astype("<f4").tobytes())
    index_path.write_text(dumps_canonical({u: i for i, u in enumerate(uuids)}))


def read_images(proto_path):
    """Load the sidecar images of a prototype as {uuid: float32 (3, 64, 64)}; empty if absent."""
    blob_path, index_path = image_paths(proto_path)
    if not blob_path.exists():
        return {}
    index = json.loads(index_path.read_text())
    arr = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    if arr.size != len(index) * IMAGE_VALUES:
        raise ValueError(f"image blob {blob_path} has {arr.size} values for {len(index)} records")
    arr = arr.reshape((len(index),) + IMAGE_SHAPE).astype(np.float32)
    return {u: arr[i] for u, i in index.items()}


def _as_float(img):
    return raster.to_float(img) if img.dtype == np.uint8 else img.astype(np.float32)


# ----------------------------------------------------------------- vocab

PATH_NAMES = ("Path", "Shape", "Combined Shape", "Fill 1", "Stroke 1", "Path Copy", "Vector")
OVAL_NAMES = ("Oval", "Oval Copy", "dot", "Oval 2")
RECT_NAMES = ("Rectangle", "Rectangle Copy", "line", "Rectangle 3")
TEXT_WORDS = ("settings", "profile", "order", "price", "total", "hello", "search", "message", "travel",
              "hotel", "flight", "cart", "shop", "today", "12:30", "details", "more", "wallet", "coupon",
              "friends", "share", "follow", "news", "sale", "new", "hot", "pay", "delivery", "home", "mine")
ICON_COLORS = ((51, 51, 51), (255, 87, 34), (33, 150, 243), (76, 175, 80), (156, 39, 176), (255, 193, 7),
               (0, 150, 136), (233, 30, 99), (96, 125, 139))
GLYPH_KINDS = tuple(raster.GLYPHS)


def _r2(v):
    return round(float(v), 2)


class _Page:
    """Accumulates nodes, labels and images for one prototype."""

    def __init__(self, rng, pid, scale):
        self.rng = rng
        self.pid = pid
        self.scale = scale
        self.n = 0
        self.images = {}
        self.labels = Counter()

    def uid(self):
        self.n += 1
        return f"{self.pid}-{self.n:03d}-{int(self.rng.integers(0, 16 ** 6)):06x}"

    def frame(self, x, y, w, h):
        s = self.scale
        return {"x": _r2(x * s), "y": _r2(y * s), "w": _r2(max(w, 0) * s), "h": _r2(max(h, 0) * s)}

    def leaf(self, cls, name, box, rgb, alpha=255, label="non-merge", draw=None, hide_color=None):
        """Add an element. ``draw`` is (kind, params) or a callable (w, h) -> uint8 image."""
        uid = self.uid()
        fr = self.frame(*box)
        rgba = (int(rgb[0]), int(rgb[1]), int(rgb[2]), int(alpha))
        if draw is None:
            draw = {"oval": ("ellipse", None), "text": ("bars", None)}.get(cls, ("rect", None))
        if callable(draw):
            img = draw(fr["w"], fr["h"])
        else:
            img = raster.composite(raster.shape_mask(draw[0], fr["w"], fr["h"], draw[1]), rgba)
        self.images[uid] = img
        if hide_color is None:
            hide_color = self.rng.random() < 0.08
        self.labels[label] += 1
        return {"uuid": uid, "class": cls, "name": name, "frame": fr,
                "color": None if hide_color else list(map(float, rgba)), "label": label, "children": []}

    def container(self, name, children, box=None):
        if box is None:
            fs = [c["frame"] for c in children]
            x0 = min(f["x"] for f in fs)
            y0 = min(f["y"] for f in fs)
            fr = {"x": x0, "y": y0, "w": _r2(max(f["x"] + f["w"] for f in fs) - x0),
                  "h": _r2(max(f["y"] + f["h"] for f in fs) - y0)}
        else:
            fr = self.frame(*box)
        return {"uuid": self.uid(), "class": "group", "name": name, "frame": fr, "color": None,
                "children": children}

    def pick(self, seq):
        return seq[int(self.rng.integers(0, len(seq)))]

    def text(self, box, words=None, rgb=(51, 51, 51)):
        k = int(self.rng.integers(1, 4)) if words is None else words
        name = " ".join(self.pick(TEXT_WORDS) for _ in range(k))
        if self.rng.random() < 0.5:
            name = name.title()
        return self.leaf("text", name, box, rgb)

    def light(self):
        return tuple(int(c) for c in self.rng.integers(215, 256, 3))

    def icon_color(self):
        return self.pick(ICON_COLORS)


# -------------------------------------------------------------- icon slots

def _icon_box(page, x, y, size_units, tiny_prob):
    """Box for an icon whose pixel size is tiny (< 32 px) with probability ``tiny_prob``."""
    if page.rng.random() < tiny_prob:
        px = page.rng.uniform(14, 30)
    else:
        px = page.rng.uniform(34, 60)
    side = px / page.scale
    return x + (size_units - side) / 2, y + (size_units - side) / 2, side


def fragmented_icon(page, x, y, side, k):
    """k partial shapes inside one icon box, labelled as a merged group."""
    rgb = page.icon_color()
    accent = page.icon_color()
    kids = [icon_base(page, x, y, side, rgb)]
    for i in range(1, k):
        fw = side * page.rng.uniform(0.3, 1.0)
        fh = side * page.rng.uniform(0.3, 1.0)
        fx = x + page.rng.uniform(0, side - fw)
        fy = y + page.rng.uniform(0, side - fh)
        roll = page.rng.random()
        color = accent if page.rng.random() < 0.2 else rgb
        label = "merge"
        if roll < 0.7:
            poly = raster.fragment_polygon(page.pick(raster.FRAGMENTS), page.rng)
            kids.append(page.leaf("path", page.pick(PATH_NAMES), (fx, fy, fw, fh), color, label=label,
                                  draw=("polygon", poly)))
        elif roll < 0.85:
            d = min(fw, fh) * page.rng.uniform(0.3, 0.7)
            kids.append(page.leaf("oval", page.pick(OVAL_NAMES), (fx, fy, d, d), color, label=label))
        else:
            kids.append(page.leaf("rectangle", page.pick(RECT_NAMES), (fx, fy, fw, max(fh * 0.25, 1 / page.scale)),
                                  color, label=label))
    name = page.pick(("icon", "Group", "ic_" + page.pick(TEXT_WORDS), "Icon"))
    return page.container(name, kids)


def icon_base(page, x, y, side, rgb):
    """First layer of a fragmented icon: a base plate (disc, ring or tile) spanning the icon box."""
    d = side * page.rng.uniform(0.85, 1.0)
    bx, by = x + (side - d) / 2, y + (side - d) / 2
    roll = page.rng.random()
    alpha = int(page.rng.integers(70, 256))
    if roll < 0.4:
        return page.leaf("oval", page.pick(OVAL_NAMES), (bx, by, d, d), rgb, alpha, "start-merge")
    if roll < 0.7:
        inner = page.rng.uniform(0.55, 0.8)
        ring = [raster.ellipse_polygon(1.0), raster.ellipse_polygon(inner)]
        return page.leaf("oval", page.pick(OVAL_NAMES), (bx, by, d, d), rgb, alpha, "start-merge",
                         draw=("polygons", ring))
    return page.leaf("rectangle", page.pick(RECT_NAMES), (bx, by, d, d), rgb, alpha, "start-merge")


def glyph(page, x, y, side, rgb=None):
    kind = page.pick(GLYPH_KINDS)
    poly = raster.GLYPHS[kind](page.rng)
    return page.leaf("path", page.pick(PATH_NAMES), (x, y, side, side), rgb or page.icon_color(),
                     draw=("polygon", poly))


def plain_slot(page, x, y, size_units, tiny_prob):
    """A non-merged occupant of an icon slot."""
    bx, by, side = _icon_box(page, x, y, size_units, tiny_prob)
    roll = page.rng.random()
    if roll < 0.4:
        return [glyph(page, bx, by, side)]
    if roll < 0.7:
        g = glyph(page, bx, by, side)
        d = side * 0.4
        badge = page.leaf("oval", page.pick(OVAL_NAMES + ("badge",)), (bx + side - d * 0.7, by - d * 0.3, d, d),
                          (244, 67, 54))
        return [page.container("Group", [g, badge])]
    if roll < 0.85:
        img_rng = np.random.default_rng(page.rng.integers(0, 2 ** 32))
        return [page.leaf("bitmap", page.pick(("avatar", "Bitmap", "image", "photo")),
                          (x, y, size_units, size_units), (200, 200, 200),
                          draw=lambda w, h: raster.texture(w, h, img_rng))]
    mask = page.leaf("oval", page.pick(OVAL_NAMES + ("mask",)), (x, y, size_units, size_units), page.light())
    return [mask, glyph(page, bx + side * 0.2, by + side * 0.2, side * 0.6)]


def icon_slot(page, x, y, size_units, tiny_prob, group_k=None):
    if group_k:
        bx, by, side = _icon_box(page, x, y, size_units, tiny_prob)
        return [fragmented_icon(page, bx, by, side, group_k)]
    return plain_slot(page, x, y, size_units, tiny_prob)


# ----------------------------------------------------------------- sections

def status_bar(page, y, width):
    node = page.leaf("symbol", page.pick(("status bar", "Status Bar", "statusbar")), (0, y, width, 20),
                     (0, 0, 0), draw=("bars", None))
    return [node], 20


def nav_bar(page, y, width, cfg):
    kids = [glyph(page, 16, y + 13, 18, rgb=(51, 51, 51)),
            page.text((width / 2 - 60, y + 12, 120, 20), words=1)]
    if page.rng.random() < 0.5:
        kids += plain_slot(page, width - 40, y + 10, 24, cfg.tiny_fraction)
    return [page.container("nav bar", kids)], 44


def list_row(page, y, width, cfg, group_k=None):
    kids = []
    if page.rng.random() < 0.3:
        kids.append(page.leaf("rectangle", page.pick(("bg", "Rectangle", "cell bg")), (0, y, width, 64), page.light()))
    kids += icon_slot(page, 16, y + 12, 40, cfg.tiny_fraction, group_k)
    kids.append(page.text((68, y + 12, 200, 18)))
    if page.rng.random() < 0.5:
        kids.append(page.text((68, y + 36, 160, 14), rgb=(153, 153, 153)))
    if page.rng.random() < 0.5:
        kids.append(glyph(page, width - 26, y + 26, 12, rgb=(200, 200, 200)))
    if page.rng.random() < 0.4:
        kids.append(page.leaf("rectangle", page.pick(("divider", "line", "Rectangle")), (68, y + 63, width - 68, 1),
                              (230, 230, 230)))
    return [page.container(page.pick(("cell", "row", "Group", "item")), kids)], 64


def tab_bar(page, y, width, cfg, group_ks=()):
    n = max(3, len(group_ks) + int(page.rng.integers(2, 4)))
    n = min(n, 5)
    slots = list(group_ks) + [None] * (n - len(group_ks))
    page.rng.shuffle(slots)
    kids = [page.leaf("rectangle", page.pick(("tab bar bg", "bg", "Rectangle")), (0, y, width, 50), (255, 255, 255))]
    step = width / n
    for i, k in enumerate(slots):
        cx = step * (i + 0.5)
        item = icon_slot(page, cx - 14, y + 4, 28, cfg.tiny_fraction, k)
        item.append(page.text((cx - 22, y + 34, 44, 12), words=1, rgb=(120, 120, 120)))
        kids.append(page.container("tab item", item))
    return [page.container(page.pick(("tab bar", "Tab Bar", "tabbar")), kids)], 50


def banner(page, y, width, cfg):
    img_rng = np.random.default_rng(page.rng.integers(0, 2 ** 32))
    kids = [page.leaf("bitmap", page.pick(("banner", "Bitmap", "image")), (16, y, width - 32, 140), (180, 180, 180),
                      draw=lambda w, h: raster.texture(w, h, img_rng, blocks=6))]
    kids.append(page.text((32, y + 96, 200, 24), rgb=(255, 255, 255)))
    return [page.container("banner", kids)], 152


def button(page, y, width, cfg):
    rgb = page.icon_color()
    kids = [page.leaf("rectangle", page.pick(("button", "btn bg", "Rectangle")), (16, y, width - 32, 44), rgb),
            page.text((width / 2 - 40, y + 12, 80, 20), words=1, rgb=(255, 255, 255))]
    return [page.container("button", kids)], 56


def text_block(page, y, width, cfg):
    lines = int(page.rng.integers(1, 4))
    kids = [page.text((16, y + 22 * i, width - 32 - 40 * page.rng.random(), 18)) for i in range(lines)]
    return kids, 22 * lines + 6


def grid(page, y, width, cfg):
    kids = []
    cw = (width - 48) / 2
    for c in range(2):
        x = 16 + c * (cw + 16)
        img_rng = np.random.default_rng(page.rng.integers(0, 2 ** 32))
        kids.append(page.container("card", [
            page.leaf("bitmap", page.pick(("Bitmap", "image", "goods")), (x, y, cw, 110), (180, 180, 180),
                      draw=lambda w, h, r=img_rng: raster.texture(w, h, r)),
            page.text((x, y + 116, cw, 16)),
        ]))
    return kids, 142


def decoration(page, y, width, cfg, k):
    heading = page.text((16, y + 10, 160, 22), words=1)
    rw, rh = page.rng.uniform(60, 120), page.rng.uniform(36, 70)
    rx = page.rng.uniform(190, width - rw - 16)
    ry = y
    palette = (page.icon_color(), page.light())
    members = []
    for i in range(k):
        if i == 0:  # anchor shape spanning most of the decoration
            fw, fh = rw * page.rng.uniform(0.75, 1.0), rh * page.rng.uniform(0.75, 1.0)
        else:
            fw, fh = rw * page.rng.uniform(0.2, 0.6), rh * page.rng.uniform(0.3, 0.8)
        fx, fy = rx + page.rng.uniform(0, rw - fw), ry + page.rng.uniform(0, rh - fh)
        rgb = palette[int(page.rng.random() < 0.4)]
        alpha = int(page.rng.integers(90, 256))
        label = "start-merge" if i == 0 else "merge"
        roll = page.rng.random()
        name_hint = "decoration" if page.rng.random() < 0.25 else None
        if roll < 0.45:
            members.append(page.leaf("oval", name_hint or page.pick(OVAL_NAMES), (fx, fy, fw, fw), rgb, alpha, label))
        elif roll < 0.85:
            poly = raster.fragment_polygon(page.pick(("blob", "wedge", "halfmoon", "sliver")), page.rng)
            members.append(page.leaf("path", name_hint or page.pick(PATH_NAMES), (fx, fy, fw, fh), rgb, alpha, label,
                                     draw=("polygon", poly)))
        else:
            members.append(page.leaf("rectangle", name_hint or page.pick(RECT_NAMES), (fx, fy, fw, fh * 0.4), rgb,
                                     alpha, label))
    deco = page.container(page.pick(("decoration", "Group", "deco")), members)
    return [page.container("header", [heading, deco])], max(rh, 40) + 8


def background_card(page, y, width, cfg, k, icon_k=None):
    """Large overlapping shapes with card content drawn on top (overlapping elements)."""
    cx, cw, ch = 16, width - 32, 170
    members = []
    base = page.light()
    for i in range(k):
        label = "start-merge" if i == 0 else "merge"
        rgb = base if i == 0 else page.icon_color()
        alpha = 255 if i == 0 else int(page.rng.integers(60, 200))
        name = page.pick(("bg", "background", "Rectangle", "Path", "Oval", "Mask"))
        if i == 0:
            members.append(page.leaf("rectangle", name, (cx, y, cw, ch), rgb, alpha, label))
            continue
        fw, fh = cw * page.rng.uniform(0.4, 0.9), ch * page.rng.uniform(0.4, 0.9)
        fx, fy = cx + page.rng.uniform(0, cw - fw), y + page.rng.uniform(0, ch - fh)
        if page.rng.random() < 0.35:
            members.append(page.leaf("oval", name, (fx, fy, fw, fw), rgb, alpha, label))
        else:
            poly = raster.fragment_polygon(page.pick(("wave", "blob", "halfmoon")), page.rng)
            members.append(page.leaf("path", name, (fx, fy, fw, fh), rgb, alpha, label, draw=("polygon", poly)))
    bg = page.container(page.pick(("background", "bg", "Group")), members)
    fg = [page.text((cx + 16, y + 16, 180, 22), words=2)]
    fg += icon_slot(page, cx + cw - 64, y + 12, 48, cfg.tiny_fraction, icon_k)
    fg.append(page.text((cx + 16, y + 48, 200, 16), rgb=(102, 102, 102)))
    if page.rng.random() < 0.6:
        fg.append(page.leaf("rectangle", "button", (cx + 16, y + ch - 48, 120, 32), page.icon_color()))
        fg.append(page.text((cx + 36, y + ch - 40, 80, 16), words=1, rgb=(255, 255, 255)))
    return [page.container("card", [bg] + fg)], ch + 12


FILLERS = (list_row, list_row, list_row, text_block, button, banner, grid)


# --------------------------------------------------------------- generation

def _plan_groups(rng, cfg):
    lo, hi = cfg.group_size
    n = int(rng.integers(cfg.group_count[0], cfg.group_count[1] + 1))
    overlap = rng.random() < cfg.overlap_fraction
    plan = []
    for i in range(n):
        if overlap and i == 0:
            arch = "background"
        else:
            arch = "icon" if rng.random() < 0.65 else "decoration"
        cap = {"icon": 6, "decoration": hi, "background": 4}[arch]
        floor = 3 if arch == "decoration" and hi >= 3 else lo
        size = int(rng.integers(max(lo, min(floor, hi)), max(lo, min(cap, hi)) + 1))
        plan.append((arch, size))
    if overlap and n == 1 and cfg.group_count[1] >= 2:
        plan.append(("icon", int(rng.integers(lo, min(6, hi) + 1))))
    return plan


def generate_prototype(cfg, index):
    """Build prototype ``index`` of a corpus. Pure function of (cfg, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    pid = f"proto-{index:05d}"
    scale = float(rng.choice([1.0, 414 / 375, 2.0, 3.0], p=[0.35, 0.15, 0.35, 0.15]))
    page = _Page(rng, pid, scale)
    width = 375.0
    plan = _plan_groups(rng, cfg)
    merged = sum(k for _, k in plan)
    lo, hi = cfg.elements_per_prototype
    target_non = merged / cfg.target_merge_ratio * rng.uniform(0.8, 1.2)
    target_non = int(np.clip(round(target_non), max(lo - merged, 1), max(hi - merged, 1)))

    sections = []  # (builder, kwargs)
    icons = [k for a, k in plan if a == "icon"]
    for arch, k in plan:
        if arch == "background":
            sections.append((background_card, {"k": k, "icon_k": icons.pop() if icons else None}))
        elif arch == "decoration":
            sections.append((decoration, {"k": k}))
    tab_icons = []
    for k in icons:
        if rng.random() < 0.25:
            tab_icons.append(k)
        else:
            sections.append((list_row, {"group_k": k}))

    def build(builder, kwargs):
        extra = {} if builder is status_bar else {"cfg": cfg}
        return builder(page, 0.0, width, **extra, **kwargs)

    top, body, bottom = [], [], []
    if rng.random() < 0.7:
        top.append(build(status_bar, {}))
    if rng.random() < 0.8:
        top.append(build(nav_bar, {}))
    order = list(range(len(sections)))
    rng.shuffle(order)
    body = [build(*sections[i]) for i in order]
    if tab_icons or rng.random() < 0.3:
        bottom.append(build(tab_bar, {"group_ks": tab_icons}))
    while page.labels["non-merge"] < target_non:
        chunk = build(FILLERS[int(rng.integers(0, len(FILLERS)))], {})
        body.insert(int(rng.integers(0, len(body) + 1)), chunk)

    children, y = [], 0.0
    for nodes, height in top + body + bottom:
        for node in nodes:
            _shift(node, y * scale)
        children.extend(nodes)
        y += height + 8
    height = max(667.0, y + 34) * scale
    root = {"uuid": f"{pid}-root", "class": "group", "name": "page", "frame": {"x": 0.0, "y": 0.0,
            "w": _r2(width * scale), "h": _r2(height)}, "color": None, "children": children}
    doc = {"id": pid, "canvas": {"width": _r2(width * scale), "height": _r2(height)}, "root": root}
    return doc, page.images


def _shift(node, dy):
    node["frame"]["y"] = _r2(node["frame"]["y"] + dy)
    for child in node["children"]:
        _shift(child, dy)


def label_counts(proto_or_path):
    proto = proto_or_path if isinstance(proto_or_path, DesignPrototype) else load_prototype(proto_or_path)
    c = Counter(r.label or "non-merge" for r in extract_sequence(proto))
    return {lab: int(c.get(lab, 0)) for lab in LABELS}


def _sum_counts(counts):
    total = {lab: 0 for lab in LABELS}
    for c in counts:
        for lab in LABELS:
            total[lab] += c[lab]
    return total


def generate_dataset(config, out_dir, images=True):
    """Write ``config.n_prototypes`` prototypes (and image sidecars) to ``out_dir``.

    Returns ``(manifest, files)``; the manifest holds every file under the
    ``"all"`` split. Output is byte-identical for a fixed config.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files, counts = [], []
    for i in range(config.n_prototypes):
        doc, imgs = generate_prototype(config, i)
        path = out / f"{doc['id']}.json"
        data = dumps_canonical(doc).encode("utf-8")
        path.write_bytes(data)
        if images:
            write_images(path, imgs)
        counts.append(label_counts(parse_prototype(data)))
        files.append(path.name)
    manifest = DatasetManifest(config.seed, {"all": files}, {"all": _sum_counts(counts)}, out)
    return manifest, [out / f for f in files]


def split_dataset(manifest, ratios=(8, 1, 1), seed=None, names=SPLITS):
    """File-wise shuffled split by integer ratios (largest-remainder rounding)."""
    files = [f for split in sorted(manifest.splits) for f in manifest.splits[split]]
    files = sorted(dict.fromkeys(files))
    if len(ratios) != len(names):
        raise SplitError("one ratio per split name required")
    if len(files) < len(ratios):
        raise SplitError(f"{len(files)} files cannot fill {len(ratios)} splits")
    seed = manifest.seed if seed is None else seed
    order = np.random.default_rng(seed).permutation(len(files))
    total = float(sum(ratios))
    exact = [len(files) * r / total for r in ratios]
    sizes = [int(np.floor(e)) for e in exact]
    for i in sorted(range(len(ratios)), key=lambda i: (sizes[i] - exact[i], i))[: len(files) - sum(sizes)]:
        sizes[i] += 1
    # every split with a positive ratio gets at least one file
    for i, r in enumerate(ratios):
        if r > 0 and sizes[i] == 0:
            donor = int(np.argmax(sizes))
            sizes[donor] -= 1
            sizes[i] += 1
    splits, start = {}, 0
    for name, size in zip(names, sizes):
        splits[name] = sorted(files[j] for j in order[start:start + size])
        start += size
    counts = {name: _sum_counts(label_counts(manifest.root / f) for f in splits[name]) for name in names}
    return DatasetManifest(seed, splits, counts, manifest.root)


def tag_strata(proto):
    """Per-leaf flags: tiny (w < 32 and h < 32 px) and overlapping (positive-area intersection)."""
    seq = extract_sequence(proto)
    frames = [r.frame for r in seq]
    flags = {}
    if frames:
        xs = np.array([[f.x, f.y, f.x2, f.y2] for f in frames])
        iw = np.minimum(xs[:, None, 2], xs[None, :, 2]) - np.maximum(xs[:, None, 0], xs[None, :, 0])
        ih = np.minimum(xs[:, None, 3], xs[None, :, 3]) - np.maximum(xs[:, None, 1], xs[None, :, 1])
        inter = (iw > 0) & (ih > 0)
        np.fill_diagonal(inter, False)
        over = inter.any(axis=1)
    for i, (r, f) in enumerate(zip(seq, frames)):
        flags[r.uuid] = {"tiny": bool(f.w < 32 and f.h < 32), "overlapping": bool(over[i])}
    return flags
