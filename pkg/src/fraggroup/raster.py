"""64x64 element images.

Shapes are described in unit coordinates ([0, 1] on both axes of the
element's frame) and drawn centered with the frame's aspect ratio preserved.
Images are quantised to 8 bits per channel, like an exported PNG, and
returned as float32 arrays of shape (3, 64, 64) in [0, 1].
"""
from __future__ import annotations

import math

import numpy as np

SIZE = 64
DEFAULT_FILL = (128, 128, 128, 255)
DRAWABLE = ("rectangle", "oval", "path", "text", "bitmap", "symbol", "unk")

_centers = (np.arange(SIZE) + 0.5)


class ShapeError(ValueError):
    pass


def _unit_grid(w, h):
    """Unit coordinates of every pixel center, plus the mask of pixels inside the drawn box."""
    if w <= 0 or h <= 0:
        return None
    scale = SIZE / max(w, h)
    bw, bh = w * scale, h * scale
    x0, y0 = (SIZE - bw) / 2, (SIZE - bh) / 2
    u = (_centers[None, :] - x0) / bw
    v = (_centers[:, None] - y0) / bh
    u, v = np.broadcast_to(u, (SIZE, SIZE)), np.broadcast_to(v, (SIZE, SIZE))
    inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
    return u, v, inside, bh


def points_in_polygon(u, v, poly):
    """Even-odd rule test of points (u, v) against a closed polygon."""
    poly = np.asarray(poly, dtype=float)
    inside = np.zeros(u.shape, dtype=bool)
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for ax, ay, bx, by in zip(x1, y1, x2, y2):
        if ay == by:
            continue
        crosses = (ay > v) != (by > v)
        xint = ax + (v - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (u < xint)
    return inside


def shape_mask(kind, w, h, params=None):
    """Boolean 64x64 mask for a shape kind drawn into a w x h frame."""
    grid = _unit_grid(w, h)
    if grid is None:
        return np.zeros((SIZE, SIZE), dtype=bool)
    u, v, inside, bh = grid
    if kind == "rect":
        return inside
    if kind == "ellipse":
        return inside & (((u - 0.5) / 0.5) ** 2 + ((v - 0.5) / 0.5) ** 2 <= 1.0)
    if kind == "bars":
        lines = int(min(4, max(1, round(bh / 14))))
        row = np.floor(v * lines)
        frac = v * lines - row
        last_short = (row == lines - 1) & (u > 0.7) & (lines > 1)
        return inside & (frac >= 0.2) & (frac < 0.8) & ~last_short
    if kind == "polygon":
        return inside & points_in_polygon(u, v, params)
    if kind == "polygons":
        m = np.zeros((SIZE, SIZE), dtype=bool)
        for poly in params:
            m ^= points_in_polygon(u, v, poly)
        return inside & m
    raise ShapeError(f"unknown shape kind {kind!r}")


def composite(mask, rgba, background=None):
    """Alpha-composite a flat fill over white (or ``background``) into uint8 (3, 64, 64)."""
    r, g, b, a = rgba
    img = np.full((3, SIZE, SIZE), 255, dtype=np.uint8) if background is None else background.copy()
    alpha = a / 255.0
    for ch, c in enumerate((r, g, b)):
        layer = img[ch].astype(np.float64)
        layer[mask] = alpha * c + (1.0 - alpha) * layer[mask]
        img[ch] = np.clip(np.rint(layer), 0, 255).astype(np.uint8)
    return img


def to_float(img_u8):
    return (img_u8.astype(np.float32) / np.float32(255.0))


# Fallback geometry used when only the hierarchy attributes are known.
_DIAMOND = ((0.5, 0.0), (1.0, 0.5), (0.5, 1.0), (0.0, 0.5))
_CLASS_SHAPE = {
    "rectangle": ("rect", None),
    "bitmap": ("rect", None),
    "symbol": ("rect", None),
    "unk": ("rect", None),
    "oval": ("ellipse", None),
    "path": ("polygon", _DIAMOND),
    "text": ("bars", None),
}


def rasterize_element(node):
    """Draw a leaf node from its attributes alone.

    Paths are approximated by a diamond inscribed in the frame and text by
    filled bars. Missing colors fall back to mid-gray.
    """
    if node.children or node.cls == "group":
        raise ShapeError(f"cannot rasterize container node {node.uuid!r}")
    kind, params = _CLASS_SHAPE.get(node.cls, ("rect", None))
    mask = shape_mask(kind, node.frame.w, node.frame.h, params)
    rgba = DEFAULT_FILL if node.color is None else node.color.as_tuple()
    return to_float(composite(mask, rgba))


# ------------------------------------------------------------ shape library

def ellipse_polygon(scale=1.0, steps=40):
    """Ellipse inscribed in the unit box, shrunk about its center by ``scale``."""
    ts = np.linspace(0, 2 * math.pi, steps, endpoint=False)
    return [(0.5 + 0.5 * scale * math.cos(t), 0.5 + 0.5 * scale * math.sin(t)) for t in ts]


def regular_star(points=5, inner=0.45, rotation=-math.pi / 2):
    out = []
    for k in range(points * 2):
        rad = 0.5 if k % 2 == 0 else 0.5 * inner
        t = rotation + k * math.pi / points
        out.append((0.5 + rad * math.cos(t), 0.5 + rad * math.sin(t)))
    return out


def thick_polyline(pts, width):
    """Polygon outlining a polyline of the given stroke width (miter-free, for convex-ish paths)."""
    pts = np.asarray(pts, dtype=float)
    left, right = [], []
    for i in range(len(pts)):
        a = pts[max(i - 1, 0)]
        b = pts[min(i + 1, len(pts) - 1)]
        d = b - a
        n = np.array([-d[1], d[0]]) / (np.hypot(*d) + 1e-12)
        left.append(pts[i] + n * width / 2)
        right.append(pts[i] - n * width / 2)
    return [tuple(p) for p in left + right[::-1]]


def arc_band(start, sweep, outer=0.5, inner=0.3, steps=24):
    ts = np.linspace(start, start + sweep, steps)
    outer_pts = [(0.5 + outer * math.cos(t), 0.5 + outer * math.sin(t)) for t in ts]
    inner_pts = [(0.5 + inner * math.cos(t), 0.5 + inner * math.sin(t)) for t in ts[::-1]]
    return outer_pts + inner_pts


GLYPHS = {
    "star": lambda rng: regular_star(5, rng.uniform(0.38, 0.5)),
    "chevron": lambda rng: thick_polyline([(0.25, 0.05), (0.75, 0.5), (0.25, 0.95)], rng.uniform(0.18, 0.26)),
    "check": lambda rng: thick_polyline([(0.05, 0.55), (0.38, 0.88), (0.95, 0.15)], rng.uniform(0.16, 0.24)),
    "plus": lambda rng: [(0.38, 0), (0.62, 0), (0.62, 0.38), (1, 0.38), (1, 0.62), (0.62, 0.62),
                         (0.62, 1), (0.38, 1), (0.38, 0.62), (0, 0.62), (0, 0.38), (0.38, 0.38)],
    "heart": lambda rng: [(0.5 + 0.5 * (16 * math.sin(t) ** 3) / 17,
                           0.45 - 0.5 * (13 * math.cos(t) - 5 * math.cos(2 * t) - 2 * math.cos(3 * t) - math.cos(4 * t)) / 17)
                          for t in np.linspace(0, 2 * math.pi, 40, endpoint=False)],
    "bell": lambda rng: [(0.5, 0.0), (0.72, 0.12), (0.8, 0.45), (0.95, 0.8), (0.6, 0.8), (0.6, 0.95),
                         (0.4, 0.95), (0.4, 0.8), (0.05, 0.8), (0.2, 0.45), (0.28, 0.12)],
}


def fragment_polygon(kind, rng):
    """Partial shapes that only read as part of a larger component."""
    if kind == "arc":
        start = rng.uniform(0, 2 * math.pi)
        return arc_band(start, rng.uniform(0.8, 2.6), 0.5, rng.uniform(0.25, 0.4))
    if kind == "stroke":
        a = (rng.uniform(0, 0.3), rng.uniform(0, 1))
        b = (rng.uniform(0.7, 1), rng.uniform(0, 1))
        return thick_polyline([a, b], rng.uniform(0.12, 0.22))
    if kind == "wedge":
        t0 = rng.uniform(0, 2 * math.pi)
        sweep = rng.uniform(0.6, 1.8)
        ts = np.linspace(t0, t0 + sweep, 16)
        return [(0.5, 0.5)] + [(0.5 + 0.5 * math.cos(t), 0.5 + 0.5 * math.sin(t)) for t in ts]
    if kind == "halfmoon":
        ts = np.linspace(0, math.pi, 20) + rng.choice([0, math.pi / 2, math.pi, 3 * math.pi / 2])
        return [(0.5 + 0.5 * math.cos(t), 0.5 + 0.5 * math.sin(t)) for t in ts]
    if kind == "wave":
        xs = np.linspace(0, 1, 24)
        phase, amp = rng.uniform(0, 2 * math.pi), rng.uniform(0.1, 0.25)
        top = [(x, 0.35 + amp * math.sin(2 * math.pi * x * 1.5 + phase)) for x in xs]
        return top + [(1, 1), (0, 1)]
    if kind == "blob":
        n = int(rng.integers(6, 10))
        ts = np.sort(rng.uniform(0, 2 * math.pi, n))
        radii = rng.uniform(0.2, 0.5, n)
        return [(0.5 + r * math.cos(t), 0.5 + r * math.sin(t)) for t, r in zip(ts, radii)]
    if kind == "sliver":
        return [(0, 0), (1, rng.uniform(0.3, 0.7)), (rng.uniform(0.2, 0.8), 1)]
    raise ShapeError(f"unknown fragment kind {kind!r}")


FRAGMENTS = ("arc", "stroke", "wedge", "halfmoon", "sliver")


def texture(w, h, rng, blocks=4):
    """Blocky random-colour texture filling the drawn box (stand-in for photos)."""
    grid = _unit_grid(w, h)
    img = np.full((3, SIZE, SIZE), 255, dtype=np.uint8)
    if grid is None:
        return img
    u, v, inside, _ = grid
    palette = rng.integers(0, 256, size=(3, blocks, blocks))
    bi = np.clip((v * blocks).astype(int), 0, blocks - 1)
    bj = np.clip((u * blocks).astype(int), 0, blocks - 1)
    for ch in range(3):
        img[ch][inside] = palette[ch][bi[inside], bj[inside]]
    return img
