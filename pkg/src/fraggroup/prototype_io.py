"""Design-prototype documents: parsing, validation, traversal and rewriting.

A prototype is a JSON document::

    {"id": str, "canvas": {"width": num, "height": num}, "root": node}

    node = {"uuid": str, "class": str, "name": str,
            "frame": {"x", "y", "w", "h"},
            "color": [r, g, b, a] | null,
            "label": "start-merge" | "merge" | "non-merge"   (optional),
            "children": [node, ...]}

Trees are treated as immutable values; rewriting returns new trees.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

CLASSES = ("oval", "rectangle", "path", "text", "bitmap", "symbol", "group")
UNK_CLASS = "unk"
LABELS = ("start-merge", "merge", "non-merge")
MERGE_NAME = "#merge#"


class PrototypeError(ValueError):
    """Base class for document problems."""


class ParseError(PrototypeError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


class SchemaError(PrototypeError):
    def __init__(self, msg, path):
        super().__init__(f"{path}: {msg}")
        self.path = path


class ValidationError(PrototypeError):
    pass


class LookupFailure(KeyError):
    pass


class ContiguityError(PrototypeError):
    pass


@dataclass(frozen=True)
class Frame:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite frame {vals}")
        if self.w < 0 or self.h < 0:
            raise ValidationError(f"negative frame size w={self.w} h={self.h}")

    @property
    def x2(self):
        return self.x + self.w

    @property
    def y2(self):
        return self.y + self.h

    def intersection_area(self, other: "Frame") -> float:
        iw = min(self.x2, other.x2) - max(self.x, other.x)
        ih = min(self.y2, other.y2) - max(self.y, other.y)
        return iw * ih if iw > 0 and ih > 0 else 0.0

    @staticmethod
    def bounding(frames) -> "Frame":
        frames = list(frames)
        x = min(f.x for f in frames)
        y = min(f.y for f in frames)
        return Frame(x, y, max(f.x2 for f in frames) - x, max(f.y2 for f in frames) - y)


@dataclass(frozen=True)
class RGBA:
    r: float
    g: float
    b: float
    a: float

    def __post_init__(self):
        for ch in (self.r, self.g, self.b, self.a):
            if not (math.isfinite(ch) and 0.0 <= ch <= 255.0):
                raise ValidationError(f"color channel {ch} outside [0, 255]")

    def as_tuple(self):
        return (self.r, self.g, self.b, self.a)


@dataclass(frozen=True)
class UINode:
    uuid: str
    cls: str
    name: str
    frame: Frame
    color: Optional[RGBA] = None
    label: Optional[str] = None
    children: tuple = ()

    @property
    def is_leaf(self):
        return not self.children


@dataclass(frozen=True)
class DesignPrototype:
    id: str
    canvas_width: float
    canvas_height: float
    root: UINode

    def __post_init__(self):
        if not (self.canvas_width > 0 and self.canvas_height > 0):
            raise ValidationError(f"canvas must be positive, got {self.canvas_width}x{self.canvas_height}")


@dataclass(frozen=True)
class ElementRecord:
    uuid: str
    cls: str
    name: str
    frame: Frame
    color: Optional[RGBA]
    label: Optional[str] = None


@dataclass(frozen=True)
class ElementSequence:
    records: tuple = ()
    canvas: tuple = (1.0, 1.0)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def uuids(self):
        return [r.uuid for r in self.records]

    @property
    def labels(self):
        return [r.label for r in self.records]


# ---------------------------------------------------------------- parsing

def _require(obj, key, path, kind):
    if not isinstance(obj, dict):
        raise SchemaError("expected an object", path)
    if key not in obj:
        raise SchemaError(f"missing required field '{key}'", path)
    val = obj[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise SchemaError(f"field '{key}' must be a number", f"{path}.{key}")
        return float(val)
    if not isinstance(val, kind):
        raise SchemaError(f"field '{key}' has wrong type", f"{path}.{key}")
    return val


def _parse_node(obj, path, seen):
    uuid = _require(obj, "uuid", path, str)
    if uuid in seen:
        raise ValidationError(f"duplicate uuid {uuid!r} at {path}")
    seen.add(uuid)
    cls = _require(obj, "class", path, str)
    if cls not in CLASSES:
        cls = UNK_CLASS
    name = _require(obj, "name", path, str)
    fr = _require(obj, "frame", path, dict)
    fpath = f"{path}.frame"
    frame = Frame(*(_require(fr, k, fpath, float) for k in ("x", "y", "w", "h")))

    color = obj.get("color")
    if color is not None:
        if not (isinstance(color, list) and len(color) == 4
                and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in color)):
            raise SchemaError("color must be [r, g, b, a] or null", f"{path}.color")
        color = RGBA(*(float(c) for c in color))

    label = obj.get("label")
    if label is not None and label not in LABELS:
        raise SchemaError(f"unknown label {label!r}", f"{path}.label")

    kids = _require(obj, "children", path, list)
    children = tuple(_parse_node(k, f"{path}.children[{i}]", seen) for i, k in enumerate(kids))
    return UINode(uuid, cls, name, frame, color, label, children)


def prototype_from_dict(doc) -> DesignPrototype:
    pid = _require(doc, "id", "$", str)
    canvas = _require(doc, "canvas", "$", dict)
    w = _require(canvas, "width", "$.canvas", float)
    h = _require(canvas, "height", "$.canvas", float)
    root = _parse_node(_require(doc, "root", "$", dict), "$.root", set())
    return DesignPrototype(pid, w, h, root)


def parse_prototype(data) -> DesignPrototype:
    """Parse UTF-8 JSON bytes (or str) into a validated prototype.

    Unknown class strings map to ``"unk"``; a null color stays absent.
    """
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("invalid UTF-8", exc.start) from exc
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise ParseError(exc.msg, offset) from exc
    return prototype_from_dict(doc)


def load_prototype(path) -> DesignPrototype:
    with open(path, "rb") as fh:
        return parse_prototype(fh.read())


# ----------------------------------------------------------- serialization

def _num(v):
    return float(f"{v:.6f}")


def _node_to_dict(node):
    d = {
        "uuid": node.uuid,
        "class": node.cls,
        "name": node.name,
        "frame": {"x": _num(node.frame.x), "y": _num(node.frame.y),
                  "w": _num(node.frame.w), "h": _num(node.frame.h)},
        "color": None if node.color is None else [_num(c) for c in node.color.as_tuple()],
        "children": [_node_to_dict(c) for c in node.children],
    }
    if node.label is not None:
        d["label"] = node.label
    return d


def prototype_to_dict(proto):
    return {
        "id": proto.id,
        "canvas": {"width": _num(proto.canvas_width), "height": _num(proto.canvas_height)},
        "root": _node_to_dict(proto.root),
    }


def _emit(o, out):
    if o is None:
        out.append("null")
    elif isinstance(o, bool):
        out.append("true" if o else "false")
    elif isinstance(o, float):
        out.append(f"{o:.6f}")
    elif isinstance(o, int):
        out.append(str(o))
    elif isinstance(o, str):
        out.append(json.dumps(o, ensure_ascii=False))
    elif isinstance(o, dict):
        out.append("{")
        for i, k in enumerate(sorted(o)):
            if i:
                out.append(",")
            out.append(json.dumps(k, ensure_ascii=False))
            out.append(":")
            _emit(o[k], out)
        out.append("}")
    else:
        out.append("[")
        for i, v in enumerate(o):
            if i:
                out.append(",")
            _emit(v, out)
        out.append("]")


def dumps_canonical(obj) -> str:
    """JSON with sorted keys, no whitespace and every float written with 6 decimals."""
    out = []
    _emit(obj, out)
    return "".join(out)


def serialize_prototype(proto: DesignPrototype) -> bytes:
    return dumps_canonical(prototype_to_dict(proto)).encode("utf-8")


def canonical(proto):
    """The prototype as it would read back after one serialize/parse trip."""
    return parse_prototype(serialize_prototype(proto))


# ---------------------------------------------------------------- traversal

def iter_nodes(node, depth=0):
    """Pre-order walk yielding ``(node, depth)``."""
    stack = [(node, depth)]
    while stack:
        n, d = stack.pop()
        yield n, d
        for child in reversed(n.children):
            stack.append((child, d + 1))


def iter_leaves(node):
    for n, _ in iter_nodes(node):
        if n.is_leaf and n.cls != "group":
            yield n


def _is_element(node):
    # empty group containers carry no pixels
    return node.is_leaf and node.cls != "group"


def extract_sequence(proto: DesignPrototype) -> ElementSequence:
    """Pre-order DFS over leaves.

    Explicit labels on leaves are carried through. Leaves under a ``#merge#``
    container without explicit labels get start-merge (first) / merge.
    """
    records = []

    def visit(node, in_merge):
        if node.name == MERGE_NAME and node.children:
            start = len(records)
            for child in node.children:
                visit(child, True)
            for i in range(start, len(records)):
                if records[i].label is None:
                    records[i] = replace(records[i], label="start-merge" if i == start else "merge")
            return
        if _is_element(node):
            records.append(ElementRecord(node.uuid, node.cls, node.name, node.frame, node.color, node.label))
            return
        for child in node.children:
            visit(child, in_merge)

    visit(proto.root, False)
    return ElementSequence(tuple(records), (proto.canvas_width, proto.canvas_height))


def leaf_map(proto):
    return {n.uuid: n for n in iter_leaves(proto.root)}


# ---------------------------------------------------------------- rewriting

def _merge_node(members, index):
    frame = Frame.bounding(m.frame for m in members)
    return UINode(uuid=f"merge-{index}-{members[0].uuid}", cls="group", name=MERGE_NAME,
                  frame=frame, color=None, label=None, children=tuple(members))


def _group_uuids(group):
    return list(getattr(group, "uuids", group))


def regroup_hierarchy(proto: DesignPrototype, groups) -> DesignPrototype:
    """Wrap each group's leaves in a ``#merge#`` container.

    The container is attached to the lowest common ancestor of the members and
    takes the place of the first LCA child that holds a member. Leaf order in
    DFS is preserved, which requires members to be contiguous in that order.
    """
    seq = extract_sequence(proto).uuids
    pos = {u: i for i, u in enumerate(seq)}
    plans = []
    for g in groups:
        uuids = _group_uuids(g)
        if not uuids:
            continue
        for u in uuids:
            if u not in pos:
                raise LookupFailure(f"group member {u!r} is not a leaf of {proto.id!r}")
        idx = sorted(pos[u] for u in uuids)
        if idx != list(range(idx[0], idx[0] + len(idx))):
            raise ContiguityError(f"group {uuids} is not contiguous in DFS order")
        plans.append(set(uuids))

    root = proto.root
    for k, members in enumerate(plans):
        # a lone leaf root has no parent to host the wrapper, so the wrapper becomes the root
        root = _merge_node([root], k) if _is_element(root) else _wrap(root, members, k)
    return DesignPrototype(proto.id, proto.canvas_width, proto.canvas_height, root)


def _members_under(node, members):
    return {n.uuid for n, _ in iter_nodes(node) if n.uuid in members}


def _detach(node, members):
    """Remove member leaves below ``node``.

    Returns the pruned node (None when nothing is left) and the removed leaves
    in DFS order. Containers emptied by the removal are dropped as well.
    """
    if node.uuid in members and _is_element(node):
        return None, [node]
    kept, removed = [], []
    for child in node.children:
        if not _members_under(child, members):
            kept.append(child)
            continue
        c, r = _detach(child, members)
        removed.extend(r)
        if c is not None:
            kept.append(c)
    if node.children and not kept:
        return None, removed
    return replace(node, children=tuple(kept)), removed


def _wrap(node, members, index):
    holders = [i for i, c in enumerate(node.children) if _members_under(c, members)]
    if len(holders) == 1 and not _is_element(node.children[holders[0]]):
        kids = list(node.children)
        kids[holders[0]] = _wrap(kids[holders[0]], members, index)
        return replace(node, children=tuple(kids))
    # node is the lowest common ancestor: members trail the first holder and
    # lead the last one, so the wrapper goes right after the first holder's remainder
    kids, leaves, slot = [], [], 0
    for i, child in enumerate(node.children):
        if i not in holders:
            kids.append(child)
            continue
        rest, removed = _detach(child, members)
        leaves.extend(removed)
        if rest is not None:
            kids.append(rest)
        if i == holders[0]:
            slot = len(kids)
    kids.insert(slot, _merge_node(leaves, index))
    return replace(node, children=tuple(kids))
