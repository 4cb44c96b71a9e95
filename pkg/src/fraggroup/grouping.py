"""Label decoding and edit-distance-matched grouping metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

START, MERGE, NON = "start-merge", "merge", "non-merge"
LABELS = (START, MERGE, NON)
LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}
THRESHOLDS = (0, 1, 2, 3, 4)


class GroupingError(ValueError):
    pass


@dataclass(frozen=True)
class MergedGroup:
    uuids: tuple
    source: str = "predicted"

    def __post_init__(self):
        if not self.uuids:
            raise GroupingError("a merged group cannot be empty")
        object.__setattr__(self, "uuids", tuple(self.uuids))

    def __len__(self):
        return len(self.uuids)


def _as_label(lab):
    if isinstance(lab, str):
        if lab not in LABEL_INDEX:
            raise GroupingError(f"unknown label {lab!r}")
        return lab
    return LABELS[int(lab)]


def decode_groups(labels, uuids, source="predicted"):
    """Turn a per-element label sequence into merged groups.

    A start-merge opens a group and closes any open one; merge extends the
    open group; non-merge closes it and is dropped. A merge with no open
    group starts a new group at that element.
    """
    labels = [_as_label(x) for x in labels]
    uuids = list(uuids)
    if len(labels) != len(uuids):
        raise GroupingError(f"{len(labels)} labels for {len(uuids)} elements")
    groups, current = [], None
    for lab, u in zip(labels, uuids):
        if lab == START or (lab == MERGE and current is None):
            if current:
                groups.append(current)
            current = [u]
        elif lab == MERGE:
            current.append(u)
        else:
            if current:
                groups.append(current)
            current = None
    if current:
        groups.append(current)
    return [MergedGroup(tuple(g), source) for g in groups]


def encode_labels(groups, uuids):
    """Inverse of :func:`decode_groups` for contiguous, disjoint groups."""
    uuids = list(uuids)
    pos = {u: i for i, u in enumerate(uuids)}
    labels = [NON] * len(uuids)
    taken = set()
    for g in groups:
        members = list(getattr(g, "uuids", g))
        try:
            idx = [pos[u] for u in members]
        except KeyError as exc:
            raise GroupingError(f"group member {exc.args[0]!r} not in sequence") from None
        if idx != list(range(idx[0], idx[0] + len(idx))):
            raise GroupingError(f"group {members} is not contiguous in sequence order")
        if taken.intersection(idx):
            raise GroupingError(f"group {members} overlaps another group")
        taken.update(idx)
        labels[idx[0]] = START
        for i in idx[1:]:
            labels[i] = MERGE
    return labels


def edit_distance(a, b):
    """Levenshtein distance with unit costs over arbitrary hashable symbols."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def hungarian(cost):
    """Minimum-cost assignment on a rectangular cost matrix.

    Returns ``(rows, cols)`` index arrays of the matched pairs; every row is
    matched when rows <= cols and vice versa. Shortest augmenting paths with
    row/column potentials, O(n^2 m).
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise GroupingError("cost matrix must be 2-D")
    transposed = cost.shape[0] > cost.shape[1]
    if transposed:
        cost = cost.T
    n, m = cost.shape
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)

    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=int)  # owner[j] = 1-based row assigned to column j, 0 = free
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    cols = np.nonzero(owner[1:])[0]
    rows = owner[1:][cols] - 1
    order = np.argsort(rows)
    rows, cols = rows[order], cols[order]
    if transposed:
        rows, cols = cols, rows
        order = np.argsort(rows)
        rows, cols = rows[order], cols[order]
    return rows, cols


@dataclass
class Matching:
    pairs: list  # (gt index, pred index, distance)
    unmatched_gt: list
    unmatched_pred: list

    @property
    def total_cost(self):
        return sum(d for _, _, d in self.pairs)


def match_groups(gt, pred):
    """Optimal one-to-one matching of groups under edit-distance cost."""
    gt, pred = list(gt), list(pred)
    cost = np.array([[edit_distance(g.uuids, p.uuids) for p in pred] for g in gt], dtype=float).reshape(len(gt), len(pred))
    rows, cols = hungarian(cost) if gt and pred else (np.zeros(0, int), np.zeros(0, int))
    pairs = [(int(r), int(c), int(cost[r, c])) for r, c in zip(rows, cols)]
    return Matching(
        pairs=pairs,
        unmatched_gt=sorted(set(range(len(gt))) - {r for r, _, _ in pairs}),
        unmatched_pred=sorted(set(range(len(pred))) - {c for _, c, _ in pairs}),
    )


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other):
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self):
        if self.tp + self.fp == 0:
            return 1.0 if self.tp + self.fn == 0 else 0.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self):
        if self.tp + self.fn == 0:
            return 1.0 if self.tp + self.fp == 0 else 0.0
        return self.tp / (self.tp + self.fn)

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass
class GroupingReport:
    thresholds: dict = field(default_factory=lambda: {t: Counts() for t in THRESHOLDS})
    strata: dict = field(default_factory=dict)

    def __add__(self, other):
        merged = GroupingReport({t: self.thresholds.get(t, Counts()) + other.thresholds.get(t, Counts())
                                 for t in sorted(set(self.thresholds) | set(other.thresholds))})
        for name in sorted(set(self.strata) | set(other.strata)):
            a, b = self.strata.get(name), other.strata.get(name)
            merged.strata[name] = b if a is None else a if b is None else a + b
        return merged

    def __getitem__(self, t):
        return self.thresholds[t]

    def to_dict(self):
        out = {"thresholds": {str(t): c.to_dict() for t, c in sorted(self.thresholds.items())}}
        if self.strata:
            out["strata"] = {k: v.to_dict()["thresholds"] for k, v in self.strata.items()}
        return out


def grouping_metrics(gt, pred, thresholds=THRESHOLDS):
    """TP/FP/FN per edit-distance threshold for one prototype.

    The matching is computed once. A matched pair within the threshold is a
    TP; beyond it, the prediction is an FP and the ground truth an FN.
    """
    gt, pred = list(gt), list(pred)
    m = match_groups(gt, pred)
    report = GroupingReport({})
    for t in thresholds:
        tp = sum(1 for _, _, d in m.pairs if d <= t)
        over = len(m.pairs) - tp
        report.thresholds[t] = Counts(tp, over + len(m.unmatched_pred), over + len(m.unmatched_gt))
    return report


def stratified_metrics(gt, pred, flags, thresholds=(1,)):
    """Grouping metrics restricted to ground-truth groups touching a flagged element.

    ``flags`` maps uuid -> bool. Predictions take part when they contain a
    flagged element or share an element with a retained ground-truth group.
    """
    gt_s = [g for g in gt if any(flags.get(u, False) for u in g.uuids)]
    covered = {u for g in gt_s for u in g.uuids}
    pred_s = [p for p in pred if any(flags.get(u, False) or u in covered for u in p.uuids)]
    return grouping_metrics(gt_s, pred_s, thresholds)
