"""Acceptance suite: one test per criterion, each recording a pass/fail line.

The desk-scale experiments (criteria 3 and 8) train on a 500-prototype
synthetic corpus split 400/50/50 and take most of the suite's runtime.
"""
import itertools
import time

import numpy as np
import pytest

from fraggroup import tensor as T
from fraggroup.checkpoint import load_checkpoint, save_checkpoint, to_bytes
from fraggroup.grouping import LABELS, MergedGroup, decode_groups, edit_distance, encode_labels, hungarian
from fraggroup.prototype_io import parse_prototype, prototype_to_dict, serialize_prototype
from fraggroup.synthgen import GenConfig, generate_dataset, split_dataset
from fraggroup.trainer import (
    ClassificationReport,
    TrainConfig,
    compute_class_weights,
    evaluate_classification,
    evaluate_grouping,
    load_split,
    model_from_checkpoint,
    predict_labels,
    train,
    train_examples,
)
from gradcheck import numeric_grad, rel_error
from test_encoder import model_gradcheck
from test_grouping import exhaustive_min, lev, reference_decode

GROUPING_REPORTS = []  # every grouping report produced by the suite, for criterion 6


# ------------------------------------------------------------------ fixtures

@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    manifest, files = generate_dataset(GenConfig(n_prototypes=500, seed=0), out)
    return split_dataset(manifest, (8, 1, 1)), files


class DeskRuns:
    """Desk-scale training runs on the fixed corpus, cached by (seed, variant)."""

    def __init__(self, manifest):
        self.manifest = manifest
        self.cache = {}

    def get(self, seed, no_image=False):
        key = (seed, no_image)
        if key not in self.cache:
            cfg = TrainConfig(seed=seed)
            if no_image:
                cfg.embed = cfg.embed.without("image")
            start = time.perf_counter()
            result = train(self.manifest, cfg)
            test = load_split(self.manifest, "test", cfg.embed)
            preds = predict_labels(result.model, test)
            cls = evaluate_classification(result.model, test, preds)
            grp = evaluate_grouping(test, preds)
            GROUPING_REPORTS.append(grp)
            self.cache[key] = dict(result=result, test=test, preds=preds, cls=cls, grp=grp,
                                   seconds=time.perf_counter() - start)
        return self.cache[key]


@pytest.fixture(scope="session")
def desk_runs(desk_corpus):
    return DeskRuns(desk_corpus[0])


# ---------------------------------------------------------------- criterion 1

def _leaf(rng, *shape, low=-1.0, high=1.0):
    return T.Tensor(rng.uniform(low, high, shape), requires_grad=True, dtype=np.float64)


def _primitive_error(build, inputs):
    proj = np.random.default_rng(7).normal(size=build(*inputs).shape)

    def scalar():
        return float((build(*inputs).data * proj).sum())

    for t in inputs:
        t.grad = None
    T.tsum(build(*inputs) * T.Tensor(proj, dtype=np.float64)).backward()
    return max(rel_error(t.grad, numeric_grad(scalar, t.data)) for t in inputs)


def primitive_cases():
    rng = np.random.default_rng(2024)
    L = lambda *s, **kw: _leaf(rng, *s, **kw)  # noqa: E731
    targets = np.array([0, 2, 1, 2, 2])
    idx = np.array([[3, 2, 2], [4, 1, 1]])
    relu_in = T.Tensor(np.array([-1.0, -0.3, 0.2, 0.9, 2.0]), requires_grad=True, dtype=np.float64)
    return {
        "add": (lambda a, b: a + b, [L(3, 4), L(4)]),
        "sub": (lambda a, b: a - b, [L(2, 3), L(2, 1)]),
        "mul": (lambda a, b: a * b, [L(2, 3, 4), L(1, 3, 1)]),
        "exp": (T.exp, [L(5)]),
        "log": (T.log, [L(5, low=0.5, high=2.0)]),
        "relu": (T.relu, [relu_in]),
        "reshape": (lambda a: a.reshape(6, 2), [L(3, 4)]),
        "transpose": (lambda a: a.transpose(2, 0, 1), [L(2, 3, 4)]),
        "getitem": (lambda a: a[1:, ::2], [L(3, 4)]),
        "concat": (lambda a, b: T.concat([a, b], axis=1), [L(2, 3), L(2, 2)]),
        "sum": (lambda a: a.sum(axis=1), [L(3, 4)]),
        "mean": (lambda a: a.mean(axis=(0, 2), keepdims=True), [L(2, 3, 4)]),
        "matmul": (lambda a, b: a @ b, [L(2, 3, 4), L(4, 5)]),
        "linear": (lambda x, w, b: T.linear(x, w, b), [L(5, 3), L(3, 4), L(4)]),
        "softmax": (lambda a: T.softmax(a, axis=-1), [L(3, 5)]),
        "log_softmax": (lambda a: T.log_softmax(a, axis=0), [L(4, 2)]),
        "layer_norm": (lambda x, g, b: T.layer_norm(x, g, b), [L(4, 6), L(6, low=0.5, high=1.5), L(6)]),
        "conv2d": (lambda x, w, b: T.conv2d(x, w, b, stride=2), [L(2, 3, 8, 8), L(4, 3, 3, 3), L(4)]),
        "global_avg_pool": (T.global_avg_pool, [L(2, 3, 4, 4)]),
        "embedding_lookup": (lambda t: T.embedding_lookup(t, idx), [L(5, 3)]),
        "dropout": (lambda a: T.dropout(a, 0.3, True, np.random.default_rng(3)), [L(4, 5)]),
        "cross_entropy": (lambda z: T.cross_entropy(z, targets, np.array([3.0, 2.0, 0.5])), [L(5, 3, low=-3, high=3)]),
    }


def test_criterion_1_gradient_correctness(criterion):
    start = time.perf_counter()
    errors = {name: _primitive_error(build, inputs) for name, (build, inputs) in primitive_cases().items()}
    errors["full model (d=16, N=2, heads=2, n=8)"] = model_gradcheck(n=8)
    seconds = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-5 and seconds < 60
    criterion(1, ok, f"max rel error {errors[worst]:.2e} ({worst}) over {len(errors)} checks, {seconds:.1f}s")
    assert errors[worst] < 1e-5, errors
    assert seconds < 60


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_overfit_sanity(criterion, tmp_path):
    manifest, _ = generate_dataset(GenConfig(n_prototypes=32, seed=11), tmp_path)
    # desk architecture and schedule with regularisation off: this checks that the
    # loop can memorise, which dropout at p=0.2 deliberately prevents in 240 steps
    cfg = TrainConfig(seed=0, dropout=0.0, l2_lambda=0.0)
    start = time.perf_counter()
    examples = load_split(manifest, "all", cfg.embed)
    result = train_examples(examples, [], cfg)
    preds = predict_labels(result.model, examples)
    rep = evaluate_classification(result.model, examples, preds)
    GROUPING_REPORTS.append(evaluate_grouping(examples, preds))
    seconds = time.perf_counter() - start
    ok = rep.weighted_f1 >= 0.95 and seconds < 600 and cfg.epochs <= 60
    criterion(2, ok, f"train weighted F1 {rep.weighted_f1:.4f} after {cfg.epochs} epochs, {seconds:.0f}s")
    assert rep.weighted_f1 >= 0.95
    assert seconds < 600


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_desk_generalization(criterion, desk_corpus, desk_runs):
    manifest = desk_corpus[0]
    sizes = [len(manifest.splits[s]) for s in ("train", "val", "test")]
    run = desk_runs.get(0)
    f1_4 = run["grp"][4].f1
    macro = run["cls"].macro_f1
    ok = sizes == [400, 50, 50] and f1_4 >= 0.70 and macro >= 0.75 and run["seconds"] < 3600
    criterion(3, ok, f"splits {sizes}; grouping F1@4 {f1_4:.4f} (>= 0.70), macro-F1 {macro:.4f} (>= 0.75), "
                     f"{run['seconds'] / 60:.1f} min")
    assert sizes == [400, 50, 50]
    assert f1_4 >= 0.70
    assert macro >= 0.75
    assert run["seconds"] < 3600


# ---------------------------------------------------------------- criterion 4

def random_grouping(rng):
    n = int(rng.integers(0, 31))
    uuids = [f"u{i}" for i in range(n)]
    groups, i = [], 0
    while i < n:
        if rng.random() < 0.4:
            size = int(rng.integers(1, min(6, n - i) + 1))
            groups.append(tuple(uuids[i:i + size]))
            i += size
        else:
            i += 1
    return uuids, groups


def test_criterion_4_decoder_oracle(criterion):
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(1000):
        uuids, groups = random_grouping(rng)
        labels = encode_labels([MergedGroup(g) for g in groups], uuids)
        bad += [g.uuids for g in decode_groups(labels, uuids)] != groups
    orphan_bad, cases = 0, 0
    for n in range(0, 8):
        for labels in itertools.product(LABELS, repeat=n):
            cases += 1
            got = [[int(u) for u in g.uuids] for g in decode_groups(labels, [str(i) for i in range(n)])]
            orphan_bad += got != reference_decode(labels)
    ok = bad == 0 and orphan_bad == 0
    criterion(4, ok, f"roundtrip mismatches {bad}/1000; reference-decoder mismatches {orphan_bad}/{cases}")
    assert bad == 0 and orphan_bad == 0


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_matching_oracle(criterion):
    rng = np.random.default_rng(5)
    h_bad = 0
    for _ in range(500):
        n, m = rng.integers(1, 7, 2)
        cost = rng.integers(0, 20, (n, m)).astype(float)
        rows, cols = hungarian(cost)
        h_bad += not (len(set(rows)) == len(rows) == min(n, m) and cost[rows, cols].sum() == exhaustive_min(cost))
    e_bad = 0
    for _ in range(1000):
        a = tuple(rng.integers(0, 4, rng.integers(0, 11)))
        b = tuple(rng.integers(0, 4, rng.integers(0, 11)))
        e_bad += edit_distance(a, b) != lev(a, b)
    ok = h_bad == 0 and e_bad == 0
    criterion(5, ok, f"hungarian mismatches {h_bad}/500; edit-distance mismatches {e_bad}/1000")
    assert ok


# ---------------------------------------------------------------- criterion 7

def test_criterion_7_generator_fidelity(criterion, desk_corpus):
    manifest, files = desk_corpus
    c = {lab: sum(manifest.counts[s][lab] for s in manifest.counts) for lab in LABELS}
    ratio = (c["start-merge"] + c["merge"]) / c["non-merge"]
    splits = [set(manifest.splits[s]) for s in ("train", "val", "test")]
    union = set().union(*splits)
    disjoint = all(not (a & b) for a, b in itertools.combinations(splits, 2))
    exhaustive = union == {f.name for f in files}
    in_band = abs(ratio - 1 / 8) <= 0.2 * (1 / 8)
    ok = in_band and disjoint and exhaustive
    criterion(7, ok, f"merge:non-merge = {ratio:.4f} (1:8 +- 20% is [0.1000, 0.1500]); "
                     f"disjoint={disjoint}, exhaustive={exhaustive}")
    assert ok


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_ablation_directionality(criterion, desk_runs):
    rows = []
    for seed in (0, 1, 2):
        full = desk_runs.get(seed).get("cls").macro_f1
        no_image = desk_runs.get(seed, no_image=True).get("cls").macro_f1
        rows.append((seed, full, no_image))
    wins = sum(full >= no_image for _, full, no_image in rows)
    detail = "; ".join(f"seed {s}: full {f:.4f} vs w/o image {n:.4f}" for s, f, n in rows)
    criterion(8, wins >= 2, f"full >= w/o image in {wins}/3 seeds ({detail})")
    assert wins >= 2


# ---------------------------------------------------------------- criterion 9

def test_criterion_9_serialization(criterion, desk_corpus, desk_runs, tmp_path):
    manifest, files = desk_corpus
    run = desk_runs.get(0)
    ckpt = run["result"].checkpoint
    path = tmp_path / "desk.egfe"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    ckpt_exact = to_bytes(loaded) == path.read_bytes() and all(
        loaded.params[k].tobytes() == v.tobytes() for k, v in ckpt.params.items())
    model, _ = model_from_checkpoint(loaded)
    preds_exact = all(
        run["result"].model.predict_proba([ex.feats]).tobytes() == model.predict_proba([ex.feats]).tobytes()
        for ex in run["test"])
    proto_exact = True
    for f in files:
        proto = parse_prototype(f.read_bytes())
        again = parse_prototype(serialize_prototype(proto))
        proto_exact &= again == proto and prototype_to_dict(again) == prototype_to_dict(proto)
    ok = ckpt_exact and preds_exact and proto_exact
    criterion(9, ok, f"checkpoint bit-exact={ckpt_exact}, loaded predictions bit-identical={preds_exact}, "
                     f"{len(files)} prototypes roundtrip data-equal={proto_exact}")
    assert ok


# --------------------------------------------------------------- criterion 10

def test_criterion_10_class_weights(criterion):
    w = compute_class_weights([15247, 23851, 287513])
    expected = np.array([7.141, 4.565, 0.3787])
    err = float(np.abs(w - expected).max())
    criterion(10, err <= 1e-3, f"weights {np.round(w, 4).tolist()}, max deviation {err:.2e}")
    assert err <= 1e-3


# ---------------------------------------------------------------- criterion 6
# runs last so it sees every report the experiments above produced

def _monotone(rep):
    prev = None
    for t in sorted(rep.thresholds):
        c = rep[t]
        if prev is not None and (c.tp < prev.tp or c.precision < prev.precision or c.recall < prev.recall):
            return False
        prev = c
    return True


def test_criterion_6_metric_monotonicity(criterion):
    rng = np.random.default_rng(6)
    from fraggroup.grouping import grouping_metrics
    reports = list(GROUPING_REPORTS)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        uuids = [str(i) for i in range(n)]
        reports.append(grouping_metrics(decode_groups(rng.choice(LABELS, n), uuids, "ground-truth"),
                                        decode_groups(rng.choice(LABELS, n), uuids)))
    bad = sum(not _monotone(r) for r in reports)
    criterion(6, bad == 0, f"{len(GROUPING_REPORTS)} experiment corpora + 200 random corpora, "
                           f"{bad} non-monotone")
    assert bad == 0


def test_classification_report_matches_predictions(desk_runs):
    run = desk_runs.get(0)
    truth = np.concatenate([ex.feats.labels for ex in run["test"]])
    again = ClassificationReport.from_predictions(truth, np.concatenate(run["preds"]))
    np.testing.assert_array_equal(again.confusion, run["cls"].confusion)
