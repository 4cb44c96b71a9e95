import numpy as np
import pytest

from fraggroup.checkpoint import from_bytes, to_bytes
from fraggroup.embedding import EmbedConfig
from fraggroup.encoder import EncoderConfig, Model
from fraggroup.synthgen import DatasetManifest, GenConfig, generate_dataset, split_dataset
from fraggroup.trainer import (
    ClassificationReport,
    ConfigError,
    DataError,
    TrainConfig,
    TrainingDiverged,
    check_disjoint,
    compute_class_weights,
    evaluate_classification,
    evaluate_grouping,
    load_split,
    model_from_checkpoint,
    predict_labels,
    train,
    train_examples,
)


# ------------------------------------------------------------- class weights

def test_equal_counts_give_unit_weights():
    np.testing.assert_allclose(compute_class_weights([7, 7, 7]), 1.0)


def test_large_count_weights():
    np.testing.assert_allclose(compute_class_weights([15247, 23851, 287513]), [7.141, 4.565, 0.3787], atol=1e-3)


def test_weights_are_inversely_proportional():
    w = compute_class_weights([10, 90, 50])
    assert w[0] / w[1] == pytest.approx(9.0)


def test_zero_count_is_data_error():
    with pytest.raises(DataError):
        compute_class_weights([3, 0, 4])


# ------------------------------------------------------------------- reports

def test_report_from_hand_matrix():
    rep = ClassificationReport(np.array([[5, 0, 0], [0, 0, 5], [0, 0, 10]]))
    assert rep.precision[0] == 1.0 and rep.recall[0] == 1.0
    assert rep.recall[1] == 0.0 and rep.precision[1] == 0.0
    assert rep.precision[2] == pytest.approx(10 / 15)
    # f1: S = 1, M = 0, N = 2 * (2/3) / (5/3) = 0.8
    assert rep.macro_f1 == pytest.approx((1.0 + 0.0 + 0.8) / 3)
    assert rep.weighted_f1 == pytest.approx((5 * 1.0 + 5 * 0.0 + 10 * 0.8) / 20)
    np.testing.assert_array_equal(rep.support, [5, 5, 10])


def test_all_one_class_on_balanced_nine():
    truth = [0, 0, 0, 1, 1, 1, 2, 2, 2]
    rep = ClassificationReport.from_predictions(truth, [2] * 9)
    # only non-merge scores: precision 1/3, recall 1, f1 = 1/2
    assert rep.macro_f1 == pytest.approx(1 / 6)
    assert rep.weighted_f1 == pytest.approx(rep.macro_f1)  # equal supports


def test_perfect_predictions_report():
    truth = [0, 1, 1, 2, 2, 2]
    rep = ClassificationReport.from_predictions(truth, truth)
    assert rep.macro() == {"precision": 1.0, "recall": 1.0, "f1": 1.0}
    d = rep.to_dict()
    assert set(d) == {"per_class", "macro", "weighted", "confusion"}
    assert d["per_class"]["merge"]["support"] == 2


# -------------------------------------------------------------------- config

def test_lr_drop_is_exactly_tenfold():
    cfg = TrainConfig(lr=3e-3, epochs=10, lr_drop_epoch=4)
    assert cfg.lr_at(4) == 3e-3 and cfg.lr_at(5) == 3e-3 / 10


@pytest.mark.parametrize("kw", [dict(lr=0.0), dict(lr=-1.0), dict(epochs=5, lr_drop_epoch=6), dict(dropout=1.0),
                                dict(batch_size=0), dict(epochs=0)])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw).validate()


def test_config_dict_roundtrip():
    cfg = TrainConfig(epochs=3, lr_drop_epoch=2, embed=EmbedConfig(d=16).without("image"),
                      encoder=EncoderConfig(d=16, heads=2))
    back = TrainConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epoch": 3})


def test_long_schedule():
    cfg = TrainConfig.long_schedule()
    assert (cfg.epochs, cfg.lr_drop_epoch, cfg.lr) == (300, 200, 1e-4)


# ------------------------------------------------------------------ training

def tiny_config(**kw):
    base = dict(epochs=2, lr_drop_epoch=1, batch_size=4, encoder=EncoderConfig(d=16, heads=2, ffn_dim=32),
                embed=EmbedConfig(d=16, text_vocab=128))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    m, _ = generate_dataset(GenConfig(n_prototypes=10, seed=1, elements_per_prototype=(10, 24)), out)
    m = split_dataset(m)
    m.save(out / "manifest.json")
    return DatasetManifest.load(out / "manifest.json")


def test_training_is_deterministic(corpus):
    a = train(corpus, tiny_config())
    b = train(corpus, tiny_config())
    assert to_bytes(a.checkpoint) == to_bytes(b.checkpoint)
    assert [e["train_loss"] for e in a.log] == [e["train_loss"] for e in b.log]
    assert a.log[1]["lr"] == pytest.approx(tiny_config().lr / 10)
    c = train(corpus, tiny_config(seed=5))
    assert to_bytes(c.checkpoint) != to_bytes(a.checkpoint)


def test_checkpoint_predictions_are_bit_identical(corpus):
    res = train(corpus, tiny_config(epochs=1, lr_drop_epoch=1))
    model, cfg = model_from_checkpoint(from_bytes(to_bytes(res.checkpoint)))
    test = load_split(corpus, "test", cfg.embed)
    for ex in test:
        a = res.model.predict_proba([ex.feats])
        b = model.predict_proba([ex.feats])
        assert a.tobytes() == b.tobytes()
    meta = res.checkpoint.meta
    assert meta["epochs_run"] == 1 and meta["seed"] == 0 and len(meta["class_weights"]) == 3


def test_disabled_modality_gets_no_gradient(corpus):
    cfg = tiny_config(epochs=1, l2_lambda=0.0, embed=EmbedConfig(d=16, text_vocab=128).without("image"))
    res = train(corpus, cfg)
    init = Model(cfg.embed, cfg.encoder, seed=cfg.seed).params
    for name in ("image.fc.weight", "image.conv1.weight"):
        assert np.array_equal(res.checkpoint.params[name], init[name].data)
    assert not np.array_equal(res.checkpoint.params["text.table"], init["text.table"].data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_epoch(corpus):
    with pytest.raises(TrainingDiverged) as err:
        train(corpus, tiny_config(lr=1e38, l2_lambda=0.0))
    assert err.value.epoch >= 1


def test_empty_train_split(corpus):
    with pytest.raises(DataError):
        train_examples([], [], tiny_config())


def test_overlapping_splits_rejected(corpus):
    bad = DatasetManifest(0, {"train": corpus.splits["train"], "test": corpus.splits["train"][:1]}, {}, corpus.root)
    with pytest.raises(DataError):
        check_disjoint(bad)


def test_ground_truth_predictions_give_perfect_grouping(corpus):
    examples = load_split(corpus, "train", tiny_config().embed)
    rep = evaluate_grouping(examples, [ex.feats.labels for ex in examples])
    for t in range(5):
        assert rep[t].f1 == 1.0
    assert set(rep.strata) == {"tiny", "overlapping"}


def test_evaluation_reuses_given_predictions(corpus):
    res = train(corpus, tiny_config(epochs=1))
    examples = load_split(corpus, "val", tiny_config().embed)
    preds = predict_labels(res.model, examples)
    a = evaluate_classification(res.model, examples)
    b = evaluate_classification(res.model, examples, preds)
    np.testing.assert_array_equal(a.confusion, b.confusion)
    with pytest.raises(DataError):
        evaluate_classification(res.model, [])
