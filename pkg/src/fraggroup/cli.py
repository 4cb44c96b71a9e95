"""Command line entry point: ``fraggroup <command> ...``.

Every command prints its fully resolved configuration as one JSON line on
stderr (the same shape ``--config`` accepts) and writes machine-readable JSON
to stdout. Exit codes: 0 success, 2 configuration error, 3 I/O or data error,
4 training divergence, 5 checkpoint format error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import embedding, encoder, synthgen, trainer
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .embedding import MODALITIES
from .grouping import LABELS, decode_groups
from .prototype_io import PrototypeError, load_prototype, regroup_hierarchy, serialize_prototype

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_CHECKPOINT = 0, 2, 3, 4, 5

CONFIG_ERRORS = (synthgen.ConfigError, trainer.ConfigError, embedding.ConfigError, encoder.ConfigError)


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------- config

def load_config_file(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(doc) - {"gen", "train", "split", "threads"}
    if unknown:
        raise UsageError(f"unknown config sections {sorted(unknown)}")
    return doc


def resolve_gen(args, doc):
    d = dict(doc.get("gen", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    if getattr(args, "n", None) is not None:
        d["n_prototypes"] = args.n
    return synthgen.GenConfig.from_dict(d)


TRAIN_FLAGS = {"epochs": "epochs", "lr": "lr", "batch": "batch_size", "dropout": "dropout", "l2": "l2_lambda",
               "lr_drop_epoch": "lr_drop_epoch", "seed": "seed"}
ENCODER_FLAGS = {"layers": "layers", "heads": "heads", "ffn_dim": "ffn_dim"}


def resolve_train(args, doc):
    d = json.loads(json.dumps(doc.get("train", {})))
    enc = d.setdefault("encoder", {})
    emb = d.setdefault("embed", {})
    for flag, key in TRAIN_FLAGS.items():
        if getattr(args, flag, None) is not None:
            d[key] = getattr(args, flag)
    for flag, key in ENCODER_FLAGS.items():
        if getattr(args, flag, None) is not None:
            enc[key] = getattr(args, flag)
    if getattr(args, "d", None) is not None:
        enc["d"] = emb["d"] = args.d
    elif "d" in emb or "d" in enc:
        enc["d"] = emb["d"] = emb.get("d", enc.get("d"))
    mods = emb.setdefault("modalities", {})
    for m in MODALITIES:
        if getattr(args, f"no_{m}", False):
            mods[m] = False
    cfg = trainer.TrainConfig.from_dict(d)
    return cfg.validate()


def echo(resolved):
    print(json.dumps(resolved, sort_keys=True), file=sys.stderr, flush=True)


def emit(obj, args, pretty_fn=None):
    if getattr(args, "pretty", False) and pretty_fn is not None:
        print(pretty_fn(obj))
    else:
        print(json.dumps(obj))  # insertion order: labels stay in sequence order


def load_manifest(path):
    return synthgen.DatasetManifest.load(path)


def load_model(path):
    ckpt = load_checkpoint(path)
    try:
        model, cfg = trainer.model_from_checkpoint(ckpt)
    except CONFIG_ERRORS + (TypeError,) as exc:  # a readable file that does not describe a usable model
        raise CheckpointFormatError(str(exc)) from exc
    return model, cfg, ckpt


# ----------------------------------------------------------------- commands

def cmd_synth(args):
    doc = load_config_file(args.config)
    cfg = resolve_gen(args, doc)
    ratios = tuple(doc.get("split", (8, 1, 1)))
    echo({"gen": {**cfg.__dict__}, "split": list(ratios)})
    out = Path(args.out)
    manifest, _ = synthgen.generate_dataset(cfg, out, images=not args.no_images)
    manifest = synthgen.split_dataset(manifest, ratios)
    path = manifest.save(out / "manifest.json")
    emit({"manifest": str(path), "counts": manifest.counts}, args)
    return EXIT_OK


def cmd_train(args):
    doc = load_config_file(args.config)
    cfg = resolve_train(args, doc)
    echo({"train": cfg.to_dict()})
    manifest = load_manifest(args.manifest)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    with open(log_path, "w") as log:
        def write(entry):
            log.write(json.dumps(entry, sort_keys=True) + "\n")
            log.flush()
        result = trainer.train(manifest, cfg, write)
    save_checkpoint(result.checkpoint, args.out)
    emit({"checkpoint": str(args.out), "log": str(log_path), **result.checkpoint.meta}, args)
    return EXIT_OK


def predict_file(model, cfg, path):
    proto = load_prototype(path)
    ex = trainer.make_example(proto, cfg.embed, path)
    labels = model.predict(ex.feats) if len(ex.feats) else []
    groups = decode_groups(labels, ex.feats.uuids)
    return proto, {"labels": {u: LABELS[int(k)] for u, k in zip(ex.feats.uuids, labels)},
                   "groups": [list(g.uuids) for g in groups]}


def cmd_predict(args):
    model, cfg, _ = load_model(args.checkpoint)
    echo({"train": cfg.to_dict()})
    _, out = predict_file(model, cfg, args.prototype)
    emit(out, args)
    return EXIT_OK


def cmd_regroup(args):
    model, cfg, _ = load_model(args.checkpoint)
    echo({"train": cfg.to_dict()})
    proto, out = predict_file(model, cfg, args.prototype)
    grouped = regroup_hierarchy(proto, out["groups"])
    Path(args.out).write_bytes(serialize_prototype(grouped))
    emit({**out, "output": str(args.out)}, args)
    return EXIT_OK


def _load_split_parallel(manifest, split, embed_cfg, threads):
    if threads <= 1:
        return trainer.load_split(manifest, split, embed_cfg)
    trainer.check_disjoint(manifest)
    paths = manifest.paths(split)
    with ThreadPoolExecutor(threads) as pool:  # map keeps input order, so results stay deterministic
        protos = list(pool.map(load_prototype, paths))
        return list(pool.map(lambda pp: trainer.make_example(pp[0], embed_cfg, pp[1]), zip(protos, paths)))


def evaluation_report(model, examples):
    preds = trainer.predict_labels(model, examples)
    cls = trainer.evaluate_classification(model, examples, preds)
    grp = trainer.evaluate_grouping(examples, preds)
    return {"classification": cls.to_dict(), "grouping": grp.to_dict()}


def pretty_evaluation(rep):
    c = rep["classification"]
    lines = [f"{'':12}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>10}"]
    for lab, r in c["per_class"].items():
        lines.append(f"{lab:12}{r['precision']:10.3f}{r['recall']:10.3f}{r['f1']:10.3f}{r['support']:10d}")
    for name in ("macro", "weighted"):
        r = c[name]
        lines.append(f"{name:12}{r['precision']:10.3f}{r['recall']:10.3f}{r['f1']:10.3f}")
    lines.append("")
    lines.append(f"{'threshold':12}{'precision':>10}{'recall':>10}{'f1':>10}")
    for t, r in rep["grouping"]["thresholds"].items():
        lines.append(f"{t:12}{r['precision']:10.3f}{r['recall']:10.3f}{r['f1']:10.3f}")
    return "\n".join(lines)


def cmd_evaluate(args):
    doc = load_config_file(args.config)
    threads = args.threads if args.threads is not None else int(doc.get("threads", 1))
    model, cfg, _ = load_model(args.checkpoint)
    echo({"train": cfg.to_dict(), "threads": threads})
    manifest = load_manifest(args.manifest)
    examples = _load_split_parallel(manifest, args.split, cfg.embed, threads)
    if not examples:
        raise trainer.DataError(f"split {args.split!r} is empty")
    rep = evaluation_report(model, examples)
    if args.out:
        Path(args.out).write_text(json.dumps(rep, sort_keys=True) + "\n")
    emit(rep, args, pretty_evaluation)
    return EXIT_OK


def ablation_rows(manifest, cfg, split="test", log_fn=None):
    """Full model plus one variant per removed modality, all on the same seed."""
    variants = [("full", ())] + [(f"w/o {m}", (m,)) for m in MODALITIES]
    rows = []
    for name, removed in variants:
        vcfg = trainer.TrainConfig.from_dict(cfg.to_dict())
        vcfg.embed = vcfg.embed.without(*removed)
        result = trainer.train(manifest, vcfg.validate(), log_fn)
        examples = trainer.load_split(manifest, split, vcfg.embed)
        rep = trainer.evaluate_classification(result.model, examples)
        rows.append({"variant": name, "macro": rep.macro(), "weighted": rep.weighted()})
    return rows


def pretty_ablation(rows):
    lines = [f"{'variant':12}{'macro P':>9}{'macro R':>9}{'macro F1':>9}{'wtd P':>9}{'wtd R':>9}{'wtd F1':>9}"]
    for r in rows:
        m, w = r["macro"], r["weighted"]
        lines.append(f"{r['variant']:12}" + "".join(f"{v:9.3f}" for v in (
            m["precision"], m["recall"], m["f1"], w["precision"], w["recall"], w["f1"])))
    return "\n".join(lines)


def cmd_ablate(args):
    doc = load_config_file(args.config)
    cfg = resolve_train(args, doc)
    echo({"train": cfg.to_dict()})
    rows = ablation_rows(load_manifest(args.manifest), cfg, args.split)
    emit(rows, args, pretty_ablation)
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--lr-drop-epoch", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--ffn-dim", type=int)
    for m in MODALITIES:
        p.add_argument(f"--no-{m}", action="store_true", help=f"disable the {m} modality")


def build_parser():
    parser = argparse.ArgumentParser(prog="fraggroup", description="Fragmented UI layer grouping.")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default 1, deterministic)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int)
        p.add_argument("--pretty", action="store_true", help="human-readable tables instead of JSON")

    p = sub.add_parser("synth", help="generate a synthetic corpus and its split manifest")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, help="number of prototypes")
    p.add_argument("--no-images", action="store_true", help="skip image sidecars")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest")
    common(p)
    _train_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines epoch log (default: <out>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    for name, fn, help_ in (("predict", cmd_predict, "label one prototype and list its groups"),
                            ("regroup", cmd_regroup, "write a prototype with predicted groups merged")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--pretty", action="store_true")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("prototype")
        if name == "regroup":
            p.add_argument("--out", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("evaluate", help="classification and grouping reports on a split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train the full model and each single-modality removal")
    common(p)
    _train_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CheckpointFormatError as exc:
        print(f"error: checkpoint format: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except trainer.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, synthgen.SplitError) + CONFIG_ERRORS as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, trainer.DataError, PrototypeError, KeyError) as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
