"""Command-line interface: ``hypercodec {gen,train,eval,ablate,grad-check,inspect}``.

Exit codes: 0 ok, 2 configuration, 3 format, 4 numeric, 5 structural, 1 other.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, gradcheck, metrics
from .config import VARIANTS, SynthConfig, TrainConfig, load_config_file
from .data import Manifest, generate_synthetic
from .errors import ConfigError, HypercodecError, StructuralError
from .head import prototype_distance_table
from .trainer import evaluate, train

log = logging.getLogger("hypercodec")

CHECKPOINT_NAME = "checkpoint.phnx"
TRAIN_LOG_NAME = "train_log.jsonl"

_SKIP_FLAGS = {"variant", "counts"}


def _add_overrides(parser, cls, skip=()):
    """One optional flag per dataclass field, showing the built-in default."""
    for f in dataclasses.fields(cls):
        if f.name in _SKIP_FLAGS or f.name in skip:
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        flag = "--" + f.name.replace("_", "-")
        if f.name == "betas":
            parser.add_argument(flag, dest=f.name, type=float, nargs=2, default=None,
                                help=f"(default {default[0]:g} {default[1]:g})")
            continue
        kind = type(default)
        parser.add_argument(flag, dest=f.name, type=kind, default=None, help=f"(default {default:g})"
                            if kind is float else f"(default {default})")


def _overrides(args, cls) -> dict:
    names = {f.name for f in dataclasses.fields(cls)} - _SKIP_FLAGS
    if cls is SynthConfig:
        names.discard("seed")
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _load_configs(path):
    if path is None:
        return TrainConfig(), SynthConfig()
    return load_config_file(path)


def _emit_table(rows, columns, out=None):
    out = out or sys.stdout
    out.write("\t".join(columns) + "\n")
    for row in rows:
        out.write("\t".join(_fmt(row[c]) for c in columns) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if v != v else f"{v:.4f}"
    return str(v)


# -- subcommands ------------------------------------------------------------------------


def cmd_gen(args) -> int:
    _, synth = _load_configs(args.config)
    synth = synth.replace(**_overrides(args, SynthConfig))
    if args.seed is not None:
        synth = synth.replace(seed=args.seed)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"destination {out} is not empty (use --force to overwrite)")
    manifest = generate_synthetic(synth, out)
    rows = []
    for split in manifest.splits():
        entries = manifest.split(split)
        n_fake = sum(e.label == "fake" for e in entries)
        rows.append({"split": split, "n": len(entries), "fake": n_fake, "real": len(entries) - n_fake})
    _emit_table(rows, ["split", "n", "fake", "real"])
    return 0


def _train_config(args, base: TrainConfig, variant: str | None = None) -> TrainConfig:
    cfg = base.replace(**_overrides(args, TrainConfig))
    if variant is not None:
        cfg = cfg.replace(variant=variant)
    return cfg


def _fit_input_dim(cfg: TrainConfig, items) -> TrainConfig:
    dims = {it.features.shape[1] for it in items}
    if len(dims) != 1:
        raise StructuralError(f"inconsistent feature dimensions {sorted(dims)}")
    return cfg.replace(input_dim=dims.pop())


def _train_one(cfg: TrainConfig, manifest: Manifest, out_dir: Path):
    train_items = manifest.load_items("train")
    dev_items = manifest.load_items("dev")
    cfg = _fit_input_dim(cfg, train_items)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / TRAIN_LOG_NAME, "w") as fh:
        result = train(cfg, train_items, dev_items, log_file=fh)
    checkpoint.save(result, out_dir / CHECKPOINT_NAME)
    return result


def cmd_train(args) -> int:
    base, _ = _load_configs(args.config)
    cfg = _train_config(args, base, args.variant)
    manifest = Manifest.load(args.manifest)
    result = _train_one(cfg, manifest, Path(args.out))
    print(f"checkpoint\t{Path(args.out) / CHECKPOINT_NAME}")
    print(f"variant\t{cfg.variant}")
    print(f"n_evidence\t{result.model.config.effective_evidence}")
    print(f"threshold\t{result.threshold:.17g}")
    return 0


def write_scores(scores, path) -> None:
    with open(path, "w") as fh:
        for s in scores:
            fh.write(f"{s.uid}\t{'fake' if s.is_fake else 'real'}\t{s.p_fake:.17g}\n")


def read_scores(path):
    rows = []
    for line in Path(path).read_text().splitlines():
        uid, label, p = line.split("\t")
        rows.append((uid, label, float(p)))
    return rows


def cmd_eval(args) -> int:
    result = checkpoint.load(args.checkpoint)
    manifest = Manifest.load(args.manifest)
    items = manifest.load_items(args.split)
    dims = {it.features.shape[1] for it in items}
    want = result.model.config.input_dim
    if dims != {want}:
        raise StructuralError(f"checkpoint expects input_dim={want} but split {args.split!r} "
                              f"has feature dimension {sorted(dims)}")
    scores, summary = evaluate(result.model, items, result.threshold)
    print(f"threshold\t{result.threshold:.17g}")
    rows = [{"group": g, **vals} for g, vals in summary.items()]
    _emit_table(rows, ["group", "n", "accuracy", "macro_f1", "eer"])
    if args.scores_out:
        write_scores(scores, args.scores_out)
    return 0


def ablate(base: TrainConfig, manifest: Manifest, out_dir: Path, variants=VARIANTS) -> list[dict]:
    test_items = manifest.load_items("test")
    rows = []
    for variant in variants:
        cfg = base.replace(variant=variant)
        result = _train_one(cfg, manifest, out_dir / variant)
        scores, summary = evaluate(result.model, test_items, result.threshold)
        write_scores(scores, out_dir / variant / "test_scores.tsv")
        o = summary["overall"]
        rows.append({"variant": variant, "accuracy": o["accuracy"], "macro_f1": o["macro_f1"], "eer": o["eer"]})
    return rows


def cmd_ablate(args) -> int:
    base, _ = _load_configs(args.config)
    cfg = _train_config(args, base)
    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    rows = ablate(cfg, manifest, out)
    with open(out / "ablation.tsv", "w") as fh:
        _emit_table(rows, ["variant", "accuracy", "macro_f1", "eer"], fh)
    _emit_table(rows, ["variant", "accuracy", "macro_f1", "eer"])
    return 0


def cmd_grad_check(args) -> int:
    cfg = gradcheck.tiny_config(args.variant, args.seed)
    if args.no_regularizers:
        cfg = cfg.replace(cluster_weight=0.0, sep_weight=0.0)
    report = gradcheck.finite_difference_check(cfg, args.seed)
    print(report.format())
    return 0 if report.passed else 6


def geometry_report(result, manifest: Manifest | None = None, split: str = "test") -> dict:
    model = result.model
    if model.head is None:
        raise ConfigError("the meanpool variant has no prototypes to inspect")
    neg, pos = model.head.realized_prototypes()
    c = model.config.curvature if model.head.hyperbolic else None
    table = prototype_distance_table(neg, pos, c)
    report = {"K": int(pos.shape[0]), "pos_pos": table["pos_pos"], "pos_neg": table["pos_neg"]}
    if manifest is not None:
        items = [it for it in manifest.load_items(split) if it.is_fake]
        if not items or any(not it.group for it in items):
            raise ConfigError("mode purity needs group tags on every fake utterance")
        scores = model.score_all(items, detail=True)
        clusters = [int(np.argmax(s.responsibilities.mean(axis=0))) for s in scores]
        report["purity"] = metrics.mode_purity(clusters, [s.group for s in scores])
        report["assignments"] = list(zip([s.uid for s in scores], [s.group for s in scores], clusters))
        report["scores"] = scores
    return report


def cmd_inspect(args) -> int:
    result = checkpoint.load(args.checkpoint)
    manifest = Manifest.load(args.manifest) if args.manifest else None
    rep = geometry_report(result, manifest, args.split)
    K = rep["K"]
    print(f"K\t{K}")
    print("pair\tdistance")
    for i in range(K):
        for j in range(i + 1, K):
            print(f"p+{i}/p+{j}\t{rep['pos_pos'][i, j]:.6f}")
    for i in range(K):
        print(f"p+{i}/p-\t{rep['pos_neg'][i]:.6f}")
    if manifest is not None:
        print(f"mode_purity\t{rep['purity']:.4f}")
        if args.dump:
            with open(args.dump, "w") as fh:
                for s in rep["scores"]:
                    fh.write(json.dumps({"id": s.uid, "group": s.group, "p_fake": s.p_fake,
                                         "attention": s.attention.tolist(),
                                         "responsibilities": s.responsibilities.tolist()}) + "\n")
    return 0


# -- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypercodec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic feature dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    _add_overrides(p, SynthConfig, skip={"seed"})
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one variant and write checkpoint + log")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--variant", choices=VARIANTS, default=None, help="(default full)")
    p.add_argument("--out", required=True)
    _add_overrides(p, TrainConfig)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", help="(default test)")
    p.add_argument("--scores-out", help="write id<TAB>label<TAB>p_fake lines")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train every variant and tabulate test metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    _add_overrides(p, TrainConfig)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference gradient check on a tiny model")
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--no-regularizers", action="store_true", help="set cluster and sep weights to 0")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("inspect", help="prototype geometry and mode purity")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", default="test", help="(default test)")
    p.add_argument("--dump", help="write per-utterance attention/responsibilities as JSON lines")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except HypercodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
