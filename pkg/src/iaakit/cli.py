"""Command-line pipeline: synth -> iaa -> stats/split/table -> train -> eval.

Each subcommand reads the previous stage's files and writes its own, so any
stage can be rerun in isolation. All outputs are deterministic for a fixed
seed: rerunning a command overwrites its outputs bit-identically. CSV
floats are rounded to 6 decimals for readability; JSON keeps full
precision.

Environment overrides: IAAKIT_OUT replaces a missing --out, IAAKIT_THREADS
replaces a missing --threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .agreement import (
    AgreementRecord,
    aggregate_hausdorff,
    aggregate_iaa,
    pairwise_agreements,
)
from .dataset import (
    FactorTable,
    ImageRecord,
    factor_table,
    load_manifest,
    resolve_path,
    stratified_split,
)
from .learn import (
    FoldData,
    Network,
    NetworkConfig,
    TrainConfig,
    evaluate,
    synth_generate,
    train,
    write_synth_dataset,
)
from .masks import CanonicalGrid, load_mask, resize_nearest
from .stats import Sample, UndefinedEffectError, cohens_d, fosd_test, mann_whitney

FLOAT_FMT = "{:.6f}"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return FLOAT_FMT.format(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("IAAKIT_OUT")
    if not out:
        raise SystemExit("no output directory: pass --out or set IAAKIT_OUT")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        return args.threads
    return int(os.environ.get("IAAKIT_THREADS", "1"))


def _load_grid_masks(record: ImageRecord, manifest_path: str, grid: CanonicalGrid):
    return [
        resize_nearest(load_mask(resolve_path(manifest_path, m.mask_path)), grid)
        for m in record.masks
    ]


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    out = _out_dir(args)
    ds = synth_generate(args.n, seed=args.seed, side=args.side)
    manifest = write_synth_dataset(ds, out)
    n_masks = sum(len(im.masks) for im in ds.images)
    print(f"wrote {len(ds.images)} images, {n_masks} masks, manifest {manifest}")
    return 0


def cmd_iaa(args) -> int:
    out = _out_dir(args)
    records = load_manifest(args.manifest)
    grid = CanonicalGrid(args.grid)
    pair_rows: list[list] = []
    iaa_payload: dict[str, dict] = {}
    skipped = 0
    for rec in records:
        if rec.mask_count < 2:
            warnings.warn(f"image {rec.image_id}: fewer than 2 masks, skipped")
            skipped += 1
            continue
        masks = _load_grid_masks(rec, args.manifest, grid)
        pairs = pairwise_agreements(masks)
        for p in pairs:
            pair_rows.append(
                [
                    rec.image_id,
                    p.mask_index_a,
                    p.mask_index_b,
                    p.dice,
                    p.hausdorff,
                    "" if p.hausdorff is not None else "hausdorff-undefined",
                ]
            )
        score = aggregate_iaa(pairs, image_id=rec.image_id)
        entry = {"iaa": score.value, "pair_count": score.pair_count}
        try:
            mean_hd, excluded = aggregate_hausdorff(pairs)
            entry["mean_hausdorff"] = mean_hd
            entry["hausdorff_pairs_excluded"] = excluded
        except Exception:
            entry["mean_hausdorff"] = None
            entry["hausdorff_pairs_excluded"] = score.pair_count
        iaa_payload[rec.image_id] = entry
    if not iaa_payload:
        raise SystemExit("no image in the manifest has 2 or more masks")
    _write_csv(
        out / "pairs.csv",
        ["image_id", "idx_a", "idx_b", "dice", "hausdorff", "flags"],
        pair_rows,
    )
    _write_json(out / "iaa.json", iaa_payload)
    values = np.array([e["iaa"] for e in iaa_payload.values()])
    quantiles = np.quantile(values, [0.05, 0.25, 0.5, 0.75, 0.95])
    print(
        f"{len(iaa_payload)} images, {len(pair_rows)} pairs, {skipped} skipped; "
        "IAA quantiles (5/25/50/75/95%): "
        + " ".join(FLOAT_FMT.format(q) for q in quantiles)
    )
    print(
        f"images with IAA > 0.90: {int((values > 0.90).sum())}, "
        f"> 0.95: {int((values > 0.95).sum())}, "
        f"== 0: {int((values == 0.0).sum())}"
    )
    return 0


def _load_iaa(path: str) -> dict[str, float]:
    payload = json.loads(Path(path).read_text())
    return {image_id: entry["iaa"] for image_id, entry in payload.items()}


def _group_value(rec: ImageRecord, field: str) -> str:
    if field == "malignant":
        return "malignant" if rec.malignant else "benign"
    if field == "diagnosis":
        return rec.diagnosis
    raise SystemExit(f"unknown grouping field {field!r}")


def cmd_stats(args) -> int:
    out = _out_dir(args)
    records = load_manifest(args.manifest, check_files=False)
    iaa = _load_iaa(args.iaa)
    group_a, group_b = args.group_a, args.group_b
    values: dict[str, list[float]] = {group_a: [], group_b: []}
    for rec in records:
        if rec.image_id not in iaa:
            continue
        g = _group_value(rec, args.group_by)
        if g in values:
            values[g].append(iaa[rec.image_id])
    for name, vals in values.items():
        if len(vals) < 2:
            raise SystemExit(f"group {name!r} has fewer than 2 scored images")
    sample_a = Sample(np.array(values[group_a]), label=group_a)
    sample_b = Sample(np.array(values[group_b]), label=group_b)
    u = mann_whitney(sample_a, sample_b, alternative="two-sided")
    try:
        effect = cohens_d(sample_a, sample_b)
        effect_entry = {"cohens_d": effect.cohens_d, "pooled_sd": effect.pooled_sd}
    except UndefinedEffectError:
        effect_entry = {"cohens_d": None, "pooled_sd": 0.0}
    threads = _threads(args)
    fosd_ab = fosd_test(
        sample_a, sample_b, iterations=args.iterations, seed=args.seed,
        hypothesis="a-dominates-b", threads=threads,
    )
    fosd_ba = fosd_test(
        sample_a, sample_b, iterations=args.iterations, seed=args.seed,
        hypothesis="b-dominates-a", threads=threads,
    )
    report = {
        "group_a": group_a,
        "group_b": group_b,
        "n_a": sample_a.n,
        "n_b": sample_b.n,
        "mean_a": float(np.mean(sample_a.values)),
        "mean_b": float(np.mean(sample_b.values)),
        "tests": [
            {
                "test": "mann-whitney",
                "hypothesis": "two-sided",
                "statistic": u.u_statistic,
                "p_value": u.p_value,
                "method": u.method,
                "n_a": u.n_a,
                "n_b": u.n_b,
            },
            {"test": "cohens-d", **effect_entry},
        ]
        + [
            {
                "test": "fosd",
                "hypothesis": f"{group_a}-dominates-{group_b}"
                if r.hypothesis == "a-dominates-b"
                else f"{group_b}-dominates-{group_a}",
                "statistic": r.statistic,
                "p_value": r.p_value,
                "iterations": r.bootstrap_iterations,
                "seed": r.seed,
                "n_a": r.n_a,
                "n_b": r.n_b,
            }
            for r in (fosd_ab, fosd_ba)
        ],
    }
    _write_json(out / "stats.json", report)
    alpha = args.alpha_level
    print(
        f"mann-whitney two-sided: U={u.u_statistic:.1f} p={u.p_value:.6g} "
        f"({'reject' if u.p_value < alpha else 'fail to reject'} at alpha={alpha})"
    )
    d = effect_entry["cohens_d"]
    print(f"cohens d: {'undefined' if d is None else f'{d:.4f}'}")
    for r, name in ((fosd_ab, f"{group_a} dominates {group_b}"),
                    (fosd_ba, f"{group_b} dominates {group_a}")):
        verdict = "reject" if r.p_value < alpha else "fail to reject"
        print(
            f"fosd H0 [{name}]: T={r.statistic:.4f} p={r.p_value:.6g} "
            f"-> {verdict} at alpha={alpha}"
        )
    return 0


def cmd_split(args) -> int:
    out = _out_dir(args)
    records = load_manifest(args.manifest, check_files=False)
    iaa = _load_iaa(args.iaa)
    scored = [r for r in records if r.image_id in iaa]
    dropped = len(records) - len(scored)
    if dropped:
        warnings.warn(f"{dropped} images without IAA scores excluded from split")
    assignments = stratified_split(scored, iaa, seed=args.seed)
    rows = [
        [a.image_id, a.fold, f"{'malignant' if a.stratum[0] else 'benign'}|k={a.stratum[1]}|{a.stratum[2]}"]
        for a in assignments
    ]
    _write_csv(out / "splits.csv", ["image_id", "fold", "stratum"], rows)
    strata = sorted({r[2] for r in rows})
    for s in strata:
        counts = {f: sum(1 for r in rows if r[2] == s and r[1] == f) for f in ("train", "valid", "test")}
        print(f"{s}: train={counts['train']} valid={counts['valid']} test={counts['test']}")
    totals = {f: sum(1 for r in rows if r[1] == f) for f in ("train", "valid", "test")}
    print(f"total: train={totals['train']} valid={totals['valid']} test={totals['test']}")
    return 0


def _table_rows(table: FactorTable) -> list[list]:
    return [
        [
            r.factor,
            r.relation,
            r.malignancy,
            r.n_pairs,
            r.mean_dice,
            r.std_dice,
            r.p_value,
            r.cohens_d,
        ]
        for r in table.rows
    ]


def cmd_table(args) -> int:
    out = _out_dir(args)
    records = load_manifest(args.manifest, check_files=False)
    pairs: dict[str, list] = {}
    with open(args.pairs, newline="") as fh:
        for row in csv.DictReader(fh):
            hd = row["hausdorff"]
            pairs.setdefault(row["image_id"], []).append(
                AgreementRecord(
                    mask_index_a=int(row["idx_a"]),
                    mask_index_b=int(row["idx_b"]),
                    dice=float(row["dice"]),
                    hausdorff=float(hd) if hd else None,
                )
            )
    table = factor_table(records, pairs)
    header = ["factor", "relation", "malignancy", "n_pairs", "mean_dice", "std_dice",
              "p_value", "cohens_d"]
    _write_csv(out / "factor_table.csv", header, _table_rows(table))
    _write_json(
        out / "factor_table.json",
        [
            {
                "factor": r.factor,
                "relation": r.relation,
                "malignancy": r.malignancy,
                "n_pairs": r.n_pairs,
                "mean_dice": r.mean_dice,
                "std_dice": r.std_dice,
                "p_value": r.p_value,
                "cohens_d": r.cohens_d,
            }
            for r in table.rows
        ],
    )
    for r in table.rows:
        if r.malignancy == "all" and r.mean_dice is not None:
            print(
                f"{r.factor:<10} {r.relation:<10} n={r.n_pairs:<6} "
                f"dice={r.mean_dice:.4f}"
                + (f" (p={r.p_value:.3g})" if r.p_value is not None else "")
            )
    return 0


def _load_folds(args, with_iaa: bool) -> dict[str, FoldData]:
    records = {r.image_id: r for r in load_manifest(args.manifest)}
    iaa = _load_iaa(args.iaa) if with_iaa else {}
    folds: dict[str, list[str]] = {"train": [], "valid": [], "test": []}
    with open(args.splits, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["fold"] not in folds:
                raise SystemExit(f"splits file has unknown fold {row['fold']!r}")
            folds[row["fold"]].append(row["image_id"])
    out: dict[str, FoldData] = {}
    for fold, ids in folds.items():
        if not ids:
            continue
        images, labels, targets, kept = [], [], [], []
        for image_id in ids:
            rec = records.get(image_id)
            if rec is None:
                raise SystemExit(f"splits reference unknown image {image_id!r}")
            if with_iaa and image_id not in iaa:
                raise SystemExit(f"no IAA score for image {image_id!r}")
            with Image.open(resolve_path(args.manifest, rec.image_path)) as img:
                arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
            images.append(arr)
            labels.append(int(rec.malignant))
            if with_iaa:
                targets.append(iaa[image_id])
            kept.append(image_id)
        out[fold] = FoldData(
            images=np.stack(images)[:, None, :, :],
            labels=np.array(labels, dtype=np.int64),
            iaa=np.array(targets) if with_iaa else None,
            image_ids=tuple(kept),
        )
    return out


def cmd_train(args) -> int:
    out = _out_dir(args)
    config = TrainConfig(
        alpha=args.alpha,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        lr_decay_factor=args.lr_decay_factor,
        lr_decay_every=args.lr_decay_every,
        seed=args.seed,
        model_selection=args.model_selection,
        frozen_regression_head=args.freeze_regression_head,
        focal_gamma=args.gamma,
        smooth_l1_beta=args.beta,
    )
    needs_iaa = args.model.lower() not in ("m2", "diagnosis") and not (
        args.model.lower() in ("mt", "multitask") and args.alpha == 1.0
    )
    folds = _load_folds(args, with_iaa=needs_iaa)
    side = folds["train"].images.shape[2]
    net_config = NetworkConfig(
        input_side=side,
        widths=tuple(args.widths),
        head_hidden=args.head_hidden,
        n_classes=2,
    )
    result = train(args.model, folds, config, net_config)
    checkpoint = out / "checkpoint.json"
    result.network.save(
        checkpoint,
        extra={
            "model_kind": result.model_kind,
            "best_epoch": result.best_epoch,
            "seed": config.seed,
            "alpha": config.alpha,
            "rng_state": result.rng_state,
        },
    )
    _write_csv(
        out / "epochs.csv",
        ["epoch", "train_loss", "val_mae", "val_balanced_accuracy", "lr"],
        [
            [l.epoch, l.train_loss, l.val_mae, l.val_balanced_accuracy, l.lr]
            for l in result.epoch_logs
        ],
    )
    last = result.epoch_logs[-1]
    print(
        f"trained {result.model_kind} for {config.epochs} epochs; "
        f"best epoch {result.best_epoch}; final train loss {last.train_loss:.6f}"
    )
    print(f"checkpoint: {checkpoint}")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    net = Network.load(args.checkpoint)
    with_iaa = net.config.with_regression and args.iaa is not None
    folds = _load_folds(args, with_iaa=with_iaa)
    if args.fold not in folds:
        raise SystemExit(f"fold {args.fold!r} is empty or missing from the splits file")
    report = evaluate(net, folds[args.fold])
    payload = {
        "fold": args.fold,
        "n": report.n,
        "mae": report.mae,
        "mse": report.mse,
        "balanced_accuracy": report.balanced_accuracy,
        "auroc": report.auroc,
        "per_class": report.per_class,
        "notes": list(report.notes),
    }
    _write_json(out / f"eval_{args.fold}.json", payload)
    parts = [f"fold={args.fold}", f"n={report.n}"]
    if report.mae is not None:
        parts += [f"MAE={report.mae:.4f}", f"MSE={report.mse:.4f}"]
    if report.balanced_accuracy is not None:
        parts.append(f"balanced_accuracy={report.balanced_accuracy:.4f}")
    if report.auroc is not None:
        parts.append(f"AUROC={report.auroc:.4f}")
    print(" ".join(parts))
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iaakit",
        description="Inter-annotator agreement analytics over multi-annotator "
        "segmentation masks.",
    )
    parser.add_argument("--version", action="version", version=f"iaakit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common_out = argparse.ArgumentParser(add_help=False)
    common_out.add_argument("--out", help="output directory (or IAAKIT_OUT)")

    p_synth = sub.add_parser("synth", parents=[common_out],
                             help="generate a synthetic multi-annotator dataset")
    p_synth.add_argument("--n", type=int, default=200)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--side", type=int, default=32, help="image side in pixels")
    p_synth.set_defaults(func=cmd_synth)

    p_iaa = sub.add_parser("iaa", parents=[common_out],
                           help="pairwise agreement metrics and per-image IAA scores")
    p_iaa.add_argument("--manifest", required=True)
    p_iaa.add_argument("--grid", type=int, default=256,
                       help="canonical grid side masks are resized to")
    p_iaa.set_defaults(func=cmd_iaa)

    p_stats = sub.add_parser("stats", parents=[common_out],
                             help="rank, effect-size, and dominance tests on IAA scores")
    p_stats.add_argument("--manifest", required=True)
    p_stats.add_argument("--iaa", required=True, help="iaa.json from the iaa step")
    p_stats.add_argument("--group-by", default="malignant",
                         choices=["malignant", "diagnosis"])
    p_stats.add_argument("--group-a", default="benign")
    p_stats.add_argument("--group-b", default="malignant")
    p_stats.add_argument("--iterations", type=int, default=1000)
    p_stats.add_argument("--seed", type=int, required=True)
    p_stats.add_argument("--alpha-level", type=float, default=0.001)
    p_stats.add_argument("--threads", type=int, default=None)
    p_stats.set_defaults(func=cmd_stats)

    p_split = sub.add_parser("split", parents=[common_out],
                             help="stratified 70:15:15 train/valid/test split")
    p_split.add_argument("--manifest", required=True)
    p_split.add_argument("--iaa", required=True)
    p_split.add_argument("--seed", type=int, required=True)
    p_split.set_defaults(func=cmd_split)

    p_table = sub.add_parser("table", parents=[common_out],
                             help="intra/inter factor agreement table")
    p_table.add_argument("--manifest", required=True)
    p_table.add_argument("--pairs", required=True, help="pairs.csv from the iaa step")
    p_table.set_defaults(func=cmd_table)

    p_train = sub.add_parser("train", parents=[common_out], help="train a model")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--splits", required=True)
    p_train.add_argument("--iaa", help="iaa.json; required unless the model is m2")
    p_train.add_argument("--model", required=True,
                         choices=["m1", "m2", "mt", "regression", "diagnosis", "multitask"])
    p_train.add_argument("--alpha", type=float, default=0.9)
    p_train.add_argument("--epochs", type=int, default=50)
    p_train.add_argument("--batch-size", type=int, default=32)
    p_train.add_argument("--lr", type=float, default=1e-2)
    p_train.add_argument("--momentum", type=float, default=0.9)
    p_train.add_argument("--weight-decay", type=float, default=1e-4)
    p_train.add_argument("--lr-decay-factor", type=float, default=0.1)
    p_train.add_argument("--lr-decay-every", type=int, default=10)
    p_train.add_argument("--seed", type=int, required=True)
    p_train.add_argument("--model-selection", default="auto",
                         choices=["auto", "min-val-mae", "max-val-balanced-accuracy"])
    p_train.add_argument("--freeze-regression-head", action="store_true")
    p_train.add_argument("--gamma", type=float, default=2.0, help="focal loss exponent")
    p_train.add_argument("--beta", type=float, default=1.0, help="smooth-L1 width")
    p_train.add_argument("--widths", type=int, nargs="+", default=[8, 16, 32])
    p_train.add_argument("--head-hidden", type=int, default=256)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", parents=[common_out], help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--splits", required=True)
    p_eval.add_argument("--iaa")
    p_eval.add_argument("--fold", default="test", choices=["train", "valid", "test"])
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            code = args.func(args)
        except (ValueError, OSError) as exc:
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
            print(f"error: {exc}", file=sys.stderr)
            return 1
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"{len(caught)} warnings")
    return code


if __name__ == "__main__":
    sys.exit(main())
