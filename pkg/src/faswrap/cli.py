"""Experiment orchestration CLI.

Subcommands cover the full pipeline: generate-synthetic, build-protocols,
pretrain-source, finetune-sre, train-wrapper, run-baseline, evaluate, export,
predict, and report. Each run writes an isolated output directory containing
a config snapshot, a config-derived run id, logs, checkpoints, and a
report.json where applicable. Exit codes: 0 success, 1 runtime failure (with
error.json), 2 usage error.

Configuration files are flat ``key = value`` text (see docs/config.md);
command-line flags override file values. The environment variable
``FASW_DATA_ROOT`` provides a default base directory for dataset paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .errors import ConfigError, FaswrapError
from .metrics import ScoreSet, evaluate_scores
from .samples import load_manifest
from .training import PretrainSchedule, pretrain_source, score_manifest, train_binary_head

REPORT_SCHEMA_VERSION = 1


def _parse_flat_config(path) -> dict:
    """Flat key = value file; '#' starts a comment; values stay strings."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{i + 1}: expected 'key = value'")
            key, val = line.split("=", 1)
            values[key.strip()] = val.strip()
    return values


def _data_path(p) -> Path:
    p = Path(p)
    root = os.environ.get("FASW_DATA_ROOT")
    if not p.is_absolute() and root:
        return Path(root) / p
    return p


def run_id_for(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha1(canon.encode("utf-8")).hexdigest()[:12]


def _start_run(out_dir, config: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = dict(config)
    snapshot["faswrap_version"] = __version__
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True, default=str)
    (out / "run_id").write_text(run_id_for(snapshot) + "\n", encoding="utf-8")
    return out


def _write_report(out_dir, payload: dict) -> Path:
    payload = {"schema_version": REPORT_SCHEMA_VERSION, **payload}
    path = Path(out_dir) / "report.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return path


def _seed_everything(seed: int) -> None:
    # single-threaded torch keeps reductions bit-stable run to run
    torch.set_num_threads(1)
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def cmd_generate_synthetic(args) -> int:
    from .synth import SyntheticDomainSpec, generate_synthetic_benchmark

    cfg = _parse_flat_config(args.config) if args.config else {}
    subsets = (args.subsets or cfg.get("subsets", "A,B")).split(",")
    specs = {}
    for sid in subsets:
        sid = sid.strip()
        get = lambda key, default: cfg.get(f"{sid}.{key}", default)
        spoof_types = []
        for item in str(get("spoof_types", args.spoof_types or "")).split(";"):
            if item.strip():
                macro, micro, gen = item.strip().split(":")
                spoof_types.append((macro, micro, gen))
        if not spoof_types:
            spoof_types = default_spoof_types(sid)
        specs[sid] = SyntheticDomainSpec(
            n_live=int(get("n_live", args.n_live)),
            n_spoof=int(get("n_spoof", args.n_spoof)),
            spoof_types=spoof_types,
            tint=tuple(float(v) for v in str(get("tint", "0,0,0")).split(",")),
            blur_sigma=float(get("blur_sigma", 0.0)),
            brightness=float(get("brightness", 0.0)),
            sensor_pattern=float(get("sensor_pattern", 0.0)),
            image_size=(args.image_size, args.image_size),
            seed=int(get("seed", args.seed + hash(sid) % 1000)),
        )
    out = _start_run(args.out, {"command": "generate-synthetic", "subsets": subsets,
                                "image_size": args.image_size, "seed": args.seed,
                                "config": cfg})
    result = generate_synthetic_benchmark(specs, out)
    summary = {sid: {"train": len(tr), "test": len(te)} for sid, (tr, te) in result.items()}
    _write_report(out, {"command": "generate-synthetic", "subsets": summary})
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def default_spoof_types(subset_id: str):
    if subset_id == "A":
        return [("print", "print", "moire"), ("replay", "replay", "moire")]
    if subset_id == "B":
        return [("mask3d", "mannequin", "checker"), ("makeup", "cosmetic", "stripes"),
                ("partial", "funny_eyes", "noise")]
    return [("print", "print", "moire"), ("replay", "replay", "moire")]


def cmd_build_protocols(args) -> int:
    from .protocols import ProtocolConfig, assign_illumination_clusters, build_protocol_splits, save_protocol

    manifest = load_manifest(_data_path(args.manifest))
    out = _start_run(args.out, {"command": "build-protocols", "manifest": str(args.manifest),
                                "holdout": args.holdout, "kmax": args.kmax, "seed": args.seed})
    clustering = None
    if args.kmax > 0:
        clustering = assign_illumination_clusters(manifest, kmax=args.kmax, seed=args.seed)
        np.savetxt(out / "sse_curve.csv",
                   np.column_stack([np.arange(1, args.kmax + 1), clustering.sse_curve]),
                   delimiter=",", header="k,sse", comments="")
    illum_target = None
    if clustering is not None and clustering.k > 1:
        counts = np.bincount(clustering.labels, minlength=clustering.k)
        rare = int(np.argmin(counts))
        frac = min(0.5, max(0.2, 2.0 * counts[rare] / len(manifest)))
        illum_target = (rare, frac)
    config = ProtocolConfig(
        holdout_micro_types=tuple(t for t in args.holdout.split(",") if t),
        ethnicity_target=(args.ethnicity_value, args.ethnicity_fraction) if args.ethnicity_value else None,
        age_target=(args.age_min, args.age_fraction) if args.age_min else None,
        illum_target=illum_target,
        seed=args.seed,
    )
    spec = build_protocol_splits(manifest, config)
    save_protocol(spec, out)
    _write_report(out, {"command": "build-protocols",
                        "k_star": clustering.k if clustering else None,
                        "subsets": {sid: {"train": len(tr), "test": len(te)}
                                    for sid, (tr, te) in spec.subsets.items()}})
    print(f"protocol written to {out}")
    return 0


def _model_config(args):
    from .models import FasModelConfig

    return FasModelConfig(
        levels=args.levels,
        channels=tuple(int(c) for c in args.channels.split(",")),
        input_size=(args.image_size, args.image_size),
        seed=args.seed,
    )


def cmd_pretrain_source(args) -> int:
    from .checkpoint import save_module
    from .models import ToyFasModel, attach_binary_head

    _seed_everything(args.seed)
    train = load_manifest(_data_path(args.train_manifest))
    out = _start_run(args.out, vars(args) | {"command": "pretrain-source"})
    model = ToyFasModel(_model_config(args))
    schedule = PretrainSchedule(epochs=args.epochs, lr=args.lr, lr_decay=args.lr_decay,
                               batch_size=args.batch_size, seed=args.seed)
    model, history = pretrain_source(model, train, schedule)
    history.save_csv(out / "loss.csv")
    save_module(out / "model", model, "fas_model", model.config.to_dict())
    if args.with_binary_head:
        head = attach_binary_head(model, seed=args.seed)
        head, head_hist = train_binary_head(model, head, train, schedule)
        head_hist.save_csv(out / "head_loss.csv")
        save_module(out / "binary_head", head, "binary_head",
                    {"c_in": head.fc.in_features, "seed": args.seed})
    _write_report(out, {"command": "pretrain-source",
                        "final_loss": history.rows[-1]["loss_orig"] if history.rows else None})
    print(f"source checkpoint written to {out / 'model'}")
    return 0


def cmd_finetune_sre(args) -> int:
    from .checkpoint import load_module, save_module
    from .plotting import save_mask_grid
    from .sre import OracleReconstructor, LiveProjectionReconstructor, Stage1Schedule, finetune_stage1

    _seed_everything(args.seed)
    train = load_manifest(_data_path(args.target_manifest))
    out = _start_run(args.out, vars(args) | {"command": "finetune-sre"})
    source = load_module(_data_path(args.source_ckpt))
    if args.reconstructor == "oracle":
        rec = OracleReconstructor(train)
    else:
        rec = LiveProjectionReconstructor.fit(train)
    schedule = Stage1Schedule(mask_epochs=args.mask_epochs, total_epochs=args.epochs,
                              lr=args.lr, sre_lr=args.sre_lr, threshold=args.threshold_T,
                              batch_size=args.batch_size, seed=args.seed)
    target_model, sre, history = finetune_stage1(source, None, train, rec, schedule)
    history.save_csv(out / "loss.csv")
    save_module(out / "model", target_model, "fas_model", target_model.config.to_dict())
    save_module(out / "sre", sre, "sre", sre.config.to_dict())
    save_mask_grid(out / "masks.png", [source, target_model], sre, train, n_samples=4)
    _write_report(out, {"command": "finetune-sre",
                        "final_loss": history.rows[-1]["loss_orig"] if history.rows else None})
    print(f"target checkpoint written to {out / 'model'}; sre to {out / 'sre'}")
    return 0


def cmd_train_wrapper(args) -> int:
    from .checkpoint import load_module, save_module
    from .models import clone_model
    from .wrapper import (CrossDatasetOptions, LossWeights, Stage2Options, disc_for_model,
                          train_cross_dataset, train_stage2)

    _seed_everything(args.seed)
    train = load_manifest(_data_path(args.target_manifest))
    out = _start_run(args.out, vars(args) | {"command": "train-wrapper"})
    lambdas = [float(v) for v in args.lambdas.split(",")]
    if len(lambdas) != 4:
        raise ConfigError("--lambdas expects four comma-separated values")
    weights = LossWeights(*lambdas)

    source_ckpts = args.source_ckpt.split(",")
    if len(source_ckpts) > 1:  # cross-dataset, one teacher per source domain
        teachers = [load_module(_data_path(p)) for p in source_ckpts]
        student = clone_model(teachers[0])
        discs = [disc_for_model(t, mode=args.disc_mode, seed=args.seed + 20 + i)
                 for i, t in enumerate(teachers)]
        opts = CrossDatasetOptions(lr=args.lr, disc_lr=args.disc_lr, epochs=args.epochs,
                                   batch_size=args.batch_size, seed=args.seed,
                                   allow_any_teacher_count=args.any_teacher_count)
        student, history = train_cross_dataset(teachers, student, discs, train, weights, opts)
        sre = None
    else:
        source = load_module(_data_path(source_ckpts[0]))
        target = load_module(_data_path(args.target_ckpt))
        sre = load_module(_data_path(args.sre_ckpt)) if args.sre_ckpt else None
        student = clone_model(source)
        disc_s = disc_for_model(source, mode=args.disc_mode, seed=args.seed + 21)
        disc_t = disc_for_model(source, mode=args.disc_mode, seed=args.seed + 22)
        opts = Stage2Options(lr=args.lr, disc_lr=args.disc_lr, epochs=args.epochs,
                             batch_size=args.batch_size, seed=args.seed)
        student, history = train_stage2(source, target, sre, student, disc_s, disc_t,
                                        train, weights, opts)
    history.save_csv(out / "loss.csv")
    save_module(out / "student", student, "fas_model", student.config.to_dict())
    if sre is not None:
        save_module(out / "sre", sre, "sre", sre.config.to_dict())
    _write_report(out, {"command": "train-wrapper",
                        "final_loss": history.rows[-1].get("loss_total", history.rows[-1].get("loss_orig"))
                        if history.rows else None})
    print(f"student checkpoint written to {out / 'student'}")
    return 0


def cmd_run_baseline(args) -> int:
    from .baselines import BaselineSchedule, joint_train, lwf_distill, naive_finetune
    from .checkpoint import load_module, save_module

    _seed_everything(args.seed)
    target = load_manifest(_data_path(args.target_manifest))
    out = _start_run(args.out, vars(args) | {"command": "run-baseline"})
    source = load_module(_data_path(args.source_ckpt))
    schedule = BaselineSchedule(epochs=args.epochs, lr=args.lr,
                                batch_size=args.batch_size, seed=args.seed)
    if args.method == "naive_ft":
        model, history = naive_finetune(source, target, schedule)
    elif args.method == "joint":
        if not args.source_manifest:
            raise ConfigError("joint training requires --source-manifest")
        source_train = load_manifest(_data_path(args.source_manifest))
        model, history = joint_train(source, source_train, target, schedule)
    elif args.method == "lwf":
        if not args.head_ckpt:
            raise ConfigError("lwf requires --head-ckpt (trained binary head)")
        head = load_module(_data_path(args.head_ckpt))
        model, head_out, history = lwf_distill(source, head, target, schedule,
                                               temperature=args.temperature,
                                               distill_weight=args.distill_weight)
        save_module(out / "binary_head", head_out, "binary_head",
                    {"c_in": head_out.fc.in_features, "seed": args.seed})
    else:
        raise ConfigError(f"unknown method {args.method!r}")
    history.save_csv(out / "loss.csv")
    save_module(out / "model", model, "fas_model", model.config.to_dict())
    _write_report(out, {"command": "run-baseline", "method": args.method})
    print(f"baseline checkpoint written to {out / 'model'}")
    return 0


def _load_scoring_model(path):
    from .checkpoint import load_module
    from .wrapper import load_inference

    path = _data_path(path)
    if str(path).endswith(".fasw"):
        return load_inference(path)
    return load_module(path)


def cmd_evaluate(args) -> int:
    _seed_everything(args.seed)
    manifest = load_manifest(_data_path(args.manifest))
    out = _start_run(args.out, vars(args) | {"command": "evaluate"})
    model = _load_scoring_model(args.model)
    scores, labels = score_manifest(model, manifest)
    score_set = ScoreSet(scores, labels)
    fpr_targets = tuple(float(v) for v in args.fpr_targets.split(","))
    attack_types = [s.spoof_micro for s in manifest.samples]
    report = evaluate_scores(score_set, fpr_targets=fpr_targets, attack_types=attack_types)
    np.savetxt(out / "scores.csv",
               np.column_stack([labels, scores]), delimiter=",",
               header="label,score", comments="")
    from .metrics import roc_analysis

    roc = roc_analysis(score_set, fpr_targets=fpr_targets)
    np.savetxt(out / "roc.csv", np.column_stack([roc.fpr, roc.tpr, roc.thresholds]),
               delimiter=",", header="fpr,tpr,threshold", comments="")
    _write_report(out, {"command": "evaluate", "n_samples": len(manifest),
                        "metrics": report.to_dict(),
                        "metrics_rounded": report.to_dict(ndigits=1)})
    print(json.dumps(report.to_dict(ndigits=1), indent=2, sort_keys=True))
    return 0


def cmd_export(args) -> int:
    from .checkpoint import load_module
    from .wrapper import export_inference, save_inference

    run_dir = _data_path(args.wrapper_run)
    student = load_module(run_dir / "student")
    sre = load_module(run_dir / "sre")
    model = export_inference(student, sre)
    save_inference(model, args.out)
    print(f"inference model written to {args.out}")
    return 0


def cmd_predict(args) -> int:
    from . import samples as samples_io
    from .wrapper import load_inference

    model = load_inference(_data_path(args.model))
    image_dir = _data_path(args.images)
    paths = sorted(Path(image_dir).glob("*.png"))
    if not paths:
        raise ConfigError(f"no PNG images found under {image_dir}")
    rows = []
    for p in paths:
        score, _mask = model.predict(samples_io.read_image(p))
        rows.append((p.name, score))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("image,spoof_score\n")
        for name, score in rows:
            fh.write(f"{name},{score:.6f}\n")
    print(f"wrote {len(rows)} scores to {out_path}")
    return 0


def cmd_report(args) -> int:
    from .plotting import plot_report

    written, skipped = plot_report([_data_path(d) for d in args.run_dirs], Path(args.out))
    for w in written:
        print(f"wrote {w}")
    for s in skipped:
        print(f"skipped {s}")
    if not written:
        print("nothing to render", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faswrap",
        description="Source-free anti-spoofing model updating: synthetic benchmarks, "
                    "spoof region estimation, dual-teacher transfer, and PAD metrics.",
    )
    parser.add_argument("--version", action="version", version=f"faswrap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-synthetic", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="flat key=value file with per-subset specs")
    p.add_argument("--subsets", default=None, help="comma list, e.g. A,B")
    p.add_argument("--n-live", type=int, default=100)
    p.add_argument("--n-spoof", type=int, default=100)
    p.add_argument("--spoof-types", default=None, help="macro:micro:gen;... for all subsets")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate_synthetic)

    p = sub.add_parser("build-protocols", help="build five-subset protocol splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--holdout", default="", help="comma list of spoof_micro types for subset B")
    p.add_argument("--kmax", type=int, default=8)
    p.add_argument("--ethnicity-value", default=None)
    p.add_argument("--ethnicity-fraction", type=float, default=0.52)
    p.add_argument("--age-min", type=int, default=None)
    p.add_argument("--age-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_protocols)

    p = sub.add_parser("pretrain-source", help="train the source model")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--channels", default="16,32,64")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--lr-decay", type=float, default=0.99)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--with-binary-head", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain_source)

    p = sub.add_parser("finetune-sre", help="stage 1: fine-tune with the spoof region estimator")
    p.add_argument("--source-ckpt", required=True)
    p.add_argument("--target-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-epochs", type=int, default=5)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--sre-lr", type=float, default=1e-3)
    p.add_argument("--threshold-T", type=float, default=0.1, dest="threshold_T")
    p.add_argument("--reconstructor", choices=["oracle", "live_autoencoder"], default="oracle")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_finetune_sre)

    p = sub.add_parser("train-wrapper", help="stage 2: dual-teacher adversarial transfer")
    p.add_argument("--source-ckpt", required=True,
                   help="source model dir; comma list of 3 for cross-dataset mode")
    p.add_argument("--target-ckpt", default=None)
    p.add_argument("--sre-ckpt", default=None)
    p.add_argument("--target-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambdas", default="1,1,0.1,0.1")
    p.add_argument("--disc-mode", choices=["chained", "shared", "single_concat"], default="chained")
    p.add_argument("--lr", type=float, default=1e-6)
    p.add_argument("--disc-lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--any-teacher-count", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_wrapper)

    p = sub.add_parser("run-baseline", help="run a comparator method")
    p.add_argument("--method", choices=["naive_ft", "joint", "lwf"], required=True)
    p.add_argument("--source-ckpt", required=True)
    p.add_argument("--target-manifest", required=True)
    p.add_argument("--source-manifest", default=None, help="joint training only")
    p.add_argument("--head-ckpt", default=None, help="lwf only")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--temperature", type=float, default=2.0)
    p.add_argument("--distill-weight", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_run_baseline)

    p = sub.add_parser("evaluate", help="score a manifest and emit metrics")
    p.add_argument("--model", required=True, help="checkpoint dir or .fasw file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fpr-targets", default="0.005")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="export the deployable inference artifact")
    p.add_argument("--wrapper-run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("predict", help="score a directory of images")
    p.add_argument("--model", required=True, help=".fasw file")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="render ROC / loss / mask plots from run dirs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code or 0)
    out_dir = getattr(args, "out", None)
    try:
        return args.func(args)
    except FaswrapError as exc:
        _record_error(out_dir, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected failure, still leave a machine-readable trace
        _record_error(out_dir, exc)
        traceback.print_exc()
        return 1


def _record_error(out_dir, exc) -> None:
    if not out_dir:
        return
    try:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "error.json", "w", encoding="utf-8") as fh:
            json.dump({"type": type(exc).__name__, "message": str(exc)}, fh, indent=2)
    except OSError:
        pass


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
