"""Command-line surface.

Subcommands: synth, train-stage1, train-stage2, evaluate, analyze.

Exit codes are a stable scripting contract: 0 success, 2 usage/config
error, 3 I/O or data error, 4 numerical failure. Every command echoes
its effective configuration into the output directory and, given
identical inputs and seed, produces byte-identical outputs.

Training config files are plain "key = value" lines (# comments allowed)
whose key names mirror the training-recipe vocabulary, e.g.::

    Batch size = 16
    Epochs = 50
    Starting LR = 0.005
    End LR = 0.0001
    Early-stop patience = 3
    Lambda = 0.007

Unknown keys are rejected. The SLIMDET_OUT_ROOT environment variable
provides a default parent for relative output directories.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, metrics, synth
from .errors import ConfigError, DataError, DimensionError, NumericalError, SlimError
from .model import load_checkpoint, model_from_checkpoint, save_checkpoint
from .store import EmbeddingCache, load_manifest, read_embedding
from .trainer import TrainConfig, score_records, train_stage1, train_stage2

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_CONFIG_KEYS = {
    "batch size": ("batch_size", int),
    "epochs": ("epochs", int),
    "starting lr": ("lr_start", float),
    "end lr": ("lr_end", float),
    "early-stop patience": ("patience", int),
    "lambda": ("lam", float),
    "target t": ("target_t", int),
    "seed": ("seed", int),
    "loss mode": ("loss_mode", str),
    "variant": ("variant", str),
    "augment": ("augment", lambda v: v.lower() in ("1", "true", "yes", "on")),
    "accum steps": ("accum_steps", int),
    "grad clip": ("grad_clip", float),
    "weight decay": ("weight_decay", float),
    "compression output dim": ("dep_dim", int),
    "bottleneck dim": ("hidden_dim", int),
    "activation": ("activation", str),
    "optimizer": (None, str),  # accepted for provenance; AdamW only
    "lrscheduler": (None, str),  # accepted for provenance; Linear only
}


def parse_config_file(path) -> dict:
    """Parse a key/value training config file into TrainConfig overrides."""
    overrides = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'Key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        entry = _CONFIG_KEYS.get(key.lower())
        if entry is None:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        field, cast = entry
        if field is None:
            expected = "adamw" if key.lower() == "optimizer" else "linear"
            if value.lower() != expected:
                raise ConfigError(
                    f"{path}:{lineno}: only {expected!r} is supported for {key!r}"
                )
            continue
        try:
            overrides[field] = cast(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
    return overrides


def _apply_sets(overrides: dict, pairs) -> dict:
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        entry = _CONFIG_KEYS.get(key.strip().lower())
        if entry is None or entry[0] is None:
            raise ConfigError(f"unknown config key {key!r}")
        field, cast = entry
        try:
            overrides[field] = cast(value.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return overrides


def _out_dir(arg) -> Path:
    root = os.environ.get("SLIMDET_OUT_ROOT")
    path = Path(arg)
    if not path.is_absolute() and root:
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(out_dir: Path, payload: dict) -> None:
    lines = [f"{key} = {payload[key]}" for key in sorted(payload)]
    (out_dir / "effective_config.txt").write_text("\n".join(lines) + "\n")


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# subcommands


_SYNTH_KEYS = {
    "latent dim": ("latent_dim", int),
    "feature dim": ("feat_dim", int),
    "time steps": ("time_steps", int),
    "k style": ("k_style", int),
    "k ling": ("k_ling", int),
    "noise std": ("noise_std", float),
    "mismatch": ("mismatch", float),
    "artifact strength": ("artifact_strength", float),
    "seed": ("seed", int),
}


def _parse_synth_config(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'Key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        entry = _SYNTH_KEYS.get(key.lower())
        if entry is None:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        field, cast = entry
        try:
            values[field] = cast(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
    return values


def cmd_synth(args) -> int:
    values = _parse_synth_config(args.config) if args.config else {}
    for field in ("latent_dim", "feat_dim", "time_steps", "k_style", "k_ling",
                  "noise_std", "mismatch", "artifact_strength", "seed"):
        flag = getattr(args, field)
        if flag is not None:
            values[field] = flag
    cfg = synth.SynthConfig(**values)
    out = _out_dir(args.out)
    manifest = synth.generate_dataset(cfg, args.n_real, args.n_fake, out,
                                      dataset_tag=args.dataset_tag)
    _echo_config(out, dict(cfg.__dict__, n_real=args.n_real, n_fake=args.n_fake,
                           dataset_tag=args.dataset_tag))
    print(manifest)
    return EXIT_OK


def _train_config(args, stage: int) -> TrainConfig:
    overrides = parse_config_file(args.config) if args.config else {}
    overrides = _apply_sets(overrides, args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if stage == 1:
        return TrainConfig.stage1_defaults(**overrides)
    if args.variant:
        overrides["variant"] = args.variant
    return TrainConfig.stage2_defaults(**overrides)


def cmd_train_stage1(args) -> int:
    config = _train_config(args, stage=1)
    out = _out_dir(Path(args.ckpt_out).parent)
    ckpt_path = Path(args.ckpt_out)
    log_path = Path(args.log_out) if args.log_out else ckpt_path.with_suffix(".log.jsonl")
    ckpt = train_stage1(args.manifest, config, log_path=log_path)
    save_checkpoint(ckpt, ckpt_path)
    _echo_config(out, config.to_dict())
    print(ckpt_path)
    return EXIT_OK


def cmd_train_stage2(args) -> int:
    config = _train_config(args, stage=2)
    out = _out_dir(Path(args.ckpt_out).parent)
    ckpt_path = Path(args.ckpt_out)
    log_path = Path(args.log_out) if args.log_out else ckpt_path.with_suffix(".log.jsonl")
    ckpt = train_stage2(args.manifest, args.stage1_ckpt, config, log_path=log_path)
    save_checkpoint(ckpt, ckpt_path)
    _echo_config(out, config.to_dict())
    print(ckpt_path)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.stage != 2:
        raise ConfigError("evaluate needs a stage-2 checkpoint")
    variant = args.variant or ckpt.config.get("variant", "full")
    if variant != ckpt.config.get("variant", variant):
        raise ConfigError(
            f"checkpoint was trained for variant {ckpt.config.get('variant')!r}, "
            f"requested {variant!r}"
        )
    model = model_from_checkpoint(ckpt, variant=variant)
    records = [r for r in load_manifest(args.manifest) if r.split == args.split]
    if not records:
        raise ConfigError(f"no records in split {args.split!r}")
    cache = EmbeddingCache()
    target_t = int(ckpt.config.get("target_t", 50))
    ids, labels, scores = score_records(model, records, cache, target_t)
    real = [s for s, l in zip(scores, labels) if l == 0]
    fake = [s for s, l in zip(scores, labels) if l == 1]
    if not real or not fake:
        raise ConfigError(f"split {args.split!r} must contain both classes")
    report = metrics.evaluate_scores(real, fake)
    out = _out_dir(args.report_out)
    payload = dict(report.to_dict(), variant=variant, split=args.split)
    _write_json(out / "report.json", payload)
    label_names = ["real", "fake"]
    metrics.write_scores(
        ((sid, label_names[lab], score) for sid, lab, score in zip(ids, labels, scores)),
        out / "scores.txt",
    )
    _echo_config(out, {"ckpt": str(args.ckpt), "variant": variant, "split": args.split})
    print(json.dumps({"eer": report.eer, "f1": report.f1,
                      "threshold": report.eer_threshold,
                      "n_real": report.n_real, "n_fake": report.n_fake}))
    return EXIT_OK


def _time_averaged(cache: EmbeddingCache, records):
    style = np.stack([cache.pooled(r)[0].mean(axis=1) for r in records])
    ling = np.stack([cache.pooled(r)[1].mean(axis=1) for r in records])
    return style.astype(np.float64), ling.astype(np.float64)


def cmd_analyze(args) -> int:
    out = _out_dir(args.out)
    if args.mode == "cca":
        records = load_manifest(args.manifest)
        cache = EmbeddingCache()
        fit_pool = [r for r in records if r.split == "train" and r.label == "real"]
        if len(fit_pool) < 2:
            raise ConfigError("cca mode needs at least 2 real training samples")
        fit = fit_pool[: args.fit_n]
        eval_records = [r for r in records if r.split == args.split_eval]
        groups = {}
        for label in ("real", "fake"):
            members = [r for r in eval_records if r.label == label]
            if members:
                groups[label] = _time_averaged(cache, members)
        if not groups:
            raise ConfigError(f"no records in split {args.split_eval!r}")
        fit_style, fit_ling = _time_averaged(cache, fit)
        model = analysis.cca_fit(fit_style, fit_ling, dims=args.dims, ridge=args.ridge)
        report = analysis.cca_group_report(model, groups, per_dimension=args.per_dimension)
        report["fit_n"] = len(fit)
        _write_json(out / "cca_report.json", report)
        lines = [
            f"group={name} n={g['n']} mean={g['mean']:.6f} std={g['std']:.6f}"
            for name, g in sorted(report["groups"].items())
        ]
        (out / "cca_report.txt").write_text("\n".join(lines) + "\n")
        _echo_config(out, {"mode": "cca", "fit_n": len(fit), "dims": args.dims,
                           "ridge": args.ridge, "per_dimension": args.per_dimension,
                           "split_eval": args.split_eval})
        print(json.dumps(report["groups"]))
        return EXIT_OK
    if args.mode == "mismatch":
        records = load_manifest(args.manifest)
        if args.split != "all":
            records = [r for r in records if r.split == args.split]
        ckpt = load_checkpoint(args.ckpt)
        report = analysis.mismatch_report(records, ckpt)
        _write_json(out / "mismatch_report.json", report)
        sample_lines = [
            json.dumps({"id": row["id"], "label": row["label"], "distance": row["distance"]})
            for row in report["samples"]
        ]
        (out / "mismatch_samples.jsonl").write_text("\n".join(sample_lines) + "\n")
        _echo_config(out, {"mode": "mismatch", "ckpt": str(args.ckpt), "split": args.split})
        printable = {label: cls["median"] for label, cls in report["classes"].items()}
        print(json.dumps({"median_distance": printable,
                          "welch_p": report.get("welch", {}).get("p")}))
        return EXIT_OK
    # layers
    records = load_manifest(args.manifest)
    if args.n:
        records = records[: args.n]
    if len(records) < 2:
        raise ConfigError("layers mode needs at least 2 samples")
    embs_a = [read_embedding(r.style_path).data for r in records]
    embs_b = [read_embedding(r.linguistics_path).data for r in records]
    matrix = analysis.layer_spearman_matrix(
        embs_a, embs_b, mode="concat" if args.concat else "per_sample")
    np.savetxt(out / "layer_spearman.txt", matrix, fmt="%.6f")
    _write_json(out / "layer_spearman.json",
                {"shape": list(matrix.shape), "matrix": matrix.tolist()})
    _echo_config(out, {"mode": "layers", "n": len(records), "concat": bool(args.concat)})
    print(json.dumps({"shape": list(matrix.shape)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slimdet",
        description="Style-linguistics mismatch engine: synthesis, training, "
                    "evaluation and analysis over subspace embedding tensors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-real", type=int, required=True)
    p.add_argument("--n-fake", type=int, required=True)
    p.add_argument("--mismatch", type=float)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--feat-dim", type=int)
    p.add_argument("--time-steps", type=int)
    p.add_argument("--k-style", type=int)
    p.add_argument("--k-ling", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--artifact-strength", type=float)
    p.add_argument("--dataset-tag", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-stage1", help="one-class dependency training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt-out", required=True)
    p.add_argument("--config")
    p.add_argument("--log-out")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="supervised classifier training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stage1-ckpt", required=True)
    p.add_argument("--ckpt-out", required=True)
    p.add_argument("--config")
    p.add_argument("--log-out")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=("full", "dependency", "subspace", "style", "linguistics"))
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("evaluate", help="score a test split and report EER/F1")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--variant", choices=("full", "dependency", "subspace", "style", "linguistics"))
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--report-out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="dependency probes and reports")
    p.add_argument("--mode", required=True, choices=("cca", "mismatch", "layers"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", help="stage-1/2 checkpoint (mismatch mode)")
    p.add_argument("--fit-n", type=int, default=100)
    p.add_argument("--dims", type=int, default=20)
    p.add_argument("--ridge", type=float, default=analysis.DEFAULT_RIDGE)
    p.add_argument("--per-dimension", action="store_true")
    p.add_argument("--split-eval", default="test", choices=("train", "valid", "test"))
    p.add_argument("--split", default="all", choices=("all", "train", "valid", "test"))
    p.add_argument("--n", type=int, default=0, help="layers mode: sample cap")
    p.add_argument("--concat", action="store_true")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "analyze" and args.mode == "mismatch" and not args.ckpt:
        parser.error("--ckpt is required for --mode mismatch")
    try:
        return args.func(args)
    except (ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SlimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
