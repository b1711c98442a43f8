"""Command-line entry point: ``synth -> prepare -> train -> report``.

Layout under ``--out``::

    cohort/                 containers, scores.csv, synth.json
    cache/<prepare_hash>/   per-subject arrays and manifest.json
    runs/<run_id>/          config.json, results.json, report.csv, report.txt,
                            fold_<i>/checkpoint/<variant>/

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from cogpsg.config import ExperimentConfig, load_config, save_config
from cogpsg.errors import CogPSGError, ConfigError, MissingRunError
from cogpsg.model import Variant, save_checkpoint
from cogpsg.pipeline import MANIFEST_FILE, load_cohort_arrays, load_manifest, prepare_cohort
from cogpsg.psg_io import (
    CONTAINER_SUFFIX,
    SCORES_FILE,
    SynthCohortSpec,
    iter_synthetic_cohort,
    write_recording,
    write_scores,
)
from cogpsg.report import plot_loss_curves, render_table, write_report
from cogpsg.training import (
    AblationReport,
    SubjectData,
    TrainSpec,
    binarize_labels,
    model_config_from_section,
    run_ablation,
)

log = logging.getLogger("cogpsg")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_CODES = {"INVALID_CONFIG", "UNKNOWN_VARIANT", "MISSING_RUN", "MISSING_COHORT", "MISSING_CACHE",
                    "TOO_FEW_SUBJECTS"}
SYNTH_META = "synth.json"


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[key.strip()] = value
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="cogpsg", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--out", type=Path, default=Path("cogpsg_out"), help="output root (default: %(default)s)")
    p.add_argument("--force", action="store_true", help="recompute stages whose outputs already exist")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config field")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic cohort")
    s.add_argument("--n", type=int, help="number of subjects")
    s.add_argument("--hours", type=float, help="recording length")
    s.add_argument("--effect", type=float, help="planted class separation in [0, 1]")
    s.add_argument("--rate", type=float, help="sampling rate of the written containers")

    sub.add_parser("prepare", help="preprocess and extract features into the cache")

    t = sub.add_parser("train", help="cross-validated training and evaluation")
    t.add_argument("--variant", help="architecture variant (default from config)")
    t.add_argument("--ablation", help="'all' or a comma-separated variant list")
    t.add_argument("--folds", type=int, help="number of cross-validation folds")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--run-id", help="run directory name (default: derived from the config)")

    r = sub.add_parser("report", help="render a finished run and its loss curves")
    r.add_argument("run_id")
    r.add_argument("--no-plots", action="store_true")
    return p


def _effective_config(args):
    overrides = _parse_set(args.set)
    overrides["seed"] = args.seed
    if args.command == "synth":
        overrides.update({"data.n_subjects": args.n, "data.hours": args.hours,
                          "data.effect_strength": args.effect, "data.rate_hz": args.rate})
    elif args.command == "train":
        overrides.update({"training.k_folds": args.folds, "training.epochs": args.epochs, "training.lr": args.lr,
                          "model.variant": args.variant})
        if args.ablation:
            names = list(Variant) if args.ablation.strip().lower() == "all" else args.ablation.split(",")
            overrides["training.ablation"] = [Variant.parse(v).value for v in names]
    if args.command in ("prepare", "train"):
        # the cohort's synthesis parameters are part of the cache key
        meta = args.out / "cohort" / SYNTH_META
        if meta.exists():
            for key, value in json.loads(meta.read_text())["data"].items():
                if overrides.get(f"data.{key}") is None:
                    overrides[f"data.{key}"] = value
    for key in [k for k, v in overrides.items() if v is None]:
        del overrides[key]
    if args.config is None:
        return load_config(None, overrides)
    return load_config(args.config, overrides)


def cmd_synth(args, cfg: ExperimentConfig):
    d = cfg.data
    if d.n_subjects < 2 or d.hours <= 0 or d.rate_hz <= 0:
        raise ConfigError("synth needs --n >= 2, --hours > 0 and --rate > 0")
    spec = SynthCohortSpec(d.n_subjects, d.hours * 3600.0, d.rate_hz, d.effect_strength, cfg.seed)
    out = args.out / "cohort"
    meta = out / SYNTH_META
    payload = {"data": {"n_subjects": d.n_subjects, "hours": d.hours, "rate_hz": d.rate_hz,
                        "effect_strength": d.effect_strength}, "seed": cfg.seed}
    if meta.exists() and not args.force and json.loads(meta.read_text()) == payload:
        print(f"cohort exists at {out} (use --force to rewrite)")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob(f"*{CONTAINER_SUFFIX}*"):
        old.unlink()
    scores, n_high = {}, 0
    for rec, score, cls in iter_synthetic_cohort(spec):
        write_recording(out / f"{rec.subject_id}{CONTAINER_SUFFIX}", rec)
        scores[rec.subject_id] = score
        n_high += cls
    write_scores(out / SCORES_FILE, scores)
    meta.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(scores)} recordings ({n_high} planted high) of {d.hours:g} h at {d.rate_hz:g} Hz to {out}")
    return EXIT_OK


def cache_key(args, cfg):
    """Upstream config sections plus the cohort's synthesis record (seed included)."""
    meta = args.out / "cohort" / SYNTH_META
    cohort = meta.read_text() if meta.exists() else ""
    return hashlib.sha256((cfg.prepare_hash() + cohort).encode()).hexdigest()[:12]


def _cache_dir(args, cfg):
    return args.out / "cache" / cache_key(args, cfg)


def cmd_prepare(args, cfg):
    cohort = args.out / "cohort"
    if not (cohort / SCORES_FILE).exists():
        raise CogPSGError(f"no cohort at {cohort}; run synth first", code="MISSING_COHORT")
    manifest, skipped = prepare_cohort(cohort, _cache_dir(args, cfg), cfg, force=args.force)
    if skipped:
        print(f"cache {cache_key(args, cfg)} up to date ({len(manifest.included)} subjects), skipped")
        return EXIT_OK
    print(f"cached {len(manifest.included)} subjects under {_cache_dir(args, cfg)}")
    for sid, reason in manifest.excluded:
        print(f"  excluded {sid}: {reason}")
    if not manifest.included:
        print("no subjects survived preparation", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def run_id_for(cfg: ExperimentConfig):
    payload = json.dumps(cfg.to_dict(), sort_keys=True)
    return "run-" + hashlib.sha256(payload.encode()).hexdigest()[:10]


def load_subject_data(cache_dir):
    manifest = load_manifest(cache_dir)
    labels = binarize_labels(manifest.score_table)
    ids = list(manifest.included)
    arrays = load_cohort_arrays(cache_dir, ids)
    return SubjectData(ids, arrays, np.array([labels.labels[s] for s in ids], dtype=int))


def cmd_train(args, cfg):
    tr = cfg.training
    variants = [Variant.parse(v) for v in (tr.ablation or [cfg.model.variant])]
    cache = _cache_dir(args, cfg)
    if not (cache / MANIFEST_FILE).exists():
        raise CogPSGError(f"no feature cache at {cache}; run prepare with the same config", code="MISSING_CACHE")
    data = load_subject_data(cache)
    rate = cfg.preprocess.target_rate_hz
    base = model_config_from_section(cfg.model, int(round(cfg.features.eeg_window_s * rate)),
                                     int(round(cfg.features.ecg_window_s * rate)))
    configs = [replace(base, variant=v) for v in variants]
    run_id = args.run_id or run_id_for(cfg)
    run_dir = args.out / "runs" / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(run_dir / "config.json", cfg)

    def keep(variant, fold, model):
        save_checkpoint(run_dir / f"fold_{fold}" / "checkpoint" / variant.value, model)

    spec = TrainSpec(lr=tr.lr, epochs=tr.epochs, batch_size=tr.batch_size, betas=tuple(tr.adam_betas), seed=cfg.seed)
    search = cfg.search
    report = run_ablation(configs, data, k=tr.k_folds, seed=cfg.seed, spec=spec, tune_fraction=tr.tune_fraction,
                          search_budget=search.budget if search.enabled else 0, search_epochs=search.epochs,
                          on_model=keep)
    (run_dir / "results.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    write_report(run_dir, report)
    print(f"run {run_id}")
    print(render_table(report), end="")
    failed = [f.message for row in report.rows for f in row.folds if f.status != "OK"]
    for msg in failed:
        print(f"error: {msg}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_report(args, cfg):
    run_dir = args.out / "runs" / args.run_id
    results = run_dir / "results.json"
    if not results.exists():
        raise MissingRunError(f"no finished run {args.run_id!r} under {args.out / 'runs'}")
    report = AblationReport.from_dict(json.loads(results.read_text())).sorted()
    write_report(run_dir, report)
    print(render_table(report), end="")
    if not args.no_plots:
        paths = plot_loss_curves(run_dir, report)
        print(f"{len(paths)} loss-curve plots under {run_dir}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _effective_config(args)
        return COMMANDS[args.command](args, cfg)
    except CogPSGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if exc.code in VALIDATION_CODES else EXIT_RUNTIME
    except (TypeError, ValueError) as exc:
        print(f"error: [INVALID_CONFIG] {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
