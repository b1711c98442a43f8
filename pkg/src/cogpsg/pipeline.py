"""Per-subject preparation (recording -> model-ready arrays) and the on-disk cache.

Cache entry per subject: ``<id>.npz`` with float32 ``eeg_raw``, ``ecg_raw``,
``eeg_power``, ``hrv_time``, ``hrv_freq``, packed-bit validity masks and the
packed artifact mask, plus a ``<id>.json`` sidecar with every parameter used.
"""
from __future__ import annotations

import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from cogpsg import features as feat
from cogpsg import preprocess as pp
from cogpsg.config import ExperimentConfig
from cogpsg.errors import CogPSGError
from cogpsg.psg_io import (
    SCORES_FILE,
    CohortManifest,
    filter_cohort,
    list_recordings,
    read_recording,
    read_scores,
    resample,
)

log = logging.getLogger(__name__)

ARRAY_KEYS = ("eeg_raw", "ecg_raw", "eeg_power", "hrv_time", "hrv_freq")
MANIFEST_FILE = "manifest.json"


def worker_count(default=1):
    try:
        return max(1, int(os.environ.get("COGPSG_WORKERS", default)))
    except ValueError:
        return default


def prepare_subject(rec, cfg: ExperimentConfig):
    """Run preprocessing and feature extraction for one recording."""
    d, p, f = cfg.data, cfg.preprocess, cfg.features
    fs = p.target_rate_hz
    chans = {name: resample(rec.channels[name], rec.rate_hz, fs)
             for name in (d.eeg_channel, d.reference_channel, d.ecg_channel)}
    eeg = pp.rereference(chans[d.eeg_channel], chans[d.reference_channel])
    eeg = pp.bandpass(eeg, *pp.nyquist_safe_band(*p.eeg_band_hz, fs, p.nyquist_margin_hz), fs, p.filter_order)
    ecg = pp.bandpass(chans[d.ecg_channel], *pp.nyquist_safe_band(*p.ecg_band_hz, fs, p.nyquist_margin_hz),
                      fs, p.filter_order)
    eeg = pp.crop(eeg, fs, p.crop_s)
    ecg = pp.crop(ecg, fs, p.crop_s)

    mask = pp.detect_artifacts(eeg, fs, p.artifact_ptp_uv, p.artifact_std_factor, p.artifact_epoch_s)
    eeg_seg = pp.apply_mask(pp.segment(eeg, fs, f.eeg_window_s), mask)
    fs_set = feat.build_feature_sequences(
        eeg_seg, ecg, fs,
        time_window=(f.time_hrv_window_s, f.time_hrv_step_s),
        freq_window=(f.freq_hrv_window_s, f.freq_hrv_step_s),
        nw=f.multitaper_nw, n_tapers=f.multitaper_tapers, hr_range=tuple(f.hr_range_bpm),
        pnn_threshold_ms=f.pnn_threshold_ms, tachogram_hz=f.tachogram_hz,
    )

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        eeg_raw = pp.apply_mask(pp.segment(pp.zscore(eeg), fs, f.eeg_window_s), mask).data
        ecg_z = pp.zscore(ecg)
        ecg_seg = pp.segment(ecg_z, fs, f.ecg_window_s)
        if p.mask_ecg:
            ecg_seg = pp.apply_mask(ecg_seg, mask)
        out = {"eeg_raw": eeg_raw, "ecg_raw": ecg_seg.data}
        for key, arr in fs_set.arrays().items():
            out[key] = pp.zscore(arr, axis=0, valid=fs_set.valid[key])
    out = {k: np.asarray(v, dtype=np.float32) for k, v in out.items()}
    valid = {k: np.asarray(v, dtype=bool) for k, v in fs_set.valid.items()}
    info = {
        "subject_id": rec.subject_id,
        "rate_hz": fs,
        "shapes": {k: list(v.shape) for k, v in out.items()},
        "artifact_epochs_flagged": int(mask.flags.sum()),
        "valid_rows": {k: int(v.sum()) for k, v in valid.items()},
        "warnings": sorted({str(w.message) for w in caught}),
        "bands": {b.name: [b.low_hz, b.high_hz] for b in feat.EEG_BANDS},
        "hrv_bands": {b.name: [b.low_hz, b.high_hz] for b in feat.HRV_BANDS},
        "preprocess": asdict(p),
        "features": asdict(f),
    }
    return out, valid, mask, info


def write_entry(cache_dir, sid, arrays, valid, mask, info):
    cache_dir = Path(cache_dir)
    payload = dict(arrays)
    for k, v in valid.items():
        payload[f"valid_{k}"] = np.packbits(v)
    payload["artifact_mask"] = np.packbits(mask.flags)
    payload["artifact_mask_len"] = np.array([len(mask.flags)], dtype=np.int64)
    with open(cache_dir / f"{sid}.npz", "wb") as fh:
        np.savez(fh, **payload)
    (cache_dir / f"{sid}.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def read_entry(cache_dir, sid):
    """Returns ``(arrays, valid, artifact_flags)``."""
    with np.load(Path(cache_dir) / f"{sid}.npz") as z:
        arrays = {k: z[k] for k in ARRAY_KEYS}
        valid = {k: np.unpackbits(z[f"valid_{k}"])[: arrays[k].shape[0]].astype(bool)
                 for k in ("eeg_power", "hrv_time", "hrv_freq")}
        n = int(z["artifact_mask_len"][0])
        flags = np.unpackbits(z["artifact_mask"])[:n].astype(bool)
    return arrays, valid, flags


def _prepare_one(args):
    path, cfg_dict, cache_dir = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    rec = read_recording(path)
    arrays, valid, mask, info = prepare_subject(rec, cfg)
    write_entry(cache_dir, rec.subject_id, arrays, valid, mask, info)
    return rec.subject_id


def prepare_cohort(cohort_dir, cache_dir, cfg: ExperimentConfig, force=False, workers=None):
    """Filter the cohort, then prepare and cache every included subject.

    Returns ``(manifest, skipped)``; ``skipped`` is True when an existing
    cache was reused. Per-subject failures are logged and recorded as
    exclusions; the run continues.
    """
    cohort_dir, cache_dir = Path(cohort_dir), Path(cache_dir)
    manifest_path = cache_dir / MANIFEST_FILE
    if manifest_path.exists() and not force:
        return load_manifest(cache_dir), True
    cache_dir.mkdir(parents=True, exist_ok=True)
    scores = read_scores(cohort_dir / SCORES_FILE)
    paths, included, excluded, table = {}, [], [], {}
    for path in list_recordings(cohort_dir):
        try:
            rec = read_recording(path)
        except CogPSGError as exc:
            log.warning("skipping %s: %s", path, exc)
            excluded.append((path.stem, exc.code))
            continue
        # one subject at a time keeps memory flat; the rules are per-subject anyway
        m = filter_cohort([rec], scores, tuple(cfg.data.required_channels), cfg.preprocess.crop_s,
                          cfg.data.corrupt_zero_fraction)
        paths[rec.subject_id] = path
        included += m.included
        excluded += m.excluded
        table.update(m.score_table)
        del rec
    manifest = CohortManifest(sorted(included), sorted(excluded), table)
    jobs = [(paths[sid], cfg.to_dict(), cache_dir) for sid in manifest.included]
    workers = worker_count() if workers is None else workers
    done, failed = [], []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [(job[0], ex.submit(_prepare_one, job)) for job in jobs]
            for path, fut in futures:
                try:
                    done.append(fut.result())
                except Exception as exc:  # per-subject failure, continue
                    log.warning("prepare failed for %s: %s", path, exc)
                    failed.append((path.stem, getattr(exc, "code", "PREPARE_FAILED")))
    else:
        for job in jobs:
            try:
                done.append(_prepare_one(job))
            except Exception as exc:
                log.warning("prepare failed for %s: %s", job[0], exc)
                failed.append((job[0].stem, getattr(exc, "code", "PREPARE_FAILED")))
    manifest = CohortManifest(
        included=sorted(done),
        excluded=sorted(manifest.excluded + failed),
        score_table={sid: manifest.score_table[sid] for sid in sorted(done)},
    )
    manifest_path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest, False


def load_manifest(cache_dir):
    d = json.loads((Path(cache_dir) / MANIFEST_FILE).read_text())
    return CohortManifest(d["included"], [tuple(e) for e in d["excluded"]], d["score_table"])


def load_cohort_arrays(cache_dir, subject_ids):
    """Stack cached arrays into ``{key: [N, ...]}`` in ``subject_ids`` order."""
    stacks = {k: [] for k in ARRAY_KEYS}
    for sid in subject_ids:
        arrays, _, _ = read_entry(cache_dir, sid)
        for k in ARRAY_KEYS:
            stacks[k].append(arrays[k])
    return {k: np.stack(v) for k, v in stacks.items()}
