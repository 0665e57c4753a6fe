"""Experiment procedure: SGT calibration, online trials, post-trial tests, report."""

from __future__ import annotations

import csv
import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import N_CLASSES, SAMPLE_RATE
from .adapt import AdaptConfig, Adapter
from .emg import FilterConfig, StreamFilter, batch_windows, extract_tdpsd_batch
from .errors import ConfigError, UsageError
from .loop import JsonlSink, LoopConfig, ModelHandle, SimSource, run_loop
from .nn import (
    AdamState,
    ModelConfig,
    OptimizerConfig,
    init_model,
    load_checkpoint,
    predict_batch,
    save_checkpoint,
    train_epochs,
)
from .sim import Agent, ShiftParams, SyntheticEmg, TrialConfig, UserProfile, compute_metrics, load_scene
from .sim.config import digest, load_json

log = logging.getLogger(__name__)

# independent rng streams derived from the one user-facing seed
STREAM_SGT, STREAM_INIT, STREAM_TRAIN, STREAM_TRIAL_EMG, STREAM_AGENT, STREAM_ADAPT = range(1, 7)

FINAL_WINDOW = 60.0
STAGES = ("initial", "post_na", "post_ciil")
STAGE_DIRS = {"initial": "sgt", "post_na": "eval_post_na", "post_ciil": "eval_post_ciil"}


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


@dataclass(frozen=True)
class SgtConfig:
    reps_total: int = 5
    rep_seconds: float = 3.0
    train_reps: int = 3
    gestures: int = N_CLASSES

    def __post_init__(self):
        if not 0 < self.train_reps < self.reps_total:
            raise ConfigError("train_reps must leave at least one test rep")

    @property
    def test_reps(self) -> int:
        return self.reps_total - self.train_reps


@dataclass
class SgtData:
    frames: np.ndarray  # (n, 6, 8)
    labels: np.ndarray
    reps: np.ndarray

    def split(self, train: bool, cfg: SgtConfig):
        mask = self.reps < cfg.train_reps if train else self.reps >= cfg.train_reps
        return self.frames[mask], self.labels[mask]


def synth_sgt(profile: UserProfile, seed: int, shift: ShiftParams | None = None,
              cfg: SgtConfig | None = None) -> SgtData:
    """Prompted session: every rep of every gesture, windowed on its own.

    The noise realisation depends only on ``seed``, so the shifted session is
    the same recording seen through the shifted electrode model.
    """
    cfg = cfg or SgtConfig()
    gen = SyntheticEmg(profile, shift, rng_for(seed, STREAM_SGT))
    filt = StreamFilter(FilterConfig())
    n = int(round(cfg.rep_seconds * SAMPLE_RATE))
    frames, labels, reps = [], [], []
    for rep in range(cfg.reps_total):
        for g in range(cfg.gestures):
            data = filt.process(gen.samples(g, n))
            f = extract_tdpsd_batch(batch_windows(data))
            frames.append(f)
            labels += [g] * len(f)
            reps += [rep] * len(f)
    return SgtData(np.concatenate(frames), np.asarray(labels), np.asarray(reps))


def confusion_matrix(true, pred, n=N_CLASSES) -> np.ndarray:
    cm = np.zeros((n, n), dtype=np.int64)
    np.add.at(cm, (np.asarray(true), np.asarray(pred)), 1)
    return cm


def evaluate(model, frames, labels) -> dict:
    present = set(np.unique(labels).tolist())
    missing = sorted(set(range(N_CLASSES)) - present)
    if missing:
        raise ConfigError(f"test set lacks classes {missing}")
    pred, _ = predict_batch(model, frames)
    cm = confusion_matrix(labels, pred)
    per_class = (np.diag(cm) / cm.sum(axis=1)).tolist()
    return {
        "accuracy": float(np.trace(cm) / cm.sum()),
        "per_class_accuracy": per_class,
        "confusion": cm.tolist(),
        "n_windows": int(cm.sum()),
        "predictions": pred,
        "labels": np.asarray(labels),
    }


# file helpers ---------------------------------------------------------------

def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    return json.loads(Path(path).read_text())


def write_confusion_csv(path, cm):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + [str(j) for j in range(len(cm))])
        for i, row in enumerate(cm):
            w.writerow([str(i)] + [str(int(v)) for v in row])


def _write_eval(out: Path, result: dict, meta: dict):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "predicted"])
        w.writerows(zip(result["labels"].tolist(), result["predictions"].tolist()))
    write_confusion_csv(out / "confusion.csv", result["confusion"])
    doc = {k: v for k, v in result.items() if k not in ("predictions", "labels")}
    _write_json(out / "eval.json", {**doc, **meta})


def _profile(src):
    doc = load_json(src, "profile")
    return UserProfile.from_doc(doc), doc


def _shift(src):
    doc = load_json(src, "shift")
    return ShiftParams.from_doc(doc), doc


# commands -------------------------------------------------------------------

def cmd_sgt(profile=None, seed: int = 0, out="run", opt_cfg: OptimizerConfig | None = None,
            sgt_cfg: SgtConfig | None = None) -> dict:
    """Calibrate on the first reps, test on the rest, write the baseline checkpoint."""
    prof, pdoc = _profile(profile)
    sgt_cfg = sgt_cfg or SgtConfig()
    opt_cfg = opt_cfg or OptimizerConfig()
    out = Path(out) / "sgt"
    out.mkdir(parents=True, exist_ok=True)
    data = synth_sgt(prof, seed, None, sgt_cfg)
    x_tr, y_tr = data.split(True, sgt_cfg)
    x_te, y_te = data.split(False, sgt_cfg)
    model = init_model(ModelConfig(), seed=int(rng_for(seed, STREAM_INIT).integers(2**31)))
    opt = AdamState.zeros_like(model)
    stats = train_epochs(model, x_tr, np.eye(N_CLASSES)[y_tr], opt_cfg.epochs_offline, opt_cfg,
                         seed=rng_for(seed, STREAM_TRAIN), opt=opt)
    save_checkpoint(model, opt, out / "checkpoint.ckpt")
    _write_json(out / "profile.json", pdoc)
    result = evaluate(model, x_te, y_te)
    meta = {
        "stage": "initial",
        "seed": seed,
        "n_train": int(len(y_tr)),
        "n_test": int(len(y_te)),
        "train_losses": [round(v, 8) for v in stats.epoch_losses],
        "profile_digest": digest(pdoc),
        "shift_digest": None,
        "sgt": asdict(sgt_cfg),
        "optimizer": opt_cfg.to_dict(),
    }
    _write_eval(out, result, meta)
    return {**meta, "accuracy": result["accuracy"], "confusion": result["confusion"]}


def cmd_eval(checkpoint, out=None, seed: int = 0, profile=None, shift=None, stage: str | None = None,
             sgt_cfg: SgtConfig | None = None) -> dict:
    """Accuracy and confusion on the held-out SGT reps for ``seed``.

    ``shift`` applies the covariate shift to the test recording; post-trial
    tests leave it off, matching a screen-guided retest.
    """
    if not Path(checkpoint).exists():
        raise UsageError(f"checkpoint {checkpoint} does not exist; run its trial first")
    model, _ = load_checkpoint(checkpoint, ModelConfig())
    prof, pdoc = _profile(profile)
    sh, sdoc = (None, None) if shift is None else _shift(shift)
    sgt_cfg = sgt_cfg or SgtConfig()
    x_te, y_te = synth_sgt(prof, seed, sh, sgt_cfg).split(False, sgt_cfg)
    result = evaluate(model, x_te, y_te)
    meta = {
        "stage": stage,
        "seed": seed,
        "checkpoint_version": model.version,
        "profile_digest": digest(pdoc),
        "shift_digest": None if sdoc is None else digest(sdoc),
    }
    if out is not None:
        _write_eval(Path(out), result, meta)
    return {**meta, "accuracy": result["accuracy"], "per_class_accuracy": result["per_class_accuracy"],
            "confusion": result["confusion"], "n_windows": result["n_windows"]}


def cmd_trial(checkpoint, mode="na", scene=None, shift=None, profile=None, seed: int = 0, out="run",
              duration: float = 300.0, adapt_cfg: AdaptConfig | None = None) -> dict:
    mode = mode.upper()
    if mode not in ("NA", "CIIL"):
        raise UsageError(f"mode must be na or ciil, got {mode.lower()!r}")
    # everything that can fail on configuration fails here, before simulating
    model, opt = load_checkpoint(checkpoint, ModelConfig())
    prof, pdoc = _profile(profile)
    sh, sdoc = _shift(shift)
    scene_doc = load_json(scene, "scene")
    trial_cfg = TrialConfig(duration=duration, seed=seed)
    sc = load_scene(scene_doc, trial_cfg)
    loop_cfg = LoopConfig(mode=mode, duration=duration)

    out = Path(out) / f"trial_{mode.lower()}"
    out.mkdir(parents=True, exist_ok=True)
    handle = ModelHandle(model)
    adapter = None
    if mode == "CIIL":
        adapter = Adapter(handle, cfg=adapt_cfg or AdaptConfig(),
                          seed=int(rng_for(seed, STREAM_ADAPT).integers(2**31)))
    agent = Agent(sc, prof, rng_for(seed, STREAM_AGENT))
    source = SimSource(sc, agent, SyntheticEmg(prof, sh, rng_for(seed, STREAM_TRIAL_EMG)))
    sink = JsonlSink(out / "trial.jsonl")
    t0 = time.perf_counter()
    try:
        trial = run_loop(source, handle, adapter, sink, loop_cfg)
    finally:
        sink.close()
    wall = time.perf_counter() - t0

    final = handle.get()
    if mode == "NA":
        save_checkpoint(final, opt, out / "checkpoint.ckpt")
    else:
        save_checkpoint(final, adapter.opt, out / "checkpoint.ckpt")
    metrics = trial_metrics(trial.events(), trial_cfg)
    adapt = [r for r in trial.records if r["event_type"] == "adapt"]
    meta = {
        "mode": mode,
        "seed": seed,
        "duration": duration,
        "n_predictions": trial.n_predictions,
        "adapt_ticks": trial.adapt_ticks,
        "adapt_applied": sum(not r["skipped"] for r in adapt),
        "versions": sorted(set(trial.versions)),
        "truncated": trial.truncated,
        "checkpoint_in": str(checkpoint),
        "profile_digest": digest(pdoc),
        "shift_digest": digest(sdoc),
        "scene_digest": digest(scene_doc),
        "trial": trial_cfg.to_dict(),
        "metrics": metrics,
    }
    _write_json(out / "trial.json", meta)
    _write_json(out / "timing.json", {"wall_seconds": round(wall, 3)})
    return {**meta, "wall_seconds": wall}


def trial_metrics(events, trial_cfg: TrialConfig) -> dict:
    events = list(events)
    full = compute_metrics(events, trial_cfg)
    end = trial_cfg.duration
    last = compute_metrics(events, trial_cfg, window=(end - FINAL_WINDOW, end + 1e-9))
    out = {k: full[k] for k in ("objects_completed", "online_pseudo_accuracy", "intent_accuracy", "n_windows")}
    out["avg_time_per_object"] = full.get("avg_time_per_object")
    out["per_object_times"] = full["per_object_times"]
    out["intent_accuracy_final60"] = last["intent_accuracy"]
    return out


def read_trial_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _report_schema():
    text = resources.files("ciil.data").joinpath("schemas").joinpath("report.schema.json").read_text()
    return json.loads(text)


REQUIRED = {
    "sgt": ("sgt/eval.json", "sgt/checkpoint.ckpt"),
    "na trial": ("trial_na/trial.jsonl", "trial_na/trial.json"),
    "ciil trial": ("trial_ciil/trial.jsonl", "trial_ciil/trial.json"),
    "post-na eval": ("eval_post_na/eval.json",),
    "post-ciil eval": ("eval_post_ciil/eval.json",),
}


def cmd_report(run_dir) -> dict:
    """Assemble report.json plus CSVs from the artifacts under ``run_dir``.

    Online numbers are recomputed from the JSONL trial logs and confusion
    matrices from the per-window prediction CSVs.
    """
    run = Path(run_dir)
    for what, files in REQUIRED.items():
        for f in files:
            if not (run / f).exists():
                raise UsageError(f"missing {what} ({f}) in {run}")

    evals = {}
    for stage in STAGES:
        d = run / STAGE_DIRS[stage]
        with open(d / "predictions.csv") as fh:
            rows = list(csv.DictReader(fh))
        cm = confusion_matrix([int(r["label"]) for r in rows], [int(r["predicted"]) for r in rows])
        evals[stage] = {"meta": _read_json(d / "eval.json"), "cm": cm}

    sgt_meta = evals["initial"]["meta"]
    scene_cfg = None
    online = {}
    for mode in ("na", "ciil"):
        meta = _read_json(run / f"trial_{mode}" / "trial.json")
        trial_cfg = TrialConfig(**meta["trial"])
        scene_cfg = meta["scene_digest"]
        records = read_trial_log(run / f"trial_{mode}" / "trial.jsonl")
        m = trial_metrics([r for r in records if r["event_type"] != "adapt"], trial_cfg)
        online[mode] = {
            "objects_completed": m["objects_completed"],
            "avg_time_per_object": m["avg_time_per_object"],
            "intent_accuracy": m["intent_accuracy"],
            "intent_accuracy_final60": m["intent_accuracy_final60"],
            "online_pseudo_accuracy": m["online_pseudo_accuracy"],
            "adapt_ticks": sum(r["event_type"] == "adapt" for r in records),
            "adapt_applied": sum(r["event_type"] == "adapt" and not r["skipped"] for r in records),
            "model_versions": sorted({r["model_version"] for r in records if r["event_type"] == "window"}),
            "seed": meta["seed"],
        }

    def acc(cm):
        return float(np.trace(cm) / cm.sum())

    def per_class(cm):
        return (np.diag(cm) / cm.sum(axis=1)).tolist()

    pc = {s: per_class(evals[s]["cm"]) for s in STAGES}
    from .sim import load_scene_config

    gestures = load_scene_config(None).gestures
    unmapped = sorted(gestures.unmapped_classes)
    forgetting = {
        str(c): {
            "name": gestures.names[c],
            "initial": pc["initial"][c],
            "post_na": pc["post_na"][c],
            "post_ciil": pc["post_ciil"][c],
            "delta_ciil": pc["post_ciil"][c] - pc["initial"][c],
            "delta_na": pc["post_na"][c] - pc["initial"][c],
        }
        for c in unmapped
    }
    report = {
        "accuracy_initial": acc(evals["initial"]["cm"]),
        "accuracy_post_na": acc(evals["post_na"]["cm"]),
        "accuracy_post_ciil": acc(evals["post_ciil"]["cm"]),
        "per_class_accuracy": pc,
        "confusion": {s: evals[s]["cm"].tolist() for s in STAGES},
        "forgetting": forgetting,
        "online": online,
        "seeds": {"sgt": sgt_meta["seed"], "na": online["na"]["seed"], "ciil": online["ciil"]["seed"]},
        "config_digests": {
            "profile": sgt_meta["profile_digest"],
            "scene": scene_cfg,
            "shift": _read_json(run / "trial_ciil" / "trial.json")["shift_digest"],
        },
        "subjective": None,
    }
    jsonschema.validate(report, _report_schema())
    (run / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for s in STAGES:
        write_confusion_csv(run / f"confusion_{s}.csv", evals[s]["cm"])
    fields = ["mode", "objects_completed", "avg_time_per_object", "intent_accuracy",
              "intent_accuracy_final60", "online_pseudo_accuracy", "adapt_ticks", "adapt_applied"]
    with open(run / "online_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for mode in ("na", "ciil"):
            w.writerow([mode] + [online[mode][f] for f in fields[1:]])
    return report


def cmd_run(out="run", seed: int = 0, profile=None, scene=None, shift=None, duration: float = 300.0) -> dict:
    """The whole procedure in protocol order."""
    out = Path(out)
    cmd_sgt(profile, seed, out)
    ckpt = out / "sgt" / "checkpoint.ckpt"
    for mode in ("na", "ciil"):
        cmd_trial(ckpt, mode, scene, shift, profile, seed, out, duration)
        cmd_eval(out / f"trial_{mode}" / "checkpoint.ckpt", out / f"eval_post_{mode}", seed, profile,
                 stage=f"post_{mode}")
    return cmd_report(out)


def stage_checkpoint(run_dir, stage: str) -> Path:
    """Checkpoint a post-trial test must use; refuses if its trial has not run."""
    run = Path(run_dir)
    if stage == "initial":
        path = run / "sgt" / "checkpoint.ckpt"
    elif stage in ("post_na", "post_ciil"):
        path = run / f"trial_{stage[5:]}" / "checkpoint.ckpt"
    else:
        raise UsageError(f"unknown stage {stage!r}")
    if not path.exists():
        raise UsageError(f"{stage} test needs {path}; run that step first")
    return path


def clean_run_dir(run_dir):
    shutil.rmtree(run_dir, ignore_errors=True)
