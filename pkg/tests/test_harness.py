import csv
import json
import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest

from ciil.cli import main
from ciil.errors import CheckpointError, CheckpointShapeError, ConfigError, UsageError
from ciil.harness import (
    SgtConfig,
    cmd_eval,
    cmd_report,
    cmd_run,
    cmd_sgt,
    cmd_trial,
    confusion_matrix,
    evaluate,
    rng_for,
    stage_checkpoint,
    synth_sgt,
)
from ciil.nn import ModelConfig, init_model, load_checkpoint, save_checkpoint
from ciil.sim import UserProfile


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cmd_run(out, seed=0, duration=20.0)
    return out


def test_rng_streams_independent():
    a = rng_for(0, 1).random(4)
    assert not np.allclose(a, rng_for(0, 2).random(4))
    assert np.array_equal(a, rng_for(0, 1).random(4))


def test_sgt_split_sizes():
    prof = UserProfile.from_doc(None)
    cfg = SgtConfig()
    data = synth_sgt(prof, 0, None, cfg)
    x_tr, y_tr = data.split(True, cfg)
    x_te, y_te = data.split(False, cfg)
    # 57 windows per 3 s rep, 8 gestures, 3 train reps and 2 test reps
    assert x_tr.shape == (1368, 6, 8) and x_te.shape == (912, 6, 8)
    assert np.bincount(y_te).tolist() == [114] * 8
    with pytest.raises(ConfigError):
        SgtConfig(train_reps=5)


def test_confusion_and_evaluate():
    cm = confusion_matrix([0, 1, 1, 2], [0, 1, 2, 2], n=3)
    assert cm.tolist() == [[1, 0, 0], [0, 1, 1], [0, 0, 1]]
    m = init_model(seed=0)
    with pytest.raises(ConfigError, match="lacks classes"):
        evaluate(m, np.zeros((3, 6, 8)), np.array([0, 1, 2]))


def test_sgt_artifacts(run_dir):
    sgt = run_dir / "sgt"
    for name in ("checkpoint.ckpt", "profile.json", "eval.json", "predictions.csv", "confusion.csv"):
        assert (sgt / name).exists(), name
    ev = json.loads((sgt / "eval.json").read_text())
    assert ev["n_train"] == 1368 and ev["n_test"] == 912
    with open(sgt / "confusion.csv") as fh:
        rows = list(csv.reader(fh))
    cm = np.array([[int(v) for v in r[1:]] for r in rows[1:]])
    assert cm.sum() == 912
    assert ev["accuracy"] == pytest.approx(np.trace(cm) / cm.sum())


def test_sgt_deterministic(tmp_path, run_dir):
    cmd_sgt(None, 0, tmp_path)
    assert (tmp_path / "sgt" / "checkpoint.ckpt").read_bytes() == (run_dir / "sgt" / "checkpoint.ckpt").read_bytes()
    assert (tmp_path / "sgt" / "eval.json").read_bytes() == (run_dir / "sgt" / "eval.json").read_bytes()


def test_eval_identity_on_training_checkpoint(run_dir):
    res = cmd_eval(run_dir / "sgt" / "checkpoint.ckpt", seed=0)
    ev = json.loads((run_dir / "sgt" / "eval.json").read_text())
    assert res["accuracy"] == ev["accuracy"]
    assert res["n_windows"] == 912
    assert np.array(res["confusion"]).sum() == 912


def test_shifted_eval_degrades(run_dir):
    clean = cmd_eval(run_dir / "sgt" / "checkpoint.ckpt", seed=0)["accuracy"]
    shifted = cmd_eval(run_dir / "sgt" / "checkpoint.ckpt", seed=0, shift={})["accuracy"]
    assert shifted < clean - 0.15


def test_na_checkpoint_byte_identical(run_dir):
    assert (run_dir / "trial_na" / "checkpoint.ckpt").read_bytes() == \
        (run_dir / "sgt" / "checkpoint.ckpt").read_bytes()


def test_ciil_checkpoint_moves(run_dir):
    meta = json.loads((run_dir / "trial_ciil" / "trial.json").read_text())
    assert meta["adapt_ticks"] == 10 and meta["adapt_applied"] >= 1
    base, _ = load_checkpoint(run_dir / "sgt" / "checkpoint.ckpt")
    after, opt = load_checkpoint(run_dir / "trial_ciil" / "checkpoint.ckpt")
    assert after.version > base.version
    assert opt.step > 0
    assert any(not np.array_equal(base.params[k], after.params[k]) for k in base.params)


def test_report_contents(run_dir):
    rep = json.loads((run_dir / "report.json").read_text())
    assert set(rep["forgetting"]) == {"0", "7"}
    for entry in rep["forgetting"].values():
        assert entry["delta_ciil"] == pytest.approx(entry["post_ciil"] - entry["initial"])
    assert len(rep["online"]["na"]["model_versions"]) == 1
    assert rep["subjective"] is None
    for s in ("initial", "post_na", "post_ciil"):
        assert (run_dir / f"confusion_{s}.csv").exists()
    with open(run_dir / "online_metrics.csv") as fh:
        assert [r["mode"] for r in csv.DictReader(fh)] == ["na", "ciil"]


def test_report_needs_ciil_trial(tmp_path, run_dir):
    import shutil

    for d in ("sgt", "trial_na", "eval_post_na"):
        shutil.copytree(run_dir / d, tmp_path / d)
    with pytest.raises(UsageError, match="missing ciil trial"):
        cmd_report(tmp_path)
    assert main(["report", "--run", str(tmp_path)]) == 1


def test_post_eval_requires_trial(tmp_path, run_dir):
    import shutil

    shutil.copytree(run_dir / "sgt", tmp_path / "sgt")
    assert stage_checkpoint(tmp_path, "initial").exists()
    with pytest.raises(UsageError):
        stage_checkpoint(tmp_path, "post_ciil")
    assert main(["eval", "--run", str(tmp_path), "--stage", "post_na"]) == 1
    with pytest.raises(UsageError):
        cmd_eval(tmp_path / "nope.ckpt")


def test_trial_checkpoint_mismatch_fails_early(tmp_path):
    nine = init_model(ModelConfig(classes=9), seed=0)
    save_checkpoint(nine, None, tmp_path / "nine.ckpt")
    t0 = time.perf_counter()
    with pytest.raises(CheckpointShapeError):
        cmd_trial(tmp_path / "nine.ckpt", "na", out=tmp_path)
    assert time.perf_counter() - t0 < 1.0
    assert not (tmp_path / "trial_na").exists()
    (tmp_path / "junk.ckpt").write_bytes(b"CIIL" + b"\x00" * 10)
    with pytest.raises(CheckpointError):
        cmd_trial(tmp_path / "junk.ckpt", "ciil", out=tmp_path)


def test_trial_bad_mode(run_dir, tmp_path):
    with pytest.raises(UsageError):
        cmd_trial(run_dir / "sgt" / "checkpoint.ckpt", "sometimes", out=tmp_path)


# cli ---------------------------------------------------------------------------

def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit) as err:
        main(["trial", "--checkpoint", "x", "--mode", "maybe"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 1
    assert main(["eval"]) == 1


def test_cli_config_errors(tmp_path):
    bad = tmp_path / "p.json"
    bad.write_text('{"gain_matrix": [[1]]}')
    assert main(["sgt", "--profile", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["sgt", "--profile", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bundle = tmp_path / "bundle.json"
    bundle.write_text('{"colour": {}}')
    assert main(["sgt", "--config", str(bundle), "--out", str(tmp_path)]) == 2
    bundle.write_text("{not json")
    assert main(["sgt", "--config", str(bundle), "--out", str(tmp_path)]) == 2


def test_cli_runtime_error(tmp_path):
    (tmp_path / "junk.ckpt").write_bytes(b"garbage")
    assert main(["trial", "--checkpoint", str(tmp_path / "junk.ckpt"), "--mode", "na",
                 "--out", str(tmp_path)]) == 3


def test_cli_eval_stage(run_dir, capsys):
    assert main(["eval", "--run", str(run_dir), "--stage", "post_ciil", "--out", str(run_dir / "tmp_eval")]) == 0
    out = json.loads(capsys.readouterr().out)
    ref = json.loads((run_dir / "eval_post_ciil" / "eval.json").read_text())
    assert out["accuracy"] == ref["accuracy"]
    assert main(["eval", "--checkpoint", str(run_dir / "sgt" / "checkpoint.ckpt"), "--with-shift"]) == 0
    shifted = json.loads(capsys.readouterr().out)["accuracy"]
    initial = json.loads((run_dir / "sgt" / "eval.json").read_text())["accuracy"]
    assert shifted < initial - 0.15


def test_cli_serve_sigterm(run_dir, tmp_path):
    env = dict(os.environ)
    proc = subprocess.Popen(
        [sys.executable, "-m", "ciil", "serve", "--checkpoint", str(run_dir / "sgt" / "checkpoint.ckpt"),
         "--endpoint", "127.0.0.1:0", "--out", str(tmp_path)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env)
    try:
        line = proc.stdout.readline()
        assert line.startswith("listening on ")
        from ciil.loop.client import ReplayClient

        client = ReplayClient(line.split()[-1])
        data = np.random.default_rng(0).standard_normal((8, 800))
        for lo in range(0, 800, 100):
            client.send("emg", {"channels": data[:, lo:lo + 100].tolist(), "start_index": lo})
        assert client.wait_for(lambda c: len(c.predictions()) == 5)
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=20) == 0
        client.close()
    finally:
        if proc.poll() is None:
            proc.kill()
    model, _ = load_checkpoint(tmp_path / "serve_checkpoint.ckpt")
    base, _ = load_checkpoint(run_dir / "sgt" / "checkpoint.ckpt")
    assert model.version == base.version
    records = [json.loads(ln) for ln in (tmp_path / "serve.jsonl").read_text().splitlines()]
    assert sum(r["event_type"] == "sent_prediction" for r in records) == 5
