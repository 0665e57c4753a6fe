"""Command-line entry point: ``ciil sgt|trial|eval|report|serve|run|replay``."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from .errors import CheckpointError, CheckpointShapeError, CiilError, ConfigError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_bundle(path):
    """``--config`` file: an object with optional profile/scene/shift entries."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    unknown = set(doc) - {"profile", "scene", "shift"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    return doc


def _pick(args, name):
    explicit = getattr(args, name, None)
    if explicit is not None:
        return explicit
    return _load_bundle(args.config).get(name)


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def cmd_sgt(args):
    from .harness import cmd_sgt

    res = cmd_sgt(_pick(args, "profile"), args.seed, args.out)
    _print({"accuracy": res["accuracy"], "n_train": res["n_train"], "n_test": res["n_test"],
            "checkpoint": str(Path(args.out) / "sgt" / "checkpoint.ckpt")})


def cmd_trial(args):
    from .harness import cmd_trial

    res = cmd_trial(args.checkpoint, args.mode, _pick(args, "scene"), _pick(args, "shift"),
                    _pick(args, "profile"), args.seed, args.out, args.duration)
    _print({k: res[k] for k in ("mode", "n_predictions", "adapt_ticks", "adapt_applied", "metrics")}
           | {"wall_seconds": round(res["wall_seconds"], 2)})


def cmd_eval(args):
    from .harness import STAGE_DIRS, cmd_eval, stage_checkpoint

    ckpt, out = args.checkpoint, args.out
    if args.stage is not None:
        if args.run is None:
            raise UsageError("--stage needs --run")
        ckpt = stage_checkpoint(args.run, args.stage)
        if out is None:
            out = Path(args.run) / STAGE_DIRS[args.stage]
    if ckpt is None:
        raise UsageError("eval needs --checkpoint or --run with --stage")
    shift = None
    if args.with_shift or args.shift is not None:
        from .sim.config import load_json

        shift = load_json(_pick(args, "shift"), "shift")
    res = cmd_eval(ckpt, out, args.seed, _pick(args, "profile"), shift, args.stage)
    _print({k: res[k] for k in ("accuracy", "per_class_accuracy", "confusion", "n_windows")})


def cmd_report(args):
    from .harness import cmd_report

    rep = cmd_report(args.run)
    _print({k: rep[k] for k in ("accuracy_initial", "accuracy_post_na", "accuracy_post_ciil")}
           | {"online": {m: {k: rep["online"][m][k] for k in ("objects_completed", "intent_accuracy_final60")}
                         for m in ("na", "ciil")}})


def cmd_run(args):
    from .harness import cmd_run

    rep = cmd_run(args.out, args.seed, _pick(args, "profile"), _pick(args, "scene"), _pick(args, "shift"),
                  args.duration)
    _print({k: rep[k] for k in ("accuracy_initial", "accuracy_post_na", "accuracy_post_ciil", "forgetting")})


def cmd_serve(args):
    from .adapt import Adapter
    from .loop import JsonlSink, LoopConfig, ModelHandle
    from .loop.server import serve
    from .nn import ModelConfig, load_checkpoint

    mode = args.mode.upper()
    cfg = LoopConfig(mode=mode, clock="wall", endpoint=args.endpoint)
    model, _ = load_checkpoint(args.checkpoint, ModelConfig())
    handle = ModelHandle(model)
    adapter = Adapter(handle, seed=args.seed) if mode == "CIIL" else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    sink = JsonlSink(out / "serve.jsonl")

    def ready(addr):
        print(f"listening on {addr[0]}:{addr[1]}", flush=True)

    try:
        summary = serve(args.endpoint, handle, adapter, cfg, stop_event=stop,
                        checkpoint_path=out / "serve_checkpoint.ckpt", sink=sink, on_ready=ready)
    finally:
        sink.close()
    _print(summary)


def cmd_replay(args):
    from .emg.io import read_stream_csv
    from .loop.client import replay

    data, _ = read_stream_csv(args.input)
    res = replay(args.endpoint, data, realtime=args.realtime)
    seqs = [m.seq for m in res["predictions"]]
    lat = sorted(res["latencies"])
    _print({
        "predictions": len(seqs),
        "gapless": seqs == list(range(len(seqs))),
        "predictions_per_second": len(seqs) / res["elapsed"] if res["elapsed"] > 0 else None,
        "latency_p50_ms": 1000 * lat[len(lat) // 2] if lat else None,
    })


def build_parser():
    p = _Parser(prog="ciil", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_default="run"):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="JSON with optional profile/scene/shift sections")
        sp.add_argument("--profile", help="user profile JSON")
        sp.add_argument("--out", default=out_default)

    sp = sub.add_parser("sgt", help="screen-guided calibration and initial test")
    common(sp)
    sp.set_defaults(func=cmd_sgt)

    sp = sub.add_parser("trial", help="online object-transport trial")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--mode", choices=("na", "ciil"), required=True)
    sp.add_argument("--scene")
    sp.add_argument("--shift")
    sp.add_argument("--duration", type=float, default=300.0)
    sp.set_defaults(func=cmd_trial)

    sp = sub.add_parser("eval", help="screen-guided test of a checkpoint")
    common(sp, out_default=None)
    sp.add_argument("--checkpoint")
    sp.add_argument("--run", help="run directory; with --stage picks the checkpoint")
    sp.add_argument("--stage", choices=("initial", "post_na", "post_ciil"))
    sp.add_argument("--shift")
    sp.add_argument("--with-shift", action="store_true", help="apply the covariate shift to the test reps")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="assemble report.json from a run directory")
    sp.add_argument("--run", "--out", dest="run", required=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("run", help="sgt, both trials, post tests and report")
    common(sp)
    sp.add_argument("--scene")
    sp.add_argument("--shift")
    sp.add_argument("--duration", type=float, default=300.0)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("serve", help="serve predictions over TCP")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--endpoint", default="127.0.0.1:8765")
    sp.add_argument("--mode", choices=("na", "ciil"), default="na")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="serve")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("replay", help="stream a recorded CSV to a server")
    sp.add_argument("--endpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--realtime", action="store_true")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, CiilError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
