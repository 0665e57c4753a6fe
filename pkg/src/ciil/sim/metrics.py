"""Online trial metrics computed from the event log alone."""

from __future__ import annotations

from ..errors import LogIntegrityError


def _check_holds(events):
    held = None
    completed = set()
    for ev in events:
        kind = ev["event_type"]
        oid = ev.get("object_id")
        if kind == "grasp_begin":
            if held is not None:
                raise LogIntegrityError(
                    f"grasp of {oid!r} at t={ev['sim_time']} while {held!r} is still held"
                )
            if oid in completed:
                raise LogIntegrityError(f"completed object {oid!r} grasped again")
            held = oid
        elif kind in ("drop", "completed"):
            if held != oid:
                raise LogIntegrityError(f"{kind} of {oid!r} which is not held")
            held = None
            if kind == "completed":
                completed.add(oid)


def compute_metrics(events, trial_cfg=None, window=None) -> dict:
    """Summarize a trial log.

    ``window=(t0, t1)`` restricts the per-window accuracies to records with
    ``t0 <= sim_time < t1``; completion counts always use the whole trial.
    """
    events = list(events)
    _check_holds(events)
    first_approach: dict[str, float] = {}
    completed_at: dict[str, float] = {}
    for ev in events:
        kind = ev["event_type"]
        if kind == "approach":
            first_approach.setdefault(ev["object_id"], ev["sim_time"])
        elif kind == "completed":
            completed_at[ev["object_id"]] = ev["sim_time"]

    per_object = []
    for oid in sorted(set(first_approach) | set(completed_at)):
        t0 = first_approach.get(oid)
        t1 = completed_at.get(oid)
        per_object.append({
            "object_id": oid,
            "first_approach": t0,
            "completed": t1,
            "time": None if t0 is None or t1 is None else round(t1 - t0, 6),
        })
    done = [p["time"] for p in per_object if p["time"] is not None]

    in_radius = positive = total = correct = 0
    for ev in events:
        if ev["event_type"] != "window":
            continue
        if window is not None and not (window[0] <= ev["sim_time"] < window[1]):
            continue
        total += 1
        correct += ev["predicted"] == ev.get("intent")
        suit = ev.get("suitability", "none")
        if suit != "none":
            in_radius += 1
            positive += suit == "positive"

    out = {
        "objects_completed": len(completed_at),
        "per_object_times": per_object,
        "online_pseudo_accuracy": positive / in_radius if in_radius else None,
        "intent_accuracy": correct / total if total else None,
        "n_windows": total,
    }
    if trial_cfg is not None and len(completed_at) > trial_cfg.n_objects:
        raise LogIntegrityError("more completions than objects")
    if done:
        out["avg_time_per_object"] = sum(done) / len(done)
    return out
