"""JSON Lines persistence for trajectories, tasks and downstream records.

Coordinates are written with 7 decimals; a point is ``[lat, lon]`` or
``[lat, lon, ts]`` when a timestamp (epoch seconds) is known.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any

from .geo import GeoPoint
from .traces import Activity, MaskedTask, Trajectory


def _coord(x: float) -> float:
    return round(x, 7)


def encode_points(points, times=None) -> list[list[float]]:
    times = times or (None,) * len(points)
    out = []
    for p, t in zip(points, times):
        row = [_coord(p.lat), _coord(p.lon)]
        if t is not None:
            row.append(t)
        out.append(row)
    return out


def decode_points(rows) -> tuple[tuple[GeoPoint, ...], tuple[float | None, ...]]:
    points = tuple(GeoPoint(float(r[0]), float(r[1])) for r in rows)
    times = tuple(float(r[2]) if len(r) > 2 and r[2] is not None else None for r in rows)
    return points, times


def trajectory_to_dict(traj: Trajectory) -> dict[str, Any]:
    return {
        "trace_id": traj.id,
        "name": traj.name,
        "description": traj.description,
        "upload_date": traj.upload_date.isoformat() if traj.upload_date else None,
        "activity": traj.activity.value,
        "region": traj.region,
        "total_length_m": round(traj.total_length, 3),
        "points": encode_points(traj.points, traj.times),
    }


def trajectory_from_dict(d: dict[str, Any]) -> Trajectory:
    points, times = decode_points(d["points"])
    return Trajectory(
        id=d["trace_id"],
        name=d.get("name", ""),
        description=d.get("description", ""),
        upload_date=dt.date.fromisoformat(d["upload_date"]) if d.get("upload_date") else None,
        region=d.get("region", ""),
        points=points,
        times=times,
        activity=Activity(d["activity"]),
        total_length=float(d["total_length_m"]),
    )


def task_to_dict(task: MaskedTask) -> dict[str, Any]:
    return {
        "task_id": task.task_id,
        "trace_id": task.trace_id,
        "gap_kind": task.gap_kind,
        "activity": Activity(task.activity).value,
        "region": task.region,
        "prefix": encode_points(task.prefix, task.prefix_times),
        "ground_truth": encode_points(task.ground_truth, task.ground_truth_times),
        "suffix": encode_points(task.suffix, task.suffix_times),
        "p_s": encode_points([task.p_s])[0],
        "p_e": encode_points([task.p_e])[0],
        "masked_length_m": task.masked_length,
        "seed": task.seed,
    }


def task_from_dict(d: dict[str, Any]) -> MaskedTask:
    prefix, prefix_times = decode_points(d["prefix"])
    gt, gt_times = decode_points(d["ground_truth"])
    suffix, suffix_times = decode_points(d["suffix"])
    return MaskedTask(
        task_id=d["task_id"],
        trace_id=d["trace_id"],
        gap_kind=d["gap_kind"],
        activity=Activity(d["activity"]),
        region=d.get("region", ""),
        prefix=prefix,
        prefix_times=prefix_times,
        ground_truth=gt,
        ground_truth_times=gt_times,
        suffix=suffix,
        suffix_times=suffix_times,
        masked_length=float(d["masked_length_m"]),
        seed=d.get("seed"),
    )


def dumps(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=False, separators=(",", ":"))


def write_jsonl(path: str | os.PathLike, records: Iterable[dict[str, Any]]) -> int:
    """Write ``records`` atomically; returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    n = 0
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    os.replace(tmp, path)
    return n


def append_jsonl(path: str | os.PathLike, record: dict[str, Any]) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(record) + "\n")
        fh.flush()


def read_jsonl(path: str | os.PathLike) -> Iterator[dict[str, Any]]:
    """Yield records; a torn final line (crash mid-write) is skipped."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for k, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError:
            if k >= len(lines) - 2:
                return
            raise


def load_tasks(path: str | os.PathLike) -> list[MaskedTask]:
    return [task_from_dict(d) for d in read_jsonl(path)]


def load_trajectories(path: str | os.PathLike) -> list[Trajectory]:
    return [trajectory_from_dict(d) for d in read_jsonl(path)]
