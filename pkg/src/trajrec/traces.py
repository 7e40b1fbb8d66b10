"""GPS trace ingestion and masked-task generation.

Pipeline: :func:`parse_gpx` -> :func:`filter_trace` (length window, date
floor, activity tag) -> :func:`make_masked_task` (one small and one large
gap per trajectory) -> :func:`stratified_split`.
"""

from __future__ import annotations

import bisect
import datetime as dt
import enum
import logging
import math
import random
import re
from collections import defaultdict
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import gpxpy
import gpxpy.gpx

from .errors import EmptyTrace, InfeasibleMask, ParseError
from .geo import GeoPoint, haversine_distance, path_length

log = logging.getLogger(__name__)

MIN_TRACE_M = 500.0
MAX_TRACE_M = 30_000.0
MIN_UPLOAD_DATE = dt.date(2024, 1, 1)

# masked length ranges (m) per gap kind
GAP_RANGES = {"small": (200.0, 500.0), "large": (500.0, 2900.0)}
MIN_CONTEXT_POINTS = 5
MIN_CONTEXT_M = 100.0


class Activity(str, enum.Enum):
    HIKING = "hiking"
    DRIVING = "driving"
    WALKING = "walking"
    CYCLING = "cycling"
    BUS = "bus"
    TRAIN = "train"
    BOAT = "boat"
    FLYING = "flying"


class RejectReason(str, enum.Enum):
    TOO_SHORT = "TooShort"
    TOO_LONG = "TooLong"
    TOO_OLD = "TooOld"
    UNKNOWN_ACTIVITY = "UnknownActivity"


# Replaceable keyword fixture; matched against lower-cased word tokens.
ACTIVITY_KEYWORDS: dict[Activity, tuple[str, ...]] = {
    Activity.CYCLING: (
        "bike", "bikes", "biking", "bicycle", "cycling", "cycle", "cycled", "mtb",
        "ebike", "gravel", "velo", "fahrrad", "radtour",
    ),
    Activity.HIKING: ("hike", "hikes", "hiking", "hiked", "trail", "trek", "trekking", "wandern", "wanderung"),
    Activity.DRIVING: ("drive", "driving", "drove", "car", "auto", "roadtrip", "motorbike", "motorcycle"),
    Activity.BUS: ("bus", "buses", "coach"),
    Activity.TRAIN: ("train", "railway", "rail", "tram", "metro", "subway", "zug"),
    Activity.WALKING: ("walk", "walks", "walking", "walked", "stroll", "spaziergang", "run", "running", "jog", "jogging"),
    Activity.BOAT: ("boat", "ferry", "sail", "sailing", "kayak", "canoe", "cruise"),
    Activity.FLYING: ("flight", "fly", "flying", "plane", "paragliding", "glider"),
}

_KEYWORD_INDEX = {kw: act for act, kws in ACTIVITY_KEYWORDS.items() for kw in kws}

ActivityHook = Callable[[str, str], "Activity | None"]


@dataclass(frozen=True, kw_only=True)
class RawTrace:
    id: str
    name: str = ""
    description: str = ""
    upload_date: dt.date | None = None
    region: str = ""
    points: tuple[GeoPoint, ...]
    times: tuple[float | None, ...] = ()

    def __post_init__(self) -> None:
        if not self.points:
            raise EmptyTrace(f"trace {self.id!r} has no points")
        if not self.times:
            object.__setattr__(self, "times", (None,) * len(self.points))
        if len(self.times) != len(self.points):
            raise ValueError("times must align with points")
        stamped = [t for t in self.times if t is not None]
        if any(b < a for a, b in zip(stamped, stamped[1:])):
            raise ParseError(f"trace {self.id!r} has decreasing timestamps")


@dataclass(frozen=True, kw_only=True)
class Trajectory(RawTrace):
    activity: Activity
    total_length: float


@dataclass(frozen=True)
class Rejected:
    trace_id: str
    reason: RejectReason
    detail: str = ""


@dataclass(frozen=True, kw_only=True)
class MaskedTask:
    task_id: str
    trace_id: str
    gap_kind: str
    activity: Activity
    region: str
    prefix: tuple[GeoPoint, ...]
    prefix_times: tuple[float | None, ...]
    ground_truth: tuple[GeoPoint, ...]
    ground_truth_times: tuple[float | None, ...]
    suffix: tuple[GeoPoint, ...]
    suffix_times: tuple[float | None, ...]
    masked_length: float
    seed: int | None = None

    @property
    def p_s(self) -> GeoPoint:
        return self.prefix[-1]

    @property
    def p_e(self) -> GeoPoint:
        return self.suffix[0]


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    task_ids: list[str] = field(default_factory=list)


# --- GPX -------------------------------------------------------------------


def _epoch(t: dt.datetime | None) -> float | None:
    if t is None:
        return None
    if t.tzinfo is None:
        t = t.replace(tzinfo=dt.timezone.utc)
    return t.timestamp()


def parse_gpx(data: bytes | str, *, trace_id: str = "", region: str = "") -> RawTrace:
    """Flatten every track segment of a GPX document into one :class:`RawTrace`.

    The upload date is taken from ``<metadata><time>`` when present, else from
    the first timestamped point.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig", errors="replace")
    try:
        doc = gpxpy.parse(data)
    except Exception as exc:  # gpxpy raises several unrelated types
        raise ParseError(f"malformed GPX: {exc}") from exc

    points: list[GeoPoint] = []
    times: list[float | None] = []
    for track in doc.tracks:
        for segment in track.segments:
            for pt in segment.points:
                try:
                    points.append(GeoPoint(float(pt.latitude), float(pt.longitude)))
                except ValueError as exc:
                    raise ParseError(str(exc)) from exc
                times.append(_epoch(pt.time))
    if not points:
        raise EmptyTrace(f"GPX {trace_id!r} contains no track points")

    name = doc.name or (doc.tracks[0].name if doc.tracks and doc.tracks[0].name else "") or ""
    description = doc.description or (doc.tracks[0].description if doc.tracks else "") or ""
    upload = doc.time
    if upload is None:
        first = next((t for t in times if t is not None), None)
        upload = dt.datetime.fromtimestamp(first, dt.timezone.utc) if first is not None else None
    return RawTrace(
        id=trace_id,
        name=name,
        description=description,
        upload_date=upload.date() if upload else None,
        region=region,
        points=tuple(points),
        times=tuple(times),
    )


def serialize_gpx(trace: RawTrace) -> bytes:
    """GPX 1.1 document for ``trace`` with coordinates rounded to 7 decimals."""
    doc = gpxpy.gpx.GPX()
    doc.name = trace.name or None
    doc.description = trace.description or None
    if trace.upload_date is not None:
        doc.time = dt.datetime.combine(trace.upload_date, dt.time(), dt.timezone.utc)
    track = gpxpy.gpx.GPXTrack()
    segment = gpxpy.gpx.GPXTrackSegment()
    for p, t in zip(trace.points, trace.times):
        when = dt.datetime.fromtimestamp(t, dt.timezone.utc) if t is not None else None
        segment.points.append(gpxpy.gpx.GPXTrackPoint(round(p.lat, 7), round(p.lon, 7), time=when))
    track.segments.append(segment)
    doc.tracks.append(track)
    return doc.to_xml(version="1.1").encode("utf-8")


# --- classification and filtering -------------------------------------------


def classify_activity(
    name: str, description: str = "", fallback: ActivityHook | None = None
) -> Activity | None:
    """Keyword lookup over name then description; earliest keyword wins.

    ``fallback`` is consulted only when no keyword matches (e.g. an LLM
    classifier for non-English text).
    """
    for text in (name, description):
        for token in re.findall(r"[a-z]+", (text or "").lower()):
            if token in _KEYWORD_INDEX:
                return _KEYWORD_INDEX[token]
    if fallback is not None:
        return fallback(name, description)
    return None


def filter_trace(
    raw: RawTrace,
    *,
    fallback: ActivityHook | None = None,
    min_length: float = MIN_TRACE_M,
    max_length: float = MAX_TRACE_M,
    min_date: dt.date = MIN_UPLOAD_DATE,
) -> Trajectory | Rejected:
    if raw.upload_date is None or raw.upload_date < min_date:
        return Rejected(raw.id, RejectReason.TOO_OLD, str(raw.upload_date))
    length = path_length(raw.points)
    if length < min_length:
        return Rejected(raw.id, RejectReason.TOO_SHORT, f"{length:.1f} m")
    if length > max_length:
        return Rejected(raw.id, RejectReason.TOO_LONG, f"{length:.1f} m")
    activity = getattr(raw, "activity", None) or classify_activity(raw.name, raw.description, fallback)
    if activity is None:
        return Rejected(raw.id, RejectReason.UNKNOWN_ACTIVITY)
    return Trajectory(
        id=raw.id,
        name=raw.name,
        description=raw.description,
        upload_date=raw.upload_date,
        region=raw.region,
        points=raw.points,
        times=raw.times,
        activity=Activity(activity),
        total_length=length,
    )


# --- masking -----------------------------------------------------------------


def _run_length(seg: Sequence[float], i: int, j: int) -> float:
    # path length of points[i..j] inclusive
    return math.fsum(seg[i:j])


def _context_ok(seg, i, j, n, min_context):
    return _run_length(seg, 0, i - 1) >= min_context and _run_length(seg, j + 1, n - 1) >= min_context


def make_masked_task(
    traj: Trajectory,
    kind: str,
    seed: int,
    *,
    min_points: int = MIN_CONTEXT_POINTS,
    min_context: float = MIN_CONTEXT_M,
    target: float | None = None,
) -> MaskedTask:
    """Hide the contiguous run whose path length is closest to a seeded target.

    The target is drawn uniformly from the gap kind's length range. Runs are
    restricted so at least ``min_points`` points and ``min_context`` meters of
    path remain on each side, and the hidden length stays inside the range.
    Ties go to the earliest run. ``target`` overrides the seeded draw.
    """
    if kind not in GAP_RANGES:
        raise ValueError(f"unknown gap kind {kind!r}")
    lo, hi = GAP_RANGES[kind]
    if target is None:
        target = random.Random(f"{traj.id}|{kind}|{seed}").uniform(lo, hi)

    n = len(traj.points)
    seg = [haversine_distance(a, b) for a, b in zip(traj.points, traj.points[1:])]
    cum = [0.0]
    for s in seg:
        cum.append(cum[-1] + s)
    i_lo, j_hi = min_points, n - 1 - min_points
    best: tuple[float, int, int, float] | None = None
    for i in range(i_lo, j_hi + 1):
        # first j with cum[j] - cum[i] >= target
        k = bisect.bisect_left(cum, cum[i] + target, lo=i)
        for j in range(max(i + 1, k - 2), min(j_hi, k + 2) + 1):
            length = _run_length(seg, i, j)
            if not lo <= length <= hi:
                continue
            err = abs(length - target)
            if best is None or err < best[0]:
                if _context_ok(seg, i, j, n, min_context):
                    best = (err, i, j, length)
    if best is None:
        raise InfeasibleMask(f"{traj.id}: no {kind} gap placement")
    _, i, j, length = best
    return MaskedTask(
        task_id=f"{traj.id}-{kind}",
        trace_id=traj.id,
        gap_kind=kind,
        activity=traj.activity,
        region=traj.region,
        prefix=traj.points[:i],
        prefix_times=traj.times[:i],
        ground_truth=traj.points[i : j + 1],
        ground_truth_times=traj.times[i : j + 1],
        suffix=traj.points[j + 1 :],
        suffix_times=traj.times[j + 1 :],
        masked_length=length,
        seed=seed,
    )


# --- splits ------------------------------------------------------------------


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    quotas = [n * r for r in ratios]
    counts = [math.floor(q + 1e-9) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[: n - sum(counts)]:
        counts[k] += 1
    return counts


def stratified_split(
    tasks: Iterable[MaskedTask],
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> dict[str, DatasetSplit]:
    """Proportional per-(activity, region) allotment of traces to splits.

    All variants of one trace travel together, so proportions are exact in
    traces and approximate in tasks.
    """
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    by_trace: dict[str, list[MaskedTask]] = defaultdict(list)
    for task in tasks:
        by_trace[task.trace_id].append(task)
    strata: dict[tuple[str, str], list[str]] = defaultdict(list)
    for trace_id, group in by_trace.items():
        strata[(Activity(group[0].activity).value, group[0].region)].append(trace_id)

    splits = {name: DatasetSplit(name) for name in ("train", "dev", "test")}
    rng = random.Random(seed)
    for key in sorted(strata):
        trace_ids = sorted(strata[key])
        rng.shuffle(trace_ids)
        counts = _largest_remainder(len(trace_ids), ratios)
        start = 0
        for name, count in zip(("train", "dev", "test"), counts):
            for trace_id in trace_ids[start : start + count]:
                splits[name].task_ids.extend(sorted(t.task_id for t in by_trace[trace_id]))
            start += count
    for s in splits.values():
        s.task_ids.sort()
    return splits
