"""Command-line harness.

Typical flow::

    trajrec fetch-traces --out gpx/ --limit 200
    trajrec ingest gpx/ --out data/
    trajrec mask --dataset data/dataset.jsonl --seed 0 --out data/tasks.jsonl
    trajrec split --tasks data/tasks.jsonl --seed 0 --out data/splits.json
    trajrec fetch-net --tasks data/tasks.jsonl --cache-dir .cache/overpass
    trajrec run --tasks data/tasks.jsonl --method linear-hmm --out runs/hmm.jsonl
    trajrec eval --tasks data/tasks.jsonl --recons runs/hmm.jsonl --out runs/hmm.records.jsonl
    trajrec report --records runs/hmm.records.jsonl --tasks data/tasks.jsonl --recons runs/hmm.jsonl --out report/

Every output is JSON Lines, CSV or GeoJSON and is written in input order, so
identical inputs give byte-identical files whatever ``--parallelism`` is.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import re
import sys
from collections.abc import Callable, Iterable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import yaml

from . import storage
from .baselines import DEFAULT_SPACING_M, linear_baseline, linear_interpolate, linear_plus_hmm
from .config import RunConfig, load_config
from .errors import FetchError, InfeasibleMask, ParseError, TrajrecError
from .geo import GeoPoint, expanded_bbox
from .llm.pipeline import run_two_stage
from .metrics import EvalRecord, aggregate, evaluate, table1, to_csv
from .osmtraces import coarse_region, fetch_public_traces
from .polyline import decode_polyline
from .records import Reconstruction
from .roadnet import GAP_BUFFERS_M, Representation, RoadNetwork, build_graph, fetch_network, overpass_query, read_cached
from .traces import GAP_RANGES, MaskedTask, Rejected, filter_trace, make_masked_task, parse_gpx, stratified_split

log = logging.getLogger("trajrec")

EMPTY_NETWORK = build_graph({"elements": []})


# --- small file helpers -------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def _jsonl(records: Iterable[dict]) -> str:
    return "".join(storage.dumps(r) + "\n" for r in records)


def _completed(path: Path) -> list[dict]:
    """Records already in ``path``; a torn last line (crash mid-write) is cut off."""
    if not path.exists():
        return []
    good, keep = [], 0
    with open(path, "rb") as fh:
        for line in fh:
            if not line.endswith(b"\n"):
                break
            try:
                good.append(json.loads(line))
            except json.JSONDecodeError:
                break
            keep += len(line)
    if keep != path.stat().st_size:
        log.warning("%s: dropping a partial trailing record", path)
        with open(path, "r+b") as fh:
            fh.truncate(keep)
    return good


def _ordered_append(path: Path, results: Iterator[dict]) -> int:
    """Single writer: append each result as it arrives, flushed line by line."""
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        for rec in results:
            fh.write(storage.dumps(rec) + "\n")
            fh.flush()
            n += 1
    return n


def _pmap(fn: Callable, items: Sequence, parallelism: int) -> Iterator:
    if parallelism <= 1:
        return map(fn, items)
    pool = ThreadPoolExecutor(max_workers=parallelism)

    def gen():
        try:
            yield from pool.map(fn, items)
        finally:
            pool.shutdown(wait=True, cancel_futures=True)

    return gen()


def _summary(**counts) -> None:
    print(json.dumps(counts, sort_keys=True))


# --- networks -----------------------------------------------------------------


def task_query(task: MaskedTask) -> str:
    """Overpass query for the task's gap-aware box around p_s and p_e."""
    box = expanded_bbox(task.p_s, task.p_e, GAP_BUFFERS_M[task.gap_kind])
    return overpass_query(str(getattr(task.activity, "value", task.activity)), box)


def load_network(task: MaskedTask, cache_dir: str | os.PathLike) -> RoadNetwork | None:
    data = read_cached(cache_dir, task_query(task))
    return build_graph(data) if data is not None else None


# --- commands -----------------------------------------------------------------


def cmd_fetch_traces(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out or "gpx")
    saved = fetch_public_traces(out, tags=args.tag or ("",), limit=args.limit, pages=args.pages)
    _summary(saved=len(saved))
    return 0


def _region_map(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return {str(k): str(v) for k, v in data.items()}


def cmd_ingest(args: argparse.Namespace, cfg: RunConfig) -> int:
    regions = _region_map(args.region_map)
    out = Path(args.out or "data")
    accepted, rejected = [], []
    files = sorted(Path(args.gpx_dir).glob("*.gpx"))
    for path in files:
        trace_id = path.stem
        try:
            raw = parse_gpx(path.read_bytes(), trace_id=trace_id)
        except (ParseError, ValueError, OSError) as exc:
            log.warning("%s unreadable: %s", path.name, exc)
            rejected.append({"trace_id": trace_id, "reason": "Unreadable", "detail": str(exc)})
            continue
        region = regions.get(trace_id) or coarse_region(raw.points[0])
        result = filter_trace(dataclasses.replace(raw, region=region))
        if isinstance(result, Rejected):
            rejected.append({"trace_id": result.trace_id, "reason": result.reason.value, "detail": result.detail})
        else:
            accepted.append(storage.trajectory_to_dict(result))
    _write_text(out / "dataset.jsonl", _jsonl(accepted))
    _write_text(out / "rejections.jsonl", _jsonl(rejected))
    _summary(files=len(files), accepted=len(accepted), rejected=len(rejected))
    return 0


def cmd_mask(args: argparse.Namespace, cfg: RunConfig) -> int:
    dataset = args.dataset or cfg.dataset
    if not dataset:
        raise SystemExit("mask: --dataset is required")
    out = Path(args.out or "tasks.jsonl")
    tasks, infeasible = [], []
    trajectories = storage.load_trajectories(dataset)
    for traj in trajectories:
        for kind in GAP_RANGES:
            try:
                tasks.append(storage.task_to_dict(make_masked_task(traj, kind, cfg.seed)))
            except InfeasibleMask as exc:
                log.info("%s", exc)
                infeasible.append({"trace_id": traj.id, "gap_kind": kind, "detail": str(exc)})
    _write_text(out, _jsonl(tasks))
    _write_text(out.with_name(out.stem + ".infeasible.jsonl"), _jsonl(infeasible))
    _summary(trajectories=len(trajectories), tasks=len(tasks), infeasible=len(infeasible))
    return 0


def _tasks(args: argparse.Namespace, cfg: RunConfig) -> list[MaskedTask]:
    path = args.tasks or cfg.tasks
    if not path:
        raise SystemExit(f"{args.command}: --tasks is required")
    return storage.load_tasks(path)


def cmd_split(args: argparse.Namespace, cfg: RunConfig) -> int:
    splits = stratified_split(_tasks(args, cfg), seed=cfg.seed)
    doc = {name: s.task_ids for name, s in splits.items()}
    out = Path(args.out or "splits.json")
    if out.is_dir():
        out = out / "splits.json"
    _write_text(out, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    _summary(**{name: len(ids) for name, ids in doc.items()})
    return 0


def cmd_fetch_net(args: argparse.Namespace, cfg: RunConfig) -> int:
    tasks = _tasks(args, cfg)

    def one(task: MaskedTask) -> dict:
        query = task_query(task)
        try:
            build_graph(fetch_network(query, cfg.overpass_endpoint, cfg.cache_dir))
        except (FetchError, ParseError) as exc:
            log.warning("%s: network missing (%s)", task.task_id, exc)
            return {"task_id": task.task_id, "status": "missing", "error": str(exc)}
        return {"task_id": task.task_id, "status": "ok"}

    results = list(_pmap(one, tasks, cfg.parallelism))
    if args.out:
        _write_text(Path(args.out), _jsonl(results))
    missing = sum(r["status"] == "missing" for r in results)
    _summary(tasks=len(tasks), ok=len(results) - missing, missing=missing)
    return 0


def _load_polylines(path: str) -> dict[str, list[GeoPoint]]:
    """``task_id`` -> points from JSON Lines rows holding ``polyline`` (encoded) or ``points``."""
    out = {}
    for row in storage.read_jsonl(path):
        if "polyline" in row:
            out[row["task_id"]] = decode_polyline(row["polyline"])
        else:
            out[row["task_id"]] = [GeoPoint(float(a), float(b)) for a, b, *_ in row["points"]]
    return out


def make_runner(method: str, cfg: RunConfig, provider_name: str | None = None) -> tuple[str, Callable[[MaskedTask], Reconstruction]]:
    """Method tag and per-task reconstruction function for a ``--method`` value."""
    if method == "linear":
        return method, lambda t: Reconstruction(t.task_id, method, linear_baseline(t).points)
    if method == "linear-hmm":

        def hmm(t: MaskedTask) -> Reconstruction:
            net = load_network(t, cfg.cache_dir) or EMPTY_NETWORK
            out = linear_plus_hmm(t, net)
            return Reconstruction(t.task_id, method, out.points, road_ids=out.road_ids, fallback_flag=out.fallback, error=out.error)

        return method, hmm
    if method == "llm" or method.startswith("llm:"):
        name = method.partition(":")[2] or provider_name
        if not name or name not in cfg.providers:
            raise SystemExit(f"unknown provider {name!r}; configured: {sorted(cfg.providers)}")
        provider = cfg.providers[name].build()
        tag = f"llm:{name}"

        def llm(t: MaskedTask) -> Reconstruction:
            net = load_network(t, cfg.cache_dir) or EMPTY_NETWORK
            return run_two_stage(t, net, provider, tag, cfg.pipeline)

        return tag, llm
    if method.startswith("polyline-file:"):
        path = method.partition(":")[2]
        table = _load_polylines(path)
        tag = f"polyline:{Path(path).stem}"

        def poly(t: MaskedTask) -> Reconstruction:
            if t.task_id in table and table[t.task_id]:
                return Reconstruction(t.task_id, tag, table[t.task_id])
            line = linear_interpolate(t.p_s, t.p_e, DEFAULT_SPACING_M)
            return Reconstruction(t.task_id, tag, line, fallback_flag=True, error="no polyline for task")

        return tag, poly
    raise SystemExit(f"unknown method {method!r}")


def _guarded(tag: str, fn: Callable[[MaskedTask], Reconstruction]) -> Callable[[MaskedTask], dict]:
    def run(task: MaskedTask) -> dict:
        try:
            recon = fn(task)
        except Exception as exc:  # a single task must never abort the run
            log.exception("%s failed", task.task_id)
            line = linear_interpolate(task.p_s, task.p_e, DEFAULT_SPACING_M)
            recon = Reconstruction(task.task_id, tag, line, fallback_flag=True, error=f"{type(exc).__name__}: {exc}")
        return recon.to_dict()

    return run


def cmd_run(args: argparse.Namespace, cfg: RunConfig) -> int:
    tasks = _tasks(args, cfg)
    out = Path(args.out or cfg.out or "reconstructions.jsonl")
    tag, fn = make_runner(args.method or cfg.method, cfg, args.provider)
    done: set[str] = set()
    if args.resume:
        done = {r["task_id"] for r in _completed(out)}
    elif out.exists():
        out.unlink()
    pending = [t for t in tasks if t.task_id not in done]
    written = _ordered_append(out, _pmap(_guarded(tag, fn), pending, cfg.parallelism))
    meta = {
        "method": tag,
        "seed": cfg.seed,
        "tasks": len(tasks),
        "representation": cfg.pipeline.representation.value,
        "grounding": cfg.pipeline.grounding,
    }
    _write_text(out.with_name(out.name + ".meta.json"), json.dumps(meta, sort_keys=True, indent=1) + "\n")
    _summary(tasks=len(tasks), skipped=len(done), written=written)
    return 0


def _load_recons(paths: Sequence[str]) -> dict[str, dict[str, Reconstruction]]:
    """method -> task_id -> reconstruction, over every given file."""
    out: dict[str, dict[str, Reconstruction]] = {}
    for path in paths:
        for row in storage.read_jsonl(path):
            r = Reconstruction.from_dict(row)
            out.setdefault(r.method, {})[r.task_id] = r
    return out


def evaluate_all(tasks: Sequence[MaskedTask], recons: dict[str, dict[str, Reconstruction]], cfg: RunConfig) -> list[EvalRecord]:
    def one(job: tuple[MaskedTask, str]) -> EvalRecord:
        task, method = job
        recon = recons[method].get(task.task_id)
        net = load_network(task, cfg.cache_dir) if recon is not None and recon.plan is not None else None
        rec = evaluate(task, recon, net, cfg.metrics)
        rec.method = method
        return rec

    jobs = [(t, m) for m in sorted(recons) for t in tasks]
    return list(_pmap(one, jobs, cfg.parallelism))


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    tasks = _tasks(args, cfg)
    recons = _load_recons(args.recons)
    records = evaluate_all(tasks, recons, cfg)
    out = Path(args.out or "records.jsonl")
    _write_text(out, _jsonl(r.to_dict() for r in records))
    _write_text(out.with_name(out.stem + ".table1.csv"), to_csv(table1(records)))
    _summary(records=len(records), missing=sum(r.missing for r in records), fallbacks=sum(r.fallback_flag for r in records))
    return 0


# --- report -------------------------------------------------------------------

STYLE = {
    "prefix": {"stroke": "#7f7f7f", "stroke-width": 2},
    "suffix": {"stroke": "#7f7f7f", "stroke-width": 2},
    "ground_truth": {"stroke": "#1f77b4", "stroke-width": 4},
    "reconstruction": {"stroke": "#d62728", "stroke-width": 3},
    "p_s": {"marker-color": "#2ca02c", "marker-symbol": "s"},
    "p_e": {"marker-color": "#9467bd", "marker-symbol": "e"},
}


def _geometry(points: Sequence[GeoPoint]) -> dict:
    coords = [[round(p.lon, 7), round(p.lat, 7)] for p in points]
    if len(coords) == 1:
        return {"type": "Point", "coordinates": coords[0]}
    return {"type": "LineString", "coordinates": coords}


def _feature(layer: str, points: Sequence[GeoPoint], **props) -> dict:
    return {"type": "Feature", "geometry": _geometry(points), "properties": {"layer": layer, **STYLE[layer], **props}}


def task_geojson(task: MaskedTask, recons: Iterable[Reconstruction]) -> dict:
    """FeatureCollection overlaying context, the hidden segment, reconstructions and endpoints."""
    features = [
        _feature("prefix", task.prefix),
        _feature("suffix", task.suffix),
        _feature("ground_truth", task.ground_truth, length_m=round(task.masked_length, 3)),
    ]
    for r in recons:
        if r.points:
            features.append(_feature("reconstruction", r.points, method=r.method, fallback=r.fallback_flag))
    features.append(_feature("p_s", [task.p_s]))
    features.append(_feature("p_e", [task.p_e]))
    return {
        "type": "FeatureCollection",
        "properties": {"task_id": task.task_id, "gap_kind": task.gap_kind, "activity": task.activity.value, "region": task.region},
        "features": features,
    }


def _safe_name(task_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", task_id)


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    records = [EvalRecord.from_dict(r) for r in storage.read_jsonl(args.records)]
    out = Path(args.out or "report")
    tables = {
        "by_method.csv": ("method",),
        "by_gap.csv": ("method", "gap_kind"),
        "by_region.csv": ("method", "region"),
        "by_activity.csv": ("method", "activity"),
    }
    for name, keys in tables.items():
        _write_text(out / name, to_csv(aggregate(records, keys)))
    _write_text(out / "table1.csv", to_csv(table1(records)))
    _write_text(out / "records.jsonl", _jsonl(r.to_dict() for r in sorted(records, key=lambda r: (r.task_id, r.method))))
    n_geo = 0
    if args.tasks:
        recons = _load_recons(args.recons or [])
        wanted = {r.task_id for r in records}
        for task in storage.load_tasks(args.tasks):
            if task.task_id not in wanted:
                continue
            layers = [recons[m][task.task_id] for m in sorted(recons) if task.task_id in recons[m]]
            doc = task_geojson(task, layers)
            _write_text(out / "geojson" / f"{_safe_name(task.task_id)}.geojson", json.dumps(doc, sort_keys=True) + "\n")
            n_geo += 1
    _summary(records=len(records), geojson=n_geo)
    return 0


# --- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="run seed (recorded in outputs)")
    common.add_argument("--cache-dir", help="Overpass response cache")
    common.add_argument("--parallelism", type=int, help="worker threads")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="trajrec", description="Masked GPS-trajectory reconstruction harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch-traces", parents=[common], help="download public OSM GPS traces")
    p.add_argument("--tag", action="append", help="OSM trace tag to list (repeatable)")
    p.add_argument("--limit", type=int, default=100)
    p.add_argument("--pages", type=int, default=5)
    p.set_defaults(func=cmd_fetch_traces)

    p = sub.add_parser("ingest", parents=[common], help="filter and tag a GPX directory")
    p.add_argument("gpx_dir")
    p.add_argument("--region-map", help="YAML/JSON mapping trace id -> region")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("mask", parents=[common], help="cut small and large gaps per trajectory")
    p.add_argument("--dataset")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("split", parents=[common], help="stratified train/dev/test split")
    p.add_argument("--tasks")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fetch-net", parents=[common], help="download road networks for tasks")
    p.add_argument("--tasks")
    p.add_argument("--endpoint", help="Overpass interpreter URL")
    p.set_defaults(func=cmd_fetch_net)

    p = sub.add_parser("run", parents=[common], help="reconstruct masked segments")
    p.add_argument("--tasks")
    p.add_argument("--method", help="linear | linear-hmm | llm:<provider> | polyline-file:<path>")
    p.add_argument("--provider", help="provider name for --method llm")
    p.add_argument("--representation", choices=[r.value for r in Representation])
    p.add_argument("--no-grounding", action="store_true")
    p.add_argument("--resume", action="store_true", help="skip task ids already in --out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[common], help="score reconstructions")
    p.add_argument("--tasks")
    p.add_argument("--recons", action="append", required=True)
    p.add_argument("--tau", type=float, help="PoT distance threshold (m)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="aggregate CSVs and GeoJSON overlays")
    p.add_argument("--records", required=True)
    p.add_argument("--tasks")
    p.add_argument("--recons", action="append")
    p.set_defaults(func=cmd_report)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file values overridden by any flags given on the command line."""
    cfg = load_config(args.config)
    for flag in ("seed", "cache_dir", "parallelism", "out"):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, flag, value)
    if getattr(args, "endpoint", None):
        cfg.overpass_endpoint = args.endpoint
    if getattr(args, "tau", None) is not None:
        cfg.metrics = dataclasses.replace(cfg.metrics, tau=args.tau)
    pipe = cfg.pipeline
    if getattr(args, "representation", None):
        pipe = dataclasses.replace(pipe, representation=Representation(args.representation))
    if getattr(args, "no_grounding", False):
        pipe = dataclasses.replace(pipe, grounding=False)
    cfg.pipeline = pipe
    if cfg.parallelism < 1:
        raise SystemExit("--parallelism must be >= 1")
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, resolve_config(args))
    except (TrajrecError, OSError, ValueError) as exc:
        print(f"trajrec {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
