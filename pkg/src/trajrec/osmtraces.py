"""Download public GPS traces from openstreetmap.org.

The public trace list is read from the site's RSS feeds (optionally per tag),
which carry the trace name, description and upload date. The original files
are then fetched from ``/trace/<id>/data`` and re-serialized as GPX with the
listing metadata attached, ready for ``trajrec ingest``.
"""

from __future__ import annotations

import bz2
import datetime as dt
import email.utils
import gzip
import io
import logging
import re
import time
import zipfile
from collections.abc import Callable, Iterable
from dataclasses import dataclass, replace
from pathlib import Path
from xml.etree import ElementTree

import httpx

from .errors import FetchError, ParseError
from .geo import GeoPoint
from .traces import parse_gpx, serialize_gpx

log = logging.getLogger(__name__)

OSM_BASE_URL = "https://www.openstreetmap.org"
_TRACE_LINK = re.compile(r"/traces/(\d+)")
_TAGS = re.compile(r"<[^>]+>")


@dataclass(frozen=True)
class TraceListing:
    id: str
    name: str
    description: str
    upload_date: dt.date | None
    user: str = ""


def parse_trace_rss(data: bytes | str) -> list[TraceListing]:
    """Listings from an OSM traces RSS document, in feed order."""
    try:
        root = ElementTree.fromstring(data)
    except ElementTree.ParseError as exc:
        raise ParseError(f"bad RSS: {exc}") from exc
    out = []
    for item in root.iter("item"):
        link = item.findtext("link") or ""
        m = _TRACE_LINK.search(link)
        if not m:
            continue
        user = link.split("/user/", 1)[1].split("/", 1)[0] if "/user/" in link else ""
        when = item.findtext("pubDate")
        date = email.utils.parsedate_to_datetime(when).date() if when else None
        desc = _TAGS.sub(" ", item.findtext("description") or "")
        out.append(TraceListing(m.group(1), (item.findtext("title") or "").strip(), " ".join(desc.split()), date, user))
    return out


def unpack_trace_file(data: bytes) -> bytes:
    """Undo the compression OSM keeps original uploads in (gzip, bzip2, zip)."""
    if data[:2] == b"\x1f\x8b":
        return unpack_trace_file(gzip.decompress(data))
    if data[:3] == b"BZh":
        return unpack_trace_file(bz2.decompress(data))
    if data[:4] == b"PK\x03\x04":
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            names = sorted(n for n in zf.namelist() if n.lower().endswith(".gpx"))
            if not names:
                raise ParseError("zip archive holds no .gpx file")
            return zf.read(names[0])
    return data


# coarse continent boxes (south, west, north, east); first match wins
_REGIONS = [
    ("oceania", (-50.0, 110.0, -10.0, 180.0)),
    ("asia", (-11.0, 60.0, 82.0, 180.0)),
    ("europe", (34.0, -25.0, 72.0, 60.0)),
    ("africa", (-35.0, -20.0, 38.0, 55.0)),
    ("north_america", (7.0, -170.0, 84.0, -50.0)),
    ("south_america", (-56.0, -82.0, 13.0, -34.0)),
]


def coarse_region(p: GeoPoint) -> str:
    for name, (s, w, n, e) in _REGIONS:
        if s <= p.lat <= n and w <= p.lon <= e:
            return name
    return "other"


def fetch_public_traces(
    out_dir: str | Path,
    *,
    tags: Iterable[str] = ("",),
    limit: int = 100,
    pages: int = 5,
    base_url: str = OSM_BASE_URL,
    client: httpx.Client | None = None,
    delay_s: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> list[Path]:
    """Save up to ``limit`` public traces as ``<out_dir>/<id>.gpx``.

    Existing files are kept and count toward the limit. An empty tag walks
    the global list. Individual download failures are logged and skipped.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    saved = sorted(out.glob("*.gpx"))
    seen = {p.stem for p in saved}
    own = client is None
    client = client or httpx.Client(timeout=60.0, follow_redirects=True, headers={"User-Agent": "trajrec"})
    try:
        for tag in tags:
            for page in range(1, pages + 1):
                if len(saved) >= limit:
                    return saved
                prefix = f"/traces/tag/{tag}" if tag else "/traces"
                feed = f"{base_url}{prefix}/page/{page}/rss" if page > 1 else f"{base_url}{prefix}/rss"
                try:
                    resp = client.get(feed)
                    resp.raise_for_status()
                    listings = parse_trace_rss(resp.content)
                except (httpx.HTTPError, ParseError) as exc:
                    raise FetchError(f"trace list {feed}: {exc}") from exc
                if not listings:
                    break
                for item in listings:
                    if len(saved) >= limit:
                        return saved
                    if item.id in seen:
                        continue
                    seen.add(item.id)
                    path = _download(client, base_url, item, out)
                    if path is not None:
                        saved.append(path)
                    sleep(delay_s)
    finally:
        if own:
            client.close()
    return saved


def _download(client: httpx.Client, base_url: str, item: TraceListing, out: Path) -> Path | None:
    try:
        resp = client.get(f"{base_url}/trace/{item.id}/data")
        resp.raise_for_status()
        raw = parse_gpx(unpack_trace_file(resp.content), trace_id=item.id)
    except (httpx.HTTPError, ParseError, ValueError, OSError) as exc:
        log.warning("trace %s skipped: %s", item.id, exc)
        return None
    trace = replace(
        raw,
        name=item.name or raw.name,
        description=item.description or raw.description,
        upload_date=item.upload_date or raw.upload_date,
    )
    path = out / f"{item.id}.gpx"
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(serialize_gpx(trace))
    tmp.replace(path)
    return path
