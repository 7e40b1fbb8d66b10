"""Encoded polyline format (precision 1e-5), as returned by directions services."""

from __future__ import annotations

import math

from .errors import ParseError
from .geo import GeoPoint, Polyline

PRECISION = 1e5


def _quantize(x: float) -> int:
    return math.floor(x * PRECISION + 0.5)


def _encode_value(v: int, out: list[str]) -> None:
    v = ~(v << 1) if v < 0 else v << 1
    while v >= 0x20:
        out.append(chr((0x20 | (v & 0x1F)) + 63))
        v >>= 5
    out.append(chr(v + 63))


def encode_polyline(points: Polyline) -> str:
    out: list[str] = []
    prev_lat = prev_lon = 0
    for p in points:
        lat, lon = _quantize(p.lat), _quantize(p.lon)
        _encode_value(lat - prev_lat, out)
        _encode_value(lon - prev_lon, out)
        prev_lat, prev_lon = lat, lon
    return "".join(out)


def _decode_values(encoded: str) -> list[int]:
    values = []
    shift = acc = 0
    for pos, ch in enumerate(encoded):
        b = ord(ch) - 63
        if not 0 <= b < 64:
            raise ParseError(f"invalid polyline character {ch!r} at {pos}")
        acc |= (b & 0x1F) << shift
        shift += 5
        if b < 0x20:
            values.append(~(acc >> 1) if acc & 1 else acc >> 1)
            shift = acc = 0
    if shift:
        raise ParseError("truncated polyline: last chunk has its continuation bit set")
    return values


def decode_polyline(encoded: str) -> list[GeoPoint]:
    """Decode to points; coordinates are exact multiples of 1e-5 rounded to 5 decimals."""
    values = _decode_values(encoded)
    if len(values) % 2:
        raise ParseError("truncated polyline: odd number of coordinate values")
    points = []
    lat = lon = 0
    for dlat, dlon in zip(values[::2], values[1::2]):
        lat += dlat
        lon += dlon
        try:
            points.append(GeoPoint(round(lat / PRECISION, 5), round(lon / PRECISION, 5)))
        except ValueError as exc:
            raise ParseError(f"decoded coordinate out of range: {exc}") from exc
    return points
