"""Web-mercator tile math, quadkeys, and aerial-image window assembly.

The map at zoom level z is a square of 256 * 2**z pixels; tiles are 256 px.
A quadkey encodes a tile as one base-4 digit per zoom level, interleaving the
y and x bits from the most significant end.  Aerial images are 224 x 224 px
windows cut from the stitched tiles around a latitude/longitude, so a window
never touches more than four tiles.
"""

from __future__ import annotations

import io
import logging
import math
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

TILE_SIZE = 256
MIN_ZOOM = 1
MAX_ZOOM = 23
MAX_LATITUDE = 85.05112878  # atan(sinh(pi)) in degrees; mercator singularity beyond
DEFAULT_WINDOW = 224
DEFAULT_ZOOM = 20


class TileError(Exception):
    """Raised for malformed tiles or exhausted fetch retries."""


@dataclass(frozen=True)
class TileCoord:
    x: int
    y: int
    zoom: int

    def __post_init__(self) -> None:
        if not MIN_ZOOM <= self.zoom <= MAX_ZOOM:
            raise ValueError(f"zoom out of range {MIN_ZOOM}..{MAX_ZOOM}: {self.zoom}")
        n = 1 << self.zoom
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise ValueError(f"tile ({self.x}, {self.y}) outside zoom-{self.zoom} grid")


@dataclass(frozen=True)
class WindowPlan:
    """Pixel window centered on a location plus the tiles that cover it."""

    tiles: tuple[TileCoord, ...]
    crop_origin: tuple[int, int]  # global pixel coordinates of the window's top-left
    size: int = DEFAULT_WINDOW
    zoom: int = DEFAULT_ZOOM
    clamped: bool = False  # True when the window was pushed back inside the map


@dataclass(frozen=True)
class AerialImage:
    pixels: np.ndarray  # (size, size, 3) uint8
    source_quadkeys: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected HxWx3 pixels, got shape {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {self.pixels.dtype}")


def map_size(zoom: int) -> int:
    return TILE_SIZE << zoom


def latlon_to_global_pixel(lat: float, lon: float, zoom: int) -> tuple[float, float]:
    """Project WGS84 degrees onto global map pixels at ``zoom``.

    Longitude maps linearly; latitude through the mercator log term.  Results
    are clipped to [0, map_size - 1] so the poles land on the map edge.
    """
    if not -MAX_LATITUDE <= lat <= MAX_LATITUDE:
        raise ValueError(f"latitude outside mercator range +/-{MAX_LATITUDE}: {lat}")
    if not -180.0 <= lon < 180.0:
        raise ValueError(f"longitude outside [-180, 180): {lon}")
    size = map_size(zoom)
    sin_lat = math.sin(math.radians(lat))
    px = (lon + 180.0) / 360.0 * size
    py = (0.5 - math.log((1.0 + sin_lat) / (1.0 - sin_lat)) / (4.0 * math.pi)) * size
    px = min(max(px, 0.0), size - 1.0)
    py = min(max(py, 0.0), size - 1.0)
    return px, py


def global_pixel_to_latlon(px: float, py: float, zoom: int) -> tuple[float, float]:
    """Inverse projection of :func:`latlon_to_global_pixel` (before clipping)."""
    size = map_size(zoom)
    lon = px / size * 360.0 - 180.0
    lat = math.degrees(math.asin(math.tanh(2.0 * math.pi * (0.5 - py / size))))
    return lat, lon


def latlon_to_tile(lat: float, lon: float, zoom: int) -> TileCoord:
    px, py = latlon_to_global_pixel(lat, lon, zoom)
    return TileCoord(x=int(px) // TILE_SIZE, y=int(py) // TILE_SIZE, zoom=zoom)


def tile_to_quadkey(tile: TileCoord) -> str:
    """Interleave y/x bits into base-4 digits, most significant bit first."""
    digits = []
    for i in range(tile.zoom - 1, -1, -1):
        digit = ((tile.y >> i) & 1) * 2 + ((tile.x >> i) & 1)
        digits.append(str(digit))
    return "".join(digits)


def quadkey_to_tile(quadkey: str) -> TileCoord:
    if not quadkey:
        raise ValueError("empty quadkey")
    x = y = 0
    for ch in quadkey:
        if ch not in "0123":
            raise ValueError(f"invalid quadkey digit {ch!r} in {quadkey!r}")
        digit = int(ch)
        x = (x << 1) | (digit & 1)
        y = (y << 1) | (digit >> 1)
    return TileCoord(x=x, y=y, zoom=len(quadkey))


def quadkey_for_location(lat: float, lon: float, zoom: int = DEFAULT_ZOOM) -> str:
    return tile_to_quadkey(latlon_to_tile(lat, lon, zoom))


def plan_window(
    lat: float, lon: float, zoom: int = DEFAULT_ZOOM, size: int = DEFAULT_WINDOW
) -> WindowPlan:
    """Plan the ``size``-px window centered on a location.

    Lists every tile whose 256-px extent intersects the window (1 to 4 tiles
    for size < 256).  A window that would stick out past the map edge is
    clamped back inside and flagged.
    """
    if not 0 < size <= TILE_SIZE:
        raise ValueError(f"window size must be in 1..{TILE_SIZE}: {size}")
    px, py = latlon_to_global_pixel(lat, lon, zoom)
    limit = map_size(zoom) - size
    ox = int(round(px)) - size // 2
    oy = int(round(py)) - size // 2
    clamped = not (0 <= ox <= limit and 0 <= oy <= limit)
    if clamped:
        log.warning("window at (%.6f, %.6f) extends past the map edge; clamping", lat, lon)
        ox = min(max(ox, 0), limit)
        oy = min(max(oy, 0), limit)
    tiles = tuple(
        TileCoord(x=tx, y=ty, zoom=zoom)
        for ty in range(oy // TILE_SIZE, (oy + size - 1) // TILE_SIZE + 1)
        for tx in range(ox // TILE_SIZE, (ox + size - 1) // TILE_SIZE + 1)
    )
    return WindowPlan(tiles=tiles, crop_origin=(ox, oy), size=size, zoom=zoom, clamped=clamped)


class TileClient:
    """Source of encoded tile images, keyed by tile coordinate."""

    def get(self, tile: TileCoord) -> bytes:
        raise NotImplementedError


class FilesystemTileClient(TileClient):
    """Serves tiles from ``root/<zoom>/<quadkey>.png``; the test double."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.requests = 0

    def get(self, tile: TileCoord) -> bytes:
        self.requests += 1
        path = self.root / str(tile.zoom) / f"{tile_to_quadkey(tile)}.png"
        if not path.exists():
            raise TileError(f"no tile at {path}")
        return path.read_bytes()


class HttpTileClient(TileClient):
    """Fetches tiles over HTTP from a URL template.

    The template may use ``{quadkey}``, ``{x}``, ``{y}`` and ``{z}``
    placeholders.  Transient failures are retried with exponential backoff.
    """

    def __init__(
        self,
        url_template: str,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 10.0,
        sleep=time.sleep,
    ):
        self.url_template = url_template
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sleep = sleep

    def get(self, tile: TileCoord) -> bytes:
        import requests

        url = self.url_template.format(
            quadkey=tile_to_quadkey(tile), x=tile.x, y=tile.y, z=tile.zoom
        )
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = requests.get(url, timeout=self.timeout)
                response.raise_for_status()
                return response.content
            except Exception as exc:  # noqa: BLE001 - every failure is retryable here
                last_error = exc
                log.warning("tile fetch failed (attempt %d/%d): %s", attempt + 1, self.retries + 1, exc)
        raise TileError(f"fetch failed after {self.retries + 1} attempts: {last_error}")


class CachingTileClient(TileClient):
    """Disk cache in front of another client, laid out ``cache/<zoom>/<quadkey>.png``.

    Writes are serialized per quadkey so concurrent fetches of the same tile
    do not interleave.
    """

    def __init__(self, inner: TileClient, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, tile: TileCoord) -> bytes:
        quadkey = tile_to_quadkey(tile)
        path = self.cache_dir / str(tile.zoom) / f"{quadkey}.png"
        if path.exists():
            return path.read_bytes()
        with self._lock_for(quadkey):
            if path.exists():
                return path.read_bytes()
            data = self.inner.get(tile)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
            return data


def decode_tile(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise TileError(f"malformed tile image: {exc}") from exc
    if pixels.shape[:2] != (TILE_SIZE, TILE_SIZE):
        raise TileError(f"expected {TILE_SIZE}x{TILE_SIZE} tile, got {pixels.shape[:2]}")
    return pixels


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    return buf.getvalue()


def fetch_and_stitch(client: TileClient, plan: WindowPlan) -> AerialImage:
    """Fetch the plan's tiles, paste them row-major, and crop the window."""
    xs = sorted({t.x for t in plan.tiles})
    ys = sorted({t.y for t in plan.tiles})
    canvas = np.zeros((len(ys) * TILE_SIZE, len(xs) * TILE_SIZE, 3), dtype=np.uint8)
    quadkeys = []
    for tile in plan.tiles:
        pixels = decode_tile(client.get(tile))
        row = ys.index(tile.y)
        col = xs.index(tile.x)
        canvas[
            row * TILE_SIZE : (row + 1) * TILE_SIZE,
            col * TILE_SIZE : (col + 1) * TILE_SIZE,
        ] = pixels
        quadkeys.append(tile_to_quadkey(tile))
    ox, oy = plan.crop_origin
    local_x = ox - xs[0] * TILE_SIZE
    local_y = oy - ys[0] * TILE_SIZE
    crop = canvas[local_y : local_y + plan.size, local_x : local_x + plan.size]
    return AerialImage(pixels=crop.copy(), source_quadkeys=tuple(quadkeys))
