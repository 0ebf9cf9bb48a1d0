"""Occupancy grids, disk-robot collision queries and line-of-sight tests.

Grid convention: ``cells[row, col]`` is the square
``[ox + col*res, ox + (col+1)*res] x [oy + row*res, oy + (row+1)*res]``.
Squares are closed, so a query that merely touches an occupied cell is
blocked.  PGM image row ``r`` becomes grid row ``r`` (no vertical flip).
"""
from __future__ import annotations

import math
import re
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

Point2 = Tuple[float, float]

OCCUPIED_BELOW = 128
SEGMENT_SPACING = 0.5  # collision samples every resolution * SEGMENT_SPACING


class MapFormatError(ValueError):
    """Raised for malformed or truncated PGM input."""


class OccupancyGrid:
    """Immutable boolean occupancy raster with a physical scale.

    Derived lookup tables (clearance map, per-column prefix counts) are built
    lazily on first use and never mutated afterwards.
    """

    def __init__(self, cells, resolution: float = 1.0, origin: Point2 = (0.0, 0.0)):
        cells = np.asarray(cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] == 0 or cells.shape[1] == 0:
            raise ValueError(f"occupancy must be a non-empty 2D array, got shape {cells.shape}")
        if not resolution > 0 or not math.isfinite(resolution):
            raise ValueError(f"resolution must be positive, got {resolution}")
        self._cells = cells.copy()
        self._cells.setflags(write=False)
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self._clearance = None
        self._col_prefix = None
        self._row_prefix = None

    @property
    def cells(self) -> np.ndarray:
        return self._cells

    @property
    def height(self) -> int:
        return self._cells.shape[0]

    @property
    def width(self) -> int:
        return self._cells.shape[1]

    @property
    def extent(self) -> Tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution

    @property
    def area(self) -> float:
        w, h = self.extent
        return w * h

    def bounds(self) -> Tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) in world coordinates."""
        w, h = self.extent
        return self.origin[0], self.origin[1], self.origin[0] + w, self.origin[1] + h

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x0, y0, x1, y1 = self.bounds()
        return (
            (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        )

    def to_pgm(self) -> bytes:
        """Binary P5 encoding (occupied = 0, free = 255), inverse of load_grid."""
        img = np.where(self._cells, 0, 255).astype(np.uint8)
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + img.tobytes()

    # lazily built tables -------------------------------------------------

    def _clearance_cells(self) -> np.ndarray:
        # distance (in cells) from each cell centre to the nearest occupied cell centre
        if self._clearance is None:
            if not self._cells.any():
                clr = np.full(self._cells.shape, np.inf)
            else:
                clr = ndimage.distance_transform_edt(~self._cells)
            clr.setflags(write=False)
            self._clearance = clr
        return self._clearance

    def _prefix(self, transpose: bool) -> np.ndarray:
        # prefix[c, r] = number of occupied cells in column c with row < r
        if transpose:
            if self._row_prefix is None:
                self._row_prefix = _strip_prefix(self._cells)
            return self._row_prefix
        if self._col_prefix is None:
            self._col_prefix = _strip_prefix(self._cells.T)
        return self._col_prefix

    def __repr__(self) -> str:
        return (
            f"OccupancyGrid({self.width}x{self.height}, res={self.resolution}, "
            f"origin={self.origin}, occupied={int(self._cells.sum())})"
        )


def _strip_prefix(strips: np.ndarray) -> np.ndarray:
    out = np.zeros((strips.shape[0], strips.shape[1] + 1), dtype=np.int32)
    np.cumsum(strips, axis=1, out=out[:, 1:])
    return out


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def load_grid(pgm_bytes: bytes, resolution: float = 1.0, origin: Point2 = (0.0, 0.0)) -> OccupancyGrid:
    """Parse a P2 (ASCII) or P5 (binary) PGM into an OccupancyGrid.

    A cell is occupied iff its gray value, rescaled to 0..255, is below 128.
    """
    data = bytes(pgm_bytes)
    pos = 0
    header = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise MapFormatError("truncated PGM header")
        header.append(m.group(1))
        pos = m.end()
    magic = header[0]
    if magic not in (b"P2", b"P5"):
        raise MapFormatError(f"unsupported PGM magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in header[1:])
    except ValueError:
        raise MapFormatError("non-integer PGM header field") from None
    if width <= 0 or height <= 0:
        raise MapFormatError(f"zero or negative dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise MapFormatError(f"invalid maxval {maxval}")
    count = width * height

    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        raw = data[pos:pos + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise MapFormatError(f"truncated pixel data: expected {count} samples")
        values = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    else:
        tokens = data[pos:].split()
        if len(tokens) < count:
            raise MapFormatError(f"truncated pixel data: expected {count} samples, got {len(tokens)}")
        try:
            values = np.array([int(t) for t in tokens[:count]], dtype=np.int64)
        except ValueError:
            raise MapFormatError("non-integer pixel value") from None
    if values.max(initial=0) > maxval:
        raise MapFormatError("pixel value exceeds maxval")

    gray = values.reshape(height, width)
    if maxval != 255:
        gray = gray * 255.0 / maxval
    occupied = gray < OCCUPIED_BELOW
    return OccupancyGrid(occupied, resolution=resolution, origin=origin)


def points_free(grid: OccupancyGrid, pts, radius: float) -> np.ndarray:
    """Vectorised point_free over an (N, 2) array."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    res = grid.resolution
    free = grid.contains(pts)
    if not free.any():
        return free
    idx = np.flatnonzero(free)
    u = (pts[idx, 0] - grid.origin[0]) / res
    v = (pts[idx, 1] - grid.origin[1]) / res
    col = np.clip(np.floor(u).astype(np.int64), 0, grid.width - 1)
    row = np.clip(np.floor(v).astype(np.int64), 0, grid.height - 1)
    d_center = grid._clearance_cells()[row, col] * res

    # bounds on the distance from p to the nearest occupied square
    surely_free = d_center - math.sqrt(2.0) * res > radius
    surely_hit = (d_center + res / math.sqrt(2.0) <= radius) | grid.cells[row, col]
    undecided = ~(surely_free | surely_hit)
    free[idx[surely_hit]] = False
    for k in np.flatnonzero(undecided):
        free[idx[k]] = _disk_clear_exact(grid, pts[idx[k]], radius)
    return free


def _disk_clear_exact(grid: OccupancyGrid, p, radius: float) -> bool:
    res = grid.resolution
    u = (p[0] - grid.origin[0]) / res
    v = (p[1] - grid.origin[1]) / res
    rc = radius / res
    c0 = max(int(math.floor(u - rc)) - 1, 0)
    c1 = min(int(math.floor(u + rc)) + 1, grid.width - 1)
    r0 = max(int(math.floor(v - rc)) - 1, 0)
    r1 = min(int(math.floor(v + rc)) + 1, grid.height - 1)
    if c0 > c1 or r0 > r1:
        return True
    window = grid.cells[r0:r1 + 1, c0:c1 + 1]
    if not window.any():
        return True
    rows, cols = np.nonzero(window)
    rows = rows + r0
    cols = cols + c0
    dx = np.maximum(np.maximum(cols - u, 0.0), u - (cols + 1))
    dy = np.maximum(np.maximum(rows - v, 0.0), v - (rows + 1))
    return not bool(np.any(dx * dx + dy * dy <= rc * rc))


def point_free(grid: OccupancyGrid, p: Point2, radius: float) -> bool:
    """True iff the closed disk of ``radius`` around ``p`` touches no occupied cell.

    Points outside the grid extent are never free.
    """
    return bool(points_free(grid, [p], radius)[0])


def _segment_samples(a: np.ndarray, b: np.ndarray, step: float):
    lengths = np.hypot(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1])
    # even interval count so the midpoint is always a sample
    n_int = np.maximum(2 * np.ceil(lengths / (2 * step)).astype(np.int64), 2)
    counts = n_int + 1
    seg = np.repeat(np.arange(len(a)), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    t = offsets / n_int[seg]
    pts = a[seg] + (b[seg] - a[seg]) * t[:, None]
    return pts, seg


def segments_free(grid: OccupancyGrid, a, b, radius: float, spacing: float = SEGMENT_SPACING,
                  chunk: int = 1 << 20) -> np.ndarray:
    """Vectorised segment_free over paired (N, 2) endpoint arrays."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ValueError("endpoint arrays must have the same shape")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    # sample from the lexicographically smaller endpoint so (a, b) and (b, a) see identical points
    flip = (a[:, 0] > b[:, 0]) | ((a[:, 0] == b[:, 0]) & (a[:, 1] > b[:, 1]))
    a, b = np.where(flip[:, None], b, a), np.where(flip[:, None], a, b)
    step = grid.resolution * spacing
    out = np.ones(len(a), dtype=bool)
    lengths = np.hypot(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1])
    csum = np.cumsum(np.ceil(lengths / step) + 2)
    start = 0
    while start < len(a):
        base = csum[start - 1] if start else 0.0
        stop = max(int(np.searchsorted(csum, base + chunk, side="right")), start + 1)
        pts, seg = _segment_samples(a[start:stop], b[start:stop], step)
        ok = points_free(grid, pts, radius)
        out[start + np.unique(seg[~ok])] = False
        start = stop
    return out


def segment_free(grid: OccupancyGrid, a: Point2, b: Point2, radius: float,
                 spacing: float = SEGMENT_SPACING) -> bool:
    """point_free at samples no more than ``spacing * resolution`` apart, endpoints included."""
    return bool(segments_free(grid, [a], [b], radius, spacing)[0])


def lines_of_sight(grid: OccupancyGrid, a, b, chunk: int = 1 << 21) -> np.ndarray:
    """Vectorised line_of_sight over paired (N, 2) endpoint arrays."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ValueError("endpoint arrays must have the same shape")
    flip = (a[:, 0] > b[:, 0]) | ((a[:, 0] == b[:, 0]) & (a[:, 1] > b[:, 1]))
    a, b = np.where(flip[:, None], b, a), np.where(flip[:, None], a, b)
    res = grid.resolution
    u0 = (a[:, 0] - grid.origin[0]) / res
    v0 = (a[:, 1] - grid.origin[1]) / res
    u1 = (b[:, 0] - grid.origin[0]) / res
    v1 = (b[:, 1] - grid.origin[1]) / res
    clear = np.ones(len(a), dtype=bool)
    # walk strips along whichever axis the segment spans less
    by_rows = np.abs(v1 - v0) < np.abs(u1 - u0)
    for transpose in (False, True):
        sel = np.flatnonzero(by_rows == transpose)
        if not len(sel):
            continue
        if transpose:
            args = (v0[sel], u0[sel], v1[sel], u1[sel], grid.height, grid.width)
        else:
            args = (u0[sel], v0[sel], u1[sel], v1[sel], grid.width, grid.height)
        clear[sel] = _strip_clear(grid._prefix(transpose), *args, chunk=chunk)
    return clear


def _strip_clear(prefix, u0, v0, u1, v1, n_strips, n_cells, chunk):
    """Segments in strip coordinates: strips indexed by u, cells within a strip by v."""
    umin = np.minimum(u0, u1)
    umax = np.maximum(u0, u1)
    c_lo = np.maximum(np.ceil(umin) - 1, 0).astype(np.int64)
    c_hi = np.minimum(np.floor(umax), n_strips - 1).astype(np.int64)
    counts = np.maximum(c_hi - c_lo + 1, 0)
    clear = np.ones(len(u0), dtype=bool)
    du = u1 - u0
    dv = v1 - v0
    vertical = du == 0
    safe_du = np.where(vertical, 1.0, du)

    csum = np.cumsum(counts)
    start = 0
    while start < len(u0):
        base = csum[start - 1] if start else 0
        stop = int(np.searchsorted(csum, base + chunk, side="right"))
        stop = max(stop, start + 1)
        cnt = counts[start:stop]
        seg = np.repeat(np.arange(start, stop), cnt)
        if len(seg):
            col = c_lo[seg] + (np.arange(len(seg)) - np.repeat(np.cumsum(cnt) - cnt, cnt))
            lo = np.maximum(umin[seg], col)
            hi = np.minimum(umax[seg], col + 1)
            # interpolate by the parameter t in [0, 1]; a slope can overflow for tiny du
            va = v0[seg] + np.clip((lo - u0[seg]) / safe_du[seg], 0.0, 1.0) * dv[seg]
            vb = v0[seg] + np.clip((hi - u0[seg]) / safe_du[seg], 0.0, 1.0) * dv[seg]
            vert = vertical[seg]
            va = np.where(vert, np.minimum(v0[seg], v1[seg]), va)
            vb = np.where(vert, np.maximum(v0[seg], v1[seg]), vb)
            vlo = np.minimum(va, vb)
            vhi = np.maximum(va, vb)
            r_lo = np.maximum(np.ceil(vlo) - 1, 0).astype(np.int64)
            r_hi = np.minimum(np.floor(vhi), n_cells - 1).astype(np.int64)
            ok = r_lo <= r_hi
            hits = np.zeros(len(seg), dtype=bool)
            hits[ok] = prefix[col[ok], r_hi[ok] + 1] - prefix[col[ok], r_lo[ok]] > 0
            blocked = np.unique(seg[hits])
            clear[blocked] = False
        start = stop
    return clear


def line_of_sight(grid: OccupancyGrid, a: Point2, b: Point2) -> bool:
    """True iff the zero-width segment a-b touches no occupied (closed) cell."""
    return bool(lines_of_sight(grid, [a], [b])[0])


def as_point(p: Sequence[float]) -> Point2:
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"point coordinates must be finite, got {p!r}")
    return x, y
