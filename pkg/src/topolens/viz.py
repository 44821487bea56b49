"""Rendering: importance-field heatmaps, diagram overlays, and the in-image
interlevel-set visualization. Pure numpy rasterization; PNG output is 8-bit
RGB and byte-deterministic for identical inputs.

Coordinate conventions. Fields live over birth-persistence coordinates, but
the field and overlay renderers draw in birth-death diagram coordinates so
the standard diagonal is meaningful and downward pairs (extended dim-1,
relative) sit below it. The heatmap value at diagram point (b, d) is the
field sampled at (min(b, d), |d - b|), i.e. the field is mirrored across
the diagonal. Isocontours are drawn in the upper triangle only.

Normalization happens here and only here: heatmap colors and contour
isovalues are fractions of the field maximum.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._cmap_data import MAGMA_DATA, VIRIDIS_DATA
from .diagram import ESSENTIAL, EXTENDED, ORDINARY, RELATIVE
from .errors import InvalidInputError
from .explain import field_lookup, field_lookup_bp
from .filtration import feature_regions

_CMAPS = {"magma": MAGMA_DATA, "viridis": VIRIDIS_DATA}

CONTOUR_FRACTIONS = (0.5, 0.7, 0.9)
_CONTOUR_GREEN = (0, 204, 0)
_MARKER_STYLE = {
    ORDINARY: ((255, 255, 255), "circle"),
    EXTENDED: ((255, 165, 0), "diamond"),
    RELATIVE: ((0, 220, 220), "diamond"),
}


@dataclass
class RasterImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("raster dimensions must be positive")
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise InvalidInputError("pixel buffer shape mismatch")


@dataclass
class ContourSet:
    isovalue: float
    polylines: list  # of [(x, y), ...] in field grid coordinates


# ---------------------------------------------------------------- colormaps


def colormap(t, name="magma"):
    """Map t in [0,1] (clamped) to RGB8 via table lookup with interpolation."""
    if name not in _CMAPS:
        raise InvalidInputError(f"unknown colormap {name!r}")
    table = _CMAPS[name]
    t = min(max(float(t), 0.0), 1.0)
    pos = t * 255.0
    i = int(math.floor(pos))
    j = min(i + 1, 255)
    frac = pos - i
    rgb = tuple(
        int(round(255.0 * (table[i][c] * (1 - frac) + table[j][c] * frac)))
        for c in range(3)
    )
    return rgb


def _colormap_array(t, name="magma"):
    """Vectorized colormap for a float array in [0,1]; returns uint8 RGB."""
    table = np.asarray(_CMAPS[name], dtype=np.float64)
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    pos = t * 255.0
    i = np.floor(pos).astype(int)
    j = np.minimum(i + 1, 255)
    frac = (pos - i)[..., None]
    rgb = table[i] * (1 - frac) + table[j] * frac
    return np.rint(255.0 * rgb).astype(np.uint8)


# ----------------------------------------------------------- marching squares

# For each of the 16 corner-sign cases, the cell edges crossed by contour
# segments. Edges: 0 bottom (y0: x0->x1), 1 right, 2 top, 3 left. Corner
# bit order: 1=bottom-left, 2=bottom-right, 4=top-right, 8=top-left.
_MS_SEGMENTS = {
    0: [],
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    5: None,  # ambiguous saddle
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(2, 3)],
    9: [(0, 2)],
    10: None,  # ambiguous saddle
    11: [(1, 2)],
    12: [(1, 3)],
    13: [(0, 1)],
    14: [(3, 0)],
    15: [],
}


def marching_squares(field, isovalue):
    """Standard 16-case marching squares with linear edge interpolation.

    Vertices are (x, y) in grid coordinates (x = column, y = row). The two
    ambiguous saddle cases are resolved by the cell-average rule: the cell
    is treated as inside when its average exceeds the isovalue. Segments
    sharing endpoints are chained into polylines.
    """
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2 or f.shape[1] < 2:
        raise InvalidInputError("marching squares needs a field of at least 2x2")
    ny, nx = f.shape
    iso = float(isovalue)

    def interp(p0, v0, p1, v1):
        # position along p0->p1 where the value crosses iso
        t = 0.5 if v1 == v0 else (iso - v0) / (v1 - v0)
        t = min(max(t, 0.0), 1.0)
        return (p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1]))

    segments = []
    for y in range(ny - 1):
        for x in range(nx - 1):
            corners = [
                ((x, y), f[y, x]),  # bottom-left (bit 1)
                ((x + 1, y), f[y, x + 1]),  # bottom-right (bit 2)
                ((x + 1, y + 1), f[y + 1, x + 1]),  # top-right (bit 4)
                ((x, y + 1), f[y + 1, x]),  # top-left (bit 8)
            ]
            case = 0
            for bit, (_, v) in enumerate(corners):
                if v >= iso:
                    case |= 1 << bit
            segs = _MS_SEGMENTS[case]
            if segs is None:
                avg = sum(v for _, v in corners) / 4.0
                if case == 5:  # BL and TR inside
                    segs = [(3, 2), (0, 1)] if avg >= iso else [(3, 0), (1, 2)]
                else:  # case 10: BR and TL inside
                    segs = [(3, 0), (1, 2)] if avg >= iso else [(3, 2), (0, 1)]
            edge_pts = {}
            for e in {e for seg in segs for e in seg}:
                a, b = {0: (0, 1), 1: (1, 2), 2: (3, 2), 3: (0, 3)}[e]
                edge_pts[e] = interp(corners[a][0], corners[a][1], corners[b][0], corners[b][1])
            for e1, e2 in segs:
                segments.append((edge_pts[e1], edge_pts[e2]))

    return ContourSet(isovalue=iso, polylines=_chain_segments(segments))


def _chain_segments(segments):
    """Join segments that share endpoints into polylines."""

    def key(p):
        return (round(p[0] * 1e9), round(p[1] * 1e9))

    by_end = {}
    for idx, (a, b) in enumerate(segments):
        by_end.setdefault(key(a), []).append(idx)
        by_end.setdefault(key(b), []).append(idx)
    used = [False] * len(segments)
    polylines = []
    for start in range(len(segments)):
        if used[start]:
            continue
        used[start] = True
        a, b = segments[start]
        line = [a, b]
        # extend forward from line end, then backward from line start
        for reverse in (False, True):
            while True:
                endpoint = line[0] if reverse else line[-1]
                nxt = None
                for idx in by_end.get(key(endpoint), []):
                    if not used[idx]:
                        nxt = idx
                        break
                if nxt is None:
                    break
                used[nxt] = True
                p, q = segments[nxt]
                other = q if key(p) == key(endpoint) else p
                if reverse:
                    line.insert(0, other)
                else:
                    line.append(other)
    # a closed loop may be picked up entirely in the forward pass
        polylines.append(line)
    return polylines


# ----------------------------------------------------------- raster helpers


def _draw_line(pixels, x0, y0, x1, y1, rgb):
    """Bresenham line, clipped to the buffer."""
    h, w, _ = pixels.shape
    x0, y0, x1, y1 = int(round(x0)), int(round(y0)), int(round(x1)), int(round(y1))
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        if 0 <= x0 < w and 0 <= y0 < h:
            pixels[y0, x0] = rgb
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _draw_marker(pixels, x, y, rgb, shape="circle", r=3):
    h, w, _ = pixels.shape
    cx, cy = int(round(x)), int(round(y))
    for yy in range(cy - r, cy + r + 1):
        for xx in range(cx - r, cx + r + 1):
            if not (0 <= xx < w and 0 <= yy < h):
                continue
            du, dv = xx - cx, yy - cy
            inside = (
                du * du + dv * dv <= r * r
                if shape == "circle"
                else abs(du) + abs(dv) <= r
            )
            if inside:
                pixels[yy, xx] = rgb


def _diagram_frame(extents):
    """Square (lo, hi) birth-death frame covering the field extents."""
    b0, b1, p0, p1 = extents
    lo = min(b0, b0 + min(p0, 0.0))
    hi = max(b1, b1 + max(p1, 0.0))
    if hi <= lo:
        hi = lo + 1.0
    return lo, hi


def _to_canvas(b, d, lo, hi, size):
    """Map diagram coords to canvas pixels (y axis points up)."""
    w, h = size
    x = (b - lo) / (hi - lo) * (w - 1)
    y = (h - 1) - (d - lo) / (hi - lo) * (h - 1)
    return x, y


def _lookup_bp_array(field, b, p):
    """Vectorized clamped-bilinear field lookup (same math as field_lookup_bp)."""
    values = field.values
    ny, nx = values.shape
    b0, b1, p0, p1 = field.extents
    fx = np.clip((b - b0) / (b1 - b0) * nx - 0.5, 0.0, nx - 1.0)
    fy = np.clip((p - p0) / (p1 - p0) * ny - 0.5, 0.0, ny - 1.0)
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    tx = fx - x0
    ty = fy - y0
    top = values[y0, x0] * (1 - tx) + values[y0, x1] * tx
    bot = values[y1, x0] * (1 - tx) + values[y1, x1] * tx
    return top * (1 - ty) + bot * ty


def _field_heatmap(field, size):
    w, h = size
    lo, hi = _diagram_frame(field.extents)
    fmax = field.values.max()
    xs = np.linspace(lo, hi, w)
    ys = np.linspace(hi, lo, h)  # row 0 = top = largest death
    bb, dd = np.meshgrid(xs, ys)
    if fmax > 0:
        tvals = _lookup_bp_array(field, np.minimum(bb, dd), np.abs(dd - bb)) / fmax
    else:
        tvals = np.zeros((h, w))
    return _colormap_array(tvals, "magma"), (lo, hi), fmax


def render_field(field, size=(400, 400)):
    """Magma heatmap of the field (normalized to its maximum) in diagram
    coordinates, with the diagonal and green isocontours at 50/70/90% of the
    maximum. An all-zero field renders as background plus diagonal only."""
    w, h = int(size[0]), int(size[1])
    pixels, (lo, hi), fmax = _field_heatmap(field, (w, h))
    img = RasterImage(width=w, height=h, pixels=pixels)
    _draw_diagonal(img, lo, hi)
    if fmax > 0:
        _draw_contours(img, field, lo, hi)
    return img


def _draw_diagonal(img, lo, hi):
    x0, y0 = _to_canvas(lo, lo, lo, hi, (img.width, img.height))
    x1, y1 = _to_canvas(hi, hi, lo, hi, (img.width, img.height))
    _draw_line(img.pixels, x0, y0, x1, y1, (255, 255, 255))


def _draw_contours(img, field, lo, hi):
    ny, nx = field.values.shape
    b0, b1, p0, p1 = field.extents
    fmax = field.values.max()
    for frac in CONTOUR_FRACTIONS:
        contour = marching_squares(field.values, frac * fmax)
        for line in contour.polylines:
            pts = []
            for gx, gy in line:
                # grid coords -> birth-persistence -> birth-death (upper)
                b = b0 + (gx + 0.5) * (b1 - b0) / nx
                p = p0 + (gy + 0.5) * (p1 - p0) / ny
                pts.append(_to_canvas(b, b + p, lo, hi, (img.width, img.height)))
            for (xa, ya), (xb, yb) in zip(pts, pts[1:]):
                _draw_line(img.pixels, xa, ya, xb, yb, _CONTOUR_GREEN)


def render_diagram_overlay(diagram, field, size=(400, 400)):
    """Diagram scatter over the field heatmap.

    Upward pairs plot at (b, d) above the diagonal; downward pairs (extended
    dim-1, relative) plot at their raw (b, d) below it. Essential points are
    skipped (infinite death).
    """
    img = render_field(field, size)
    lo, hi = _diagram_frame(field.extents)
    for p in diagram.points:
        if p.kind == ESSENTIAL or math.isinf(p.death):
            continue
        rgb, shape = _MARKER_STYLE[p.kind]
        x, y = _to_canvas(p.birth, p.death, lo, hi, (img.width, img.height))
        _draw_marker(img.pixels, x, y, rgb, shape=shape)
    return img


def render_inimage(grid, diagram, history, field):
    """Tint each finite feature's interlevel-set region by its importance.

    The base layer is the grayscale grid. Regions are drawn in ascending
    importance so the most important end up in front. When a younger feature
    died by merging into an older *finite* feature's component, both use the
    older feature's importance color (the older region contains the younger
    one, so distinct colors would punch a misleading hole in it).
    """
    vals = grid.as_2d()
    span = vals.max() - vals.min()
    gray = (vals - vals.min()) / (span if span > 0 else 1.0)
    pixels = np.repeat((gray[:, :, None] * 255).astype(np.uint8), 3, axis=2)

    finite = [p for p in diagram.points if p.kind != ESSENTIAL and math.isfinite(p.death)]
    if finite:
        regions = {
            r.point.birth_cell: r
            for r in feature_regions(grid, history, diagram)
            if r.point.kind != ESSENTIAL
        }
        if set(regions) != {p.birth_cell for p in finite}:
            raise InvalidInputError("diagram does not match this grid/history")
        fmax = field.values.max()
        importance = {
            p.birth_cell: (field_lookup(field, p) / fmax if fmax > 0 else 0.0)
            for p in finite
        }
        # a point's merge parent: the feature of the root its component was
        # absorbed by; color follows the oldest finite ancestor
        parent = {}
        finite_cells = set(regions)
        for ev in history.events:
            if type(ev).__name__ == "MergeEvent" and ev.younger_root in finite_cells:
                parent[ev.younger_root] = ev.older_root

        def color_value(cell, _seen=None):
            seen = _seen or set()
            par = parent.get(cell)
            if par in finite_cells and par not in seen:
                return color_value(par, seen | {cell})
            return importance[cell]

        shade = {cell: color_value(cell) for cell in finite_cells}
        order = sorted(finite_cells, key=lambda c: (shade[c], c))
        for cell in order:
            rgb = colormap(shade[cell], "magma")
            for pix in regions[cell].pixels:
                y, x = divmod(pix, grid.width)
                pixels[y, x] = rgb
    return RasterImage(width=grid.width, height=grid.height, pixels=pixels)


# ----------------------------------------------------------------- file IO


def save_raster(path, img):
    """Write a RasterImage as PNG (or PPM with a .ppm suffix)."""
    from .io import _atomic_write

    lower = str(path).lower()
    if lower.endswith(".ppm"):
        header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
        _atomic_write(path, header + img.pixels.tobytes())
        return
    import io as _io

    from PIL import Image

    buf = _io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(buf, format="PNG")
    _atomic_write(path, buf.getvalue())
