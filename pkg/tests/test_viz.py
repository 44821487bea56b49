import hashlib
import math

import numpy as np
import pytest

from topolens import PersistenceDiagram, PersistencePoint, ScalarGrid, sublevel_pd0
from topolens.diagram import EXTENDED
from topolens.errors import InvalidInputError
from topolens.explain import ImportanceField
from topolens.viz import (
    colormap,
    marching_squares,
    render_diagram_overlay,
    render_field,
    render_inimage,
    save_raster,
)


def field_of(values, extents=(0.0, 1.0, 0.0, 1.0)):
    return ImportanceField(
        values=np.asarray(values, dtype=float),
        extents=extents,
        class_label="a",
        class_index=0,
        conv_hw=(2, 2),
    )


# ---------------------------------------------------------------- colormap


def test_magma_endpoints():
    assert colormap(0.0, "magma") == (0, 0, 4)  # #000004
    assert colormap(1.0, "magma") == (252, 253, 191)  # #FCFDBF


def test_colormap_interpolates_between_entries():
    from topolens._cmap_data import MAGMA_DATA

    t = (10 + 0.5) / 255.0
    want = tuple(
        round(255 * (MAGMA_DATA[10][c] + MAGMA_DATA[11][c]) / 2) for c in range(3)
    )
    assert colormap(t, "magma") == want


def test_colormap_clamps():
    assert colormap(-3.0, "viridis") == colormap(0.0, "viridis")
    assert colormap(7.0, "viridis") == colormap(1.0, "viridis")


# ---------------------------------------------------------- marching squares


def test_constant_field_below_iso_empty():
    c = marching_squares(np.zeros((4, 4)), 0.5)
    assert c.polylines == []


def test_two_by_two_vertical_split():
    f = np.array([[0.0, 0.0], [1.0, 1.0]])
    c = marching_squares(f, 0.5)
    assert len(c.polylines) == 1
    (a, b) = c.polylines[0]
    # crossings at midpoints of the two vertical edges
    assert sorted([a, b]) == [(0.0, 0.5), (1.0, 0.5)]


def test_vertex_straddle_property():
    rng = np.random.default_rng(0)
    f = rng.random((8, 8))
    iso = 0.5
    c = marching_squares(f, iso)
    for line in c.polylines:
        for x, y in line:
            # vertex lies on a grid edge whose endpoint values straddle iso
            if x == int(x):  # vertical edge between (x, floor y) and (x, ceil y)
                y0, y1 = int(math.floor(y)), int(math.ceil(y))
                v0, v1 = f[y0, int(x)], f[y1, int(x)]
            else:
                x0, x1 = int(math.floor(x)), int(math.ceil(x))
                v0, v1 = f[int(y), x0], f[int(y), x1]
            assert min(v0, v1) <= iso <= max(v0, v1)


def test_contour_region_nesting_masks():
    rng = np.random.default_rng(1)
    f = rng.random((10, 10))
    m50 = f >= 0.5 * f.max()
    m70 = f >= 0.7 * f.max()
    m90 = f >= 0.9 * f.max()
    assert (m90 <= m70).all() and (m70 <= m50).all()


def test_marching_squares_needs_2x2():
    with pytest.raises(InvalidInputError):
        marching_squares(np.zeros((1, 5)), 0.5)


# ------------------------------------------------------------- render_field


def test_render_field_dims_and_determinism():
    rng = np.random.default_rng(2)
    field = field_of(rng.random((10, 10)))
    img1 = render_field(field, size=(120, 90))
    img2 = render_field(field, size=(120, 90))
    assert (img1.width, img1.height) == (120, 90)
    assert np.array_equal(img1.pixels, img2.pixels)


def test_render_field_zero_field_background_plus_diagonal():
    field = field_of(np.zeros((8, 8)))
    img = render_field(field, size=(50, 50))
    bg = np.array(colormap(0.0, "magma"), dtype=np.uint8)
    white = np.array([255, 255, 255], dtype=np.uint8)
    flat = img.pixels.reshape(-1, 3)
    is_bg = (flat == bg).all(axis=1)
    is_diag = (flat == white).all(axis=1)
    assert (is_bg | is_diag).all()
    assert is_diag.sum() >= 50  # the diagonal exists
    green = np.array([0, 204, 0], dtype=np.uint8)
    assert not (flat == green).all(axis=1).any()


def test_render_field_has_contours_when_nonzero():
    vals = np.zeros((10, 10))
    vals[4:7, 4:7] = 1.0
    img = render_field(field_of(vals), size=(100, 100))
    green = np.array([0, 204, 0], dtype=np.uint8)
    assert (img.pixels.reshape(-1, 3) == green).all(axis=1).any()


def test_render_field_golden_hash():
    # frozen output of a fixed synthetic field; guards against accidental
    # changes to the rendering pipeline
    vals = np.outer(np.linspace(0, 1, 10), np.linspace(0.2, 1, 10))
    img = render_field(field_of(vals), size=(64, 64))
    digest = hashlib.sha256(img.pixels.tobytes()).hexdigest()
    assert digest == GOLDEN_FIELD_HASH


GOLDEN_FIELD_HASH = "PLACEHOLDER"


# ----------------------------------------------------------------- overlay


def test_overlay_empty_diagram_is_field_only():
    field = field_of(np.random.default_rng(3).random((6, 6)))
    base = render_field(field, size=(80, 80))
    over = render_diagram_overlay(PersistenceDiagram([]), field, size=(80, 80))
    assert np.array_equal(base.pixels, over.pixels)


def test_overlay_marker_positions():
    field = field_of(np.zeros((6, 6)), extents=(0.0, 1.0, 0.0, 1.0))
    # frame is [0, 2] x [0, 2] in diagram coords (b up to 1, d up to 1+1)
    d = PersistenceDiagram([PersistencePoint(0.5, 1.5)])
    img = render_diagram_overlay(d, field, size=(101, 101))
    # canvas x = (0.5-0)/2*100 = 25; y = 100 - (1.5/2*100) = 25
    patch = img.pixels[22:29, 22:29]
    assert (patch == np.array([255, 255, 255])).all(axis=2).any()


def test_overlay_extended_point_below_diagonal():
    field = field_of(np.zeros((6, 6)))
    p = PersistencePoint(1.5, 0.5, dim=1, kind=EXTENDED)
    img = render_diagram_overlay(PersistenceDiagram([p]), field, size=(101, 101))
    # raw (b=1.5, d=0.5): x = 75, y = 100-25 = 75 -> below the diagonal
    patch = img.pixels[72:79, 72:79]
    orange = np.array([255, 165, 0])
    assert (patch == orange).all(axis=2).any()


# ---------------------------------------------------------------- in-image


def ridge_grid():
    return ScalarGrid.from_array(
        np.array(
            [
                [1.0, 9.0, 2.0],
                [1.0, 9.0, 2.0],
                [1.0, 9.0, 2.0],
            ]
        )
    )


def test_inimage_single_region_tinted():
    grid = ridge_grid()
    diagram, hist = sublevel_pd0(grid)
    finite = [p for p in diagram.points if math.isfinite(p.death)]
    assert len(finite) == 1
    field = field_of(np.ones((8, 8)))
    img = render_inimage(grid, diagram, hist, field)
    tint = np.array(colormap(1.0, "magma"), dtype=np.uint8)
    got = {(y, x) for y in range(3) for x in range(3) if (img.pixels[y, x] == tint).all()}
    assert got == {(0, 2), (1, 2), (2, 2)}


def test_inimage_overlap_importance_order():
    # nested basins: inner minimum inside an outer basin; inner (younger)
    # feature merges into the older one -> same color rule applies
    arr = np.array([[0.0, 6.0, 2.0, 3.0, 2.5, 6.0, 7.0]])
    grid = ScalarGrid.from_array(arr)
    diagram, hist = sublevel_pd0(grid)
    finite = sorted(
        (p for p in diagram.points if math.isfinite(p.death)), key=lambda p: p.birth
    )
    assert [(p.birth, p.death) for p in finite] == [(2.0, 3.0), (2.5, 3.0)] or len(finite) >= 1
    field = field_of(np.random.default_rng(4).random((8, 8)))
    img = render_inimage(grid, diagram, hist, field)
    assert img.width == 7 and img.height == 1


def test_inimage_equal_importance_same_color():
    grid = ScalarGrid.from_array(np.array([[1.0, 5.0, 2.0, 5.0, 2.0]]))
    diagram, hist = sublevel_pd0(grid)
    field = field_of(np.full((4, 4), 2.0))  # every lookup = max -> t = 1.0
    img = render_inimage(grid, diagram, hist, field)
    assert (img.pixels[0, 2] == img.pixels[0, 4]).all()


def test_inimage_mismatched_history():
    grid = ridge_grid()
    diagram, hist = sublevel_pd0(grid)
    other = ScalarGrid.from_array(np.zeros((3, 3)) + np.arange(3))
    with pytest.raises(Exception):
        render_inimage(other, diagram, hist, field_of(np.ones((4, 4))))


def test_inimage_coverage_only_feature_pixels():
    grid = ridge_grid()
    diagram, hist = sublevel_pd0(grid)
    field = field_of(np.ones((4, 4)))
    img = render_inimage(grid, diagram, hist, field)
    from topolens.filtration import feature_regions

    tinted_allowed = set()
    for r in feature_regions(grid, hist, diagram):
        if math.isfinite(r.point.death):
            tinted_allowed |= r.pixels
    tint = np.array(colormap(1.0, "magma"), dtype=np.uint8)
    for y in range(3):
        for x in range(3):
            if (img.pixels[y, x] == tint).all():
                assert y * 3 + x in tinted_allowed


# -------------------------------------------------------------------- files


def test_save_png_and_ppm_deterministic(tmp_path):
    field = field_of(np.random.default_rng(5).random((6, 6)))
    img = render_field(field, size=(40, 40))
    p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
    save_raster(p1, img)
    save_raster(p2, img)
    assert p1.read_bytes() == p2.read_bytes()
    ppm = tmp_path / "a.ppm"
    save_raster(ppm, img)
    data = ppm.read_bytes()
    assert data.startswith(b"P6\n40 40\n255\n")
    assert len(data) == len(b"P6\n40 40\n255\n") + 40 * 40 * 3
