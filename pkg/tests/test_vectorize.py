import math

import numpy as np
import pytest

from topolens import PersistenceDiagram, PersistencePoint
from topolens.diagram import ESSENTIAL, EXTENDED, ORDINARY
from topolens.vectorize import (
    PersistenceImageSpec,
    WeightSpec,
    auto_extents,
    birth_persistence_transform,
    persistence_image,
    persistence_weight,
    uniform_weight,
)

from .oracles import gaussian_mass_in_box


def dgm(*pairs):
    return PersistenceDiagram([PersistencePoint(b, d) for b, d in pairs])


def spec(weight="uniform", res=(40, 40), extents=(0.0, 1.0, 0.0, 1.0), sigma=0.1):
    return PersistenceImageSpec(
        resolution=res, extents=extents, sigma=sigma, weight=WeightSpec(weight)
    )


# ------------------------------------------------------------- transform


def test_transform_example():
    pts = birth_persistence_transform(dgm((2.0, 5.0)))
    assert pts[0].b == 2.0 and pts[0].p == 3.0 and not pts[0].extended


def test_transform_diagonal():
    pts = birth_persistence_transform(dgm((4.0, 4.0)))
    assert pts[0].p == 0.0


def test_transform_extended_dim1_folds():
    d = PersistenceDiagram([PersistencePoint(5.0, 2.0, dim=1, kind=EXTENDED)])
    pts = birth_persistence_transform(d)
    assert pts[0] == pytest.approx((2.0, 3.0, 1.0, True))
    assert pts[0].extended


def test_transform_drops_essential():
    d = PersistenceDiagram(
        [
            PersistencePoint(1.0, math.inf, kind=ESSENTIAL),
            PersistencePoint(0.0, 1.0, kind=ORDINARY),
        ]
    )
    assert len(birth_persistence_transform(d)) == 1


def test_weight_functions():
    assert uniform_weight((0.0, 3.0)) == 1.0
    assert uniform_weight((7.0, 0.0)) == 1.0
    assert persistence_weight((2.0, 3.0)) == 3.0
    assert persistence_weight((9.0, 0.0)) == 0.0
    assert persistence_weight((0.0, 0.5)) == 0.5


# ----------------------------------------------------------------- images


def test_empty_diagram_zero_image():
    img = persistence_image(dgm(), spec())
    assert not img.pixels.any()


def test_unit_mass_well_inside():
    # birth-persistence (0.5, 0.5): 5 sigma from every edge of [0,1]^2.
    # The pixel sum equals the Gaussian mass inside the extents; check both
    # against the erf oracle (1e-9) and against total weight 1 (boundary
    # truncation at exactly 5 sigma is ~1.1e-6, so compare at 2e-6).
    img = persistence_image(dgm((0.5, 1.0)), spec())
    total = img.pixels.sum()
    oracle = gaussian_mass_in_box(0.5, 0.5, 0.1, 0.0, 1.0, 0.0, 1.0)
    assert total == pytest.approx(oracle, abs=1e-9)
    assert total == pytest.approx(1.0, abs=2e-6)


def test_mass_conservation_beyond_5_sigma():
    # points strictly >5 sigma inside the extents: relative error under 1e-6
    img = persistence_image(dgm((0.7, 1.5), (1.2, 2.1)), spec(extents=(0, 2, 0, 2)))
    assert img.pixels.sum() == pytest.approx(2.0, rel=1e-6)


def test_persistence_weight_scales_mass():
    img = persistence_image(dgm((0.5, 1.0)), spec(weight="persistence"))
    oracle = 0.5 * gaussian_mass_in_box(0.5, 0.5, 0.1, 0.0, 1.0, 0.0, 1.0)
    assert img.pixels.sum() == pytest.approx(oracle, abs=1e-9)
    assert img.pixels.sum() == pytest.approx(0.5, rel=3e-6)


def test_additivity_exact():
    d1 = dgm((0.3, 0.8), (0.5, 0.6))
    d2 = dgm((0.6, 1.1))
    both = PersistenceDiagram(d1.points + d2.points)
    s = spec()
    lhs = persistence_image(both, s).pixels
    rhs = persistence_image(d1, s).pixels + persistence_image(d2, s).pixels
    assert np.array_equal(lhs, rhs)


def test_refinement_2x():
    d = dgm((0.35, 0.85), (0.6, 0.75), (0.1, 1.05))
    coarse = persistence_image(d, spec(res=(40, 40))).pixels
    fine = persistence_image(d, spec(res=(80, 80))).pixels
    pooled = fine.reshape(40, 2, 40, 2).sum(axis=(1, 3))
    assert np.abs(pooled - coarse).max() < 1e-9


def test_diagonal_asymmetry():
    # diagonal points: zero mass under persistence weight, full under uniform
    d = dgm((0.5, 0.5))
    u = persistence_image(d, spec())
    w = persistence_image(d, spec(weight="persistence"))
    assert u.pixels.sum() > 0.4  # half the Gaussian is below p=0, off-image
    assert w.pixels.sum() == 0.0


def test_pixel_values_match_erf_oracle_per_pixel():
    s = spec(res=(8, 8))
    img = persistence_image(dgm((0.3, 0.9)), s)
    xs = np.linspace(0, 1, 9)
    ys = np.linspace(0, 1, 9)
    for iy in range(8):
        for ix in range(8):
            want = gaussian_mass_in_box(
                0.3, 0.6, 0.1, xs[ix], xs[ix + 1], ys[iy], ys[iy + 1]
            )
            assert img.pixels[iy, ix] == pytest.approx(want, abs=1e-12)


def test_channels_split_points():
    d = PersistenceDiagram(
        [
            PersistencePoint(0.2, 0.8, 0, ORDINARY),
            PersistencePoint(0.9, 0.4, 1, EXTENDED),
        ]
    )
    s = spec()
    both = persistence_image(d, s).pixels
    ordinary = persistence_image(d, s, channel="ordinary").pixels
    extended = persistence_image(d, s, channel="extended").pixels
    assert np.array_equal(both, ordinary + extended)
    assert ordinary.sum() > 0 and extended.sum() > 0


def test_table_weight_lookup():
    table = np.zeros((40, 40))
    table[:, :20] = 2.0  # left half weighted 2, right half 0
    s = PersistenceImageSpec(weight=WeightSpec("table", table=table))
    left = persistence_image(dgm((0.2, 0.7)), s).pixels.sum()
    right = persistence_image(dgm((0.8, 1.3)), s).pixels.sum()
    assert left == pytest.approx(2.0 * gaussian_mass_in_box(0.2, 0.5, 0.1, 0, 1, 0, 1), abs=1e-9)
    assert right == 0.0


def test_auto_extents():
    d = dgm((0.0, 1.0), (0.5, 0.7))
    b0, b1, p0, p1 = auto_extents([d], sigma=0.1)
    assert (b0, b1) == pytest.approx((-0.3, 0.8))
    assert (p0, p1) == pytest.approx((-0.1, 1.3))


def test_spec_validation():
    from topolens.errors import InvalidInputError

    with pytest.raises(InvalidInputError):
        PersistenceImageSpec(resolution=(0, 4))
    with pytest.raises(InvalidInputError):
        PersistenceImageSpec(extents=(1.0, 0.0, 0.0, 1.0))
    with pytest.raises(InvalidInputError):
        PersistenceImageSpec(sigma=0.0)
