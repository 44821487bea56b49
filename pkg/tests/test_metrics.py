import math

import numpy as np
import pytest

from topolens import PersistenceDiagram, PersistencePoint
from topolens.diagram import ESSENTIAL
from topolens.errors import InvalidInputError
from topolens.metrics import betti_curve, wasserstein

from .oracles import brute_force_wasserstein


def dgm(*pairs):
    return PersistenceDiagram([PersistencePoint(b, d) for b, d in pairs])


def test_identical_diagrams_zero():
    d = dgm((0.0, 2.0))
    assert wasserstein(d, d, p=1.0).cost == 0.0


def test_single_point_to_diagonal():
    res = wasserstein(dgm((0.0, 2.0)), dgm(), p=1.0)
    assert res.cost == pytest.approx(math.sqrt(2.0), abs=1e-12)
    assert res.assignment == [(0, None)]


def test_essential_points_rejected():
    d = PersistenceDiagram([PersistencePoint(0.0, math.inf, 0, ESSENTIAL)])
    with pytest.raises(InvalidInputError, match="filter"):
        wasserstein(d, dgm((0.0, 1.0)))


def random_dgm(rng, max_pts=5):
    k = int(rng.integers(0, max_pts + 1))
    pts = []
    for _ in range(k):
        b = float(rng.uniform(0, 3))
        pts.append((b, b + float(rng.uniform(0, 2))))
    return dgm(*pts)


def test_matches_bruteforce_oracle():
    rng = np.random.default_rng(101)
    for _ in range(100):
        d1, d2 = random_dgm(rng), random_dgm(rng)
        got = wasserstein(d1, d2, p=1.0).cost
        want = brute_force_wasserstein(
            [(p.birth, p.death) for p in d1.points],
            [(p.birth, p.death) for p in d2.points],
            p=1.0,
        )
        assert got == pytest.approx(want, abs=1e-9)


def test_symmetry_and_triangle():
    rng = np.random.default_rng(103)
    for _ in range(25):
        a, b, c = (random_dgm(rng) for _ in range(3))
        dab = wasserstein(a, b).cost
        dba = wasserstein(b, a).cost
        assert dab == pytest.approx(dba, abs=1e-12)
        dac = wasserstein(a, c).cost
        dcb = wasserstein(c, b).cost
        assert dab <= dac + dcb + 1e-9


def test_diagonal_point_is_free():
    rng = np.random.default_rng(104)
    for _ in range(20):
        d1, d2 = random_dgm(rng), random_dgm(rng)
        base = wasserstein(d1, d2).cost
        with_diag = PersistenceDiagram(d1.points + [PersistencePoint(1.5, 1.5)])
        assert wasserstein(with_diag, d2).cost == pytest.approx(base, abs=1e-9)


def test_matching_covers_all_points():
    rng = np.random.default_rng(105)
    d1, d2 = random_dgm(rng, 5), random_dgm(rng, 5)
    res = wasserstein(d1, d2)
    left = sorted(i for i, _ in res.assignment if i is not None)
    right = sorted(j for _, j in res.assignment if j is not None)
    assert left == list(range(len(d1.points)))
    assert right == list(range(len(d2.points)))


def test_wasserstein_p2():
    # two points at distance 1 plus matching to diagonal alternatives
    d1 = dgm((0.0, 2.0))
    d2 = dgm((0.0, 3.0))
    res = wasserstein(d1, d2, p=2.0)
    assert res.cost == pytest.approx(1.0, abs=1e-12)


# ------------------------------------------------------------- betti curves


def test_betti_empty():
    c = betti_curve(dgm(), dim=0, n_samples=7, t_min=0.0, t_max=1.0)
    assert c.samples.tolist() == [0] * 7


def test_betti_single_interval():
    c = betti_curve(dgm((0.0, 2.0)), dim=0, n_samples=5, t_min=0.0, t_max=2.5)
    assert c.samples.tolist() == [1, 1, 1, 1, 0]


def test_betti_two_intervals_midpoint():
    c = betti_curve(dgm((0.0, 2.0), (1.0, 3.0)), dim=0, n_samples=3, t_min=1.5, t_max=3.5)
    assert c.samples[0] == 2


def test_betti_nonnegative_and_bounded_support():
    rng = np.random.default_rng(106)
    for _ in range(20):
        d = random_dgm(rng)
        if not d.points:
            continue
        births = [p.birth for p in d.points]
        deaths = [p.death for p in d.points]
        c = betti_curve(d, dim=0, n_samples=50, t_min=min(births) - 1, t_max=max(deaths) + 1)
        assert (c.samples >= 0).all()
        ts = np.linspace(c.t_min, c.t_max, 50)
        outside = (ts < min(births)) | (ts >= max(deaths))
        assert c.samples[outside].sum() == 0


def test_betti_validation():
    with pytest.raises(InvalidInputError):
        betti_curve(dgm(), dim=0, n_samples=0, t_min=0, t_max=1)
    with pytest.raises(InvalidInputError):
        betti_curve(dgm(), dim=0, n_samples=5, t_min=1.0, t_max=1.0)
