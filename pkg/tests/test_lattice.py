"""Boxes, site sets, boundaries, cones, and scale ladders."""

import numpy as np
import pytest

from hierloc.lattice import (LatticeBox, SiteSet, a_adic_ladder, boundary,
                             cone, domain_sites, lambda_k, lex_order,
                             neighborhood, newtonian_scales)


def test_box_counts_and_enumeration():
    for d, r in ((1, 4), (2, 3), (3, 2)):
        box = LatticeBox((0,) * d, r)
        sites = domain_sites(box)
        assert sites.shape == ((2 * r + 1) ** d, d)
        assert len(box) == (2 * r + 1) ** d
        # first coordinate varies fastest
        if d > 1:
            assert sites[1, 0] == sites[0, 0] + 1
            assert np.array_equal(sites[1, 1:], sites[0, 1:])
        idx = box.index_of(sites)
        assert np.array_equal(idx, np.arange(len(sites)))


def test_box_center_offset_and_outside():
    box = LatticeBox((5, -2), 2)
    sites = domain_sites(box)
    assert sites.min(axis=0).tolist() == [3, -4]
    assert sites.max(axis=0).tolist() == [7, 0]
    with pytest.raises(ValueError):
        box.index_of(np.array([[8, 0]]))


def test_siteset_dedupe_order_lookup():
    s = SiteSet([[1, 1], [0, 0], [1, 1], [0, 1]])
    assert len(s) == 3
    assert s.sites.tolist() == [[0, 0], [0, 1], [1, 1]]
    assert s.contains(np.array([[0, 1], [2, 2]])).tolist() == [True, False]
    assert s.index_of(np.array([[1, 1]])).tolist() == [2]
    assert s == SiteSet([[0, 1], [1, 1], [0, 0]])


def test_lex_order_frozen():
    pts = np.array([[2, 1], [0, 0], [1, 3], [0, 1]])
    assert lex_order(pts).tolist() == [1, 3, 0, 2]


def test_boundary_oracles():
    sq = LatticeBox((0, 0), 1)
    outer = boundary(sq, "outer")
    assert len(outer) == 12
    assert outer.sites.tolist() == [[-1, -2], [0, -2], [1, -2], [-2, -1],
                                    [2, -1], [-2, 0], [2, 0], [-2, 1],
                                    [2, 1], [-1, 2], [0, 2], [1, 2]]
    assert len(boundary(sq, "inner")) == 8

    diamond = SiteSet([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]])
    assert len(boundary(diamond, "outer")) == 8
    assert len(boundary(diamond, "inner")) == 4

    seg = LatticeBox((0,), 3)
    assert boundary(seg, "outer").sites.ravel().tolist() == [-4, 4]
    assert boundary(seg, "inner").sites.ravel().tolist() == [-3, 3]


def test_neighborhood():
    box = LatticeBox((2, 2), 3)
    grown = neighborhood(box, 2)
    assert grown.center == box.center and grown.radius == 5
    with pytest.raises(ValueError):
        neighborhood(box, -1)


def test_cone_shapes():
    c = cone((0, 0), 1, 1)
    assert c.sites.tolist() == [[1, -1], [1, 0], [2, 0], [1, 1]]
    c = cone((0, 0), 2, -1)
    assert c.sites.tolist() == [[0, -2], [-1, -1], [0, -1], [1, -1]]
    assert cone((3,), 1, -1).sites.ravel().tolist() == [1, 2]
    for d in (1, 2, 3):
        for axis in range(1, d + 1):
            for sigma in (-1, 1):
                cs = cone((0,) * d, axis, sigma)
                assert len(cs) == 2 * d
                # apex excluded, all sites advance along the axis
                steps = cs.sites[:, axis - 1] * sigma
                assert np.all(steps >= 1) and steps.max() == 2


def test_newtonian_scales():
    lad = newtonian_scales(5, 2.0, 4)
    assert lad.kind == "newtonian"
    assert lad.values == (5, 25, 625, 390625, 152587890625)
    with pytest.raises(ValueError):
        newtonian_scales(1, 2.0, 3)
    with pytest.raises(ValueError):
        newtonian_scales(5, 1.0, 3)
    with pytest.raises(ValueError):
        newtonian_scales(3, 1.2, 2)  # floor(3^1.2) = 3, not increasing


def test_a_adic_ladder():
    lad, P = a_adic_ladder(1, 2, 4, 1.5)
    assert lad.kind == "a_adic"
    assert lad.values == (1, 2, 4)
    assert P == 2
    with pytest.raises(ValueError):
        a_adic_ladder(0, 2, 4, 1.5)
    with pytest.raises(ValueError):
        a_adic_ladder(1, 1, 4, 1.5)
    with pytest.raises(ValueError):
        a_adic_ladder(9, 2, 4, 1.5)


def test_lambda_k():
    lad = newtonian_scales(5, 2.0, 3)
    b = lambda_k((0,), 1, lad)
    assert b.radius == 6 * 25
    assert lambda_k((7,), 0, lad).radius == 30
    with pytest.raises(ValueError):
        lambda_k((0,), 9, lad)
    a_lad, _ = a_adic_ladder(1, 2, 4, 1.5)
    with pytest.raises(ValueError):
        lambda_k((0,), 0, a_lad)
