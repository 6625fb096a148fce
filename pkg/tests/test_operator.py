"""Dirichlet box operator assembly, derived constants, Green function."""

import numpy as np
import pytest
import scipy.sparse as sp

from hierloc.lattice import LatticeBox, domain_sites
from hierloc.operator import (ModelParams, NearSingular, NotNonResonant,
                              assemble, check_nonresonant_bounds,
                              derived_constants, green)
from hierloc.rng import bernoulli


def make(d=1, radius=5, h=20.0, beta=1.0, seed=3, all_barrier=False):
    box = LatticeBox((0,) * d, radius)
    sites = domain_sites(box)
    if all_barrier:
        v = h + beta * bernoulli(seed, 1, sites)
    else:
        v_hi = np.where(bernoulli(seed, 0, sites) > 0, h, 0.0)
        v = v_hi + beta * bernoulli(seed, 1, sites)
    return box, sites, assemble(box, v, ModelParams(d, h, beta)), v


def test_derived_constants_frozen():
    dc = derived_constants(1, 20.0, 1.0)
    assert dc.iota == 0.01
    assert dc.gamma == 0.04
    assert dc.gamma0 == 2.1394777551238953
    dc3 = derived_constants(3, 60.0, 0.25)
    assert dc3.gamma == 0.01384083044982699
    assert dc3.gamma0 == 2.19239813395929


def test_derived_constants_formulas():
    for d, h, beta in ((1, 20.0, 1.0), (2, 30.0, 0.5), (3, 60.0, 0.25)):
        dc = derived_constants(d, h, beta)
        assert dc.iota == min(0.01, (h - 4 * d - beta) / 2)
        assert dc.gamma == 1.0 / (4 * d + h + beta)
        assert dc.gamma0 == pytest.approx(
            np.log(1 + (h - 4 * d - beta - dc.iota) / (2 * d)), abs=0, rel=1e-15)
    with pytest.raises(ValueError):
        derived_constants(1, 4.0, 1.0)


def test_assemble_structure():
    for d in (1, 2, 3):
        box, sites, op, v = make(d=d, radius=2)
        H = op.dense()
        assert np.array_equal(H, H.T)
        assert np.allclose(np.diag(H), 2 * d + v)
        off = H - np.diag(np.diag(H))
        dist = np.abs(sites[:, None, :] - sites[None, :, :]).sum(axis=2)
        assert np.all(off[dist == 1] == -1.0)
        assert np.all(off[dist != 1] == 0.0)
        assert sp.issparse(op.matrix)
        w = op.eigenvalues()
        assert np.all(np.diff(w) >= 0)
        assert op.n == len(sites)


def test_tridiagonal_path_matches_dense():
    box, sites, op, v = make(d=1, radius=20)
    assert op.is_tridiagonal
    diag, off = op.tridiagonal_bands()
    assert np.allclose(diag, 2 + v)
    assert np.allclose(off, -1.0)
    H = op.dense()
    w_dense = np.linalg.eigvalsh(H)
    assert np.allclose(op.eigenvalues(), w_dense, atol=1e-10)


def test_green_inverse_and_near_singular():
    box, sites, op, v = make(d=1, radius=6, all_barrier=True)
    G = green(op, 2.0)
    H = op.dense()
    resid = (H - 2.0 * np.eye(op.n)) @ G - np.eye(op.n)
    assert np.max(np.abs(resid)) < 1e-12
    with pytest.raises(NearSingular):
        green(op, float(op.eigenvalues()[0]))


def test_nonresonant_bounds_report():
    box, sites, op, v = make(d=2, radius=3, all_barrier=True)
    out = check_nonresonant_bounds(op, 3.0, slack=1e-10)
    assert out["norm_ok"] and out["decay_ok"]
    assert out["norm_value"] <= out["norm_bound"]
    assert out["margins"]["norm"] >= 0
    assert out["margins"]["decay"] >= 0
    assert out["n"] == op.n


def test_nonresonant_preconditions():
    box, sites, op, v = make(d=1, radius=6, all_barrier=True)
    with pytest.raises(ValueError, match="outside"):
        check_nonresonant_bounds(op, 21.0)
    box2, sites2, op2, v2 = make(d=1, radius=6, all_barrier=False)
    with pytest.raises(NotNonResonant, match="well"):
        check_nonresonant_bounds(op2, 2.0)
