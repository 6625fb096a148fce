"""Spectral helpers: windows, counting, perturbation toolbox."""

import numpy as np
import pytest

from hierloc.lattice import LatticeBox, domain_sites
from hierloc.operator import ModelParams, assemble
from hierloc.rng import bernoulli
from hierloc.spectral import (DegenerateEigenvalue,
                              approx_orthogonality_independent,
                              count_in_interval, eig, eig_in_window,
                              eigenvalue_count_bound_check,
                              eigenvalue_variation_check, rank_one_shift_check,
                              spectral_inclusion_check, spread,
                              weyl_stability_spread_checks)


def random_sym(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    return (A + A.T) / 2


def well_barrier_operator(radius=6, seed=4):
    box = LatticeBox((0,), radius)
    sites = domain_sites(box)
    v_hi = np.where(bernoulli(seed, 0, sites) > 0, 20.0, 0.0)
    return assemble(box, v_hi + bernoulli(seed, 1, sites),
                    ModelParams(1, 20.0, 1.0))


def test_eig_and_windows():
    A = random_sym(12, 0)
    dec = eig(A)
    assert dec.source_dim == 12
    assert np.all(np.diff(dec.eigenvalues) >= 0)
    resid = A @ dec.eigenvectors - dec.eigenvectors * dec.eigenvalues
    assert np.max(np.abs(resid)) < 1e-12
    lo, hi = -0.5, 0.5
    win = eig_in_window(A, lo, hi)
    inside = (dec.eigenvalues >= lo) & (dec.eigenvalues <= hi)
    assert win.eigenvalues.shape == (inside.sum(),)
    assert np.allclose(win.eigenvalues, dec.eigenvalues[inside])


def test_count_in_interval():
    spec = np.array([0.0, 0.5, 0.5, 1.0, 1.5])
    assert count_in_interval(spec, 0.5, 1.0) == 3  # closed, with multiplicity
    assert count_in_interval(spec, 0.6, 0.9) == 0
    assert count_in_interval(spec, -10.0, 10.0) == 5
    with pytest.raises(ValueError):
        count_in_interval(spec, 1.0, 0.0)


def test_spectral_inclusion_check_bands():
    op = well_barrier_operator()
    out = spectral_inclusion_check(op)
    assert out["ok"]
    assert out["violations"] == []
    assert out["low_band"] == [0.0, 5.0]
    assert out["high_band"] == [20.0, 25.0]
    assert out["n_eigenvalues"] == op.n


def test_spread():
    assert spread(np.diag([1.0, 4.0, 2.0])) == 3.0
    assert spread(np.eye(3)) == 0.0


def test_weyl_stability_spread_random_pairs():
    for t in range(50):
        out = weyl_stability_spread_checks(random_sym(8, 2 * t),
                                           random_sym(8, 2 * t + 1),
                                           slack=1e-10)
        assert out["weyl_ok"] and out["stability_ok"] and out["spread_ok"]
        assert min(out["margins"].values()) >= -1e-10


def test_weyl_equality_case():
    A = np.diag([0.0, 2.0])
    B = np.eye(2)
    out = weyl_stability_spread_checks(A, B, slack=1e-10)
    assert out["weyl_ok"]
    assert out["margins"]["weyl_upper"] == pytest.approx(0.0, abs=1e-12)


def test_approx_orthogonality():
    rng = np.random.default_rng(5)
    Q, _ = np.linalg.qr(rng.normal(size=(10, 4)))
    assert approx_orthogonality_independent(Q, 0.0) is True
    M = Q + 1e-5 * rng.normal(size=(10, 4))
    assert approx_orthogonality_independent(M, 1e-4) is True
    dup = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert approx_orthogonality_independent(dup, 0.1) is False
    with pytest.raises(ValueError):
        approx_orthogonality_independent(np.empty((3, 0)), 0.1)


def test_rank_one_gating_reports_without_asserting():
    A = np.diag([5e-5, 1.0, 2.0, -1.0])
    # r5 >= 1 violates the ordering hypothesis
    out = rank_one_shift_check(A, 0, 1.0, 1e-4, 0.3, 0.5, 0.6, 1.5)
    assert not out["hypotheses"]["h1_ordering"]
    assert not out["applicable"]
    assert "increased" not in out
    # no run eigenvalue in (0, r1): sandwich hypothesis fails
    B = np.diag([0.5, 1.0, 2.0, -1.0])
    out = rank_one_shift_check(B, 0, 1.0, 1e-4, 0.3, 0.5, 0.6, 0.9)
    assert not out["hypotheses"]["h3_sandwich"]
    assert not out["applicable"]


def test_eigenvalue_variation_analytic_2x2():
    H = np.array([[0.0, 0.3], [0.3, 1.0]])
    w, V = np.linalg.eigh(H)
    out = eigenvalue_variation_check(H, 0, 1.0)
    assert out["ok"]
    assert out["n_checked"] == 2
    for rec in out["records"]:
        assert rec["predicted"] == pytest.approx(V[0, rec["j"]] ** 2, rel=1e-12)
        assert rec["error"] <= 1e-6 + 1e-4 * abs(rec["predicted"])


def test_eigenvalue_variation_degenerate():
    with pytest.raises(DegenerateEigenvalue):
        eigenvalue_variation_check(np.eye(3), 0, 1.0, j=0)
    with pytest.raises(DegenerateEigenvalue):
        eigenvalue_variation_check(np.eye(3), 0, 1.0)


def test_eigenvalue_count_bound():
    from hierloc.potential import (HierarchyParams, sample_bernoulli,
                                   symmetric_hierarchical, total_potential)
    par = HierarchyParams(d=1, d0=5, alpha=2.0, h=20.0, beta=1.0)
    V = symmetric_hierarchical(par, 1)
    om = sample_bernoulli(V.domain, 2)
    op = assemble(V.domain, total_potential(V, om, 1.0), ModelParams(1, 20.0, 1.0))
    out = eigenvalue_count_bound_check(op, par, 1, 0)
    assert out["ok"]
    assert out["count"] <= out["bound"]
    assert out["count"] == 183
    assert out["bound"] == 486
