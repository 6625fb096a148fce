"""End-to-end acceptance checks, one test per numbered criterion.

Each test is self-contained, deterministic under its hard-coded seeds, and
asserts the exact tolerance it states.  Shared geometry helpers live at the
top; tests stay independent of each other.
"""

import dataclasses
import math

import numpy as np
import pytest
import scipy.linalg as sla

from hierloc import experiments as xp
from hierloc import schur as sc
from hierloc import spectral as spl
from hierloc import transversality as tv
from hierloc.lattice import LatticeBox, cone, domain_sites
from hierloc.operator import (ModelParams, assemble, check_nonresonant_bounds,
                              derived_constants)
from hierloc.potential import (HierarchyParams, sample_bernoulli,
                               symmetric_hierarchical, total_potential)
from hierloc.rng import bernoulli, split


def random_box_operator(d, radius, h, beta, seed):
    """Random two-level landscape: Bernoulli well/barrier mask plus disorder."""
    box = LatticeBox((0,) * d, radius)
    sites = domain_sites(box)
    v_hi = np.where(bernoulli(seed, 0, sites) > 0, h, 0.0)
    v = v_hi + beta * bernoulli(seed, 1, sites)
    return box, sites, assemble(box, v, ModelParams(d, h, beta))


def low_window(d, h, beta):
    dc = derived_constants(d, h, beta)
    return (-dc.iota, 4 * d + beta + dc.iota)


HIER = HierarchyParams(d=1, d0=9, alpha=1.7, h=20.0, beta=1.0)


def test_c01_spectral_inclusion_500_instances():
    rep = xp.spectral_inclusion_experiment(trials=500, seed=101, tol=1e-9)
    assert rep.ok
    assert len(rep.records) == 500
    assert rep.stats["failures"] == 0
    assert rep.stats["total_violations"] == 0


def test_c02_nonresonant_green_bounds_200_boxes():
    rng = np.random.default_rng(202)
    radii = {1: (5, 51), 2: (2, 9), 3: (1, 5)}
    for t in range(200):
        d = int(rng.integers(1, 4))
        h = float(rng.choice([20.0, 60.0] if d == 3 else [10.0, 20.0, 60.0]))
        beta = float(rng.choice([0.25, 1.0]))
        radius = int(rng.integers(*radii[d]))
        box = LatticeBox((0,) * d, radius)
        sites = domain_sites(box)
        assert len(sites) <= 1000
        v = h + beta * bernoulli(split(202, t), 0, sites)
        op = assemble(box, v, ModelParams(d, h, beta))
        E = float(rng.uniform(0.0, 4 * d + beta))
        out = check_nonresonant_bounds(op, E, slack=1e-10)
        assert out["norm_ok"], (t, d, radius, h, beta, E, out)
        assert out["decay_ok"], (t, d, radius, h, beta, E, out)


def cone_index_table(box, d):
    """Interior-site indices and, per direction, the 2d cone indices each."""
    sites = domain_sites(box)
    center = np.asarray(box.center)
    interior = np.nonzero(np.max(np.abs(sites - center), axis=1)
                          <= box.radius - 2)[0]
    tables = []
    for axis in range(1, d + 1):
        for sigma in (-1, 1):
            rows = [box.index_of(cone(tuple(sites[i]), axis, sigma).sites)
                    for i in interior]
            tables.append(np.asarray(rows))
    return interior, tables


def test_c03_cone_property_exhaustive_interior():
    cases = {1: 15, 2: 4, 3: 3}
    rng = np.random.default_rng(303)
    for d, radius in cases.items():
        checked = 0
        for inst in range(10):
            box, sites, op = random_box_operator(d, radius, 20.0, 1.0,
                                                 split(303, 100 * d + inst))
            interior, tables = cone_index_table(box, d)
            assert interior.size > 0
            dec = spl.eig(op)
            picks = rng.choice(dec.eigenvalues.size, size=10, replace=False)
            for r in picks:
                lam = dec.eigenvalues[r]
                u = np.abs(dec.eigenvectors[:, r])
                c_bound = float(np.max(np.abs(2 * d + op.v_total - lam))
                                + 2 * d - 1)
                for tab in tables:
                    lhs = u[interior]
                    rhs = c_bound * np.max(u[tab], axis=1) + 1e-10
                    assert np.all(lhs <= rhs)
                checked += 1
        assert checked == 100


def test_c04_influence_lemma_100_eigenpairs():
    geoms = [(1, 10, 3), (2, 5, 2)]
    collected = 0
    t = 0
    while collected < 100 and t < 400:
        d, r2, r1 = geoms[t % 2]
        dc = derived_constants(d, 20.0, 1.0)
        B2 = LatticeBox((0,) * d, r2)
        B1 = LatticeBox((0,) * d, r1)
        box, sites, op = random_box_operator(d, r2, 20.0, 1.0, split(404, t))
        lo, hi = low_window(d, 20.0, 1.0)
        dec = spl.eig_in_window(op, lo, hi)
        idx1 = B2.index_of(domain_sites(B1))
        for r in range(dec.eigenvalues.size):
            if collected >= 100:
                break
            u = dec.eigenvectors[:, r]
            lam = float(dec.eigenvalues[r])
            _, value = tv.influence_max(u, B1, B2, lam)
            floor = dc.gamma ** B2.radius * float(np.max(np.abs(u[idx1])))
            assert value >= floor - 1e-10, (t, r, value, floor)
            collected += 1
        t += 1
    assert collected == 100


def test_c05_d1_transversal_half_box():
    dc = derived_constants(1, 20.0, 1.0)
    rng = np.random.default_rng(505)
    pairs = 0
    for t in range(100):
        L = int(rng.integers(5, 41))
        box, sites, op = random_box_operator(1, L, 20.0, 1.0, split(505, t))
        lo, hi = low_window(1, 20.0, 1.0)
        dec = spl.eig_in_window(op, lo, hi)
        if dec.eigenvalues.size == 0:
            continue
        U = xp.refine_eigenvectors(op, dec.eigenvalues, dec.eigenvectors)
        for r in range(dec.eigenvalues.size):
            u = U[:, r]
            ref = sites[int(np.argmax(np.abs(u)))]
            T = tv.transversal_set(u, box, ref, dc.gamma ** L)
            assert len(T) >= 0.5 * len(sites), (t, L, r, len(T))
            pairs += 1
    assert pairs >= 100


def test_c06_wegner_mc_matches_bruteforce():
    rng = np.random.default_rng(606)
    params = ModelParams(1, 20.0, 1.0)
    for t in range(20):
        radius = int(rng.integers(5, 8))
        box = LatticeBox((0,), radius)
        sites = domain_sites(box)
        assert len(sites) <= 16
        v_hi = np.where(bernoulli(split(606, t), 0, sites) > 0, 20.0, 0.0)
        E = float(rng.uniform(0.5, 4.5))
        eps = float(rng.uniform(0.02, 0.25))
        exact = xp.wegner_bruteforce(box, v_hi, params, E, eps)
        rep = xp.wegner_mc(box, v_hi, params, E, eps, trials=100000,
                           seed=split(1606, t))
        lo, hi = rep.stats["wilson_ci"]
        assert rep.stats["z"] == 4.0
        assert lo <= exact <= hi, (t, exact, lo, hi)


def test_c07_schur_correspondence_200_splits():
    rng = np.random.default_rng(707)
    for t in range(200):
        n = int(rng.integers(8, 21))
        A = rng.normal(size=(n, n))
        A = (A + A.T) / 2
        p = int(rng.integers(1, n))
        w = np.linalg.eigvalsh(A)
        E = float(rng.uniform(w[0], w[-1]))
        out = sc.block_correspondence_check(A, p, E, tol=1e-8)
        assert out["ok"], (t, n, p, E, out)


def test_c08_fixed_point_cascades_and_scalar_form():
    state = sc.SchurCascadeState(xp.DESK)
    for seed in range(50):
        for j, delta in ((1, 1e-7), (2, 1e-13)):
            spec = state.operator(j, seed).eigenvalues()
            E = float(spec[0]) + delta
            lam = sc.fixed_point_eigenvalue(state, j, E, seed=seed)
            assert abs(lam - E) < 1e-5

    rng = np.random.default_rng(808)
    for t in range(100):
        a = float(rng.uniform(-2.0, 2.0))
        c = a + float(rng.choice([-1.0, 1.0])) * float(rng.uniform(0.5, 2.0))
        b = float(rng.uniform(0.1, 1.5))
        H = np.array([[a, b], [b, c]])
        disc = math.sqrt((a - c) ** 2 + 4 * b * b)
        roots = ((a + c) - disc) / 2, ((a + c) + disc) / 2
        # the iteration lam -> a - b^2/(c - lam) attracts to the root on the
        # kept block's side of the pole c, i.e. the one farther from c
        root = roots[0] if a < c else roots[1]
        start = root + float(rng.uniform(-1, 1)) * min(0.05, 0.2 * abs(root - c))
        lam = sc.fixed_point_eigenvalue_dense(H, 1, start, tol=1e-14)
        assert min(abs(lam - r) for r in roots) <= 1e-12


def test_c09_monotonicity_1000_trials():
    rep = xp.monotonicity_experiment(trials=1000, seed=909)
    assert rep.ok
    assert rep.stats["violations"] == 0
    assert len(rep.records) == 1000
    for r in rep.records:
        assert r["nhat_next"] <= r["nhat_prev"]
    lo, hi = rep.stats["conditional_ci"]
    assert 0.0 <= lo <= hi <= 1.0
    assert rep.stats["live_trials"] > 0
    assert rep.stats["conditional_frequency"] is not None


def test_c10_wegner_martingale_tail_and_reproducibility():
    state = sc.SchurCascadeState(xp.DESK)
    spec0 = state.operator(0, 999).eigenvalues()
    dc = state.constants
    in_low = spec0[(spec0 >= -dc.iota) & (spec0 <= 4 * dc.d + dc.beta + dc.iota)]
    E_ref = float(in_low[0])

    for P in (4, 6):
        cfg = dataclasses.replace(xp.DESK, P=P)
        rep = xp.wegner_martingale_experiment(trials=300, seed=7, config=cfg,
                                              E=E_ref)
        assert rep.ok
        s = rep.stats
        assert s["reproducible"] is True
        assert s["bad_frequency"] <= s["threshold"]
        assert s["threshold"] == pytest.approx(
            math.exp(-P) + 3 * math.sqrt(math.exp(-P) * (1 - math.exp(-P)) / 300))
        for r in rep.records:
            tr = r["nhat_trace"]
            assert all(a >= b for a, b in zip(tr, tr[1:]))

    cfg6 = dataclasses.replace(xp.DESK, P=6)
    st6 = sc.SchurCascadeState(cfg6)
    one = sc.wegner_martingale_run(st6, E_ref, split(7, 3))
    two = sc.wegner_martingale_run(st6, E_ref, split(7, 3))
    assert one.to_json_lines() == two.to_json_lines()


def test_c11_toolbox_1000_pairs():
    rng = np.random.default_rng(1111)
    for _ in range(1000):
        A = rng.normal(size=(10, 10))
        A = (A + A.T) / 2
        B = rng.normal(size=(10, 10))
        B = (B + B.T) / 2
        out = spl.weyl_stability_spread_checks(A, B, slack=1e-10)
        assert out["weyl_ok"] and out["stability_ok"] and out["spread_ok"]

        k = int(rng.integers(2, 11))
        Q, _ = np.linalg.qr(rng.normal(size=(10, k)))
        eps = 1e-3
        M = Q + (eps / (4 * k)) * rng.normal(size=(10, k))
        gram = M.T @ M
        assert np.max(np.abs(gram - np.eye(k))) <= eps
        assert spl.approx_orthogonality_independent(M, eps) is True


def test_c12_rank_one_trace_inequality():
    rng = np.random.default_rng(1212)
    r1, r2, r3, r4, r5 = 1e-4, 0.3, 0.5, 0.6, 0.9
    for t in range(50):
        n = int(rng.integers(8, 15))
        x = int(rng.integers(0, n))
        evals = np.empty(n)
        evals[x] = rng.uniform(0.2, 0.9) * r1
        rest = [i for i in range(n) if i != x]
        n_neg = int(rng.integers(1, 4))
        evals[rest[:n_neg]] = rng.uniform(-2.0, -0.5, size=n_neg)
        evals[rest[n_neg:]] = rng.uniform(0.45, 3.0, size=len(rest) - n_neg)
        A = np.diag(evals)
        Q = np.eye(n)
        block, _ = np.linalg.qr(rng.normal(size=(n - 1, n - 1)))
        Q[np.ix_(rest, rest)] = block
        A = Q @ A @ Q.T
        out = spl.rank_one_shift_check(A, x, 1.0, r1, r2, r3, r4, r5)
        assert out["applicable"], (t, out["hypotheses"])
        assert out["increased"], (t, out)


def test_c13_first_order_variation_50_instances():
    rng = np.random.default_rng(1313)
    for t in range(50):
        radius = int(rng.integers(4, 15))
        box, sites, op = random_box_operator(1, radius, 20.0, 1.0,
                                             split(1313, t))
        assert 8 <= len(sites) <= 30
        site = int(rng.integers(0, len(sites)))
        out = spl.eigenvalue_variation_check(op, site, 1.0)
        assert out["n_checked"] >= 1
        assert out["ok"], (t, [r for r in out["records"]
                               if not r.get("skipped") and not r["ok"]])


def test_c14_uc_martingale_d2_L60_500_seeds():
    rep = xp.uc_martingale_experiment(60, 1.0, ModelParams(2, 20.0, 1.0),
                                      trials=500, seed=1414)
    assert rep.ok
    s = rep.stats
    assert s["disjoint_edges"] is True
    assert s["increments_ok"] is True
    assert s["steps"] >= 1
    for step in s["per_step"]:
        assert step["z_mean"] >= 0.5 - 3 * s["sigma"]


def test_c15_msd_ordering_and_norm_conservation():
    V_hi = symmetric_hierarchical(HIER, 2)
    mp = ModelParams(1, 20.0, 1.0)
    window = low_window(1, 20.0, 1.0)
    times = np.linspace(0.0, 50.0, 26)

    clean = assemble(V_hi.domain, np.asarray(V_hi.values, dtype=np.float64), mp)
    out0 = xp.msd(clean, window, times)
    assert out0["norm_dev_max"] <= 1e-10
    peak0 = float(np.max(out0["r2"]))

    wins = 0
    for t in range(50):
        omega = sample_bernoulli(V_hi.domain, split(1515, t))
        op = assemble(V_hi.domain, total_potential(V_hi, omega, 1.0), mp)
        out = xp.msd(op, window, times)
        assert out["norm_dev_max"] <= 1e-10, t
        if peak0 > float(np.max(out["r2"])):
            wins += 1
    assert wins >= 40, wins


def test_c16_decay_profiles_every_low_window_state():
    mp = ModelParams(1, 20.0, 1.0)
    dc = derived_constants(1, 20.0, 1.0)
    window = low_window(1, 20.0, 1.0)
    V_hi = symmetric_hierarchical(HIER, 2)
    for t in range(50):
        omega = sample_bernoulli(V_hi.domain, split(1616, t))
        op = assemble(V_hi.domain, total_potential(V_hi, omega, 1.0), mp)
        fits = xp.decay_profile(op, window)
        assert len(fits) > 0
        for f in fits:
            assert f["rate"] >= 0.4 * dc.gamma0, (t, f)
            assert f["r2"] >= 0.9, (t, f)
