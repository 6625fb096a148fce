"""Hierarchical landscape construction and Bernoulli disorder."""

import json

import numpy as np
import pytest

from hierloc.lattice import domain_sites
from hierloc.potential import (HierarchyParams, InfeasibleGeometry,
                               sample_bernoulli, symmetric_hierarchical,
                               total_potential, validate_hierarchy)
from hierloc.rng import bernoulli

PAR = HierarchyParams(d=1, d0=5, alpha=2.0, h=20.0, beta=1.0)


def test_params_validation():
    with pytest.raises(ValueError, match="d >= 1"):
        HierarchyParams(d=0, d0=5, alpha=2.0, h=20.0, beta=1.0)
    with pytest.raises(ValueError, match="d0 > 1"):
        HierarchyParams(d=1, d0=1, alpha=2.0, h=20.0, beta=1.0)
    with pytest.raises(ValueError, match="alpha > 1"):
        HierarchyParams(d=1, d0=5, alpha=1.0, h=20.0, beta=1.0)
    with pytest.raises(ValueError, match="h > 4d"):
        HierarchyParams(d=1, d0=5, alpha=2.0, h=-1.0, beta=1.0)


def test_symmetric_hierarchy_k1_oracle():
    V = symmetric_hierarchical(PAR, 1)
    assert V.domain.radius == 6 * 25
    sites = domain_sites(V.domain).ravel()
    vals = np.asarray(V.values)
    assert set(np.unique(vals)) == {0.0, 20.0}
    wells = sites[vals == 0.0]
    assert len(wells) == 183
    # three level-0 blocks of radius 30, symmetric about the center
    intervals = [(-150, -90), (-30, 30), (90, 150)]
    expected = np.concatenate([np.arange(a, b + 1) for a, b in intervals])
    assert np.array_equal(wells, expected)


def test_validate_hierarchy_clauses():
    V = symmetric_hierarchical(PAR, 1)
    out = validate_hierarchy(V, PAR, 1)
    assert out["ok"]
    assert all(c["ok"] for c in out["clauses"])
    names = {c["clause"] for c in out["clauses"]}
    assert {"wells_match_values", "count", "containment", "distance",
            "diameter"} <= names


def test_infeasible_geometry():
    with pytest.raises(InfeasibleGeometry, match="gap"):
        symmetric_hierarchical(
            HierarchyParams(d=1, d0=5, alpha=1.5, h=20.0, beta=1.0), 1)


def test_sample_bernoulli_and_total_potential():
    V = symmetric_hierarchical(PAR, 1)
    om = sample_bernoulli(V.domain, 9)
    sites = domain_sites(V.domain)
    assert om.omega.shape == (len(sites),)
    assert set(np.unique(om.omega)) <= {0, 1}
    assert om.seed == 9
    assert np.array_equal(om.omega, bernoulli(9, 0, sites))
    v = total_potential(V, om, 0.5)
    assert np.allclose(v, np.asarray(V.values) + 0.5 * om.omega)
    v0 = total_potential(V, om, 0.0)
    assert np.array_equal(v0, np.asarray(V.values, dtype=np.float64))


def test_restriction_consistency_of_disorder():
    """Same seed on a sub-domain reproduces the shared coordinates."""
    V = symmetric_hierarchical(PAR, 1)
    sub = symmetric_hierarchical(PAR, 0)
    om_big = sample_bernoulli(V.domain, 4)
    om_small = sample_bernoulli(sub.domain, 4)
    big_sites = domain_sites(V.domain)
    small_sites = domain_sites(sub.domain)
    idx = V.domain.index_of(small_sites)
    assert np.array_equal(om_big.omega[idx], om_small.omega)
    assert len(small_sites) < len(big_sites)


def test_to_json_roundtrip():
    V = symmetric_hierarchical(PAR, 1)
    doc = json.loads(V.to_json())
    assert doc["k"] == 1
    assert doc["radius"] == 150
    assert doc["params"]["d0"] == 5
    total = sum(n for _, n in doc["values_rle"])
    assert total == len(domain_sites(V.domain))
    flat = np.concatenate([np.full(n, x) for x, n in doc["values_rle"]])
    assert np.array_equal(flat, np.asarray(V.values, dtype=np.float64))
    assert doc["tree"]["level"] == 1
    assert len(doc["tree"]["children"]) == 3
