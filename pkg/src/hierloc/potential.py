"""Hierarchical {0,h} potentials, their validation, and Bernoulli disorder."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .lattice import (LatticeBox, ScaleLadder, SiteSet, domain_sites,
                      lambda_k, newtonian_scales)


class InfeasibleGeometry(Exception):
    """Translated wells would overlap or leave the block at some level."""

    def __init__(self, level, message):
        self.level = level
        super().__init__(f"level {level}: {message}")


@dataclass
class HierarchyParams:
    d: int
    d0: int
    alpha: float
    h: float
    beta: float
    N: int | None = None  # well density; defaults to the symmetric example's 2d+1

    def __post_init__(self):
        if self.N is None:
            self.N = 2 * self.d + 1
        if self.d < 1:
            raise ValueError("d >= 1 required")
        if self.h <= 4 * self.d + 1:
            raise ValueError("barrier height must satisfy h > 4d+1")
        if not 0 < self.beta <= 1:
            raise ValueError("coupling must satisfy 0 < beta <= 1")
        if self.alpha <= 1:
            raise ValueError("alpha > 1 required")
        if self.d0 <= 1:
            raise ValueError("d0 > 1 required")
        if self.N < 1:
            raise ValueError("N >= 1 required")

    def scales(self, k: int) -> ScaleLadder:
        return newtonian_scales(self.d0, self.alpha, k)


@dataclass
class Component:
    """Well component C_level^s: its well set plus sub-components."""
    level: int
    center: tuple
    sites: SiteSet
    children: list = field(default_factory=list)


class HierarchicalPotential:
    """Deterministic {0,h} potential on a block, with the explicit component
    tree stored so validation is independent of construction."""

    def __init__(self, params: HierarchyParams, k: int, domain: LatticeBox,
                 tree: Component, ladder: ScaleLadder):
        self.params = params
        self.level = k
        self.domain = domain
        self.tree = tree
        self.ladder = ladder
        values = np.full(domain.n, params.h, dtype=np.float64)
        well = tree.sites
        values[domain.index_of(well.sites)] = 0.0
        self.values = values

    @property
    def wells(self) -> SiteSet:
        return self.tree.sites

    def components(self, level: int) -> list:
        """All components at a given level across the tree."""
        found = []

        def walk(node):
            if node.level == level:
                found.append(node)
            for ch in node.children:
                walk(ch)

        walk(self.tree)
        return found

    def values_at(self, points) -> np.ndarray:
        return self.values[self.domain.index_of(points)]

    def to_json(self) -> str:
        def encode(node):
            return {"level": node.level, "center": list(node.center),
                    "children": [encode(ch) for ch in node.children]}

        runs = _rle(self.values)
        doc = {"params": {"d": self.params.d, "d0": self.params.d0,
                          "alpha": self.params.alpha, "h": self.params.h,
                          "beta": self.params.beta, "N": self.params.N},
               "k": self.level,
               "center": list(self.domain.center), "radius": self.domain.radius,
               "tree": encode(self.tree), "values_rle": runs}
        return json.dumps(doc)


def _rle(values):
    runs = []
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j < n and values[j] == values[i]:
            j += 1
        runs.append([float(values[i]), j - i])
        i = j
    return runs


def _level0_block(center, d0: int) -> LatticeBox:
    return LatticeBox(center, 2 * (3 * d0))


def _well_sites_of_centers(centers, d0):
    parts = [_level0_block(c, d0).sites for c in centers]
    return SiteSet(np.vstack(parts))


def _symmetric_tree(params, k, center, ladder) -> Component:
    center = tuple(int(c) for c in np.atleast_1d(center))
    if k == 0:
        block = _level0_block(center, params.d0)
        return Component(0, center, SiteSet(block.sites))
    t = 2 * (3 * ladder[k] - 3 * ladder[k - 1])
    offsets = [np.zeros(params.d, dtype=np.int64)]
    for axis in range(params.d):
        for sign in (1, -1):
            off = np.zeros(params.d, dtype=np.int64)
            off[axis] = sign * t
            offsets.append(off)
    children = [_symmetric_tree(params, k - 1, tuple(np.asarray(center) + off), ladder)
                for off in offsets]
    sites = SiteSet(np.vstack([ch.sites.sites for ch in children]))
    return Component(k, center, sites, children)


def symmetric_hierarchical(params: HierarchyParams, k: int, center=None) -> HierarchicalPotential:
    """The symmetric example: at every level 2d+1 components, the central one
    at the block center and one translated by ±2(3d_j - 3d_{j-1}) per axis."""
    if center is None:
        center = tuple([0] * params.d)
    ladder = params.scales(k)
    for j in range(1, k + 1):
        gap = 2 * (3 * ladder[j]) - 6 * (3 * ladder[j - 1])
        if gap < 2 * ladder[j]:
            raise InfeasibleGeometry(j, f"component gap {gap} < 2*d_{j} = {2 * ladder[j]}")
        reach = 2 * (3 * ladder[j] - 3 * ladder[j - 1]) + 2 * (3 * ladder[j - 1])
        if reach > 2 * (3 * ladder[j]):
            raise InfeasibleGeometry(j, "satellite block leaves the parent block")
    domain = lambda_k(center, k, ladder)
    tree = _symmetric_tree(params, k, center, ladder)
    return HierarchicalPotential(params, k, domain, tree, ladder)


def _set_distance_linf(A: np.ndarray, B: np.ndarray) -> int:
    """min over pairs of the ℓ∞ distance; chunked to bound memory."""
    best = np.iinfo(np.int64).max
    step = max(1, 10 ** 7 // max(1, B.shape[0] * A.shape[1]))
    for i in range(0, A.shape[0], step):
        chunk = A[i:i + step]
        dist = np.abs(chunk[:, None, :] - B[None, :, :]).max(axis=2)
        best = min(best, int(dist.min()))
    return best


def validate_hierarchy(V: HierarchicalPotential, params: HierarchyParams, k: int) -> dict:
    """Check every hierarchy clause per level; report-style, never raises."""
    ladder = V.ladder
    clauses = []

    def add(level, name, ok, detail):
        clauses.append({"level": level, "clause": name, "ok": bool(ok), "detail": detail})

    # stored wells must match the value map
    wells_from_values = V.domain.sites[V.values == 0.0]
    match = (wells_from_values.shape[0] == V.wells.n
             and bool(np.all(SiteSet(wells_from_values).sites == V.wells.sites)))
    add(k, "wells_match_values", match,
        f"{wells_from_values.shape[0]} zero sites vs {V.wells.n} stored")

    def walk(node):
        j = node.level
        if j == 0:
            diam = int(np.max(node.sites.sites.max(axis=0) - node.sites.sites.min(axis=0)))
            add(0, "diameter", diam <= 4 * (3 * ladder[0]),
                f"diam {diam} vs bound {4 * (3 * ladder[0])}")
            return
        kids = node.children
        add(j, "count", len(kids) <= params.N, f"N_{j} = {len(kids)} vs N = {params.N}")
        central = LatticeBox(node.center, 2 * (3 * ladder[j - 1]))
        add(j, "containment", bool(np.all(central.contains(kids[0].sites.sites))),
            "C^1 inside the level-(j-1) block at the parent center")
        min_dist = None
        for s in range(len(kids)):
            for t in range(s + 1, len(kids)):
                dist = _set_distance_linf(kids[s].sites.sites, kids[t].sites.sites)
                min_dist = dist if min_dist is None else min(min_dist, dist)
        if min_dist is not None:
            add(j, "distance", min_dist >= 2 * ladder[j],
                f"min pairwise dist {min_dist} vs 2*d_{j} = {2 * ladder[j]}")
        for ch in kids:
            walk(ch)

    walk(V.tree)
    return {"ok": all(c["ok"] for c in clauses), "clauses": clauses}


@dataclass
class DisorderConfig:
    domain: object
    omega: np.ndarray
    seed: int

    def __post_init__(self):
        if len(self.omega) != domain_sites(self.domain).shape[0]:
            raise ValueError("omega length does not match the domain")


def sample_bernoulli(domain, seed: int) -> DisorderConfig:
    """i.i.d. fair {0,1} field; keyed by (seed, site coordinates) so nested
    domains and single-site resampling are consistent."""
    sites = domain_sites(domain)
    return DisorderConfig(domain, rng.bernoulli(seed, 0, sites), int(seed))


def total_potential(V_hi: HierarchicalPotential, omega: DisorderConfig, beta: float) -> np.ndarray:
    """Pointwise V_hi + beta * omega on the shared domain."""
    hi_sites = domain_sites(V_hi.domain)
    om_sites = domain_sites(omega.domain)
    if hi_sites.shape != om_sites.shape or not np.array_equal(hi_sites, om_sites):
        raise ValueError("potential and disorder domains differ")
    return V_hi.values + beta * omega.omega.astype(np.float64)
