"""Geometry of Z^d: boxes, site sets, boundaries, cones, and scale ladders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from mpmath import mp


def _as_points(x, dim=None):
    pts = np.asarray(x, dtype=np.int64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"expected points in Z^{dim}, got shape {pts.shape}")
    return pts


def lex_order(points: np.ndarray) -> np.ndarray:
    """Sort permutation: lexicographic with the last coordinate slowest,
    matching LatticeBox enumeration."""
    return np.lexsort(tuple(points[:, k] for k in range(points.shape[1])))


class LatticeBox:
    """Axis-aligned ℓ∞ ball {x : |x - center|_∞ <= radius} with a fixed
    site enumeration (first coordinate fastest, last slowest)."""

    def __init__(self, center, radius: int, dim: int | None = None):
        center = tuple(int(c) for c in np.atleast_1d(np.asarray(center, dtype=np.int64)))
        if dim is not None and len(center) != dim:
            raise ValueError("center/dim mismatch")
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        self.center = center
        self.radius = int(radius)
        self.dim = len(center)
        self.side = 2 * self.radius + 1
        self.n = self.side ** self.dim
        self._sites = None

    @property
    def sites(self) -> np.ndarray:
        if self._sites is None:
            idx = np.arange(self.n, dtype=np.int64)
            offs = np.empty((self.n, self.dim), dtype=np.int64)
            for k in range(self.dim):
                offs[:, k] = (idx // self.side ** k) % self.side
            self._sites = offs - self.radius + np.asarray(self.center, dtype=np.int64)
        return self._sites

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        offs = pts - np.asarray(self.center, dtype=np.int64)
        return np.all(np.abs(offs) <= self.radius, axis=1)

    def index_of(self, points) -> np.ndarray:
        """Indices of points in the enumeration; raises if any lie outside."""
        pts = _as_points(points, self.dim)
        offs = pts - np.asarray(self.center, dtype=np.int64) + self.radius
        if np.any((offs < 0) | (offs >= self.side)):
            raise ValueError("point outside box")
        idx = np.zeros(pts.shape[0], dtype=np.int64)
        for k in range(self.dim):
            idx += offs[:, k] * self.side ** k
        return idx

    def __len__(self):
        return self.n

    def __eq__(self, other):
        return (isinstance(other, LatticeBox)
                and self.center == other.center and self.radius == other.radius)

    def __hash__(self):
        return hash((self.center, self.radius))

    def __repr__(self):
        return f"LatticeBox(center={self.center}, radius={self.radius})"


class SiteSet:
    """Duplicate-free set of Z^d sites in canonical lexicographic order."""

    def __init__(self, points, dim: int | None = None):
        pts = np.asarray(points, dtype=np.int64)
        if pts.size == 0:
            pts = pts.reshape(0, dim if dim is not None else 1)
        pts = _as_points(pts, dim)
        pts = np.unique(pts, axis=0)  # row-sorted, deduplicated
        if pts.shape[0]:
            pts = pts[lex_order(pts)]
        self.sites = pts
        self.dim = pts.shape[1]
        self._lookup = None

    @property
    def lookup(self) -> dict:
        if self._lookup is None:
            self._lookup = {tuple(p): i for i, p in enumerate(self.sites)}
        return self._lookup

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        table = self.lookup
        return np.fromiter((tuple(p) in table for p in pts), dtype=bool, count=pts.shape[0])

    def index_of(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        table = self.lookup
        return np.fromiter((table[tuple(p)] for p in pts), dtype=np.int64, count=pts.shape[0])

    @property
    def n(self):
        return self.sites.shape[0]

    def __len__(self):
        return self.sites.shape[0]

    def __eq__(self, other):
        return (isinstance(other, SiteSet) and self.sites.shape == other.sites.shape
                and bool(np.all(self.sites == other.sites)))

    def __repr__(self):
        return f"SiteSet({self.n} sites, d={self.dim})"


def domain_sites(domain) -> np.ndarray:
    """Uniform site-array view of a LatticeBox, SiteSet, or raw array."""
    if isinstance(domain, LatticeBox):
        return domain.sites
    if isinstance(domain, SiteSet):
        return domain.sites
    return _as_points(domain)


@dataclass(frozen=True)
class ScaleLadder:
    """Strictly increasing integer scales: newtonian d_{k+1} = floor(d_k^alpha)
    or a-adic L_{j+1} = a * L_j."""
    kind: str
    values: tuple
    alpha: float | None = None
    a: int | None = None

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if any(v2 <= v1 for v1, v2 in zip(vals, vals[1:])):
            raise ValueError("ladder values must be strictly increasing")
        if self.kind == "a_adic":
            if any(v2 != self.a * v1 for v1, v2 in zip(vals, vals[1:])):
                raise ValueError("a-adic ratio violated")
        elif self.kind != "newtonian":
            raise ValueError(f"unknown ladder kind {self.kind!r}")

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]


def newtonian_scales(d0: int, alpha: float, k_max: int) -> ScaleLadder:
    """d_0, ..., d_{k_max} with d_{k+1} = floor(d_k^alpha), computed in
    extended precision before flooring."""
    if d0 <= 1 or alpha <= 1:
        raise ValueError("need d0 > 1 and alpha > 1")
    with mp.workdps(50):
        vals = [int(d0)]
        for _ in range(k_max):
            vals.append(int(mp.floor(mp.power(vals[-1], alpha))))
    return ScaleLadder("newtonian", tuple(vals), alpha=float(alpha))


def lambda_k(j, k: int, ladder: ScaleLadder) -> LatticeBox:
    """Level-k block centered at j: radius 2*floor(3*d_k)."""
    if ladder.kind != "newtonian":
        raise ValueError("lambda_k requires a newtonian ladder")
    if not 0 <= k < len(ladder):
        raise ValueError(f"level {k} out of range for ladder of length {len(ladder)}")
    return LatticeBox(j, 2 * (3 * ladder[k]))


def neighborhood(box: LatticeBox, margin: int) -> LatticeBox:
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    return LatticeBox(box.center, box.radius + margin)


def _neighbors_all(points: np.ndarray) -> np.ndarray:
    """All ℓ1-neighbors of each point, stacked: shape (2d*n, d)."""
    n, d = points.shape
    out = np.repeat(points, 2 * d, axis=0)
    block = np.zeros((2 * d, d), dtype=np.int64)
    for k in range(d):
        block[2 * k, k] = 1
        block[2 * k + 1, k] = -1
    out += np.tile(block, (n, 1))
    return out


def boundary(S, side: str) -> SiteSet:
    """inner: sites of S with a neighbor outside; outer: sites outside S with
    a neighbor inside."""
    pts = domain_sites(S)
    if side not in ("inner", "outer"):
        raise ValueError("side must be 'inner' or 'outer'")
    if pts.shape[0] == 0:
        return SiteSet(pts)
    if isinstance(S, LatticeBox):
        member = S.contains
    else:
        sset = S if isinstance(S, SiteSet) else SiteSet(pts)
        member = sset.contains
    nbrs = _neighbors_all(pts)
    inside = member(nbrs)
    if side == "inner":
        d = pts.shape[1]
        has_out = ~inside.reshape(-1, 2 * d)
        return SiteSet(pts[np.any(has_out, axis=1)], dim=pts.shape[1])
    return SiteSet(nbrs[~inside], dim=pts.shape[1])


def cone(x0, k: int, sigma: int) -> SiteSet:
    """Cone at x0 in direction sigma*e_k: the apex x0 + sigma*e_k plus every
    neighbor of the apex other than x0 (2d sites total)."""
    x0 = np.asarray(x0, dtype=np.int64).ravel()
    d = x0.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"axis {k} out of range for d={d}")
    if sigma not in (1, -1):
        raise ValueError("sigma must be +1 or -1")
    apex = x0.copy()
    apex[k - 1] += sigma
    pts = [apex]
    for nb in _neighbors_all(apex[None, :]):
        if not np.array_equal(nb, x0):
            pts.append(nb)
    return SiteSet(np.array(pts), dim=d)


def a_adic_ladder(L0: int, a: int, d_k: int, alpha: float):
    """Ladder L_j = L0 * a^j together with the unique P such that
    L_P <= d_k^sqrt(alpha) < L_{P+1}."""
    if L0 < 1 or a < 2:
        raise ValueError("need L0 >= 1 and a >= 2")
    with mp.workdps(50):
        bound = mp.power(d_k, mp.sqrt(alpha))
        if bound < L0:
            raise ValueError("bound d_k^sqrt(alpha) below L0: ladder undefined")
        vals = [int(L0)]
        while mp.mpf(vals[-1]) * a <= bound:
            vals.append(vals[-1] * a)
    P = len(vals) - 1
    return ScaleLadder("a_adic", tuple(vals), a=int(a)), P
