"""Cone-property chains, influence maxima, transversal sets, layered
propagation on the elementary propagating region, and the unique-continuation
martingale."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .lattice import (LatticeBox, SiteSet, _neighbors_all, boundary, cone,
                      domain_sites)


class EquationResidualTooLarge(Exception):
    """Input does not solve the lattice equation to 1e-8 relative accuracy."""


class ZeroInitialData(Exception):
    """The martingale construction needs |u(0)| > 0."""


def _order_min(points: np.ndarray) -> int:
    """Index of the smallest point: first coordinate most significant."""
    best = 0
    for i in range(1, points.shape[0]):
        if tuple(points[i]) < tuple(points[best]):
            best = i
    return best


def _equation_residual(u, W, domain) -> float:
    """max over sites of |sum_{y~x} u(y) - W(x) u(x)| with zero extension."""
    sites = domain_sites(domain)
    n, d = sites.shape
    sset = domain if isinstance(domain, (LatticeBox, SiteSet)) else SiteSet(sites)
    nbrs = _neighbors_all(sites)
    inside = sset.contains(nbrs)
    acc = np.zeros(n)
    rows = np.repeat(np.arange(n), 2 * d)[inside]
    np.add.at(acc, rows, u[sset.index_of(nbrs[inside])])
    return float(np.max(np.abs(acc - W * u)))


@dataclass
class ChainTrace:
    sites: np.ndarray        # (s+1, d), starts at x0
    axis: int
    sigma: int
    values: np.ndarray       # u at the chain sites
    ratios: np.ndarray       # |u(n_j)| / |u(n_0)|
    bound: float             # 1 / (max|W| + 2d - 1)
    gamma: float | None = None

    @property
    def steps(self) -> int:
        return self.sites.shape[0] - 1


def cone_chain(u, x0, axis: int, sigma: int, domain, W, gamma=None) -> ChainTrace:
    """Greedy chain from x0 in direction sigma*e_axis: each step moves to the
    cone site with the largest |u| (ties to the smallest point), stopping at
    the inner boundary.  Requires u to solve sum_{y~x} u(y) = W(x) u(x)."""
    sites = domain_sites(domain)
    u = np.asarray(u, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    sset = domain if isinstance(domain, (LatticeBox, SiteSet)) else SiteSet(sites)
    d = sites.shape[1]

    scale = (float(np.max(np.abs(W))) + 2 * d) * max(float(np.max(np.abs(u))), 1e-300)
    resid = _equation_residual(u, W, sset)
    if resid > 1e-8 * scale:
        raise EquationResidualTooLarge(f"residual {resid:.3e} > 1e-8 * {scale:.3e}")

    def val(p):
        inside = sset.contains(p[None, :])[0]
        return float(u[sset.index_of(p[None, :])[0]]) if inside else 0.0

    x = np.asarray(x0, dtype=np.int64).ravel()
    chain = [x.copy()]
    vals = [val(x)]
    while True:
        apex = chain[-1].copy()
        apex[axis - 1] += sigma
        if not sset.contains(apex[None, :])[0]:
            break
        cand = cone(tuple(chain[-1]), axis, sigma).sites
        keep = cand[sset.contains(cand)]
        cvals = np.array([val(p) for p in keep])
        top = np.abs(cvals).max()
        pick = keep[np.abs(cvals) == top]
        nxt = pick[_order_min(pick)]
        chain.append(nxt)
        vals.append(val(nxt))

    sites_arr = np.array(chain)
    values = np.array(vals)
    base = abs(values[0])
    ratios = np.abs(values) / base if base > 0 else np.zeros_like(values)
    bound = 1.0 / (float(np.max(np.abs(W))) + 2 * d - 1)
    return ChainTrace(sites_arr, axis, sigma, values, ratios, bound, gamma)


def influence_values(u, B2) -> tuple:
    """(outer boundary SiteSet of B2, influence |sum of interior neighbors|)."""
    sites = domain_sites(B2)
    sset = B2 if isinstance(B2, (LatticeBox, SiteSet)) else SiteSet(sites)
    outer = boundary(sset, "outer")
    nbrs = _neighbors_all(outer.sites)
    inside = sset.contains(nbrs)
    acc = np.zeros(outer.n)
    rows = np.repeat(np.arange(outer.n), 2 * sites.shape[1])[inside]
    np.add.at(acc, rows, u[sset.index_of(nbrs[inside])])
    return outer, np.abs(acc)


def influence_max(u, B1, B2, lam=None) -> tuple:
    """(ybar, influence at ybar): the outer-boundary point of B2 with the
    largest influence, ties to the smallest point."""
    if isinstance(B1, LatticeBox) and isinstance(B2, LatticeBox):
        if B1.center != B2.center or B1.radius > B2.radius:
            raise ValueError("B1 must be a concentric sub-box of B2")
    outer, infl = influence_values(np.asarray(u, dtype=np.float64), B2)
    top = infl.max()
    ties = outer.sites[infl == top]
    ybar = ties[_order_min(ties)]
    return tuple(int(c) for c in ybar), float(top)


def transversal_set(u, box, ref_site, threshold: float) -> SiteSet:
    """{n in box : |u(n)| >= threshold * |u(ref_site)|}."""
    sites = domain_sites(box)
    sset = box if isinstance(box, (LatticeBox, SiteSet)) else SiteSet(sites)
    u = np.asarray(u, dtype=np.float64)
    ref = np.asarray(ref_site, dtype=np.int64).ravel()
    ref_val = abs(float(u[sset.index_of(ref[None, :])[0]]))
    mask = np.abs(u) >= threshold * ref_val
    return SiteSet(sites[mask], dim=sites.shape[1])


class PropagatingRegion:
    """The cone-shaped region {n_d >= 0, sum_{i<d}|n_i| + n_d <= L+1} with its
    layer structure and precomputed stencil neighbors."""

    def __init__(self, L: int, d: int):
        if d < 2:
            raise ValueError("the propagating region needs d >= 2")
        if L < 4:
            raise ValueError("L too small")
        self.L = int(L)
        self.d = int(d)
        layers = []
        lat_box = LatticeBox(tuple([0] * (d - 1)), L + 1)
        lat = lat_box.sites
        lat_norm = np.abs(lat).sum(axis=1)
        for c in range(L + 2):
            sub = lat[lat_norm <= L + 1 - c]
            layer = np.hstack([sub, np.full((sub.shape[0], 1), c, dtype=np.int64)])
            layers.append(layer)
        sites = np.vstack(layers)
        self.sites = sites
        self.n = sites.shape[0]
        self.layer_of = sites[:, d - 1].copy()
        self.layer_slices = []
        start = 0
        for layer in layers:
            self.layer_slices.append((start, start + layer.shape[0]))
            start += layer.shape[0]
        self._lookup = {tuple(p): i for i, p in enumerate(sites)}

        # stencil neighbors with sentinel self.n meaning "outside, value 0"
        sent = self.n
        self.up = np.full(self.n, sent, dtype=np.int64)
        self.down = np.full(self.n, sent, dtype=np.int64)
        self.lat = np.full((self.n, 2 * (d - 1)), sent, dtype=np.int64)
        for i, p in enumerate(sites):
            t = tuple(p)
            up = t[:d - 1] + (t[d - 1] + 1,)
            dn = t[:d - 1] + (t[d - 1] - 1,)
            self.up[i] = self._lookup.get(up, sent)
            self.down[i] = self._lookup.get(dn, sent)
            for a in range(d - 1):
                for s, off in ((0, 1), (1, -1)):
                    q = list(t)
                    q[a] += off
                    self.lat[i, 2 * a + s] = self._lookup.get(tuple(q), sent)

        self.initial_idx = np.nonzero(self.layer_of <= 1)[0]
        self.tee = sites[:, d - 1] - sites[:, :d - 1].sum(axis=1)        # <n, v_->
        self.tee_prime = sites[:, d - 1] + sites[:, :d - 1].sum(axis=1)  # <n, v_+>

    def index_of(self, point) -> int:
        return self._lookup[tuple(int(c) for c in np.asarray(point).ravel())]

    def contains(self, point) -> bool:
        return tuple(int(c) for c in np.asarray(point).ravel()) in self._lookup

    @property
    def initial_sites(self) -> np.ndarray:
        return self.sites[self.initial_idx]

    @property
    def side_boundary(self) -> SiteSet:
        both = ((self.tee == self.L) | (self.tee == self.L + 1)
                | (self.tee_prime == self.L) | (self.tee_prime == self.L + 1))
        return SiteSet(self.sites[both], dim=self.d)

    def _kernel(self, init_values: np.ndarray, W: np.ndarray,
                source_idx=None, source_val: float = 0.0) -> np.ndarray:
        """Layer-by-layer solve of u(x+e_d) = W(x)u(x) + source - u(x-e_d)
        - sum of lateral u; values outside the region read as 0."""
        ext = np.zeros(self.n + 1)
        ext[self.initial_idx] = init_values
        for c in range(1, self.L + 1):
            lo, hi = self.layer_slices[c]
            idx = np.arange(lo, hi)
            up = self.up[idx]
            produce = up < self.n
            idx = idx[produce]
            if idx.size == 0:
                break
            new = W[idx] * ext[idx] - ext[self.down[idx]] - ext[self.lat[idx]].sum(axis=1)
            if source_idx is not None:
                hit = idx == source_idx
                if np.any(hit):
                    new = new + hit * source_val
            ext[self.up[idx]] = new
        return ext[:self.n]


_REGION_CACHE: dict = {}


def propagating_region(L: int, d: int) -> PropagatingRegion:
    """Cached factory; regions are immutable after construction."""
    key = (int(L), int(d))
    if key not in _REGION_CACHE:
        _REGION_CACHE[key] = PropagatingRegion(*key)
    return _REGION_CACHE[key]


def propagate_solution(u0, lam: float, V, region: PropagatingRegion) -> np.ndarray:
    """Extend data on the two bottom layers to the whole region via the
    stencil (2d + V(x) - lambda) u(x) = sum_{y~x} u(y), unknown at x + e_d."""
    V = np.asarray(V, dtype=np.float64)
    if V.shape != (region.n,):
        raise ValueError("V must be given on the whole region")
    if callable(u0):
        init = np.asarray([u0(tuple(p)) for p in region.initial_sites], dtype=np.float64)
    else:
        init = np.asarray(u0, dtype=np.float64)
    if init.shape != (region.initial_idx.shape[0],):
        raise ValueError("u0 must cover exactly the two bottom layers")
    W = 2 * region.d + V - lam
    u = region._kernel(init, W)

    # the recurrence enforces the equation wherever the unknown exists
    enforced = (region.layer_of >= 1) & (region.up < region.n)
    ext = np.append(u, 0.0)
    acc = ext[region.up] + ext[region.down] + ext[region.lat].sum(axis=1)
    resid = np.abs(acc - W * u)[enforced]
    scale = max(float(np.max(np.abs(u))), 1e-300) * (float(np.max(np.abs(W))) + 2 * region.d)
    if resid.size and resid.max() > 1e-8 * scale:
        raise RuntimeError(f"propagation residual {resid.max():.3e} out of bounds")
    return u


def sensitivity_field(region: PropagatingRegion, V, lam: float, u: np.ndarray,
                      site_idx: int) -> np.ndarray:
    """ds/dV(site): the derivative of the propagated solution with respect to
    the potential at one site; linear propagation with source u(site)."""
    W = 2 * region.d + np.asarray(V, dtype=np.float64) - lam
    return region._kernel(np.zeros(region.initial_idx.shape[0]), W,
                          source_idx=site_idx, source_val=float(u[site_idx]))


@dataclass
class UcStep:
    j: int
    X: tuple
    X_next: tuple
    line_kind: str            # "T" (<n,v_->) or "Tp" (<n,v_+>)
    line_value: int
    edge_sites: np.ndarray
    u_X: float
    threshold: float
    Z: int
    Z_branch: tuple           # (Z at omega(X_j)=0, Z at omega(X_j)=1)
    a_coeff: float | None     # d=2 only: s(e_j) / u(X_j)
    n_edges: int


@dataclass
class UcMartingaleTrace:
    L: int
    d: int
    lam: float
    seed: int
    T: int
    X_sites: np.ndarray
    steps: list
    Z: np.ndarray
    partial_sums: np.ndarray
    pigeonhole_ok: bool
    edges_disjoint: bool
    increments_ok: bool

    def to_json_lines(self) -> str:
        import json
        lines = []
        for s in self.steps:
            lines.append(json.dumps({
                "j": s.j, "X": list(s.X), "X_next": list(s.X_next),
                "line": [s.line_kind, int(s.line_value)],
                "edges": [[int(c) for c in p] for p in s.edge_sites],
                "Z": s.Z, "Z_branch": list(s.Z_branch),
                "u_X": s.u_X, "threshold": s.threshold}))
        return "\n".join(lines) + "\n"


def _edge_candidates(region: PropagatingRegion, kind: str, value: int) -> np.ndarray:
    """Indices of (line + e_d) intersected with the side boundary, selected by
    the parity-matching level in {L, L+1}."""
    L = region.L
    S = L + 1 if (L + 1 - (value + 1)) % 2 == 0 else L
    if kind == "T":
        mask = (region.tee == value + 1) & (region.tee_prime == S)
    else:
        mask = (region.tee_prime == value + 1) & (region.tee == S)
    return np.nonzero(mask)[0]


def uc_martingale_run(L: int, u0, lam: float, params, seed: int,
                      T: int | None = None) -> UcMartingaleTrace:
    """Execute the cone-chain martingale: greedy sites X_j, tilted hyperplane
    per the step type, side-boundary edge set, indicator Z_j, with both
    omega(X_j) branches evaluated through the linear sensitivity field."""
    d = int(params.d)
    h = float(params.h)
    beta = float(params.beta)
    if d < 2:
        raise ValueError("the martingale construction needs d >= 2")
    if d == 2 and L < 40:
        raise ValueError("d=2 runs need L >= 40")
    if T is None:
        T = L // 10 if d == 2 else L // (200 * d)
    if T < 1:
        raise ValueError("T < 1: increase L or pass T explicitly")

    region = propagating_region(L, d)
    gamma = 1.0 / (4 * d + h + beta)
    omega = rng.bernoulli(seed, 0, region.sites).astype(np.float64)
    V = h + beta * omega

    if u0 is None:
        init = np.zeros(region.initial_idx.shape[0])
        origin = tuple([0] * d)
        init[np.nonzero([tuple(p) == origin for p in region.initial_sites])[0][0]] = 1.0
        u0 = init
    u = propagate_solution(u0, lam, V, region)

    origin_idx = region.index_of(tuple([0] * d))
    if u[origin_idx] == 0.0:
        raise ZeroInitialData("u0 vanishes at the origin")

    def uval(p) -> float:
        return float(u[region.index_of(p)])

    # Step 1: all first-layer cone sites compete, apex included; fall back to
    # the site two above the origin.
    X0 = np.zeros(d, dtype=np.int64)
    pool = [np.eye(d, dtype=np.int64)[d - 1]]
    for i in range(d - 1):
        for s in (1, -1):
            q = np.eye(d, dtype=np.int64)[d - 1].copy()
            q[i] += s
            pool.append(q)
    pool = np.array(pool)
    ach = np.array([abs(uval(p)) >= gamma * abs(uval(X0)) for p in pool])
    if np.any(ach):
        cand = pool[ach]
        X1 = cand[_order_min(cand)]
    else:
        X1 = 2 * np.eye(d, dtype=np.int64)[d - 1]
    X = [X0, X1]

    steps = []
    e_d = np.eye(d, dtype=np.int64)[d - 1]
    for j in range(1, T + 1):
        Xj = X[-1]
        uXj = uval(Xj)
        # generic selection: lateral achievers first, then straight, then double
        lats = []
        for i in range(d - 1):
            for s in (-1, 1):
                q = Xj + e_d
                q[i] += s
                lats.append(q.copy())
        lats = np.array(lats)
        lach = np.array([abs(uval(p)) >= gamma * abs(uXj) for p in lats])
        is_B = False
        if np.any(lach):
            cand = lats[lach]
            Xn = cand[_order_min(cand)]
            is_B = Xn[d - 1] - Xj[d - 1] == 1 and np.sum(Xn[:d - 1] - Xj[:d - 1]) == 1
        else:
            C = Xj + e_d
            Xn = C if abs(uval(C)) >= gamma * abs(uXj) else Xj + 2 * e_d
        if not region.contains(Xn):
            raise RuntimeError("chain left the region; T too large for L")

        if is_B:
            kind, value = "Tp", int(Xj[d - 1] + Xj[:d - 1].sum())
        else:
            kind, value = "T", int(Xj[d - 1] - Xj[:d - 1].sum())
        cand_idx = _edge_candidates(region, kind, value)
        if d == 2 and cand_idx.size != 1:
            raise RuntimeError("expected a unique edge site for d=2")

        s_field = sensitivity_field(region, V, lam, u, region.index_of(Xj))
        if d == 2 or uXj == 0.0:
            # d=2: the parity site is the edge set by definition; the
            # in-line coefficient there has magnitude one
            edge_idx = cand_idx
        else:
            dep = np.abs(s_field[cand_idx]) > 0.5 * abs(uXj)
            edge_idx = cand_idx[dep]

        thr = 0.5 * beta * abs(uXj)

        def indicator(vec) -> int:
            if edge_idx.size == 0:
                return 1
            good = np.count_nonzero(np.abs(vec[edge_idx]) >= thr)
            if d == 2:
                return int(good >= 1)
            return int(2 * good >= edge_idx.size)

        w_real = omega[region.index_of(Xj)]
        u_at0 = u + beta * (0.0 - w_real) * s_field
        u_at1 = u + beta * (1.0 - w_real) * s_field
        Z0, Z1 = indicator(u_at0), indicator(u_at1)
        Z = Z0 if w_real == 0.0 else Z1

        a_coeff = None
        if d == 2 and uXj != 0.0 and edge_idx.size == 1:
            a_coeff = float(s_field[edge_idx[0]] / uXj)

        steps.append(UcStep(j=j, X=tuple(int(c) for c in Xj),
                            X_next=tuple(int(c) for c in Xn),
                            line_kind=kind, line_value=value,
                            edge_sites=region.sites[edge_idx].copy(),
                            u_X=uXj, threshold=thr, Z=Z, Z_branch=(Z0, Z1),
                            a_coeff=a_coeff, n_edges=int(edge_idx.size)))
        X.append(np.asarray(Xn, dtype=np.int64))

    Zs = np.array([s.Z for s in steps], dtype=np.int64)
    seen = set()
    disjoint = True
    for s in steps:
        for p in s.edge_sites:
            t = tuple(int(c) for c in p)
            if t in seen:
                disjoint = False
            seen.add(t)
    increments = [X[i + 1][d - 1] - X[i][d - 1] for i in range(len(X) - 1)]
    return UcMartingaleTrace(
        L=L, d=d, lam=float(lam), seed=int(seed), T=T,
        X_sites=np.array(X), steps=steps, Z=Zs,
        partial_sums=np.cumsum(Zs),
        pigeonhole_ok=all(s.Z_branch[0] + s.Z_branch[1] >= 1 for s in steps),
        edges_disjoint=disjoint,
        increments_ok=all(inc in (1, 2) for inc in increments))


def uc_experiment(L: int, u0, lam: float, params, trials: int, seed: int,
                  eps_test: float = 1e-5, C_test: float | None = None) -> dict:
    """Frequency of the unique-continuation event: the transversal set at
    threshold exp(-C_test * L) covers at least eps_test * L^d sites."""
    d = int(params.d)
    region = propagating_region(L, d)
    gamma = 1.0 / (4 * d + float(params.h) + float(params.beta))
    if C_test is None:
        C_test = abs(math.log(gamma)) / 25.0

    if u0 is None:
        init = np.zeros(region.initial_idx.shape[0])
        origin = tuple([0] * d)
        init[np.nonzero([tuple(p) == origin for p in region.initial_sites])[0][0]] = 1.0
        u0 = init
    elif not callable(u0):
        u0 = np.asarray(u0, dtype=np.float64)

    origin_idx = region.index_of(tuple([0] * d))
    dom = SiteSet(region.sites)
    perm = dom.index_of(region.sites)
    threshold = math.exp(-C_test * L)
    need = eps_test * L ** d
    hits = 0
    sizes = []
    for t in range(trials):
        omega = rng.bernoulli(rng.split(seed, t), 0, region.sites).astype(np.float64)
        V = float(params.h) + float(params.beta) * omega
        u = propagate_solution(u0, lam, V, region)
        if u[origin_idx] == 0.0:
            raise ZeroInitialData("u0 vanishes at the origin")
        uvals = np.empty(region.n)
        uvals[perm] = u
        tset = transversal_set(uvals, dom, tuple([0] * d), threshold)
        sizes.append(tset.n)
        if tset.n >= need:
            hits += 1
    from .experiments import wilson_interval
    lo, hi = wilson_interval(hits, trials)
    return {"experiment": "uc_experiment", "L": L, "d": d, "lam": float(lam),
            "trials": trials, "seed": int(seed), "eps_test": eps_test,
            "C_test": C_test, "threshold": threshold,
            "required_size": need, "sizes": sizes,
            "frequency": hits / trials if trials else 0.0,
            "wilson_ci": [lo, hi], "ok": hits == trials}
