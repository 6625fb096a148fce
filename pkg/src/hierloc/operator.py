"""Finite-box Hamiltonians H = 2d - Delta + V with Dirichlet restriction,
Green's functions, and the all-barrier resolvent bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .lattice import LatticeBox, SiteSet, _neighbors_all, domain_sites


class NearSingular(Exception):
    """E is within 1e-12 of the spectrum; the resolvent is not trustworthy."""


class NotNonResonant(Exception):
    """The region contains a well site, so the barrier bounds do not apply."""


@dataclass(frozen=True)
class ModelParams:
    d: int
    h: float
    beta: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d >= 1 required")
        if self.h <= 0:
            raise ValueError("h > 0 required")
        if not 0 < self.beta <= 1:
            raise ValueError("0 < beta <= 1 required")


@dataclass(frozen=True)
class DerivedConstants:
    """iota, gamma, gamma0 as functions of (d, h, beta); defined only in the
    barrier-dominated regime h > 4d + beta."""
    d: int
    h: float
    beta: float
    iota: float
    gamma: float
    gamma0: float


def derived_constants(d: int, h: float, beta: float) -> DerivedConstants:
    if h <= 4 * d + beta:
        raise ValueError("constants need h > 4d + beta")
    iota = min(1.0 / 100.0, (h - 4 * d - beta) / 2.0)
    gamma = 1.0 / (4 * d + h + beta)
    gamma0 = math.log(1.0 + (h - 4 * d - beta - iota) / (2 * d))
    return DerivedConstants(d, h, beta, iota, gamma, gamma0)


def _coerce_params(params) -> ModelParams:
    if isinstance(params, ModelParams):
        return params
    if isinstance(params, (tuple, list)):
        d, h, beta = params
        return ModelParams(int(d), float(h), float(beta))
    return ModelParams(int(params.d), float(params.h), float(params.beta))


class BoxOperator:
    """Immutable sparse symmetric H over a fixed site enumeration."""

    def __init__(self, domain, matrix: sp.csr_matrix, v_total: np.ndarray,
                 params: ModelParams):
        self.domain = domain
        self.matrix = matrix
        self.v_total = v_total
        self.params = params
        self.n = matrix.shape[0]
        self._dense = None
        self._eigvals = None

    @property
    def sites(self) -> np.ndarray:
        return domain_sites(self.domain)

    @property
    def constants(self) -> DerivedConstants:
        return derived_constants(self.params.d, self.params.h, self.params.beta)

    @property
    def is_tridiagonal(self) -> bool:
        if self.params.d != 1:
            return False
        xs = self.sites[:, 0]
        return bool(np.all(np.diff(xs) == 1))

    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.matrix.toarray()
        return self._dense

    def tridiagonal_bands(self):
        """(diagonal, offdiagonal) for the contiguous d=1 case."""
        if not self.is_tridiagonal:
            raise ValueError("operator is not a contiguous d=1 chain")
        diag = self.matrix.diagonal()
        off = -np.ones(self.n - 1)
        return diag, off

    def eigenvalues(self) -> np.ndarray:
        if self._eigvals is None:
            if self.is_tridiagonal and self.n > 1:
                diag, off = self.tridiagonal_bands()
                self._eigvals = sla.eigvalsh_tridiagonal(diag, off)
            else:
                self._eigvals = sla.eigvalsh(self.dense())
        return self._eigvals

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec

    def to_coo_text(self) -> str:
        coo = self.matrix.tocoo()
        lines = [f"{i} {j} {v:.17g}" for i, j, v in zip(coo.row, coo.col, coo.data)]
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return f"BoxOperator(n={self.n}, d={self.params.d})"


def assemble(domain, v_total, params) -> BoxOperator:
    """H_Lambda = R_Lambda (2d - Delta + V) R_Lambda: diagonal 2d + V(x),
    entry -1 at each l1-adjacent pair inside the domain."""
    params = _coerce_params(params)
    sites = domain_sites(domain)
    n, d = sites.shape
    if d != params.d:
        raise ValueError(f"domain dimension {d} != params.d {params.d}")
    v = np.asarray(v_total, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError("V length does not match the domain")

    nbrs = _neighbors_all(sites)
    if isinstance(domain, LatticeBox):
        inside = domain.contains(nbrs)
        cols = domain.index_of(nbrs[inside])
    else:
        sset = domain if isinstance(domain, SiteSet) else SiteSet(sites)
        inside = sset.contains(nbrs)
        cols = sset.index_of(nbrs[inside])
    rows = np.repeat(np.arange(n, dtype=np.int64), 2 * d)[inside]
    hop = sp.coo_matrix((-np.ones(rows.shape[0]), (rows, cols)), shape=(n, n))
    H = (hop + sp.diags(2 * d + v)).tocsr()
    return BoxOperator(domain, H, v, params)


def green(op: BoxOperator, E: float) -> np.ndarray:
    """(H - E)^{-1}, dense, LU-factored with one refinement step and a
    residual check against 1e-8 * n."""
    evals = op.eigenvalues()
    if np.min(np.abs(evals - E)) < 1e-12:
        raise NearSingular(f"E = {E} within 1e-12 of the spectrum")
    A = op.dense() - E * np.eye(op.n)
    lu, piv = sla.lu_factor(A)
    G = sla.lu_solve((lu, piv), np.eye(op.n))
    resid = A @ G - np.eye(op.n)
    G = G - sla.lu_solve((lu, piv), resid)
    worst = float(np.max(np.abs(A @ G - np.eye(op.n))))
    if worst > 1e-8 * op.n:
        raise NearSingular(f"resolvent residual {worst:.3e} exceeds 1e-8*n")
    return G


def check_nonresonant_bounds(op: BoxOperator, E: float, slack: float = 1e-10) -> dict:
    """All-barrier resolvent bounds for E in the low window [-iota, 4d+beta+iota]:
    operator norm of G at most 1/(h-4d-beta-iota) and entrywise
    |G(x,y)| <= exp(-gamma0*|x-y|_1) / (h-4d-beta-iota)."""
    c = op.constants
    if np.any(op.v_total < c.h - 1e-9):
        raise NotNonResonant("domain contains a well site")
    if not -c.iota <= E <= 4 * c.d + c.beta + c.iota:
        raise ValueError(f"E = {E} outside [-iota, 4d+beta+iota]")
    denom = c.h - 4 * c.d - c.beta - c.iota
    G = green(op, E)
    norm_value = 1.0 / float(np.min(np.abs(op.eigenvalues() - E)))
    norm_bound = 1.0 / denom

    sites = op.sites
    dist1 = np.zeros((op.n, op.n), dtype=np.int64)
    for k in range(sites.shape[1]):
        dist1 += np.abs(sites[:, k][:, None] - sites[:, k][None, :])
    decay_bound = np.exp(-c.gamma0 * dist1) / denom
    decay_margin = float(np.min(decay_bound - np.abs(G)))

    return {
        "norm_ok": bool(norm_value <= norm_bound + slack),
        "decay_ok": bool(decay_margin >= -slack),
        "norm_value": norm_value,
        "norm_bound": norm_bound,
        "margins": {"norm": norm_bound - norm_value, "decay": decay_margin},
        "E": float(E),
        "n": op.n,
    }
