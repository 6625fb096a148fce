"""Eigendecomposition plus the matrix-analysis toolbox: counting, spread,
Weyl/stability/spread inequalities, approximate orthogonality, rank-one
shifts, and first-order eigenvalue variation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .operator import BoxOperator


class DegenerateEigenvalue(Exception):
    """Requested eigenvalue has a neighbor within the 1e-6 gap threshold."""


@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray   # ascending, with multiplicity
    eigenvectors: np.ndarray  # orthonormal columns, shape (n, m)
    source_dim: int

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    def check(self, H) -> tuple:
        """(worst eigen-residual, worst Gram deviation)."""
        A = H.dense() if isinstance(H, BoxOperator) else np.asarray(H)
        V, w = self.eigenvectors, self.eigenvalues
        if self.m == 0:
            return 0.0, 0.0
        resid = float(np.max(np.linalg.norm(A @ V - V * w, axis=0)))
        gram = float(np.max(np.abs(V.T @ V - np.eye(self.m))))
        return resid, gram


def _as_dense(H) -> np.ndarray:
    if isinstance(H, BoxOperator):
        return H.dense()
    return np.asarray(H, dtype=np.float64)


def _validate(dec: SpectralDecomposition, H) -> SpectralDecomposition:
    resid, gram = dec.check(H)
    scale = float(np.max(np.abs(dec.eigenvalues))) if dec.m else 1.0
    if gram > 1e-10:
        # re-orthonormalize; stein-based subset solvers can drift on clusters
        Q, _ = np.linalg.qr(dec.eigenvectors)
        dec = SpectralDecomposition(dec.eigenvalues, Q, dec.source_dim)
        resid, gram = dec.check(H)
    if resid > 1e-8 * max(scale, 1.0) or gram > 1e-10:
        raise RuntimeError(f"decomposition failed validation: resid={resid:.3e} gram={gram:.3e}")
    return dec


def eig(H) -> SpectralDecomposition:
    """Full decomposition, ascending eigenvalues, orthonormal columns."""
    if isinstance(H, BoxOperator) and H.is_tridiagonal and H.n > 1:
        diag, off = H.tridiagonal_bands()
        w, V = sla.eigh_tridiagonal(diag, off)
        return _validate(SpectralDecomposition(w, V, H.n), H)
    A = _as_dense(H)
    w, V = sla.eigh(A)
    return _validate(SpectralDecomposition(w, V, A.shape[0]), H)


def eig_in_window(H, lo: float, hi: float) -> SpectralDecomposition:
    """Eigenpairs with lo <= lambda <= hi only."""
    if isinstance(H, BoxOperator) and H.is_tridiagonal and H.n > 1:
        diag, off = H.tridiagonal_bands()
        w, V = sla.eigh_tridiagonal(diag, off, select="v",
                                    select_range=(lo, hi), lapack_driver="stemr")
        keep = (w >= lo) & (w <= hi)
        return _validate(SpectralDecomposition(w[keep], V[:, keep], H.n), H)
    A = _as_dense(H)
    n = A.shape[0]
    w, V = sla.eigh(A, subset_by_value=(np.nextafter(lo, -np.inf), hi))
    keep = (w >= lo) & (w <= hi)
    return _validate(SpectralDecomposition(w[keep], V[:, keep], n), H)


def count_in_interval(spec, a: float, b: float) -> int:
    """#{j : a <= lambda_j <= b}, multiplicities included."""
    if a > b:
        raise ValueError("need a <= b")
    if isinstance(spec, SpectralDecomposition):
        evals = spec.eigenvalues
    elif isinstance(spec, BoxOperator):
        evals = spec.eigenvalues()
    else:
        evals = np.asarray(spec, dtype=np.float64)
    return int(np.count_nonzero((evals >= a) & (evals <= b)))


def spectral_inclusion_check(op: BoxOperator, tol: float = 1e-9) -> dict:
    """Every eigenvalue inside [0, 4d+beta] union [h, h+4d+beta] (bands may
    overlap when h <= 4d+beta)."""
    p = op.params
    w = op.eigenvalues()
    in_low = (w >= -tol) & (w <= 4 * p.d + p.beta + tol)
    in_high = (w >= p.h - tol) & (w <= p.h + 4 * p.d + p.beta + tol)
    bad = ~(in_low | in_high)
    return {"ok": not bool(np.any(bad)),
            "violations": w[bad].tolist(),
            "low_band": [0.0, 4 * p.d + p.beta],
            "high_band": [p.h, p.h + 4 * p.d + p.beta],
            "n_eigenvalues": len(w)}


def eigenvalue_count_bound_check(op: BoxOperator, params, k: int, k1: int) -> dict:
    """Low-window eigenvalue count against 2 N^{k-k1} (16 d_{k1} + 1)^d."""
    if k < k1:
        raise ValueError("need k >= k1")
    c = op.constants
    count = count_in_interval(op, -c.iota, 4 * c.d + c.beta + c.iota)
    ladder = params.scales(max(k, 1))
    bound = 2 * params.N ** (k - k1) * (16 * ladder[k1] + 1) ** params.d
    return {"ok": count <= bound, "count": count, "bound": int(bound),
            "k": k, "k1": k1}


def spread(A) -> float:
    """lambda_max - lambda_min of a symmetric matrix."""
    M = _as_dense(A)
    if M.shape[0] == 1:
        return 0.0
    w = sla.eigvalsh(M)
    return float(w[-1] - w[0])


def weyl_stability_spread_checks(A, B, slack: float = 1e-10) -> dict:
    """Weyl inequalities, eigenvalue stability under addition, and the spread
    lower bound, all for the pair (A, B)."""
    A = _as_dense(A)
    B = _as_dense(B)
    n = A.shape[0]
    # descending order matches the index conventions of the inequalities
    wA = sla.eigvalsh(A)[::-1]
    wB = sla.eigvalsh(B)[::-1]
    wAB = sla.eigvalsh(A + B)[::-1]

    S = wA[:, None] + wB[None, :]
    i_idx = np.arange(1, n + 1)[:, None]
    j_idx = np.arange(1, n + 1)[None, :]
    upper_k = i_idx + j_idx - 1          # lambda_{i+j-1}(A+B) <= lambda_i + lambda_j
    lower_k = i_idx + j_idx - n          # lambda_i + lambda_j <= lambda_{i+j-n}(A+B)
    upper_valid = upper_k <= n
    lower_valid = lower_k >= 1
    margin_upper = float(np.min((S - wAB[np.clip(upper_k, 1, n) - 1])[upper_valid]))
    margin_lower = float(np.min((wAB[np.clip(lower_k, 1, n) - 1] - S)[lower_valid]))

    shift = wAB - wA
    margin_stab = float(min(np.min(wB[0] - shift), np.min(shift - wB[n - 1])))

    spread_margin = float((wAB[0] - wAB[-1]) - abs((wA[0] - wA[-1]) - (wB[0] - wB[-1])))

    return {"weyl_ok": margin_upper >= -slack and margin_lower >= -slack,
            "stability_ok": margin_stab >= -slack,
            "spread_ok": spread_margin >= -slack,
            "margins": {"weyl_upper": margin_upper, "weyl_lower": margin_lower,
                        "stability": margin_stab, "spread": spread_margin}}


def approx_orthogonality_independent(vectors: np.ndarray, eps: float) -> bool:
    """Vectors (columns) with Gram = I + O(eps) are linearly independent iff
    the Gram matrix is positive definite; guaranteed when n*eps is small."""
    V = np.asarray(vectors, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] == 0:
        raise ValueError("need a nonempty matrix of column vectors")
    gram = V.T @ V
    return bool(sla.eigvalsh(gram)[0] > 0.0)


def rank_one_shift_check(A, x: int, beta: float, r1: float, r2: float,
                         r3: float, r4: float, r5: float, c: float = 1e-2) -> dict:
    """Trace monotonicity of 1_{[r1,oo)} under A -> A + beta e_x (x) e_x,
    gated on the five numerical hypotheses; reports failed hypotheses and
    asserts nothing when any fails."""
    A = _as_dense(A)
    n = A.shape[0]
    w_asc, V = sla.eigh(A)
    w = w_asc[::-1]          # descending
    V = V[:, ::-1]

    hyp = {}
    hyp["h1_ordering"] = bool(0 < r1 < r2 < r3 < r4 and r5 < 1)
    hyp["h2_r1_small"] = bool(r1 <= c * min(r3 * r5, r2 * r3 / r4))
    run = np.nonzero((w > 0) & (w < r1))[0]
    sandwich_ok = False
    j_choice = None
    if run.size:
        i = int(run[0])
        if i == 0 or w[i - 1] > r2:
            sandwich_ok = True
            # any index of the run may serve as j; take one that is transversal
            for s in run:
                if V[x, s] ** 2 >= r3:
                    j_choice = int(s)
                    break
    hyp["h3_sandwich"] = sandwich_ok
    hyp["h4_transversal"] = j_choice is not None
    mid = (w > r2) & (w < r5)
    mass = float(np.sum(V[x, mid] ** 2))
    hyp["h5_window_mass"] = bool(mass <= r4)

    applicable = all(hyp.values())
    out = {"hypotheses": hyp, "applicable": applicable, "window_mass": mass,
           "j": j_choice}
    if applicable:
        shifted = A.copy()
        shifted[x, x] += beta
        w2 = sla.eigvalsh(shifted)
        before = int(np.count_nonzero(w >= r1))
        after = int(np.count_nonzero(w2 >= r1))
        out["trace_before"] = before
        out["trace_after"] = after
        out["increased"] = after > before
    return out


def eigenvalue_variation_check(H, site: int, beta: float, j: int | None = None,
                               delta: float = 1e-5) -> dict:
    """Central finite difference of lambda_j along the Bernoulli direction at
    one site against the first-order formula beta * psi_j(site)^2."""
    A = _as_dense(H)
    n = A.shape[0]
    if isinstance(H, BoxOperator) and not isinstance(site, (int, np.integer)):
        site = int(H.domain.index_of(np.asarray(site))[0])
    site = int(site)
    dec = eig(A)
    w, V = dec.eigenvalues, dec.eigenvectors

    gaps = np.full(n, np.inf)
    if n > 1:
        d = np.diff(w)
        gaps[:-1] = d
        gaps[1:] = np.minimum(gaps[1:], d)
    simple = gaps > 1e-6

    targets = range(n) if j is None else [j]
    if j is not None and not simple[j]:
        raise DegenerateEigenvalue(f"eigenvalue {j} has gap {gaps[j]:.3e} <= 1e-6")
    if j is None and not np.any(simple):
        raise DegenerateEigenvalue("no simple eigenvalue to differentiate")

    plus = A.copy()
    plus[site, site] += beta * delta
    minus = A.copy()
    minus[site, site] -= beta * delta
    w_plus = sla.eigvalsh(plus)
    w_minus = sla.eigvalsh(minus)

    records = []
    for idx in targets:
        if not simple[idx]:
            records.append({"j": int(idx), "skipped": True})
            continue
        fd = float((w_plus[idx] - w_minus[idx]) / (2 * delta))
        predicted = float(beta * V[site, idx] ** 2)
        tol = 1e-6 + 1e-4 * abs(predicted)
        records.append({"j": int(idx), "fd": fd, "predicted": predicted,
                        "error": abs(fd - predicted), "ok": abs(fd - predicted) <= tol,
                        "skipped": False})
    checked = [r for r in records if not r["skipped"]]
    return {"ok": all(r["ok"] for r in checked), "site": site,
            "n_checked": len(checked), "records": records}
