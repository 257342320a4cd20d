"""Input-output Jacobian construction and singular-value analysis.

The Jacobian is assembled row by row from vector-Jacobian products against
output basis vectors; the forward tape is recorded once and replayed per row.
A central-difference builder provides the independent oracle. Singular values
come from a one-sided Jacobi SVD, accurate down to the vanishing values that
the rank-deficient Jacobians here produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Graph, Tensor

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12
VANISH_TAU = 1e-6
LOG_FLOOR = 1e-12
HIST_BINS = 50


@dataclass
class JacobianMatrix:
    """Dense d(output)/d(input) with a provenance tag (vjp or finite-difference)."""

    matrix: np.ndarray
    provenance: str = "vjp"

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]


def jacobian(model, x: Tensor) -> JacobianMatrix:
    """Exact Jacobian via one recorded forward pass and out_dim reverse passes."""
    with Graph() as g:
        y = model(x)
    if not np.all(np.isfinite(y.data)):
        raise NumericError("model output is not finite")
    out_dim, in_dim = y.size, x.size
    x_id = g._index.get(id(x))
    J = np.zeros((out_dim, in_dim))
    seed = np.zeros(y.shape)
    flat = seed.reshape(-1)
    for j in range(out_dim):
        flat[j] = 1.0
        grads = g._pullback(y, seed)
        gx = grads[x_id] if x_id is not None else None
        if gx is not None:
            J[j, :] = np.asarray(gx).reshape(-1)
        flat[j] = 0.0
    return JacobianMatrix(J, provenance="vjp")


def jacobian_fd(model, x: Tensor, h: float = 1e-6) -> JacobianMatrix:
    """Central-difference Jacobian, column by column; the independent oracle."""
    if h <= 0:
        raise ContractError("h must be positive")
    base = x.data.reshape(-1)
    in_dim = base.size
    cols = []
    for i in range(in_dim):
        hi, lo = base.copy(), base.copy()
        hi[i] += h
        lo[i] -= h
        yp = model(Tensor(hi.reshape(x.shape))).data
        ym = model(Tensor(lo.reshape(x.shape))).data
        if not (np.all(np.isfinite(yp)) and np.all(np.isfinite(ym))):
            raise NumericError("model output is not finite")
        cols.append((yp - ym).reshape(-1) / (2.0 * h))
    return JacobianMatrix(np.stack(cols, axis=1), provenance="finite-difference")


@dataclass
class SvdResult:
    U: np.ndarray
    singular_values: np.ndarray  # sorted descending
    Vt: np.ndarray

    def reconstruction(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.Vt


def svd(J) -> SvdResult:
    """Full SVD of a dense matrix by one-sided Jacobi rotations.

    Column pairs are rotated until every pair is orthogonal relative to the
    column norms (tolerance JACOBI_TOL, in the spirit of 1e-12 * ||J||_F);
    singular values are the final column norms. Left vectors for (near-)zero
    columns are filled in by Gram-Schmidt so U is orthonormal even when the
    matrix is rank deficient.
    """
    a = J.matrix if isinstance(J, JacobianMatrix) else np.asarray(J, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ContractError("svd expects a nonempty matrix")
    if not np.all(np.isfinite(a)):
        raise NumericError("svd input is not finite")
    m, n = a.shape
    if m < n:
        flipped = svd(a.T)
        return SvdResult(flipped.Vt.T, flipped.singular_values, flipped.U.T)

    work = a.copy()
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = work[:, p]
                aq = work[:, q]
                gamma = float(ap @ aq)
                if gamma == 0.0:
                    continue
                alpha = float(ap @ ap)
                beta = float(aq @ aq)
                if gamma * gamma <= (JACOBI_TOL * JACOBI_TOL) * alpha * beta:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                # sign(0) must be +1 here or equal-norm pairs never rotate
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                new_p = c * ap - s * aq
                new_q = s * ap + c * aq
                work[:, p] = new_p
                work[:, q] = new_q
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
                rotated = True
        if not rotated:
            break
    else:
        gram = work.T @ work
        off = np.max(np.abs(gram - np.diag(np.diag(gram))))
        raise NumericError(f"jacobi svd did not converge in {JACOBI_MAX_SWEEPS} sweeps; "
                           f"max off-diagonal {off:.3e}")

    norms = np.linalg.norm(work, axis=0)
    order = np.argsort(-norms, kind="stable")
    sigma = norms[order]
    v = v[:, order]
    work = work[:, order]

    U = np.zeros((m, n))
    filled = []
    for j in range(n):
        if sigma[j] > 0.0:
            U[:, j] = work[:, j] / sigma[j]
            filled.append(j)
    for j in range(n):
        if sigma[j] > 0.0:
            continue
        # orthonormal completion against the columns placed so far
        for k in range(m):
            cand = np.zeros(m)
            cand[k] = 1.0
            if filled:
                basis = U[:, filled]
                cand = cand - basis @ (basis.T @ cand)
            nrm = np.linalg.norm(cand)
            if nrm > 0.5:
                U[:, j] = cand / nrm
                filled.append(j)
                break
    return SvdResult(U, sigma, v.T)


@dataclass
class HistogramSpec:
    """Counts over log10 singular values; sum(counts) + underflow = len(sigma)."""

    bins: int
    lo: float
    hi: float
    counts: np.ndarray
    underflow: int

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.bins + 1)


@dataclass
class SpectrumResult:
    singular_values: np.ndarray
    chi: float
    vanishing_count: int
    threshold: float
    log10_values: np.ndarray
    histogram: HistogramSpec = field(repr=False)


def spectrum_stats(sigma, tau: float = VANISH_TAU, bins: int = HIST_BINS,
                   log_floor: float = LOG_FLOOR, lo: float | None = None,
                   hi: float | None = None) -> SpectrumResult:
    """Mean squared singular value, vanishing count below tau, log histogram."""
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if sigma.size == 0:
        raise ContractError("empty singular value list")
    if tau <= 0:
        raise ContractError("tau must be positive")
    ordered = np.sort(sigma)[::-1]
    chi = float(np.mean(ordered ** 2))
    vanishing = int(np.sum(ordered < tau))
    logs = np.log10(np.maximum(ordered, log_floor))
    lo = float(np.log10(log_floor)) if lo is None else float(lo)
    hi = 2.0 if hi is None else float(hi)
    counts = np.zeros(bins, dtype=np.int64)
    under = 0
    width = (hi - lo) / bins
    for value in logs:
        if value < lo:
            under += 1
        elif value >= hi:
            counts[-1] += 1  # top clamp
        else:
            counts[min(int((value - lo) / width), bins - 1)] += 1
    hist = HistogramSpec(bins=bins, lo=lo, hi=hi, counts=counts, underflow=under)
    return SpectrumResult(singular_values=ordered, chi=chi, vanishing_count=vanishing,
                          threshold=tau, log10_values=logs, histogram=hist)


def cosine_propagation(stack, x: Tensor, x_prime: Tensor):
    """Cosine similarity of two propagated signals after each block.

    Entries where an intermediate signal has zero norm are reported as nan.
    """
    if x.shape != x_prime.shape:
        raise ContractError("signals must share a shape")
    if np.linalg.norm(x.data) == 0.0 or np.linalg.norm(x_prime.data) == 0.0:
        raise ContractError("input signals must be nonzero")
    a, b = x, x_prime
    out = []
    for block in stack.blocks:
        a = block(a)
        b = block(b)
        na = np.linalg.norm(a.data)
        nb = np.linalg.norm(b.data)
        if na == 0.0 or nb == 0.0:
            out.append(float("nan"))
        else:
            out.append(float(np.vdot(a.data, b.data) / (na * nb)))
    return out
