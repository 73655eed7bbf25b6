"""Kronecker map, core map, and the Kronecker-core decomposition (KCD),
with the differentials dh, dk, dc, dg and the tangent-space operator R_C.

The Kronecker component k(Sigma) minimizes the KL-type objective
    d(K2 (x) K1 | Sigma) = tr(Sigma K^-1) + p1 log|K2| + p2 log|K1|
and is computed by flip-flop block coordinate descent with closed-form block
updates.  The first factor is renormalized to determinant 1 after every sweep
to pin down the scale split.
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import matops
from .errors import DefinitenessError, NoKroneckerMle

# A factor whose condition number passes this bound is treated as degenerate
# evidence that the Kronecker MLE does not exist (iterates collapse).
_COND_LIMIT = 1e12
# The flip-flop is polished until the relative parameter movement per sweep
# falls below this floor; the user-facing tol only drives nonexistence
# detection.  Polishing to machine precision keeps finite-difference oracles
# of k(.) meaningful.
_PARAM_FLOOR = 1e-14


class SquareRootKind(enum.Enum):
    """Fixed choice of the square-root map h on separable covariances."""

    SYMMETRIC = "sym"
    CHOLESKY = "chol"


@dataclass(frozen=True)
class SeparableCovariance:
    """Kronecker-factor pair (K1, K2) with det(K1) = 1; K = K2 (x) K1."""

    k1: np.ndarray
    k2: np.ndarray

    @property
    def matrix(self):
        return matops.kron(self.k2, self.k1)

    def sqrt_factors(self, h_kind):
        """Factor pair (h1, h2) with h(K) = h2 (x) h1 per the square-root kind."""
        if h_kind is SquareRootKind.CHOLESKY:
            return matops.chol(self.k1), matops.chol(self.k2)
        return matops.sym_sqrt(self.k1), matops.sym_sqrt(self.k2)

    def h_matrix(self, h_kind):
        h1, h2 = self.sqrt_factors(h_kind)
        return matops.kron(h2, h1)


@dataclass(frozen=True)
class KcdResult:
    """A Kronecker-core decomposition Sigma = h(K) C h(K)^T."""

    k: SeparableCovariance
    c: np.ndarray
    h_kind: SquareRootKind

    def reconstruct(self):
        h = self.k.h_matrix(self.h_kind)
        return h @ self.c @ h.T


def kl_objective(k1, k2, sigma, dims):
    """d(K2 (x) K1 | Sigma): the flip-flop objective."""
    t1 = matops.weighted_partial_trace_1(sigma, np.linalg.inv(k2), dims)
    tr_term = float(np.trace(np.linalg.solve(k1, t1)))
    return (
        tr_term
        + dims.p1 * np.linalg.slogdet(k2)[1]
        + dims.p2 * np.linalg.slogdet(k1)[1]
    )


def kronecker_mle(sigma, dims, tol=1e-10, max_iter=500, psd_check=True):
    """Kronecker MLE of a symmetric PSD matrix by flip-flop descent.

    Raises NoKroneckerMle when the objective is still decreasing by more than
    tol (relative) per sweep at max_iter, or when a factor's condition number
    exceeds 1e12 -- the signatures of nonexistence on rank-deficient input.

    psd_check=False skips the input eigenvalue gate for near-PSD matrices
    (retraction intermediates whose trailing spectrum dips slightly below
    zero); factor positivity is still enforced every sweep.
    """
    sigma = matops.sym(np.asarray(sigma, dtype=float))
    if sigma.shape != (dims.p, dims.p):
        raise ValueError(f"expected {dims.p}x{dims.p} input, got {sigma.shape}")
    if psd_check:
        w = np.linalg.eigvalsh(sigma)
        if w[0] < -1e-8 * max(w[-1], 1.0):
            raise DefinitenessError("input to kronecker_mle is not PSD")
        if w[-1] <= 0.0:
            raise DefinitenessError("input to kronecker_mle is zero")

    k1 = np.eye(dims.p1)
    k2 = np.eye(dims.p2)
    obj = kl_objective(k1, k2, sigma, dims)
    decrease = np.inf
    prev_move = np.inf
    for _ in range(max_iter):
        k1_prev, k2_prev = k1, k2
        k1 = matops.sym(
            matops.weighted_partial_trace_1(sigma, np.linalg.inv(k2), dims) / dims.p2
        )
        _check_factor(k1)
        k2 = matops.sym(
            matops.weighted_partial_trace_2(sigma, np.linalg.inv(k1), dims) / dims.p1
        )
        _check_factor(k2)
        det1 = np.linalg.det(k1)
        if not np.isfinite(det1) or det1 <= 0.0:
            raise NoKroneckerMle("factor determinant collapsed")
        scale = det1 ** (1.0 / dims.p1)
        k1 = k1 / scale
        k2 = k2 * scale

        new_obj = kl_objective(k1, k2, sigma, dims)
        decrease = obj - new_obj
        obj = new_obj
        move = max(_rel_change(k1, k1_prev), _rel_change(k2, k2_prev))
        # Polish to the float noise floor (a rising tiny move is rounding,
        # not progress); the user-facing tol only classifies nonexistence.
        if move < _PARAM_FLOOR or (move < 1e-9 and move >= prev_move):
            return SeparableCovariance(k1=k1, k2=k2)
        prev_move = move
    if decrease > tol * abs(obj):
        raise NoKroneckerMle(
            f"objective still decreasing by {decrease:.3e} after {max_iter} sweeps"
        )
    return SeparableCovariance(k1=k1, k2=k2)


def core(sigma, dims, h_kind):
    """Core component C = h(k(Sigma))^-1 Sigma h(k(Sigma))^-T."""
    return kcd(sigma, dims, h_kind).c


def kcd(sigma, dims, h_kind):
    """Full Kronecker-core decomposition of a symmetric PSD matrix."""
    sigma = matops.sym(np.asarray(sigma, dtype=float))
    sep = kronecker_mle(sigma, dims)
    h = sep.h_matrix(h_kind)
    x = np.linalg.solve(h, sigma)
    c = matops.sym(np.linalg.solve(h, x.T).T)
    return KcdResult(k=sep, c=c, h_kind=h_kind)


def _check_factor(k):
    w = np.linalg.eigvalsh(k)
    if w[0] <= 0.0 or not np.isfinite(w).all():
        raise NoKroneckerMle("flip-flop factor lost positive definiteness")
    if w[-1] / w[0] > _COND_LIMIT:
        raise NoKroneckerMle(
            f"factor condition number {w[-1] / w[0]:.3e} exceeds {_COND_LIMIT:.0e}"
        )


def _rel_change(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), 1e-300)


# ---------------------------------------------------------------------------
# differentials
# ---------------------------------------------------------------------------

def dh(sep, u1, u2, h_kind):
    """Differential of the square-root map h at K = K2 (x) K1 along the
    separable tangent U = U2 (x) K1 + K2 (x) U1.

    Cholesky branch: (L2 (x) L1) (I (x) L1^-1 U1 L1^-T + L2^-1 U2 L2^-T (x) I)_{1/2}.
    Symmetric branch: eigenbasis Hadamard solve of the Sylvester system
    h(K) R + R h(K) = U.
    """
    u1 = matops.sym(u1)
    u2 = matops.sym(u2)
    if h_kind is SquareRootKind.CHOLESKY:
        l1 = matops.chol(sep.k1)
        l2 = matops.chol(sep.k2)
        m1 = np.linalg.solve(l1, np.linalg.solve(l1, u1).T).T
        m2 = np.linalg.solve(l2, np.linalg.solve(l2, u2).T).T
        inner = matops.kron(np.eye(sep.k2.shape[0]), m1) + matops.kron(
            m2, np.eye(sep.k1.shape[0])
        )
        return matops.kron(l2, l1) @ matops.half(inner)

    w1, g1 = np.linalg.eigh(matops.check_spd(sep.k1, what="K1"))
    w2, g2 = np.linalg.eigh(matops.check_spd(sep.k2, what="K2"))
    d = np.kron(np.sqrt(w2), np.sqrt(w1))
    denom = d[:, None] + d[None, :]
    if denom.min() < 1e-14:
        raise DefinitenessError("square-rooted eigenvalue sums vanish in dh")
    rhs = matops.kron(np.diag(w2), g1.T @ u1 @ g1) + matops.kron(
        g2.T @ u2 @ g2, np.diag(w1)
    )
    g = matops.kron(g2, g1)
    return g @ (rhs / denom) @ g.T


def rc_apply(c, s1, s2, w1, w2, dims):
    """Apply the operator R_C to a tangent pair (W1, W2) at base (S1, S2).

    The base satisfies |S1| = 1 and W1 is trace-orthogonal to S1
    (tr(S1^-1 W1) = 0); C is the symmetric-root core at the base point.
    """
    r1 = _spd_half_powers(s1)
    r2 = _spd_half_powers(s2)
    w1b = matops.sym(r1.ihalf @ w1 @ r1.ihalf)
    w2b = matops.sym(r2.ihalf @ w2 @ r2.ihalf)
    m1 = matops.weighted_partial_trace_1(c, w2b, dims)
    m2 = matops.weighted_partial_trace_2(c, w1b, dims)
    x1 = (
        w1
        + r1.half @ m1 @ r1.half / dims.p2
        - float(np.trace(w2b)) * s1 / dims.p2
    )
    x2 = w2 + r2.half @ m2 @ r2.half / dims.p1
    return matops.sym(x1), matops.sym(x2)


def rc_solve(c, s1, s2, m1, m2, dims):
    """Invert R_C: find the tangent pair (U1, U2) with R_C(U1, U2) = (M1, M2).

    Materializes R_C over an orthonormal basis of the product tangent space
    (dimension binom(p1+1,2) - 1 + binom(p2+1,2)) and solves densely.
    """
    from . import spd_geometry

    basis = []
    for e in spd_geometry.ai_unitdet_basis(s1):
        basis.append((e, np.zeros_like(s2)))
    for e in spd_geometry.sym_basis(dims.p2):
        basis.append((np.zeros_like(s1), e))

    def pack(a, b):
        return np.concatenate([a.ravel(), b.ravel()])

    cols = []
    for b1, b2 in basis:
        x1, x2 = rc_apply(c, s1, s2, b1, b2, dims)
        cols.append(pack(x1, x2))
    mat_op = np.column_stack(cols)
    rhs = pack(np.asarray(m1, dtype=float), np.asarray(m2, dtype=float))
    coef, _, rank, _ = np.linalg.lstsq(mat_op, rhs, rcond=None)
    if rank < len(basis):
        raise np.linalg.LinAlgError("R_C system is numerically rank deficient")
    u1 = sum(w * b1 for w, (b1, _) in zip(coef, basis))
    u2 = sum(w * b2 for w, (_, b2) in zip(coef, basis))
    return matops.sym(u1), matops.sym(u2)


def dk(sigma, v, dims):
    """Differential of the Kronecker map: dk(Sigma)[V] as a factor pair.

    Returns (U1, U2) with tr(S1^-1 U1) = 0; the assembled tangent is
    U2 (x) S1 + S2 (x) U1.
    """
    sigma = matops.sym(np.asarray(sigma, dtype=float))
    v = matops.sym(np.asarray(v, dtype=float))
    sep = kronecker_mle(sigma, dims)
    s1, s2 = sep.k1, sep.k2
    h = sep.h_matrix(SquareRootKind.SYMMETRIC)
    c_sym = matops.sym(np.linalg.solve(h, np.linalg.solve(h, sigma).T).T)
    vtil = matops.sym(np.linalg.solve(h, np.linalg.solve(h, v).T).T)

    r1 = _spd_half_powers(s1)
    r2 = _spd_half_powers(s2)
    t1 = matops.partial_trace_1(vtil, dims)
    t2 = matops.partial_trace_2(vtil, dims)
    tr_all = float(np.trace(vtil))
    m1 = r1.half @ (t1 - tr_all / dims.p1 * np.eye(dims.p1)) @ r1.half / dims.p2
    m2 = r2.half @ t2 @ r2.half / dims.p1
    return rc_solve(c_sym, s1, s2, m1, m2, dims)


def separable_tangent(sep, u1, u2):
    """Assemble U2 (x) K1 + K2 (x) U1."""
    return matops.kron(u2, sep.k1) + matops.kron(sep.k2, u1)


def dc(sigma, v, dims, h_kind):
    """Differential of the core map c at Sigma along V."""
    sigma = matops.sym(np.asarray(sigma, dtype=float))
    v = matops.sym(np.asarray(v, dtype=float))
    sep = kronecker_mle(sigma, dims)
    u1, u2 = dk(sigma, v, dims)
    u = dh(sep, u1, u2, h_kind)
    h = sep.h_matrix(h_kind)
    c = matops.sym(np.linalg.solve(h, np.linalg.solve(h, sigma).T).T)
    main = np.linalg.solve(h, np.linalg.solve(h, v).T).T
    corr = np.linalg.solve(h, u) @ c
    return matops.sym(main) - corr - corr.T


def dg(sep, c, u1, u2, w, h_kind):
    """Differential of the assembly map g(K, C) = h(K) C h(K)^T."""
    h = sep.h_matrix(h_kind)
    r = dh(sep, u1, u2, h_kind)
    return matops.sym(h @ w @ h.T) + r @ c @ h.T + h @ c @ r.T


class _spd_half_powers:
    """Cache of Sigma^(1/2) and Sigma^(-1/2) for a small SPD matrix."""

    __slots__ = ("half", "ihalf")

    def __init__(self, s):
        w, q = np.linalg.eigh(matops.sym(np.asarray(s, dtype=float)))
        if w[0] <= 0:
            raise DefinitenessError("half powers of a non-PD matrix")
        rt = np.sqrt(w)
        self.half = (q * rt) @ q.T
        self.ihalf = (q / rt) @ q.T
