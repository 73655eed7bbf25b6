"""Partial-isotropy core shrinkage estimation.

The model: vec(Y_i) ~ N(0, Sigma) with
    Sigma = nu^2 (K2bar (x) K1bar) ((1-lambda) A A^T + lambda I) (K2bar (x) K1bar)^T,
where the K-bar factors have unit determinant (SPD or lower-triangular per the
square-root kind), A is a rank-r core factor, and lambda in (0, 1).

Fitting alternates exact coordinate minimization in nu and lambda with
decrease-checked Riemannian Newton steps in K1bar, K2bar (affine-invariant or
Cholesky geometry on the unit-determinant manifolds) and in A (Euclidean
geometry on the fixed-rank core-factor manifold, eigen-truncated core
retraction).
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import core_geometry, kcd, matops, spd_geometry
from .errors import DefinitenessError, NoKroneckerMle, StructureError
from .kcd import SquareRootKind

_NUMERICAL_ERRORS = (
    np.linalg.LinAlgError,
    DefinitenessError,
    NoKroneckerMle,
    StructureError,
    FloatingPointError,
)


@dataclass(frozen=True)
class PicseParams:
    """Full parameter tuple (K1bar, K2bar, nu, A, lambda) plus bookkeeping."""

    k1bar: np.ndarray
    k2bar: np.ndarray
    nu: float
    a: np.ndarray
    lam: float
    h_kind: SquareRootKind
    dims: matops.Dims

    def validate(self, tol=1e-8):
        if abs(np.linalg.det(self.k1bar) - 1.0) > tol:
            raise StructureError("K1bar determinant differs from 1")
        if abs(np.linalg.det(self.k2bar) - 1.0) > tol:
            raise StructureError("K2bar determinant differs from 1")
        if not (0.0 < self.lam < 1.0):
            raise StructureError(f"lambda {self.lam} outside (0, 1)")
        if self.nu <= 0.0:
            raise StructureError("nu must be positive")
        core_geometry.check_core_factor(self.a, self.dims, tol=tol)
        return self

    @property
    def kbar(self):
        return matops.kron(self.k2bar, self.k1bar)


@dataclass(frozen=True)
class SampleCov:
    """Sample covariance S = (1/n) sum vec(Y_i) vec(Y_i)^T of matrix data."""

    s: np.ndarray
    n: int
    dims: matops.Dims

    @classmethod
    def from_data(cls, data, dims):
        data = np.asarray(data, dtype=float)
        n = data.shape[0]
        ymat = np.stack([matops.vec(y) for y in data])
        return cls(s=matops.sym(ymat.T @ ymat / n), n=n, dims=dims)


@dataclass(frozen=True)
class FitConfig:
    """Knobs of the alternating-minimization fit."""

    tol: float = 1e-6
    max_iter: int = 200
    h_kind: SquareRootKind = SquareRootKind.SYMMETRIC
    lambda_bracket: tuple = (1e-4, 1.0 - 1e-4)
    max_halvings: int = 30

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("need tol > 0 and max_iter >= 1")


@dataclass
class FitTrace:
    """Per-sweep objective values, accepted step norms, termination reason."""

    objectives: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    termination: str = "max_iter"

    @property
    def n_sweeps(self):
        return len(self.step_norms)


class _CtildeSpectral:
    """Rank-r spectral form of Ctilde = (1-lambda) A A^T + lambda I.

    Ctilde^-1 = (1/lambda) (I - (1-lambda) U diag(alpha) U^T) with
    alpha_j = sigma_j^2 / ((1-lambda) sigma_j^2 + lambda); no dense p x p
    inverse is ever formed.
    """

    def __init__(self, a, lam):
        if not (0.0 < lam < 1.0):
            raise DefinitenessError(f"lambda {lam} outside (0, 1)")
        u, sig, _ = np.linalg.svd(np.asarray(a, dtype=float), full_matrices=False)
        self.u = u
        self.sig2 = sig**2
        self.lam = lam
        self.d = (1.0 - lam) * self.sig2 + lam
        self.alpha = self.sig2 / self.d
        self.p = a.shape[0]
        self.r = a.shape[1]

    def logdet(self):
        return float(np.sum(np.log(self.d)) + (self.p - self.r) * np.log(self.lam))

    def inv_apply(self, m):
        m = np.asarray(m, dtype=float)
        proj = (self.u * self.alpha) @ (self.u.T @ m)
        return (m - (1.0 - self.lam) * proj) / self.lam

    def inv_quad_trace(self, m):
        """tr(M Ctilde^-1) for symmetric M."""
        um = self.u.T @ m @ self.u
        return float(
            (np.trace(m) - (1.0 - self.lam) * np.sum(self.alpha * np.diag(um)))
            / self.lam
        )


def _whiten(tau, m):
    """Kbar^-1 M Kbar^-T for the assembled square-root factor."""
    kbar = tau.kbar
    x = np.linalg.solve(kbar, np.asarray(m, dtype=float))
    return np.linalg.solve(kbar, x.T).T


def nll(tau, sample_cov):
    """Per-datum negative log-likelihood (additive constants dropped):

    tr(Kbar^-1 S Kbar^-T Ctilde^-1) / nu^2 + log|Ctilde| + 2 p log nu.
    """
    spec = _CtildeSpectral(tau.a, tau.lam)
    m = matops.sym(_whiten(tau, sample_cov.s))
    tr_term = spec.inv_quad_trace(m) / tau.nu**2
    return tr_term + spec.logdet() + 2.0 * tau.dims.p * np.log(tau.nu)


def sigma_from_params(tau):
    """Assemble nu^2 Kbar ((1-lambda) A A^T + lambda I) Kbar^T."""
    kbar = tau.kbar
    ctil = (1.0 - tau.lam) * (tau.a @ tau.a.T) + tau.lam * np.eye(tau.dims.p)
    return tau.nu**2 * matops.sym(kbar @ ctil @ kbar.T)


# ---------------------------------------------------------------------------
# Euclidean derivative and Hessian operators
# ---------------------------------------------------------------------------

class _KSideCalc:
    """Euclidean gradient/Hessian of the likelihood in one K-bar factor.

    The two factors share one pattern once the whitened observations are
    transposed: side 1 works with Z_i = K1bar^-1 Y_i K2bar^-T and slices U_j
    of the top left singular vectors of A; side 2 with their transposes.
    """

    def __init__(self, tau, data, side):
        dims = tau.dims
        data = np.asarray(data, dtype=float)
        n = data.shape[0]
        # Z_i = K1bar^-1 Y_i K2bar^-T, batched over observations.
        z = np.linalg.solve(tau.k1bar, data.transpose(1, 0, 2).reshape(dims.p1, -1))
        z = z.reshape(dims.p1, n, dims.p2).transpose(1, 0, 2)
        z = np.linalg.solve(tau.k2bar, z.transpose(0, 2, 1)).transpose(0, 2, 1)

        spec = _CtildeSpectral(tau.a, tau.lam)
        umats = np.stack(
            [matops.mat(spec.u[:, j], dims.p1, dims.p2) for j in range(spec.r)]
        )

        if side == 1:
            self.kb = tau.k1bar
            self.e = z
            self.umats = umats
        else:
            self.kb = tau.k2bar
            self.e = z.transpose(0, 2, 1)
            self.umats = umats.transpose(0, 2, 1)
        self.alpha = spec.alpha
        self.kb_inv = np.linalg.inv(self.kb)
        self.q_mat = np.einsum("nab,ncb->ac", self.e, self.e)
        # t[j, i] = trace of the cross-term W_{side,i,j}
        self.t = np.einsum("jab,nab->jn", self.umats, self.e)
        # G[j] = sum_i t[j, i] E_i
        self.g_acc = np.einsum("jn,nab->jab", self.t, self.e)
        self.c0 = 2.0 / (n * tau.lam * tau.nu**2)
        self.c1 = 2.0 * (1.0 - tau.lam) / (n * tau.lam * tau.nu**2)
        self.f = matops.lower if tau.h_kind is SquareRootKind.CHOLESKY else matops.sym

    def grad(self):
        ki_t = self.kb_inv.T
        out = -self.c0 * self.f(ki_t @ self.q_mat)
        cross = np.einsum(
            "j,jab->ab",
            self.alpha,
            np.einsum("ab,jbc,jdc->jad", ki_t, self.umats, self.g_acc),
        )
        return out + self.c1 * self.f(cross)

    def hess(self, v):
        ki = self.kb_inv
        ki_t = ki.T
        v = np.asarray(v, dtype=float)
        term1 = self.c0 * self.f(
            ki_t @ v.T @ ki_t @ self.q_mat
            + ki_t @ self.q_mat @ v.T @ ki_t
            + ki_t @ ki @ v @ self.q_mat
        )
        kv = ki @ v
        s = np.einsum("jab,nab->jn", self.umats, np.einsum("ab,nbc->nac", kv, self.e))
        h_acc = np.einsum("jn,nab->jab", s, self.e)
        term2 = -self.c1 * self.f(
            np.einsum(
                "j,jab->ab",
                self.alpha,
                np.einsum("ab,jbc,jdc->jad", ki_t, self.umats, h_acc),
            )
        )
        ku = np.einsum("ab,jbc->jac", ki_t, self.umats)
        part_a = np.einsum("ab,jbc,jdc->jad", ki_t @ v.T, ku, self.g_acc)
        part_b = np.einsum("jab,jcb->jac", ku, np.einsum("ab,jbc->jac", kv, self.g_acc))
        term3 = -self.c1 * self.f(
            np.einsum("j,jab->ab", self.alpha, part_a + part_b)
        )
        return term1 + term2 + term3


class _ASideCalc:
    """Euclidean gradient/Hessian of the likelihood in the core factor A."""

    def __init__(self, tau, sample_cov):
        self.spec = _CtildeSpectral(tau.a, tau.lam)
        self.stil = matops.sym(_whiten(tau, sample_cov.s)) / tau.nu**2
        self.a = tau.a
        self.lam = tau.lam

    def grad(self):
        x1 = self.spec.inv_apply(self.a)
        x3 = self.spec.inv_apply(self.stil @ x1)
        return -2.0 * (1.0 - self.lam) * (x3 - x1)

    def hess(self, v):
        inv = self.spec.inv_apply
        lam = self.lam
        v = np.asarray(v, dtype=float)
        p_mat = self.a @ v.T + v @ self.a.T
        ia = inv(self.a)
        isia = inv(self.stil @ ia)
        out = -2.0 * (1.0 - lam) * inv(self.stil @ inv(v))
        out += 2.0 * (1.0 - lam) * inv(v)
        out += 2.0 * (1.0 - lam) ** 2 * inv(p_mat @ isia)
        out += 2.0 * (1.0 - lam) ** 2 * inv(self.stil @ inv(p_mat @ ia))
        out -= 2.0 * (1.0 - lam) ** 2 * inv(p_mat @ ia)
        return out


def euclid_calculus(theta, tau, data, v):
    """Euclidean (egrad, ehess[V]) of the likelihood in one parameter block.

    theta is one of "k1bar", "k2bar", "a".  For the K factors the result is
    symmetric (SPD parameterization) or lower-triangular (Cholesky).
    """
    if theta == "k1bar":
        calc = _KSideCalc(tau, data, side=1)
    elif theta == "k2bar":
        calc = _KSideCalc(tau, data, side=2)
    elif theta == "a":
        calc = _ASideCalc(tau, SampleCov.from_data(data, tau.dims))
    else:
        raise ValueError(f"unknown parameter {theta!r}")
    return calc.grad(), calc.hess(v)


# ---------------------------------------------------------------------------
# Riemannian geometry adapters and the Newton step search
# ---------------------------------------------------------------------------

class _KGeometry:
    def __init__(self, tau, side):
        self.point = tau.k1bar if side == 1 else tau.k2bar
        self.chol = tau.h_kind is SquareRootKind.CHOLESKY
        if self.chol:
            self.basis = spd_geometry.chol_unitdet_basis(self.point)
        else:
            self.basis = spd_geometry.ai_unitdet_basis(self.point)

    def inner(self, u, v):
        if self.chol:
            return spd_geometry.chol_inner(self.point, u, v)
        return spd_geometry.ai_inner(self.point, u, v)

    def riemannian(self, egrad, ehess_v, v):
        if self.chol:
            g, h = spd_geometry.chol_grad_hess(self.point, egrad, ehess_v, v)
            return (
                spd_geometry.proj_unitdet_chol(self.point, g),
                spd_geometry.proj_unitdet_chol(self.point, h),
            )
        g, h = spd_geometry.ai_grad_hess(self.point, egrad, ehess_v, v)
        return (
            spd_geometry.proj_unitdet_spd(self.point, g),
            spd_geometry.proj_unitdet_spd(self.point, h),
        )

    def rgrad(self, egrad):
        zero = np.zeros_like(self.point)
        return self.riemannian(egrad, zero, zero)[0]

    def retract(self, v):
        if self.chol:
            return spd_geometry.chol_exp(self.point, v, 1.0, unit_det=True)
        return spd_geometry.ai_exp(self.point, v, 1.0, unit_det=True)


def _newton_coeffs(h_mat, g_vec):
    h_mat = (h_mat + h_mat.T) / 2.0
    coef, *_ = np.linalg.lstsq(h_mat, -g_vec, rcond=None)
    return coef


def _k_direction_candidates(geom, calc, max_halvings):
    """Newton direction first, then damped steepest descent with halvings."""
    egrad = calc.grad()
    basis = geom.basis
    m = len(basis)
    rgrad = geom.rgrad(egrad)
    g_vec = np.array([geom.inner(rgrad, b) for b in basis])
    grad_norm = np.sqrt(max(float(g_vec @ g_vec), 0.0))
    if grad_norm < 1e-13:
        return rgrad, iter(())

    rhess_cols = [geom.riemannian(egrad, calc.hess(b), b)[1] for b in basis]
    h_mat = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            h_mat[i, j] = geom.inner(rhess_cols[i], basis[j])
    coef = _newton_coeffs(h_mat, g_vec)
    v_newton = sum(c * b for c, b in zip(coef, basis))

    def gen():
        if np.isfinite(v_newton).all():
            yield v_newton
        s = 1.0
        for _ in range(max_halvings + 1):
            yield -s * rgrad
            s /= 2.0

    return rgrad, gen()


def newton_direction(theta, tau, data, config=None):
    """Decrease-checked update direction for one parameter block.

    Tries the Riemannian Newton direction -Hess^+[grad] first; if its
    retraction does not lower the objective, falls back to damped steepest
    descent with step halving.  Returns a zero tangent when nothing helps.
    """
    config = config or FitConfig(h_kind=tau.h_kind)
    sample_cov = SampleCov.from_data(np.asarray(data, dtype=float), tau.dims)
    if theta in ("k1bar", "k2bar"):
        side = 1 if theta == "k1bar" else 2
        _, _, direction = _step_k(tau, data, sample_cov, config, side)
        if direction is None:
            return np.zeros_like(tau.k1bar if side == 1 else tau.k2bar)
        return direction
    if theta == "a":
        _, _, direction = _step_a(tau, data, sample_cov, config)
        return np.zeros_like(tau.a) if direction is None else direction
    raise ValueError(f"unknown parameter {theta!r}")


def _step_k(tau, data, sample_cov, config, side):
    """One decrease-checked update of K1bar or K2bar.

    Returns (new tau, new nll, accepted direction or None).
    """
    current = nll(tau, sample_cov)
    geom = _KGeometry(tau, side)
    calc = _KSideCalc(tau, data, side)
    _, candidates = _k_direction_candidates(geom, calc, config.max_halvings)
    name = "k1bar" if side == 1 else "k2bar"
    for v in candidates:
        try:
            point = geom.retract(v)
            cand = dataclasses.replace(tau, **{name: point})
            value = nll(cand, sample_cov)
        except _NUMERICAL_ERRORS:
            continue
        if np.isfinite(value) and value <= current:
            return cand, value, v
    return tau, current, None


class _AGeometry:
    def __init__(self, a, dims):
        self.dims = dims
        self.a = a
        self.j = core_geometry.j_operator(a, dims)
        u, s, vt = np.linalg.svd(self.j, full_matrices=True)
        n_keep = int(np.sum(s > 1e-10 * s[0]))
        self.basis = vt[n_keep:].T  # null-space basis, orthonormal columns
        self.jp = (vt[:n_keep].T / s[:n_keep]) @ u[:, :n_keep].T

    def newton_direction(self, calc, max_halvings):
        dims = self.dims
        g_full = calc.grad().reshape(-1, order="F")
        rgrad_coef = self.basis.T @ g_full
        rgrad = (self.basis @ rgrad_coef).reshape(self.a.shape, order="F")
        if np.linalg.norm(rgrad_coef) < 1e-13:
            return rgrad, iter(())
        z = self.jp.T @ (self.jp @ (self.j @ g_full))
        m = self.basis.shape[1]
        h_mat = np.empty((m, m))
        for i in range(m):
            v = self.basis[:, i].reshape(self.a.shape, order="F")
            hv = calc.hess(v).reshape(-1, order="F")
            jv = core_geometry.j_operator(v, dims)
            h_mat[:, i] = self.basis.T @ (hv - jv.T @ z)
        coef = _newton_coeffs(h_mat, rgrad_coef)
        v_newton = (self.basis @ coef).reshape(self.a.shape, order="F")

        def gen():
            if np.isfinite(v_newton).all():
                yield v_newton
            s = 1.0
            for _ in range(max_halvings + 1):
                yield -s * rgrad
                s /= 2.0

        return rgrad, gen()


def retract_core_factor(a, v, dims, max_halvings=30):
    """Eigen-truncated core retraction of Eq.-style step D = AA^T + AV^T + VA^T.

    The core component of D is recomputed (restoring exact partial traces),
    its top-r eigenpairs give the new factor, and the factor is re-balanced
    onto the constraint set.  Infeasible steps (top-r spectrum not positive)
    shrink V by half, up to max_halvings; returns None if nothing is feasible.
    """
    a = np.asarray(a, dtype=float)
    vv = np.asarray(v, dtype=float)
    for _ in range(max_halvings + 1):
        d = matops.sym(a @ a.T + a @ vv.T + vv @ a.T)
        try:
            sep = kcd.kronecker_mle(d, dims, psd_check=False)
            h = sep.h_matrix(SquareRootKind.SYMMETRIC)
            dbar = matops.sym(np.linalg.solve(h, np.linalg.solve(h, d).T).T)
            w, q = np.linalg.eigh(dbar)
            w_top = w[::-1][: dims.r]
            q_top = q[:, ::-1][:, : dims.r]
            if w_top.min() <= 1e-10 * max(w_top.max(), 1e-300):
                raise StructureError("top-r core spectrum not positive")
            cand = q_top * np.sqrt(w_top)
            return core_geometry.balance_core_factor(cand, dims, tol=1e-12)
        except _NUMERICAL_ERRORS:
            vv = vv / 2.0
    return None


def _step_a(tau, data, sample_cov, config):
    """One decrease-checked update of the core factor A."""
    current = nll(tau, sample_cov)
    calc = _ASideCalc(tau, sample_cov)
    geom = _AGeometry(tau.a, tau.dims)
    _, candidates = geom.newton_direction(calc, config.max_halvings)
    for v in candidates:
        a_new = retract_core_factor(tau.a, v, tau.dims, config.max_halvings)
        if a_new is None:
            continue
        cand = dataclasses.replace(tau, a=a_new)
        try:
            value = nll(cand, sample_cov)
        except _NUMERICAL_ERRORS:
            continue
        if np.isfinite(value) and value <= current:
            return cand, value, v
    return tau, current, None


# ---------------------------------------------------------------------------
# coordinate updates with closed forms
# ---------------------------------------------------------------------------

def update_k(side, tau, data, config=None):
    """Decrease-checked exponential-map update of K1bar (side 1) or K2bar."""
    config = config or FitConfig(h_kind=tau.h_kind)
    sample_cov = SampleCov.from_data(np.asarray(data, dtype=float), tau.dims)
    new_tau, _, _ = _step_k(tau, data, sample_cov, config, side)
    return new_tau.k1bar if side == 1 else new_tau.k2bar


def update_a(tau, data, config=None):
    """Decrease-checked eigen-truncated core update of the factor A."""
    config = config or FitConfig(h_kind=tau.h_kind)
    sample_cov = SampleCov.from_data(np.asarray(data, dtype=float), tau.dims)
    new_tau, _, _ = _step_a(tau, data, sample_cov, config)
    return new_tau.a


def update_nu(tau, sample_cov):
    """Exact minimizer nu = sqrt(tr(Kbar^-1 S Kbar^-T Ctilde^-1) / p)."""
    spec = _CtildeSpectral(tau.a, tau.lam)
    m = matops.sym(_whiten(tau, sample_cov.s))
    return float(np.sqrt(spec.inv_quad_trace(m) / tau.dims.p))


def update_lambda(tau, sample_cov, bracket=(1e-4, 1.0 - 1e-4)):
    """Bounded scalar minimization of the likelihood in lambda.

    One eigendecomposition reduces each probe to O(p): with m_j the whitened
    data energy along the j-th left singular vector of A, the objective is
    sum_j [m_j/d_j + log d_j] over the spiked block plus the isotropic rest.
    """
    lo, hi = bracket
    u, sig, _ = np.linalg.svd(tau.a, full_matrices=False)
    sig2 = sig**2
    m = matops.sym(_whiten(tau, sample_cov.s)) / tau.nu**2
    mj = np.einsum("pj,pq,qj->j", u, m, u)
    rest = float(np.trace(m) - mj.sum())
    p, r = tau.dims.p, tau.dims.r

    def objective(lam):
        d = (1.0 - lam) * sig2 + lam
        return float(
            np.sum(mj / d + np.log(d)) + rest / lam + (p - r) * np.log(lam)
        )

    res = minimize_scalar(
        objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8}
    )
    best = float(res.x)
    if objective(tau.lam) < objective(best):
        best = tau.lam
    return min(max(best, lo), hi)


# ---------------------------------------------------------------------------
# initialization, fitting, and baselines
# ---------------------------------------------------------------------------

def init(sample_cov, r, h_kind, lambda_bracket=(1e-4, 1.0 - 1e-4)):
    """Initialization from the sample Kronecker-core decomposition.

    K-bar factors and nu come from the determinant-normalized square-root
    factors of the sample Kronecker MLE; lambda from the trailing eigenvalue
    mass of the sample core (clamped into the bracket); A from the top-r
    eigenpairs of the core of the best rank-r approximation of the sample
    core, re-balanced onto the constraint set.
    """
    dims = sample_cov.dims.with_rank(r)
    dec = kcd.kcd(sample_cov.s, dims, h_kind)
    h1, h2 = dec.k.sqrt_factors(h_kind)
    det1 = np.linalg.det(h1) ** (1.0 / dims.p1)
    det2 = np.linalg.det(h2) ** (1.0 / dims.p2)
    k1bar = h1 / det1
    k2bar = h2 / det2
    nu0 = float(det1 * det2)

    w, q = np.linalg.eigh(dec.c)
    w = w[::-1]
    q = q[:, ::-1]
    if w[r - 1] <= 1e-12 * max(w[0], 1e-300):
        raise StructureError(f"sample core has rank below r={r}")
    lam0 = (dims.p - float(w[:r].sum())) / (dims.p - r)
    lam0 = min(max(lam0, lambda_bracket[0]), lambda_bracket[1])

    trunc = matops.sym((q[:, :r] * w[:r]) @ q[:, :r].T)
    core_r = kcd.kcd(trunc, dims, h_kind).c
    wc, qc = np.linalg.eigh(core_r)
    wc = wc[::-1][:r]
    qc = qc[:, ::-1][:, :r]
    if wc.min() <= 0:
        raise StructureError("rank-r core truncation lost definiteness")
    a0 = core_geometry.balance_core_factor(qc * np.sqrt(wc), dims, tol=1e-12)
    return PicseParams(
        k1bar=k1bar, k2bar=k2bar, nu=nu0, a=a0, lam=lam0, h_kind=h_kind, dims=dims
    )


def fit(data, dims, config=None, initial=None):
    """Alternating minimization (K1bar, K2bar, nu, A, lambda per sweep).

    Returns (params, assembled covariance estimate, trace).  Numerical
    failures mid-fit stop the sweep loop and are recorded in the trace, never
    raised; initialization failures do propagate.  `initial` overrides the
    sample-KCD initialization.
    """
    config = config or FitConfig()
    data = np.asarray(data, dtype=float)
    if data.ndim != 3 or data.shape[1:] != (dims.p1, dims.p2):
        raise ValueError(f"expected (n, {dims.p1}, {dims.p2}) data, got {data.shape}")
    if data.shape[0] < 2:
        raise ValueError("need at least two observations")
    if dims.r is None:
        raise ValueError("fit needs dims with a rank")
    sample_cov = SampleCov.from_data(data, dims)
    if initial is None:
        tau = init(sample_cov, dims.r, config.h_kind, config.lambda_bracket)
    else:
        tau = initial

    value = nll(tau, sample_cov)
    trace = FitTrace(objectives=[value], step_norms=[], termination="max_iter")
    for _ in range(config.max_iter):
        prev_value = value
        steps = {}
        try:
            tau, value, v1 = _step_k(tau, data, sample_cov, config, side=1)
            steps["k1bar"] = _k_norm(tau, v1, side=1)
            tau, value, v2 = _step_k(tau, data, sample_cov, config, side=2)
            steps["k2bar"] = _k_norm(tau, v2, side=2)

            nu_new = update_nu(tau, sample_cov)
            steps["nu"] = abs(nu_new - tau.nu)
            tau = dataclasses.replace(tau, nu=nu_new)
            value = nll(tau, sample_cov)

            tau, value, va = _step_a(tau, data, sample_cov, config)
            steps["a"] = 0.0 if va is None else float(np.linalg.norm(va))

            lam_new = update_lambda(tau, sample_cov, config.lambda_bracket)
            steps["lambda"] = abs(lam_new - tau.lam)
            tau = dataclasses.replace(tau, lam=lam_new)
            value = nll(tau, sample_cov)
        except _NUMERICAL_ERRORS:
            trace.termination = "numerical"
            break
        trace.objectives.append(value)
        trace.step_norms.append(steps)
        if abs(prev_value - value) / max(abs(value), 1e-300) < config.tol:
            trace.termination = "converged"
            break
    return tau, sigma_from_params(tau), trace


def _k_norm(tau, v, side):
    if v is None:
        return 0.0
    point = tau.k1bar if side == 1 else tau.k2bar
    if tau.h_kind is SquareRootKind.CHOLESKY:
        return float(np.sqrt(spd_geometry.chol_inner(point, v, v)))
    return float(np.sqrt(spd_geometry.ai_inner(point, v, v)))


def kmle_estimator(data, dims):
    """The sample Kronecker MLE assembled as a full covariance."""
    sample_cov = SampleCov.from_data(np.asarray(data, dtype=float), dims)
    return kcd.kronecker_mle(sample_cov.s, dims).matrix


def base_estimator(data, dims, r, h_kind):
    """The initialization plugged straight into the covariance assembly."""
    sample_cov = SampleCov.from_data(np.asarray(data, dtype=float), dims)
    tau = init(sample_cov, r, h_kind)
    return sigma_from_params(tau)
