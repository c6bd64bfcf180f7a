"""Performance analysis: closed-form ISR predictions, the Cramer-Rao bound,
empirical ISR evaluation, population score moments, a finite-difference
Wirtinger oracle, and the constrained-beamformer cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import linear_sum_assignment
from scipy.special import gamma as gamma_fn

from .mixture import COMPLEX, REAL, GroundTruth, BlockedMixture, gg_scale

ISR_DB_CAP = 300.0


class AnalysisError(Exception):
    pass


# ---------------------------------------------------------------------------
# closed-form ISR and CRB
# ---------------------------------------------------------------------------

@dataclass
class PerformanceInputs:
    """Per-block population quantities of one dataset.

    C_z has shape (T, d-1, d-1); sigma_sq, nu, rho, varphi have shape (T,).
    kappa is optional and only needed for the Cramer-Rao bound.
    """

    C_z: np.ndarray
    sigma_sq: np.ndarray
    nu: np.ndarray
    rho: np.ndarray
    varphi: np.ndarray
    kappa: Optional[np.ndarray] = None

    def __post_init__(self):
        self.C_z = np.asarray(self.C_z)
        if self.C_z.ndim == 2:
            self.C_z = self.C_z[None]
        T = self.C_z.shape[0]
        self.sigma_sq = np.broadcast_to(np.asarray(self.sigma_sq, dtype=float), (T,))
        self.nu = np.broadcast_to(np.asarray(self.nu), (T,))
        self.rho = np.broadcast_to(np.asarray(self.rho), (T,))
        self.varphi = np.broadcast_to(np.asarray(self.varphi, dtype=float), (T,))
        if self.kappa is not None:
            self.kappa = np.broadcast_to(np.asarray(self.kappa, dtype=float), (T,))

    @property
    def T(self) -> int:
        return self.C_z.shape[0]


def theoretical_isr(inputs: PerformanceInputs, N: int) -> float:
    """Asymptotic mean ISR of the one-unit solver from population quantities.

    ISR = (1/N) Re tr[ (<C_z>/<sigma^2>) A^{-1} B (A^{-1})^H ] with
    A = <C_z (nu-rho)/(sigma^2 nu)>, B = <C_z (varphi-|nu|^2)/(sigma^2 |nu|^2)>,
    the averages taken over blocks; the Hermitian-transposed factor makes
    the sandwiched matrix a valid covariance.
    """
    Cz, s2 = inputs.C_z, inputs.sigma_sq
    nu, rho, varphi = inputs.nu, inputs.rho, inputs.varphi
    A = np.mean(Cz * ((nu - rho) / (s2 * nu))[:, None, None], axis=0)
    B = np.mean(Cz * ((varphi - np.abs(nu) ** 2) / (s2 * np.abs(nu) ** 2))[:, None, None],
                axis=0)
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise AnalysisError("non-identifiable configuration: singular "
                            "nu-rho weighted covariance average") from exc
    front = Cz.mean(axis=0) / s2.mean()
    return float(np.real(np.trace(front @ Ainv @ B @ Ainv.conj().T))) / N


def crlb_isr(C_z: np.ndarray, sigma_sq, kappa, N: int) -> float:
    """Cramer-Rao lower bound on the mean ISR.

    ISR_CRB = (1/N) tr[ (<C_z>/<sigma^2>) <C_z (kappa-1)/sigma^2>^{-1} ].
    Requires kappa > 1 on every block.
    """
    C_z = np.asarray(C_z)
    if C_z.ndim == 2:
        C_z = C_z[None]
    T = C_z.shape[0]
    sigma_sq = np.broadcast_to(np.asarray(sigma_sq, dtype=float), (T,))
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (T,))
    if np.any(kappa <= 1.0):
        raise AnalysisError("kappa must exceed 1 for a finite bound "
                            "(Gaussian-boundary non-identifiability)")
    inner = np.mean(C_z * ((kappa - 1.0) / sigma_sq)[:, None, None], axis=0)
    front = C_z.mean(axis=0) / sigma_sq.mean()
    return float(np.real(np.trace(front @ np.linalg.inv(inner)))) / N


# ---------------------------------------------------------------------------
# population score moments for GG sources
# ---------------------------------------------------------------------------

def gg_kappa(alpha: float, field_kind: str = COMPLEX) -> float:
    """Fisher-information moment kappa = E[|d log p / d s*|^2] of GG(alpha)."""
    if field_kind == COMPLEX:
        return alpha ** 2 * gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha) ** 2
    nu, rho, varphi = true_score_moments_gg(alpha, REAL)
    return varphi


def _radial_expectation(func, alpha: float, field_kind: str) -> float:
    """E[func(|u|^2)] for unit-variance GG(alpha), via Gamma-radial quadrature."""
    A = gg_scale(alpha, field_kind)
    shape = 1.0 / alpha if field_kind == COMPLEX else 0.5 / alpha
    norm = gamma_fn(shape)

    def integrand(v):
        return func(A * v ** (1.0 / alpha)) * v ** (shape - 1.0) * np.exp(-v) / norm

    with warnings.catch_warnings():
        # large alpha makes the integrand nearly flat near zero and the
        # routine reports a harmless roundoff warning; the value is accurate
        warnings.simplefilter("ignore", IntegrationWarning)
        val, _ = quad(integrand, 0.0, np.inf,
                      epsabs=1e-11, epsrel=1e-11, limit=400)
    return val


def rational_moments_gg(alpha: float, field_kind: str = COMPLEX):
    """(nu, rho, varphi, xi, eta) of the rational score on unit-variance GG(alpha).

    With R = |u|^2 and D = 1 + R these are, in the complex circular case,
    nu = E[R/D], rho = E[1/D^2], varphi = xi = E[R/D^2], eta = -E[R^2/D^2].
    """
    E = lambda f: _radial_expectation(f, alpha, field_kind)
    if field_kind == COMPLEX:
        nu = E(lambda R: R / (1.0 + R))
        rho = E(lambda R: 1.0 / (1.0 + R) ** 2)
        varphi = E(lambda R: R / (1.0 + R) ** 2)
        xi = varphi
        eta = -E(lambda R: R ** 2 / (1.0 + R) ** 2)
    else:
        nu = E(lambda R: R / (1.0 + R))
        rho = E(lambda R: (1.0 - R) / (1.0 + R) ** 2)
        varphi = E(lambda R: R / (1.0 + R) ** 2)
        xi = E(lambda R: R * (1.0 - R) / (1.0 + R) ** 2)
        eta = xi
    return nu, rho, varphi, xi, eta


def true_score_moments_gg(alpha: float, field_kind: str = COMPLEX):
    """(nu, rho, varphi) of the matched (true-density) score on GG(alpha).

    The Fisher identity gives nu = 1 and rho = varphi = kappa.
    """
    if field_kind == COMPLEX:
        kappa = gg_kappa(alpha, COMPLEX)
        return 1.0, kappa, kappa
    A = gg_scale(alpha, REAL)
    c = A ** (-alpha)
    varphi = _radial_expectation(lambda R: (2.0 * c * alpha) ** 2
                                 * R ** (2.0 * alpha - 1.0), alpha, REAL)
    return 1.0, varphi, varphi


def performance_inputs_from_truth(gt: GroundTruth, k: int,
                                  nu, rho, varphi,
                                  kappa=None,
                                  source_variances: Optional[np.ndarray] = None,
                                  ) -> PerformanceInputs:
    """Population PerformanceInputs for dataset k of a synthetic mixture.

    Per block: C_x = A diag(vars) A^H with the SOI variance from the stored
    profile and unit background variances; C_z = B C_x B^H with B the
    blocking matrix of the true (w, a) pair.
    """
    T = gt.mixing.shape[1]
    d = gt.mixing.shape[2]
    profile = np.asarray(gt.extra["soi_profile"], dtype=float)
    Cz = np.empty((T, d - 1, d - 1), dtype=gt.mixing.dtype)
    for t in range(T):
        A = gt.mixing[k, t]
        variances = np.ones(d)
        variances[0] = profile[t]
        if source_variances is not None:
            variances = np.asarray(source_variances[t], dtype=float)
        Cx = (A * variances) @ A.conj().T
        a = A[:, 0]
        # blocking matrix [g, -gamma I] of the true mixing vector
        B = np.zeros((d - 1, d), dtype=A.dtype)
        B[:, 0] = a[1:]
        B[:, 1:] = -a[0] * np.eye(d - 1)
        Cz[t] = B @ Cx @ B.conj().T
    return PerformanceInputs(C_z=Cz, sigma_sq=profile, nu=nu, rho=rho,
                             varphi=varphi, kappa=kappa)


# ---------------------------------------------------------------------------
# empirical ISR
# ---------------------------------------------------------------------------

@dataclass
class IsrReport:
    """Per-source empirical ISR after order resolution."""

    isr_db: np.ndarray          # (K, n_est)
    permutation: np.ndarray     # (K, n_est) true-source index per estimate
    trim_fraction: float = 0.0
    theory_db: Optional[np.ndarray] = None


def _isr_pair(w: np.ndarray, mixture_k: np.ndarray, gt: GroundTruth,
              k: int, j: int) -> tuple:
    """(interference power, SOI power) of separator w against true source j.

    w is a block-constant (d,) vector or a per-block (T, d) array.
    """
    T = mixture_k.shape[0]
    sig = 0.0
    interf = 0.0
    for t in range(T):
        w_t = w if w.ndim == 1 else w[t]
        a = gt.mixing[k, t, :, j]
        s = gt.sources[k, t, j]
        soi = np.vdot(w_t, a) * s
        resid = w_t.conj() @ mixture_k[t] - soi
        sig += float(np.mean(np.abs(soi) ** 2))
        interf += float(np.mean(np.abs(resid) ** 2))
    return interf, sig


def _power_to_db(interf: float, sig: float) -> float:
    if sig <= 0.0:
        return ISR_DB_CAP
    if interf <= 0.0:
        return -ISR_DB_CAP
    return float(np.clip(10.0 * np.log10(interf / sig), -ISR_DB_CAP, ISR_DB_CAP))


def empirical_isr(w_est: np.ndarray, gt: GroundTruth,
                  mixture: BlockedMixture) -> IsrReport:
    """Empirical ISR of estimated separators against ground truth.

    w_est has shape (K, d) for one estimate, (K, n_est, d) for several, or
    (K, n_est, T, d) for per-block separators (deflation back-mapping).
    Source order is resolved per dataset by the assignment that maximizes
    the total matched-power fraction; values are capped at +-300 dB.
    """
    w_est = np.asarray(w_est)
    if w_est.ndim == 2:
        w_est = w_est[:, None, :]
    K, n_est = w_est.shape[:2]
    n_true = gt.r
    isr_db = np.empty((K, n_est))
    perm = np.empty((K, n_est), dtype=int)
    for k in range(K):
        interf = np.empty((n_est, n_true))
        sig = np.empty((n_est, n_true))
        for e in range(n_est):
            for j in range(n_true):
                interf[e, j], sig[e, j] = _isr_pair(w_est[k, e],
                                                    mixture.data[k], gt, k, j)
        matched = sig / np.maximum(sig + interf, 1e-300)
        rows, cols = linear_sum_assignment(-matched)
        order = np.empty(n_est, dtype=int)
        order[rows] = cols
        for e in range(n_est):
            j = order[e]
            isr_db[k, e] = _power_to_db(interf[e, j], sig[e, j])
        perm[k] = order
    return IsrReport(isr_db=isr_db, permutation=perm)


def trimmed_mean(values, trim: float = 0.01) -> float:
    """Mean after discarding floor(trim * n) values from each tail."""
    if not 0.0 <= trim < 0.5:
        raise AnalysisError("trim fraction must lie in [0, 0.5)")
    v = np.sort(np.asarray(values, dtype=float))
    cut = int(np.floor(trim * v.size))
    v = v[cut: v.size - cut] if cut else v
    if v.size == 0:
        raise AnalysisError("no values left after trimming")
    return float(v.mean())


def trimmed_mean_isr_db(isr_db_values, trim: float = 0.01) -> float:
    """Trimmed mean of ISR values, averaged in the linear power domain."""
    linear = 10.0 ** (np.asarray(isr_db_values, dtype=float) / 10.0)
    return float(10.0 * np.log10(trimmed_mean(linear, trim)))


# ---------------------------------------------------------------------------
# finite-difference Wirtinger oracle
# ---------------------------------------------------------------------------

def _partial_real_imag(f, w, j, h):
    """(df/dRe w_j, df/dIm w_j) by central differences."""
    e = np.zeros_like(w)
    e[j] = h
    d_re = (f(w + e) - f(w - e)) / (2.0 * h)
    d_im = (f(w + 1j * e) - f(w - 1j * e)) / (2.0 * h)
    return d_re, d_im


def _wirtinger_grad(f, w, h):
    """(df/dw_j, df/dw_j*) for all j, as two d-vectors."""
    d = w.shape[0]
    g_w = np.empty(d, dtype=complex)
    g_wc = np.empty(d, dtype=complex)
    for j in range(d):
        d_re, d_im = _partial_real_imag(f, w, j, h)
        g_w[j] = 0.5 * (d_re - 1j * d_im)
        g_wc[j] = 0.5 * (d_re + 1j * d_im)
    return g_w, g_wc


def fd_wirtinger_oracle(f, w, h_grad: Optional[float] = None,
                        h_hess: Optional[float] = None):
    """Numerical Wirtinger gradient and Hessians of a real scalar field.

    Returns (grad, H1, H2) with grad_j = df/dw_j*, H1_{jl} = d^2 f / dw_j dw_l
    and H2_{jl} = d^2 f / dw_j dw_l*, all by nested central differences.
    """
    w = np.asarray(w, dtype=complex)
    d = w.shape[0]
    scale = 1.0 + float(np.linalg.norm(w))
    if h_grad is None:
        h_grad = 1e-5 * scale
    if h_hess is None:
        h_hess = 1e-4 * scale
    _, grad = _wirtinger_grad(f, w, h_grad)
    H1 = np.empty((d, d), dtype=complex)
    H2 = np.empty((d, d), dtype=complex)
    for j in range(d):
        e = np.zeros(d, dtype=complex)
        e[j] = h_hess
        # first-order Wirtinger gradients at the four perturbed points
        gp_w, gp_wc = _wirtinger_grad(f, w + e, h_hess)
        gm_w, gm_wc = _wirtinger_grad(f, w - e, h_hess)
        gip_w, gip_wc = _wirtinger_grad(f, w + 1j * e, h_hess)
        gim_w, gim_wc = _wirtinger_grad(f, w - 1j * e, h_hess)
        d_re_w = (gp_w - gm_w) / (2.0 * h_hess)
        d_im_w = (gip_w - gim_w) / (2.0 * h_hess)
        d_re_wc = (gp_wc - gm_wc) / (2.0 * h_hess)
        d_im_wc = (gip_wc - gim_wc) / (2.0 * h_hess)
        H1[j, :] = 0.5 * (d_re_w - 1j * d_im_w)
        H2[j, :] = 0.5 * (d_re_wc - 1j * d_im_wc)
    return grad, H1, H2


def fd_gradient_jacobians(grad_f, w, h: Optional[float] = None):
    """Wirtinger Jacobians of a complex vector field g(w) by central differences.

    Returns (H1, H2) with H1_{jl} = d g_l* / d w_j and H2_{jl} = d g_l / d w_j.
    Applied to the modified gradient with its normalization treated as a
    constant, these are the curvature matrices of the approximate
    Newton-Raphson scheme.
    """
    w = np.asarray(w, dtype=complex)
    d = w.shape[0]
    if h is None:
        h = 1e-5 * (1.0 + float(np.linalg.norm(w)))
    H1 = np.empty((d, d), dtype=complex)
    H2 = np.empty((d, d), dtype=complex)
    for j in range(d):
        e = np.zeros(d, dtype=complex)
        e[j] = h
        dg_du = (np.asarray(grad_f(w + e)) - np.asarray(grad_f(w - e))) / (2.0 * h)
        dg_dv = (np.asarray(grad_f(w + 1j * e))
                 - np.asarray(grad_f(w - 1j * e))) / (2.0 * h)
        H2[j, :] = 0.5 * (dg_du - 1j * dg_dv)
        H1[j, :] = 0.5 * (np.conj(dg_du) - 1j * np.conj(dg_dv))
    return H1, H2


# ---------------------------------------------------------------------------
# constrained-beamformer cross-check
# ---------------------------------------------------------------------------

def lcmp_crosscheck(covariances: np.ndarray, mixing_vectors: np.ndarray,
                    rank_tol: float = 1e-10) -> np.ndarray:
    """Linearly constrained minimum power separator from known (C^t, a^t).

    w = R^{-1} L (L^H R^{-1} L)^{-1} 1 with R = sum_t C^t and
    L = [a^1 ... a^T].  With exact per-block mixing vectors of a source
    obeying the constant-separating-vector property and population
    covariances, this recovers the true separating vector.
    """
    C = np.asarray(covariances)
    a = np.asarray(mixing_vectors)
    if a.ndim == 1:
        a = a[None]
        C = C[None] if C.ndim == 2 else C
    T, d = a.shape
    L = a.T  # d x T
    if np.linalg.matrix_rank(L, tol=rank_tol * max(1.0, float(np.abs(L).max()))) < T:
        raise AnalysisError("constraint matrix of mixing vectors is rank deficient")
    R = C.sum(axis=0)
    RiL = np.linalg.solve(R, L)
    G = L.conj().T @ RiL
    return RiL @ np.linalg.solve(G, np.ones(T, dtype=G.dtype))
