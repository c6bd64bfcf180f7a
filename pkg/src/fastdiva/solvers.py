"""One-unit, symmetric, and block-deflation solvers.

All three variants share the same inner step: per-block statistics of the
extracted signal drive an approximate Newton-Raphson update of the
block-constant separating vector, with the per-block mixing vectors tied
to it through the orthogonal constraint a = C w / (w^H C w).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mixture import BlockedMixture, COMPLEX
from .scores import ScoreModel, joint_block_stats, block_covariance, BlockStats

NU_FLOOR = 1e-8
RIDGE_REL = 1e-12


class SolverError(Exception):
    pass


class SingularUpdateError(SolverError):
    """The Newton system matrix is numerically singular."""


class RankDeficiencyError(SolverError):
    pass


@dataclass
class SeparatorState:
    """Separating vectors w (K, d) with OGC-linked mixing vectors a (K, T, d)."""

    w: np.ndarray
    a: np.ndarray
    iteration: int = 0
    converged: bool = False
    criterion_history: list = field(default_factory=list)
    dropped_blocks: int = 0


@dataclass
class HessianPieces:
    """Analytic curvature pieces of the orthogonally-constrained contrast."""

    c1: complex
    c2: complex
    c3: complex
    H1: np.ndarray
    H2: np.ndarray
    H_full: np.ndarray
    H_approx: np.ndarray


@dataclass
class DeflationChain:
    """Bookkeeping of the block-deflation recursion, per dataset and block."""

    P: list                 # per stage i: array (K, T, d-i, d) accumulated projections
    E: list                 # per stage i: list over datasets of reduction matrices
    w_orig: np.ndarray      # (K, r, T, d): back-mapped separating vectors
    a_orig: np.ndarray      # (K, r, T, d): OGC mixing vectors in the original domain
    w_reduced: list         # per stage i: (K, d-i) separating vectors on reduced data
    a_reduced: list         # per stage i: (K, T, d-i) mixing vectors on reduced data
    states: list            # per stage SeparatorState
    converged: bool = True


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def orthogonal_constraint(C: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Mixing vector a = C w / (w^H C w) tied to the separator w."""
    Cw = C @ w
    denom = np.vdot(w, Cw)
    if np.abs(denom) < 1e-300:
        raise SolverError("degenerate separator: w^H C w = 0")
    return Cw / denom


def block_covariances(mixture: BlockedMixture) -> np.ndarray:
    """All (K, T, d, d) sample covariances of a mixture."""
    K, T = mixture.K, mixture.T
    covs = np.empty((K, T, mixture.d, mixture.d), dtype=mixture.data.dtype)
    for k in range(K):
        for t in range(T):
            covs[k, t] = block_covariance(mixture.data[k, t])
    return covs


def _solve_hermitian(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Linear solve with a trace-scaled ridge retry on near-singularity."""
    try:
        sol = np.linalg.solve(M, b)
        if np.all(np.isfinite(sol)):
            return sol
    except np.linalg.LinAlgError:
        pass
    ridge = RIDGE_REL * np.trace(M).real / M.shape[0]
    try:
        return np.linalg.solve(M + ridge * np.eye(M.shape[0]), b)
    except np.linalg.LinAlgError as exc:
        raise SingularUpdateError("Newton system matrix is singular") from exc


def _field_scalar(x, dtype):
    """Stats are stored as complex; drop the (zero) imaginary part for real data."""
    if np.issubdtype(dtype, np.complexfloating):
        return x
    return x.real


def refresh_mixing_vectors(w: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """OGC mixing vectors for every dataset and block."""
    K, T = covs.shape[:2]
    a = np.empty((K, T, covs.shape[2]), dtype=covs.dtype)
    for k in range(K):
        for t in range(T):
            a[k, t] = orthogonal_constraint(covs[k, t], w[k])
    return a


def make_state(mixture: BlockedMixture, w: np.ndarray,
               covs: Optional[np.ndarray] = None) -> SeparatorState:
    """SeparatorState with OGC-consistent mixing vectors for given w (K, d)."""
    if covs is None:
        covs = block_covariances(mixture)
    w = np.asarray(w, dtype=covs.dtype)
    if w.ndim == 1:
        w = w[None, :]
    return SeparatorState(w=w.copy(), a=refresh_mixing_vectors(w, covs))


def normalized_gradient(mixture: BlockedMixture, state: SeparatorState,
                        model: ScoreModel, covs: Optional[np.ndarray] = None,
                        stats=None):
    """Block-averaged normalized gradient, one d-vector per dataset.

    Returns (grad (K, d), stats, dropped) where stats[t][k] are the block
    statistics and dropped counts blocks skipped for |nu| below the floor.
    """
    K, T, d, Nb = mixture.data.shape
    if covs is None:
        covs = block_covariances(mixture)
    if stats is None:
        stats = [joint_block_stats(mixture.data[:, t], state.w, model, covs[:, t])
                 for t in range(T)]
    grad = np.zeros((K, d), dtype=covs.dtype)
    used = np.zeros(K, dtype=int)
    dropped = 0
    for t in range(T):
        x_t = mixture.data[:, t]
        sigma = np.array([st.sigma for st in stats[t]])
        u = np.stack([state.w[k].conj() @ x_t[k] for k in range(K)]) / sigma[:, None]
        phi = model.evaluate(u)
        for k in range(K):
            nu = _field_scalar(stats[t][k].nu, covs.dtype)
            if np.abs(nu) < NU_FLOOR:
                dropped += 1
                continue
            f = (x_t[k] * phi[k]).mean(axis=1) / sigma[k]
            grad[k] += state.a[k, t] - f / nu
            used[k] += 1
    if np.any(used == 0):
        raise SolverError("all blocks dropped: |nu| below floor (non-identifiable)")
    grad /= used[:, None]
    return grad, stats, dropped


def hessian_pieces(stats: BlockStats, a: np.ndarray,
                   sigma: Optional[float] = None) -> HessianPieces:
    """Analytic Hessian pieces from one block's statistics.

    c1 = (nu-rho)/(nu sigma^2), c3 = (xi-eta-nu)/(2 nu), c2 = -sigma^2 c1 - c3;
    H1 = (c3 a a^T)*, H2 = (c1 C + c2 a a^H)^T, and the full-rank surrogate
    H_approx = ((nu-rho)/nu)* C / sigma^2.
    """
    if sigma is None:
        sigma = stats.sigma
    nu, rho = stats.nu, stats.rho
    s2 = sigma ** 2
    c1 = (nu - rho) / (nu * s2)
    c3 = (stats.xi - stats.eta - nu) / (2.0 * nu)
    c2 = -s2 * c1 - c3
    aaH = np.outer(a, a.conj())
    H1 = np.conj(c3 * np.outer(a, a))
    H2 = (c1 * stats.cov + c2 * aaH).T
    H_full = np.conj((nu - rho) / nu) * (stats.cov / s2 - aaH)
    H_approx = np.conj((nu - rho) / nu) * stats.cov / s2
    return HessianPieces(c1=c1, c2=c2, c3=c3, H1=H1, H2=H2,
                         H_full=H_full, H_approx=H_approx)


def one_unit_update(mixture: BlockedMixture, state: SeparatorState,
                    model: ScoreModel, covs: Optional[np.ndarray] = None,
                    normalize: bool = True) -> SeparatorState:
    """One approximate Newton-Raphson step of the separating vectors.

    w_new^k = w^k - M^{-1} grad^k with M the block average of
    ((nu-rho)/nu)* C / sigma^2, followed by an OGC refresh and (optionally)
    rescaling to unit block-averaged output power.
    """
    K, T, d, Nb = mixture.data.shape
    if covs is None:
        covs = block_covariances(mixture)
    grad, stats, dropped = normalized_gradient(mixture, state, model, covs)
    w_new = np.empty_like(state.w)
    for k in range(K):
        M = np.zeros((d, d), dtype=covs.dtype)
        used = 0
        for t in range(T):
            st = stats[t][k]
            if np.abs(st.nu) < NU_FLOOR:
                continue
            coef = _field_scalar(np.conj((st.nu - st.rho) / st.nu), covs.dtype)
            M += coef * covs[k, t] / st.sigma ** 2
            used += 1
        M /= used
        w_new[k] = state.w[k] - _solve_hermitian(M, grad[k])
        if normalize:
            power = np.mean([np.real(np.vdot(w_new[k], covs[k, t] @ w_new[k]))
                             for t in range(T)])
            if power <= 0:
                raise SolverError("update produced a zero separator")
            w_new[k] = w_new[k] / np.sqrt(power)
    new = SeparatorState(w=w_new, a=refresh_mixing_vectors(w_new, covs),
                         iteration=state.iteration + 1,
                         criterion_history=list(state.criterion_history),
                         dropped_blocks=state.dropped_blocks + dropped)
    return new


def _convergence_criterion(w_new, w_old, R):
    """1 - |<w_new, w_old>_R| / (||w_new||_R ||w_old||_R), per dataset max."""
    crit = 0.0
    for k in range(R.shape[0]):
        num = np.abs(np.vdot(w_new[k], R[k] @ w_old[k]))
        den = np.sqrt(np.real(np.vdot(w_new[k], R[k] @ w_new[k]))
                      * np.real(np.vdot(w_old[k], R[k] @ w_old[k])))
        crit = max(crit, 1.0 - num / den)
    return crit


def extract_signals(mixture: BlockedMixture, w: np.ndarray) -> np.ndarray:
    """Per-dataset extracted signals (K, T, Nb) given separators w (K, d)."""
    K, T = mixture.K, mixture.T
    out = np.empty((K, T, mixture.Nb), dtype=mixture.data.dtype)
    for k in range(K):
        for t in range(T):
            out[k, t] = w[k].conj() @ mixture.data[k, t]
    return out


def run_one_unit(mixture: BlockedMixture, w_init: np.ndarray,
                 model: ScoreModel, max_iter: int = 100, tol: float = 1e-6,
                 covs: Optional[np.ndarray] = None):
    """Iterate one-unit updates until the R-metric cosine stopping rule.

    Returns (SeparatorState, extracted signals (K, T, Nb)).  Non-convergence
    within max_iter sets state.converged = False; it is not an error.
    """
    if covs is None:
        covs = block_covariances(mixture)
    R = covs.mean(axis=1)
    state = make_state(mixture, w_init, covs)
    for _ in range(max_iter):
        new = one_unit_update(mixture, state, model, covs)
        crit = _convergence_criterion(new.w, state.w, R)
        new.criterion_history.append(crit)
        state = new
        if crit < tol:
            state.converged = True
            break
    return state, extract_signals(mixture, state.w)


# ---------------------------------------------------------------------------
# symmetric scheme
# ---------------------------------------------------------------------------

def symmetric_orthogonalize(W_plus: np.ndarray, R: np.ndarray) -> np.ndarray:
    """W_new = W+ ((W+)^H R W+)^{-1/2} so that W_new^H R W_new = I."""
    M = W_plus.conj().T @ R @ W_plus
    M = (M + M.conj().T) / 2.0
    evals, evecs = np.linalg.eigh(M)
    if evals[0] <= evals[-1] * 1e-12:
        raise RankDeficiencyError("separator matrix is numerically rank deficient")
    inv_sqrt = evecs @ np.diag(evals ** -0.5) @ evecs.conj().T
    return W_plus @ inv_sqrt


def run_symmetric(mixture: BlockedMixture, r: int,
                  W_init: Optional[np.ndarray], model: ScoreModel,
                  max_iter: int = 100, tol: float = 1e-6, seed=None,
                  covs: Optional[np.ndarray] = None):
    """Separate r sources by parallel one-unit updates plus orthogonalization.

    W_init has shape (K, d, r); if None, a random R-orthonormalized matrix
    is drawn.  Returns (list of r SeparatorStates, signals (K, r, T, Nb)).
    """
    K, T, d, Nb = mixture.data.shape
    if not 1 <= r <= d:
        raise SolverError("require 1 <= r <= d")
    if covs is None:
        covs = block_covariances(mixture)
    R = covs.mean(axis=1)
    if W_init is None:
        rng = np.random.default_rng(seed)
        if mixture.field_kind == COMPLEX:
            W_init = (rng.standard_normal((K, d, r))
                      + 1j * rng.standard_normal((K, d, r)))
        else:
            W_init = rng.standard_normal((K, d, r))
    W = np.asarray(W_init, dtype=covs.dtype).copy()
    for k in range(K):
        W[k] = symmetric_orthogonalize(W[k], R[k])
    iteration = 0
    converged = False
    history = []
    for iteration in range(1, max_iter + 1):
        W_old = W.copy()
        W_plus = np.empty_like(W)
        for j in range(r):
            st = make_state(mixture, W[:, :, j], covs)
            st = one_unit_update(mixture, st, model, covs, normalize=False)
            W_plus[:, :, j] = st.w
        for k in range(K):
            W[k] = symmetric_orthogonalize(W_plus[k], R[k])
        crit = max(_convergence_criterion(W[:, :, j], W_old[:, :, j], R)
                   for j in range(r))
        history.append(crit)
        if crit < tol:
            converged = True
            break
    states = []
    for j in range(r):
        st = make_state(mixture, W[:, :, j], covs)
        st.iteration = iteration
        st.converged = converged
        st.criterion_history = list(history)
        states.append(st)
    signals = np.stack([extract_signals(mixture, W[:, :, j]) for j in range(r)],
                       axis=1)
    return states, signals


# ---------------------------------------------------------------------------
# block-deflation scheme
# ---------------------------------------------------------------------------

def run_block_deflation(mixture: BlockedMixture, r: int, model: ScoreModel,
                        init: Optional[list] = None, max_iter: int = 100,
                        tol: float = 1e-6, seed=None):
    """Sequential extraction with per-block least-squares subtraction.

    Stage i runs the one-unit solver on the current (d-i+1)-dimensional
    data, subtracts the extracted source on each block through the
    projection E_i (I - a_i^t w_i^H), and records the accumulated
    projections so the stage separators can be mapped back to the original
    domain.  ``init`` may be a list of per-stage (K, d-i+1) initial vectors.

    Returns (DeflationChain, signals (K, r, T, Nb)).
    """
    K, T, d, Nb = mixture.data.shape
    if not 1 <= r <= d:
        raise SolverError("require 1 <= r <= d")
    rng = np.random.default_rng(seed)
    orig_covs = block_covariances(mixture)
    ctype = mixture.data.dtype

    x_cur = mixture.data.copy()
    P = np.broadcast_to(np.eye(d, dtype=ctype), (K, T, d, d)).copy()

    chain = DeflationChain(P=[], E=[], states=[],
                           w_orig=np.zeros((K, r, T, d), dtype=ctype),
                           a_orig=np.zeros((K, r, T, d), dtype=ctype),
                           w_reduced=[], a_reduced=[])
    signals = np.zeros((K, r, T, Nb), dtype=ctype)
    for i in range(r):
        dim = d - i
        if dim == 1:
            # one channel left: normalize its power, nothing to separate
            w1 = np.empty((K, 1), dtype=ctype)
            a1 = np.empty((K, T, 1), dtype=ctype)
            for k in range(K):
                power = np.mean(np.abs(x_cur[k]) ** 2)
                w1[k, 0] = 1.0 / np.sqrt(power)
                a1[k, :, 0] = np.sqrt(power)
            state = SeparatorState(w=w1, a=a1, iteration=0, converged=True)
            s_hat = np.einsum("k,ktn->ktn", w1[:, 0].conj(), x_cur[:, :, 0])
        else:
            sub = BlockedMixture(x_cur, mixture.field_kind)
            if init is not None and i < len(init) and init[i] is not None:
                w0 = np.asarray(init[i], dtype=ctype)
            elif mixture.field_kind == COMPLEX:
                w0 = rng.standard_normal((K, dim)) + 1j * rng.standard_normal((K, dim))
            else:
                w0 = rng.standard_normal((K, dim))
            state, s_hat = run_one_unit(sub, w0, model, max_iter, tol)
        chain.states.append(state)
        chain.P.append(P.copy())
        chain.w_reduced.append(state.w.copy())
        chain.a_reduced.append(state.a.copy())
        signals[:, i] = s_hat
        if not state.converged:
            chain.converged = False
        for k in range(K):
            for t in range(T):
                w_full = P[k, t].conj().T @ state.w[k]
                chain.w_orig[k, i, t] = w_full
                chain.a_orig[k, i, t] = orthogonal_constraint(orig_covs[k, t], w_full)
        if i == r - 1:
            break
        # dimension reduction: drop the channel most aligned with the
        # extracted source (block-averaged mixing vector), per dataset
        E_list = []
        x_next = np.empty((K, T, dim - 1, Nb), dtype=ctype)
        P_next = np.empty((K, T, dim - 1, d), dtype=ctype)
        for k in range(K):
            drop = int(np.argmax(np.abs(state.a[k].mean(axis=0))))
            E = np.delete(np.eye(dim, dtype=ctype), drop, axis=0)
            E_list.append(E)
            for t in range(T):
                Pi = E @ (np.eye(dim, dtype=ctype)
                          - np.outer(state.a[k, t], state.w[k].conj()))
                x_next[k, t] = Pi @ x_cur[k, t]
                P_next[k, t] = Pi @ P[k, t]
        chain.E.append(E_list)
        x_cur = x_next
        P = P_next
    return chain, signals


# ---------------------------------------------------------------------------
# helpers for reduction tests and oracles
# ---------------------------------------------------------------------------

def whiten(mixture: BlockedMixture) -> BlockedMixture:
    """Spatially whiten each dataset over all samples (intended for T = 1)."""
    K, T, d, Nb = mixture.data.shape
    out = np.empty_like(mixture.data)
    for k in range(K):
        x = mixture.data[k].transpose(1, 0, 2).reshape(d, T * Nb)
        C = x @ x.conj().T / (T * Nb)
        evals, evecs = np.linalg.eigh((C + C.conj().T) / 2.0)
        W = evecs @ np.diag(evals ** -0.5) @ evecs.conj().T
        for t in range(T):
            out[k, t] = W @ mixture.data[k, t]
    return BlockedMixture(out, mixture.field_kind)


def contrast_value(mixture: BlockedMixture, w: np.ndarray, model: ScoreModel,
                   Cz: Optional[np.ndarray] = None, nu0: float = 1.0,
                   covs: Optional[np.ndarray] = None) -> float:
    """Orthogonally-constrained contrast (up to its constant term).

    w has shape (K, d).  ``Cz``, if given, is a frozen (K, T, d-1, d-1)
    background covariance used in the quadratic term; otherwise the sample
    covariance of the blocked background output is used (which makes that
    term constant).  ``nu0`` rescales the model-density term; passing the
    sample nu at a reference point normalizes the score as phi / nu0.

    Used as a test oracle for gradient/Hessian checks, not inside solvers.
    """
    K, T, d, Nb = mixture.data.shape
    w = np.asarray(w)
    if w.ndim == 1:
        w = w[None, :]
    if covs is None:
        covs = block_covariances(mixture)
    total = 0.0
    for t in range(T):
        x_t = mixture.data[:, t]
        sigma = np.empty(K)
        u = np.empty((K, Nb), dtype=mixture.data.dtype)
        term = 0.0
        for k in range(K):
            C = covs[k, t]
            var = np.real(np.vdot(w[k], C @ w[k]))
            sigma[k] = np.sqrt(var)
            u[k] = (w[k].conj() @ x_t[k]) / sigma[k]
            a = orthogonal_constraint(C, w[k])
            gamma, g = a[0], a[1:]
            B = np.concatenate([g[:, None], -gamma * np.eye(d - 1)], axis=1)
            z = B @ x_t[k]
            Cz_kt = Cz[k, t] if Cz is not None else z @ z.conj().T / Nb
            quad = np.linalg.solve(Cz_kt, z)
            term -= np.log(var)
            term -= np.real(np.sum(np.conj(z) * quad)) / Nb
            term += (d - 2) * np.log(np.abs(gamma) ** 2)
        term += float(np.mean(model.log_density(u)).real) / nu0
        total += term
    return total / T
