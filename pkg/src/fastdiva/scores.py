"""Score nonlinearities and per-block sample statistics.

A score model supplies phi_k({s_k}_k) together with its Wirtinger partial
derivatives with respect to s_k and s_k*.  The convention throughout is
phi_k = -d log f / d s_k for a real-valued model density f, so that for a
circular Gaussian model phi(s) = s*.  In the real-valued case both partial
derivatives coincide with the ordinary derivative d phi / d s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mixture import COMPLEX, REAL, gg_scale

# lower clamp on |s|^2 when evaluating GG scores with alpha < 1
GG_MODULUS_FLOOR = 1e-30


class ScoreError(Exception):
    pass


class DegenerateDataError(Exception):
    """Extracted signal has zero sample variance on a block."""


class ScoreModel:
    """Interface: vectorized score over stacked normalized signals u (K, n)."""

    name = "abstract"

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def d_ds(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def d_ds_conj(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, u: np.ndarray) -> np.ndarray:
        """log f({u_k}_k) up to an additive constant, shape (n,)."""
        raise NotImplementedError


class RationalScore(ScoreModel):
    """phi_k({s_k}) = s_k* / (1 + sum_j |s_j|^2)."""

    def __init__(self, field_kind: str = COMPLEX):
        self.field_kind = field_kind
        self.name = "rational"

    def evaluate(self, u):
        u = np.atleast_2d(u)
        denom = 1.0 + np.sum(np.abs(u) ** 2, axis=0)
        return np.conj(u) / denom

    def d_ds(self, u):
        u = np.atleast_2d(u)
        denom = 1.0 + np.sum(np.abs(u) ** 2, axis=0)
        if self.field_kind == REAL:
            return (denom - 2.0 * u ** 2) / denom ** 2
        return -np.conj(u) ** 2 / denom ** 2

    def d_ds_conj(self, u):
        u = np.atleast_2d(u)
        denom = 1.0 + np.sum(np.abs(u) ** 2, axis=0)
        if self.field_kind == REAL:
            return (denom - 2.0 * u ** 2) / denom ** 2
        return (denom - np.abs(u) ** 2) / denom ** 2

    def log_density(self, u):
        u = np.atleast_2d(u)
        return -np.log1p(np.sum(np.abs(u) ** 2, axis=0))


class GGScore(ScoreModel):
    """Score of the unit-variance generalized Gaussian density GG(alpha).

    Complex circular case: phi(s) = c * alpha * s* * |s|^(2 alpha - 2) with
    c = A^(-alpha) and A the unit-variance scale.  For alpha < 1 the
    derivative is singular at the origin; |s|^2 is clamped from below.
    """

    def __init__(self, alpha: float, field_kind: str = COMPLEX):
        if alpha <= 0:
            raise ScoreError("alpha must be positive")
        self.alpha = alpha
        self.field_kind = field_kind
        self.c = gg_scale(alpha, field_kind) ** (-alpha)
        self.name = f"gg:{alpha:g}"

    def _mod2(self, u):
        return np.maximum(np.abs(u) ** 2, GG_MODULUS_FLOOR)

    def evaluate(self, u):
        u = np.atleast_2d(u)
        a, c = self.alpha, self.c
        if self.field_kind == REAL:
            return 2.0 * c * a * u * self._mod2(u) ** (a - 1.0)
        return c * a * np.conj(u) * self._mod2(u) ** (a - 1.0)

    def d_ds(self, u):
        u = np.atleast_2d(u)
        a, c = self.alpha, self.c
        if self.field_kind == REAL:
            return 2.0 * c * a * (2.0 * a - 1.0) * self._mod2(u) ** (a - 1.0)
        return c * a * (a - 1.0) * np.conj(u) ** 2 * self._mod2(u) ** (a - 2.0)

    def d_ds_conj(self, u):
        u = np.atleast_2d(u)
        a, c = self.alpha, self.c
        if self.field_kind == REAL:
            return 2.0 * c * a * (2.0 * a - 1.0) * self._mod2(u) ** (a - 1.0)
        return c * a ** 2 * self._mod2(u) ** (a - 1.0)

    def log_density(self, u):
        u = np.atleast_2d(u)
        return -self.c * np.sum(self._mod2(u) ** self.alpha, axis=0)


def score_from_name(name: str, field_kind: str = COMPLEX) -> ScoreModel:
    """Parse "rational" or "gg:<alpha>" into a score model."""
    if name == "rational":
        return RationalScore(field_kind)
    if name.startswith("gg:"):
        return GGScore(float(name.split(":", 1)[1]), field_kind)
    raise ScoreError(f"unknown score model {name!r}")


def rational_score(s, k: int = 0):
    """Direct evaluation of the rational nonlinearity at one point per dataset."""
    s = np.asarray(s)
    return s[k].conj() / (1.0 + np.sum(np.abs(s) ** 2))


def score_wirtinger_derivatives(model: ScoreModel, s, k: int = 0):
    """Closed-form (d phi_k / d s_k, d phi_k / d s_k*) at the point {s_k}_k."""
    u = np.asarray(s).reshape(-1, 1)
    return complex(model.d_ds(u)[k, 0]), complex(model.d_ds_conj(u)[k, 0])


# ---------------------------------------------------------------------------
# block statistics
# ---------------------------------------------------------------------------

@dataclass
class BlockStats:
    """Sample statistics of one (dataset, block) pair at a given separator."""

    sigma: float        # sqrt(w^H C w)
    nu: complex         # E[phi(u) u]
    rho: complex        # E[d phi / d s*]
    xi: complex         # E[d phi / d s* |u|^2]
    eta: complex        # E[d phi / d s  u^2]
    varphi: float       # E[|phi(u)|^2]
    cov: np.ndarray     # d x d sample covariance of the block


def block_covariance(x_block: np.ndarray) -> np.ndarray:
    """Sample covariance E^[x x^H] of a (d, Nb) block."""
    return x_block @ x_block.conj().T / x_block.shape[1]


def joint_block_stats(x_t: np.ndarray, w: np.ndarray, model: ScoreModel,
                      covs=None):
    """BlockStats for all K datasets of one block, with cross-dataset coupling.

    x_t has shape (K, d, Nb), w has shape (K, d).  Returns a list of K
    BlockStats.  The score is evaluated jointly on the stacked normalized
    signals so that multi-dataset nonlinearities see every dataset.
    """
    x_t = np.asarray(x_t)
    w = np.asarray(w)
    K, d, Nb = x_t.shape
    if Nb < 2:
        raise DegenerateDataError("need at least 2 samples per block")
    if covs is None:
        covs = np.stack([block_covariance(x_t[k]) for k in range(K)])
    sigma = np.empty(K)
    s_hat = np.empty((K, Nb), dtype=x_t.dtype)
    for k in range(K):
        var = np.real(np.vdot(w[k], covs[k] @ w[k]))
        if var <= 0:
            raise DegenerateDataError("zero variance of the extracted signal")
        sigma[k] = np.sqrt(var)
        s_hat[k] = w[k].conj() @ x_t[k]
    u = s_hat / sigma[:, None]
    phi = model.evaluate(u)
    dd = model.d_ds(u)
    dc = model.d_ds_conj(u)
    out = []
    for k in range(K):
        out.append(BlockStats(
            sigma=float(sigma[k]),
            nu=complex(np.mean(phi[k] * u[k])),
            rho=complex(np.mean(dc[k])),
            xi=complex(np.mean(dc[k] * np.abs(u[k]) ** 2)),
            eta=complex(np.mean(dd[k] * u[k] ** 2)),
            varphi=float(np.mean(np.abs(phi[k]) ** 2)),
            cov=covs[k]))
    return out


def compute_block_stats(x_block: np.ndarray, w: np.ndarray,
                        model: ScoreModel) -> BlockStats:
    """Single-dataset convenience wrapper around :func:`joint_block_stats`."""
    return joint_block_stats(x_block[None], np.asarray(w)[None], model)[0]
