"""Blocked multi-dataset signal containers and synthetic mixture generators.

Mixtures follow the block-wise time-varying model x[k,t] = A[k,t] s[k,t]
with K datasets, T blocks of Nb samples each, and d channels.  The
generators construct mixtures in which one or more sources admit a
separating vector that is constant over the blocks (the CSV property),
either directly (``generate_csv_mixture``), for the first r sources
(``generate_c1_mixture``), or recursively after subtracting previously
extracted sources (``generate_c2_mixture``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gamma as gamma_fn

REAL = "real"
COMPLEX = "complex"

DEFAULT_COND_CAP = 1e4
DEFAULT_MAX_REDRAWS = 100


class MixtureError(Exception):
    """Invalid mixture parameters or degenerate data."""


class SingularDrawError(MixtureError):
    """Random matrix draws kept exceeding the condition-number cap."""


def default_variance_profile(T: int) -> np.ndarray:
    """Per-block variance profile |cos(i*pi/6)| + 1 - sqrt(3)/2, i = 1..T."""
    i = np.arange(1, T + 1)
    return np.abs(np.cos(i * np.pi / 6.0)) + 1.0 - np.sqrt(3.0) / 2.0


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

@dataclass
class BlockedMixture:
    """Observed signals indexed [dataset, block, channel, sample]."""

    data: np.ndarray  # shape (K, T, d, Nb)
    field_kind: str = COMPLEX

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4:
            raise MixtureError("data must have shape (K, T, d, Nb)")
        if self.field_kind not in (REAL, COMPLEX):
            raise MixtureError(f"unknown field_kind {self.field_kind!r}")
        if self.d < 2:
            raise MixtureError("need at least d = 2 channels")

    @property
    def K(self) -> int:
        return self.data.shape[0]

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    @property
    def Nb(self) -> int:
        return self.data.shape[3]

    @property
    def N(self) -> int:
        return self.T * self.Nb

    def block(self, k: int, t: int) -> np.ndarray:
        """The (d, Nb) data matrix of dataset k, block t."""
        return self.data[k, t]


@dataclass
class GroundTruth:
    """Generation metadata for synthetic mixtures.

    ``separating_rows[k, i]`` is the vector w such that w^H x[k,t]
    recovers source i in every block (valid for the first ``r`` sources).
    """

    mixing: np.ndarray          # (K, T, d, d)
    sources: np.ndarray         # (K, T, d, Nb)
    separating_rows: np.ndarray  # (K, r, d)
    r: int
    extra: dict = field(default_factory=dict)

    @property
    def mixing_vectors(self) -> np.ndarray:
        """First mixing column per dataset and block, shape (K, T, d)."""
        return self.mixing[:, :, :, 0]


@dataclass
class SourceSpec:
    """Distribution of one source: GG(alpha), Gaussian, or provided samples."""

    distribution: str = "gg"    # "gg" | "gaussian" | "samples"
    alpha: float = 0.1
    variance_profile: Optional[np.ndarray] = None
    circular: bool = True
    samples: Optional[np.ndarray] = None

    def profile(self, T: int) -> np.ndarray:
        if self.variance_profile is None:
            return default_variance_profile(T)
        prof = np.asarray(self.variance_profile, dtype=float)
        if prof.shape != (T,):
            raise MixtureError(f"variance_profile must have length {T}")
        if np.any(prof <= 0):
            raise MixtureError("variance_profile entries must be positive")
        return prof


@dataclass
class CsvParameterization:
    """Single-dataset CSV parameterization of the mixing/separating pair.

    The mixing vector on block t is a[t] = [gamma[t]; g[t]] and the
    block-constant separating vector is w = [beta; h], tied by the
    distortionless constraint w^H a[t] = 1.
    """

    gamma: np.ndarray   # (T,)
    g: np.ndarray       # (T, d-1)
    h: np.ndarray       # (d-1,)
    beta: complex

    @classmethod
    def from_vectors(cls, a: np.ndarray, w: np.ndarray) -> "CsvParameterization":
        """Build from per-block mixing vectors a (T, d) and separator w (d,)."""
        a = np.atleast_2d(np.asarray(a))
        w = np.asarray(w)
        return cls(gamma=a[:, 0].copy(), g=a[:, 1:].copy(),
                   h=w[1:].copy(), beta=w[0])

    @property
    def T(self) -> int:
        return self.gamma.shape[0]

    @property
    def d(self) -> int:
        return self.g.shape[1] + 1

    def mixing_vector(self, t: int) -> np.ndarray:
        return np.concatenate(([self.gamma[t]], self.g[t]))

    @property
    def separating_vector(self) -> np.ndarray:
        return np.concatenate(([self.beta], self.h))

    def blocking_matrix(self, t: int) -> np.ndarray:
        """B[t] = [g[t], -gamma[t] I], satisfying B[t] a[t] = 0."""
        d = self.d
        B = np.zeros((d - 1, d), dtype=np.result_type(self.gamma, self.g))
        B[:, 0] = self.g[t]
        B[:, 1:] = -self.gamma[t] * np.eye(d - 1)
        return B

    def mixing_matrix(self, t: int) -> np.ndarray:
        """Assembled d x d mixing matrix [a[t], Q[t]]."""
        d = self.d
        gam, g, h = self.gamma[t], self.g[t], self.h
        A = np.zeros((d, d), dtype=np.result_type(self.gamma, self.g, self.h))
        A[0, 0] = gam
        A[1:, 0] = g
        A[0, 1:] = np.conj(h)
        A[1:, 1:] = (np.outer(g, np.conj(h)) - np.eye(d - 1)) / gam
        return A

    def demixing_matrix(self, t: int) -> np.ndarray:
        """Assembled d x d de-mixing matrix [w^H; B[t]]."""
        d = self.d
        W = np.zeros((d, d), dtype=np.result_type(self.gamma, self.g, self.h))
        W[0, 0] = np.conj(self.beta)
        W[0, 1:] = np.conj(self.h)
        W[1:] = self.blocking_matrix(t)
        return W


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_gg(alpha: float, n: int, field_kind: str = COMPLEX, seed=None) -> np.ndarray:
    """i.i.d. zero-mean unit-variance generalized Gaussian samples.

    Complex samples are circular with density proportional to
    exp(-(|s|^2 / A)^alpha); the squared modulus is A * G^(1/alpha) with
    G ~ Gamma(1/alpha) and the phase is uniform.  Real samples follow the
    symmetric density proportional to exp(-(s^2 / A)^alpha).  The scale A
    is fixed analytically so the variance is exactly one.
    """
    if alpha <= 0:
        raise ValueError("shape parameter alpha must be positive")
    if n < 1:
        raise ValueError("need n >= 1 samples")
    rng = _as_rng(seed)
    if field_kind == COMPLEX:
        A = gamma_fn(1.0 / alpha) / gamma_fn(2.0 / alpha)
        v = rng.gamma(1.0 / alpha, size=n)
        radius = np.sqrt(A * v ** (1.0 / alpha))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
        return radius * np.exp(1j * phase)
    A = gamma_fn(0.5 / alpha) / gamma_fn(1.5 / alpha)
    v = rng.gamma(0.5 / alpha, size=n)
    sign = rng.choice([-1.0, 1.0], size=n)
    return sign * np.sqrt(A * v ** (1.0 / alpha))


def gg_scale(alpha: float, field_kind: str = COMPLEX) -> float:
    """Scale A of the unit-variance GG density exp(-(|s|^2/A)^alpha)."""
    if field_kind == COMPLEX:
        return gamma_fn(1.0 / alpha) / gamma_fn(2.0 / alpha)
    return gamma_fn(0.5 / alpha) / gamma_fn(1.5 / alpha)


def _randn(rng, shape, field_kind):
    if field_kind == COMPLEX:
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return rng.standard_normal(shape)


def random_unitary(n: int, rng, field_kind: str = COMPLEX) -> np.ndarray:
    """Haar-ish random unitary (orthogonal in the real case) via QR."""
    q, r = np.linalg.qr(_randn(rng, (n, n), field_kind))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _draw_source(spec: SourceSpec, n: int, field_kind: str, rng) -> np.ndarray:
    if spec.distribution == "gaussian":
        return _randn(rng, n, field_kind)
    if spec.distribution == "gg":
        return sample_gg(spec.alpha, n, field_kind, rng)
    if spec.distribution == "samples":
        if spec.samples is None or len(spec.samples) < n:
            raise MixtureError("SourceSpec with provided samples is too short")
        return np.asarray(spec.samples[:n])
    raise MixtureError(f"unknown source distribution {spec.distribution!r}")


def _center_scale(block: np.ndarray, variance: float) -> np.ndarray:
    """Center a sample block and rescale to an exact sample variance."""
    out = block - block.mean()
    power = np.mean(np.abs(out) ** 2)
    if power == 0:
        raise MixtureError("degenerate source block (zero power)")
    return out * np.sqrt(variance / power)


# ---------------------------------------------------------------------------
# mixing-matrix draws
# ---------------------------------------------------------------------------

def _draw_demixing(rng, d, fixed_rows, field_kind, cond_cap, max_redraws):
    """Random de-mixing matrix with given fixed leading rows, condition-capped."""
    for _ in range(max_redraws):
        W = _randn(rng, (d, d), field_kind)
        if fixed_rows is not None:
            W[: fixed_rows.shape[0]] = fixed_rows
        if np.linalg.cond(W) <= cond_cap:
            return W
    raise SingularDrawError(
        f"could not draw a de-mixing matrix with condition <= {cond_cap:g} "
        f"in {max_redraws} attempts")


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def generate_csv_mixture(K: int, T: int, d: int, Nb: int,
                         soi_spec: Optional[SourceSpec] = None,
                         bg_kind: str = "gaussian",
                         seed=0,
                         field_kind: str = COMPLEX,
                         couple_datasets: bool = True,
                         cond_cap: float = DEFAULT_COND_CAP,
                         max_redraws: int = DEFAULT_MAX_REDRAWS):
    """Mixture in which source 1 obeys CSV in every dataset.

    Per dataset, a fixed separating row is drawn once; each block's
    de-mixing matrix is a fresh random draw with that first row, and the
    mixing matrix is its inverse.  With K > 1 and ``couple_datasets`` the
    per-dataset SOIs are rotated by a random unitary matrix to make them
    dependent across datasets.

    Returns (BlockedMixture, GroundTruth).
    """
    if d < 2 or T < 1 or K < 1 or Nb < 1:
        raise MixtureError("require d >= 2, T >= 1, K >= 1, Nb >= 1")
    rng = _as_rng(seed)
    if soi_spec is None:
        soi_spec = SourceSpec(distribution="gg", alpha=0.1)
    profile = soi_spec.profile(T)
    bg_spec = SourceSpec(distribution=bg_kind if bg_kind != "gaussian" else "gaussian",
                         alpha=soi_spec.alpha)
    ctype = np.complex128 if field_kind == COMPLEX else np.float64

    # fixed separating rows, one per dataset
    w_rows = np.stack([_randn(rng, d, field_kind) for _ in range(K)])

    # raw unit-variance SOI streams, optionally coupled across datasets
    soi_raw = np.stack([_draw_source(soi_spec, T * Nb, field_kind, rng)
                        for _ in range(K)])
    if K > 1 and couple_datasets:
        U = random_unitary(K, rng, field_kind)
        soi_raw = U @ soi_raw
    soi_raw = soi_raw.reshape(K, T, Nb)

    mixing = np.zeros((K, T, d, d), dtype=ctype)
    sources = np.zeros((K, T, d, Nb), dtype=ctype)
    data = np.zeros((K, T, d, Nb), dtype=ctype)
    for k in range(K):
        for t in range(T):
            W = _draw_demixing(rng, d, w_rows[k][None, :].conj(), field_kind,
                               cond_cap, max_redraws)
            A = np.linalg.inv(W)
            s = np.zeros((d, Nb), dtype=ctype)
            s[0] = _center_scale(soi_raw[k, t], profile[t])
            for j in range(1, d):
                s[j] = _center_scale(_draw_source(bg_spec, Nb, field_kind, rng), 1.0)
            mixing[k, t] = A
            sources[k, t] = s
            data[k, t] = A @ s

    gt = GroundTruth(mixing=mixing, sources=sources,
                     separating_rows=w_rows[:, None, :], r=1,
                     extra={"soi_profile": profile, "kind": "csv"})
    return BlockedMixture(data, field_kind), gt


def generate_c1_mixture(K: int, T: int, d: int, r: int, Nb: int,
                        soi_spec: Optional[SourceSpec] = None,
                        bg_kind: str = "gaussian",
                        seed=0,
                        field_kind: str = COMPLEX,
                        cond_cap: float = DEFAULT_COND_CAP,
                        max_redraws: int = DEFAULT_MAX_REDRAWS):
    """Mixture whose first r de-mixing rows are constant over blocks.

    For r = d the mixture is static (every block shares one mixing matrix).
    """
    if not 1 <= r <= d:
        raise MixtureError("require 1 <= r <= d")
    rng = _as_rng(seed)
    if soi_spec is None:
        soi_spec = SourceSpec(distribution="gg", alpha=0.1)
    profile = soi_spec.profile(T)
    bg_spec = SourceSpec(distribution="gaussian" if bg_kind == "gaussian" else "gg",
                         alpha=soi_spec.alpha)
    ctype = np.complex128 if field_kind == COMPLEX else np.float64

    w_rows = np.stack([_randn(rng, (r, d), field_kind) for _ in range(K)])

    mixing = np.zeros((K, T, d, d), dtype=ctype)
    sources = np.zeros((K, T, d, Nb), dtype=ctype)
    data = np.zeros((K, T, d, Nb), dtype=ctype)
    for k in range(K):
        static_W = None
        for t in range(T):
            if r == d:
                if static_W is None:
                    static_W = _draw_demixing(rng, d, w_rows[k].conj(), field_kind,
                                              cond_cap, max_redraws)
                W = static_W
            else:
                W = _draw_demixing(rng, d, w_rows[k].conj(), field_kind,
                                   cond_cap, max_redraws)
            A = np.linalg.inv(W)
            s = np.zeros((d, Nb), dtype=ctype)
            for j in range(d):
                spec = soi_spec if j < r else bg_spec
                raw = _draw_source(spec, Nb, field_kind, rng)
                var = profile[t] if j < r else 1.0
                s[j] = _center_scale(raw, var)
            mixing[k, t] = A
            sources[k, t] = s
            data[k, t] = A @ s

    gt = GroundTruth(mixing=mixing, sources=sources,
                     separating_rows=w_rows, r=r,
                     extra={"soi_profile": profile, "kind": "c1"})
    return BlockedMixture(data, field_kind), gt


def draw_c2_base_vectors(d: int, rng, field_kind: str = REAL):
    """Nested base pairs (w_i, a_i) of dimensions d, d-1, ..., 1 with w^H a = 1."""
    rng = _as_rng(rng)
    base = []
    for m in range(d, 0, -1):
        w = _randn(rng, m, field_kind)
        for _ in range(100):
            a = _randn(rng, m, field_kind)
            c = np.vdot(w, a)
            if np.abs(c) > 0.1:
                break
        else:
            raise SingularDrawError("could not draw a base pair with w^H a away from zero")
        base.append((w, a / c))
    return base


def generate_c2_mixture(d: int, T: int, Nb: int, lam: float, seed=0,
                        base_vectors=None,
                        source_spec: Optional[SourceSpec] = None,
                        field_kind: str = REAL,
                        cond_cap: float = DEFAULT_COND_CAP):
    """Mixture separable by recursive extraction (condition C2).

    De-mixing rows are built stage by stage: the stage-i separating vector
    (block-constant, dimension d-i+1) and per-block mixing vectors are the
    base pairs perturbed by N(0, lam^2) noise, and the projection recursion
    maps them back to the original d-dimensional domain.  Mixing matrices
    are the inverses of the assembled de-mixing matrices; lam = 0 gives a
    static mixture.
    """
    if lam < 0:
        raise MixtureError("variability coefficient lam must be >= 0")
    rng = _as_rng(seed)
    if base_vectors is None:
        base_vectors = draw_c2_base_vectors(d, rng, field_kind)
    if source_spec is None:
        source_spec = SourceSpec(distribution="gg", alpha=0.1)
    profile = source_spec.profile(T)
    ctype = np.complex128 if field_kind == COMPLEX else np.float64

    # perturbed stage vectors: w block-constant, a per block
    stage_w, stage_a = [], []
    for i in range(d):
        m = d - i
        w0, a0 = base_vectors[i]
        stage_w.append(w0 + lam * _randn(rng, m, field_kind))
        stage_a.append(np.stack([a0 + lam * _randn(rng, m, field_kind)
                                 for _ in range(T)]))

    demixing = np.zeros((T, d, d), dtype=ctype)
    for t in range(T):
        P = np.eye(d, dtype=ctype)
        for i in range(d):
            w_i = stage_w[i]
            demixing[t, i] = np.conj(P.conj().T @ w_i)
            if i == d - 1:
                break
            a_it = stage_a[i][t]
            drop = int(np.argmax(np.abs(stage_a[i].mean(axis=0))))
            E = np.delete(np.eye(d - i, dtype=ctype), drop, axis=0)
            Pi = E @ (np.eye(d - i, dtype=ctype) - np.outer(a_it, np.conj(w_i)))
            P = Pi @ P
        if np.linalg.cond(demixing[t]) > cond_cap:
            raise SingularDrawError(
                f"perturbation lam={lam:g} produced an ill-conditioned de-mixing matrix")

    mixing = np.zeros((1, T, d, d), dtype=ctype)
    sources = np.zeros((1, T, d, Nb), dtype=ctype)
    data = np.zeros((1, T, d, Nb), dtype=ctype)
    for t in range(T):
        A = np.linalg.inv(demixing[t])
        s = np.zeros((d, Nb), dtype=ctype)
        for j in range(d):
            s[j] = _center_scale(_draw_source(source_spec, Nb, field_kind, rng),
                                 profile[t])
        mixing[0, t] = A
        sources[0, t] = s
        data[0, t] = A @ s

    gt = GroundTruth(mixing=mixing, sources=sources,
                     separating_rows=stage_w[0][None, None, :], r=1,
                     extra={"kind": "c2", "lambda": lam,
                            "demixing": demixing,
                            "stage_w": stage_w, "stage_a": stage_a,
                            "base_vectors": base_vectors,
                            "soi_profile": profile})
    return BlockedMixture(data, field_kind), gt


# ---------------------------------------------------------------------------
# textual container
# ---------------------------------------------------------------------------

def save_mixture(path, mixture: BlockedMixture) -> None:
    """Write a mixture to the plain-text container format.

    Header line: ``K T d Nb field_kind``.  Then one line per channel with
    Nb decimal floats (real and imaginary parts interleaved for complex
    data), in (dataset, block, channel) row-major order.
    """
    with open(path, "w") as fh:
        fh.write(f"{mixture.K} {mixture.T} {mixture.d} {mixture.Nb} "
                 f"{mixture.field_kind}\n")
        for k in range(mixture.K):
            for t in range(mixture.T):
                for ch in range(mixture.d):
                    row = mixture.data[k, t, ch]
                    if mixture.field_kind == COMPLEX:
                        flat = np.empty(2 * row.size)
                        flat[0::2] = row.real
                        flat[1::2] = row.imag
                    else:
                        flat = row.real
                    fh.write(" ".join(repr(float(v)) for v in flat) + "\n")


def load_mixture(path) -> BlockedMixture:
    """Read a mixture written by :func:`save_mixture`."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise MixtureError("malformed mixture header")
        K, T, d, Nb = (int(v) for v in header[:4])
        field_kind = header[4]
        ctype = np.complex128 if field_kind == COMPLEX else np.float64
        data = np.zeros((K, T, d, Nb), dtype=ctype)
        for k in range(K):
            for t in range(T):
                for ch in range(d):
                    vals = np.array([float(v) for v in fh.readline().split()])
                    if field_kind == COMPLEX:
                        data[k, t, ch] = vals[0::2] + 1j * vals[1::2]
                    else:
                        data[k, t, ch] = vals
    return BlockedMixture(data, field_kind)
