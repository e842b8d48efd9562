"""Multinomial probit data model in base-category form.

Latent utilities are ``W_i ~ N_p(X_i beta, Sigma)`` and the observed choice is
``Y_i = 0`` when every component of ``W_i`` is negative, otherwise the (1-based)
index of the largest component.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .distributions import cholesky_spd

IDENTIFICATION_RTOL = 1e-8


class DegenerateTieError(ValueError):
    """Latent vector with a tied maximum (or a maximum of exactly zero)."""


class Identification(enum.Enum):
    FIRST_DIAGONAL = "first_diagonal"  # sigma^2_11 = 1
    TRACE = "trace"  # trace(Sigma) = p


@dataclass(frozen=True)
class MnpData:
    """Observed choices ``Y`` (n,) in {0..p} and reduced designs ``X`` (n, p, q)."""

    Y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        Y = np.asarray(self.Y)
        X = np.asarray(self.X, dtype=float)
        if Y.ndim != 1 or Y.size < 1:
            raise ValueError("Y must be a non-empty 1-d array")
        if not np.all(np.equal(np.mod(Y, 1), 0)):
            raise ValueError("Y must hold integer category labels")
        Y = Y.astype(np.int64)
        if X.ndim != 3 or X.shape[0] != Y.size or X.shape[1] < 1 or X.shape[2] < 1:
            raise ValueError(f"X must have shape (n, p, q) with n={Y.size}, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if Y.min() < 0 or Y.max() > X.shape[1]:
            raise ValueError(f"choices must lie in 0..{X.shape[1]}")
        Y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.X.shape[2]

    def mean(self, beta) -> np.ndarray:
        """Stacked ``X_i beta`` as an (n, p) array."""
        return self.X @ np.asarray(beta, dtype=float)


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the identified-scale prior.

    ``Sigma_tilde ~ Inv-Wishart(nu, alpha0_sq * S)`` on the expanded scale and
    ``beta ~ N_q(beta0, A)``.
    """

    nu: float
    S: np.ndarray
    alpha0_sq: float
    A: np.ndarray
    beta0: np.ndarray
    identification: Identification = Identification.FIRST_DIAGONAL

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        A = np.array(self.A, dtype=float)
        beta0 = np.array(self.beta0, dtype=float).reshape(-1)
        ident = Identification(self.identification)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError(f"S must be square, got shape {S.shape}")
        p = S.shape[0]
        if A.ndim != 2 or A.shape != (beta0.size, beta0.size):
            raise ValueError(f"A must be {beta0.size}x{beta0.size}, got {A.shape}")
        if not self.nu >= p:
            raise ValueError(f"nu must be at least p={p}, got {self.nu}")
        if not self.alpha0_sq > 0:
            raise ValueError(f"alpha0_sq must be positive, got {self.alpha0_sq}")
        cholesky_spd(S)
        cholesky_spd(A)
        if ident is Identification.FIRST_DIAGONAL and not np.isclose(S[0, 0], 1.0, rtol=1e-12, atol=0):
            raise ValueError(f"first-diagonal identification needs S[0, 0] = 1, got {S[0, 0]}")
        if ident is Identification.TRACE and not np.isclose(np.trace(S), p, rtol=1e-12, atol=0):
            raise ValueError(f"trace identification needs trace(S) = {p}, got {np.trace(S)}")
        for arr in (S, A, beta0):
            arr.setflags(write=False)
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "alpha0_sq", float(self.alpha0_sq))
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "identification", ident)

    @classmethod
    def default(cls, p: int, q: int, identification=Identification.FIRST_DIAGONAL) -> "PriorSpec":
        """nu = p, alpha0^2 = nu, S = I, A = 100 I, beta0 = 0."""
        return cls(nu=p, S=np.eye(p), alpha0_sq=float(p), A=100.0 * np.eye(q),
                   beta0=np.zeros(q), identification=identification)

    @property
    def p(self) -> int:
        return self.S.shape[0]

    @property
    def q(self) -> int:
        return self.beta0.size

    @property
    def S_tilde(self) -> np.ndarray:
        return self.alpha0_sq * self.S

    @property
    def A_inv(self) -> np.ndarray:
        return np.linalg.inv(self.A)


@dataclass
class ChainState:
    beta: np.ndarray
    Sigma: np.ndarray
    W: np.ndarray
    alpha: float = 1.0

    def copy(self) -> "ChainState":
        return ChainState(self.beta.copy(), self.Sigma.copy(), self.W.copy(), self.alpha)


def reduce_to_base(X0) -> np.ndarray:
    """Difference each of the first p rows of ``X0_i`` against its last row.

    ``X0`` has shape (n, p+1, q); the result has shape (n, p, q).
    """
    X0 = np.asarray(X0, dtype=float)
    if X0.ndim != 3 or X0.shape[1] < 2:
        raise ValueError(f"X0 must have shape (n, p+1, q) with p >= 1, got {X0.shape}")
    return X0[:, :-1, :] - X0[:, -1:, :]


def classify_rows(W) -> np.ndarray:
    """Choice implied by each row of ``W`` (shape (n, p))."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    top = W.max(axis=1)
    k = W.argmax(axis=1)
    # a tie below zero does not change the choice, so only positive maxima can be degenerate
    ties = ((W == top[:, None]).sum(axis=1) > 1) & (top > 0)
    if np.any(ties) or np.any(top == 0.0):
        bad = np.flatnonzero(ties | (top == 0.0))
        raise DegenerateTieError(f"degenerate latent rows {bad[:5].tolist()}: {W[bad[0]].tolist()}")
    return np.where(top < 0.0, 0, k + 1)


def classify(w) -> int:
    """Choice in {0..p} implied by one latent p-vector."""
    w = np.asarray(w, dtype=float).reshape(1, -1)
    return int(classify_rows(w)[0])


def check_constraint(Z, beta, s: float, data: MnpData) -> bool:
    """Whether the rescaled residuals ``Z_i + s X_i beta`` reproduce every observed choice.

    ``s`` is the candidate working-parameter value implied by a proposed
    expanded-scale covariance (its first standard deviation, or the root mean
    diagonal under trace identification).
    """
    if not s > 0:
        raise ValueError(f"scale must be positive, got {s}")
    shifted = np.asarray(Z, dtype=float) + s * data.mean(beta)
    return bool(np.array_equal(classify_rows(shifted), data.Y))


def feasible_scale_interval(Z, beta, data: MnpData):
    """Open interval ``(lo, hi)`` of scales s > 0 for which :func:`check_constraint` holds.

    Every choice condition is linear in s, ``a + b s > 0``, so the feasible set
    is an intersection of half-lines. Returns ``(nan, nan)`` when it is empty.
    """
    Z = np.asarray(Z, dtype=float)
    m = data.mean(beta)
    n, p = Z.shape
    rows = np.arange(n)
    chosen = data.Y > 0
    k = np.where(chosen, data.Y - 1, 0)
    # chosen rows: Z_ik - Z_ij > 0 for j != k and Z_ik > 0; outside option: -Z_ij > 0
    za = Z[rows, k][:, None] - Z
    zb = m[rows, k][:, None] - m
    za[rows, k] = Z[rows, k]
    zb[rows, k] = m[rows, k]
    a = np.where(chosen[:, None], za, -Z).ravel()
    b = np.where(chosen[:, None], zb, -m).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        cut = -a / b
    lo = np.max(cut[b > 0], initial=0.0)
    hi = np.min(cut[b < 0], initial=np.inf)
    if np.any((b == 0) & (a <= 0)) or not lo < hi:
        return float("nan"), float("nan")
    return float(lo), float(hi)


def identified_scale(Sigma_tilde, identification: Identification) -> float:
    """Working parameter alpha implied by an expanded-scale covariance."""
    ident = Identification(identification)
    if ident is Identification.FIRST_DIAGONAL:
        return float(np.sqrt(Sigma_tilde[0, 0]))
    return float(np.sqrt(np.trace(Sigma_tilde) / Sigma_tilde.shape[0]))


def satisfies_identification(Sigma, identification: Identification, rtol: float = IDENTIFICATION_RTOL) -> bool:
    ident = Identification(identification)
    if ident is Identification.FIRST_DIAGONAL:
        return abs(Sigma[0, 0] - 1.0) <= rtol
    p = Sigma.shape[0]
    return abs(np.trace(Sigma) - p) <= rtol * p


def init_state(data: MnpData, prior: PriorSpec) -> ChainState:
    """Deterministic starting point: beta = beta0, Sigma = I, alpha = 1, W_ik = +1 iff Y_i = k else -1."""
    W = -np.ones((data.n, data.p))
    chosen = data.Y > 0
    W[np.flatnonzero(chosen), data.Y[chosen] - 1] = 1.0
    return ChainState(beta=prior.beta0.copy(), Sigma=np.eye(data.p), W=W, alpha=1.0)
