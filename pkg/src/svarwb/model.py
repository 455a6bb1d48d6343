"""SVAR model objects and the deterministic maps between structural and
reduced-form parameters.

Conventions
-----------
Reduced form for regime p::

    y_t = b_p + B_p1 y_{t-1} + ... + B_pl y_{t-l} + u_t,   u_t ~ N(0, Sigma_p)

Orthogonal reduced-form parameterization::

    A_p0 = Q_p' Sigma_p,tr^{-1},   A_p+ = A_p0 B_p+

so the impact response is ``Sigma_tr @ Q`` and the horizon-h response is
``C_h @ Sigma_tr @ Q``. Rotation blocks are stored as arrays of shape
``(s, n, n)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    NonStationary,
    NonStationaryWarning,
    NotPositiveDefinite,
    SingularA0,
    ZeroVariance,
)

ORTHO_TOL = 1e-10
PD_RATIO = 1e-12
RCOND_MIN = 1e-12


@dataclass(frozen=True)
class ModelDims:
    n: int
    l: int
    s: int = 1

    def __post_init__(self):
        if self.n < 2 or self.l < 1 or self.s < 1:
            raise ValueError(f"invalid dimensions n={self.n}, l={self.l}, s={self.s}")

    @property
    def m(self) -> int:
        return self.n * self.l + 1


def lower_cholesky(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with a PD gate on the eigenvalue ratio."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise NotPositiveDefinite("covariance must be square")
    if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-14 * max(1.0, np.abs(sigma).max())):
        raise NotPositiveDefinite("covariance is not symmetric")
    sym = 0.5 * (sigma + sigma.T)
    try:
        chol = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Cholesky factorization failed") from exc
    eig = np.linalg.eigvalsh(sym)
    if eig[0] <= PD_RATIO * eig[-1]:
        raise NotPositiveDefinite(f"eigenvalue ratio {eig[0] / eig[-1]:.3e} below {PD_RATIO}")
    return chol


@dataclass(frozen=True, eq=False)
class ReducedFormRegime:
    """phi_p = (b_p, B_p1..B_pl, Sigma_p)."""

    intercept: np.ndarray
    lags: np.ndarray
    sigma: np.ndarray
    sigma_tr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        intercept = np.asarray(self.intercept, dtype=float).reshape(-1)
        lags = np.asarray(self.lags, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        n = intercept.shape[0]
        if lags.ndim == 2:
            lags = lags[None]
        if lags.ndim != 3 or lags.shape[1:] != (n, n) or sigma.shape != (n, n):
            raise ValueError("inconsistent reduced-form shapes")
        object.__setattr__(self, "intercept", intercept)
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "sigma_tr", lower_cholesky(sigma))

    @classmethod
    def from_b_plus(cls, b_plus: np.ndarray, sigma: np.ndarray) -> "ReducedFormRegime":
        """Build from B_p+ = [b_p, B_p1, ..., B_pl] (n x m)."""
        b_plus = np.asarray(b_plus, dtype=float)
        n, m = b_plus.shape
        l = (m - 1) // n
        if m != n * l + 1:
            raise ValueError(f"B_plus has {m} columns, not n*l+1")
        lags = b_plus[:, 1:].reshape(n, l, n).transpose(1, 0, 2)
        return cls(b_plus[:, 0], lags, sigma)

    @property
    def n(self) -> int:
        return self.intercept.shape[0]

    @property
    def l(self) -> int:
        return self.lags.shape[0]

    @property
    def b_plus(self) -> np.ndarray:
        return np.hstack([self.intercept[:, None]] + list(self.lags))

    def companion(self) -> np.ndarray:
        n, l = self.n, self.l
        comp = np.zeros((n * l, n * l))
        comp[:n, :] = np.hstack(list(self.lags))
        comp[n:, :-n] = np.eye(n * (l - 1))
        return comp

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.companion()))))

    def is_stationary(self) -> bool:
        return self.spectral_radius() < 1.0


@dataclass(frozen=True, eq=False)
class StructuralRegime:
    a0: np.ndarray
    a_plus: np.ndarray

    def __post_init__(self):
        a0 = np.asarray(self.a0, dtype=float)
        a_plus = np.asarray(self.a_plus, dtype=float)
        if a0.ndim != 2 or a0.shape[0] != a0.shape[1] or a_plus.shape[0] != a0.shape[0]:
            raise ValueError("inconsistent structural shapes")
        if 1.0 / np.linalg.cond(a0) < RCOND_MIN:
            raise SingularA0("A0 reciprocal condition number below 1e-12")
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "a_plus", a_plus)


@dataclass(frozen=True, eq=False)
class RegimeModel:
    dims: ModelDims
    regimes: tuple
    break_dates: tuple = ()

    def __post_init__(self):
        regimes = tuple(self.regimes)
        object.__setattr__(self, "regimes", regimes)
        object.__setattr__(self, "break_dates", tuple(int(b) for b in self.break_dates))
        if len(regimes) != self.dims.s:
            raise ValueError(f"expected {self.dims.s} regimes, got {len(regimes)}")
        for reg in regimes:
            if reg.n != self.dims.n or reg.l != self.dims.l:
                raise ValueError("regime dimensions do not match dims")
        if self.break_dates:
            if len(self.break_dates) != self.dims.s - 1:
                raise ValueError("need s-1 break dates")
            if any(b2 <= b1 for b1, b2 in zip(self.break_dates, self.break_dates[1:])):
                raise ValueError("break dates must be strictly increasing")

    @classmethod
    def from_regimes(cls, regimes: Sequence[ReducedFormRegime], break_dates=()) -> "RegimeModel":
        regimes = tuple(regimes)
        dims = ModelDims(regimes[0].n, regimes[0].l, len(regimes))
        return cls(dims, regimes, tuple(break_dates))

    def validate(self) -> list[int]:
        """Warn about non-stationary regimes; returns their indices."""
        bad = [p for p, reg in enumerate(self.regimes) if not reg.is_stationary()]
        if bad:
            warnings.warn(f"non-stationary regimes: {bad}", NonStationaryWarning, stacklevel=2)
        return bad


# ---------------------------------------------------------------- mappings

def haar_orthogonal(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal matrices via QR with sign-fixed R."""
    shape = (n, n) if size is None else (size, n, n)
    z = rng.standard_normal(shape)
    q, r = np.linalg.qr(z)
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    return q * d[..., None, :]


def check_orthogonal_block(Q, tol: float = ORTHO_TOL) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 2:
        Q = Q[None]
    n = Q.shape[-1]
    err = np.abs(np.swapaxes(Q, -1, -2) @ Q - np.eye(n)).max()
    if err > tol:
        raise ValueError(f"block is not orthogonal (error {err:.2e})")
    return Q


def structural_to_reduced(structural: Sequence[StructuralRegime]) -> list[ReducedFormRegime]:
    """B_p+ = A_p0^{-1} A_p+, Sigma_p = A_p0^{-1} A_p0^{-T}."""
    out = []
    for reg in structural:
        inv = np.linalg.inv(reg.a0)
        sigma = inv @ inv.T
        out.append(ReducedFormRegime.from_b_plus(inv @ reg.a_plus, 0.5 * (sigma + sigma.T)))
    return out


def reduced_to_structural(regime: ReducedFormRegime, Qp: np.ndarray) -> StructuralRegime:
    a0 = Qp.T @ np.linalg.inv(regime.sigma_tr)
    return StructuralRegime(a0, a0 @ regime.b_plus)


def recover_rotation(regime: ReducedFormRegime, a0: np.ndarray) -> np.ndarray:
    """Q_p with A_p0 = Q_p' Sigma_tr^{-1}, i.e. Q_p = Sigma_tr' A_p0'."""
    return regime.sigma_tr.T @ np.asarray(a0).T


def vma_coefficients(regime: ReducedFormRegime, max_h: int) -> np.ndarray:
    """C_0..C_max_h as an array of shape (max_h+1, n, n)."""
    n, l = regime.n, regime.l
    C = np.zeros((max_h + 1, n, n))
    C[0] = np.eye(n)
    for h in range(1, max_h + 1):
        acc = np.zeros((n, n))
        for i in range(1, min(h, l) + 1):
            acc += regime.lags[i - 1] @ C[h - i]
        C[h] = acc
    return C


def impulse_response(regime: ReducedFormRegime, Qp: np.ndarray, h: int) -> np.ndarray:
    return vma_coefficients(regime, h)[h] @ regime.sigma_tr @ Qp


def impulse_responses(regime: ReducedFormRegime, Qp: np.ndarray, max_h: int) -> np.ndarray:
    """IR^0..IR^max_h stacked as (max_h+1, n, n)."""
    return vma_coefficients(regime, max_h) @ (regime.sigma_tr @ Qp)


def long_run_multiplier(regime: ReducedFormRegime) -> np.ndarray:
    """(I - sum_i B_pi)^{-1}; raises NonStationary off the stationary region."""
    n = regime.n
    if not regime.is_stationary():
        raise NonStationary(f"spectral radius {regime.spectral_radius():.4f} >= 1")
    lhs = np.eye(n) - regime.lags.sum(axis=0)
    if 1.0 / np.linalg.cond(lhs) < RCOND_MIN:
        raise NonStationary("I - sum(B) is singular")
    return np.linalg.inv(lhs)


def cumulative_long_run(regime: ReducedFormRegime, Qp: np.ndarray) -> np.ndarray:
    return long_run_multiplier(regime) @ regime.sigma_tr @ Qp


def fev_kernel(regime: ReducedFormRegime, i: int, h: int) -> np.ndarray:
    """Upsilon_{p,i}^h: sum_k r_k' r_k / sum_k r_k r_k' with r_k = e_i' C_k Sigma_tr."""
    rows = vma_coefficients(regime, h)[:, i, :] @ regime.sigma_tr
    total = float(np.sum(rows * rows))
    if total < 1e-300:
        raise ZeroVariance(f"zero forecast-error variance for variable {i}")
    return rows.T @ rows / total


def fev_contribution(regime: ReducedFormRegime, Qp: np.ndarray, i: int, j: int, h: int) -> float:
    q = Qp[:, j]
    return float(q @ fev_kernel(regime, i, h) @ q)


def fev_decomposition(regime: ReducedFormRegime, Qp: np.ndarray, h: int) -> np.ndarray:
    """Share matrix with (i, j) = contribution of shock j to variable i."""
    n = regime.n
    out = np.empty((n, n))
    for i in range(n):
        kern = fev_kernel(regime, i, h)
        out[i] = np.einsum("kj,kl,lj->j", Qp, kern, Qp)
    return out
