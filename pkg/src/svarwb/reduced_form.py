"""Per-regime reduced-form estimation, likelihood and posterior draws."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import model as mc
from .errors import InsufficientObservations, NonPositiveScale, NotPositiveDefinite


@dataclass(frozen=True, eq=False)
class RegimeData:
    """T x n observations split at ``break_dates``.

    A break date b is the row index of the first observation of the new
    regime. Regime 1 starts at row ``lags``; later regimes take their
    initial conditions from the last rows of the previous regime.
    """

    observations: np.ndarray
    break_dates: tuple
    lags: int

    def __post_init__(self):
        y = np.asarray(self.observations, dtype=float)
        if y.ndim != 2:
            raise ValueError("observations must be a T x n matrix")
        object.__setattr__(self, "observations", y)
        object.__setattr__(self, "break_dates", tuple(int(b) for b in self.break_dates))
        if self.lags < 1:
            raise ValueError("lags must be >= 1")
        edges = (self.lags,) + self.break_dates + (y.shape[0],)
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("break dates must be strictly increasing and interior to the sample")
        n, m = self.n, self.m
        for p, (a, b) in enumerate(self.segments()):
            if b - a < m + n:
                raise InsufficientObservations(
                    f"regime {p} has {b - a} usable rows, needs at least {m + n}")

    @property
    def n(self) -> int:
        return self.observations.shape[1]

    @property
    def m(self) -> int:
        return self.n * self.lags + 1

    @property
    def s(self) -> int:
        return len(self.break_dates) + 1

    def segments(self) -> list[tuple[int, int]]:
        edges = (self.lags,) + self.break_dates + (self.observations.shape[0],)
        return list(zip(edges[:-1], edges[1:]))

    def design(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        """(Y, X) for regime p, X rows = [1, y_{t-1}', ..., y_{t-l}']."""
        a, b = self.segments()[p]
        y = self.observations
        Y = y[a:b]
        X = np.hstack([np.ones((b - a, 1))] + [y[a - i:b - i] for i in range(1, self.lags + 1)])
        return Y, X


@dataclass(frozen=True, eq=False)
class OlsRegime:
    coef: np.ndarray        # m x n, Y = X coef + U
    xtx: np.ndarray
    resid_cp: np.ndarray    # U'U
    T: int

    @property
    def dof(self) -> int:
        return self.T - self.coef.shape[0]


def _ols(Y, X) -> OlsRegime:
    xtx = X.T @ X
    coef = np.linalg.solve(xtx, X.T @ Y)
    U = Y - X @ coef
    return OlsRegime(coef, xtx, U.T @ U, Y.shape[0])


def ols_details(data: RegimeData) -> list[OlsRegime]:
    return [_ols(*data.design(p)) for p in range(data.s)]


def ols_fit(data: RegimeData) -> mc.RegimeModel:
    """Least squares per regime; Sigma = U'U / (T_p - m)."""
    regs = []
    for fit in ols_details(data):
        sigma = fit.resid_cp / fit.dof
        regs.append(mc.ReducedFormRegime.from_b_plus(fit.coef.T, 0.5 * (sigma + sigma.T)))
    return mc.RegimeModel(mc.ModelDims(data.n, data.lags, data.s), tuple(regs), data.break_dates)


def log_likelihood(data: RegimeData, model: mc.RegimeModel) -> float:
    """Gaussian log-likelihood conditional on the initial observations."""
    total = 0.0
    n = data.n
    for p, reg in enumerate(model.regimes):
        Y, X = data.design(p)
        U = Y - X @ reg.b_plus.T
        L = reg.sigma_tr
        z = np.linalg.solve(L, U.T)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        T = Y.shape[0]
        total += -0.5 * (T * n * np.log(2 * np.pi) + T * logdet + np.sum(z * z))
    return float(total)


@dataclass(frozen=True)
class PosteriorSpec:
    """Prior family and sampling budget.

    ``diffuse`` is the Jeffreys prior |Sigma|^{-(n+1)/2}. ``conjugate`` is a
    normal-inverse-Wishart prior B | Sigma ~ MN(b0, v0, Sigma),
    Sigma ~ IW(s0, nu0); missing hyperparameters default to b0 = 0,
    v0 = 10 I, s0 = I, nu0 = n + 2.
    """

    prior: str = "diffuse"
    draws: int = 1000
    seed: int = 0
    b0: np.ndarray | None = None
    v0: np.ndarray | None = None
    s0: np.ndarray | None = None
    nu0: float | None = None

    def __post_init__(self):
        if self.prior not in ("diffuse", "conjugate"):
            raise ValueError("prior must be 'diffuse' or 'conjugate'")
        if self.draws < 1:
            raise ValueError("draws must be positive")


@dataclass(frozen=True, eq=False)
class PosteriorParams:
    mean: np.ndarray    # m x n
    rowcov: np.ndarray  # m x m
    scale: np.ndarray   # n x n
    dof: float


def posterior_params(data: RegimeData, spec: PosteriorSpec) -> list[PosteriorParams]:
    out = []
    n, m = data.n, data.m
    for p in range(data.s):
        Y, X = data.design(p)
        fit = _ols(Y, X)
        if spec.prior == "diffuse":
            mean, rowcov = fit.coef, np.linalg.inv(fit.xtx)
            scale, dof = fit.resid_cp, float(fit.dof)
        else:
            b0 = np.zeros((m, n)) if spec.b0 is None else np.asarray(spec.b0, dtype=float)
            v0 = 10.0 * np.eye(m) if spec.v0 is None else np.asarray(spec.v0, dtype=float)
            s0 = np.eye(n) if spec.s0 is None else np.asarray(spec.s0, dtype=float)
            nu0 = n + 2.0 if spec.nu0 is None else float(spec.nu0)
            v0i = np.linalg.inv(v0)
            prec = v0i + fit.xtx
            rowcov = np.linalg.inv(prec)
            mean = rowcov @ (v0i @ b0 + X.T @ Y)
            scale = s0 + Y.T @ Y + b0.T @ v0i @ b0 - mean.T @ prec @ mean
            dof = nu0 + Y.shape[0]
        scale = 0.5 * (scale + scale.T)
        rowcov = 0.5 * (rowcov + rowcov.T)
        if dof <= n - 1:
            raise NonPositiveScale(f"regime {p}: posterior degrees of freedom {dof} <= n - 1")
        try:
            mc.lower_cholesky(scale)
        except NotPositiveDefinite as exc:
            raise NonPositiveScale(f"regime {p}: posterior scale matrix is not PD") from exc
        out.append(PosteriorParams(mean, rowcov, scale, dof))
    return out


@dataclass(frozen=True, eq=False)
class PosteriorDraw:
    index: int
    model: mc.RegimeModel
    log_density: float
    stationary: tuple = field(default=())


def _regime_logpdf(par: PosteriorParams, coef: np.ndarray, sigma: np.ndarray) -> float:
    lp = stats.invwishart.logpdf(sigma, df=par.dof, scale=par.scale)
    lp += stats.matrix_normal.logpdf(coef, mean=par.mean, rowcov=par.rowcov, colcov=sigma)
    return float(lp)


def iter_posterior_draws(data: RegimeData, spec: PosteriorSpec):
    """Seed-deterministic stream of posterior draws (one RNG per regime)."""
    params = posterior_params(data, spec)
    gens = [np.random.Generator(np.random.PCG64(ss))
            for ss in np.random.SeedSequence(spec.seed).spawn(data.s)]
    chol_row = [np.linalg.cholesky(par.rowcov) for par in params]
    dims = mc.ModelDims(data.n, data.lags, data.s)
    for k in range(spec.draws):
        regs, logd = [], 0.0
        for p, par in enumerate(params):
            gen = gens[p]
            sigma = np.atleast_2d(stats.invwishart.rvs(df=par.dof, scale=par.scale, random_state=gen))
            sigma = 0.5 * (sigma + sigma.T)
            z = gen.standard_normal(par.mean.shape)
            coef = par.mean + chol_row[p] @ z @ np.linalg.cholesky(sigma).T
            regs.append(mc.ReducedFormRegime.from_b_plus(coef.T, sigma))
            logd += _regime_logpdf(par, coef, sigma)
        model = mc.RegimeModel(dims, tuple(regs), data.break_dates)
        yield PosteriorDraw(k, model, logd, tuple(r.is_stationary() for r in regs))


def posterior_draws(data: RegimeData, spec: PosteriorSpec) -> list[PosteriorDraw]:
    return list(iter_posterior_draws(data, spec))
