"""Forward simulation of an SVAR with exogenous breaks."""
from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from . import model as mc
from .errors import NonStationaryDGP


def simulate_reduced(regimes: Sequence[mc.ReducedFormRegime], T: int, break_dates: Sequence[int],
                     rng: np.random.Generator, burn_in: int = 200) -> np.ndarray:
    """T x n sample; u_t = Sigma_p,tr eps_t with eps_t standard normal.

    Starts from zeros, runs ``burn_in`` periods under regime 1 and discards
    them. Row t of the output belongs to regime p when
    break_dates[p-1] <= t < break_dates[p].
    """
    regimes = list(regimes)
    break_dates = [int(b) for b in break_dates]
    if len(break_dates) != len(regimes) - 1:
        raise ValueError("need one break date fewer than regimes")
    edges_ok = all(b1 < b2 for b1, b2 in zip([0] + break_dates, break_dates + [T]))
    if not edges_ok:
        raise ValueError("break dates must be increasing and inside the sample")
    bad = [p for p, r in enumerate(regimes) if not r.is_stationary()]
    if bad:
        warnings.warn(f"non-stationary DGP regimes: {bad}", NonStationaryDGP, stacklevel=2)
    n, l = regimes[0].n, regimes[0].l
    total = burn_in + T
    eps = rng.standard_normal((total, n))
    y = np.zeros((total + l, n))
    edges = [burn_in + b for b in break_dates]
    for t in range(total):
        p = int(np.searchsorted(edges, t, side="right"))
        reg = regimes[p]
        acc = reg.intercept + reg.sigma_tr @ eps[t]
        for i in range(l):
            acc = acc + reg.lags[i] @ y[l + t - 1 - i]
        y[l + t] = acc
    return y[l + burn_in:]


def simulate_structural(structural: Sequence[mc.StructuralRegime], T: int, break_dates: Sequence[int],
                        rng: np.random.Generator, burn_in: int = 200) -> np.ndarray:
    """Simulate A_p0 y_t = A_p+ x_t + eps_t by way of its reduced form.

    The reduced-form shocks are A_p0^{-1} eps_t; they have the same law as
    Sigma_p,tr eps_t, which is what ``simulate_reduced`` draws.
    """
    return simulate_reduced(mc.structural_to_reduced(structural), T, break_dates, rng, burn_in)
