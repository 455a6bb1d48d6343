"""Enumeration of admissible rotation blocks Q = (Q_1, ..., Q_s).

Three routes:

* ``enumerate_general``: multi-start damped Newton on the square system of
  equality restrictions plus Q_p'Q_p = I.
* ``enumerate_recursive``: column by column; each column lives in an
  s-dimensional null space and solves s quadrics lambda' B_p lambda = 1.
* ``enumerate_sequential``: column by column and regime by regime; each
  step is a scalar quadratic.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import model as mc
from .errors import (
    DegenerateNullSpace,
    NormalizationUndefined,
    NotSquareSystem,
    OrderingNotFound,
    RecursivePatternViolated,
    SolverBudgetExhausted,
)
from .restrictions import (
    RestrictionProgram,
    apply_normalization,
    inequality_satisfied,
    max_equality_residual,
)

EQ_TOL = 1e-8
DEDUP_TOL = 1e-6
VALUE_TOL = 1e-9
DISC_TOL = 1e-12


@dataclass
class SolverConfig:
    starts: int | None = None          # default 500 * s * n
    max_iter: int = 60
    tol: float = 1e-11
    dedup_tol: float = DEDUP_TOL
    batch: int = 1000
    strict: bool = False               # raise when no start converges
    quadric_starts: int = 400          # Newton starts for s >= 3 quadric systems


@dataclass
class RotationSet:
    solutions: list
    provenance: str
    complete: str = "exact"
    diagnostics: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.solutions)

    @property
    def empty(self) -> bool:
        return not self.solutions

    def regime_blocks(self, p: int, tol: float = DEDUP_TOL) -> list[np.ndarray]:
        """Distinct Q_p across solutions."""
        out = []
        for Q in self.solutions:
            if not any(np.abs(Q[p] - R).max() <= tol for R in out):
                out.append(Q[p])
        return out


# ----------------------------------------------------------- shared helpers

def _canonical_key(Q: np.ndarray):
    return tuple(np.round(Q.reshape(-1), 7))


def _finalize(program: RestrictionProgram, model: mc.RegimeModel, candidates,
              provenance: str, complete: str, dedup_tol: float = DEDUP_TOL,
              diagnostics=None) -> RotationSet:
    """Normalize, verify, dedup and sort candidate blocks."""
    kept = []
    mask = program.normalized_shocks
    for Q in candidates:
        Q = np.asarray(Q, dtype=float)
        if any(mask):
            try:
                Q = apply_normalization(model, Q, mask)
            except NormalizationUndefined:
                continue
        if np.abs(np.swapaxes(Q, 1, 2) @ Q - np.eye(program.n)).max() > mc.ORTHO_TOL:
            continue
        if max_equality_residual(program, model, Q) > EQ_TOL:
            continue
        ok, _ = inequality_satisfied(program, model, Q)
        if not ok:
            continue
        if any(np.abs(Q - R).max() <= dedup_tol for R in kept):
            continue
        kept.append(Q)
    kept.sort(key=_canonical_key)
    return RotationSet(kept, provenance, complete, diagnostics or {})


def _null_basis(M: np.ndarray, dim_expected: int, what: str) -> np.ndarray:
    rows, cols = M.shape
    if rows == 0:
        return np.eye(cols)
    u, sv, vt = np.linalg.svd(M)
    tol = (sv[0] if sv.size else 1.0) * max(rows, cols) * np.finfo(float).eps * 64
    rank = int(np.sum(sv > tol))
    if cols - rank != dim_expected:
        raise DegenerateNullSpace(f"{what}: null space has dimension {cols - rank}, expected {dim_expected}")
    return vt[rank:].T


def solve_unit_quadrics(Bt: np.ndarray, rng: np.random.Generator | None = None,
                        starts: int = 400) -> list[np.ndarray]:
    """All real lambda with lambda' Bt[p] lambda = 1 for p = 0..s-1.

    Bt has shape (s, s, s). Closed form for s <= 2; multi-start Newton
    otherwise. Raises DegenerateNullSpace for a continuum of solutions.
    """
    s = Bt.shape[0]
    scale = max(1.0, float(np.abs(Bt).max()))
    if s == 1:
        b = float(Bt[0, 0, 0])
        if b <= 0:
            return []
        r = 1.0 / np.sqrt(b)
        return [np.array([r]), np.array([-r])]
    if s == 2:
        D = Bt[1] - Bt[0]
        a, b, c = D[0, 0], 0.5 * (D[0, 1] + D[1, 0]), D[1, 1]
        if max(abs(a), abs(b), abs(c)) <= DISC_TOL * scale:
            raise DegenerateNullSpace("identical quadrics: continuum of solutions")
        A = 0.5 * (a + c)
        amp = np.hypot(0.5 * (a - c), b)
        delta = np.arctan2(b, 0.5 * (a - c))
        if amp <= DISC_TOL * scale:
            return []
        ratio = -A / amp
        if abs(ratio) > 1.0 + DISC_TOL:
            return []
        ratio = float(np.clip(ratio, -1.0, 1.0))
        acos = np.arccos(ratio)
        if abs(abs(ratio) - 1.0) <= DISC_TOL:
            angles = [0.5 * (delta + acos)]
        else:
            angles = [0.5 * (delta + acos), 0.5 * (delta - acos)]
        out = []
        for phi in angles:
            u = np.array([np.cos(phi), np.sin(phi)])
            den = float(u @ Bt[0] @ u)
            if den <= DISC_TOL * scale:
                continue
            lam = u / np.sqrt(den)
            out.extend([lam, -lam])
        return out
    return _quadrics_newton(Bt, rng or np.random.default_rng(0), starts)


def _quadrics_newton(Bt, rng, starts, tol=1e-12, max_iter=80):
    s = Bt.shape[0]
    Bs = 0.5 * (Bt + np.swapaxes(Bt, 1, 2))
    u = rng.standard_normal((starts, s))
    den = np.einsum("bi,ij,bj->b", u, Bs[0], u)
    lam = u / np.sqrt(np.maximum(den, 1e-300))[:, None]

    def resid(x):
        return np.einsum("bi,pij,bj->bp", x, Bs, x) - 1.0

    for _ in range(max_iter):
        F = resid(lam)
        J = 2.0 * np.einsum("pij,bj->bpi", Bs, lam)
        mu = 1e-10 * (1.0 + np.linalg.norm(F, axis=1))
        JtJ = np.swapaxes(J, 1, 2) @ J + mu[:, None, None] * np.eye(s)
        step = -np.linalg.solve(JtJ, np.einsum("bpi,bp->bi", J, F)[..., None])[..., 0]
        best = lam + step
        bestn = np.linalg.norm(resid(best), axis=1)
        for alpha in (0.5, 0.25, 0.1):
            trial = lam + alpha * step
            tn = np.linalg.norm(resid(trial), axis=1)
            better = tn < bestn
            best[better] = trial[better]
            bestn[better] = tn[better]
        lam = best
    ok = np.abs(resid(lam)).max(axis=1) < tol * 100
    out = []
    for x in lam[ok]:
        if not any(np.abs(x - y).max() < 1e-7 for y in out):
            out.append(x)
    return out


# ------------------------------------------------------------ general route

def _general_system(program, W):
    n, s = program.n, program.s
    nx = s * n * n
    # constant Jacobian rows of the linear part, x indexed by (p, k, r)
    lin_rows = []
    for k in range(n):
        for row in W[k]:
            J = np.zeros(nx)
            for p in range(s):
                J[p * n * n + k * n:p * n * n + (k + 1) * n] = row[p * n:(p + 1) * n]
            lin_rows.append(J)
    Jlin = np.array(lin_rows).reshape(len(lin_rows), nx)
    pairs = [(p, i, j) for p in range(s) for i in range(n) for j in range(i, n)]
    return Jlin, pairs


def _general_residual(X, Jlin, pairs, s, n):
    B = X.shape[0]
    Qc = X.reshape(B, s, n, n)     # [b, p, k, r] = q_{p,k}[r]
    lin = X @ Jlin.T
    P = np.array([p for p, _, _ in pairs])
    I = np.array([i for _, i, _ in pairs])
    Jn = np.array([j for _, _, j in pairs])
    dots = np.einsum("bcr,bcr->bc", Qc[:, P, I, :], Qc[:, P, Jn, :])
    dots -= (I == Jn).astype(float)
    return np.concatenate([lin, dots], axis=1)


def _general_jacobian(X, Jlin, pairs, s, n):
    B = X.shape[0]
    nx = X.shape[1]
    Qc = X.reshape(B, s, n, n)
    Jq = np.zeros((B, len(pairs), nx))
    for c, (p, i, j) in enumerate(pairs):
        oi = p * n * n + i * n
        oj = p * n * n + j * n
        Jq[:, c, oi:oi + n] += Qc[:, p, j, :]
        Jq[:, c, oj:oj + n] += Qc[:, p, i, :]
    return np.concatenate([np.broadcast_to(Jlin, (B,) + Jlin.shape), Jq], axis=1)


def enumerate_general(program: RestrictionProgram, model: mc.RegimeModel,
                      cfg: SolverConfig | None = None,
                      rng: np.random.Generator | None = None) -> RotationSet:
    """Multi-start damped Newton on the square polynomial system."""
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng() if rng is None else rng
    n, s = program.n, program.s
    if program.f_total != s * program.n_tilde:
        raise NotSquareSystem(
            f"{program.f_total} restrictions, a square system needs s*n(n-1)/2 = {s * program.n_tilde}")
    per = program.f_per_regime().sum(axis=1)
    if np.any(per < program.n_tilde):
        warnings.warn("per-regime restriction counts differ from n(n-1)/2", stacklevel=2)
    W = program.W(model)
    Jlin, pairs = _general_system(program, W)
    starts = cfg.starts or 500 * s * n
    found = []
    best_res = []
    done = 0
    while done < starts:
        B = min(cfg.batch, starts - done)
        Q0 = mc.haar_orthogonal(n, rng, size=B * s).reshape(B, s, n, n)
        X = np.swapaxes(Q0, 2, 3).reshape(B, -1).copy()
        X, res = _newton(X, Jlin, pairs, s, n, cfg)
        best_res.append(res)
        for x in X[res < cfg.tol]:
            Q = np.swapaxes(x.reshape(s, n, n), 1, 2)
            found.append(Q)
        done += B
    res_all = np.concatenate(best_res)
    hist, edges = np.histogram(np.log10(np.maximum(res_all, 1e-300)), bins=[-400, -11, -8, -4, 0, 400])
    diag = {"starts": starts, "converged": int(np.sum(res_all < cfg.tol)),
            "residual_histogram": dict(zip(["<1e-11", "1e-11..1e-8", "1e-8..1e-4", "1e-4..1", ">1"],
                                           hist.tolist()))}
    if cfg.strict and not found:
        raise SolverBudgetExhausted(f"no start converged out of {starts}", starts, diag["residual_histogram"])
    # raw dedup before normalization keeps the candidate list small
    raw = []
    for Q in found:
        if not any(np.abs(Q - R).max() <= cfg.dedup_tol for R in raw):
            raw.append(Q)
    diag["raw_solutions"] = len(raw)
    return _finalize(program, model, raw, "general_solver", "heuristic", cfg.dedup_tol, diag)


def _newton(X, Jlin, pairs, s, n, cfg):
    nx = X.shape[1]
    eye = np.eye(nx)
    F = _general_residual(X, Jlin, pairs, s, n)
    fn = np.linalg.norm(F, axis=1)
    for _ in range(cfg.max_iter):
        active = np.abs(F).max(axis=1) >= cfg.tol * 0.01
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Xa, Fa = X[idx], F[idx]
        J = _general_jacobian(Xa, Jlin, pairs, s, n)
        Jt = np.swapaxes(J, 1, 2)
        mu = 1e-12 + 1e-8 * np.linalg.norm(Fa, axis=1)
        step = -np.linalg.solve(Jt @ J + mu[:, None, None] * eye, (Jt @ Fa[..., None]))[..., 0]
        bestX = Xa + step
        bestF = _general_residual(bestX, Jlin, pairs, s, n)
        bestn = np.linalg.norm(bestF, axis=1)
        for alpha in (0.5, 0.25, 0.1, 0.03):
            tX = Xa + alpha * step
            tF = _general_residual(tX, Jlin, pairs, s, n)
            tn = np.linalg.norm(tF, axis=1)
            better = tn < bestn
            bestX[better], bestF[better], bestn[better] = tX[better], tF[better], tn[better]
        X[idx], F[idx], fn[idx] = bestX, bestF, bestn
    return X, np.abs(F).max(axis=1)


# ---------------------------------------------------------- recursive route

def _column_filter(program, k, q, norm_rows, L, tol=1e-10):
    """Normalization and single-column sign checks for column k (q: s x n)."""
    if program.normalized_shocks[k]:
        for p in range(program.s):
            if norm_rows[p, k] @ q[p] <= 0:
                return False
    if L[k].shape[0] and np.any(L[k] @ q.reshape(-1) < -tol):
        return False
    return True


def _assemble(program, cols):
    n, s = program.n, program.s
    Q = np.zeros((s, n, n))
    for j, c in enumerate(cols):
        Q[:, :, program.order[j]] = c
    return Q


def _leaf_cap(program):
    return 2 ** (program.s * program.n)


def enumerate_recursive(program: RestrictionProgram, model: mc.RegimeModel,
                        rng: np.random.Generator | None = None,
                        cfg: SolverConfig | None = None) -> RotationSet:
    """Column-by-column enumeration for recursively just-identified programs."""
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng(0) if rng is None else rng
    n, s = program.n, program.s
    for j in range(n):
        if program.f[program.order[j]] != s * (n - j - 1):
            raise RecursivePatternViolated(
                f"position {j}: f={program.f[program.order[j]]}, expected {s * (n - j - 1)}")
    W = program.W(model)
    L = program.sign_rows(model)
    norm_rows = program.normalization_rows(model)
    branches = [[]]
    for j in range(n):
        k = program.order[j]
        new = []
        for cols in branches:
            rows = [W[k]]
            for c in cols:
                for p in range(s):
                    r = np.zeros(s * n)
                    r[p * n:(p + 1) * n] = c[p]
                    rows.append(r[None])
            Gam = np.vstack(rows)
            b = _null_basis(Gam, s, f"column {j}")
            Bt = np.stack([b[p * n:(p + 1) * n].T @ b[p * n:(p + 1) * n] for p in range(s)])
            for lam in solve_unit_quadrics(Bt, rng, cfg.quadric_starts):
                q = (b @ lam).reshape(s, n)
                if _column_filter(program, k, q, norm_rows, L):
                    new.append(cols + [q])
        if len(new) > _leaf_cap(program):
            raise DegenerateNullSpace("branch count exceeds 2^(s n)")
        branches = new
    complete = "exact" if s <= 2 else "heuristic"
    return _finalize(program, model, [_assemble(program, c) for c in branches],
                     "recursive", complete, cfg.dedup_tol, {"leaves": len(branches)})


# --------------------------------------------------------- sequential route

def find_regime_ordering(program: RestrictionProgram, k: int, j: int):
    """Regime ordering for column k at position j, or None.

    Each row of R_k is attributed to the latest regime it touches; the
    ordering is valid when every regime receives exactly n-j-1 rows.
    """
    s, n = program.s, program.n
    need = n - j - 1
    regs = program.row_regimes[k]
    for perm in itertools.permutations(range(s)):
        pos = {p: i for i, p in enumerate(perm)}
        assign = [max(r, key=lambda p: pos[p]) if r else None for r in regs]
        if any(a is None for a in assign):
            continue
        counts = [assign.count(p) for p in range(s)]
        if all(c == need for c in counts):
            return perm, assign
    return None


def _scalar_quadratic(a, b, c):
    """Real roots of a z^2 + b z + c with near-double roots collapsed."""
    disc = b * b - 4 * a * c
    scale = max(b * b, abs(4 * a * c), 1.0)
    if disc < -DISC_TOL * scale:
        return []
    if abs(disc) <= DISC_TOL * scale:
        return [-b / (2 * a)]
    sq = np.sqrt(disc)
    # numerically stable pair
    t = -0.5 * (b + np.copysign(sq, b))
    z1 = t / a
    z2 = c / t if t != 0 else -z1
    return sorted([z1, z2])


def enumerate_sequential(program: RestrictionProgram, model: mc.RegimeModel,
                         rng: np.random.Generator | None = None,
                         cfg: SolverConfig | None = None) -> RotationSet:
    """Regime-by-regime enumeration for sequentially recursive programs."""
    cfg = cfg or SolverConfig()
    n, s = program.n, program.s
    plans = []
    for j in range(n):
        k = program.order[j]
        plan = find_regime_ordering(program, k, j)
        if plan is None:
            raise OrderingNotFound(f"no regime ordering for shock {k}")
        plans.append(plan)
    F = program.F_blocks(model)
    g = program.g
    L = program.sign_rows(model)
    norm_rows = program.normalization_rows(model)
    branches = [[]]
    for j in range(n):
        k = program.order[j]
        perm, assign = plans[j]
        Rk = program.R[k]
        new = []
        for cols in branches:
            partial = [{}]
            for p in perm:
                rows = [i for i, a in enumerate(assign) if a == p]
                nxt = []
                for done in partial:
                    Ft = [Rk[rows, p * g:(p + 1) * g] @ F[p]] if rows else []
                    ct = []
                    if rows:
                        acc = np.zeros(len(rows))
                        for r, qr in done.items():
                            acc -= Rk[rows, r * g:(r + 1) * g] @ F[r] @ qr
                        ct.append(acc)
                    for c in cols:
                        Ft.append(c[p][None])
                        ct.append(np.zeros(1))
                    Ft = np.vstack(Ft) if Ft else np.zeros((0, n))
                    ct = np.concatenate(ct) if ct else np.zeros(0)
                    alpha = _null_basis(Ft, 1, f"column {j}, regime {p}")[:, 0]
                    A = np.linalg.lstsq(Ft, ct, rcond=None)[0] if Ft.shape[0] else np.zeros(n)
                    for z in _scalar_quadratic(alpha @ alpha, 2 * A @ alpha, A @ A - 1.0):
                        q = A + alpha * z
                        if program.normalized_shocks[k] and norm_rows[p, k] @ q <= 0:
                            continue
                        d = dict(done)
                        d[p] = q
                        nxt.append(d)
                partial = nxt
            for d in partial:
                q = np.stack([d[p] for p in range(s)])
                if L[k].shape[0] and np.any(L[k] @ q.reshape(-1) < -1e-10):
                    continue
                new.append(cols + [q])
        if len(new) > _leaf_cap(program):
            raise DegenerateNullSpace("branch count exceeds 2^(s n)")
        branches = new
    return _finalize(program, model, [_assemble(program, c) for c in branches],
                     "sequential_recursive", "exact", cfg.dedup_tol, {"leaves": len(branches)})


def enumerate_rotations(program: RestrictionProgram, model: mc.RegimeModel, route: str = "auto",
                        cfg: SolverConfig | None = None,
                        rng: np.random.Generator | None = None) -> RotationSet:
    """Dispatch: sequential, then recursive, then the general solver."""
    if route == "general":
        return enumerate_general(program, model, cfg, rng)
    if route == "recursive":
        return enumerate_recursive(program, model, rng, cfg)
    if route == "sequential":
        return enumerate_sequential(program, model, rng, cfg)
    if route != "auto":
        raise ValueError(f"unknown route {route!r}")
    try:
        return enumerate_sequential(program, model, rng, cfg)
    except OrderingNotFound:
        pass
    try:
        return enumerate_recursive(program, model, rng, cfg)
    except RecursivePatternViolated:
        pass
    return enumerate_general(program, model, cfg, rng)


# -------------------------------------------------------------- functionals

@dataclass(frozen=True)
class Functional:
    """Scalar target eta(phi, Q_p): IR, CIR or FEV of ``variable`` to ``shock``."""

    kind: str
    variable: int
    shock: int

    def __post_init__(self):
        if self.kind not in ("IR", "CIR", "FEV"):
            raise ValueError(f"unknown functional kind {self.kind!r}")


def functional_rows(regime: mc.ReducedFormRegime, func: Functional, horizons) -> np.ndarray:
    """Rows r_h with eta_h = r_h @ q_j (IR, CIR); FEV handled separately."""
    horizons = np.asarray(horizons, dtype=int)
    if func.kind == "IR":
        C = mc.vma_coefficients(regime, int(horizons.max()))
        return (C[horizons] @ regime.sigma_tr)[:, func.variable, :]
    if func.kind == "CIR":
        row = (mc.long_run_multiplier(regime) @ regime.sigma_tr)[func.variable]
        return np.tile(row, (len(horizons), 1))
    raise ValueError("FEV is quadratic in q")


def functional_values(regime: mc.ReducedFormRegime, Qp: np.ndarray, func: Functional,
                      horizons, rows=None) -> np.ndarray:
    """eta over horizons for one or many Q_p (shape (..., n, n))."""
    Qp = np.asarray(Qp)
    q = Qp[..., :, func.shock]
    if func.kind == "FEV":
        kerns = np.stack([mc.fev_kernel(regime, func.variable, int(h)) for h in horizons])
        return np.einsum("...i,hij,...j->...h", q, kerns, q)
    rows = functional_rows(regime, func, horizons) if rows is None else rows
    return np.einsum("hi,...i->...h", rows, q)


@dataclass
class IdentifiedSet:
    functional: Functional
    horizons: tuple
    paths: list          # per regime: (M_p, H) eta paths of distinct Q_p

    def values(self, p: int, h_index: int) -> np.ndarray:
        """Sorted distinct values in regime p at horizon index h_index."""
        return _distinct_sorted(self.paths[p][:, h_index])

    def M(self, p: int, h_index: int | None = None) -> int:
        if h_index is None:
            return self.paths[p].shape[0]
        return len(self.values(p, h_index))

    @property
    def empty(self) -> bool:
        return all(P.shape[0] == 0 for P in self.paths)


def _distinct_sorted(v: np.ndarray, tol: float = VALUE_TOL) -> np.ndarray:
    v = np.sort(np.asarray(v, dtype=float))
    if v.size == 0:
        return v
    keep = np.concatenate([[True], np.diff(v) > tol])
    return v[keep]


def identified_set(rotations: RotationSet, model: mc.RegimeModel, func: Functional,
                   horizons) -> IdentifiedSet:
    horizons = tuple(int(h) for h in horizons)
    paths = []
    for p, reg in enumerate(model.regimes):
        blocks = rotations.regime_blocks(p)
        if not blocks:
            paths.append(np.zeros((0, len(horizons))))
            continue
        P = functional_values(reg, np.stack(blocks), func, horizons)
        uniq = []
        for row in P:
            if not any(np.abs(row - u).max() <= VALUE_TOL for u in uniq):
                uniq.append(row)
        paths.append(np.array(uniq))
    return IdentifiedSet(func, horizons, paths)
