"""Restriction declarations and their compiled matrix form.

Every restricted quantity is linear in one column of Q_p: the value of a
target for shock j in regime p is ``row(phi_p) @ Q_p[:, j]``, where the row
comes from one of three transforms::

    A0  : Sigma_tr^{-T}            (so the entry is A_p0[j, variable])
    IR h: C_h Sigma_tr             (response of variable to shock j)
    CIR : (I - sum B)^{-1} Sigma_tr

Equality restrictions are stacked into R_j (f_j x s*g) acting on the
regime-stacked column j of G. Indices are 0-based throughout the API.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import model as mc
from .errors import (
    InadmissibleTransform,
    IndexOutOfRange,
    NormalizationUndefined,
    RankDeficientR,
)

KINDS = ("A0", "IR", "CIR")
_KIND_RANK = {k: i for i, k in enumerate(KINDS)}
MARGIN_TOL = 1e-10


@dataclass(frozen=True)
class Block:
    kind: str
    horizon: int = 0

    def __post_init__(self):
        if self.kind not in _KIND_RANK:
            raise InadmissibleTransform(f"unknown transform kind {self.kind!r}")
        if self.kind != "IR":
            object.__setattr__(self, "horizon", 0)
        elif self.horizon < 0:
            raise InadmissibleTransform("negative horizon")

    @property
    def sort_key(self):
        return (_KIND_RANK[self.kind], self.horizon)

    def label(self) -> str:
        return f"IR{self.horizon}" if self.kind == "IR" else self.kind


@dataclass(frozen=True)
class Target:
    """A row of a transform block: ``kind`` at ``horizon`` for ``variable``."""

    kind: str
    variable: int
    horizon: int = 0

    @property
    def block(self) -> Block:
        return Block(self.kind, self.horizon)


def block_matrix(regime: mc.ReducedFormRegime, block: Block) -> np.ndarray:
    """F(phi_p) for one block (n x n); G block = F @ Q_p."""
    if block.kind == "A0":
        return np.linalg.inv(regime.sigma_tr).T
    if block.kind == "IR":
        return mc.vma_coefficients(regime, block.horizon)[block.horizon] @ regime.sigma_tr
    return mc.long_run_multiplier(regime) @ regime.sigma_tr


def target_row(regime: mc.ReducedFormRegime, target: Target) -> np.ndarray:
    return block_matrix(regime, target.block)[target.variable]


@dataclass(frozen=True)
class TransformSpec:
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, Block) else Block(*b) for b in self.blocks)
        if not blocks:
            raise InadmissibleTransform("transform needs at least one block")
        if len(set(blocks)) != len(blocks):
            raise InadmissibleTransform("duplicate transform blocks")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def canonical(cls, blocks: Iterable[Block]) -> "TransformSpec":
        return cls(tuple(sorted(set(blocks), key=lambda b: b.sort_key)))

    def g(self, n: int) -> int:
        return n * len(self.blocks)

    def row_index(self, target: Target, n: int) -> int:
        try:
            pos = self.blocks.index(target.block)
        except ValueError:
            raise InadmissibleTransform(
                f"target {target.block.label()} is not part of the transform") from None
        return pos * n + target.variable

    def matrix(self, regime: mc.ReducedFormRegime) -> np.ndarray:
        """Stacked F(phi_p) of shape (g, n)."""
        cache = {}
        out = []
        for b in self.blocks:
            if b.kind == "IR":
                if "C" not in cache:
                    hmax = max(x.horizon for x in self.blocks if x.kind == "IR")
                    cache["C"] = mc.vma_coefficients(regime, hmax)
                out.append(cache["C"][b.horizon] @ regime.sigma_tr)
            else:
                out.append(block_matrix(regime, b))
        return np.vstack(out)

    def labels(self) -> list[str]:
        return [b.label() for b in self.blocks]


# ------------------------------------------------------------ declarations

@dataclass(frozen=True)
class Term:
    regime: int
    target: Target
    coef: float = 1.0


@dataclass(frozen=True)
class EqualityRestriction:
    """sum_terms coef * [G_regime]_{target, shock} = 0."""

    shock: int
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


@dataclass(frozen=True)
class InequalityRestriction:
    """direction * sum_terms coef * value >= 0 (direction +1 or -1)."""

    shock: int
    terms: tuple
    direction: int = 1
    kind: str = "sign"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.kind not in ("sign", "ranking"):
            raise ValueError("kind must be 'sign' or 'ranking'")


@dataclass(frozen=True)
class FevRestriction:
    """lower <= sum_p w_p FEV_p(i, j, h) - sum_p w2_p FEV_p(i, r, h2) <= upper."""

    variable: int
    shock: int
    horizon: int
    weights: tuple
    other_shock: int | None = None
    other_weights: tuple | None = None
    other_horizon: int | None = None
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.other_weights is not None:
            object.__setattr__(self, "other_weights", tuple(float(w) for w in self.other_weights))
        if self.other_horizon is None:
            object.__setattr__(self, "other_horizon", self.horizon)


def zero(shock: int, target: Target, regime: int = 0) -> EqualityRestriction:
    return EqualityRestriction(shock, (Term(regime, target, 1.0),))


def equal_across(shock: int, target: Target, regimes=(0, 1)) -> EqualityRestriction:
    p1, p2 = regimes
    return EqualityRestriction(shock, (Term(p1, target, 1.0), Term(p2, target, -1.0)))


def sign(shock: int, target: Target, regime: int = 0, direction: int = 1) -> InequalityRestriction:
    return InequalityRestriction(shock, (Term(regime, target, 1.0),), direction, "sign")


def ranking(shock: int, terms: Sequence[Term], direction: int = 1) -> InequalityRestriction:
    return InequalityRestriction(shock, tuple(terms), direction, "ranking")


# --------------------------------------------------------------- compiling

def rref_null_basis(R: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Null-space basis of R built from the free variables of its RREF.

    Column k of the result has a one at the k-th free variable, zeros at the
    other free variables and the implied values at pivot positions.
    """
    R = np.array(R, dtype=float)
    rows, cols = R.shape
    A = R.copy()
    pivots = []
    r = 0
    scale = max(1.0, np.abs(A).max()) if A.size else 1.0
    for c in range(cols):
        if r >= rows:
            break
        p = r + int(np.argmax(np.abs(A[r:, c])))
        if abs(A[p, c]) <= tol * scale:
            continue
        A[[r, p]] = A[[p, r]]
        A[r] /= A[r, c]
        for i in range(rows):
            if i != r:
                A[i] -= A[i, c] * A[r]
        pivots.append(c)
        r += 1
    free = [c for c in range(cols) if c not in pivots]
    basis = np.zeros((cols, len(free)))
    for k, c in enumerate(free):
        basis[c, k] = 1.0
        for i, pc in enumerate(pivots):
            basis[pc, k] = -A[i, c]
    return basis


def orthonormalize(basis: np.ndarray) -> np.ndarray:
    """Gram-Schmidt in column order (QR with positive R diagonal)."""
    if basis.shape[1] == 0:
        return basis.copy()
    q, r = np.linalg.qr(basis)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def matrix_rank(M: np.ndarray, tol: float | None = None) -> int:
    """Rank with threshold sigma_max * max(dims) * eps * 64 unless given."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    if tol is None:
        tol = sv[0] * max(M.shape) * np.finfo(float).eps * 64
    return int(np.sum(sv > tol))


@dataclass(frozen=True, eq=False)
class RestrictionProgram:
    n: int
    s: int
    transform: TransformSpec
    equalities: tuple
    inequalities: tuple
    fevs: tuple
    R: tuple                 # per original shock, f_k x s*g
    S: tuple                 # per original shock, s*g x tau_k, orthonormal
    S_raw: tuple             # unnormalized RREF bases (reporting and fixtures)
    order: tuple             # internal position -> original shock
    row_regimes: tuple       # per shock, per row: frozenset of regimes touched
    normalization: str = "diag"
    normalized_shocks: tuple = field(default=())

    @property
    def g(self) -> int:
        return self.transform.g(self.n)

    @property
    def f(self) -> tuple:
        return tuple(r.shape[0] for r in self.R)

    @property
    def f_total(self) -> int:
        return int(sum(self.f))

    @property
    def tau(self) -> tuple:
        return tuple(s.shape[1] for s in self.S)

    @property
    def n_tilde(self) -> int:
        return self.n * (self.n - 1) // 2

    def R_star(self, p: int, k: int) -> np.ndarray:
        g = self.g
        return self.R[k][:, p * g:(p + 1) * g]

    def S_star(self, p: int, k: int) -> np.ndarray:
        g = self.g
        return self.S[k][p * g:(p + 1) * g, :]

    def f_per_regime(self) -> np.ndarray:
        """(s, n) counts of restriction rows touching each regime, per shock."""
        out = np.zeros((self.s, self.n), dtype=int)
        for k in range(self.n):
            for regs in self.row_regimes[k]:
                for p in regs:
                    out[p, k] += 1
        return out

    def is_cross_regime(self, k: int) -> bool:
        return any(len(regs) > 1 for regs in self.row_regimes[k])

    def has_sign(self, k: int) -> bool:
        return any(r.shock == k for r in self.inequalities)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "s": self.s,
            "transform": self.transform.labels(),
            "f": list(self.f),
            "f_total": self.f_total,
            "tau": list(self.tau),
            "order": list(self.order),
            "f_per_regime": self.f_per_regime().tolist(),
            "normalization": self.normalization,
        }

    # model-dependent pieces ------------------------------------------
    def F_blocks(self, model: mc.RegimeModel) -> np.ndarray:
        """(s, g, n) stack of F(phi_p), so that G_p = F_p @ Q_p."""
        return np.stack([self.transform.matrix(reg) for reg in model.regimes])

    def W(self, model: mc.RegimeModel, F=None) -> list[np.ndarray]:
        """Per shock k: f_k x (s*n) matrix acting on (q_1k; ...; q_sk)."""
        F = self.F_blocks(model) if F is None else F
        return [np.hstack([self.R_star(p, k) @ F[p] for p in range(self.s)]) for k in range(self.n)]

    def sign_rows(self, model: mc.RegimeModel) -> list[np.ndarray]:
        """Per shock k: (r_k x s*n) so that margins = L @ (q_1k; ...; q_sk)."""
        n, s = self.n, self.s
        cache = {}

        def row(p, tgt):
            key = (p, tgt)
            if key not in cache:
                cache[key] = target_row(model.regimes[p], tgt)
            return cache[key]

        out = []
        for k in range(n):
            rows = []
            for ineq in self.inequalities:
                if ineq.shock != k:
                    continue
                v = np.zeros(s * n)
                for t in ineq.terms:
                    v[t.regime * n:(t.regime + 1) * n] += ineq.direction * t.coef * row(t.regime, t.target)
                rows.append(v)
            out.append(np.array(rows).reshape(len(rows), s * n))
        return out

    def normalization_rows(self, model: mc.RegimeModel) -> np.ndarray:
        """(s, n, n): [p, k] is the row with diag(A_p0)[k] = row @ q_pk."""
        return np.stack([np.linalg.inv(reg.sigma_tr).T for reg in model.regimes])


def _check_index(name: str, value: int, bound: int):
    if not 0 <= value < bound:
        raise IndexOutOfRange(f"{name}={value} out of range [0, {bound})")


def compile_restrictions(declarations: Sequence, n: int, s: int = 1,
                         transform: TransformSpec | Sequence | None = None,
                         normalization: str = "diag") -> RestrictionProgram:
    """Compile declarations into R_j, S_j and the evaluators.

    ``transform`` defaults to the canonical ordering A0, IR(h) ascending,
    CIR of the blocks referenced by equality restrictions.
    """
    if normalization not in ("diag", "none"):
        raise ValueError("normalization must be 'diag' or 'none'")
    eqs, ineqs, fevs = [], [], []
    for d in declarations:
        if isinstance(d, EqualityRestriction):
            eqs.append(d)
        elif isinstance(d, InequalityRestriction):
            ineqs.append(d)
        elif isinstance(d, FevRestriction):
            fevs.append(d)
        else:
            raise TypeError(f"unknown declaration {d!r}")

    for d in eqs + ineqs:
        _check_index("shock", d.shock, n)
        if not d.terms:
            raise ValueError("restriction without terms")
        for t in d.terms:
            _check_index("regime", t.regime, s)
            _check_index("variable", t.target.variable, n)
            t.target.block  # validates kind and horizon
    for d in fevs:
        _check_index("variable", d.variable, n)
        _check_index("shock", d.shock, n)
        if len(d.weights) != s:
            raise ValueError("FEV weights need one entry per regime")
        if d.other_shock is not None:
            _check_index("other_shock", d.other_shock, n)
            if d.other_weights is None or len(d.other_weights) != s:
                raise ValueError("FEV other_weights need one entry per regime")
        if d.horizon < 0 or d.other_horizon < 0:
            raise IndexOutOfRange("negative FEV horizon")
        if d.lower > d.upper:
            raise ValueError("FEV lower bound exceeds upper bound")

    if transform is None:
        blocks = {t.target.block for d in eqs for t in d.terms}
        transform = TransformSpec.canonical(blocks or {Block("A0")})
    elif not isinstance(transform, TransformSpec):
        transform = TransformSpec(tuple(transform))
    g = transform.g(n)

    R, S, S_raw, row_regimes = [], [], [], []
    for k in range(n):
        rows, regs = [], []
        for d in eqs:
            if d.shock != k:
                continue
            v = np.zeros(s * g)
            for t in d.terms:
                v[t.regime * g + transform.row_index(t.target, n)] += t.coef
            rows.append(v)
            regs.append(frozenset(p for p in range(s)
                                  if np.any(v[p * g:(p + 1) * g] != 0)))
        Rk = np.array(rows).reshape(len(rows), s * g)
        if Rk.shape[0] and matrix_rank(Rk) < Rk.shape[0]:
            raise RankDeficientR(f"restrictions on shock {k} are linearly dependent")
        basis = rref_null_basis(Rk) if Rk.shape[0] else np.eye(s * g)
        R.append(Rk)
        S_raw.append(basis)
        S.append(orthonormalize(basis))
        row_regimes.append(tuple(regs))

    f = [r.shape[0] for r in R]
    order = tuple(sorted(range(n), key=lambda k: -f[k]))
    signed = {d.shock for d in ineqs}
    if normalization == "diag":
        normalized = tuple(k not in signed for k in range(n))
    else:
        normalized = (False,) * n
    return RestrictionProgram(
        n=n, s=s, transform=transform, equalities=tuple(eqs), inequalities=tuple(ineqs),
        fevs=tuple(fevs), R=tuple(R), S=tuple(S), S_raw=tuple(S_raw), order=order,
        row_regimes=tuple(row_regimes), normalization=normalization,
        normalized_shocks=normalized)


# -------------------------------------------------------------- evaluation

def evaluate_G(program: RestrictionProgram, model: mc.RegimeModel, Q) -> np.ndarray:
    """Stacked (s*g x n) matrix whose block p is F(phi_p) @ Q_p."""
    Q = np.asarray(Q, dtype=float).reshape(program.s, program.n, program.n)
    F = program.F_blocks(model)
    return np.vstack([F[p] @ Q[p] for p in range(program.s)])


def equality_residual(program: RestrictionProgram, model: mc.RegimeModel, Q) -> list[np.ndarray]:
    """Per original shock k: R_k @ G @ e_k."""
    G = evaluate_G(program, model, Q)
    return [program.R[k] @ G[:, k] for k in range(program.n)]


def max_equality_residual(program, model, Q) -> float:
    res = equality_residual(program, model, Q)
    return max((float(np.abs(r).max()) for r in res if r.size), default=0.0)


def fev_value(fev: FevRestriction, model: mc.RegimeModel, Q) -> float:
    total = 0.0
    for p, reg in enumerate(model.regimes):
        if fev.weights[p]:
            total += fev.weights[p] * mc.fev_contribution(reg, Q[p], fev.variable, fev.shock, fev.horizon)
        if fev.other_shock is not None and fev.other_weights[p]:
            total -= fev.other_weights[p] * mc.fev_contribution(
                reg, Q[p], fev.variable, fev.other_shock, fev.other_horizon)
    return total


def diag_a0(model: mc.RegimeModel, Q) -> np.ndarray:
    """(s, n) array of diag(Q_p' Sigma_p,tr^{-1})."""
    Q = np.asarray(Q, dtype=float)
    return np.stack([np.diag(Q[p].T @ np.linalg.inv(reg.sigma_tr))
                     for p, reg in enumerate(model.regimes)])


def inequality_satisfied(program: RestrictionProgram, model: mc.RegimeModel, Q,
                         tol: float = MARGIN_TOL) -> tuple[bool, dict]:
    """Check sign/ranking, FEV bounds and the normalization rule."""
    n, s = program.n, program.s
    Q = np.asarray(Q, dtype=float).reshape(s, n, n)
    L = program.sign_rows(model)
    sign_margins = []
    for k in range(n):
        if L[k].shape[0]:
            sign_margins.extend((L[k] @ Q[:, :, k].reshape(-1)).tolist())
    fev_values = [fev_value(d, model, Q) for d in program.fevs]
    fev_margins = [min(v - d.lower, d.upper - v) for v, d in zip(fev_values, program.fevs)]
    diag = diag_a0(model, Q)
    mask = np.array(program.normalized_shocks, dtype=bool)
    norm_margins = diag[:, mask].reshape(-1).tolist()
    ok = (all(m >= -tol for m in sign_margins)
          and all(m >= -tol for m in fev_margins)
          and all(m > 0 for m in norm_margins))
    return ok, {"sign": sign_margins, "fev": fev_margins, "fev_values": fev_values,
                "normalization": norm_margins}


def apply_normalization(model: mc.RegimeModel, Q, shocks: Sequence[bool] | None = None) -> np.ndarray:
    """Flip column signs so that diag(A_p0) > 0 for the selected shocks."""
    Q = np.array(Q, dtype=float)
    if Q.ndim == 2:
        Q = Q[None]
    s, n, _ = Q.shape
    mask = np.ones(n, dtype=bool) if shocks is None else np.asarray(shocks, dtype=bool)
    diag = diag_a0(model, Q)
    for p in range(s):
        for k in np.flatnonzero(mask):
            if diag[p, k] == 0.0:
                raise NormalizationUndefined(f"diag(A0) entry ({p}, {k}) is exactly zero")
            if diag[p, k] < 0:
                Q[p][:, k] *= -1.0
    return Q
