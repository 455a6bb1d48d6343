"""Order and rank conditions for local identification.

Shock positions j below are internal: position j refers to the original
shock ``program.order[j]`` (shocks sorted by decreasing restriction count).
theta is a list indexed by internal position; theta[j] has length
tau of that shock.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as mc
from .errors import RecursiveSchemeUnavailable
from .restrictions import RestrictionProgram, evaluate_G, matrix_rank

DEFAULT_DRAWS = 10_000
RANK_FACTOR = 64


# ------------------------------------------------------------ skew machinery

def skew_basis(n: int) -> np.ndarray:
    """D_n (n^2 x n(n-1)/2): vec(H) = D_n h with H skew-symmetric.

    Columns run over the strict lower triangle in column-major order; column
    (i, j), i > j, has +1 at vec position (i, j) and -1 at (j, i).
    """
    cols = [(i, j) for j in range(n) for i in range(j + 1, n)]
    D = np.zeros((n * n, len(cols)))
    for c, (i, j) in enumerate(cols):
        D[j * n + i, c] = 1.0
        D[i * n + j, c] = -1.0
    return D


def skew_from_vector(h: np.ndarray, n: int) -> np.ndarray:
    return (skew_basis(n) @ h).reshape(n, n, order="F")


def t_tilde(n: int, s: int) -> np.ndarray:
    """T_{n,s} = [I_s kron e_1'; ...; I_s kron e_n'] (sn x sn)."""
    T = np.zeros((s * n, s * n))
    for j in range(n):
        for p in range(s):
            T[j * s + p, p * n + j] = 1.0
    return T


def t_double(n: int, s: int) -> np.ndarray:
    """(T_{n,s} kron I_n)(I_s kron D_n), shape (s n^2) x (s n(n-1)/2)."""
    return np.kron(t_tilde(n, s), np.eye(n)) @ np.kron(np.eye(s), skew_basis(n))


# --------------------------------------------------------------- V matrices

def v_block(program: RestrictionProgram, j: int, p: int, k: int) -> np.ndarray:
    """V_{j,p,k} = R*_{p,j} S*_{p,k} for internal positions j, k."""
    oj, ok = program.order[j], program.order[k]
    return program.R_star(p, oj) @ program.S_star(p, ok)


def draw_theta(program: RestrictionProgram, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.standard_normal(program.tau[k]) for k in program.order]


def build_Vj(program: RestrictionProgram, theta, j: int) -> np.ndarray:
    """V_j(theta): f_j x s(n-j-1), regime-major column blocks."""
    cols = []
    for p in range(program.s):
        for k in range(j + 1, program.n):
            cols.append(v_block(program, j, p, k) @ theta[k])
    fj = program.f[program.order[j]]
    if not cols:
        return np.zeros((fj, 0))
    return np.column_stack(cols)


def build_Vtilde_j(program: RestrictionProgram, theta, j: int) -> np.ndarray:
    """V~_j(theta): f_j x sn, columns k = 1..n for every regime."""
    cols = [v_block(program, j, p, k) @ theta[k]
            for p in range(program.s) for k in range(program.n)]
    return np.column_stack(cols).reshape(program.f[program.order[j]], program.s * program.n)


def build_Vtilde(program: RestrictionProgram, theta) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-position V~_j and their block diagonal (f x s n^2)."""
    blocks = [build_Vtilde_j(program, theta, j) for j in range(program.n)]
    f = program.f_total
    sn = program.s * program.n
    full = np.zeros((f, sn * program.n))
    r = 0
    for j, b in enumerate(blocks):
        full[r:r + b.shape[0], j * sn:(j + 1) * sn] = b
        r += b.shape[0]
    return blocks, full


def build_Vtt(program: RestrictionProgram, theta) -> np.ndarray:
    """V~(theta) T (f x s n(n-1)/2)."""
    return build_Vtilde(program, theta)[1] @ t_double(program.n, program.s)


# -------------------------------------------------------- batched kernels

class _VtildeKernel:
    """Precomputed V_{j,p,k} blocks for fast batched assembly."""

    def __init__(self, program: RestrictionProgram):
        self.program = program
        n, s = program.n, program.s
        self.blocks = [[[v_block(program, j, p, k) for k in range(n)] for p in range(s)]
                       for j in range(n)]
        self.T = t_double(n, s)

    def draw(self, rng, size):
        pr = self.program
        return [rng.standard_normal((size, pr.tau[k])) for k in pr.order]

    def vj(self, theta, j):
        pr = self.program
        size = theta[0].shape[0]
        fj = pr.f[pr.order[j]]
        cols = [np.einsum("ft,bt->bf", self.blocks[j][p][k], theta[k])
                for p in range(pr.s) for k in range(j + 1, pr.n)]
        if not cols:
            return np.zeros((size, fj, 0))
        return np.stack(cols, axis=2)

    def vtt(self, theta):
        pr = self.program
        n, s = pr.n, pr.s
        size = theta[0].shape[0]
        sn = s * n
        full = np.zeros((size, pr.f_total, sn * n))
        r = 0
        for j in range(n):
            fj = pr.f[pr.order[j]]
            if fj == 0:
                continue
            for p in range(s):
                for k in range(n):
                    col = j * sn + p * n + k
                    full[:, r:r + fj, col] = np.einsum("ft,bt->bf", self.blocks[j][p][k], theta[k])
            r += fj
        return full @ self.T


def batched_rank(M: np.ndarray) -> np.ndarray:
    """Ranks of a (B, r, c) stack with the default relative threshold."""
    B, r, c = M.shape
    if r == 0 or c == 0:
        return np.zeros(B, dtype=int)
    sv = np.linalg.svd(M, compute_uv=False)
    top = sv[:, :1]
    tol = top * max(r, c) * np.finfo(float).eps * RANK_FACTOR
    ranks = np.sum(sv > tol, axis=1)
    ranks[top[:, 0] == 0.0] = 0
    return ranks


# ------------------------------------------------------------------ verdicts

@dataclass
class IdentificationVerdict:
    order_ok: bool
    f: int
    required: int
    recursive_flags: list
    recursive_applicable: bool
    shock_results: list = field(default_factory=list)
    global_rank: int | None = None
    global_required: int = 0
    verdict: str = ""
    route: str = ""
    partial: list = field(default_factory=list)
    draws_used: int = 0
    n_draws: int = 0

    @property
    def identified(self) -> bool:
        return self.verdict == "identified"

    def message(self) -> str:
        if not self.order_ok:
            return f"order condition fails: f={self.f} < s·ñ={self.required}"
        if self.verdict == "identified":
            return f"identified ({self.route} route)"
        msg = f"not identified after N={self.n_draws:,}"
        if self.partial:
            msg += "; identified shocks: " + ", ".join(str(k + 1) for k in self.partial)
        return msg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["message"] = self.message()
        return d


def order_condition(program: RestrictionProgram) -> tuple[bool, int, int]:
    required = program.s * program.n_tilde
    return program.f_total >= required, program.f_total, required


def recursive_order_check(program: RestrictionProgram) -> list[bool]:
    """Per internal position j: f_j >= s(n-j) (1-based j)."""
    n, s = program.n, program.s
    return [program.f[program.order[j]] >= s * (n - j - 1) for j in range(n)]


def _new_verdict(program) -> IdentificationVerdict:
    ok, f, req = order_condition(program)
    flags = recursive_order_check(program)
    return IdentificationVerdict(order_ok=ok, f=f, required=req, recursive_flags=flags,
                                 recursive_applicable=all(flags),
                                 global_required=req)


def _run_recursive(program, N, rng, upto=None, chunk=1000):
    """Best rank per position j <= upto over up to N draws; stops when all full."""
    n, s = program.n, program.s
    upto = n - 1 if upto is None else upto
    need = [s * (n - j - 1) for j in range(n)]
    best = [0] * n
    kern = _VtildeKernel(program)
    used = 0
    positions = [j for j in range(min(upto, n - 1))]
    while used < N:
        size = min(chunk, N - used) if used else 1
        theta = kern.draw(rng, size)
        full = np.ones(size, dtype=bool)
        for j in positions:
            r = batched_rank(kern.vj(theta, j))
            best[j] = max(best[j], int(r.max()))
            full &= r == need[j]
        if full.any():
            used += int(np.argmax(full)) + 1
            return best, need, used, True
        used += size
    return best, need, used, False


def sufficient_rank_check(program: RestrictionProgram, N: int = DEFAULT_DRAWS,
                          rng: np.random.Generator | None = None) -> IdentificationVerdict:
    """Recursive sufficient condition: rank V_j(theta) = s(n-j) for j < n."""
    rng = np.random.default_rng() if rng is None else rng
    v = _new_verdict(program)
    if not v.recursive_applicable:
        raise RecursiveSchemeUnavailable(
            "restriction counts do not satisfy f_j >= s(n-j) for every shock")
    best, need, used, ok = _run_recursive(program, N, rng)
    v.route = "recursive"
    v.draws_used = used
    v.n_draws = N
    v.verdict = "identified" if ok else "not_identified_after_N"
    partial = []
    for j in range(program.n):
        k = program.order[j]
        good = all(best[i] == need[i] for i in range(min(j + 1, program.n - 1)))
        v.shock_results.append({"shock": k, "position": j, "rank": best[j] if j < program.n - 1 else None,
                                "required": need[j], "identified": good})
        if good:
            partial.append(k)
    v.partial = sorted(partial)
    return v


def partial_identification_check(program: RestrictionProgram, shock: int, N: int = DEFAULT_DRAWS,
                                  rng: np.random.Generator | None = None) -> dict:
    """Is the original ``shock`` locally identified (recursive criterion)?"""
    rng = np.random.default_rng() if rng is None else rng
    j = program.order.index(shock)
    flags = recursive_order_check(program)
    if not all(flags[:j + 1]):
        return {"shock": shock, "position": j, "identified": False, "reason": "counts",
                "ranks": []}
    if j == program.n - 1 and program.n > 1:
        upto = program.n - 1
    else:
        upto = j + 1
    best, need, used, ok = _run_recursive(program, N, rng, upto=upto)
    ranks = [(best[i], need[i]) for i in range(min(upto, program.n - 1))]
    return {"shock": shock, "position": j, "identified": ok, "reason": "rank",
            "ranks": ranks, "draws_used": used}


def necessary_sufficient_check(program: RestrictionProgram, N: int = DEFAULT_DRAWS,
                               rng: np.random.Generator | None = None,
                               chunk: int = 1000) -> IdentificationVerdict:
    """Full column rank of V~(theta) T for some theta draw."""
    rng = np.random.default_rng() if rng is None else rng
    v = _new_verdict(program)
    v.route = "general"
    v.n_draws = N
    req = program.s * program.n_tilde
    kern = _VtildeKernel(program)
    best = 0
    used = 0
    ok = False
    while used < N:
        size = min(chunk, N - used) if used else 1
        theta = kern.draw(rng, size)
        r = batched_rank(kern.vtt(theta))
        best = max(best, int(r.max()))
        hit = r == req
        if hit.any():
            used += int(np.argmax(hit)) + 1
            ok = True
            break
        used += size
    v.global_rank = best
    v.draws_used = used
    v.verdict = "identified" if ok else "not_identified_after_N"
    return v


def identify(program: RestrictionProgram, N: int = DEFAULT_DRAWS,
             rng: np.random.Generator | None = None) -> IdentificationVerdict:
    """Order condition, then the recursive check when applicable, else the
    general rank condition. Partial results are reported in both cases."""
    rng = np.random.default_rng() if rng is None else rng
    base = _new_verdict(program)
    if not base.order_ok:
        base.verdict = "order_condition_fails"
        base.route = "order"
        return base
    if base.recursive_applicable:
        v = sufficient_rank_check(program, N, rng)
        if v.identified:
            gen = necessary_sufficient_check(program, 1, rng)
            v.global_rank = gen.global_rank
            return v
        gen = necessary_sufficient_check(program, N, rng)
        if gen.identified:
            gen.shock_results = v.shock_results
            gen.partial = v.partial
            return gen
        v.global_rank = gen.global_rank
        return v
    v = necessary_sufficient_check(program, N, rng)
    partial = []
    flags = recursive_order_check(program)
    for j in range(program.n):
        k = program.order[j]
        if all(flags[:j + 1]):
            res = partial_identification_check(program, k, min(N, 1000), rng)
        else:
            res = {"shock": k, "position": j, "identified": False, "reason": "counts", "ranks": []}
        v.shock_results.append(res)
        if res["identified"]:
            partial.append(k)
    v.partial = sorted(partial) if not v.identified else list(range(program.n))
    return v


# ------------------------------------------------------- at a given point

def theta_at(program: RestrictionProgram, model: mc.RegimeModel, Q) -> list[np.ndarray]:
    """theta0_j = S_j' G e_j for internal positions j."""
    G = evaluate_G(program, model, Q)
    return [program.S[k].T @ G[:, k] for k in program.order]


def check_at(program: RestrictionProgram, model: mc.RegimeModel, Q) -> dict:
    """Rank conditions evaluated at the parameter point (phi, Q)."""
    theta = theta_at(program, model, Q)
    n, s = program.n, program.s
    out = {"recursive": None, "vj_ranks": []}
    flags = recursive_order_check(program)
    if all(flags):
        ranks = [matrix_rank(build_Vj(program, theta, j)) for j in range(n - 1)]
        out["vj_ranks"] = ranks
        out["recursive"] = all(r == s * (n - j - 1) for j, r in enumerate(ranks))
    rank = matrix_rank(build_Vtt(program, theta))
    out["global_rank"] = rank
    out["identified"] = rank == s * program.n_tilde
    return out


def check_random(program: RestrictionProgram, rng: np.random.Generator, N: int = DEFAULT_DRAWS):
    return identify(program, N, rng)
