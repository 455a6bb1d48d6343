"""Bayesian, projection and robust-Bayes inference over identified sets.

Every posterior draw of phi becomes a ``DrawRecord`` holding, per regime,
the eta paths (over horizons) of its admissible rotations: the distinct
Q_p of the enumerated set when the model is locally identified, or the
accepted rotation samples when it is set identified.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import null_space

from . import model as mc
from .enumeration import (
    Functional,
    SolverConfig,
    _distinct_sorted,
    enumerate_rotations,
    functional_values,
    identified_set,
    solve_unit_quadrics,
)
from .errors import (
    AllDrawsInadmissible,
    DegenerateNullSpace,
    EmptyRetention,
    NonStationary,
    NormalizationUndefined,
)
from .reduced_form import PosteriorDraw
from .restrictions import (
    RestrictionProgram,
    apply_normalization,
    MARGIN_TOL,
    inequality_satisfied,
    max_equality_residual,
)

FAN_LEVELS = (0.9, 0.75, 0.5, 0.25, 0.1)
KDE_POINTS = 100
ROBUST_GRID = 512
BIMODAL_DEPTH = 0.5


# ------------------------------------------------------------------ records

@dataclass
class DrawRecord:
    index: int
    log_density: float
    admissible: bool
    paths: list                       # per regime: (M_p, H) array
    mode: str = "enumerated"          # or "sampled"
    flag: str = ""                    # "degenerate" when skipped
    proposals: int = 0
    accepted: int = 0

    def M(self, p: int) -> int:
        return self.paths[p].shape[0] if self.paths else 0


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map; results do not depend on the thread count."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def draw_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


def _per_functional(work, draws, funcs, threads):
    """Run ``work(i, funcs)`` per draw and regroup as [functional][draw]."""
    single = isinstance(funcs, Functional)
    fl = [funcs] if single else list(funcs)
    rows = parallel_map(lambda i: work(i, fl), range(len(draws)), threads)
    grouped = [[row[f] for row in rows] for f in range(len(fl))]
    return grouped[0] if single else grouped


def enumerate_records(program: RestrictionProgram, draws: Sequence[PosteriorDraw], funcs,
                      horizons, route: str = "auto", cfg: SolverConfig | None = None,
                      seed: int = 0, threads: int = 1) -> list:
    """Locally identified route: full enumeration of Q(phi) per draw.

    ``funcs`` is one Functional (returns a list of records) or a sequence
    of them (returns one list of records per functional).
    """
    seeds = draw_seeds(seed, len(draws))

    def work(i, fl):
        d = draws[i]
        rng = np.random.default_rng(seeds[i])
        try:
            rs = enumerate_rotations(program, d.model, route, cfg, rng)
        except DegenerateNullSpace:
            return [DrawRecord(d.index, d.log_density, False, [], flag="degenerate") for _ in fl]
        except NonStationary:
            return [DrawRecord(d.index, d.log_density, False, [], flag="nonstationary") for _ in fl]
        out = []
        for func in fl:
            try:
                iset = identified_set(rs, d.model, func, horizons)
            except NonStationary:
                out.append(DrawRecord(d.index, d.log_density, False, [], flag="nonstationary"))
                continue
            out.append(DrawRecord(d.index, d.log_density, not rs.empty, iset.paths, "enumerated"))
        return out

    return _per_functional(work, draws, funcs, threads)


# ---------------------------------------------------- set-identified sampler

@dataclass
class SampleResult:
    accepted: list
    proposals: int

    @property
    def acceptance_rate(self) -> float:
        return len(self.accepted) / self.proposals if self.proposals else 0.0


def _unit(v):
    return v / np.linalg.norm(v)


def _propose(program: RestrictionProgram, W, rng) -> np.ndarray | None:
    """One candidate block built column by column (None on failure)."""
    n, s = program.n, program.s
    cols = {}
    for j, k in enumerate(program.order):
        rows = [W[k]]
        for i in program.order[:j]:
            for p in range(s):
                r = np.zeros(s * n)
                r[p * n:(p + 1) * n] = cols[i][p]
                rows.append(r[None])
        Gam = np.vstack(rows)
        N = null_space(Gam) if Gam.shape[0] else np.eye(s * n)
        gamma = N.shape[1]
        if gamma < s:
            return None
        if not program.is_cross_regime(k):
            q = np.zeros((s, n))
            for p in range(s):
                other = np.delete(N, np.s_[p * n:(p + 1) * n], axis=0)
                E = null_space(other) if other.shape[0] else np.eye(gamma)
                if E.shape[1] == 0:
                    return None
                U = np.linalg.qr(N[p * n:(p + 1) * n] @ E)[0]
                q[p] = U @ _unit(rng.standard_normal(U.shape[1]))
        else:
            sols = []
            for _ in range(20):
                Z = np.linalg.qr(rng.standard_normal((gamma, s)))[0] if gamma > s else np.eye(s)
                b = N @ Z
                Bt = np.stack([b[p * n:(p + 1) * n].T @ b[p * n:(p + 1) * n] for p in range(s)])
                try:
                    lams = solve_unit_quadrics(Bt, rng)
                except DegenerateNullSpace:
                    lams = []
                if lams:
                    sols = [(b @ lam).reshape(s, n) for lam in lams]
                    break
                if gamma == s:
                    break
            if not sols:
                return None
            q = sols[int(rng.integers(len(sols)))]
        cols[k] = q
    Q = np.zeros((s, n, n))
    for k, q in cols.items():
        Q[:, :, k] = q
    return Q


def _propose_batch(program: RestrictionProgram, W, L: int, rng) -> np.ndarray | None:
    """L candidate blocks at once when no restriction row spans two regimes.

    Each q_pk is uniform on the unit sphere of the null space of its own
    regime's rows and the earlier columns of Q_p; the null spaces come from
    a batched SVD. Returns None when some null space is empty.
    """
    n, s = program.n, program.s
    Q = np.zeros((L, s, n, n))
    for j, k in enumerate(program.order):
        for p in range(s):
            own = [i for i, regs in enumerate(program.row_regimes[k]) if regs == frozenset({p})]
            fixed = W[k][own][:, p * n:(p + 1) * n]
            d = n - len(own) - j
            if d <= 0:
                return None
            prev = np.swapaxes(Q[:, p][:, :, list(program.order[:j])], 1, 2)
            A = np.concatenate([np.broadcast_to(fixed, (L,) + fixed.shape), prev], axis=1)
            if A.shape[1]:
                N = np.swapaxes(np.linalg.svd(A, full_matrices=True)[2][:, A.shape[1]:], 1, 2)
            else:
                N = np.broadcast_to(np.eye(n), (L, n, n))
            z = rng.standard_normal((L, d))
            q = np.einsum("lnd,ld->ln", N, z)
            Q[:, p, :, k] = q / np.linalg.norm(q, axis=1, keepdims=True)
    return Q


def _batch_admissible(program: RestrictionProgram, model: mc.RegimeModel, Q: np.ndarray) -> np.ndarray:
    """Normalize in place and return the mask of admissible candidates."""
    n, s = program.n, program.s
    mask = np.array(program.normalized_shocks, dtype=bool)
    Nrows = program.normalization_rows(model)
    diag = np.einsum("pkn,lpnk->lpk", Nrows, Q)
    flip = (diag < 0) & mask[None, None, :]
    Q *= np.where(flip, -1.0, 1.0)[:, :, None, :]
    ok = np.all((np.abs(diag) > 0) | ~mask[None, None, :], axis=(1, 2))
    Lr = program.sign_rows(model)
    for k in range(n):
        if Lr[k].shape[0]:
            qk = Q[:, :, :, k].reshape(len(Q), s * n)
            ok &= np.all(qk @ Lr[k].T >= -MARGIN_TOL, axis=1)
    if program.fevs:
        for i in np.flatnonzero(ok):
            ok[i] = inequality_satisfied(program, model, Q[i])[0]
    return ok


def sample_set_identified(program: RestrictionProgram, model: mc.RegimeModel, L: int,
                          rng: np.random.Generator) -> SampleResult:
    """Draw L candidate blocks and keep the admissible ones."""
    W = program.W(model)
    if not any(program.is_cross_regime(k) for k in range(program.n)):
        Q = _propose_batch(program, W, L, rng)
        if Q is None:
            return SampleResult([], L)
        ok = _batch_admissible(program, model, Q)
        return SampleResult(list(Q[ok]), L)
    mask = program.normalized_shocks
    accepted = []
    for _ in range(L):
        Q = _propose(program, W, rng)
        if Q is None:
            continue
        if any(mask):
            try:
                Q = apply_normalization(model, Q, mask)
            except NormalizationUndefined:
                continue
            if max_equality_residual(program, model, Q) > 1e-8:
                continue
        ok, _ = inequality_satisfied(program, model, Q)
        if ok:
            accepted.append(Q)
    return SampleResult(accepted, L)


def sample_records(program: RestrictionProgram, draws: Sequence[PosteriorDraw], funcs,
                   horizons, L: int = 1000, seed: int = 0, threads: int = 1) -> list:
    """Set-identified route: L proposals per draw, admissible ones kept."""
    seeds = draw_seeds(seed, len(draws))
    horizons = tuple(int(h) for h in horizons)

    def work(i, fl):
        d = draws[i]
        rng = np.random.default_rng(seeds[i])
        try:
            res = sample_set_identified(program, d.model, L, rng)
        except NonStationary:
            return [DrawRecord(d.index, d.log_density, False, [], "sampled", flag="nonstationary")
                    for _ in fl]
        if not res.accepted:
            return [DrawRecord(d.index, d.log_density, False, [], "sampled", proposals=L) for _ in fl]
        Qs = np.stack(res.accepted)
        out = []
        for func in fl:
            try:
                paths = [functional_values(reg, Qs[:, p], func, horizons) for p, reg in enumerate(d.model.regimes)]
            except NonStationary:
                out.append(DrawRecord(d.index, d.log_density, False, [], "sampled", flag="nonstationary",
                                      proposals=L))
                continue
            out.append(DrawRecord(d.index, d.log_density, True, paths, "sampled",
                                  proposals=L, accepted=len(res.accepted)))
        return out

    return _per_functional(work, draws, funcs, threads)


# ----------------------------------------------------------------- Bayesian

def _usable(records):
    return [r for r in records if r.admissible and not r.flag]


def pooled_sample(records: Sequence[DrawRecord], p: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Pooled eta values and weights; each admissible draw has total weight 1."""
    vals, wts = [], []
    for r in _usable(records):
        if r.mode == "enumerated":
            v = _distinct_sorted(r.paths[p][:, h])
        else:
            v = r.paths[p][:, h]
        if v.size == 0:
            continue
        vals.append(v)
        wts.append(np.full(v.size, 1.0 / v.size))
    if not vals:
        raise AllDrawsInadmissible("no draw has an admissible rotation")
    w = np.concatenate(wts)
    return np.concatenate(vals), w / w.sum()


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q) -> np.ndarray:
    """Inverted-CDF weighted quantile (smallest x with F(x) >= q)."""
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cdf = np.cumsum(w) / w.sum()
    q = np.atleast_1d(q)
    idx = np.searchsorted(cdf, q - 1e-12, side="left")
    return v[np.clip(idx, 0, len(v) - 1)]


def _kde_grid(values, weights, points=KDE_POINTS):
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 1e-12 * max(1.0, abs(lo)):
        return None
    try:
        kde = stats.gaussian_kde(values, weights=weights)
    except (np.linalg.LinAlgError, ValueError):
        return None
    bw = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(lo - 3 * bw, hi + 3 * bw, points)
    return grid, kde(grid)


def hpd_intervals(grid: np.ndarray, dens: np.ndarray, level: float) -> list[tuple[float, float]]:
    """Highest-density region on a grid, as a union of intervals."""
    mass = dens / dens.sum()
    order = np.argsort(-dens, kind="stable")
    keep = np.zeros(len(grid), dtype=bool)
    acc = 0.0
    for i in order:
        keep[i] = True
        acc += mass[i]
        if acc >= level:
            break
    out = []
    i = 0
    while i < len(grid):
        if keep[i]:
            j = i
            while j + 1 < len(grid) and keep[j + 1]:
                j += 1
            out.append((float(grid[i]), float(grid[j])))
            i = j + 1
        else:
            i += 1
    return out


def bimodality_depth(dens: np.ndarray) -> float:
    """Relative depth of the valley between the two highest KDE peaks."""
    peaks = [i for i in range(1, len(dens) - 1) if dens[i] >= dens[i - 1] and dens[i] > dens[i + 1]]
    if len(peaks) < 2:
        return 0.0
    top = sorted(sorted(peaks, key=lambda i: -dens[i])[:2])
    valley = dens[top[0]:top[1] + 1].min()
    return float(1.0 - valley / min(dens[top[0]], dens[top[1]]))


@dataclass
class BayesSummary:
    regime: int
    horizon: int
    mean: float
    median: float
    bands: dict                      # level -> (lower, upper) equal-tailed
    deciles: tuple                   # (10%, 90%) quantiles
    hpd: dict                        # level -> list of intervals (KDE)
    bimodality: float
    multimodal: bool


def bayes_posterior(records: Sequence[DrawRecord], p: int, h_index: int, horizon: int | None = None,
                    levels=FAN_LEVELS) -> BayesSummary:
    v, w = pooled_sample(records, p, h_index)
    bands = {}
    for c in levels:
        lo, hi = weighted_quantile(v, w, [(1 - c) / 2, (1 + c) / 2])
        bands[c] = (float(lo), float(hi))
    deciles = tuple(float(x) for x in weighted_quantile(v, w, [0.1, 0.9]))
    kg = _kde_grid(v, w)
    if kg is None:
        point = float(np.sum(v * w))
        hpd = {c: [(point, point)] for c in levels}
        depth = 0.0
    else:
        grid, dens = kg
        hpd = {c: hpd_intervals(grid, dens, c) for c in levels}
        depth = bimodality_depth(dens)
    return BayesSummary(p, h_index if horizon is None else horizon, float(np.sum(v * w)),
                        float(weighted_quantile(v, w, 0.5)[0]), bands, deciles, hpd, depth,
                        depth > BIMODAL_DEPTH)


# ------------------------------------------------------ projection sets

def merge_intervals(intervals) -> list[tuple[float, float]]:
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


@dataclass
class ProjectionResult:
    regime: int
    mode: str
    retained: list                  # record indices
    n_clusters: int
    clusters: list                  # per horizon: list of (lo, hi) per cluster
    union: list                     # per horizon: merged intervals
    assignments: dict = field(default_factory=dict)


def projection_confidence_set(records: Sequence[DrawRecord], p: int, alpha: float = 0.9,
                              mode: str = "switching_label") -> ProjectionResult:
    """Keep the top-alpha fraction of draws by log density and take the
    union of per-cluster [min, max] intervals."""
    if mode not in ("switching_label", "fixed_label"):
        raise ValueError("mode must be 'switching_label' or 'fixed_label'")
    ranked = sorted([r for r in records if not r.flag], key=lambda r: (-r.log_density, r.index))
    n_keep = int(math.ceil(alpha * len(ranked)))
    kept = [r for r in ranked[:n_keep] if r.admissible and r.paths[p].shape[0]]
    if not kept:
        raise EmptyRetention("no retained draw has a nonempty identified set")
    H = kept[0].paths[p].shape[1]
    assignments = {}
    if mode == "switching_label":
        n_clusters = max(max(len(_distinct_sorted(r.paths[p][:, h])) for r in kept) for h in range(H))
        members = [[[] for _ in range(n_clusters)] for _ in range(H)]
        for r in kept:
            for h in range(H):
                for m, v in enumerate(_distinct_sorted(r.paths[p][:, h])):
                    members[h][m].append(v)
    else:
        n_clusters = max(r.paths[p].shape[0] for r in kept)
        centroids, counts = [], []
        members = [[[] for _ in range(n_clusters)] for _ in range(H)]
        for r in kept:
            paths = r.paths[p]
            labels = _greedy_match(paths, centroids, n_clusters)
            for row, lab in zip(paths, labels):
                if lab == len(centroids):
                    centroids.append(row.copy())
                    counts.append(1)
                else:
                    counts[lab] += 1
                    centroids[lab] += (row - centroids[lab]) / counts[lab]
                for h in range(H):
                    members[h][lab].append(row[h])
            assignments[r.index] = labels
    clusters, union = [], []
    for h in range(H):
        iv = [(float(min(m)), float(max(m))) for m in members[h] if m]
        clusters.append(iv)
        union.append(merge_intervals(iv))
    return ProjectionResult(p, mode, [r.index for r in kept], n_clusters, clusters, union, assignments)


def _greedy_match(paths: np.ndarray, centroids: list, cap: int) -> list[int]:
    """One-to-one nearest-centroid labels; unmatched rows open new clusters."""
    labels = [-1] * len(paths)
    if centroids:
        C = np.stack(centroids)
        d = np.linalg.norm(paths[:, None, :] - C[None, :, :], axis=2)
        pairs = sorted(((d[i, c], i, c) for i in range(len(paths)) for c in range(len(C))))
        used_r, used_c = set(), set()
        for _, i, c in pairs:
            if i in used_r or c in used_c:
                continue
            labels[i] = c
            used_r.add(i)
            used_c.add(c)
    nxt = len(centroids)
    for i in range(len(paths)):
        if labels[i] == -1:
            if nxt < cap:
                labels[i] = nxt
                nxt += 1
            else:
                C = np.stack(centroids)
                labels[i] = int(np.argmin(np.linalg.norm(C - paths[i], axis=1)))
    return labels


# ------------------------------------------------------------ robust Bayes

@dataclass
class RobustSummary:
    regime: int
    horizon: int
    lower_mean: float
    upper_mean: float
    center: float
    radius: float
    alpha: float
    bayes_mean: float
    nonempty_prob: float

    @property
    def region(self) -> tuple[float, float]:
        return (self.center - self.radius, self.center + self.radius)


def bounds_per_draw(records: Sequence[DrawRecord], p: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    use = [r for r in _usable(records) if r.paths[p].shape[0]]
    if not use:
        raise AllDrawsInadmissible("no draw has an admissible rotation")
    lo = np.array([r.paths[p][:, h].min() for r in use])
    hi = np.array([r.paths[p][:, h].max() for r in use])
    return lo, hi


def _radius(c, lo, hi, alpha):
    d = np.maximum(np.abs(c - lo), np.abs(c - hi))
    return float(np.quantile(d, alpha, method="inverted_cdf"))


def robust_credible_region(lo: np.ndarray, hi: np.ndarray, alpha: float,
                           grid_points: int = ROBUST_GRID) -> tuple[float, float]:
    """(center, radius) minimizing the alpha-quantile of max(|c-l|, |c-u|)."""
    a, b = float(lo.min()), float(hi.max())
    span = b - a
    if span <= 0:
        return a, 0.0
    grid = np.linspace(a - 0.1 * span, b + 0.1 * span, grid_points)
    D = np.maximum(np.abs(grid[:, None] - lo[None]), np.abs(grid[:, None] - hi[None]))
    z = np.quantile(D, alpha, axis=1, method="inverted_cdf")
    i = int(np.argmin(z))
    left, right = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    gr = (math.sqrt(5) - 1) / 2
    x1, x2 = right - gr * (right - left), left + gr * (right - left)
    f1, f2 = _radius(x1, lo, hi, alpha), _radius(x2, lo, hi, alpha)
    for _ in range(60):
        if f1 <= f2:
            right, x2, f2 = x2, x1, f1
            x1 = right - gr * (right - left)
            f1 = _radius(x1, lo, hi, alpha)
        else:
            left, x1, f1 = x1, x2, f2
            x2 = left + gr * (right - left)
            f2 = _radius(x2, lo, hi, alpha)
    best = [(z[i], grid[i]), (f1, x1), (f2, x2)]
    r, c = min(best)
    return float(c), float(r)


def nonempty_probability(records: Sequence[DrawRecord]) -> float:
    valid = [r for r in records if not r.flag]
    if not valid:
        return 0.0
    return sum(r.admissible for r in valid) / len(valid)


def robust_bayes(records: Sequence[DrawRecord], p: int, h_index: int, alpha: float = 0.9,
                 horizon: int | None = None) -> RobustSummary:
    lo, hi = bounds_per_draw(records, p, h_index)
    c, r = robust_credible_region(lo, hi, alpha)
    v, w = pooled_sample(records, p, h_index)
    return RobustSummary(p, h_index if horizon is None else horizon, float(lo.mean()), float(hi.mean()),
                         c, r, alpha, float(np.sum(v * w)), nonempty_probability(records))
