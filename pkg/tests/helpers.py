"""Random model generators for tests."""
import numpy as np

from svarwb import model as mc


def random_lags(n, l, rng, radius=0.6):
    """Stable lag matrices with companion spectral radius below ``radius``."""
    while True:
        lags = rng.standard_normal((l, n, n)) * 0.4 / np.sqrt(n * l)
        reg = mc.ReducedFormRegime(np.zeros(n), lags, np.eye(n))
        if reg.spectral_radius() < radius:
            return lags


def random_regime(n, l, rng):
    A = rng.standard_normal((n, n))
    sigma = A @ A.T + 0.5 * np.eye(n)
    return mc.ReducedFormRegime(0.1 * rng.standard_normal(n), random_lags(n, l, rng), sigma)


def random_model(n, s, l=1, rng=None):
    rng = np.random.default_rng() if rng is None else rng
    return mc.RegimeModel.from_regimes([random_regime(n, l, rng) for _ in range(s)])


def consistent_model(program, rng, l=1, return_truth=False):
    """Reduced form for which the equality restrictions hold at some Q.

    For an A0-only transform a restricted A0 is drawn directly. Otherwise
    lags are drawn first and the impact matrices X_p = Sigma_tr Q_p are drawn
    column by column in the null space of the (then linear) restrictions.
    """
    n, s, g = program.n, program.s, program.g
    blocks = program.transform.blocks
    while True:
        lags = [random_lags(n, l, rng) for _ in range(s)]
        if all(b.kind == "A0" for b in blocks):
            A0 = np.zeros((s, n, n))
            for k in range(n):
                x = program.S[k] @ rng.standard_normal(program.tau[k])
                for p in range(s):
                    A0[p][k, :] = x[p * g:(p + 1) * g]
            X = np.linalg.inv(A0)
        else:
            mats = []
            for p in range(s):
                tmp = mc.ReducedFormRegime(np.zeros(n), lags[p], np.eye(n))
                K = []
                for b in blocks:
                    if b.kind == "IR":
                        K.append(mc.vma_coefficients(tmp, b.horizon)[b.horizon])
                    elif b.kind == "CIR":
                        K.append(mc.long_run_multiplier(tmp))
                    else:
                        return _rejection_model(program, rng, l, return_truth)
                mats.append(np.vstack(K))
            X = np.zeros((s, n, n))
            for k in range(n):
                Wk = np.hstack([program.R_star(p, k) @ mats[p] for p in range(s)])
                if Wk.shape[0]:
                    _, sv, vt = np.linalg.svd(Wk)
                    rank = int(np.sum(sv > 1e-10 * sv[0]))
                    basis = vt[rank:].T
                else:
                    basis = np.eye(s * n)
                x = basis @ rng.standard_normal(basis.shape[1])
                X[:, :, k] = x.reshape(s, n)
        if min(abs(np.linalg.det(X[p])) for p in range(s)) < 1e-3:
            continue
        regs = []
        Qs = []
        for p in range(s):
            sigma = X[p] @ X[p].T
            reg = mc.ReducedFormRegime(0.1 * rng.standard_normal(n), lags[p], 0.5 * (sigma + sigma.T))
            regs.append(reg)
            Qs.append(np.linalg.solve(reg.sigma_tr, X[p]))
        model = mc.RegimeModel.from_regimes(regs)
        if return_truth:
            return model, np.stack(Qs)
        return model


def _rejection_model(program, rng, l, return_truth):
    """Mixed A0/IR transforms: draw reduced forms until one is feasible."""
    from svarwb.enumeration import enumerate_rotations

    for _ in range(1000):
        model = random_model(program.n, program.s, l, rng)
        rs = enumerate_rotations(program, model, "auto")
        if rs.M:
            return (model, rs.solutions[0]) if return_truth else model
    raise RuntimeError("no feasible reduced form found")


def match_sets(A, B, tol):
    """True when the two lists of arrays are equal up to a permutation."""
    from scipy.optimize import linear_sum_assignment

    if len(A) != len(B):
        return False
    if not A:
        return True
    cost = np.array([[np.abs(a - b).max() for b in B] for a in A])
    r, c = linear_sum_assignment(cost)
    return bool(cost[r, c].max() <= tol)


def _rot(theta, r):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -r * s], [s, r * c]])


def angle_grid_solutions(model, step=1e-3):
    """Brute-force oracle for the bivariate two-regime restriction set
    IR0(2,1) equal across regimes and A0(1,2) = 0 in regime 1.

    Q_p = [[cos t_p, -r_p sin t_p], [sin t_p, r_p cos t_p]] over a grid of
    (t_1, t_2); cells where both residuals change sign are refined with a
    root finder, then reflections r_p are chosen by the diag(A0) > 0 rule.
    """
    from scipy.optimize import root

    L1, L2 = (reg.sigma_tr for reg in model.regimes)
    a0row = np.linalg.inv(L1).T[1]          # A0 row of variable 2 acting on q_1
    ir1, ir2 = L1[1], L2[1]

    def f1(t1):
        return a0row[0] * np.cos(t1) + a0row[1] * np.sin(t1)

    def f2(t1, t2):
        return ir1[0] * np.cos(t1) + ir1[1] * np.sin(t1) - ir2[0] * np.cos(t2) - ir2[1] * np.sin(t2)

    grid = np.arange(0.0, 2 * np.pi + step, step)
    F1 = f1(grid)
    roots = []
    chunk = 400
    for i0 in range(0, len(grid) - 1, chunk):
        i1 = min(i0 + chunk, len(grid) - 1)
        t1 = grid[i0:i1 + 1]
        G = f2(t1[:, None], grid[None, :])
        s1 = np.sign(F1[i0:i1 + 1])
        c1 = s1[:-1] * s1[1:] <= 0
        sg = np.sign(G)
        corners = np.stack([sg[:-1, :-1], sg[1:, :-1], sg[:-1, 1:], sg[1:, 1:]])
        c2 = (corners.max(axis=0) >= 0) & (corners.min(axis=0) <= 0)
        for i, j in zip(*np.nonzero(c1[:, None] & c2)):
            x0 = [t1[i] + step / 2, grid[j] + step / 2]
            fun = lambda x: [f1(x[0]), f2(x[0], x[1])]
            sol = root(fun, x0, tol=1e-14)
            if np.abs(fun(sol.x)).max() < 1e-10 and np.abs(sol.x - x0).max() < 5 * step:
                roots.append(np.mod(sol.x, 2 * np.pi))
    out = []
    inv = [np.linalg.inv(L1).T, np.linalg.inv(L2).T]
    for t1, t2 in roots:
        for r1 in (1, -1):
            for r2 in (1, -1):
                Q = np.stack([_rot(t1, r1), _rot(t2, r2)])
                diag = np.array([np.diag(Q[p].T @ inv[p].T) for p in range(2)])
                if np.all(diag > 0) and not any(np.abs(Q - R).max() < 1e-6 for R in out):
                    out.append(Q)
    return out
