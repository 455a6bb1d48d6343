"""Acceptance suite: one test per numbered criterion.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary
lists a PASS/FAIL line for every criterion. Running this file directly
does the same.
"""
import csv
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

import fixtures as fx
from helpers import angle_grid_solutions, consistent_model, match_sets, random_model, random_regime
from svarwb import config as cf
from svarwb import model as mc
from svarwb.cli import main
from svarwb.enumeration import (
    Functional,
    enumerate_general,
    enumerate_recursive,
    enumerate_rotations,
    enumerate_sequential,
)
from svarwb.errors import OrderingNotFound
from svarwb.identification import (
    build_Vj,
    build_Vtt,
    draw_theta,
    identify,
    order_condition,
    skew_basis,
    t_double,
)
from svarwb.inference import (
    DrawRecord,
    bayes_posterior,
    enumerate_records,
    robust_bayes,
    sample_records,
    sample_set_identified,
)
from svarwb.reduced_form import PosteriorSpec, RegimeData, ols_fit, posterior_draws
from svarwb.restrictions import Target, compile_restrictions, matrix_rank, sign, zero
from svarwb.simulation import simulate_reduced

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
acceptance = pytest.mark.acceptance


def _cli(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def _check_bracketing(records, n_regimes, n_horizons):
    """Posterior mean inside [E(l), E(u)] for every regime and horizon."""
    out = []
    for p in range(n_regimes):
        for h in range(n_horizons):
            rb = robust_bayes(records, p, h, 0.9)
            tol = 1e-12 * max(1.0, abs(rb.lower_mean), abs(rb.upper_mean))
            assert rb.lower_mean - tol <= rb.bayes_mean <= rb.upper_mean + tol
            out.append(rb)
    return out


# ------------------------------------------------------------------ 1-3

@acceptance(1, "trivariate golden fixture: R1, V1/V2 structure, identified with N=1, < 1 s")
def test_golden_trivariate(tmp_path):
    t0 = time.perf_counter()
    p = fx.trivariate_a0()
    assert np.array_equal(p.R[0], fx.R1_TRIVARIATE)
    rng = np.random.default_rng(101)
    for _ in range(20):
        th = draw_theta(p, rng)
        assert np.allclose(build_Vj(p, th, 0), fx.printed_V1_trivariate(th), atol=1e-14)
        assert np.allclose(build_Vj(p, th, 1), fx.printed_V2_trivariate(th), atol=1e-14)
    cfg = tmp_path / "trivariate.toml"
    cfg.write_text((CONFIGS / "trivariate_identify.toml").read_text() + "\n[identify]\ndraws = 1\n")
    r = _cli("identify", "--config", cfg, "--out", tmp_path / "o")
    assert r.exit_code == 0, r.output
    assert "identified (recursive route)" in r.output and "not identified" not in r.output
    assert time.perf_counter() - t0 < 1.0


@acceptance(2, "bivariate golden fixture: V1 structure, identified, < 1 s")
def test_golden_bivariate():
    t0 = time.perf_counter()
    p = fx.bivariate_short_long()
    assert np.array_equal(p.R[0], fx.R1_BIVARIATE)
    rng = np.random.default_rng(102)
    for _ in range(20):
        th = draw_theta(p, rng)
        assert np.allclose(build_Vj(p, th, 0), fx.printed_V1_bivariate(th), atol=1e-14)
    assert identify(p, 1, rng).identified
    assert time.perf_counter() - t0 < 1.0


@acceptance(3, "not-identified golden fixture: V≈ structure, dependent columns over 10,000 θ, < 30 s")
def test_golden_not_identified():
    t0 = time.perf_counter()
    p = fx.trivariate_not_identified()
    rng = np.random.default_rng(103)
    scale = [1 / np.linalg.norm(p.S_raw[k], axis=0) for k in p.order]
    for _ in range(20):
        th = draw_theta(p, rng)
        printed = fx.printed_Vtt_not_identified([t * c for t, c in zip(th, scale)])
        assert np.allclose(build_Vtt(p, th), printed, atol=1e-12)
    for _ in range(10_000):
        M = build_Vtt(p, draw_theta(p, rng))
        assert matrix_rank(M[:, [0, 3]]) <= 1
        assert matrix_rank(M) < 6
    v = identify(p, 10_000, rng)
    assert not v.identified
    assert v.message().startswith("not identified after N=10,000")
    assert time.perf_counter() - t0 < 30.0


# ------------------------------------------------------------------ 4-5

@acceptance(4, "order condition matches direct arithmetic over n in {2,3,4}, s in {1,2,3}")
def test_order_condition_sweep():
    rng = np.random.default_rng(104)
    for n in (2, 3, 4):
        for s in (1, 2, 3):
            # distinct (shock, variable, regime) zero slots, at most n-1 per shock and regime
            slots = [(j, v, q) for j in range(n) for q in range(s) for v in range(n - 1)]
            need = s * n * (n - 1) // 2
            for f in range(len(slots) + 1):
                pick = [slots[i] for i in rng.permutation(len(slots))[:f]]
                decls = [zero(j, Target("A0", (j + 1 + v) % n), q) for j, v, q in pick]
                p = compile_restrictions(decls, n=n, s=s)
                assert p.f_total == f
                assert order_condition(p) == (f >= need, f, need)


@acceptance(5, "skew machinery: 1,000 h vectors give skew H; T≈ has full column rank for n<=5, s<=3")
def test_skew_machinery():
    rng = np.random.default_rng(105)
    for _ in range(1000):
        n = int(rng.integers(2, 6))
        h = rng.standard_normal(n * (n - 1) // 2)
        H = (skew_basis(n) @ h).reshape(n, n, order="F")
        assert np.array_equal(H, -H.T)
    for n in range(2, 6):
        for s in range(1, 4):
            T = t_double(n, s)
            sv = np.linalg.svd(T, compute_uv=False)
            k = s * n * (n - 1) // 2
            assert T.shape[1] == k and sv.min() > 1e-10 * sv.max()


# ------------------------------------------------------------------ 6-7

@acceptance(6, "general and recursive routes equal the angle-grid set at 50 points, < 5 min")
def test_enumeration_completeness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(106)
    p = fx.bivariate_stability_zero()
    sizes = []
    for _ in range(50):
        m = random_model(2, 2, 1, rng)
        grid = angle_grid_solutions(m)
        gen = enumerate_general(p, m, rng=rng)
        rec = enumerate_recursive(p, m, rng)
        assert match_sets(grid, gen.solutions, 1e-4)
        assert match_sets(grid, rec.solutions, 1e-4)
        sizes.append(len(grid))
    assert max(sizes) > 0
    assert time.perf_counter() - t0 < 300.0


@acceptance(7, "sequential, recursive and general routes agree to 1e-6 on recursive fixtures")
def test_cross_route_agreement():
    rng = np.random.default_rng(107)
    three_way = [fx.trivariate_a0, fx.trivariate_ir_stability, fx.bivariate_stability_zero,
                 lambda: fx.cholesky(3, 2), lambda: fx.cholesky(2, 2), lambda: fx.cholesky(3, 1)]
    for make in three_way:
        p = make()
        for _ in range(3):
            m = consistent_model(p, rng)
            gen = enumerate_general(p, m, rng=rng)
            rec = enumerate_recursive(p, m, rng)
            seq = enumerate_sequential(p, m, rng)
            assert gen.M > 0
            assert match_sets(rec.solutions, gen.solutions, 1e-6)
            assert match_sets(seq.solutions, gen.solutions, 1e-6)
    # no regime ordering exists here, so only the two column-wise routes apply
    p = fx.bivariate_short_long()
    for _ in range(3):
        m = consistent_model(p, rng)
        assert match_sets(enumerate_recursive(p, m, rng).solutions,
                          enumerate_general(p, m, rng=rng).solutions, 1e-6)
        with pytest.raises(OrderingNotFound):
            enumerate_sequential(p, m, rng)


# ------------------------------------------------------------------ 8-10

@acceptance(8, "observational equivalence over 1,000 (A0, A+, Q) triples within 1e-10")
def test_observational_equivalence():
    rng = np.random.default_rng(108)
    worst = 0.0
    for _ in range(1000):
        n, l = int(rng.integers(2, 5)), int(rng.integers(1, 3))
        # singular values in [0.5, 2] keep the reduced form O(1)
        sv = rng.uniform(0.5, 2.0, n)
        a0 = mc.haar_orthogonal(n, rng) @ np.diag(sv) @ mc.haar_orthogonal(n, rng)
        ap = rng.standard_normal((n, 1 + n * l))
        Q = mc.haar_orthogonal(n, rng)
        r1 = mc.structural_to_reduced([mc.StructuralRegime(a0, ap)])[0]
        r2 = mc.structural_to_reduced([mc.StructuralRegime(Q.T @ a0, Q.T @ ap)])[0]
        worst = max(worst, np.abs(r1.sigma - r2.sigma).max(), np.abs(r1.b_plus - r2.b_plus).max())
    assert worst <= 1e-10


def _simulated_fev(reg, Q, i, h, paths, rng):
    """Shock-by-shock forecast-error variance shares from simulated VAR paths."""
    n, l = reg.n, reg.l
    impact = reg.sigma_tr @ Q
    eps = rng.standard_normal((h + 1, paths, n))
    var = np.zeros(n)
    for j in range(n):
        # deviation from the conditional mean driven by shock j alone
        hist = [np.zeros((paths, n)) for _ in range(l)]
        for k in range(h + 1):
            y = eps[k, :, j:j + 1] * impact[:, j]
            for lag in range(l):
                y = y + hist[-1 - lag] @ reg.lags[lag].T
            hist.append(y)
        var[j] = np.mean(hist[-1][:, i] ** 2)
    return var / var.sum()


@acceptance(9, "FEV shares sum to 1 ± 1e-10; bivariate shares within 2e-2 of a 10^6-path simulation")
def test_fev():
    rng = np.random.default_rng(109)
    for _ in range(10):
        reg = random_regime(3, 2, rng)
        Q = mc.haar_orthogonal(3, rng)
        for h in range(10):
            assert np.abs(mc.fev_decomposition(reg, Q, h).sum(axis=1) - 1).max() <= 1e-10
    reg = random_regime(2, 2, rng)
    Q = mc.haar_orthogonal(2, rng)
    for h in (0, 3):
        for i in range(2):
            sim = _simulated_fev(reg, Q, i, h, 1_000_000, rng)
            exact = [mc.fev_contribution(reg, Q, i, j, h) for j in range(2)]
            assert np.abs(sim - exact).max() <= 2e-2


@acceptance(10, "single sign restriction with Σ=I accepts 0.5 ± 0.05 of 10^4 proposals")
def test_sampler_symmetry():
    p = compile_restrictions([sign(0, Target("IR", 0, 0), 0, 1)], n=2, s=1)
    reg = mc.ReducedFormRegime(np.zeros(2), np.zeros((1, 2, 2)), np.eye(2))
    res = sample_set_identified(p, mc.RegimeModel.from_regimes([reg]), 10_000, np.random.default_rng(110))
    assert res.proposals == 10_000
    assert abs(res.acceptance_rate - 0.5) <= 0.05


# ------------------------------------------------------------------ 11

def _bivariate_data(s, T, seed):
    rng = np.random.default_rng(seed)
    regs = [mc.ReducedFormRegime(np.zeros(2), np.array([[[0.5, 0.1], [0.2, 0.3]]]),
                                 np.array([[1.0, 0.3], [0.3, 0.8]]) * (1 + p)) for p in range(s)]
    breaks = [T // s * p for p in range(1, s)]
    return RegimeData(simulate_reduced(regs, T, breaks, rng), tuple(breaks), 1)


@acceptance(11, "robust bracketing on every inference run; α=0.9 region ⊇ Bayes 80% band on a fixed set")
def test_robust_bracketing(tmp_path):
    H = range(5)
    funcs = [Functional("IR", 1, 0), Functional("IR", 0, 1)]
    # enumerated run with two admissible solutions per draw
    data = _bivariate_data(2, 600, 111)
    draws = posterior_draws(data, PosteriorSpec(draws=100, seed=1))
    for recs in enumerate_records(fx.bivariate_stability_zero(), draws, funcs, H, seed=2):
        _check_bracketing(recs, 2, len(H))
    # set-identified run
    data = _bivariate_data(1, 400, 112)
    draws = posterior_draws(data, PosteriorSpec(draws=100, seed=3))
    p = compile_restrictions([sign(0, Target("IR", 0, 0), 0, 1), sign(0, Target("IR", 1, 0), 0, 1)], n=2, s=1)
    for recs in sample_records(p, draws, funcs, H, L=200, seed=4):
        _check_bracketing(recs, 1, len(H))
    # command-line run
    cfg = tmp_path / "trivariate.toml"
    cfg.write_text((CONFIGS / "trivariate_dgp.toml").read_text().replace("draws = 200", "draws = 60"))
    assert _cli("simulate", "--config", cfg, "--out", tmp_path / "sim").exit_code == 0
    r = _cli("infer", "--config", cfg, "--data", tmp_path / "sim" / "simulated.csv", "--out", tmp_path / "inf")
    assert r.exit_code == 0, r.output
    with open(tmp_path / "inf" / "robust.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            lo, mean, hi = float(row["lower_mean"]), float(row["bayes_mean"]), float(row["upper_mean"])
            tol = 1e-12 * max(1.0, abs(lo), abs(hi))
            assert lo - tol <= mean <= hi + tol
    # degenerate fixture: every draw carries the same set
    grid = np.linspace(-1.0, 1.0, 201).reshape(-1, 1)
    recs = [DrawRecord(i, 0.0, True, [grid], "sampled") for i in range(200)]
    rb = robust_bayes(recs, 0, 0, alpha=0.9)
    b = bayes_posterior(recs, 0, 0)
    step = 2.0 * 1.2 / 511                         # candidate-center grid spacing
    lo, hi = rb.region
    assert lo <= b.deciles[0] + step and hi >= b.deciles[1] - step      # 80% inter-quantile band
    _check_bracketing(recs, 1, 1)


# ------------------------------------------------------------------ 12

def _max_rel_err(est, true):
    return float(np.abs(est - true).max() / np.abs(true).max())


@acceptance(12, "round trip: a solution within 10%, pointwise IRF coverage >= 80% over 25 replications, < 15 min")
def test_round_trip():
    t0 = time.perf_counter()
    cfg, _ = cf.load_config(CONFIGS / "trivariate_dgp.toml")
    regs = cf.simulation_regimes(cfg)
    truth = [(np.array(r.a0), np.array(r.a_plus)) for r in cfg.simulate.regimes]
    Q_true = [mc.recover_rotation(reg, a0) for reg, (a0, _) in zip(regs, truth)]
    n, s = 3, 2
    program = cf.build_program(cfg, n, s)
    funcs = [Functional("IR", i, j) for j in range(n) for i in range(n)]     # the full IRF
    H = list(range(9))
    true_irf = [mc.impulse_responses(reg, Q, H[-1]) for reg, Q in zip(regs, Q_true)]
    T, brk = cfg.simulate.T, cfg.simulate.break_dates[0] - 1
    reps = 25
    matched = []
    inside = np.zeros((reps, len(funcs), s, len(H)), dtype=bool)
    for rep in range(reps):
        rng = np.random.default_rng(1000 + rep)
        y = simulate_reduced(regs, T, [brk], rng, cfg.simulate.burn_in)
        data = RegimeData(y, (brk,), 1)
        est = ols_fit(data)
        rs = enumerate_rotations(program, est, "auto", rng=rng)
        errs = []
        for Q in rs.solutions:
            e = 0.0
            for reg, Qp, (a0, ap) in zip(est.regimes, Q, truth):
                st = mc.reduced_to_structural(reg, Qp)
                e = max(e, _max_rel_err(st.a0, a0), _max_rel_err(st.a_plus, ap))
            errs.append(e)
        matched.append(bool(errs) and min(errs) < 0.10)
        draws = posterior_draws(data, PosteriorSpec(draws=cfg.inference.draws, seed=rep))
        for fi, (func, recs) in enumerate(zip(funcs, enumerate_records(program, draws, funcs, H, seed=rep))):
            for rb in _check_bracketing(recs, s, len(H)):
                lo, hi = rb.region
                inside[rep, fi, rb.regime, rb.horizon] = lo <= true_irf[rb.regime][rb.horizon, func.variable,
                                                                                      func.shock] <= hi
    # share of replications covering the truth, averaged over responses, regimes and horizons
    coverage = float(inside.mean())
    joint = inside.all(axis=3).mean(axis=0)
    print(f"round trip: matched {sum(matched)}/{reps}, pointwise coverage {coverage:.3f}, "
          f"all-horizon coverage per response {joint.min():.2f}..{joint.max():.2f}, "
          f"{time.perf_counter() - t0:.0f} s")
    assert matched[0]                              # the designated single round trip
    assert coverage >= 0.80
    assert time.perf_counter() - t0 < 900.0


# ------------------------------------------------------------------ 13

@acceptance(13, "identical config and seed give byte-identical CSVs for all four commands")
def test_determinism(tmp_path):
    cfg = tmp_path / "trivariate.toml"
    cfg.write_text((CONFIGS / "trivariate_dgp.toml").read_text().replace("draws = 200", "draws = 60"))
    for tag in ("a", "b"):
        d = tmp_path / tag
        assert _cli("identify", "--config", CONFIGS / "trivariate_identify.toml", "--out", d / "id").exit_code == 0
        assert _cli("simulate", "--config", cfg, "--out", d / "sim").exit_code == 0
        data = d / "sim" / "simulated.csv"
        assert _cli("estimate", "--config", cfg, "--data", data, "--out", d / "est").exit_code == 0
        assert _cli("infer", "--config", cfg, "--data", data, "--out", d / "inf").exit_code == 0
    for sub in ("id", "sim", "est", "inf"):
        a = sorted(x.name for x in (tmp_path / "a" / sub).glob("*.csv"))
        b = sorted(x.name for x in (tmp_path / "b" / sub).glob("*.csv"))
        assert a and a == b
        for name in a:
            assert (tmp_path / "a" / sub / name).read_bytes() == (tmp_path / "b" / sub / name).read_bytes()


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
