"""Batch command line: ``svarwb identify|estimate|infer|simulate``.

Exit codes: 0 success, 1 other library error, 2 config error,
3 infeasible model (no admissible structural parameters),
4 solver budget exhausted.
"""
from __future__ import annotations

import csv
import json
import os
import sys
import time
import warnings
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import config as cf
from . import inference as inf
from . import model as mc
from .enumeration import enumerate_rotations
from .errors import (
    AllDrawsInadmissible,
    ConfigError,
    EmptyRetention,
    SolverBudgetExhausted,
    SvarwbError,
)
from .identification import identify
from .reduced_form import log_likelihood, ols_fit, posterior_draws
from .simulation import simulate_reduced

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_BUDGET = 0, 1, 2, 3, 4
THREADS_ENV = "SVARWB_THREADS"


class Infeasible(SvarwbError):
    """No admissible structural parameters."""


# ----------------------------------------------------------------- output

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class Artifacts:
    """Single-writer output directory with the echoed config and run metadata."""

    def __init__(self, out: Path, command: str, config_text: str, seed: int, threads: int):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        (self.out / "config.toml").write_text(config_text)
        meta = {"command": command, "seed": seed, "threads": threads, "version": __version__,
                "numpy": np.__version__, "schema_version": cf.SCHEMA_VERSION}
        self._json("run_meta.json", meta)
        self.files += ["config.toml", "run_meta.json"]

    def _json(self, name, obj):
        (self.out / name).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def table(self, name: str, header: list[str], rows) -> None:
        with open(self.out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([fmt(x) for x in r])
        self.files.append(name)

    def report(self, body: dict) -> None:
        body = dict(body, files=sorted(set(self.files)) + ["report.json"])
        self._json("report.json", body)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer, np.floating, np.bool_)):
        return x.item()
    if isinstance(x, (set, frozenset, tuple)):
        return list(x)
    return str(x)


# ------------------------------------------------------------ plumbing

def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from None
        else:
            threads = 1
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return threads


def _run(body):
    """Call ``body`` and map library errors to exit codes."""
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            body()
        for w in caught:
            click.echo(f"warning: {w.message}", err=True)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (Infeasible, AllDrawsInadmissible, EmptyRetention) as exc:
        click.echo(f"infeasible: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    except SolverBudgetExhausted as exc:
        click.echo(f"solver budget exhausted: {exc}", err=True)
        sys.exit(EXIT_BUDGET)
    except SvarwbError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    sys.exit(EXIT_OK)


def _setup(config_path, seed, threads, out, command, data_path=None):
    cfg, text = cf.load_config(config_path)
    if data_path is not None:
        if cfg.data is None:
            raise ConfigError("--data needs a [data] section for break dates and columns")
        cfg.data.path = str(Path(data_path).resolve())
    seed = cfg.seed if seed is None else seed
    threads = resolve_threads(threads)
    art = Artifacts(Path(out), command, text, seed, threads)
    return cfg, Path(config_path).resolve().parent, seed, threads, art


def common_options(f):
    f = click.option("--out", type=click.Path(file_okay=False), default="svarwb-out", show_default=True,
                     help="Output directory.")(f)
    f = click.option("--threads", type=int, default=None,
                     help=f"Worker threads (default: ${THREADS_ENV} or 1).")(f)
    f = click.option("--seed", type=int, default=None, help="Override the config seed.")(f)
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True,
                     help="TOML run configuration.")(f)
    return f


data_option = click.option("--data", "data_path", type=click.Path(dir_okay=False), default=None,
                           help="Override data.path.")


@click.group()
@click.version_option(__version__, prog_name="svarwb")
def main():
    """SVARs with exogenous volatility breaks: identification, estimation and inference."""


# ------------------------------------------------------------- identify

@main.command("identify")
@common_options
@data_option
def identify_cmd(config_path, seed, threads, out, data_path):
    """Order and rank conditions for the declared restrictions."""
    _run(lambda: run_identify(config_path, seed, threads, out, data_path))


def run_identify(config_path, seed, threads, out, data_path=None):
    t0 = time.perf_counter()
    cfg, base, seed, threads, art = _setup(config_path, seed, threads, out, "identify", data_path)
    data = cf.load_data(cfg, base)[0] if cfg.data is not None else None
    n, s = cf.n_variables(cfg, data), cf.n_regimes(cfg, data)
    program = cf.build_program(cfg, n, s)
    v = identify(program, cfg.identify.draws, np.random.default_rng(seed))
    f_reg = program.f_per_regime()
    click.echo(f"n={n} s={s} transform: {', '.join(program.transform.labels())}")
    click.echo(f"order condition: f={program.f_total} vs s·ñ={s}·{program.n_tilde}={s * program.n_tilde}"
               f" -> {'ok' if v.order_ok else 'fails'}")
    click.echo(f"route: {v.route}")
    for j, k in enumerate(program.order):
        click.echo(f"  shock {k + 1}: f={program.f[k]} (per regime {f_reg[:, k].tolist()}),"
                   f" needs s(n-j)={s * (n - j - 1)} at position {j + 1}")
    if v.partial:
        click.echo("  partially identified shocks: " + ", ".join(str(k + 1) for k in v.partial))
    click.echo(v.message())
    rows = []
    res = {r["shock"]: r for r in v.shock_results}
    for j, k in enumerate(program.order):
        r = res.get(k, {})
        rows.append([k + 1, j + 1, program.f[k], s * (n - j - 1), *f_reg[:, k].tolist(),
                     bool(v.recursive_flags[j]) if j < len(v.recursive_flags) else False,
                     bool(r.get("identified", v.identified)), k in v.partial])
    art.table("identification.csv",
              ["shock", "position", "f", "required", *[f"f_regime{p + 1}" for p in range(s)],
               "recursive_order_ok", "identified", "partial"], rows)
    art.report({"command": "identify", "message": v.message(), "verdict": v.to_dict(),
                "restrictions": program.summary(), "seconds": time.perf_counter() - t0})


# ------------------------------------------------------------- estimate

def _reduced_rows(model: mc.RegimeModel):
    for p, reg in enumerate(model.regimes):
        n = reg.n
        for i in range(n):
            yield [p + 1, "intercept", 0, i + 1, 1, reg.intercept[i]]
        for lag in range(reg.l):
            for i in range(n):
                for j in range(n):
                    yield [p + 1, "lag", lag + 1, i + 1, j + 1, reg.lags[lag, i, j]]
        for i in range(n):
            for j in range(n):
                yield [p + 1, "sigma", 0, i + 1, j + 1, reg.sigma[i, j]]


@main.command("estimate")
@common_options
@data_option
def estimate_cmd(config_path, seed, threads, out, data_path):
    """OLS point estimate and the enumerated structural solutions."""
    _run(lambda: run_estimate(config_path, seed, threads, out, data_path))


def run_estimate(config_path, seed, threads, out, data_path=None):
    t0 = time.perf_counter()
    cfg, base, seed, threads, art = _setup(config_path, seed, threads, out, "estimate", data_path)
    data, names = cf.load_data(cfg, base)
    n, s = cf.n_variables(cfg, data), cf.n_regimes(cfg, data)
    program = cf.build_program(cfg, n, s)
    model = ols_fit(data)
    model.validate()
    art.table("reduced_form.csv", ["regime", "block", "lag", "row", "col", "value"], _reduced_rows(model))
    rs = enumerate_rotations(program, model, cfg.solver.route, cf.solver_config(cfg),
                             np.random.default_rng(seed))
    if rs.empty:
        art.report({"command": "estimate", "solutions": 0, "provenance": rs.provenance,
                    "diagnostics": rs.diagnostics})
        raise Infeasible("no admissible structural parameters")
    H = cfg.inference.horizons
    sol_rows, irf_rows = [], []
    for m, Q in enumerate(rs.solutions):
        for p, reg in enumerate(model.regimes):
            st = mc.reduced_to_structural(reg, Q[p])
            for name, M in (("A0", st.a0), ("A_plus", st.a_plus)):
                for i in range(M.shape[0]):
                    for j in range(M.shape[1]):
                        sol_rows.append([m + 1, p + 1, name, i + 1, j + 1, M[i, j]])
            irf = mc.impulse_responses(reg, Q[p], H)
            for h in range(H + 1):
                for i in range(n):
                    for j in range(n):
                        irf_rows.append([m + 1, p + 1, h, names[i], j + 1, irf[h, i, j]])
    art.table("solutions.csv", ["solution", "regime", "matrix", "row", "col", "value"], sol_rows)
    art.table("irf.csv", ["solution", "regime", "horizon", "variable", "shock", "value"], irf_rows)
    click.echo(f"{rs.M} admissible solution(s) via {rs.provenance} ({rs.complete})")
    art.report({"command": "estimate", "solutions": rs.M, "provenance": rs.provenance,
                "completeness": rs.complete, "diagnostics": rs.diagnostics,
                "stationary": [r.is_stationary() for r in model.regimes],
                "log_likelihood": log_likelihood(data, model), "seconds": time.perf_counter() - t0})


# ---------------------------------------------------------------- infer

def _func_label(f, names) -> str:
    return f"{f.kind}:{names[f.variable]}:shock{f.shock + 1}"


def _fan_chart(path: Path, title: str, horizons, per_regime):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "svarwb"
    fig, axes = plt.subplots(1, len(per_regime), figsize=(4 * len(per_regime), 3), squeeze=False)
    for ax, (p, bayes, robust) in zip(axes[0], per_regime):
        for c in inf.FAN_LEVELS:
            lo = [b.bands[c][0] for b in bayes]
            hi = [b.bands[c][1] for b in bayes]
            ax.fill_between(horizons, lo, hi, color="tab:blue", alpha=0.15, linewidth=0)
        ax.plot(horizons, [b.median for b in bayes], color="tab:blue", linewidth=1)
        ax.plot(horizons, [r.region[0] for r in robust], "k--", linewidth=0.8)
        ax.plot(horizons, [r.region[1] for r in robust], "k--", linewidth=0.8)
        ax.set_title(f"regime {p + 1}")
        ax.set_xlabel("horizon")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


@main.command("infer")
@common_options
@data_option
def infer_cmd(config_path, seed, threads, out, data_path):
    """Bayesian fans, projection sets and robust-Bayes regions."""
    _run(lambda: run_infer(config_path, seed, threads, out, data_path))


def run_infer(config_path, seed, threads, out, data_path=None):
    t0 = time.perf_counter()
    cfg, base, seed, threads, art = _setup(config_path, seed, threads, out, "infer", data_path)
    data, names = cf.load_data(cfg, base)
    n, s = cf.n_variables(cfg, data), cf.n_regimes(cfg, data)
    program = cf.build_program(cfg, n, s)
    funcs = cf.functionals(cfg, n)
    ic = cfg.inference
    horizons = list(range(ic.horizons + 1))
    seeds = np.random.SeedSequence(seed).spawn(3)
    ident_seed, post_seed, rot_seed = (int(ss.generate_state(1)[0]) for ss in seeds)
    if program.f_total > s * program.n_tilde:
        raise ConfigError(f"over-identified program (f={program.f_total} > s·ñ={s * program.n_tilde}) "
                          "is not supported by inference")
    verdict = identify(program, cfg.identify.draws, np.random.default_rng(ident_seed))
    locally = program.f_total == s * program.n_tilde and verdict.identified
    draws = posterior_draws(data, cf.posterior_spec(cfg, post_seed))
    if locally:
        records = inf.enumerate_records(program, draws, funcs, horizons, cfg.solver.route,
                                        cf.solver_config(cfg), rot_seed, threads)
    else:
        records = inf.sample_records(program, draws, funcs, horizons, ic.rotations, rot_seed, threads)
    first = records[0]
    art.table("draws.csv",
              ["draw", "log_density", "stationary", "admissible", "flag", "proposals", "accepted",
               *[f"M_regime{p + 1}" for p in range(s)]],
              [[r.index, r.log_density, all(d.stationary), r.admissible, r.flag or "-", r.proposals,
                r.accepted, *[r.M(p) if r.paths else 0 for p in range(s)]]
               for r, d in zip(first, draws)])
    nonempty = inf.nonempty_probability(first)
    if not any(r.admissible and not r.flag for r in first):
        art.report({"command": "infer", "nonempty_probability": nonempty})
        raise AllDrawsInadmissible("no posterior draw has an admissible rotation")
    bayes_rows, hpd_rows, robust_rows, proj_rows = [], [], [], []
    multimodal = []
    for f, recs in zip(funcs, records):
        label = _func_label(f, names)
        per_regime = []
        for p in range(s):
            bs = [inf.bayes_posterior(recs, p, hi, h) for hi, h in enumerate(horizons)]
            rb = [inf.robust_bayes(recs, p, hi, ic.alpha, h) for hi, h in enumerate(horizons)]
            per_regime.append((p, bs, rb))
            for b in bs:
                bayes_rows.append([label, p + 1, b.horizon, b.mean, b.median,
                                   *[x for c in inf.FAN_LEVELS for x in b.bands[c]],
                                   *b.deciles, b.bimodality, b.multimodal])
                for c in inf.FAN_LEVELS:
                    for k, (lo, hi) in enumerate(b.hpd[c]):
                        hpd_rows.append([label, p + 1, b.horizon, c, k + 1, lo, hi])
            if any(b.multimodal for b in bs):
                multimodal.append(f"{label} regime {p + 1}")
            for r in rb:
                lo, hi = r.region
                robust_rows.append([label, p + 1, r.horizon, r.lower_mean, r.upper_mean, r.center,
                                    r.radius, lo, hi, r.bayes_mean, r.nonempty_prob])
            if locally:
                pr = inf.projection_confidence_set(recs, p, ic.alpha, ic.projection)
                for hi_, h in enumerate(horizons):
                    for k, (lo, hi) in enumerate(pr.clusters[hi_]):
                        proj_rows.append([label, p + 1, h, "cluster", k + 1, lo, hi])
                    for k, (lo, hi) in enumerate(pr.union[hi_]):
                        proj_rows.append([label, p + 1, h, "union", k + 1, lo, hi])
        svg = f"fan_{f.kind}_{f.variable + 1}_{f.shock + 1}.svg"
        _fan_chart(art.out / svg, label, horizons, per_regime)
        art.files.append(svg)
    band_cols = [f"{side}{int(round(c * 100))}" for c in inf.FAN_LEVELS for side in ("lo", "hi")]
    art.table("bayes.csv", ["functional", "regime", "horizon", "mean", "median", *band_cols,
                            "q10", "q90", "bimodality", "multimodal"], bayes_rows)
    art.table("hpd.csv", ["functional", "regime", "horizon", "level", "interval", "lo", "hi"], hpd_rows)
    art.table("robust.csv", ["functional", "regime", "horizon", "lower_mean", "upper_mean", "center",
                             "radius", "region_lo", "region_hi", "bayes_mean", "nonempty_prob"],
              robust_rows)
    if locally:
        art.table("projection.csv", ["functional", "regime", "horizon", "kind", "index", "lo", "hi"],
                  proj_rows)
    click.echo(f"identification: {verdict.message()}")
    click.echo(f"route: {'enumeration' if locally else 'rotation sampling'}; "
               f"{len(draws)} posterior draws; P(nonempty)={nonempty:.3f}")
    for m in multimodal:
        click.echo(f"multimodal posterior: {m}")
    art.report({"command": "infer", "identification": verdict.message(),
                "route": "enumeration" if locally else "sampling", "draws": len(draws),
                "rotations_per_draw": None if locally else ic.rotations, "alpha": ic.alpha,
                "nonempty_probability": nonempty, "multimodal": multimodal,
                "projection_labeling": ic.projection if locally else None,
                "robust_grid": {"points": inf.ROBUST_GRID, "padding": 0.1, "refine": "golden-section"},
                "kde_points": inf.KDE_POINTS, "seconds": time.perf_counter() - t0})


# ------------------------------------------------------------- simulate

@main.command("simulate")
@common_options
@click.option("--T", "T", type=int, default=None, help="Override simulate.T.")
def simulate_cmd(config_path, seed, threads, out, T):
    """Simulate a dataset from the [simulate] DGP."""
    _run(lambda: run_simulate(config_path, seed, threads, out, T))


def run_simulate(config_path, seed, threads, out, T=None):
    cfg, base, seed, threads, art = _setup(config_path, seed, threads, out, "simulate")
    regs = cf.simulation_regimes(cfg)
    sim = cfg.simulate
    T = sim.T if T is None else T
    breaks = [b - 1 for b in sim.break_dates]
    try:
        y = simulate_reduced(regs, T, breaks, np.random.default_rng(seed), sim.burn_in)
    except ValueError as exc:
        raise ConfigError(f"simulate: {exc}") from None
    n = y.shape[1]
    art.table(sim.output, [f"y{i + 1}" for i in range(n)], y.tolist())
    click.echo(f"wrote {T} x {n} sample to {art.out / sim.output}")
    art.report({"command": "simulate", "T": T, "n": n, "break_rows": sim.break_dates,
                "stationary": [r.is_stationary() for r in regs]})


if __name__ == "__main__":
    main()
