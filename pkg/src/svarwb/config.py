"""Run configuration: TOML schema, validation and translation to the API.

Indices in the config file are 1-based (regimes, variables, shocks, data
rows); everything handed to the library is 0-based.
"""
from __future__ import annotations

import csv
import re
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import model as mc
from .enumeration import Functional, SolverConfig
from .errors import ConfigError, SvarwbError
from .reduced_form import PosteriorSpec, RegimeData
from .restrictions import (
    Block,
    FevRestriction,
    Target,
    Term,
    TransformSpec,
    compile_restrictions,
    equal_across,
    ranking,
    sign,
    zero,
)

SCHEMA_VERSION = 1
TargetKind = Literal["A0", "IR", "CIR"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    variables: int | None = Field(None, ge=1)
    regimes: int = Field(1, ge=1)
    lags: int = Field(1, ge=1)
    normalization: Literal["diag", "none"] = "diag"


class DataSection(_Section):
    path: str
    columns: list[str] | None = None
    date_column: str | None = None
    break_dates: list[int | str] = []


class TermSpec(_Section):
    regime: int = Field(ge=1)
    target: TargetKind
    horizon: int = Field(0, ge=0)
    variable: int = Field(ge=1)
    coef: float = 1.0


class RestrictionSpec(_Section):
    kind: Literal["zero", "equal_across_regimes", "sign", "ranking", "fev_bound"]
    shock: int = Field(ge=1)
    target: TargetKind | None = None
    horizon: int = Field(0, ge=0)
    variable: int | None = Field(None, ge=1)
    regime: int | None = Field(None, ge=1)
    regimes: list[int] | None = None
    direction: Literal["+", "-"] = "+"
    terms: list[TermSpec] | None = None
    weights: list[float] | None = None
    other_shock: int | None = Field(None, ge=1)
    other_weights: list[float] | None = None
    other_horizon: int | None = Field(None, ge=0)
    lower: float | None = None
    upper: float | None = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        need = {
            "zero": ("target", "variable", "regime"),
            "equal_across_regimes": ("target", "variable"),
            "sign": ("target", "variable", "regime"),
            "ranking": ("terms",),
            "fev_bound": ("variable", "weights"),
        }[self.kind]
        missing = [f for f in need if getattr(self, f) is None]
        if missing:
            raise ValueError(f"kind={self.kind!r} requires {', '.join(missing)}")
        if self.kind == "fev_bound" and self.lower is None and self.upper is None:
            raise ValueError("fev_bound requires lower and/or upper")
        return self


class TransformSection(_Section):
    blocks: list[str]


class IdentifySection(_Section):
    draws: int = Field(10_000, ge=1)


class SolverSection(_Section):
    route: Literal["auto", "general", "recursive", "sequential"] = "auto"
    starts: int | None = Field(None, ge=1)
    max_iter: int = Field(60, ge=1)
    tol: float = Field(1e-11, gt=0)
    strict: bool = True


class FunctionalSpec(_Section):
    kind: Literal["IR", "CIR", "FEV"] = "IR"
    variable: int = Field(ge=1)
    shock: int = Field(ge=1)


class InferenceSection(_Section):
    prior: Literal["diffuse", "conjugate"] = "diffuse"
    draws: int = Field(3000, ge=1)
    rotations: int = Field(1000, ge=1)
    alpha: float = Field(0.9, gt=0, lt=1)
    horizons: int = Field(8, ge=0)
    functionals: list[FunctionalSpec] | None = None
    projection: Literal["switching_label", "fixed_label"] = "switching_label"
    nu0: float | None = None


class SimRegime(_Section):
    intercept: list[float] | None = None
    lags: list[list[list[float]]] | None = None
    sigma: list[list[float]] | None = None
    a0: list[list[float]] | None = None
    a_plus: list[list[float]] | None = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.sigma is None) == (self.a0 is None):
            raise ValueError("give either sigma (reduced form) or a0 (structural)")
        if self.a0 is not None and (self.lags is not None or self.intercept is not None):
            raise ValueError("structural regimes take a_plus, not intercept/lags")
        return self


class SimulateSection(_Section):
    T: int = Field(ge=1)
    break_dates: list[int] = []
    burn_in: int = Field(200, ge=0)
    output: str = "simulated.csv"
    regimes: list[SimRegime]


class RunConfig(_Section):
    schema_version: Literal[1]
    seed: int = 0
    model: ModelSection = ModelSection()
    data: DataSection | None = None
    transform: TransformSection | None = None
    restrictions: list[RestrictionSpec] = []
    identify: IdentifySection = IdentifySection()
    solver: SolverSection = SolverSection()
    inference: InferenceSection = InferenceSection()
    simulate: SimulateSection | None = None


# ------------------------------------------------------------- loading

_HEADER = re.compile(r"^\s*(\[\[?)\s*([^\]]+?)\s*\]\]?")


def _locate(text: str, loc: tuple) -> int | None:
    """Best-effort 1-based line of a pydantic error location in the TOML text."""
    lines = text.splitlines()
    headers = [(i, m.group(1) == "[[", m.group(2)) for i, line in enumerate(lines)
               if (m := _HEADER.match(line))]
    start, stop = 0, len(lines)
    keys = [k for k in loc if isinstance(k, str)]
    path = []
    idx_iter = iter(k for k in loc if isinstance(k, int))
    found_header = None
    for key in loc:
        if isinstance(key, int):
            continue
        path.append(key)
        name = ".".join(path)
        matches = [h for h in headers if h[2] == name]
        if not matches:
            break
        if matches[0][1]:
            nth = next(idx_iter, 0)
            if nth >= len(matches):
                break
            found_header = matches[nth][0]
        else:
            found_header = matches[0][0]
    if found_header is not None:
        start = found_header + 1
        later = [h[0] for h in headers if h[0] > found_header]
        stop = later[0] if later else len(lines)
    elif headers:
        stop = headers[0][0]
    if keys:
        pat = re.compile(rf"^\s*{re.escape(keys[-1])}\s*=")
        for i in range(start, stop):
            if pat.match(lines[i]):
                return i + 1
    return found_header + 1 if found_header is not None else None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        where = f"{source}:{m.group(1)}" if m else source
        raise ConfigError(f"{where}: {exc}") from None
    if "schema_version" in raw and raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"{source}: unsupported schema_version {raw['schema_version']!r}, "
                          f"expected {SCHEMA_VERSION}")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            where = ".".join(str(k) for k in err["loc"]) or "<root>"
            line = _locate(text, err["loc"])
            at = f"{source}:{line}" if line else source
            msgs.append(f"{at}: {where}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None


def load_config(path: str | Path) -> tuple[RunConfig, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path)), text


# ---------------------------------------------------------- translation

def _target(kind: str, variable: int, horizon: int) -> Target:
    return Target(kind, variable - 1, horizon if kind == "IR" else 0)


def parse_block(label: str) -> Block:
    m = re.fullmatch(r"\s*(A0|CIR|IR)\s*(?:[:(]?\s*(\d+)\s*\)?)?\s*", label)
    if not m or (m.group(1) == "IR") != (m.group(2) is not None):
        raise ConfigError(f"bad transform block {label!r}; use A0, IR<h> or CIR")
    return Block(m.group(1), int(m.group(2) or 0))


def n_variables(cfg: RunConfig, data: RegimeData | None = None) -> int:
    if data is not None:
        if cfg.model.variables is not None and cfg.model.variables != data.n:
            raise ConfigError(f"model.variables={cfg.model.variables} but the data has {data.n} columns")
        return data.n
    if cfg.model.variables is None:
        raise ConfigError("model.variables is required when no data is given")
    return cfg.model.variables


def n_regimes(cfg: RunConfig, data: RegimeData | None = None) -> int:
    if data is None:
        return cfg.model.regimes
    if "regimes" in cfg.model.model_fields_set and cfg.model.regimes != data.s:
        raise ConfigError(f"model.regimes={cfg.model.regimes} but {data.s - 1} break dates given")
    return data.s


def declarations(cfg: RunConfig, n: int, s: int) -> list:
    out = []
    for i, r in enumerate(cfg.restrictions):
        where = f"restrictions[{i}]"
        try:
            out.extend(_declare(r, s))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return out


def _declare(r: RestrictionSpec, s: int) -> list:
    shock = r.shock - 1
    direction = 1 if r.direction == "+" else -1
    if r.kind == "zero":
        return [zero(shock, _target(r.target, r.variable, r.horizon), r.regime - 1)]
    if r.kind == "sign":
        return [sign(shock, _target(r.target, r.variable, r.horizon), r.regime - 1, direction)]
    if r.kind == "equal_across_regimes":
        regs = [p - 1 for p in (r.regimes or range(1, s + 1))]
        if len(regs) < 2:
            raise ValueError("equal_across_regimes needs at least two regimes")
        tgt = _target(r.target, r.variable, r.horizon)
        return [equal_across(shock, tgt, (a, b)) for a, b in zip(regs, regs[1:])]
    if r.kind == "ranking":
        terms = [Term(t.regime - 1, _target(t.target, t.variable, t.horizon), t.coef) for t in r.terms]
        return [ranking(shock, terms, direction)]
    return [FevRestriction(
        variable=r.variable - 1, shock=shock, horizon=r.horizon, weights=tuple(r.weights),
        other_shock=None if r.other_shock is None else r.other_shock - 1,
        other_weights=None if r.other_weights is None else tuple(r.other_weights),
        other_horizon=r.other_horizon,
        lower=-np.inf if r.lower is None else r.lower,
        upper=np.inf if r.upper is None else r.upper)]


def build_program(cfg: RunConfig, n: int, s: int):
    transform = None
    if cfg.transform is not None:
        transform = TransformSpec(tuple(parse_block(b) for b in cfg.transform.blocks))
    return compile_restrictions(declarations(cfg, n, s), n=n, s=s, transform=transform,
                                normalization=cfg.model.normalization)


def solver_config(cfg: RunConfig) -> SolverConfig:
    sv = cfg.solver
    return SolverConfig(starts=sv.starts, max_iter=sv.max_iter, tol=sv.tol, strict=sv.strict)


def posterior_spec(cfg: RunConfig, seed: int) -> PosteriorSpec:
    inf = cfg.inference
    return PosteriorSpec(prior=inf.prior, draws=inf.draws, seed=seed, nu0=inf.nu0)


def functionals(cfg: RunConfig, n: int) -> list[Functional]:
    if cfg.inference.functionals is None:
        return [Functional("IR", i, j) for j in range(n) for i in range(n)]
    out = []
    for f in cfg.inference.functionals:
        if f.variable > n or f.shock > n:
            raise ConfigError(f"functional {f.kind}({f.variable},{f.shock}) out of range for n={n}")
        out.append(Functional(f.kind, f.variable - 1, f.shock - 1))
    return out


def read_csv(path: str | Path, columns=None, date_column=None) -> tuple[np.ndarray, list[str], list[str] | None]:
    """Numeric matrix, its column names and the optional date strings."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read data file {path}: {exc}") from None
    if len(rows) < 2:
        raise ConfigError(f"data file {path} has no observations")
    header = [h.strip() for h in rows[0]]
    if date_column is not None and date_column not in header:
        raise ConfigError(f"date column {date_column!r} not in {path}")
    names = columns or [h for h in header if h != date_column]
    missing = [c for c in names if c not in header]
    if missing:
        raise ConfigError(f"columns {missing} not in {path}")
    idx = [header.index(c) for c in names]
    try:
        y = np.array([[float(r[i]) for i in idx] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"non-numeric value in {path}: {exc}") from None
    dates = None
    if date_column is not None:
        di = header.index(date_column)
        dates = [r[di].strip() for r in rows[1:] if r]
    return y, names, dates


def resolve_breaks(breaks, dates: list[str] | None, T: int) -> tuple[int, ...]:
    """1-based rows or date strings -> 0-based row of each regime's first observation."""
    out = []
    for b in breaks:
        if isinstance(b, str):
            if dates is None:
                raise ConfigError(f"break date {b!r} needs data.date_column")
            if b not in dates:
                raise ConfigError(f"break date {b!r} not found in the date column")
            out.append(dates.index(b))
        else:
            if not 1 <= b <= T:
                raise ConfigError(f"break row {b} outside 1..{T}")
            out.append(b - 1)
    return tuple(out)


def load_data(cfg: RunConfig, base: Path) -> tuple[RegimeData, list[str]]:
    if cfg.data is None:
        raise ConfigError("this command needs a [data] section")
    path = Path(cfg.data.path)
    if not path.is_absolute():
        path = base / path
    y, names, dates = read_csv(path, cfg.data.columns, cfg.data.date_column)
    breaks = resolve_breaks(cfg.data.break_dates, dates, y.shape[0])
    try:
        return RegimeData(y, breaks, cfg.model.lags), names
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def simulation_regimes(cfg: RunConfig) -> list[mc.ReducedFormRegime]:
    sim = cfg.simulate
    if sim is None:
        raise ConfigError("this command needs a [simulate] section")
    regs = []
    for i, r in enumerate(sim.regimes):
        try:
            if r.a0 is not None:
                a0 = np.array(r.a0, dtype=float)
                a_plus = np.zeros((a0.shape[0], 1)) if r.a_plus is None else np.array(r.a_plus, dtype=float)
                regs.append(mc.structural_to_reduced([mc.StructuralRegime(a0, a_plus)])[0])
            else:
                sigma = np.array(r.sigma, dtype=float)
                k = sigma.shape[0]
                lags = np.zeros((1, k, k)) if r.lags is None else np.array(r.lags, dtype=float)
                c = np.zeros(k) if r.intercept is None else np.array(r.intercept, dtype=float)
                regs.append(mc.ReducedFormRegime(c, lags, sigma))
        except (ValueError, SvarwbError) as exc:
            raise ConfigError(f"simulate.regimes[{i}]: {exc}") from None
    if len({(r.n, r.l) for r in regs}) != 1:
        raise ConfigError("simulate.regimes must share n and the lag order")
    if len(sim.break_dates) != len(regs) - 1:
        raise ConfigError("simulate.break_dates needs one entry fewer than simulate.regimes")
    return regs
