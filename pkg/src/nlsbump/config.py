"""Experiment configuration: parsing, validation, serialization.

The format is line-oriented ``key = value`` with dotted section prefixes,
``#`` comments, and space-separated numbers for vectors:

    problem.dim = 2
    problem.well.0.center = -1 0
    schedule.eps = 0.4 0.3 0.25

Floats serialize with 17 significant digits, so parse -> serialize ->
parse is the identity.  Every violation of a module precondition is
reported as a ConfigError naming the offending line or field.
"""

from dataclasses import dataclass, field, fields, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, NlsbumpError
from .grid import ProblemSpec, TensorGrid, make_grid, make_problem
from .potential import PotentialModel, WellSpec, make_multiwell
from .solver import NewtonConfig


@dataclass(frozen=True)
class ExperimentConfig:
    dim: int
    p: float
    exponent: float
    patch_radius: float
    wells: Tuple[WellSpec, ...]
    box_lo: Tuple[float, ...]
    box_hi: Tuple[float, ...]
    eps_schedule: Tuple[float, ...]
    background: Optional[float] = None
    spacing_divisor: float = 6.0
    solver: NewtonConfig = field(default_factory=NewtonConfig)
    ball_radius: Optional[float] = None
    pohozaev_resolution: int = 48
    fit_drop: int = 0
    uniqueness_amp: float = 0.1
    uniqueness_shift: float = 0.3
    uniqueness_rtol: float = 1e-8
    seed: int = 12345
    output_dir: str = "out"


def fmt_float(x: float) -> str:
    return f"{float(x):.17g}"


def _fmt_vec(xs) -> str:
    return " ".join(fmt_float(x) for x in xs)


def _parse_float(raw: str, where: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {raw!r}")


def _parse_int(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {raw!r}")


def _parse_vec(raw: str, where: str) -> Tuple[float, ...]:
    parts = raw.split()
    if not parts:
        raise ConfigError(f"{where}: expected numbers, got an empty value")
    return tuple(_parse_float(tok, where) for tok in parts)


class _Entries:
    """Raw key/value lines with consumption tracking."""

    def __init__(self, text: str):
        self.items: Dict[str, Tuple[str, int]] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(
                    f"line {lineno}: expected 'key = value', got {body!r}")
            key, _, value = body.partition("=")
            key, value = key.strip(), value.strip()
            if not key:
                raise ConfigError(f"line {lineno}: missing key before '='")
            if key in self.items:
                first = self.items[key][1]
                raise ConfigError(
                    f"line {lineno}: duplicate key {key!r} (first set on "
                    f"line {first})")
            self.items[key] = (value, lineno)

    def take(self, key: str) -> Optional[str]:
        entry = self.items.pop(key, None)
        return entry[0] if entry is not None else None

    def require(self, key: str) -> str:
        value = self.take(key)
        if value is None:
            raise ConfigError(f"missing required key {key!r}")
        return value

    def leftovers(self):
        return sorted((line, key) for key, (_, line) in self.items.items())


def _collect_wells(entries: _Entries, dim: int) -> Tuple[WellSpec, ...]:
    indices = set()
    for key in list(entries.items):
        parts = key.split(".")
        if len(parts) == 4 and parts[:2] == ["problem", "well"]:
            if not parts[2].isdigit():
                raise ConfigError(
                    f"well index must be a number in {key!r}")
            indices.add(int(parts[2]))
    if not indices:
        raise ConfigError("config defines no wells (problem.well.0.*)")
    if indices != set(range(len(indices))):
        raise ConfigError(
            f"well indices must be 0..{len(indices) - 1} without gaps, "
            f"got {sorted(indices)}")
    wells = []
    for j in range(len(indices)):
        stem = f"problem.well.{j}"
        center = _parse_vec(entries.require(f"{stem}.center"),
                            f"{stem}.center")
        if len(center) != dim:
            raise ConfigError(
                f"{stem}.center: expected {dim} coordinates, "
                f"got {len(center)}")
        depth = _parse_float(entries.require(f"{stem}.depth"),
                             f"{stem}.depth")
        coeff_raw = entries.take(f"{stem}.coeff")
        coeff = 1.0 if coeff_raw is None else _parse_float(
            coeff_raw, f"{stem}.coeff")
        wells.append(WellSpec(center=np.array(center), depth=depth,
                              coeff=coeff))
    return tuple(wells)


def _solver_config(entries: _Entries) -> NewtonConfig:
    kwargs = {}
    casts = {"max_newton": _parse_int, "krylov_max": _parse_int,
             "max_backtracks": _parse_int, "max_regularizations": _parse_int}
    for fld in fields(NewtonConfig):
        key = f"solver.{fld.name}"
        raw = entries.take(key)
        if raw is not None:
            kwargs[fld.name] = casts.get(fld.name, _parse_float)(raw, key)
    return NewtonConfig(**kwargs)


def parse_config(text: str) -> ExperimentConfig:
    entries = _Entries(text)
    dim = _parse_int(entries.require("problem.dim"), "problem.dim")
    if dim not in (1, 2, 3):
        raise ConfigError(f"problem.dim: must be 1, 2, or 3, got {dim}")

    def opt_float(key, default):
        raw = entries.take(key)
        return default if raw is None else _parse_float(raw, key)

    def opt_int(key, default):
        raw = entries.take(key)
        return default if raw is None else _parse_int(raw, key)

    box_lo = _parse_vec(entries.require("grid.lo"), "grid.lo")
    box_hi = _parse_vec(entries.require("grid.hi"), "grid.hi")
    for key, vec in (("grid.lo", box_lo), ("grid.hi", box_hi)):
        if len(vec) != dim:
            raise ConfigError(
                f"{key}: expected {dim} coordinates, got {len(vec)}")
    background = entries.take("problem.background")
    ball = entries.take("analysis.ball_radius")
    out_dir = entries.take("run.output_dir")
    cfg = ExperimentConfig(
        dim=dim,
        p=_parse_float(entries.require("problem.p"), "problem.p"),
        exponent=_parse_float(entries.require("problem.exponent"),
                              "problem.exponent"),
        patch_radius=_parse_float(entries.require("problem.patch_radius"),
                                  "problem.patch_radius"),
        wells=_collect_wells(entries, dim),
        box_lo=box_lo,
        box_hi=box_hi,
        eps_schedule=_parse_vec(entries.require("schedule.eps"),
                                "schedule.eps"),
        background=None if background is None
        else _parse_float(background, "problem.background"),
        spacing_divisor=opt_float("grid.spacing_divisor", 6.0),
        solver=_solver_config(entries),
        ball_radius=None if ball is None
        else _parse_float(ball, "analysis.ball_radius"),
        pohozaev_resolution=opt_int("analysis.pohozaev_resolution", 48),
        fit_drop=opt_int("analysis.fit_drop", 0),
        uniqueness_amp=opt_float("analysis.uniqueness_amp", 0.1),
        uniqueness_shift=opt_float("analysis.uniqueness_shift", 0.3),
        uniqueness_rtol=opt_float("analysis.uniqueness_rtol", 1e-8),
        seed=opt_int("run.seed", 12345),
        output_dir="out" if out_dir is None else out_dir,
    )
    stray = entries.leftovers()
    if stray:
        line, key = stray[0]
        raise ConfigError(f"line {line}: unknown key {key!r}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Check every module precondition the config can violate."""
    if cfg.dim == 3 and cfg.p >= 6.0:
        raise ConfigError(
            f"problem.p: {cfg.p} is supercritical in dim 3 (needs p < 6)")
    if not cfg.p > 2.0:
        raise ConfigError(f"problem.p: need p > 2, got {cfg.p}")
    try:
        make_potential(cfg)
    except NlsbumpError as exc:
        raise ConfigError(f"problem wells: {exc}") from exc
    if any(h <= l for l, h in zip(cfg.box_lo, cfg.box_hi)):
        raise ConfigError("grid box: need hi > lo on every axis")
    sched = cfg.eps_schedule
    if any(e <= 0.0 for e in sched):
        raise ConfigError("schedule.eps: values must be positive")
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise ConfigError("schedule.eps: must be strictly decreasing")
    if not cfg.spacing_divisor >= 1.0:
        raise ConfigError("grid.spacing_divisor: must be at least 1")
    try:
        cfg.solver.validate()
    except NlsbumpError as exc:
        raise ConfigError(f"solver: {exc}") from exc
    if cfg.ball_radius is not None and not cfg.ball_radius > 0.0:
        raise ConfigError("analysis.ball_radius: must be positive")
    if cfg.pohozaev_resolution < 2:
        raise ConfigError("analysis.pohozaev_resolution: must be at least 2")
    if cfg.fit_drop < 0:
        raise ConfigError("analysis.fit_drop: must be nonnegative")
    if not 0.0 <= cfg.uniqueness_amp <= 0.2:
        raise ConfigError(
            "analysis.uniqueness_amp: must lie in [0, 0.2] (the probe's "
            "amplitude basin)")
    if not 0.0 <= cfg.uniqueness_shift <= 0.5:
        raise ConfigError(
            "analysis.uniqueness_shift: must lie in [0, 0.5] (the probe's "
            "center basin, in units of eps)")
    if not cfg.uniqueness_rtol > 0.0:
        raise ConfigError("analysis.uniqueness_rtol: must be positive")
    if not cfg.output_dir:
        raise ConfigError("run.output_dir: must be nonempty")


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [
        f"problem.dim = {cfg.dim}",
        f"problem.p = {fmt_float(cfg.p)}",
        f"problem.exponent = {fmt_float(cfg.exponent)}",
        f"problem.patch_radius = {fmt_float(cfg.patch_radius)}",
    ]
    if cfg.background is not None:
        lines.append(f"problem.background = {fmt_float(cfg.background)}")
    for j, w in enumerate(cfg.wells):
        lines.append(f"problem.well.{j}.center = {_fmt_vec(w.center)}")
        lines.append(f"problem.well.{j}.depth = {fmt_float(w.depth)}")
        lines.append(f"problem.well.{j}.coeff = {fmt_float(w.coeff)}")
    lines.append(f"grid.lo = {_fmt_vec(cfg.box_lo)}")
    lines.append(f"grid.hi = {_fmt_vec(cfg.box_hi)}")
    lines.append(f"grid.spacing_divisor = {fmt_float(cfg.spacing_divisor)}")
    lines.append(f"schedule.eps = {_fmt_vec(cfg.eps_schedule)}")
    for fld in fields(NewtonConfig):
        value = getattr(cfg.solver, fld.name)
        shown = str(value) if isinstance(value, int) else fmt_float(value)
        lines.append(f"solver.{fld.name} = {shown}")
    if cfg.ball_radius is not None:
        lines.append(f"analysis.ball_radius = {fmt_float(cfg.ball_radius)}")
    lines.append(
        f"analysis.pohozaev_resolution = {cfg.pohozaev_resolution}")
    lines.append(f"analysis.fit_drop = {cfg.fit_drop}")
    lines.append(f"analysis.uniqueness_amp = {fmt_float(cfg.uniqueness_amp)}")
    lines.append(f"analysis.uniqueness_shift = {fmt_float(cfg.uniqueness_shift)}")
    lines.append(f"analysis.uniqueness_rtol = {fmt_float(cfg.uniqueness_rtol)}")
    lines.append(f"run.seed = {cfg.seed}")
    lines.append(f"run.output_dir = {cfg.output_dir}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_config(cfg))


def make_potential(cfg: ExperimentConfig) -> PotentialModel:
    return make_multiwell(cfg.wells, exponent=cfg.exponent,
                          patch_radius=cfg.patch_radius,
                          background=cfg.background)


def grid_for(cfg: ExperimentConfig, eps: float) -> TensorGrid:
    """The production grid at one eps: spacing eps / spacing_divisor."""
    h = eps / cfg.spacing_divisor
    counts = [int(round((hi - lo) / h)) + 1
              for lo, hi in zip(cfg.box_lo, cfg.box_hi)]
    return make_grid(lo=list(cfg.box_lo), hi=list(cfg.box_hi),
                     counts=counts)


def problem_at(cfg: ExperimentConfig, eps: float) -> ProblemSpec:
    return make_problem(eps=eps, p=cfg.p, potential=make_potential(cfg),
                        grid=grid_for(cfg, eps))


def with_schedule(cfg: ExperimentConfig,
                  eps_schedule) -> ExperimentConfig:
    return replace(cfg, eps_schedule=tuple(float(e) for e in eps_schedule))
