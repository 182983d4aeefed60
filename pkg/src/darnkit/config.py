"""Experiment configuration: schema, parsing and cross-field validation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, field_validator

from darnkit.augmentation import MeasureFamily
from darnkit.darning import HoleSet
from darnkit.errors import DarnkitError, HoleError
from darnkit.flagpole import COARSE_PRESET
from darnkit.forms import SymmetricForm
from darnkit.io import form_from_dict, load_document

SCHEMA_VERSION = 1


class ConfigParseError(DarnkitError):
    """The config document could not be read or is not a mapping."""


class ConfigValidationError(DarnkitError):
    """The config parsed but violates a schema rule or a module precondition."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FormSource(_Strict):
    file: Optional[str] = None
    n: Optional[int] = None
    m: Optional[list[float]] = None
    edges: Optional[list[list[float]]] = None
    kappa: Optional[list[float]] = None


class FunctionSpec(_Strict):
    kind: Literal["vector", "indicator", "random"]
    values: Optional[list[float]] = None
    nodes: Optional[list[int]] = None
    seed: Optional[int] = None


class MCSettings(_Strict):
    paths: int = Field(10_000, ge=1)
    master_seed: int = 0
    start: Union[int, Literal["m"]] = "m"
    horizon: Optional[PositiveFloat] = None
    lambdas: Optional[list[PositiveFloat]] = None
    method: Literal["paths", "skeleton"] = "paths"


class BmvdSettings(_Strict):
    preset: Optional[Literal["coarse"]] = None
    eps: Optional[PositiveFloat] = None
    p: Optional[PositiveFloat] = None
    R: Optional[PositiveFloat] = None
    h: Optional[PositiveFloat] = None
    Z: Optional[PositiveFloat] = None
    schedule: list[PositiveFloat] = [1.0, 10.0, 100.0, 1000.0]
    alphas: list[PositiveFloat] = [1.0]

    def geometry(self) -> dict:
        base = dict(COARSE_PRESET) if self.preset == "coarse" else {}
        for key in ("eps", "p", "R", "h", "Z"):
            value = getattr(self, key)
            if value is not None:
                base[key] = value
        return base


class ExperimentConfig(_Strict):
    schema_version: Literal[1]
    form: Optional[FormSource] = None
    holes: list[list[int]] = []
    masses: Union[Literal["sticky"], list[PositiveFloat]] = "sticky"
    measure: Optional[list[list[float]]] = None
    mode: Literal["jump", "conductance"] = "jump"
    schedule: list[PositiveFloat] = []
    alphas: list[PositiveFloat] = [1.0]
    ts: list[PositiveFloat] = []
    test_functions: list[FunctionSpec] = []
    tolerance: PositiveFloat = 1e-6
    mc: Optional[MCSettings] = None
    bmvd: Optional[BmvdSettings] = None
    workers: Optional[int] = Field(None, ge=1)
    output_dir: str = "out"

    @field_validator("schedule", "ts")
    @classmethod
    def _increasing(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("must be strictly increasing")
        return v


@dataclass
class Experiment:
    """A validated config with its numerical objects built."""

    config: ExperimentConfig
    form: SymmetricForm | None
    holes: HoleSet | None
    mu: MeasureFamily | None
    test_functions: list[np.ndarray]
    bmvd_geometry: dict | None


def parse_config(path) -> ExperimentConfig:
    try:
        doc = load_document(path)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigParseError("config document must be a mapping")
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        errors = [(".".join(str(p) for p in e["loc"]) or "<root>", e["msg"]) for e in exc.errors()]
        raise ConfigValidationError(errors) from exc


def _build_function(spec: FunctionSpec, n: int, loc: str, errors: list) -> np.ndarray | None:
    if spec.kind == "vector":
        if spec.values is None or len(spec.values) != n:
            errors.append((f"{loc}.values", f"need exactly {n} values"))
            return None
        return np.asarray(spec.values, dtype=float)
    if spec.kind == "indicator":
        if not spec.nodes or any(not 0 <= x < n for x in spec.nodes):
            errors.append((f"{loc}.nodes", f"need node indices in 0..{n - 1}"))
            return None
        f = np.zeros(n)
        f[spec.nodes] = 1.0
        return f
    if spec.seed is None:
        errors.append((f"{loc}.seed", "random test functions need a seed"))
        return None
    return np.random.default_rng(spec.seed).standard_normal(n)


def prepare(config: ExperimentConfig, base_dir=".") -> Experiment:
    """Check every module precondition and build forms, holes and test functions."""
    errors: list[tuple[str, str]] = []
    form = holes = mu = None
    fs: list[np.ndarray] = []

    if config.form is not None:
        src = config.form
        try:
            if src.file is not None:
                if any(v is not None for v in (src.n, src.m, src.edges, src.kappa)):
                    raise ValueError("give either 'file' or inline fields, not both")
                doc = load_document(Path(base_dir) / src.file)
            else:
                doc = src.model_dump(exclude_none=True)
            form = form_from_dict(doc)
        except (OSError, yaml.YAMLError, ValueError, KeyError, TypeError) as exc:
            errors.append(("form", str(exc)))

    if form is not None:
        try:
            holes = HoleSet(config.holes)
            holes.validate(form.n)
        except HoleError as exc:
            errors.append(("holes", str(exc)))
            holes = None
        if holes is not None and len(holes) == 0 and config.schedule:
            errors.append(("holes", "a sweep needs at least one hole"))
        if holes is not None and config.masses != "sticky" and len(config.masses) != len(holes):
            errors.append(("masses", f"need {len(holes)} masses, one per hole"))
        if holes is not None:
            if config.measure is None:
                mu = MeasureFamily.from_mass(form, holes) if len(holes) else None
            else:
                try:
                    mu = MeasureFamily(holes, tuple(config.measure))
                except ValueError as exc:
                    errors.append(("measure", str(exc)))
        for i, spec in enumerate(config.test_functions):
            f = _build_function(spec, form.n, f"test_functions.{i}", errors)
            if f is not None:
                fs.append(f)
        if config.schedule and not config.test_functions:
            errors.append(("test_functions", "a sweep needs at least one test function"))
        if config.mc is not None:
            start = config.mc.start
            if start != "m" and not 0 <= start < form.n:
                errors.append(("mc.start", f"start state must be in 0..{form.n - 1}"))
            if not config.ts:
                errors.append(("ts", "Monte Carlo estimates need at least one time"))
            elif config.mc.horizon is not None and config.mc.horizon < max(config.ts):
                errors.append(("mc.horizon", "horizon must cover every requested time"))
            if config.mc.lambdas is None and not config.schedule:
                errors.append(("mc.lambdas", "give lambdas or a schedule"))
    elif config.schedule or config.mc is not None or config.holes:
        errors.append(("form", "required for darning, sweeps and simulation"))

    geometry = None
    if config.bmvd is not None:
        geometry = config.bmvd.geometry()
        missing = [k for k in ("eps", "p", "R", "h", "Z") if k not in geometry]
        if missing:
            errors.append(("bmvd", f"missing geometry {missing}; set them or use preset: coarse"))
        if any(b <= a for a, b in zip(config.bmvd.schedule, config.bmvd.schedule[1:])):
            errors.append(("bmvd.schedule", "must be strictly increasing"))

    if errors:
        raise ConfigValidationError(errors)
    return Experiment(config=config, form=form, holes=holes, mu=mu, test_functions=fs, bmvd_geometry=geometry)
