"""Scenario files: a validated YAML description of one experiment.

A scenario names the true plant and the observer model, the known input,
the disturbance schedule, the observers with their gains, the integration
grid and the measurement noise. :func:`load` validates a file (or a bundled
preset by name) and :meth:`Scenario.build` turns it into the objects
:func:`delayeso.sim.simulate` takes.
"""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .gain import DesignError, place_poles, place_poles_decoupled
from .model import DcDriveParams, LtiPlant, build_extended, dc_drive_plant, dc_drive_truth
from .observers import (
    INTEGRAL_OUTPUT_DELAY_ESO,
    KINDS,
    SLIDING_KINDS,
    ObserverSpec,
    SmoParams,
    delay_steps,
    integral_output_system,
    stacked_smo_gain,
)
from .signals import SHAPES, NoiseSpec, Profile, Segment
from .sim import SimConfig, Setup, TruePlant

PRESETS = ("dc_drive_fig2", "dc_drive_noise", "relateddoc_example", "smo_fig5")

Matrix = list[list[float]]


class ScenarioError(ValueError):
    """Scenario file missing, unparsable or invalid."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DcParams(_Model):
    R: float = Field(gt=0)
    L: float = Field(gt=0)
    Kv: float = Field(gt=0)
    Ktau: float = Field(gt=0)
    J: float = Field(gt=0)
    f: float = Field(ge=0)

    def params(self):
        return DcDriveParams(**self.model_dump())


class DcDrivePlant(_Model):
    """Physical drive (``truth``) observed through a possibly different ``model``."""

    type: Literal["dc_drive"]
    truth: DcParams
    model: DcParams
    lumped: bool = True

    def build(self):
        model = dc_drive_plant(self.model.params(), lumped=self.lumped)
        A, B, Dw = dc_drive_truth(self.truth.params())
        return TruePlant(A=A, B=B, Dw=Dw, C=model.C), model


class MatrixPlant(_Model):
    """``x' = A x + B u + D d``, ``y = C x``; truth and model coincide."""

    type: Literal["matrix"]
    A: Matrix
    C: Matrix
    B: Matrix | None = None
    D: Matrix | None = None

    def build(self):
        A = np.array(self.A, dtype=float)
        n = A.shape[0]
        B = np.zeros((n, 0)) if not self.B else np.array(self.B, dtype=float)
        D = np.eye(n) if self.D is None else np.array(self.D, dtype=float)
        plant = LtiPlant(A=A, B=B, C=np.array(self.C, dtype=float), D=D)
        return TruePlant.from_plant(plant), plant


PlantSpec = Annotated[Union[DcDrivePlant, MatrixPlant], Field(discriminator="type")]


class SegmentSpec(_Model):
    t0: float
    t1: float
    shape: Literal["constant", "ramp", "sine", "sine_sum"]
    params: dict[str, float | list[list[float]]]

    @model_validator(mode="after")
    def _check(self):
        if not self.t1 > self.t0:
            raise ValueError(f"segment [{self.t0}, {self.t1}] is empty")
        self.to_segment()
        return self

    def to_segment(self):
        try:
            shape = SHAPES[self.shape](**self.params)
        except TypeError as exc:
            raise ValueError(f"bad parameters for shape {self.shape!r}: {exc}") from None
        return Segment(self.t0, self.t1, shape)


class ProfileSpec(_Model):
    channels: list[list[SegmentSpec]] = Field(min_length=1)
    allow_jumps: bool = False

    def build(self):
        return Profile(tuple(tuple(s.to_segment() for s in ch) for ch in self.channels), self.allow_jumps)


class GainSpec(_Model):
    """Observer gain: a literal matrix, a pole set, or per-channel pole pairs."""

    method: Literal["matrix", "poles", "decoupled"]
    matrix: Matrix | None = None
    poles: list[float] | None = None
    pairs: list[list[float]] | None = None

    @model_validator(mode="after")
    def _check(self):
        need = {"matrix": "matrix", "poles": "poles", "decoupled": "pairs"}[self.method]
        given = [k for k in ("matrix", "poles", "pairs") if getattr(self, k) is not None]
        if given != [need]:
            raise ValueError(f"gain method {self.method!r} takes exactly the field {need!r}, got {given}")
        return self

    def build(self, plant, kind, order=1):
        if self.method == "matrix":
            return np.array(self.matrix, dtype=float)
        if kind == INTEGRAL_OUTPUT_DELAY_ESO:
            if self.method != "poles":
                raise ValueError("the integral-output observer takes a matrix or a pole set")
            ios = integral_output_system(plant)
            return place_poles((ios.ext.Abar, ios.C2), self.poles).L
        if self.method == "decoupled":
            if order != 1:
                raise ValueError("decoupled placement is for first-order extensions")
            return place_poles_decoupled(plant, [tuple(p) for p in self.pairs]).L
        return place_poles(build_extended(plant, order), self.poles).L


class SmoSpec(_Model):
    """``Gn = [L; -I]`` from the state gain ``L`` (or ``Gn`` given whole)."""

    rho: float = Field(gt=0)
    L: Matrix | None = None
    Gn: Matrix | None = None
    boundary_layer: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if (self.L is None) == (self.Gn is None):
            raise ValueError("smo needs exactly one of L or Gn")
        return self

    def build(self, q):
        Gn = np.array(self.Gn, dtype=float) if self.Gn is not None else stacked_smo_gain(np.array(self.L), q)
        return SmoParams(Gn=Gn, rho=self.rho, boundary_layer=self.boundary_layer)


class ObserverEntry(_Model):
    kind: str
    name: str = ""
    h: float | None = Field(default=None, gt=0)
    gain: GainSpec | None = None
    smo: SmoSpec | None = None
    order: int = Field(default=1, ge=1)
    xhat0: list[float] | None = None

    @field_validator("kind")
    @classmethod
    def _kind(cls, v):
        if v not in KINDS:
            raise ValueError(f"unknown observer kind {v!r}; expected one of {KINDS}")
        return v


class NoiseEntry(_Model):
    enabled: bool = False
    relative_amplitude: float = Field(default=0.05, ge=0, le=1)
    seed: int = Field(default=0, ge=0)
    distribution: Literal["uniform", "gaussian"] = "uniform"


class SimulationEntry(_Model):
    dt: float = Field(gt=0)
    t_end: float = Field(gt=0)
    integrator: Literal["rk4", "euler"] = "rk4"
    x0: list[float] = []
    blowup: float = Field(default=1e9, gt=0)
    warmup_fraction: float = Field(default=0.25, ge=0, lt=1)


class SweepEntry(_Model):
    observer: str
    h: list[float] = Field(min_length=1)


@dataclass(frozen=True)
class Experiment:
    """A built scenario: ready for :func:`delayeso.sim.simulate`."""

    name: str
    setup: Setup
    observers: list
    config: SimConfig
    warmup_fraction: float
    sweep_h: tuple


class Scenario(_Model):
    name: str
    description: str = ""
    plant: PlantSpec
    inputs: ProfileSpec | None = None
    disturbance: ProfileSpec
    observers: list[ObserverEntry] = Field(min_length=1)
    simulation: SimulationEntry
    noise: NoiseEntry = NoiseEntry()
    sweep: SweepEntry | None = None

    @model_validator(mode="after")
    def _check(self):
        names = [o.name for o in self.observers if o.name]
        if len(set(names)) != len(names):
            raise ValueError(f"observer names must be unique: {names}")
        if self.sweep is not None and self.sweep.observer not in {o.name or o.kind for o in self.observers}:
            raise ValueError(f"sweep observer {self.sweep.observer!r} is not defined")
        return self

    def with_seed(self, seed):
        return self.model_copy(update={"noise": self.noise.model_copy(update={"seed": int(seed)})})

    def to_yaml(self):
        return yaml.safe_dump(self.model_dump(mode="json", exclude_none=True), sort_keys=False)

    def build(self):
        """Construct plant, profiles, observer specs and config; raises :class:`ScenarioError`."""
        try:
            return self._build()
        except (ValueError, DesignError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{self.name}: {exc}") from exc

    def _build(self):
        truth, model = self.plant.build()
        inputs = self.inputs.build() if self.inputs is not None else None
        setup = Setup(truth, model, self.disturbance.build(), inputs)
        specs, xhat0 = [], {}
        for entry in self.observers:
            L = entry.gain.build(model, entry.kind, entry.order) if entry.gain is not None else None
            smo = entry.smo.build(model.q) if entry.smo is not None else None
            if entry.kind in SLIDING_KINDS and entry.gain is not None:
                raise ScenarioError(f"{entry.kind} takes its gain from the smo block")
            spec = ObserverSpec(entry.kind, L, h=entry.h, smo=smo, order=entry.order, name=entry.name)
            specs.append(spec)
            if entry.xhat0 is not None:
                xhat0[spec.name] = tuple(entry.xhat0)
        s = self.simulation
        cfg = SimConfig(
            dt=s.dt,
            t_end=s.t_end,
            integrator=s.integrator,
            x0=tuple(s.x0),
            xhat0=xhat0,
            noise=NoiseSpec(**self.noise.model_dump()),
            blowup=s.blowup,
        )
        sweep_h = tuple(self.sweep.h) if self.sweep is not None else ()
        for h in [spec.h for spec in specs if spec.uses_delay] + list(sweep_h):
            delay_steps(h, cfg.dt)
        return Experiment(self.name, setup, specs, cfg, s.warmup_fraction, sweep_h)

    def sweep_spec(self, observers):
        """The built observer a sweep varies (by name, falling back to the kind label)."""
        if self.sweep is None:
            raise ScenarioError(f"{self.name} defines no sweep")
        for entry, spec in zip(self.observers, observers):
            if self.sweep.observer in (entry.name, entry.kind, spec.name):
                return spec
        raise ScenarioError(f"sweep observer {self.sweep.observer!r} not found")


def parse(text, source="<string>"):
    """Validate YAML text into a :class:`Scenario`."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(f"{source}: {exc}") from exc


def preset_path(name):
    return resources.files("delayeso") / "scenarios" / f"{name}.yaml"


def load(name_or_path):
    """Load a scenario file, or a bundled preset when given one of :data:`PRESETS`."""
    key = str(name_or_path)
    if key in PRESETS:
        return parse(preset_path(key).read_text(), source=key)
    path = Path(key)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {key}: {exc}") from exc
    return parse(text, source=key)
