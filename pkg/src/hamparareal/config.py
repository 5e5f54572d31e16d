"""Experiment configuration files.

A config is a plain INI file::

    [system]      kind, omega, alpha, eccentricity, data_file, coarse_kind, initial
    [grid]        T, window, fine_step, coarse_step, K
    [scheme]      variant, schedule
    [projection]  tol, max_iter, invariants, warm_start
    [run]         workers, output, reference_divisor, csv_stride, processors

Only the keys that differ from the defaults need to be present.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .projection import ManifoldSpec, Mode, ProjectionConfig
from .schemes import PROJECTED_VARIANTS, VARIANTS, PararealConfig
from .systems import SYSTEM_KINDS, PerturbationSchedule, build_system, initial_state, phase_point

_MODES = {"plain_projected": Mode.STANDARD,
          "symmetric_sym_projected": Mode.SYMMETRIC,
          "symmetric_qsym_projected": Mode.QUASI_SYMMETRIC}

# (section, key) for every field, in file order
_LAYOUT = {
    "kind": ("system", str), "omega": ("system", float), "alpha": ("system", float),
    "eccentricity": ("system", float), "data_file": ("system", str),
    "coarse_kind": ("system", str), "initial": ("system", str),
    "T": ("grid", float), "window": ("grid", float), "fine_step": ("grid", float),
    "coarse_step": ("grid", float), "K": ("grid", int),
    "variant": ("scheme", str), "schedule": ("scheme", tuple),
    "tol": ("projection", float), "max_iter": ("projection", int),
    "invariants": ("projection", tuple), "warm_start": ("projection", bool),
    "workers": ("run", int), "output": ("run", str), "reference_divisor": ("run", int),
    "csv_stride": ("run", int), "processors": ("run", int),
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "harmonic"
    omega: float = 1.0
    alpha: float = 1.0
    eccentricity: float = 0.6
    data_file: str = ""
    coarse_kind: str = ""
    initial: str = "default"   # "default" or "random" (drawn from --seed)
    T: float = 20.0
    window: float = 0.2
    fine_step: float = 1e-3
    coarse_step: float = 0.1
    K: int = 5
    variant: str = "plain"
    schedule: tuple = ()
    tol: float = 1e-7
    max_iter: int = 2
    invariants: tuple = ("energy",)
    warm_start: bool = False
    workers: int = 1
    output: str = "runs/out"
    reference_divisor: int = 10
    csv_stride: int = 1
    processors: int = 0        # 0 means one processor per window

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise ConfigurationError(f"unknown system kind {self.kind!r}")
        if self.coarse_kind and self.coarse_kind not in SYSTEM_KINDS:
            raise ConfigurationError(f"unknown coarse system kind {self.coarse_kind!r}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.initial not in ("default", "random"):
            raise ConfigurationError("initial must be 'default' or 'random'")
        for name in ("workers", "reference_divisor", "csv_stride"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if self.processors < 0:
            raise ConfigurationError("processors must be non-negative")

    # -- text form ------------------------------------------------------------

    @classmethod
    def parse(cls, text, source="<config>"):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigurationError(f"{source}: {exc}") from exc
        known = {(sec, key) for key, (sec, _) in _LAYOUT.items()}
        values = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                if (section, key) not in known:
                    raise ConfigurationError(f"{source}: unknown key [{section}] {key}")
                values[key] = _convert(key, raw, source)
        return cls(**values)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.parse(text, str(path))

    def dumps(self):
        sections = {}
        for key, (section, kind) in _LAYOUT.items():
            value = getattr(self, key)
            if kind is tuple:
                text = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif kind is float:
                text = repr(float(value))
            elif kind is bool:
                text = "true" if value else "false"
            else:
                text = str(value)
            sections.setdefault(section, []).append(f"{key} = {text}")
        return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # -- construction -----------------------------------------------------------

    def system(self):
        return build_system(self.kind, omega=self.omega, alpha=self.alpha,
                            data_file=self.data_file or None)

    def initial_state(self, seed=None):
        if self.initial == "random":
            return _random_state(self.kind, seed, self)
        return initial_state(self.kind, eccentricity=self.eccentricity,
                             data_file=self.data_file or None)

    def build(self, seed=None):
        """Return ``(PararealConfig, u0)``."""
        system = self.system()
        u0 = self.initial_state(seed)
        coarse = None
        if self.coarse_kind and self.coarse_kind != self.kind:
            coarse = build_system(self.coarse_kind, omega=self.omega, alpha=self.alpha,
                                  data_file=self.data_file or None)
        projection = manifold = None
        if self.variant in PROJECTED_VARIANTS:
            projection = ProjectionConfig(self.tol, self.max_iter, _MODES[self.variant],
                                          self.warm_start)
            try:
                manifold = ManifoldSpec.from_state(system, u0, self.invariants)
            except KeyError as exc:
                raise ConfigurationError(str(exc)) from exc
        schedule = None
        if self.variant == "symmetric_perturbed":
            exact = self.omega if self.kind == "harmonic" else self.alpha
            schedule = PerturbationSchedule(tuple(self.schedule), exact)
        cfg = PararealConfig(system, self.T, self.window, self.fine_step, self.coarse_step,
                             self.K, self.variant, coarse, manifold, projection, schedule,
                             self.processors or None)
        return cfg, u0


def _convert(key, raw, source):
    kind = _LAYOUT[key][1]
    raw = raw.strip()
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            return int(raw)
        if kind is bool:
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            return tuple(float(s) for s in items) if key == "schedule" else tuple(items)
    except ValueError as exc:
        raise ConfigurationError(f"{source}: bad value for {key}: {raw!r}") from exc
    return raw


def _random_state(kind, seed, cfg):
    rng = np.random.default_rng(seed)
    if kind == "harmonic":
        return phase_point(rng.normal(size=1), rng.normal(size=1))
    if kind == "kepler":
        e = rng.uniform(0.1, 0.7)
        y = initial_state("kepler", eccentricity=e)
        a = rng.uniform(0, 2 * np.pi)
        c, s = np.cos(a), np.sin(a)
        rot = np.array([[c, -s], [s, c]])
        return phase_point(rot @ y[:2], rot @ y[2:])
    raise ConfigurationError("random initial states are available for harmonic and kepler only")


def bundled_configs():
    """Names of the example configs shipped with the package."""
    folder = resources.files("hamparareal.configs")
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".cfg"))


def bundled_config_path(name):
    path = resources.files("hamparareal.configs").joinpath(f"{name}.cfg")
    if not path.is_file():
        raise ConfigurationError(f"no bundled config named {name!r}")
    return path


def resolve(path_or_name):
    """Load a config from a path, or from the bundled set when no such file exists."""
    path = Path(path_or_name)
    if path.exists():
        return ExperimentConfig.load(path)
    name = path.name[:-4] if path.name.endswith(".cfg") else path.name
    if str(path_or_name) == name or str(path_or_name) == f"{name}.cfg":
        if name in bundled_configs():
            src = bundled_config_path(name)
            return ExperimentConfig.parse(src.read_text(), name)
    raise ConfigurationError(f"config {path_or_name} not found")
