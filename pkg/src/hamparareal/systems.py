"""Separable Hamiltonians H(q, p) = p^T M^-1 p / 2 + V(q) and their invariants.

States are flat float64 arrays ``y = (q, p)`` of length 2d.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels
from .errors import ConfigurationError, SingularityError

SOLAR_DATA = "outer_solar_system.txt"


def split(y):
    """Return the (q, p) views of a state vector."""
    d = y.shape[-1] // 2
    return y[..., :d], y[..., d:]


def phase_point(q, p):
    q = np.atleast_1d(np.asarray(q, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if q.shape != p.shape or q.ndim != 1 or q.size < 1:
        raise ValueError(f"q and p must be 1-d of equal length, got {q.shape} and {p.shape}")
    y = np.concatenate([q, p])
    if not np.all(np.isfinite(y)):
        raise ValueError("phase point has non-finite components")
    return y


@dataclass(frozen=True, eq=False)
class InvariantObservable:
    name: str
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SystemDefinition:
    label: str
    kind: int
    params: np.ndarray
    mass_diag: np.ndarray
    body_names: tuple = ()
    invariants: tuple = field(default=(), repr=False)

    def __post_init__(self):
        mass = np.ascontiguousarray(self.mass_diag, dtype=float)
        if mass.ndim != 1 or np.any(mass <= 0) or not np.all(np.isfinite(mass)):
            raise ConfigurationError(f"{self.label}: mass_diag must be strictly positive")
        object.__setattr__(self, "mass_diag", mass)
        object.__setattr__(self, "params", np.ascontiguousarray(self.params, dtype=float))
        object.__setattr__(self, "minv", 1.0 / mass)
        if not self.invariants:
            object.__setattr__(self, "invariants", _default_invariants(self))

    @property
    def dim(self):
        return self.mass_diag.shape[0]

    def check_state(self, y):
        if y.shape != (2 * self.dim,):
            raise ValueError(f"{self.label}: expected state of length {2 * self.dim}, got {y.shape}")

    def potential(self, q):
        try:
            v = kernels.potential(self.kind, self.params, np.ascontiguousarray(q, dtype=float))
        except ZeroDivisionError:
            v = math.nan
        if not math.isfinite(v):
            raise SingularityError(f"{self.label}: potential is singular at q={q}")
        return v

    def grad_potential(self, q):
        out = np.empty(self.dim)
        try:
            kernels.grad_potential(self.kind, self.params, np.ascontiguousarray(q, dtype=float), out)
        except ZeroDivisionError:
            out[:] = np.nan
        if not np.all(np.isfinite(out)):
            raise SingularityError(f"{self.label}: potential gradient is singular at q={q}")
        return out

    def energy(self, y):
        q, p = split(y)
        return 0.5 * float(np.dot(p * self.minv, p)) + self.potential(q)

    def grad_energy(self, y):
        q, p = split(y)
        return np.concatenate([self.grad_potential(q), self.minv * p])

    def invariant(self, name):
        for obs in self.invariants:
            if obs.name == name:
                return obs
        raise KeyError(f"{self.label} has no invariant {name!r}")

    def with_params(self, params, label=None):
        """Same system with a different potential parameter vector."""
        return replace(self, params=np.asarray(params, dtype=float),
                       label=label or self.label, invariants=())


def eval_energy(system, y):
    return system.energy(y)


def eval_grad_H(system, y):
    return system.grad_energy(y)


# -- invariants ---------------------------------------------------------------

def _energy_observable(system):
    return InvariantObservable("energy", system.energy, system.grad_energy)


def _kepler_angular_momentum(y):
    return y[0] * y[3] - y[1] * y[2]


def _kepler_angular_momentum_grad(y):
    return np.array([y[3], -y[2], -y[1], y[0]])


def _runge_lenz(alpha):
    # A = p x L - alpha q / |q| with L the scalar (z) angular momentum
    def ax(y):
        q1, q2, p1, p2 = y
        return q1 * p2 * p2 - q2 * p1 * p2 - alpha * q1 / math.hypot(q1, q2)

    def ax_grad(y):
        q1, q2, p1, p2 = y
        r = math.hypot(q1, q2)
        r3 = r ** 3
        return np.array([
            p2 * p2 - alpha * (1.0 / r - q1 * q1 / r3),
            -p1 * p2 + alpha * q1 * q2 / r3,
            -q2 * p2,
            2.0 * q1 * p2 - q2 * p1,
        ])

    def ay(y):
        q1, q2, p1, p2 = y
        return -q1 * p1 * p2 + q2 * p1 * p1 - alpha * q2 / math.hypot(q1, q2)

    def ay_grad(y):
        q1, q2, p1, p2 = y
        r = math.hypot(q1, q2)
        r3 = r ** 3
        return np.array([
            -p1 * p2 + alpha * q1 * q2 / r3,
            p1 * p1 - alpha * (1.0 / r - q2 * q2 / r3),
            -q1 * p2 + 2.0 * q2 * p1,
            -q1 * p1,
        ])

    return (InvariantObservable("runge_lenz_x", ax, ax_grad),
            InvariantObservable("runge_lenz_y", ay, ay_grad))


def _total_angular_momentum(component):
    e = np.zeros(3)
    e[component] = 1.0

    def value(y):
        q, p = split(y)
        return float(np.cross(q.reshape(-1, 3), p.reshape(-1, 3)).sum(axis=0)[component])

    def gradient(y):
        q, p = split(y)
        q3, p3 = q.reshape(-1, 3), p.reshape(-1, 3)
        gq = np.cross(p3, e)
        gp = np.cross(e, q3)
        return np.concatenate([gq.ravel(), gp.ravel()])

    return InvariantObservable(f"angular_momentum_{component + 1}", value, gradient)


def _default_invariants(system):
    obs = [_energy_observable(system)]
    if system.kind == kernels.KEPLER:
        obs.append(InvariantObservable("angular_momentum", _kepler_angular_momentum,
                                       _kepler_angular_momentum_grad))
        obs.extend(_runge_lenz(float(system.params[0])))
    elif system.kind in (kernels.NBODY, kernels.NBODY_SUN):
        obs.extend(_total_angular_momentum(c) for c in range(3))
    return tuple(obs)


def angular_momentum_vector(system, y):
    """Angular momentum of a state (or of each row of a batch).

    Kepler gives one component, N-body three; other systems have none.
    """
    y = np.asarray(y, dtype=float)
    if system.kind == kernels.KEPLER:
        return (y[..., 0] * y[..., 3] - y[..., 1] * y[..., 2])[..., None]
    if system.kind in (kernels.NBODY, kernels.NBODY_SUN):
        q, p = split(y)
        shape = q.shape[:-1] + (-1, 3)
        return np.cross(q.reshape(shape), p.reshape(shape)).sum(axis=-2)
    return None


# -- solar data file ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SolarData:
    G: float
    masses: np.ndarray
    q0: np.ndarray
    p0: np.ndarray
    names: tuple
    source: str


def _floats(text, key, n):
    try:
        vals = [float(t) for t in text.split()]
    except ValueError as exc:
        raise ConfigurationError(f"bad numeric value for {key}: {text!r}") from exc
    if len(vals) != n:
        raise ConfigurationError(f"{key} needs {n} values, got {len(vals)}")
    return vals


def load_solar_data(path=None, n_bodies=6):
    """Parse the key/value solar data file (bundled one by default)."""
    if path is None:
        text = resources.files("hamparareal.data").joinpath(SOLAR_DATA).read_text()
        source = SOLAR_DATA
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read solar data file {path}: {exc}") from exc
        source = str(path)
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        entries[key] = value
    if "G" not in entries:
        raise ConfigurationError(f"{source}: missing G")
    G = _floats(entries["G"], "G", 1)[0]
    masses, qs, ps, names = [], [], [], []
    for i in range(1, n_bodies + 1):
        base = f"body.{i}"
        if f"{base}.mass" not in entries or f"{base}.q" not in entries:
            raise ConfigurationError(f"{source}: incomplete entry for {base}")
        m = _floats(entries[f"{base}.mass"], f"{base}.mass", 1)[0]
        if m <= 0:
            raise ConfigurationError(f"{source}: {base}.mass must be positive")
        q = _floats(entries[f"{base}.q"], f"{base}.q", 3)
        if f"{base}.p" in entries:
            p = _floats(entries[f"{base}.p"], f"{base}.p", 3)
        elif f"{base}.v" in entries:
            p = [m * v for v in _floats(entries[f"{base}.v"], f"{base}.v", 3)]
        else:
            raise ConfigurationError(f"{source}: {base} needs p or v")
        masses.append(m)
        qs.extend(q)
        ps.extend(p)
        names.append(entries.get(f"{base}.name", base))
    return SolarData(G, np.array(masses), np.array(qs), np.array(ps), tuple(names), source)


# -- construction ---------------------------------------------------------------

SYSTEM_KINDS = ("harmonic", "kepler", "solar_full", "solar_simplified")


def build_system(kind, *, omega=1.0, alpha=1.0, data_file=None):
    if kind == "harmonic":
        if not omega > 0:
            raise ConfigurationError("harmonic oscillator needs omega > 0")
        return SystemDefinition(f"harmonic(omega={omega:g})", kernels.HARMONIC,
                                np.array([omega]), np.ones(1))
    if kind == "kepler":
        if not alpha > 0:
            raise ConfigurationError("Kepler problem needs alpha > 0")
        return SystemDefinition(f"kepler(alpha={alpha:g})", kernels.KEPLER,
                                np.array([alpha]), np.ones(2))
    if kind in ("solar_full", "solar_simplified"):
        data = load_solar_data(data_file)
        code = kernels.NBODY if kind == "solar_full" else kernels.NBODY_SUN
        return SystemDefinition(kind, code, np.concatenate([[data.G], data.masses]),
                                np.repeat(data.masses, 3), body_names=data.names)
    raise ConfigurationError(f"unknown system kind {kind!r}; expected one of {SYSTEM_KINDS}")


def initial_state(kind, *, eccentricity=0.6, data_file=None):
    """Default initial condition for each shipped system."""
    if kind == "harmonic":
        return phase_point([1.0], [0.0])
    if kind == "kepler":
        e = eccentricity
        if not 0 <= e < 1:
            raise ConfigurationError("Kepler eccentricity must lie in [0, 1)")
        return phase_point([1.0 - e, 0.0], [0.0, math.sqrt((1.0 + e) / (1.0 - e))])
    if kind in ("solar_full", "solar_simplified"):
        data = load_solar_data(data_file)
        return phase_point(data.q0, data.p0)
    raise ConfigurationError(f"unknown system kind {kind!r}")


@dataclass(frozen=True)
class PerturbationSchedule:
    """Per-iteration potential parameter (omega_k or alpha_k), ending at the exact value."""

    values: tuple
    exact: float = 1.0

    def __post_init__(self):
        if not self.values:
            raise ConfigurationError("perturbation schedule is empty")
        if self.values[-1] != self.exact:
            raise ConfigurationError(
                f"schedule must end at the exact value {self.exact}, ends at {self.values[-1]}")

    def value(self, k):
        return self.values[min(k, len(self.values) - 1)]

    def system_for(self, base, k):
        """The base system with its scalar potential parameter replaced by entry k."""
        v = self.value(k)
        if base.kind not in (kernels.HARMONIC, kernels.KEPLER):
            raise ConfigurationError("frequency perturbation needs a harmonic or Kepler system")
        name = "omega" if base.kind == kernels.HARMONIC else "alpha"
        label = base.label.split("(")[0] + f"({name}={v:g})"
        return base.with_params([v], label=label)
