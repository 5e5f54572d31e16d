"""Velocity Verlet and the propagators built from it.

A propagator applies ``m = duration / step`` Verlet steps. Durations may be
negative (with a negative step), which is what the symmetric parareal
variants need for the half-window maps G_{-dT/2} and F_{-dT/2}.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import IntegrationBlowup, InversionFailure


class Method(enum.Enum):
    VELOCITY_VERLET = "velocity_verlet"

    @property
    def symmetric(self):
        return self is Method.VELOCITY_VERLET


@dataclass(frozen=True)
class PropagatorSpec:
    step: float
    duration: float
    method: Method = Method.VELOCITY_VERLET

    def __post_init__(self):
        if self.step == 0 or self.duration == 0:
            raise ValueError("step and duration must be non-zero")
        if math.copysign(1.0, self.step) != math.copysign(1.0, self.duration):
            raise ValueError(f"step {self.step} and duration {self.duration} differ in sign")
        ratio = self.duration / self.step
        m = round(ratio)
        if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, abs(ratio)):
            raise ValueError(f"duration {self.duration} is not a whole number of steps {self.step}")
        object.__setattr__(self, "steps", int(m))

    def reversed(self):
        return PropagatorSpec(-self.step, -self.duration, self.method)

    def with_duration(self, duration):
        step = math.copysign(abs(self.step), duration)
        return PropagatorSpec(step, duration, self.method)


def verlet_step(system, y, h):
    """One velocity Verlet step of size ``h`` (two gradient evaluations)."""
    if h == 0:
        raise ValueError("time step must be non-zero")
    system.check_state(y)
    out, ok = kernels.verlet_propagate(system.kind, system.params, system.minv,
                                       np.ascontiguousarray(y, dtype=float), float(h), 1)
    if not ok:
        raise IntegrationBlowup(f"{system.label}: non-finite state after one step", 1)
    return out


def propagate(system, y, spec):
    """m-fold composition of Verlet steps of size ``spec.step``."""
    out, ok = kernels.verlet_propagate(system.kind, system.params, system.minv,
                                       np.ascontiguousarray(y, dtype=float),
                                       float(spec.step), spec.steps)
    if not ok:
        step = kernels.first_nonfinite_step(system.kind, system.params, system.minv,
                                            np.ascontiguousarray(y, dtype=float),
                                            float(spec.step), spec.steps)
        raise IntegrationBlowup(
            f"{system.label}: non-finite state at step {step} of a propagation over "
            f"{spec.duration}", step)
    return out


def propagate_many(system, ys, spec):
    """Propagate each row of ``ys``; raises with the first failing row index."""
    ys = np.ascontiguousarray(ys, dtype=float)
    out = np.empty_like(ys)
    ok = np.empty(ys.shape[0], dtype=np.bool_)
    kernels.verlet_propagate_many(system.kind, system.params, system.minv, ys,
                                  float(spec.step), spec.steps, out, ok)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise IntegrationBlowup(f"{system.label}: non-finite state in row {bad}", bad)
    return out


def grad_evals(spec):
    """Gradient evaluations charged to one propagate call (gradient reuse between steps)."""
    return spec.steps + 1


def inverse_coarse(system, y, spec, *, tol=1e-12, max_iter=50):
    """Solve propagate(system, z, spec) = y for z.

    Symmetric methods are inverted exactly by running the reversed
    propagator. Other methods fall back to a fixed-point iteration
    z <- z + (y - propagate(z)).
    """
    if spec.method.symmetric:
        return propagate(system, y, spec.reversed())
    z = np.array(y, dtype=float)
    scale = max(1.0, float(np.linalg.norm(y)))
    for _ in range(max_iter):
        r = y - propagate(system, z, spec)
        z = z + r
        if np.linalg.norm(r) <= tol * scale:
            return z
    raise InversionFailure(f"coarse inversion did not converge in {max_iter} iterations")


def sequential_trajectory(system, y0, step, sample_every, n_samples):
    """Sequential Verlet run from ``y0`` sampled every ``sample_every`` steps."""
    out, bad = kernels.verlet_trajectory(system.kind, system.params, system.minv,
                                         np.ascontiguousarray(y0, dtype=float),
                                         float(step), int(sample_every), int(n_samples))
    if bad >= 0:
        raise IntegrationBlowup(f"{system.label}: sequential run blew up at sample {bad}", bad)
    return out
