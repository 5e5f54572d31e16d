"""Error observables against invariants and a high-accuracy reference run."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigurationError
from .integrators import sequential_trajectory
from .systems import angular_momentum_vector, split

CACHE_ENV = "HAMPARAREAL_CACHE_DIR"
CACHE_FORMAT = 1
SERIES_COLUMNS = ("err_H", "err_traj", "err_L", "err_L_1", "err_L_2", "err_L_3")


@dataclass(eq=False)
class ErrorSeries:
    """err_n^k on the window grid; ``values[k, n]``."""

    times: np.ndarray
    values: np.ndarray
    kind: str
    absolute: bool = False  # the reference value was zero, values are absolute deviations

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.times.shape[0]:
            raise ValueError("series values and times differ in length")
        if np.any(self.values < 0):
            raise ValueError("error series must be non-negative")

    def max(self, k, t_min=-np.inf, t_max=np.inf):
        mask = (self.times >= t_min) & (self.times <= t_max)
        return float(self.values[k, mask].max())


def _relative(dev, scale):
    """Deviation over |scale|, or the plain deviation (flagged) when scale is zero."""
    scale = abs(float(scale))
    if scale == 0.0:
        return np.abs(dev), True
    return np.abs(dev) / scale, False


def energies(system, ys):
    ys = np.ascontiguousarray(np.atleast_2d(ys), dtype=float)
    out = np.empty(ys.shape[0])
    kernels.energies(system.kind, system.params, system.minv, ys, out)
    return out


def energy_error_row(system, row, H0):
    return _relative(energies(system, row) - H0, H0)[0]


def trajectory_error_row(row, reference):
    q, p = split(np.asarray(row))
    qr, pr = split(np.asarray(reference))
    return np.linalg.norm(q - qr, axis=-1) + np.linalg.norm(p - pr, axis=-1)


def angular_momentum_errors(system, row, L0):
    """Relative angular-momentum deviations of each state.

    Returns ``(norm_error, component_errors)``; the first is the Euclidean
    norm of the deviation over |L0|, the second has one column per component.
    """
    L = angular_momentum_vector(system, row)
    dev = L - L0
    total, _ = _relative(np.linalg.norm(dev, axis=-1), np.linalg.norm(L0))
    comps = np.column_stack([_relative(dev[:, c], L0[c])[0] for c in range(L0.shape[0])])
    return total, comps


def _grid(run):
    if run.states is None:
        raise ValueError("run was made without history; use an ErrorSink instead")
    return run.config.window * np.arange(run.config.N + 1)


def energy_error(run, system, H0):
    values = np.stack([energy_error_row(system, row, H0) for row in run.states])
    return ErrorSeries(_grid(run), values, "energy", H0 == 0)


def invariant_error(run, observable, target):
    values = np.stack([[observable.value(y) for y in row] for row in run.states])
    rel, flagged = _relative(values - target, target)
    return ErrorSeries(_grid(run), rel, f"invariant:{observable.name}", flagged)


def trajectory_error(run, reference):
    reference = np.asarray(reference)
    if reference.shape != run.states.shape[1:]:
        raise ValueError("run and reference do not share the window grid")
    values = np.stack([trajectory_error_row(row, reference) for row in run.states])
    return ErrorSeries(_grid(run), values, "trajectory")


class ErrorSink:
    """Collects every error column while a run streams its rows.

    Pass an instance in ``sinks`` of the scheme runner; afterwards
    ``series(column)`` returns the ErrorSeries and ``columns[c][k]`` the raw rows.
    """

    def __init__(self, system, u0, window, N, K, reference=None):
        self.system = system
        self.times = window * np.arange(N + 1)
        self.H0 = system.energy(u0)
        self.L0 = angular_momentum_vector(system, u0)
        self.reference = reference
        self.columns = {c: np.full((K + 1, N + 1), np.nan) for c in SERIES_COLUMNS}
        self.flags = {"err_H": self.H0 == 0}
        if self.L0 is not None:
            self.flags["err_L"] = not np.any(self.L0)
            for c in range(self.L0.shape[0]):
                self.flags[f"err_L_{c + 1}"] = self.L0[c] == 0
        self.done = -1

    def __call__(self, k, row, half=None):
        cols = self.columns
        cols["err_H"][k] = energy_error_row(self.system, row, self.H0)
        if self.reference is not None:
            cols["err_traj"][k] = trajectory_error_row(row, self.reference)
        if self.L0 is not None:
            total, comps = angular_momentum_errors(self.system, row, self.L0)
            cols["err_L"][k] = total
            if comps.shape[1] == 3:
                for c in range(3):
                    cols[f"err_L_{c + 1}"][k] = comps[:, c]
        self.done = k

    def has(self, column):
        return not np.all(np.isnan(self.columns[column]))

    def series(self, column):
        kind = {"err_H": "energy", "err_traj": "trajectory"}.get(column, "invariant:" + column)
        return ErrorSeries(self.times, self.columns[column][: self.done + 1], kind,
                           bool(self.flags.get(column, False)))


# -- reference trajectory --------------------------------------------------------

def cache_dir(path=None):
    if path is not None:
        return Path(path)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "hamparareal"


def _whole(ratio, what):
    m = round(ratio)
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(f"{what} must be a positive integer, got {ratio!r}")
    return int(m)


def _reference_key(system, u0, step, T, window):
    h = hashlib.sha256()
    for part in (str(CACHE_FORMAT), str(system.kind), repr(float(step)), repr(float(T)),
                 repr(float(window))):
        h.update(part.encode())
    for arr in (system.params, system.mass_diag, np.asarray(u0, dtype=float)):
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


def reference_trajectory(system, u0, fine_step, T, window, *, divisor=10, cache=True,
                         directory=None):
    """Sequential Verlet run at ``fine_step / divisor`` sampled at every window boundary.

    Results are cached on disk keyed by the system, u0, step and grid; the
    cache directory defaults to ``$HAMPARAREAL_CACHE_DIR`` or ~/.cache/hamparareal.
    """
    u0 = np.asarray(u0, dtype=float)
    step = fine_step / divisor
    per_window = _whole(window / step, "window / reference step")
    n = _whole(T / window, "T / window")
    key = _reference_key(system, u0, step, T, window)
    folder = cache_dir(directory)
    target = folder / f"reference-{key[:24]}.npy"
    if cache and target.exists():
        try:
            data = np.load(target)
            if data.shape == (n + 1, u0.shape[0]):
                return data
        except (OSError, ValueError):
            pass
    data = sequential_trajectory(system, u0, step, per_window, n)
    if cache:
        folder.mkdir(parents=True, exist_ok=True)
        manifest = {
            "system": system.label,
            "u0_sha256": hashlib.sha256(u0.tobytes()).hexdigest(),
            "fine_step": fine_step,
            "reference_step": step,
            "T": T,
            "window": window,
            "format": CACHE_FORMAT,
        }
        with tempfile.NamedTemporaryFile(dir=folder, suffix=".npy", delete=False) as fh:
            np.save(fh, data)
        os.replace(fh.name, target)
        target.with_suffix(".json").write_text(json.dumps(manifest, indent=1) + "\n")
    return data


def fine_floor(system, u0, fine_step, window, N, reference):
    """Trajectory error of the sequential fine scheme on the window grid."""
    steps = _whole(window / fine_step, "window / fine step")
    fine = sequential_trajectory(system, np.asarray(u0, dtype=float), fine_step, steps, N)
    return trajectory_error_row(fine, reference)


def convergence_iteration(traj, floor, factor=2.0):
    """First k from which every later iteration stays within ``factor`` x the floor."""
    floor = float(np.max(floor))
    ok = traj.values.max(axis=1) <= factor * floor
    k = len(ok)
    while k > 0 and ok[k - 1]:
        k -= 1
    return k if k < len(ok) else None


def drift_slope(times, values):
    """Least-squares slope of an error curve against time."""
    return float(np.polyfit(np.asarray(times, dtype=float), np.asarray(values, dtype=float), 1)[0])


def drifts(times, values):
    """True when the fitted slope accounts for more than the largest error over the horizon."""
    span = float(times[-1] - times[0])
    return abs(drift_slope(times, values)) * span > float(np.max(values))
