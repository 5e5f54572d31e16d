"""Parareal iterations over a uniform window grid.

Six variants share two sweep kernels:

    plain                     u_{n+1}^{k+1} = G(u_n^{k+1}) + F(u_n^k) - G(u_n^k)
    plain_projected           the same, followed by a Newton projection
    symmetric                 symmetrised two-half-window update
    symmetric_perturbed       symmetric, iteration k driven by the k-th scheduled system
    symmetric_sym_projected   symmetric with a symmetric projection around each window
    symmetric_qsym_projected  symmetric with the quasi-symmetric projection

Each iteration first hands all window propagations of the previous row to
the executor (independent across windows), then runs the cheap sequential
correction sweep. Only the previous and the current row are held; completed
rows are streamed to sinks (and to the in-memory history when requested).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PararealError
from .executor import CostLedger, PipelineClock, WindowMap, run_windows
from .integrators import PropagatorSpec, inverse_coarse, propagate
from .projection import (ManifoldSpec, Mode, ProjectionConfig, Stop, project_standard,
                         quasi_symmetric_projected_step, symmetric_projected_step)

VARIANTS = ("plain", "symmetric", "symmetric_perturbed", "plain_projected",
            "symmetric_sym_projected", "symmetric_qsym_projected")
SYMMETRIC_VARIANTS = ("symmetric", "symmetric_perturbed", "symmetric_sym_projected",
                      "symmetric_qsym_projected")
PROJECTED_VARIANTS = ("plain_projected", "symmetric_sym_projected", "symmetric_qsym_projected")


def _whole(ratio, what):
    m = round(ratio)
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(f"{what} must be a positive integer, got {ratio!r}")
    return int(m)


@dataclass(frozen=True, eq=False)
class PararealConfig:
    system: object
    T: float
    window: float
    fine_step: float
    coarse_step: float
    K: int
    variant: str = "plain"
    coarse_system: object = None
    manifold: ManifoldSpec = None
    projection: ProjectionConfig = None
    schedule: object = None
    processors: int = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if not (self.T > 0 and self.window > 0 and self.fine_step > 0 and self.coarse_step > 0):
            raise ConfigurationError("T, window and both steps must be positive")
        if self.K < 0:
            raise ConfigurationError("K must be non-negative")
        object.__setattr__(self, "N", _whole(self.T / self.window, "T / window"))
        parts = 2 if self.variant in SYMMETRIC_VARIANTS else 1
        _whole(self.window / parts / self.fine_step, "window / fine step")
        _whole(self.window / parts / self.coarse_step, "window / coarse step")
        projected = self.variant in PROJECTED_VARIANTS
        if projected and self.projection is None:
            raise ConfigurationError(f"{self.variant} needs a projection config")
        if not projected and (self.projection is not None or self.manifold is not None):
            raise ConfigurationError(f"{self.variant} takes no projection/manifold")
        if self.projection is not None:
            want = {"plain_projected": Mode.STANDARD,
                    "symmetric_sym_projected": Mode.SYMMETRIC,
                    "symmetric_qsym_projected": Mode.QUASI_SYMMETRIC}[self.variant]
            if self.projection.mode != want:
                raise ConfigurationError(f"{self.variant} needs projection mode {want.value}")
        if self.manifold is not None and self.variant != "plain_projected" \
                and len(self.manifold.observables) != 1:
            raise ConfigurationError("symmetric projections act on the energy manifold only")
        if (self.variant == "symmetric_perturbed") != (self.schedule is not None):
            raise ConfigurationError("a perturbation schedule goes with symmetric_perturbed only")

    @property
    def fine(self):
        return PropagatorSpec(self.fine_step, self.window)

    @property
    def coarse(self):
        return PropagatorSpec(self.coarse_step, self.window)

    @property
    def coarse_sys(self):
        return self.coarse_system if self.coarse_system is not None else self.system

    def systems_for(self, k):
        """(fine system, coarse system) driving iteration k."""
        if self.schedule is None:
            return self.system, self.coarse_sys
        s = self.schedule.system_for(self.system, k)
        return s, s


@dataclass(eq=False)
class PararealRun:
    config: PararealConfig
    u0: np.ndarray
    final_row: np.ndarray
    states: np.ndarray = None       # (K+1, N+1, 2d) when history is kept
    half_states: np.ndarray = None  # (K+1, N, 2d) symmetric variants
    multipliers: np.ndarray = None  # (K+1, N), nan where no projection ran
    newton_iterations: np.ndarray = None
    newton_stop: np.ndarray = None  # 0 where no projection ran, else Stop value
    newton_residual: np.ndarray = None
    ledger: CostLedger = field(default_factory=CostLedger)
    peak_rows: int = 0

    def stop_frequencies(self):
        """Share of projections stopped by each criterion (k >= 1 only)."""
        if self.newton_stop is None:
            return {}
        stops = self.newton_stop[self.newton_stop > 0]
        if stops.size == 0:
            return {}
        return {s.name: float(np.mean(stops == s.value)) for s in Stop}

    def mean_projection_iterations(self):
        if self.newton_stop is None:
            return float("nan")
        mask = self.newton_stop > 0
        return float(self.newton_iterations[mask].mean()) if mask.any() else float("nan")


class _Rows:
    """Counts how many full iterate rows are alive at once."""

    def __init__(self):
        self.live = 0
        self.peak = 0

    def new(self, shape):
        self.live += 1
        self.peak = max(self.peak, self.live)
        return np.empty(shape)

    def drop(self):
        self.live -= 1


class _Recorder:
    def __init__(self, cfg, d, keep_history, projected, symmetric):
        K, N = cfg.K, cfg.N
        self.keep = keep_history
        self.states = np.empty((K + 1, N + 1, 2 * d)) if keep_history else None
        self.half = np.empty((K + 1, N, 2 * d)) if keep_history and symmetric else None
        self.mu = np.full((K + 1, N), np.nan) if projected else None
        self.iters = np.full((K + 1, N), -1, dtype=np.int64) if projected else None
        self.stop = np.zeros((K + 1, N), dtype=np.int8) if projected else None
        self.resid = np.full((K + 1, N), np.nan) if projected else None

    def newton(self, k, n, mu, outcome):
        self.mu[k, n] = mu
        self.iters[k, n] = outcome.iterations
        self.stop[k, n] = int(outcome.stop)
        self.resid[k, n] = outcome.residual


def _emit(k, row, half, recorder, sinks):
    if recorder.keep:
        recorder.states[k] = row
        if recorder.half is not None and half is not None:
            recorder.half[k] = half
    for sink in sinks:
        sink(k, row, half)


def _locate(exc, n, k):
    if isinstance(exc, PararealError) and exc.location is None:
        exc.at(n, k)
    return exc


def run(cfg, u0, *, workers=1, keep_history=True, sinks=()):
    """Run the configured variant from ``u0``."""
    u0 = np.asarray(u0, dtype=float)
    cfg.system.check_state(u0)
    if cfg.variant in ("plain", "plain_projected"):
        return _run_plain(cfg, u0, workers, keep_history, sinks)
    return _run_symmetric(cfg, u0, workers, keep_history, sinks)


def run_plain(cfg, u0, **kw):
    _require(cfg, "plain")
    return run(cfg, u0, **kw)


def run_plain_projected(cfg, u0, **kw):
    _require(cfg, "plain_projected")
    return run(cfg, u0, **kw)


def run_symmetric(cfg, u0, **kw):
    _require(cfg, "symmetric")
    return run(cfg, u0, **kw)


def run_symmetric_perturbed(cfg, u0, **kw):
    _require(cfg, "symmetric_perturbed")
    return run(cfg, u0, **kw)


def run_symmetric_projected(cfg, u0, **kw):
    _require(cfg, "symmetric_sym_projected", "symmetric_qsym_projected")
    return run(cfg, u0, **kw)


def _require(cfg, *variants):
    if cfg.variant not in variants:
        raise ConfigurationError(f"expected variant in {variants}, got {cfg.variant!r}")


def _manifold(cfg, u0):
    if cfg.manifold is not None:
        return cfg.manifold
    return ManifoldSpec.from_state(cfg.system, u0)


def _run_plain(cfg, u0, workers, keep_history, sinks):
    N, K = cfg.N, cfg.K
    d2 = u0.shape[0]
    G, F = cfg.coarse, cfg.fine
    system, csys = cfg.system, cfg.coarse_sys
    projected = cfg.variant == "plain_projected"
    manifold = _manifold(cfg, u0) if projected else None
    ledger = CostLedger()
    clock = PipelineClock(N, ledger, cfg.processors)
    rows = _Rows()
    rec = _Recorder(cfg, d2 // 2, keep_history, projected, False)

    row = rows.new((N + 1, d2))
    row[0] = u0
    for n in range(N):
        try:
            row[n + 1] = propagate(csys, row[n], G)
        except PararealError as exc:
            raise _locate(exc, n, 0)
    ledger.charge_propagation("coarse", G.steps, N)
    clock.initial_sweep(np.full(N, G.steps))
    _emit(0, row, None, rec, sinks)

    maps = [WindowMap("F", system, F, "fine"), WindowMap("G", csys, G, "coarse")]
    for k in range(K):
        try:
            outs, task_steps = run_windows(row[:-1], maps, workers, ledger)
        except PararealError as exc:
            raise _locate(exc, exc.step_index, k + 1)
        correction = outs["F"] - outs["G"]
        task_ready = clock.state_ready()[:-1]
        new = rows.new((N + 1, d2))
        new[0] = u0
        sweep = np.full(N, G.steps, dtype=np.int64)
        try:
            for n in range(N):
                y = propagate(csys, new[n], G) + correction[n]
                if projected:
                    y, outcome = project_standard(system, manifold, y, cfg.projection)
                    ledger.charge_projection(outcome.grad_evals)
                    sweep[n] += outcome.grad_evals
                    lam = outcome.multipliers[0] if outcome.multipliers else 0.0
                    rec.newton(k + 1, n, lam, outcome)
                new[n + 1] = y
        except PararealError as exc:
            raise _locate(exc, n, k + 1)
        ledger.charge_propagation("coarse", G.steps, N)
        clock.iteration(task_ready, task_steps, sweep)
        row = new
        rows.drop()
        _emit(k + 1, row, None, rec, sinks)

    return PararealRun(cfg, u0, row.copy(), rec.states, None, rec.mu, rec.iters, rec.stop,
                       rec.resid, ledger, rows.peak)


class _HalfMaps:
    """The four half-window propagators of the symmetric schemes (signed by ``direction``)."""

    def __init__(self, cfg, direction=1.0):
        h = direction * cfg.window / 2
        self.fwd_c = PropagatorSpec(np.copysign(cfg.coarse_step, h), h)
        self.back_c = self.fwd_c.reversed()
        self.fwd_f = PropagatorSpec(np.copysign(cfg.fine_step, h), h)
        self.back_f = self.fwd_f.reversed()

    def window_maps(self, fine_sys, coarse_sys):
        return [WindowMap("Fm", fine_sys, self.back_f, "fine"),
                WindowMap("Fp", fine_sys, self.fwd_f, "fine"),
                WindowMap("Gm", coarse_sys, self.back_c, "coarse"),
                WindowMap("Gp", coarse_sys, self.fwd_c, "coarse")]


def _sym_coarse_start(csys, x, hm):
    """k = 0 update: u_{n+1/2} = G_{-dT/2}^{-1}(u_n), u_{n+1} = G_{dT/2}(u_{n+1/2})."""
    half = inverse_coarse(csys, x, hm.back_c)
    return propagate(csys, half, hm.fwd_c), half


def _sym_inner_map(csys, hm, minus_corr, plus_corr):
    """Corrected one-window map of the symmetric scheme with frozen level-k terms.

    minus_corr = F_{-dT/2}(u_{n+1/2}^k) - G_{-dT/2}(u_{n+1/2}^k)
    plus_corr  = F_{+dT/2}(u_{n+1/2}^k) - G_{+dT/2}(u_{n+1/2}^k)
    Returns (u_{n+1}, u_{n+1/2}).
    """
    def inner(x):
        half = inverse_coarse(csys, x - minus_corr, hm.back_c)
        return propagate(csys, half, hm.fwd_c) + plus_corr, half
    return inner


def _project_window(cfg, system, inner, x, H0, mu0):
    if cfg.variant == "symmetric_sym_projected":
        return symmetric_projected_step(system, inner, x, H0, cfg.projection, mu0)
    return quasi_symmetric_projected_step(system, inner, x, H0, cfg.projection, mu0)


def _run_symmetric(cfg, u0, workers, keep_history, sinks):
    N, K = cfg.N, cfg.K
    d2 = u0.shape[0]
    hm = _HalfMaps(cfg)
    projected = cfg.variant in PROJECTED_VARIANTS
    H0 = cfg.system.energy(u0) if projected else None
    ledger = CostLedger()
    clock = PipelineClock(N, ledger, cfg.processors)
    rows = _Rows()
    rec = _Recorder(cfg, d2 // 2, keep_history, projected, True)
    half_cost = hm.fwd_c.steps

    _, csys0 = cfg.systems_for(0)
    row = rows.new((N + 1, d2))
    half = np.empty((N, d2))
    row[0] = u0
    for n in range(N):
        try:
            row[n + 1], half[n] = _sym_coarse_start(csys0, row[n], hm)
        except PararealError as exc:
            raise _locate(exc, n, 0)
    ledger.charge_propagation("coarse", half_cost, 2 * N)
    clock.initial_sweep(np.full(N, 2 * half_cost))
    _emit(0, row, half, rec, sinks)

    for k in range(K):
        fsys, csys = cfg.systems_for(k + 1)
        try:
            outs, task_steps = run_windows(half, hm.window_maps(fsys, csys), workers, ledger)
        except PararealError as exc:
            raise _locate(exc, exc.step_index, k + 1)
        minus = outs["Fm"] - outs["Gm"]
        plus = outs["Fp"] - outs["Gp"]
        # half-point n of the previous row exists once sweep step n has finished
        task_ready = clock.step_finish.copy()
        new = rows.new((N + 1, d2))
        new_half = np.empty((N, d2))
        new[0] = u0
        sweep = np.zeros(N, dtype=np.int64)
        mu = 0.0
        try:
            for n in range(N):
                calls = 0

                def inner(x, _m=_sym_inner_map(csys, hm, minus[n], plus[n])):
                    nonlocal calls
                    calls += 1
                    return _m(x)

                if projected:
                    mu0 = mu if cfg.projection.warm_start else 0.0
                    step = _project_window(cfg, cfg.system, inner, new[n], H0, mu0)
                    y, mu, outcome, h = step
                    ledger.charge_projection(outcome.grad_evals)
                    sweep[n] = outcome.grad_evals
                    rec.newton(k + 1, n, mu, outcome)
                else:
                    y, h = inner(new[n])
                new[n + 1] = y
                new_half[n] = h
                sweep[n] += calls * 2 * half_cost
                ledger.charge_propagation("coarse", half_cost, 2 * calls)
        except PararealError as exc:
            raise _locate(exc, n, k + 1)
        clock.iteration(task_ready, task_steps, sweep)
        row, half = new, new_half
        rows.drop()
        _emit(k + 1, row, half, rec, sinks)

    return PararealRun(cfg, u0, row.copy(), rec.states, rec.half, rec.mu, rec.iters, rec.stop,
                       rec.resid, ledger, rows.peak)


def symmetric_column_step(cfg, column, direction=1.0, H0=None):
    """Map U_n = (u_n^0, ..., u_n^K) to U_{n+1} across one window of length direction * dT.

    This is the one-step map whose symmetry the symmetric variants are built
    on: stepping with ``direction=-1`` from the result recovers ``column``.
    Projected variants apply their projection at every level k >= 1 and need
    the target energy ``H0`` (the energy of the run's initial state).
    """
    if cfg.variant not in SYMMETRIC_VARIANTS:
        raise ConfigurationError("column steps are defined for the symmetric variants")
    projected = cfg.variant in PROJECTED_VARIANTS
    if projected and H0 is None:
        raise ConfigurationError("projected column steps need the target energy H0")
    column = np.asarray(column, dtype=float)
    hm = _HalfMaps(cfg, direction)
    out = np.empty_like(column)
    halves = np.empty_like(column)
    _, csys0 = cfg.systems_for(0)
    out[0], halves[0] = _sym_coarse_start(csys0, column[0], hm)
    for k in range(column.shape[0] - 1):
        fsys, csys = cfg.systems_for(k + 1)
        h = halves[k]
        minus = propagate(fsys, h, hm.back_f) - propagate(csys, h, hm.back_c)
        plus = propagate(fsys, h, hm.fwd_f) - propagate(csys, h, hm.fwd_c)
        inner = _sym_inner_map(csys, hm, minus, plus)
        if projected:
            y, _, _, hh = _project_window(cfg, cfg.system, inner, column[k + 1], H0, 0.0)
        else:
            y, hh = inner(column[k + 1])
        out[k + 1], halves[k + 1] = y, hh
    return out
