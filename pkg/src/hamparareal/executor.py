"""Window-parallel execution and the gradient-evaluation cost model.

Costs are counted in units of one potential-gradient evaluation. A Verlet
propagation of m steps reuses the gradient between steps, so it charges
m + 1 evaluations to the ledger totals, while the schedule model charges it
m (one right-hand-side call per time step).

Schedule model. Every coarse sweep step runs on a single master processor,
in iteration order; each window's fine task runs on its own worker and is
released the moment its input state exists, without waiting for the rest
of the row. This is our reconstruction of the pipelined implementation the
parareal literature attributes to private communication: only the
"start immediately" rule is documented.
"""
from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import IntegrationBlowup


@dataclass(frozen=True, eq=False)
class WindowMap:
    """One propagation applied to every window input of a batch."""

    name: str
    system: object
    spec: object
    role: str  # "fine" or "coarse"


@dataclass
class CostLedger:
    grad_evals_fine: int = 0
    grad_evals_coarse: int = 0
    grad_evals_projection: int = 0
    steps_fine: int = 0
    steps_coarse: int = 0
    per_iteration_critical_path: list = field(default_factory=list)
    per_iteration_barrier_path: list = field(default_factory=list)

    def charge_propagation(self, role, steps, calls=1):
        if role == "fine":
            self.steps_fine += steps * calls
            self.grad_evals_fine += (steps + 1) * calls
        else:
            self.steps_coarse += steps * calls
            self.grad_evals_coarse += (steps + 1) * calls

    def charge_projection(self, grads):
        self.grad_evals_projection += grads

    @property
    def critical_path(self):
        return sum(self.per_iteration_critical_path)

    @property
    def barrier_path(self):
        return sum(self.per_iteration_barrier_path)

    def as_dict(self):
        return {
            "grad_evals_fine": self.grad_evals_fine,
            "grad_evals_coarse": self.grad_evals_coarse,
            "grad_evals_projection": self.grad_evals_projection,
            "steps_fine": self.steps_fine,
            "steps_coarse": self.steps_coarse,
            "per_iteration_critical_path": list(self.per_iteration_critical_path),
            "per_iteration_barrier_path": list(self.per_iteration_barrier_path),
            "critical_path": self.critical_path,
            "barrier_path": self.barrier_path,
        }


def _chunks(n, workers):
    workers = max(1, min(workers, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_windows(inputs, maps, workers=1, ledger=None):
    """Apply every map in ``maps`` to every row of ``inputs``.

    Rows are independent, so they are split into contiguous chunks, one per
    worker thread; each chunk writes into its own slice of pre-allocated
    outputs. Results are therefore bitwise identical for any worker count.

    Returns ``(outputs, task_steps)`` with ``outputs[name]`` shaped like
    ``inputs`` and ``task_steps[n]`` the schedule cost of window n's task.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    inputs = np.ascontiguousarray(inputs, dtype=float)
    n = inputs.shape[0]
    outputs = {m.name: np.empty_like(inputs) for m in maps}
    ok = {m.name: np.ones(n, dtype=np.bool_) for m in maps}

    def work(bounds):
        lo, hi = bounds
        for m in maps:
            s = m.system
            kernels.verlet_propagate_many(s.kind, s.params, s.minv, inputs[lo:hi],
                                          float(m.spec.step), m.spec.steps,
                                          outputs[m.name][lo:hi], ok[m.name][lo:hi])

    chunks = _chunks(n, workers)
    if len(chunks) == 1:
        for c in chunks:
            work(c)
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(work, chunks))
    for m in maps:
        if not ok[m.name].all():
            bad = int(np.flatnonzero(~ok[m.name])[0])
            raise IntegrationBlowup(f"{m.role} map {m.name!r} blew up in window {bad}", bad)
    if ledger is not None:
        for m in maps:
            ledger.charge_propagation(m.role, m.spec.steps, n)
    task_steps = np.full(n, sum(m.spec.steps for m in maps), dtype=np.int64)
    return outputs, task_steps


def list_schedule(ready, cost, processors=None):
    """Finish times of tasks dispatched in index order onto ``processors`` workers.

    ``processors=None`` means one worker per task.
    """
    ready = np.asarray(ready, dtype=np.int64)
    cost = np.asarray(cost, dtype=np.int64)
    if processors is None or processors >= len(ready):
        return ready + cost
    free = [0] * processors
    heapq.heapify(free)
    done = np.empty_like(ready)
    for i in range(len(ready)):
        start = max(int(ready[i]), heapq.heappop(free))
        done[i] = start + cost[i]
        heapq.heappush(free, int(done[i]))
    return done


class PipelineClock:
    """Event times, in gradient-evaluation units, of the pipelined schedule."""

    def __init__(self, n_windows, ledger, processors=None):
        self.n = n_windows
        self.ledger = ledger
        self.processors = processors
        self.master = 0          # time the master finishes its latest sweep step
        self.step_finish = None  # finish time of each sweep step of the current row
        self.row_done = 0
        self.barrier_done = 0

    def state_ready(self):
        """Time each state u_n of the current row becomes available."""
        ready = np.zeros(self.n + 1, dtype=np.int64)
        ready[1:] = self.step_finish
        return ready

    def initial_sweep(self, sweep_steps):
        sweep_steps = np.asarray(sweep_steps, dtype=np.int64)
        self.step_finish = np.cumsum(sweep_steps)
        self.master = int(self.step_finish[-1])
        self.row_done = self.master
        self.barrier_done = self.master
        self.ledger.per_iteration_critical_path.append(self.row_done)
        self.ledger.per_iteration_barrier_path.append(self.barrier_done)

    def iteration(self, task_ready, task_steps, sweep_steps):
        """Advance one parareal iteration.

        ``task_ready[n]`` is when window n's task input exists, ``task_steps``
        its cost, and ``sweep_steps[n]`` the master's cost for sweep step n,
        which also needs task n to have finished.
        """
        task_done = list_schedule(task_ready, task_steps, self.processors)
        finish = np.empty(self.n, dtype=np.int64)
        t = self.master
        for i in range(self.n):
            t = max(t, int(task_done[i])) + int(sweep_steps[i])
            finish[i] = t
        self.step_finish = finish
        self.master = t
        self.ledger.per_iteration_critical_path.append(t - self.row_done)
        self.row_done = t
        barrier_tasks = list_schedule(np.zeros(self.n, dtype=np.int64), task_steps,
                                      self.processors)
        step = int(barrier_tasks.max()) + int(np.sum(sweep_steps))
        self.ledger.per_iteration_barrier_path.append(step)
        self.barrier_done += step


# -- closed-form cost model -------------------------------------------------------

FINE_DOMINATED = "fine_dominated"
COARSE_DOMINATED = "coarse_dominated"


@dataclass(frozen=True)
class SpeedupReport:
    regime: str
    predicted_cost: int
    sequential_cost: int
    speedup: float
    processors: int
    per_iteration: float
    iterations: int

    def as_dict(self):
        return dict(self.__dict__)


def classify_regime(T, window, fine_step, coarse_step):
    return FINE_DOMINATED if window / fine_step > T / coarse_step else COARSE_DOMINATED


def predict_cost(cfg, K, m_proj=0.0):
    """Closed-form cost of ``K`` iterations of the configured variant.

    Fine-dominated regime: K dT/dt for every variant, the fine window
    propagation being the whole per-iteration cost (projection and coarse
    work neglected). Coarse-dominated regime: (K + 1) T/dT for the plain and
    symmetric schemes; for projected variants every sweep step also pays the
    Newton iterations (m_proj gradients, and for the symmetric projections
    m_proj further evaluations of the wrapped coarse map plus two
    gradients per iteration).
    """
    T, W = cfg.T, cfg.window
    dt, dT = abs(cfg.fine.step), abs(cfg.coarse.step)
    N = cfg.N
    regime = classify_regime(T, W, dt, dT)
    sequential = T / dt
    if regime == FINE_DOMINATED:
        per_iter = W / dt
        predicted = K * per_iter
    else:
        per_window = W / dT
        variant = cfg.variant
        if variant == "plain_projected":
            per_window += m_proj
        elif variant in ("symmetric_sym_projected", "symmetric_qsym_projected"):
            per_window = per_window * (1.0 + m_proj) + 1.0 + 2.0 * m_proj
        per_iter = N * per_window
        predicted = T / dT + K * per_iter
    if predicted <= 0:
        speedup = math.inf
    else:
        speedup = sequential / predicted
    return SpeedupReport(regime, int(round(predicted)), int(round(sequential)), speedup,
                         N, per_iter, K)


def measured_vs_predicted(run, report):
    """Measured critical-path increment of iterations 1..K over the predicted per-iteration cost."""
    path = run.ledger.per_iteration_critical_path[1:]
    return [p / report.per_iteration for p in path]
