"""Newton projections onto invariant manifolds.

Three flavours share the same stopping protocol:

* C1 -- the relative error dropped to ``tol`` or below,
* C2 -- ``max_iter`` Newton updates were performed,
* C3 -- the last update increased the error; the previous iterate is kept.

The error is checked once before any update, so an input that already lies
on the manifold is returned untouched with zero iterations.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np

from .errors import ConfigurationError, DegenerateProjection

DEGENERATE_SLOPE = 1e-14


class Stop(enum.IntEnum):
    C1 = 1
    C2 = 2
    C3 = 3


class Mode(str, enum.Enum):
    STANDARD = "standard"
    SYMMETRIC = "symmetric"
    QUASI_SYMMETRIC = "quasi_symmetric"


@dataclass(frozen=True)
class NewtonOutcome:
    iterations: int
    residual: float
    stop: Stop
    grad_evals: int = 0
    multipliers: tuple = ()


@dataclass(frozen=True)
class ProjectionConfig:
    tol: float = 1e-7
    max_iter: int = 2
    mode: Mode = Mode.STANDARD
    warm_start: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError("projection tol must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("projection max_iter must be at least 1")
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclass(frozen=True, eq=False)
class ManifoldSpec:
    observables: tuple
    targets: tuple

    def __post_init__(self):
        if len(self.observables) not in (1, 2) or len(self.targets) != len(self.observables):
            raise ConfigurationError("a manifold is defined by one or two invariants with targets")
        if self.observables[0].name != "energy":
            raise ConfigurationError("the first manifold invariant must be the energy")

    @classmethod
    def from_state(cls, system, y0, names=("energy",)):
        obs = tuple(system.invariant(n) for n in names)
        return cls(obs, tuple(float(o.value(y0)) for o in obs))

    def residuals(self, y):
        return np.array([o.value(y) - t for o, t in zip(self.observables, self.targets)])

    def relative_error(self, y):
        r = np.abs(self.residuals(y))
        return float(sum(ri / abs(t) if t != 0 else ri for ri, t in zip(r, self.targets)))


class ProjectedStep(NamedTuple):
    state: np.ndarray
    mu: float
    outcome: NewtonOutcome
    aux: Any = None


def _relative(value, scale):
    return abs(value) / abs(scale) if scale != 0 else abs(value)


def project_standard(system, manifold, y_tilde, cfg):
    """y = y~ + sum_j lambda_j grad I_j(y~), lambda chosen so that I_j(y) = target_j."""
    y_tilde = np.asarray(y_tilde, dtype=float)
    G = np.stack([o.gradient(y_tilde) for o in manifold.observables])
    targets = np.asarray(manifold.targets)
    lam = np.zeros(len(targets))
    y = y_tilde
    err = manifold.relative_error(y)
    grads = 1
    if err <= cfg.tol:
        return y, NewtonOutcome(0, err, Stop.C1, grads, tuple(lam))
    it = 0
    while True:
        r = manifold.residuals(y)
        if it == 0:
            Gy = G
        else:
            Gy = np.stack([o.gradient(y) for o in manifold.observables])
            grads += 1
        J = Gy @ G.T
        if J.shape == (1, 1):
            if not abs(J[0, 0]) > DEGENERATE_SLOPE:
                raise DegenerateProjection(f"vanishing Newton slope {J[0, 0]:.3e}")
            delta = r / J[0, 0]
        else:
            if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
                raise DegenerateProjection("singular Newton system for the two-invariant projection")
            delta = np.linalg.solve(J, r)
        lam_new = lam - delta
        y_new = y_tilde + lam_new @ G
        err_new = manifold.relative_error(y_new)
        it += 1
        if err_new <= cfg.tol:
            return y_new, NewtonOutcome(it, err_new, Stop.C1, grads, tuple(lam_new))
        if err_new > err:
            return y, NewtonOutcome(it, err, Stop.C3, grads, tuple(lam))
        y, lam, err = y_new, lam_new, err_new
        if it >= cfg.max_iter:
            return y, NewtonOutcome(it, err, Stop.C2, grads, tuple(lam))


def _split_map(result):
    if isinstance(result, tuple):
        return result[0], result[1]
    return result, None


def symmetric_projected_step(system, inner_map, y_n, H0, cfg, mu0=0.0):
    """Symmetric projection wrapped around a one-step map.

    Solves, for (y_{n+1}, mu),
        y_{n+1} = inner_map(y_n + mu grad H(y_n)) + mu grad H(y_{n+1}),
        H(y_{n+1}) = H0,
    with the block-triangular approximate Jacobian
        [[I, -(gH(y_n) + gH(y_{n+1}))], [0, gH(y^)^T (gH(y_n) + gH(y_{n+1}))]].
    The state returned for an iterate (y, mu) is
    y^ = inner_map(y_n + mu gH(y_n)) + mu gH(y), whose energy residual is the
    one the error measures.

    ``inner_map`` may return ``(state, aux)``; the aux of the accepted
    iterate is handed back.
    """
    y_n = np.asarray(y_n, dtype=float)
    g_n = system.grad_energy(y_n)
    grads = 1

    def evaluate(y, mu):
        nonlocal grads
        psi, aux = _split_map(inner_map(y_n + mu * g_n))
        gy = system.grad_energy(y)
        grads += 1
        y_hat = psi + mu * gy
        s1 = y - y_hat
        s2 = system.energy(y_hat) - H0
        err = float(np.linalg.norm(s1) / np.linalg.norm(y)) + _relative(s2, H0)
        return y_hat, gy, s1, s2, err, aux

    mu = float(mu0)
    if mu == 0.0:
        psi, aux = _split_map(inner_map(y_n))
        y = psi
        gy = None
        y_hat, s1, s2 = psi, np.zeros_like(psi), system.energy(psi) - H0
        err = _relative(s2, H0)
    else:
        y = _split_map(inner_map(y_n + mu * g_n))[0]
        y_hat, gy, s1, s2, err, aux = evaluate(y, mu)
    if err <= cfg.tol:
        return ProjectedStep(y_hat, mu, NewtonOutcome(0, err, Stop.C1, grads, (mu,)), aux)
    it = 0
    while True:
        if gy is None:
            gy = system.grad_energy(y)
            grads += 1
        c = g_n + gy
        if y_hat is y:
            g_hat = gy
        else:
            g_hat = system.grad_energy(y_hat)
            grads += 1
        slope = float(g_hat @ c)
        if not abs(slope) > DEGENERATE_SLOPE:
            raise DegenerateProjection(f"vanishing symmetric-projection slope {slope:.3e}")
        d_mu = -s2 / slope
        y_new = y - s1 + c * d_mu
        mu_new = mu + d_mu
        y_hat_new, gy_new, s1_new, s2_new, err_new, aux_new = evaluate(y_new, mu_new)
        it += 1
        if err_new <= cfg.tol:
            return ProjectedStep(y_hat_new, mu_new,
                                 NewtonOutcome(it, err_new, Stop.C1, grads, (mu_new,)), aux_new)
        if err_new > err:
            return ProjectedStep(y_hat, mu, NewtonOutcome(it, err, Stop.C3, grads, (mu,)), aux)
        y, mu, y_hat, gy, s1, s2, err, aux = (y_new, mu_new, y_hat_new, gy_new, s1_new,
                                              s2_new, err_new, aux_new)
        if it >= cfg.max_iter:
            return ProjectedStep(y_hat, mu, NewtonOutcome(it, err, Stop.C2, grads, (mu,)), aux)


def quasi_symmetric_projected_step(system, inner_map, y_n, H0, cfg, mu0=0.0):
    """Explicit variant: y_{n+1} = y~_{n+1} + mu grad H(y~_{n+1}) with y~_{n+1} = inner_map(y~_n).

    mu solves the scalar equation H(y_{n+1}(mu)) = H0 by Newton, using the
    slope gH(y_{n+1})^T (gH(y_n) + gH(y~_n)).
    """
    y_n = np.asarray(y_n, dtype=float)
    g_n = system.grad_energy(y_n)
    grads = 1

    def evaluate(mu):
        nonlocal grads
        start = y_n + mu * g_n
        psi, aux = _split_map(inner_map(start))
        g_psi = system.grad_energy(psi)
        grads += 1
        y = psi + mu * g_psi
        s = system.energy(y) - H0
        # at mu == 0 the end point is psi itself, so its gradient is already known
        g_y = g_psi if mu == 0.0 else None
        return y, start, s, _relative(s, H0), g_y, aux

    mu = float(mu0)
    y, start, s, err, g_y, aux = evaluate(mu)
    if err <= cfg.tol:
        return ProjectedStep(y, mu, NewtonOutcome(0, err, Stop.C1, grads, (mu,)), aux)
    it = 0
    while True:
        if g_y is None:
            g_y = system.grad_energy(y)
            grads += 1
        if mu == 0.0:
            g_start = g_n
        else:
            g_start = system.grad_energy(start)
            grads += 1
        slope = float(g_y @ (g_n + g_start))
        if not abs(slope) > DEGENERATE_SLOPE:
            raise DegenerateProjection(f"vanishing quasi-symmetric slope {slope:.3e}")
        mu_new = mu - s / slope
        y_new, start_new, s_new, err_new, g_y_new, aux_new = evaluate(mu_new)
        it += 1
        if err_new <= cfg.tol:
            return ProjectedStep(y_new, mu_new,
                                 NewtonOutcome(it, err_new, Stop.C1, grads, (mu_new,)), aux_new)
        if err_new > err:
            return ProjectedStep(y, mu, NewtonOutcome(it, err, Stop.C3, grads, (mu,)), aux)
        y, start, s, err, g_y, aux, mu = y_new, start_new, s_new, err_new, g_y_new, aux_new, mu_new
        if it >= cfg.max_iter:
            return ProjectedStep(y, mu, NewtonOutcome(it, err, Stop.C2, grads, (mu,)), aux)
