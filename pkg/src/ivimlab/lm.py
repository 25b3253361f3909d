"""Bounded Levenberg-Marquardt least squares on smoothly reparameterized variables.

Box and positivity constraints are enforced exactly by fitting in a
transformed coordinate where every constraint surface is pushed to infinity:

* ``identity``            unconstrained
* ``log_positive``        theta > 0          (theta = exp(u))
* ``logistic(lo, hi)``    lo < theta < hi    (theta = lo + (hi-lo)*sigmoid(u))
* ``offset_log(floor)``   theta > floor      (theta = floor + exp(u))

The damped normal equations use Marquardt scaling (lambda times the diagonal
of J^T J); the Jacobian is a forward-difference estimate taken in the
transformed space with step h_i = max(1e-6, 1e-6*|u_i|).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError

_LAMBDA_MAX = 1e15


@dataclass(frozen=True)
class Transform:
    kind: str  # "identity" | "log" | "logistic" | "offset_log"
    lo: float = 0.0
    hi: float = 0.0


def identity() -> Transform:
    return Transform("identity")


def log_positive() -> Transform:
    return Transform("log")


def logistic(lo: float, hi: float) -> Transform:
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError(f"logistic bounds must satisfy lo < hi, got ({lo}, {hi})")
    return Transform("logistic", lo, hi)


def offset_log(floor: float) -> Transform:
    if not np.isfinite(floor):
        raise ValueError("offset_log floor must be finite")
    return Transform("offset_log", floor)


def _to_internal(theta: np.ndarray, transforms: Sequence[Transform]) -> np.ndarray:
    u = np.empty(len(transforms))
    for i, (t, v) in enumerate(zip(transforms, theta)):
        if t.kind == "identity":
            u[i] = v
        elif t.kind == "log":
            if v <= 0:
                raise ValueError(f"parameter {i} must be > 0 for a log transform, got {v}")
            u[i] = np.log(v)
        elif t.kind == "logistic":
            if not (t.lo < v < t.hi):
                raise ValueError(
                    f"parameter {i} must lie strictly inside ({t.lo}, {t.hi}), got {v}"
                )
            frac = (v - t.lo) / (t.hi - t.lo)
            u[i] = np.log(frac / (1.0 - frac))
        elif t.kind == "offset_log":
            if v <= t.lo:
                raise ValueError(f"parameter {i} must exceed the floor {t.lo}, got {v}")
            u[i] = np.log(v - t.lo)
        else:  # pragma: no cover
            raise ValueError(f"unknown transform {t.kind!r}")
    return u


def _to_external(u: np.ndarray, transforms: Sequence[Transform]) -> np.ndarray:
    theta = np.empty_like(u)
    for i, (t, v) in enumerate(zip(transforms, u)):
        if t.kind == "identity":
            theta[i] = v
        elif t.kind == "log":
            theta[i] = np.exp(v)
        elif t.kind == "logistic":
            # numerically stable sigmoid for either sign
            if v >= 0:
                s = 1.0 / (1.0 + np.exp(-v))
            else:
                e = np.exp(v)
                s = e / (1.0 + e)
            theta[i] = t.lo + (t.hi - t.lo) * s
        else:  # offset_log
            theta[i] = t.lo + np.exp(v)
    return theta


@dataclass(frozen=True)
class FitProblem:
    """A residual map r(theta), a start point and one transform per parameter."""

    residual: Callable[[np.ndarray], np.ndarray]
    theta0: np.ndarray
    transforms: tuple[Transform, ...]

    def __post_init__(self):
        theta0 = np.asarray(self.theta0, dtype=np.float64).ravel()
        if len(self.transforms) != theta0.size:
            raise DimensionError("one transform required per parameter")
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "transforms", tuple(self.transforms))


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 200
    gtol: float = 1e-10
    xtol: float = 1e-10
    ftol: float = 1e-10
    lambda0: float = 1e-3
    lambda_up: float = 2.0
    lambda_down: float = 3.0


@dataclass
class FitResult:
    params: np.ndarray
    ssr: float
    iterations: int
    converged: bool
    reason: str


def _jacobian(fn, u, r0, transforms):
    n, m = r0.size, u.size
    J = np.empty((n, m))
    for i in range(m):
        h = max(1e-6, 1e-6 * abs(u[i]))
        up = u.copy()
        up[i] += h
        J[:, i] = (fn(_to_external(up, transforms)) - r0) / h
    return J


def lm_fit(problem: FitProblem, opts: FitOptions | None = None) -> FitResult:
    """Minimize ||r(theta)||^2; returns parameters in the original space.

    The accepted-step cost sequence is non-increasing and the result is
    deterministic for fixed inputs. Non-finite trial residuals are treated
    as rejected steps; the fit is declared diverged once damping overflows.
    """
    opts = opts or FitOptions()
    fn = problem.residual
    transforms = problem.transforms
    u = _to_internal(problem.theta0, transforms)
    m = u.size

    r = np.asarray(fn(_to_external(u, transforms)), dtype=np.float64).ravel()
    if r.size < m:
        raise DimensionError(f"need at least {m} residuals, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ValueError("residual is non-finite at the initial guess")
    ssr = float(r @ r)
    if ssr == 0.0:
        return FitResult(_to_external(u, transforms), 0.0, 0, True, "zero residual at start")

    lam = opts.lambda0
    iterations = 0
    converged = False
    reason = "max_iter reached"

    while iterations < opts.max_iter:
        iterations += 1
        J = _jacobian(fn, u, r, transforms)
        if not np.all(np.isfinite(J)):
            return FitResult(_to_external(u, transforms), ssr, iterations, False,
                             "non-finite Jacobian")
        g = J.T @ r
        if np.max(np.abs(g)) <= opts.gtol:
            converged, reason = True, "gradient below gtol"
            break
        JtJ = J.T @ J
        diag = np.maximum(np.diag(JtJ), 1e-32)

        accepted = False
        while True:
            A = JtJ + lam * np.diag(diag)
            try:
                step = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                if np.linalg.norm(step) <= opts.xtol * (np.linalg.norm(u) + opts.xtol):
                    converged, reason = True, "step below xtol"
                    break
                u_try = u + step
                r_try = np.asarray(fn(_to_external(u_try, transforms)), dtype=np.float64).ravel()
                if np.all(np.isfinite(r_try)):
                    ssr_try = float(r_try @ r_try)
                    if ssr_try < ssr:
                        rel_drop = (ssr - ssr_try) / max(ssr, 1e-300)
                        u, r, ssr = u_try, r_try, ssr_try
                        lam = max(lam / opts.lambda_down, 1e-12)
                        accepted = True
                        if rel_drop <= opts.ftol:
                            converged, reason = True, "cost decrease below ftol"
                        break
            lam *= opts.lambda_up
            if lam > _LAMBDA_MAX:
                break

        if converged:
            break
        if not accepted:  # only reachable once damping has overflowed
            return FitResult(_to_external(u, transforms), ssr, iterations, False,
                             "damping overflow (no acceptable step)")

    return FitResult(_to_external(u, transforms), ssr, iterations, converged, reason)
