"""Monotone minimization over [0, 1] via regularized surrogate models.

Each iteration minimizes M(anchor, x) + sigma * |x - anchor|^(p+1) with a
multi-resolution grid search, accepts the candidate once it decreases the
target by gamma * step^(p+1), and doubles sigma otherwise. Iterated to a
small-step stopping rule, the final point is certified by comparing the
model objective at z against z - eta and z + eta.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np


@dataclass
class MOAParams:
    sigma_min: float = 1e-4
    gamma: float = 1e-4
    p_exp: float = 3.0           # regularization exponent p + 1
    eta: float = 1e-6
    grid_points: int = 41        # points per grid level of the 1-D search
    max_sigma_doublings: int = 100
    max_iterations: int = 100000

    def __post_init__(self):
        if self.sigma_min <= 0 or self.gamma <= 0 or self.eta <= 0:
            raise ValueError("sigma_min, gamma, eta must be positive")
        if self.p_exp <= 0:
            raise ValueError("p_exp (p + 1) must be positive")
        if self.grid_points < 3:
            raise ValueError("need at least 3 grid points per level")


@dataclass
class SurrogateModel:
    """Evaluable model anchored so that value(anchor) equals the target."""

    anchor: float
    value: Callable[[float], float]
    exponent: float = 3.0
    bounded_below: bool = True


class SurrogateDecreaseFailure(RuntimeError):
    """The sigma-doubling loop never reached sufficient decrease."""


def regularized_value(model: SurrogateModel, x: float, sigma: float) -> float:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return model.value(x) + sigma * abs(x - model.anchor) ** model.exponent


def solve_subproblem_1d(objective: Callable[[float], float], eta: float,
                        include=(), lo: float = 0.0, hi: float = 1.0,
                        grid_points: int = 41) -> float:
    """Multi-resolution grid search on [lo, hi].

    Evaluates a uniform grid, recenters on the best point with the step
    shrunk by 10, and repeats until the step is at most eta/10. Extra points
    in ``include`` are injected into every level. Ties break toward the
    smallest x.
    """
    half = (grid_points - 1) // 2
    step = (hi - lo) / (grid_points - 1)
    center = 0.5 * (lo + hi)
    best_x = None
    best_v = math.inf
    cache = {}
    while True:
        pts = center + step * np.arange(-half, half + 1)
        pts = np.clip(pts, lo, hi)
        pts = np.unique(np.concatenate([pts, np.asarray(include, dtype=float)]))
        for x in pts:
            x = float(x)
            v = cache.get(x)
            if v is None:
                v = objective(x)
                cache[x] = v
            if v < best_v or (v == best_v and (best_x is None or x < best_x)):
                best_v = v
                best_x = x
        if step <= eta / 10.0:
            return best_x
        center = best_x
        step /= 10.0


@dataclass
class MoaIterRecord:
    j: int
    x: float
    sigma: float
    sigma_trials: List[float]
    f_evals: int                 # armijo tests, one target evaluation each
    decrease: float
    step: float


def _clamp_sigma(sigma: Optional[float], params: MOAParams) -> float:
    if sigma is None:
        return params.sigma_min
    return min(1.0, max(params.sigma_min, sigma))


def moa_iteration(F: Callable[[float], float],
                  model_factory: Callable[[float], SurrogateModel],
                  x_j: float, params: MOAParams,
                  sigma_start: Optional[float] = None,
                  j: int = 0) -> MoaIterRecord:
    """One accept/reject cycle: solve the regularized subproblem, test the
    sufficient-decrease condition, double sigma on rejection."""
    model = model_factory(x_j)
    F_j = F(x_j)
    sigma = _clamp_sigma(sigma_start, params)
    trials = []
    f_evals = 0
    for _ in range(params.max_sigma_doublings):
        trials.append(sigma)
        cand = solve_subproblem_1d(
            lambda x: regularized_value(model, x, sigma),
            params.eta, include=(x_j,), grid_points=params.grid_points)
        step = abs(cand - x_j)
        F_cand = F(cand)
        f_evals += 1
        if F_cand <= F_j - params.gamma * step ** params.p_exp:
            return MoaIterRecord(j=j, x=cand, sigma=sigma, sigma_trials=trials,
                                 f_evals=f_evals, decrease=F_j - F_cand,
                                 step=step)
        sigma = max(params.sigma_min, 2.0 * sigma)
    raise SurrogateDecreaseFailure(
        "no sufficient decrease after "
        f"{params.max_sigma_doublings} sigma doublings")


@dataclass
class CriticalityCertificate:
    z: float
    eta: float
    sigma: float
    anchor: float
    passed: bool
    objective: Callable[[float], float] = field(repr=False, default=None)


@dataclass
class MoaResult:
    x_final: float
    records: List[MoaIterRecord]
    certificate: CriticalityCertificate


def criticality_check_1d(objective: Callable[[float], float], z: float,
                         eta: float, lo: float = 0.0, hi: float = 1.0) -> bool:
    """True iff the objective at z is no bigger than at the feasible
    neighbors z - eta and z + eta."""
    v = objective(z)
    for w in (z - eta, z + eta):
        if lo <= w <= hi and objective(w) < v:
            return False
    return True


def run_moa_to_criticality(F: Callable[[float], float],
                           model_factory: Callable[[float], SurrogateModel],
                           x_start: float, params: MOAParams,
                           sigma_start: Optional[float] = None) -> MoaResult:
    """Iterate until consecutive iterates are within eta, then certify the
    final point against the last regularized model objective."""
    x = x_start
    sigma = sigma_start
    records: List[MoaIterRecord] = []
    for j in range(params.max_iterations):
        rec = moa_iteration(F, model_factory, x, params,
                            sigma_start=sigma, j=j)
        records.append(rec)
        x, sigma = rec.x, rec.sigma
        if rec.step <= params.eta:
            break
    else:
        raise SurrogateDecreaseFailure("MOA iteration limit reached before "
                                       "the small-step stopping rule fired")
    last = records[-1]
    # the final subproblem was anchored at the iterate preceding the last step
    anchor = x_start if len(records) == 1 else records[-2].x
    model = model_factory(anchor)
    objective = lambda t: regularized_value(model, t, last.sigma)
    passed = criticality_check_1d(objective, x, params.eta)
    cert = CriticalityCertificate(z=x, eta=params.eta, sigma=last.sigma,
                                  anchor=anchor, passed=passed,
                                  objective=objective)
    return MoaResult(x_final=x, records=records, certificate=cert)


def default_surrogate(problem, x_k: float, y_cheap, y_target,
                      alpha: float, nu: float,
                      exponent: float = 3.0) -> SurrogateModel:
    """Cheap-accuracy shift model anchored at x_k: the cheap objective plus
    the step penalty, shifted so the value at x_k equals the target."""
    shift = problem.evaluate(x_k, y_target) - problem.evaluate(x_k, y_cheap)

    def value(x):
        return (problem.evaluate(x, y_cheap)
                + alpha * problem.domain.distance(x_k, x) ** nu
                + shift)

    return SurrogateModel(anchor=x_k, value=value, exponent=exponent)
