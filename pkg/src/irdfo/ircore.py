"""Inexact-restoration driver with a variable-accuracy objective.

Each iteration restores the evaluation accuracy (here: doubles an iteration
budget), updates a penalty parameter balancing objective value against
accuracy in the merit function theta*f + (1-theta)*h, and runs an
optimization phase built on the regularized-surrogate engine in
:mod:`irdfo.moa`. Termination happens once the accuracy score falls below
``eps_feas`` and the surrogate engine has certified an approximately
critical point.
"""

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional

from . import moa as moa_mod
from .moa import CriticalityCertificate, MOAParams


class AssumptionViolation(RuntimeError):
    """A contract of the restoration or surrogate machinery was broken."""


class MetricDomain(ABC):
    @abstractmethod
    def distance(self, a, b) -> float:
        ...


class IntervalDomain(MetricDomain):
    """A real interval with the absolute-value distance."""

    def __init__(self, lo: float = 0.0, hi: float = 1.0):
        if not lo < hi:
            raise ValueError("need lo < hi")
        self.lo = lo
        self.hi = hi

    def distance(self, a: float, b: float) -> float:
        return abs(a - b)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


@dataclass(frozen=True)
class PrecisionToken:
    """An evaluation-accuracy handle: an iteration budget with score h."""

    budget: int
    accuracy: float

    def __post_init__(self):
        if self.accuracy < 0:
            raise ValueError("accuracy score must be nonnegative")


class VariableAccuracyProblem(ABC):
    """Objective f(x, y) evaluable at different accuracy tokens y.

    ``restore`` must produce a token whose score is at most r_IR times the
    input's, with f(x, restore(y)) <= f(x, y) + beta*h(y) at the current
    iterate; both are verified by the driver at every iteration.
    """

    domain: MetricDomain
    lower_bound_hint: float = -math.inf

    @abstractmethod
    def evaluate(self, x, y: PrecisionToken) -> float:
        ...

    @abstractmethod
    def restore(self, y: PrecisionToken) -> PrecisionToken:
        ...

    def token(self, budget) -> PrecisionToken:
        """Build a token from a raw budget; optional convenience hook."""
        raise NotImplementedError(
            "this problem does not build tokens from raw budgets")


@dataclass
class IRParams:
    theta0: float = 0.5
    nu: float = 2.0
    r_ir: float = 0.5
    alpha: float = 1e-4
    beta: float = 100.0
    eps_feas: float = 1.0 / 12800.0
    eps_dist: float = 1e-4       # diagnostic only, never triggers termination
    eta: float = 1e-6            # criticality tolerance, forwarded to MOA

    def __post_init__(self):
        if not 0 < self.theta0 < 1:
            raise ValueError("theta0 must be in (0, 1)")
        if not 0 < self.r_ir < 1:
            raise ValueError("r_ir must be in (0, 1)")
        for name in ("nu", "alpha", "beta", "eps_feas", "eps_dist", "eta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def merit(f_val: float, h_val: float, theta: float) -> float:
    """theta * f + (1 - theta) * h."""
    if not 0 < theta < 1:
        raise ValueError("theta must be in (0, 1)")
    return theta * f_val + (1.0 - theta) * h_val


def update_penalty(theta_k: float, f_cur: float, f_res: float,
                   h_cur: float, h_res: float, r_ir: float) -> float:
    """Keep theta when the restored merit decreased enough, shrink otherwise.

    Returns a value in (0, theta_k]. The caller is responsible for the
    restoration preconditions h_res <= r_ir*h_cur and f_res <= f_cur + beta*h_cur.
    """
    slack = 0.5 * (1.0 - r_ir) * (h_res - h_cur)
    if merit(f_res, h_res, theta_k) <= merit(f_cur, h_cur, theta_k) + slack:
        return theta_k
    denom = 2.0 * (f_res - f_cur + h_cur - h_res)
    if denom <= 0:
        raise AssumptionViolation(
            "penalty update denominator is nonpositive; "
            "restoration preconditions were violated")
    return (1.0 + r_ir) * (h_cur - h_res) / denom


def acceptance_test(f_trial: float, f_res: float, f_cur: float,
                    h_cur: float, h_res: float, dist: float,
                    theta_next: float, params: IRParams) -> bool:
    """Trial-point test of the optimization phase at unchanged accuracy.

    True iff the trial value beats the restored value by alpha*dist^nu and
    the merit (at theta_next, with the trial sharing the current accuracy
    score) improves by at least (1-r)/2 * (h_res - h_cur).
    """
    if f_trial > f_res - params.alpha * dist ** params.nu:
        return False
    slack = 0.5 * (1.0 - params.r_ir) * (h_res - h_cur)
    return (merit(f_trial, h_cur, theta_next)
            <= merit(f_cur, h_cur, theta_next) + slack)


@dataclass
class IRRecord:
    k: int
    x: object
    y: PrecisionToken
    f: float
    h: float
    theta: float
    dist: float = 0.0
    branch: str = ""
    # restoration and step bookkeeping, used to re-check the logged
    # inequalities after a run
    h_res: float = 0.0
    f_res: float = 0.0
    theta_next: float = 0.0
    f_next: float = 0.0
    h_next: float = 0.0
    target_evals: int = 0
    model_evals: int = 0
    small_step: bool = False     # dist <= eps_dist (diagnostic flag)


@dataclass
class IRState:
    x: object
    y: PrecisionToken
    theta: float
    k: int = 0
    prev_y: Optional[PrecisionToken] = None   # token of iteration max(0, k-1)
    sigma: Optional[float] = None             # warm start for the MOA engine

    def __post_init__(self):
        if self.prev_y is None:
            self.prev_y = self.y


@dataclass
class IRResult:
    records: List[IRRecord]
    status: str                  # "converged" or "budget-exhausted"
    x_final: object
    y_final: PrecisionToken
    certificate: Optional[CriticalityCertificate] = None
    moa_records: List[moa_mod.MoaIterRecord] = field(default_factory=list)


def _target_function(problem, x_k, y_target, params, counter):
    def F(x):
        counter[0] += 1
        return (problem.evaluate(x, y_target)
                + params.alpha * problem.domain.distance(x_k, x) ** params.nu)
    return F


def _model_factory(problem, x_k, y_cheap, y_target, params, exponent, counter):
    """Anchored default surrogate: cheap-accuracy objective shifted so the
    model matches the target function exactly at the anchor."""
    def factory(anchor):
        shift = (problem.evaluate(anchor, y_target)
                 - problem.evaluate(anchor, y_cheap))

        def value(x):
            counter[0] += 1
            return (problem.evaluate(x, y_cheap)
                    + params.alpha * problem.domain.distance(x_k, x) ** params.nu
                    + shift)

        return moa_mod.SurrogateModel(anchor=anchor, value=value,
                                      exponent=exponent)
    return factory


_ULPS = 8


def _leq(a: float, b: float) -> bool:
    scale = max(abs(a), abs(b), 1.0)
    return a <= b + _ULPS * math.ulp(scale)


def ir_iteration(problem: VariableAccuracyProblem, state: IRState,
                 params: IRParams, moa_params: MOAParams):
    """One outer iteration. Returns (new_state, record, certificate_or_None).

    A non-None certificate means the run terminated at this iteration.
    """
    x_k, y_k, theta_k = state.x, state.y, state.theta
    h_k = y_k.accuracy
    f_k = problem.evaluate(x_k, y_k)

    # Step 1: restoration, with both contract inequalities verified.
    y_re = problem.restore(y_k)
    h_re = y_re.accuracy
    if not _leq(h_re, params.r_ir * h_k):
        raise AssumptionViolation(
            f"restoration ratio violated: h(y_re)={h_re} > r*h(y)={params.r_ir * h_k}")
    f_re = problem.evaluate(x_k, y_re)
    if not _leq(f_re, f_k + params.beta * h_k):
        raise AssumptionViolation(
            f"restored objective bound violated: f_re={f_re} > "
            f"f + beta*h = {f_k + params.beta * h_k}")

    # Step 2: penalty update.
    theta_next = update_penalty(theta_k, f_k, f_re, h_k, h_re, params.r_ir)

    y_cheap = state.prev_y
    tgt_count = [0]
    mdl_count = [0]
    certificate = None
    moa_records: List[moa_mod.MoaIterRecord] = []

    def run_moa(y_target, to_criticality):
        F = _target_function(problem, x_k, y_target, params, tgt_count)
        factory = _model_factory(problem, x_k, y_cheap, y_target, params,
                                 moa_params.p_exp, mdl_count)
        if to_criticality:
            res = moa_mod.run_moa_to_criticality(F, factory, x_k, moa_params,
                                                 sigma_start=state.sigma)
            moa_records.extend(res.records)
            return res.x_final, res.records[-1].sigma, res.certificate
        step = moa_mod.moa_iteration(F, factory, x_k, moa_params,
                                     sigma_start=state.sigma)
        moa_records.append(step)
        return step.x, step.sigma, None

    # Step 3: optimization phase.
    y_next = y_k
    sigma_next = state.sigma
    if y_next.accuracy <= params.eps_feas:
        x_next, sigma_next, certificate = run_moa(y_next, to_criticality=True)
        branch = "critical"
    else:
        x_trial, sigma_trial, _ = run_moa(y_next, to_criticality=False)
        dist = problem.domain.distance(x_k, x_trial)
        f_trial = problem.evaluate(x_trial, y_next)
        if acceptance_test(f_trial, f_re, f_k, h_k, h_re, dist,
                           theta_next, params):
            x_next, sigma_next = x_trial, sigma_trial
            branch = "loose-accepted"
        else:
            y_next = y_re
            if y_next.accuracy <= params.eps_feas:
                x_next, sigma_next, certificate = run_moa(y_next,
                                                          to_criticality=True)
                branch = "restored-critical"
            else:
                x_next, sigma_next, _ = run_moa(y_next, to_criticality=False)
                branch = "restored"

    dist = problem.domain.distance(x_k, x_next)
    record = IRRecord(
        k=state.k, x=x_k, y=y_k, f=f_k, h=h_k, theta=theta_k,
        dist=dist, branch=branch, h_res=h_re, f_res=f_re,
        theta_next=theta_next, f_next=problem.evaluate(x_next, y_next),
        h_next=y_next.accuracy, target_evals=tgt_count[0],
        model_evals=mdl_count[0], small_step=dist <= params.eps_dist)
    new_state = IRState(x=x_next, y=y_next, theta=theta_next, k=state.k + 1,
                        prev_y=y_k, sigma=sigma_next)
    return new_state, record, certificate, moa_records


def run_ir(problem: VariableAccuracyProblem, params: IRParams,
           x0, y0: PrecisionToken,
           moa_params: Optional[MOAParams] = None,
           max_iterations: Optional[int] = None) -> IRResult:
    """Drive the outer loop to the accuracy + criticality termination.

    The hard iteration cap (default 10 * h(y0) / eps_feas) guards against
    assumption violations; hitting it is reported as "budget-exhausted",
    distinct from convergence.
    """
    if not isinstance(y0, PrecisionToken):
        y0 = problem.token(y0)
    if moa_params is None:
        moa_params = MOAParams(eta=params.eta)
    if max_iterations is None:
        max_iterations = max(1, math.ceil(10.0 * y0.accuracy / params.eps_feas))
    state = IRState(x=x0, y=y0, theta=params.theta0)
    records: List[IRRecord] = []
    all_moa: List[moa_mod.MoaIterRecord] = []
    certificate = None
    for _ in range(max_iterations):
        state, record, certificate, moa_records = ir_iteration(
            problem, state, params, moa_params)
        records.append(record)
        all_moa.extend(moa_records)
        if certificate is not None:
            break
    status = "converged" if certificate is not None else "budget-exhausted"
    if certificate is not None:
        # terminal row: the final iterate evaluated at its own token
        f_fin = problem.evaluate(state.x, state.y)
        records.append(IRRecord(
            k=state.k, x=state.x, y=state.y, f=f_fin, h=state.y.accuracy,
            theta=state.theta, branch="final", h_res=state.y.accuracy,
            f_res=f_fin, theta_next=state.theta, f_next=f_fin,
            h_next=state.y.accuracy))
    return IRResult(records=records, status=status, x_final=state.x,
                    y_final=state.y, certificate=certificate,
                    moa_records=all_moa)


def write_trace_csv(path, result: IRResult,
                    problem: Optional[VariableAccuracyProblem] = None) -> None:
    """Trace table: k, x, y, f (decimal and, when available, exact fraction),
    h, theta, branch."""
    exact = getattr(problem, "exact_fraction", None)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "x", "y", "f", "f_exact", "h", "theta", "branch"])
        for rec in result.records:
            frac = exact(rec.x, rec.y) if exact is not None else ""
            writer.writerow([
                rec.k, repr(float(rec.x)), rec.y.budget,
                format(rec.f, ".17g"), frac,
                format(rec.h, ".17g"), format(rec.theta, ".17g"), rec.branch])
