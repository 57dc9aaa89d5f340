import math

import numpy as np
import pytest

from irdfo.ircore import (IRParams, PrecisionToken, VariableAccuracyProblem,
                          IntervalDomain, merit, run_ir)


class SyntheticProblem(VariableAccuracyProblem):
    """Analytic 1-D test objective with a 1/y accuracy perturbation."""

    def __init__(self):
        self.domain = IntervalDomain(0.0, 1.0)
        self.lower_bound_hint = -2.0

    def token(self, budget):
        return PrecisionToken(budget=int(budget), accuracy=1.0 / budget)

    def evaluate(self, x, y):
        return ((x - 0.3) ** 2 + 0.05 * math.sin(40.0 * x)
                + y.accuracy * math.cos(7.0 * x))

    def restore(self, y):
        return self.token(2 * y.budget)


@pytest.fixture
def synthetic_problem():
    return SyntheticProblem()


@pytest.fixture(scope="session")
def dam_problem():
    from irdfo.dambreak import default_problem
    return default_problem()


@pytest.fixture(scope="session")
def dam_run(dam_problem):
    """Full default fit, shared across tests; returns (result, wall seconds)."""
    import time
    t0 = time.time()
    result = run_ir(dam_problem, IRParams(), 0.5, 100)
    return result, time.time() - t0


_ULPS = 8


def leq(a, b):
    scale = max(abs(a), abs(b), 1.0)
    return a <= b + _ULPS * math.ulp(scale)


def check_ir_inequalities(records, params):
    """Recompute (erre), (beta), (armijo1), (dos) from the logged trace and
    verify theta is nonincreasing within (0, theta0]."""
    prev_theta = params.theta0
    for rec in records:
        if rec.branch == "final":
            continue   # terminal bookkeeping row, not an outer iteration
        assert leq(rec.h_res, params.r_ir * rec.h), f"(erre) fails at k={rec.k}"
        assert leq(rec.f_res, rec.f + params.beta * rec.h), \
            f"(beta) fails at k={rec.k}"
        assert leq(rec.f_next, rec.f_res - params.alpha * rec.dist ** params.nu), \
            f"(armijo1) fails at k={rec.k}"
        slack = 0.5 * (1.0 - params.r_ir) * (rec.h_res - rec.h)
        assert leq(merit(rec.f_next, rec.h_next, rec.theta_next),
                   merit(rec.f, rec.h, rec.theta_next) + slack), \
            f"(dos) fails at k={rec.k}"
        assert 0.0 < rec.theta_next <= prev_theta + 1e-300, \
            f"theta increased at k={rec.k}"
        prev_theta = rec.theta_next
