import math

import pytest

from conftest import check_ir_inequalities
from irdfo.ircore import (AssumptionViolation, IntervalDomain, IRParams,
                          IRState, PrecisionToken, VariableAccuracyProblem,
                          acceptance_test, merit, run_ir, update_penalty,
                          write_trace_csv)


def test_merit_convex_combination():
    assert merit(2.0, 4.0, 0.25) == pytest.approx(0.25 * 2.0 + 0.75 * 4.0)
    with pytest.raises(ValueError):
        merit(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        merit(1.0, 1.0, 1.0)


def test_update_penalty_keeps_theta_on_merit_decrease():
    # restoration halves h without hurting f: merit improves, theta unchanged
    assert update_penalty(0.5, f_cur=1.0, f_res=1.0,
                          h_cur=0.1, h_res=0.05, r_ir=0.5) == 0.5


def test_update_penalty_shrinks_theta():
    # hand-computed: slack = 0.25*(0.05-0.1) = -0.0125; merit test fails,
    # new theta = 1.5*0.05 / (2*(0.2 + 0.05)) = 0.15
    got = update_penalty(0.5, f_cur=1.0, f_res=1.2,
                         h_cur=0.1, h_res=0.05, r_ir=0.5)
    assert got == pytest.approx(0.15)
    assert 0.0 < got < 0.5


def test_update_penalty_rejects_bad_restoration():
    # h grew and f barely moved: merit test fails with a nonpositive
    # denominator, which only happens when restoration broke its contract
    with pytest.raises(AssumptionViolation):
        update_penalty(0.5, f_cur=1.0, f_res=1.05,
                       h_cur=0.1, h_res=0.2, r_ir=0.5)


def test_acceptance_test_requires_both_clauses():
    params = IRParams()
    common = dict(f_res=0.5, f_cur=0.5, h_cur=0.01, h_res=0.005,
                  dist=0.1, params=params)
    # big decrease: passes both the alpha-decrease and the merit clause
    assert acceptance_test(f_trial=0.4, theta_next=0.5, **common)
    # fails the alpha-decrease clause
    assert not acceptance_test(f_trial=0.5, theta_next=0.5, **common)
    # passes clause one but the merit gain is below (1-r)/2 * (h - h_res)
    assert not acceptance_test(f_trial=0.4999, theta_next=0.5, **common)


def test_interval_domain():
    dom = IntervalDomain(0.0, 1.0)
    assert dom.distance(0.2, 0.7) == pytest.approx(0.5)
    assert dom.contains(0.0) and not dom.contains(1.5)
    with pytest.raises(ValueError):
        IntervalDomain(1.0, 1.0)


def test_precision_token_validation():
    with pytest.raises(ValueError):
        PrecisionToken(budget=10, accuracy=-1.0)


def test_abstract_token_hook_raises():
    class Bare(VariableAccuracyProblem):
        def evaluate(self, x, y):
            return 0.0

        def restore(self, y):
            return y

    with pytest.raises(NotImplementedError):
        Bare().token(100)


def test_state_prev_y_defaults_to_current():
    tok = PrecisionToken(budget=100, accuracy=0.01)
    st = IRState(x=0.5, y=tok, theta=0.5)
    assert st.prev_y is tok


def test_synthetic_run_converges_and_traces(synthetic_problem, tmp_path):
    params = IRParams()
    result = run_ir(synthetic_problem, params, 0.5, 100)
    assert result.status == "converged"
    assert result.certificate is not None and result.certificate.passed
    assert result.y_final.accuracy <= params.eps_feas
    # the outer loop never skips the doubling ladder
    budgets = [rec.y.budget for rec in result.records]
    assert budgets[0] == 100 and budgets == sorted(budgets)
    check_ir_inequalities(result.records, params)
    # the final iterate should be close to the smooth objective's best region
    assert 0.0 <= result.x_final <= 1.0

    path = tmp_path / "trace.csv"
    write_trace_csv(path, result)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,x,y,f,f_exact,h,theta,branch"
    assert len(lines) == len(result.records) + 1


def test_run_ir_accepts_raw_budget(synthetic_problem):
    a = run_ir(synthetic_problem, IRParams(), 0.5, 100)
    b = run_ir(synthetic_problem, IRParams(),
               0.5, synthetic_problem.token(100))
    assert a.x_final == b.x_final
    assert a.y_final == b.y_final


def test_restoration_contract_is_enforced():
    class BadRestore(VariableAccuracyProblem):
        def __init__(self):
            self.domain = IntervalDomain(0.0, 1.0)

        def token(self, budget):
            return PrecisionToken(budget=int(budget), accuracy=1.0 / budget)

        def evaluate(self, x, y):
            return x * x

        def restore(self, y):
            return y   # does not reduce h: violates the restoration ratio

    with pytest.raises(AssumptionViolation):
        run_ir(BadRestore(), IRParams(), 0.5, 100)


def test_params_validation():
    with pytest.raises(ValueError):
        IRParams(theta0=1.0)
    with pytest.raises(ValueError):
        IRParams(r_ir=1.0)
    with pytest.raises(ValueError):
        IRParams(alpha=0.0)
