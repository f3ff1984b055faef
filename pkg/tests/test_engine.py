import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nashmoser import engine as en
from nashmoser.scheduler import NmParams


def shifted_square(c=2.0, gain=1.0, fail_at=None):
    """Phi(u) = (1 + u)^2 - c with root sqrt(c) - 1; gain scales the Newton step."""
    calls = {"n": 0}

    def inv(u, phi):
        calls["n"] += 1
        if fail_at is not None and calls["n"] > fail_at:
            raise RuntimeError("singular")
        return gain * phi / (2 * (1 + u))

    return en.FunctionalProblem(lambda u: (1 + u) ** 2 - c, inv, NmParams(), floor=1e-14,
                                linearized=lambda u, v: 2 * (1 + u) * v)


def test_newton_finds_square_root():
    res = en.run_newton(shifted_square(), override=True)
    assert res.status == en.CONVERGED
    assert res.u == pytest.approx(math.sqrt(2) - 1, abs=1e-14)
    assert en.quadratic_contraction_ok(res.trace, res.floor)


def test_identity_smoothing_reproduces_newton():
    a = en.run_newton(shifted_square(), override=True)
    b = en.run_nash_moser(shifted_square(), override=True)
    assert np.array_equal(a.trace.column("res_s"), b.trace.column("res_s"))
    assert b.method == "nash-moser" and a.method == "newton"


def test_overshooting_step_diverges():
    res = en.run_newton(shifted_square(c=5.0, gain=-3.0), override=True)
    assert res.status == en.DIVERGED


def test_failing_right_inverse_stalls_with_note():
    res = en.run_newton(shifted_square(fail_at=1), override=True)
    assert res.status == en.STALLED
    assert any("right inverse failed" in n for n in res.notes)


def test_linear_contraction_runs_out_of_budget():
    res = en.run_newton(shifted_square(gain=0.1), jmax=3, override=True)
    assert res.status == en.BUDGET and len(res.trace) == 3


def test_infeasible_parameters_refused_without_override():
    prob = shifted_square()
    prob.params = NmParams(k=3, alpha=0.99)
    with pytest.raises(ValueError, match="feasibility"):
        en.run_newton(prob)


def test_trace_csv_layout_and_deterministic_timing_column():
    res = en.run_newton(shifted_square(), override=True)
    lines = res.trace.to_csv().strip().splitlines()
    assert lines[0] == ",".join(en.TRACE_COLUMNS)
    assert all(line.endswith(",") for line in lines[1:])
    assert not res.trace.to_csv(with_timing=True).strip().splitlines()[1].endswith(",")
    assert res.trace.to_csv() == en.run_newton(shifted_square(), override=True).trace.to_csv()


def test_smoothing_diagnostics_split():
    # a two-component linear problem: Phi(u) = u - b, smoothing drops the second component
    b = np.array([1.0, 0.5])
    prob = en.FunctionalProblem(lambda u: u - b, lambda u, phi: phi, NmParams(), shape=(2,),
                                smooth=lambda v, th: np.array([v[0], 0.0]), linearized=lambda u, v: v)
    res = en.run_nash_moser(prob, jmax=10, override=True)
    first = res.trace[0]
    assert first.defect == pytest.approx(0.0, abs=1e-15)
    assert first.e1 == pytest.approx(0.5)  # |Phi'(Sv - v)| = |v_2|
    assert first.e2 == pytest.approx(0.0, abs=1e-15)  # linear problem, no Taylor remainder
    assert res.status == en.STALLED


def test_summary_flags():
    res = en.run_newton(shifted_square(), override=True)
    summ = res.summary()
    assert summ["status"] == en.CONVERGED and summ["steps"] == len(res.trace)
    assert set(summ) >= {"c1_all", "c2_all", "final_res", "floor", "notes"}


@given(c=st.floats(1.1, 9.0))
def test_newton_root_property(c):
    res = en.run_newton(shifted_square(c=c), jmax=40, override=True)
    assert res.converged
    assert (1 + res.u) ** 2 == pytest.approx(c, abs=1e-13)


@given(res=st.lists(st.floats(1e-12, 1.0), min_size=2, max_size=8))
def test_quadratic_check_accepts_squares(res):
    # r_{j+1} = r_j^2 passes with C at round-off level
    seq = [res[0]]
    for _ in res[1:]:
        seq.append(seq[-1] ** 2)
    tr = en.IterationTrace([en.StepRecord(j, 1.0, r, 0, 0, 0, 0) for j, r in enumerate(seq) if r > 0])
    assert en.quadratic_contraction_ok(tr, floor=0.0, C=1e-9)
