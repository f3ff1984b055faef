import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nashmoser import scheduler as sc

RELAX = dict(k=3, kappa=1, gamma0=0, gamma=1, m=1, r=1, rprime=0)


def _scan_pbar(k, kappa, gamma0, gamma, m, r, rprime, n_max=2000):
    """Exact rational scan of the p-bar formula over integer N, written out independently."""
    k, kappa, gamma0, gamma = map(Fraction, (k, kappa, gamma0, gamma))
    mp = max(Fraction(m) + rprime, Fraction(r))
    rr = max(Fraction(r), Fraction(rprime))
    best = None
    for N in range(1, n_max):
        if k - 2 * kappa <= 0 or N <= k * mp / (k - 2 * kappa):
            continue
        M = max(gamma0 / k, gamma / k, Fraction(1, 2) * (1 + mp / N))
        den = k - kappa - k * M
        if den <= 0:
            continue
        val = rprime - rr + k * (N + 1) * (M + m + rr) / den
        if best is None or val < best[0]:
            best = (val, N)
    return best


def test_pbar_relax_parameters_by_hand():
    # N = 7: M = 4/7, denominator 3 - 1 - 12/7 = 2/7, ratio 24 (18/7) / (2/7) = 216
    value, n_star = sc.pbar(sc.NmParams(**RELAX))
    assert n_star == 7
    assert value == pytest.approx(215, abs=1e-9)


def test_pbar_matches_rational_scan():
    value, n_star = sc.pbar(sc.NmParams(**RELAX))
    exact, n_exact = _scan_pbar(**RELAX)
    assert exact == 215 and n_exact == 7
    assert value == pytest.approx(float(exact)) and n_star == n_exact


@given(k=st.floats(2.3, 6.0), gamma=st.floats(0.0, 1.0), m=st.sampled_from([1, 2]))
def test_pbar_agrees_with_scan_on_random_parameters(k, gamma, m):
    kw = dict(k=k, kappa=1, gamma0=0, gamma=gamma, m=m, r=1, rprime=0)
    value, n_star = sc.pbar(sc.NmParams(**kw))
    exact, _ = _scan_pbar(**kw, n_max=max(2000, n_star + 2))
    assert value == pytest.approx(float(exact), rel=1e-9)


def test_pbar_real_not_above_integer_value():
    p = sc.NmParams(**RELAX)
    assert sc.pbar_real(p)[0] <= sc.pbar(p)[0] + 1e-9


def test_blow_up_rates():
    d = np.array([1e-2, 5e-3, 2.5e-3])
    near_2kappa = [sc.pbar(sc.NmParams(k=2 + x, kappa=1, gamma0=0, gamma=0.5, m=1, r=1, rprime=0))[0] for x in d]
    near_kg = [sc.pbar(sc.NmParams(k=2.5 + x, kappa=1, gamma0=0, gamma=1.5, m=1, r=1, rprime=0))[0] for x in d]
    assert np.polyfit(np.log(d), np.log(near_2kappa), 1)[0] == pytest.approx(-2, abs=0.3)
    assert np.polyfit(np.log(d), np.log(near_kg), 1)[0] == pytest.approx(-1, abs=0.3)


def test_ass_k_boundary_is_infeasible():
    p = sc.NmParams(k=2, kappa=1, gamma0=0, gamma=0)
    assert not sc.check_ass_k(p)
    assert not sc.feasibility(p).feasible
    with pytest.raises(sc.FeasibilityError):
        sc.pbar(p)


def test_alpha_window_lower_end():
    lo, hi = sc.alpha_window(sc.NmParams(**RELAX, N=7, p=300))
    assert lo == pytest.approx(4 / 7)
    assert hi > lo


def test_theta_schedule_double_exponential():
    sched = sc.theta_schedule(sc.NmParams(k=3, eps=0.1, zeta=1.1), 3)
    assert sched.thetas[0] == pytest.approx(1000.0)
    assert sched.thetas[1] == pytest.approx(1000**1.1)
    assert sched.thetas[3] == pytest.approx(1000 ** (1.1**3))


def test_theta_schedule_truncates_before_overflow():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sched = sc.theta_schedule(sc.NmParams(k=3, eps=0.01, zeta=1.9, alpha=0.99), 40)
    assert sched.truncated and any("overflow" in str(w.message) for w in caught)
    assert all(math.isfinite(t) for t in sched.thetas)


def test_step_conditions_survive_huge_theta():
    p = sc.feasible_pick(sc.NmParams(**RELAX, s0=3, eps=0.1))
    v = sc.step_conditions(p, sc.theta_at(p, 200), sc.theta_at(p, 201))
    assert isinstance(v.all(), bool)


@pytest.mark.parametrize("kw", [dict(k=-1), dict(eps=1.5), dict(zeta=1.0), dict(theta0=0.5)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        sc.NmParams(**kw)


@pytest.mark.parametrize("eps", [0.2, 0.1, 0.05, 0.025])
def test_feasible_pick_exists_for_relax_parameters(eps):
    assert sc.feasibility(sc.feasible_pick(sc.NmParams(**RELAX, s0=3, eps=eps))).feasible


def test_large_eps_is_genuinely_infeasible():
    # theta0 = 4^3 is too small for the summability of theta_j^-alpha below alpha = 2/3
    with pytest.raises(sc.FeasibilityError):
        sc.feasible_pick(sc.NmParams(**RELAX, s0=3, eps=0.25))


@given(k=st.floats(2.2, 5.0), eps=st.floats(0.02, 0.3))
def test_feasible_pick_meets_every_condition(k, eps):
    try:
        p = sc.feasible_pick(sc.NmParams(k=k, kappa=1, gamma0=0, gamma=1, m=1, r=1, rprime=0, s0=3, eps=eps))
    except sc.FeasibilityError:
        return
    assert sc.feasibility(p).feasible
    for j in range(4):
        assert sc.step_conditions(p, sc.theta_at(p, j), sc.theta_at(p, j + 1)).all()
    assert p.zeta <= 2 * p.alpha
    assert p.p >= sc.pbar(p)[0] - 1e-9


@given(k=st.floats(2.2, 5.0), dk=st.floats(0.05, 1.0))
def test_pbar_decreases_with_k(k, dk):
    base = dict(kappa=1, gamma0=0, gamma=1, m=1, r=1, rprime=0)
    assert sc.pbar(sc.NmParams(k=k + dk, **base))[0] <= sc.pbar(sc.NmParams(k=k, **base))[0] + 1e-9
