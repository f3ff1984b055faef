import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nashmoser import engine as en
from nashmoser import fnspace as fs
from nashmoser import relax as rx


@pytest.fixture(scope="module")
def generic():
    return rx.make_model("generic")


@pytest.fixture(scope="module")
def jinxin():
    return rx.make_model("exact-jinxin")


@pytest.fixture(scope="module")
def solved(generic):
    return rx.solve_profile(generic, 0.1, rx.RelaxConfig(n=1024))


@pytest.mark.parametrize("preset", rx.PRESETS)
def test_presets_satisfy_structural_assumptions(preset):
    assert all(rx.make_model(preset).check().values())


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown preset"):
        rx.make_model("nope")


def test_jinxin_endpoints_and_reduced_quantities(jinxin):
    sh = rx.shock_endpoints(jinxin, 0.2)
    # f_* = u^2 / 2 is even, so the standing pair is symmetric
    assert sh.u_minus == pytest.approx(0.1, abs=1e-15) and sh.u_plus == pytest.approx(-0.1, abs=1e-15)
    u = np.array([-0.3, 0.0, 0.4])
    assert np.allclose(jinxin.b_star(u), 1.0)  # b_* = -A12 Q^-1 A21 = 1
    assert np.allclose(jinxin.c_star(u), -1.0)


def test_non_lax_amplitude_rejected(jinxin):
    with pytest.raises(ValueError):
        rx.shock_endpoints(jinxin, 0.0)


@pytest.mark.parametrize("eps", [0.2, 0.1])
def test_jinxin_profile_is_the_tanh(jinxin, eps):
    prof = rx.ce_profile(jinxin, rx.shock_endpoints(jinxin, eps), n=1024)
    exact = rx.closed_form_jinxin(eps, prof.grid.x)
    assert np.abs(prof.values - exact).max() <= 1e-11
    assert np.abs(rx.residual_phi(jinxin, prof, np.zeros_like(prof.values))).max() <= 1e-12


def test_small_domain_refused(jinxin):
    sh = rx.shock_endpoints(jinxin, 0.1)
    with pytest.raises(ValueError, match="domain too small"):
        rx.ce_profile(jinxin, sh, fs.Grid.line(257, 20.0))


def test_generic_ce_residual_is_nonzero_in_both_rows(generic):
    prob = rx.build_problem(generic, 0.1, rx.RelaxConfig(n=1024))
    ru, rv = rx.ce_residual(generic, prob.profile)
    assert np.abs(ru).max() > 1e-7 and np.abs(rv).max() > 1e-7


def test_linearization_matches_difference_quotients(generic):
    prob = rx.build_problem(generic, 0.1, rx.RelaxConfig(n=1024))
    rng = np.random.default_rng(0)
    Ut = 1e-3 * rx.random_forcing(prob.profile, rng)
    V = rx.random_forcing(prob.profile, rng)
    lin = rx.linearize(generic, prob.profile, Ut)
    errs = []
    for h in (1e-3, 5e-4):
        d = (prob.residual(Ut + h * V) - prob.residual(Ut - h * V)) / (2 * h) - lin.apply(V)
        errs.append(np.abs(d).max())
    assert max(errs) < 1e-9
    assert np.allclose(lin.matrix() @ V.reshape(-1), lin.apply(V).reshape(-1), atol=1e-12)


def test_second_derivative_is_taylor_remainder_and_symmetric(generic):
    prob = rx.build_problem(generic, 0.1, rx.RelaxConfig(n=1024))
    rng = np.random.default_rng(1)
    Ut, V, W = (rx.random_forcing(prob.profile, rng) for _ in range(3))
    Ut = 1e-3 * Ut
    lin = rx.linearize(generic, prob.profile, Ut)
    h = 1e-2
    rem = prob.residual(Ut + h * V) - prob.residual(Ut) - h * lin.apply(V)
    # every nonlinearity is quadratic, so the remainder is exactly h^2/2 Phi''[V, V]
    assert np.allclose(rem, 0.5 * h**2 * prob.second_derivative(Ut, V, V), atol=1e-14)
    assert np.allclose(prob.second_derivative(Ut, V, W), prob.second_derivative(Ut, W, V), atol=1e-14)


def test_right_inverse_defect(generic):
    prob = rx.build_problem(generic, 0.1, rx.RelaxConfig(n=1024))
    probe = rx.operator_norm_probe(prob, draws=5)
    assert probe["defect"] <= 1e-9 and probe["ratio"] > 0


def test_solver_refuses_multiple_micro_components(generic):
    prob = rx.build_problem(generic, 0.1, rx.RelaxConfig(n=1024))
    wide = rx.RelaxModel("wide", 2, generic.flux, generic.A, generic.dA, generic.q, generic.dq, generic.d2q)
    with pytest.raises(NotImplementedError):
        rx.solve_linearized(wide, prob.profile, prob.zero(), prob.zero())


def test_generic_solve_converges_with_c_conditions(solved):
    _, res, prob = solved
    assert res.status == en.CONVERGED
    assert res.summary()["c2_all"] and res.summary()["c1_all"]
    assert en.quadratic_contraction_ok(res.trace, res.floor)


def test_corrector_decays_exponentially(solved):
    _, res, prob = solved
    fit = rx.decay_fit(res.u, prob.grid.x)
    assert fit.rate >= 0.5 * prob.profile.delta * prob.profile.eps


def test_decay_fit_recovers_synthetic_rate():
    x = fs.Grid.line(2001, 400.0).x
    assert rx.decay_fit(3.0 * np.exp(-0.02 * np.abs(x)), x).rate == pytest.approx(0.02, rel=1e-8)


def test_decay_fit_rejects_non_decaying_input():
    x = fs.Grid.line(201, 10.0).x
    with pytest.raises(ValueError):
        rx.decay_fit(np.ones_like(x), x)


def test_translation_mode_spans_the_kernel(solved):
    _, res, prob = solved
    K = prob.translation_mode(res.u)
    noise = np.random.default_rng(0).standard_normal(K.shape)
    kb = en.kernel_basis(prob, res.u, [K, noise])
    assert len(kb.basis) == 1 and kb.defects[0] < 1e-4
    assert kb.rejected and kb.rejected[0][0] == 1


@settings(max_examples=6)
@given(cells=st.floats(-5.0, 5.0).filter(lambda c: abs(c) > 0.05))
def test_phase_align_recovers_shifts(solved, cells):
    _, res, prob = solved
    kb = en.kernel_basis(prob, res.u, [prob.translation_mode(res.u)])
    uh = prob.translate(res.u, cells * prob.cell)
    pa = en.phase_align(prob, res.u, uh, kb.basis, bracket_cells=8, samples=33)
    assert pa.shift_cells == pytest.approx(-cells, abs=0.1)


def test_default_floor_formula():
    assert rx.default_floor(0.1, 0.5) == pytest.approx(3 * 0.05**4 * 1e-3)
