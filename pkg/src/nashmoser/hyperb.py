"""Scaled quasilinear transport with a source, solved over O(1) time.

The equation is eps u_t + eps A(u) u_x = f on the 2pi-periodic line, or its
conservative form eps u_t + eps (A(u) u)_x = f.  Time runs over [0, 1] with
fixed-step RK4; space is pseudo-spectral with 2/3 dealiasing.

The unknown of the iteration is a space-time array u of shape (n_t + 1, n_x):
the correction to a manufactured approximate solution u_a.  The residual has
a trace row, (u_a + u)(0) - u_0, and one row per time step,

    eps [ (y_{n+1} - y_n) / dt - RK4 increment(t_n, y_n) ],    y = u_a + u,

so its linearization is inverted exactly by a forward recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import fnspace as fs
from .engine import ProblemInstance, SolveResult, run_nash_moser, run_newton
from .scheduler import NmParams, feasible_pick

NONCONSERVATIVE = "nonconservative"
CONSERVATIVE = "conservative"
AMPLITUDE_CAP = 0.2


def burgers_flux():
    return (lambda u: u), (lambda u: np.ones_like(u))


def constant_flux(a0: float):
    return (lambda u: np.full_like(u, a0)), (lambda u: np.zeros_like(u))


def steady_sine(amplitude: float = 0.1):
    """u_exact = amplitude * sin x, independent of time."""
    return (lambda t, x: amplitude * np.sin(x)), (lambda t, x: np.zeros_like(x))


@dataclass(eq=False)
class HypProblem:
    grid: fs.Grid
    eps: float
    k_order: float
    u_exact: Callable  # (t, x) -> values
    ut_exact: Callable  # (t, x) -> time derivative
    w: np.ndarray  # perturbation shape in u_a = u_exact + eps^k w
    u0: np.ndarray  # initial data
    form: str = NONCONSERVATIVE
    flux: tuple = field(default_factory=burgers_flux)
    n_t: int = 50

    @property
    def dt(self) -> float:
        return 1.0 / self.n_t

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_t + 1)

    def approx(self) -> np.ndarray:
        x = self.grid.x
        ue = np.array([self.u_exact(t, x) for t in self.times])
        return ue + self.eps**self.k_order * self.w[None, :]

    def exact(self) -> np.ndarray:
        return np.array([self.u_exact(t, self.grid.x) for t in self.times])

    def to_dict(self) -> dict:
        return {"n_x": self.grid.n, "n_t": self.n_t, "eps": self.eps, "k_order": self.k_order, "form": self.form}


def dealias(y: np.ndarray) -> np.ndarray:
    """2/3-rule projection along the last axis."""
    n = y.shape[-1]
    c = np.fft.rfft(y, axis=-1)
    c[..., n // 3 + 1:] = 0.0
    return np.fft.irfft(c, n=n, axis=-1)


def _dx(y, grid):
    return fs.derivative_values(y, grid, 1)


def transport(prob: HypProblem, y: np.ndarray) -> np.ndarray:
    """Dealiased A(y) y_x, or (A(y) y)_x in conservative form."""
    A, _ = prob.flux
    py = dealias(y)
    if prob.form == CONSERVATIVE:
        return dealias(_dx(A(py) * py, prob.grid))
    return dealias(A(py) * _dx(py, prob.grid))


def transport_derivative(prob: HypProblem, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    A, dA = prob.flux
    py, pz = dealias(y), dealias(z)
    if prob.form == CONSERVATIVE:
        return dealias(_dx((dA(py) * py + A(py)) * pz, prob.grid))
    return dealias(dA(py) * pz * _dx(py, prob.grid) + A(py) * _dx(pz, prob.grid))


def source(prob: HypProblem, t: float) -> np.ndarray:
    """f = eps u_t + eps (discrete transport of u_exact), so u_exact solves the semi-discrete equation."""
    x = prob.grid.x
    return prob.eps * prob.ut_exact(t, x) + prob.eps * transport(prob, prob.u_exact(t, x))


def _rhs(prob, t, y):
    return -transport(prob, y) + source(prob, t) / prob.eps


def rk4_increment(prob: HypProblem, t: float, y: np.ndarray) -> np.ndarray:
    dt = prob.dt
    k1 = _rhs(prob, t, y)
    k2 = _rhs(prob, t + dt / 2, y + dt / 2 * k1)
    k3 = _rhs(prob, t + dt / 2, y + dt / 2 * k2)
    k4 = _rhs(prob, t + dt, y + dt * k3)
    return (k1 + 2 * k2 + 2 * k3 + k4) / 6


def rk4_increment_derivative(prob: HypProblem, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Directional derivative of the RK4 increment at y along z."""
    dt = prob.dt
    k1 = _rhs(prob, t, y)
    y2 = y + dt / 2 * k1
    k2 = _rhs(prob, t + dt / 2, y2)
    y3 = y + dt / 2 * k2
    k3 = _rhs(prob, t + dt / 2, y3)
    y4 = y + dt * k3
    d1 = -transport_derivative(prob, y, z)
    d2 = -transport_derivative(prob, y2, z + dt / 2 * d1)
    d3 = -transport_derivative(prob, y3, z + dt / 2 * d2)
    d4 = -transport_derivative(prob, y4, z + dt * d3)
    return (d1 + 2 * d2 + 2 * d3 + d4) / 6


def residual(prob: HypProblem, u: np.ndarray, ua: np.ndarray | None = None) -> np.ndarray:
    """Row 0 is the initial trace; row n >= 1 is the scaled defect of step n - 1."""
    y = (prob.approx() if ua is None else ua) + u
    out = np.empty_like(y)
    out[0] = y[0] - prob.u0
    for n, t in enumerate(prob.times[:-1]):
        out[n + 1] = prob.eps * ((y[n + 1] - y[n]) / prob.dt - rk4_increment(prob, t, y[n]))
    return out


def apply_linearized(prob: HypProblem, u: np.ndarray, z: np.ndarray, ua: np.ndarray | None = None) -> np.ndarray:
    y = (prob.approx() if ua is None else ua) + u
    out = np.empty_like(z)
    out[0] = z[0]
    for n, t in enumerate(prob.times[:-1]):
        out[n + 1] = prob.eps * ((z[n + 1] - z[n]) / prob.dt - rk4_increment_derivative(prob, t, y[n], z[n]))
    return out


def solve_linearized_ivp(prob: HypProblem, u: np.ndarray, F: np.ndarray, ua: np.ndarray | None = None,
                         blowup: float = 1e6) -> np.ndarray:
    """Forward recursion z_{n+1} = z_n + dt (dRK4(y_n) z_n + g_n / eps), z_0 = phi."""
    A, _ = prob.flux
    y = (prob.approx() if ua is None else ua) + u
    speed = float(np.max(np.abs(A(dealias(y)))))
    if speed * prob.dt > prob.grid.h:
        raise RuntimeError(f"CFL violated: max speed {speed:.3g} with dt {prob.dt:.3g}")
    z = np.empty_like(F)
    z[0] = F[0]
    scale = blowup * max(1.0, float(np.max(np.abs(F))) / prob.eps)
    for n, t in enumerate(prob.times[:-1]):
        z[n + 1] = z[n] + prob.dt * (rk4_increment_derivative(prob, t, y[n], z[n]) + F[n + 1] / prob.eps)
        if not np.all(np.abs(z[n + 1]) < scale):
            raise RuntimeError(f"linearized solution blew up at step {n + 1}")
    return z


def characteristic_crossing_time(u0: np.ndarray, grid: fs.Grid, dA: Callable) -> float:
    """Time before characteristics of the homogeneous flow cross: 1 / max(-(A(u0))_x)."""
    s = -np.min(dA(u0) * _dx(u0, grid))
    return math.inf if s <= 0 else 1.0 / s


def manufacture(eps: float, k_order: float = 4, n_x: int = 64, form: str = NONCONSERVATIVE,
                u_exact: tuple | None = None, w: np.ndarray | None = None, flux: tuple | None = None,
                cfl: float = 0.5, min_steps: int = 50, u0: np.ndarray | None = None) -> HypProblem:
    """Problem whose source makes u_exact a solution; u_a = u_exact + eps^k w.

    Passing w = 0 gives an exact approximate solution.
    """
    grid = fs.Grid.periodic(n_x)
    ue, ut = u_exact or steady_sine()
    flux = flux or burgers_flux()
    x = grid.x
    w = np.cos(x) if w is None else np.broadcast_to(np.asarray(w, float), x.shape).copy()
    init = ue(0.0, x) if u0 is None else np.asarray(u0, float)
    if np.max(np.abs(ue(0.0, x))) > AMPLITUDE_CAP + 1e-12:
        raise ValueError(f"u_exact amplitude exceeds {AMPLITUDE_CAP}")
    if characteristic_crossing_time(ue(0.0, x), grid, flux[1]) <= 1.0 and form == NONCONSERVATIVE:
        raise ValueError("characteristics of u_exact cross before t = 1")
    speed = max(float(np.max(np.abs(flux[0](init)))), 1e-12)
    n_t = max(min_steps, math.ceil(speed / (cfl * grid.h)))
    return HypProblem(grid, eps, k_order, ue, ut, w, init, form, flux, n_t)


def rough_data(eps: float, k_order: float = 4, n_x: int = 256, amplitude: float = 0.1,
               seed: int = 0, decay: float = 1.0) -> HypProblem:
    """Conservative problem whose initial data carries noise with amplitude spectrum |xi|^-decay
    up to the grid Nyquist, scaled to the given RMS amplitude."""
    grid = fs.Grid.periodic(n_x)
    rng = np.random.default_rng(seed)
    xi = np.abs(grid.wavenumbers())
    shape = np.where(xi >= 1, np.maximum(xi, 1.0) ** -decay, 0.0)
    coef = (rng.standard_normal(n_x) + 1j * rng.standard_normal(n_x)) * shape
    noise = np.fft.ifft(coef).real
    noise *= amplitude / np.sqrt(np.mean(noise**2))
    return manufacture(eps, k_order, n_x, CONSERVATIVE, u0=np.sin(grid.x) * 0.1 + noise)


class HypInstance(ProblemInstance):
    """E-norm: sup over time of the eps-weighted spectral H^s norm.  F-norm adds
    the initial trace weighted by eps, which puts both rows on the same eps scale."""

    def __init__(self, prob: HypProblem, params: NmParams, floor: float = 1e-13,
                 chi: fs.CutoffProfile = fs.CutoffProfile()):
        self.prob, self.params, self.floor, self.chi = prob, params, floor, chi
        self.ua = prob.approx()
        self.max_index = prob.grid.n / 4
        self.cell = prob.grid.h

    def _sup(self, values, s):
        return float(np.max(fs.fourier_norm_values(values, self.prob.grid, s, self.prob.eps)))

    def residual(self, u):
        return residual(self.prob, u, self.ua)

    def right_inverse(self, u, phi):
        return solve_linearized_ivp(self.prob, u, phi, self.ua)

    def apply_linearized(self, u, v):
        return apply_linearized(self.prob, u, v, self.ua)

    def e_norm(self, u, s):
        return self._sup(u, s)

    def f_norm(self, phi, s):
        return self._sup(phi[1:], s) + self.prob.eps * self._sup(phi[:1], s)

    def zero(self):
        return np.zeros_like(self.ua)

    def smooth(self, u, theta):
        return fs.smooth_values(u, self.prob.grid, theta, self.chi, scale=self.prob.eps)


def hyp_params(eps: float, k_order: float = 4, **overrides) -> NmParams:
    base = NmParams(k=k_order, kappa=1, gamma0=0, gamma=1, m=1, r=1, rprime=0, s0=1, eps=eps)
    return feasible_pick(base).with_(**overrides)


@dataclass
class HypConfig:
    k_order: float = 4
    n_x: int = 64
    form: str = NONCONSERVATIVE
    variant: str = "smooth"  # or "rough"
    amplitude: float = 0.1
    seed: int = 0
    jmax: int = 20
    floor: float = 1e-13
    newton: bool = False
    margin: float = 4.0
    theta0: float | None = None
    zeta: float | None = None


ROUGH_DEFAULTS = {"n_x": 256, "theta0": 1.1, "zeta": 1.15}


def build(eps: float, config: HypConfig = HypConfig()) -> HypInstance:
    if config.variant == "rough":
        prob = rough_data(eps, config.k_order, config.n_x, config.amplitude, config.seed)
    elif config.variant == "smooth":
        prob = manufacture(eps, config.k_order, config.n_x, config.form)
    else:
        raise ValueError(f"unknown variant {config.variant!r}")
    over = {k: v for k, v in (("theta0", config.theta0), ("zeta", config.zeta)) if v is not None}
    return HypInstance(prob, hyp_params(eps, config.k_order, **over), config.floor)


def solve(eps: float, config: HypConfig = HypConfig()) -> tuple[SolveResult, HypInstance]:
    if config.k_order <= 2:
        raise ValueError("the approximate solution must be of order k > 2")
    inst = build(eps, config)
    run = run_newton if config.newton else run_nash_moser
    # a hand-set theta0 or zeta leaves the feasibility ledger on purpose
    override = config.theta0 is not None or config.zeta is not None
    return run(inst, jmax=config.jmax, margin=config.margin, override=override), inst


def rough_config(**kw) -> HypConfig:
    base = dict(ROUGH_DEFAULTS, variant="rough", form=CONSERVATIVE)
    base.update(kw)
    return HypConfig(**base)
