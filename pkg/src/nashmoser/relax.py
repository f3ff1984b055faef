"""Standing relaxation shock profiles corrected around their Chapman-Enskog approximation.

State U = (u, v) with one macroscopic component u and r microscopic components v.
The profile equations in integrated form are

    f(u, v) = f_*(u_-)                         (algebraic row)
    A21(U) u' + A22(U) v' = q(U)               (first-order rows)

and the unknown is the correction U around U_CE, so that Phi(0) is the CE residual.
Model callables work on stacked arrays: U has shape (1+r, n) and A(U) has shape
(1+r, 1+r, n); the derivative dA[i, j, a] is d A_ij / d U_a.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.interpolate import make_interp_spline
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve, splu, onenormest, LinearOperator

from . import fnspace as fs
from .engine import ProblemInstance, SolveResult, run_nash_moser, run_newton
from .scheduler import NmParams, feasible_pick

PRESETS = ("exact-jinxin", "generic")


class LinearSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class RelaxModel:
    name: str
    r: int
    flux: Callable  # U -> (n,)
    A: Callable  # U -> (1+r, 1+r, n)
    dA: Callable  # U -> (1+r, 1+r, 1+r, n)
    q: Callable  # U -> (r, n)
    dq: Callable  # U -> (r, 1+r, n)
    d2q: Callable  # U -> (r, 1+r, 1+r, n)
    d2A: Callable | None = None  # None means A is affine in U
    u0: float = 0.0

    def _eq(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.vstack([u[None, :], np.zeros((self.r, u.size))])

    def f_star(self, u):
        return self.flux(self._eq(u))

    def df_star(self, u):
        return self.A(self._eq(u))[0, 0]

    def d2f_star(self, u):
        return self.dA(self._eq(u))[0, 0, 0]

    def _blocks(self, u):
        U = self._eq(u)
        A, Q = self.A(U), self.dq(U)[:, 1:]
        return A[0, 1:], A[1:, 0], Q

    def b_star(self, u) -> np.ndarray:
        A12, A21, Q = self._blocks(u)
        out = np.empty(A12.shape[-1])
        for i in range(out.size):
            out[i] = -A12[:, i] @ np.linalg.solve(Q[:, :, i], A21[:, i])
        return out

    def c_star(self, u) -> np.ndarray:
        """(r, n) coefficient with v_CE = c_* u_CE'."""
        _, A21, Q = self._blocks(u)
        out = np.empty_like(A21)
        for i in range(A21.shape[-1]):
            out[:, i] = np.linalg.solve(Q[:, :, i], A21[:, i])
        return out

    def check(self, samples=np.linspace(-0.25, 0.25, 11), theta: float = 1e-3) -> dict:
        """Structural invariants at sampled states near the base state."""
        rng = np.random.default_rng(1)
        U = np.vstack([samples[None, :] + self.u0, 0.05 * rng.standard_normal((self.r, samples.size))])
        A = self.A(U)
        sym = float(np.max(np.abs(A - A.transpose(1, 0, 2))))
        Q = self.dq(U)[:, 1:]
        qmax = max(np.max(np.linalg.eigvalsh(0.5 * (Q[:, :, i] + Q[:, :, i].T))) for i in range(samples.size))
        ueq = samples + self.u0
        coupling = float(np.min(np.abs(self.A(self._eq(ueq))[0, 1:])))
        return {
            "symmetric": sym <= 1e-12,
            "dissipative": bool(qmax <= -theta),
            "coupled": coupling > 0,
            "b_positive": bool(np.min(self.b_star(ueq)) >= theta),
            "genuinely_nonlinear": abs(float(self.d2f_star(self.u0)[0])) > 0,
        }

    def to_dict(self) -> dict:
        return {"preset": self.name, "r": self.r, "u0": self.u0}


def make_model(preset: str) -> RelaxModel:
    """Scalar Burgers-type presets with one microscopic variable and q = -v.

    The generic preset adds v^2/2 to the flux so that the CE residual is
    nonzero in the algebraic row as well (an affine dependence on v makes it
    vanish identically).
    """
    one = np.ones
    if preset == "exact-jinxin":
        def flux(U):
            return 0.5 * U[0] ** 2 + U[1]

        def A(U):
            n = U.shape[-1]
            return np.array([[U[0], one(n)], [one(n), np.zeros(n)]])

        def dA(U):
            out = np.zeros((2, 2, 2, U.shape[-1]))
            out[0, 0, 0] = 1.0
            return out
    elif preset == "generic":
        def flux(U):
            return 0.5 * U[0] ** 2 + U[1] + 0.5 * U[1] ** 2

        def A(U):
            n = U.shape[-1]
            return np.array([[U[0], 1 + U[1]], [1 + U[1], 0.5 * one(n)]])

        def dA(U):
            out = np.zeros((2, 2, 2, U.shape[-1]))
            out[0, 0, 0] = 1.0
            out[0, 1, 1] = out[1, 0, 1] = 1.0
            return out
    else:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")

    def q(U):
        return -U[1:]

    def dq(U):
        out = np.zeros((1, 2, U.shape[-1]))
        out[0, 1] = -1.0
        return out

    def d2q(U):
        return np.zeros((1, 2, 2, U.shape[-1]))

    return RelaxModel(preset, 1, flux, A, dA, q, dq, d2q)


@dataclass(frozen=True)
class ShockData:
    u0: float
    eps_amp: float
    u_minus: float
    u_plus: float
    lax_ok: bool

    def to_dict(self) -> dict:
        return {"u0": self.u0, "eps_amp": self.eps_amp, "u_minus": self.u_minus,
                "u_plus": self.u_plus, "lax_ok": self.lax_ok}


def shock_endpoints(model: RelaxModel, eps_amp: float) -> ShockData:
    """Zero-speed Lax pair u_- > u_+ with f_*(u_-) = f_*(u_+) and u_- - u_+ = eps_amp."""
    if not 0 < eps_amp <= 0.5:
        raise ValueError("amplitude must lie in (0, 0.5]")

    def g(a):
        return float(model.f_star(a)[0] - model.f_star(a - eps_amp)[0])

    um = brentq(g, model.u0, model.u0 + eps_amp, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    up = um - eps_amp
    lax = bool(model.df_star(um)[0] > 0 > model.df_star(up)[0])
    if not lax:
        raise ValueError("endpoints are not of Lax type")
    return ShockData(model.u0, eps_amp, um, up, lax)


@dataclass(frozen=True, eq=False)
class CeProfile:
    model: RelaxModel
    shock: ShockData
    grid: fs.Grid
    u_ce: np.ndarray
    v_ce: np.ndarray  # (r, n)
    delta: float
    _sol: tuple = field(repr=False, default=())
    dvalues: np.ndarray | None = field(repr=False, default=None)  # exact x-derivative of values

    @property
    def eps(self) -> float:
        return self.shock.eps_amp

    @property
    def values(self) -> np.ndarray:
        return np.vstack([self.u_ce[None, :], self.v_ce])

    def slope(self, u):
        """Right-hand side of the profile ODE, u' = (f_*(u) - f_*(u_-)) / b_*(u)."""
        u = np.atleast_1d(u)
        return (self.model.f_star(u) - self.model.f_star(self.shock.u_minus)) / self.model.b_star(u)

    def _v_of_u(self, u):
        return self.model.c_star(u) * self.slope(u)[None, :]

    def derivative_of(self, u) -> np.ndarray:
        """x-derivative of (u_CE, v_CE) expressed through u_CE alone.

        The v-part differentiates v = c_*(u) u'(u) in u with a five-point rule.
        """
        u = np.atleast_1d(u)
        du = self.slope(u)
        eta = 1e-3 * self.eps
        dv = (8 * (self._v_of_u(u + eta) - self._v_of_u(u - eta))
              - (self._v_of_u(u + 2 * eta) - self._v_of_u(u - 2 * eta))) / (12 * eta)
        return np.vstack([du[None, :], dv * du[None, :]])

    def evaluate(self, x) -> np.ndarray:
        """(1+r, len(x)) profile at arbitrary points, clamped to the domain."""
        x = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), -self.grid.extent, self.grid.extent)
        left, right = self._sol
        u = np.where(x >= 0, right(np.maximum(x, 0))[0], left(np.minimum(x, 0))[0])
        return np.vstack([u[None, :], self._v_of_u(u)])


def ce_profile(model: RelaxModel, shock: ShockData, grid: fs.Grid | None = None, delta: float = 0.1,
               n: int = 4096, decay_lengths: float = 40.0) -> CeProfile:
    """Integrate the viscous profile ODE outward from the centered midpoint."""
    eps = shock.eps_amp
    rate = min(abs(model.df_star(shock.u_minus)[0]), abs(model.df_star(shock.u_plus)[0])) / eps
    if grid is None:
        grid = fs.Grid.line(n, decay_lengths / (eps * rate))
    if grid.kind != fs.LINE:
        raise ValueError("profiles live on line grids")
    um = shock.u_minus
    fm = float(model.f_star(um)[0])

    def rhs(x, y):
        return (model.f_star(y) - fm) / model.b_star(y)

    mid = 0.5 * (shock.u_minus + shock.u_plus)
    L = grid.extent
    kw = dict(method="DOP853", rtol=1e-13, atol=1e-16 * eps, dense_output=True)
    right = solve_ivp(rhs, (0.0, L), [mid], **kw)
    left = solve_ivp(rhs, (0.0, -L), [mid], **kw)
    if not (right.success and left.success):
        raise RuntimeError("profile integration failed: " + (right.message or left.message))
    x = grid.x
    prof = CeProfile(model, shock, grid, np.empty(0), np.empty(0), delta, (left.sol, right.sol))
    vals = prof.evaluate(x)
    defect = max(abs(vals[0, 0] - shock.u_minus), abs(vals[0, -1] - shock.u_plus))
    if defect > 1e-10:
        raise ValueError(f"domain too small: endpoint defect {defect:.2e} exceeds 1e-10")
    return CeProfile(model, shock, grid, vals[0], vals[1:], delta, (left.sol, right.sol),
                     prof.derivative_of(vals[0]))


def closed_form_jinxin(eps_amp: float, x: np.ndarray) -> np.ndarray:
    """Exact standing profile of the exact-jinxin preset: u = -(eps/2) tanh(eps x / 4), v = -u'."""
    u = -0.5 * eps_amp * np.tanh(0.25 * eps_amp * x)
    v = 0.125 * eps_amp**2 / np.cosh(0.25 * eps_amp * x) ** 2
    return np.vstack([u, v])


def _D(grid: fs.Grid) -> sp.csr_matrix:
    return fs.line_derivative_matrix(grid.n, grid.h, 1)


def total_derivative(profile: CeProfile, U: np.ndarray) -> np.ndarray:
    """(U_CE + U)' with the CE part exact and stencils only on the decaying correction.

    Passing the nonzero end states through one-sided stencils leaves round-off
    jumps at the ends that dominate every higher weighted norm.
    """
    return profile.dvalues + (_D(profile.grid) @ np.asarray(U).T).T


def residual_phi(model: RelaxModel, profile: CeProfile, U: np.ndarray) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.shape != (1 + model.r, profile.grid.n):
        raise ValueError(f"expected shape {(1 + model.r, profile.grid.n)}, got {U.shape}")
    T = profile.values + U
    A = model.A(T)
    dT = total_derivative(profile, U)
    row1 = model.flux(T) - float(model.f_star(profile.shock.u_minus)[0])
    row2 = np.einsum("ian,an->in", A[1:], dT) - model.q(T)
    return np.vstack([row1[None, :], row2])


def ce_residual(model: RelaxModel, profile: CeProfile) -> tuple[np.ndarray, np.ndarray]:
    phi = residual_phi(model, profile, np.zeros_like(profile.values))
    return phi[0], phi[1:]


@dataclass(eq=False)
class Linearization:
    """Frozen coefficients of Phi'(U~): row 1 = A[0] . V, row 2 = A[1:] . DV + C . V."""

    model: RelaxModel
    profile: CeProfile
    A: np.ndarray  # (1+r, 1+r, n)
    C: np.ndarray  # (r, 1+r, n): b-term minus Q22-term
    total: np.ndarray

    @property
    def b(self) -> np.ndarray:
        """d(A21, A22)(U) applied against U' -- the coefficient field of the b-term."""
        dT = total_derivative(self.profile, self.total - self.profile.values)
        return np.einsum("ilan,ln->ian", self.model.dA(self.total)[1:], dT)

    def apply(self, V: np.ndarray) -> np.ndarray:
        dV = (_D(self.profile.grid) @ V.T).T
        row1 = np.einsum("an,an->n", self.A[0], V)
        row2 = np.einsum("ian,an->in", self.A[1:], dV) + np.einsum("ian,an->in", self.C, V)
        return np.vstack([row1[None, :], row2])

    def matrix(self) -> sp.csr_matrix:
        n, c = self.profile.grid.n, 1 + self.model.r
        D = _D(self.profile.grid)
        blocks = [[None] * c for _ in range(c)]
        for a in range(c):
            blocks[0][a] = sp.diags(self.A[0, a])
            for i in range(1, c):
                blocks[i][a] = sp.diags(self.A[i, a]) @ D + sp.diags(self.C[i - 1, a])
        return sp.bmat(blocks, format="csr")


def linearize(model: RelaxModel, profile: CeProfile, U_tilde: np.ndarray, ball: float = 1.0) -> Linearization:
    T = profile.values + U_tilde
    if np.any(U_tilde):
        size = fs.derivative_sum_norm_values(U_tilde, profile.grid, 4, profile.eps, 0.0)
        if size > ball * profile.eps:
            warnings.warn(f"linearizing outside the small ball: |U|_4 = {size:.3g} > {ball * profile.eps:.3g}")
    dT = total_derivative(profile, U_tilde)
    bterm = np.einsum("ilan,ln->ian", model.dA(T)[1:], dT)
    return Linearization(model, profile, model.A(T), bterm - model.dq(T), T)


def second_derivative(model: RelaxModel, profile: CeProfile, U_tilde, V, W) -> np.ndarray:
    T = profile.values + U_tilde
    D = _D(profile.grid)
    dV, dW = ((D @ X.T).T for X in (V, W))
    dT = total_derivative(profile, U_tilde)
    dA = model.dA(T)
    row1 = np.einsum("abn,an,bn->n", dA[0], V, W)
    row2 = (np.einsum("ialn,ln,an->in", dA[1:], V, dW) + np.einsum("ialn,ln,an->in", dA[1:], W, dV)
            - np.einsum("ilmn,ln,mn->in", model.d2q(T), V, W))
    if model.d2A is not None:
        row2 = row2 + np.einsum("ialmn,ln,mn,an->in", model.d2A(T)[1:], V, W, dT)
    return np.vstack([row1[None, :], row2])


def _phase_row(grid: fs.Grid, width: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Indices and interpolation weights giving u(0)."""
    i0 = int(np.searchsorted(grid.x, 0.0))
    idx = np.arange(i0 - width // 2, i0 - width // 2 + width)
    return idx, fs.fd_weights(0.0, grid.x[idx], 0)


def solve_linearized(model: RelaxModel, profile: CeProfile, U_tilde: np.ndarray, F: np.ndarray,
                     lin: Linearization | None = None) -> np.ndarray:
    """Phase-pinned solve of Phi'(U~) U = F.

    The first-order row at the grid point nearest x = 0 is traded for the
    condition u(0) = 0.  Dropping a row at either end instead frees a sawtooth
    boundary mode of the centered stencil; dropped at the center the missing
    equation is absorbed by the translation mode and is met to round-off.
    """
    if model.r != 1:
        raise NotImplementedError("the phase-pinned solve handles one microscopic component")
    lin = lin or linearize(model, profile, U_tilde)
    n = profile.grid.n
    M = lin.matrix().tolil()
    rhs = np.concatenate([F[0], F[1]]).astype(float)
    idx, w = _phase_row(profile.grid)
    row = n + idx[len(idx) // 2]
    M[row, :] = 0.0
    M[row, idx] = w
    rhs[row] = 0.0
    M = M.tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("error", sp.linalg.MatrixRankWarning)
        try:
            x = spsolve(M, rhs)
        except sp.linalg.MatrixRankWarning as exc:
            raise LinearSolveError(f"singular profile system: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise LinearSolveError(f"ill-conditioned profile system (1-norm condition ~ {condition_estimate(M):.2e})")
    return x.reshape(2, n)


def condition_estimate(M: sp.csc_matrix) -> float:
    lu = splu(M)
    inv = LinearOperator(M.shape, matvec=lu.solve, rmatvec=lambda y: lu.solve(y, trans="T"), dtype=float)
    return float(sp.linalg.norm(M, 1) * onenormest(inv))


def _ceil(s: float) -> int:
    return int(math.ceil(s - 1e-12))


class RelaxProblem(ProblemInstance):
    """Correction around the CE profile as a Nash-Moser instance.

    E-norms are the weighted derivative sums |.|_{H^s_{eps,delta}}; the F-norm
    charges one more derivative on the algebraic row.  Fractional indices are
    rounded up.
    """

    def __init__(self, model: RelaxModel, profile: CeProfile, params: NmParams, floor: float | None = None,
                 max_index: int = 8, chi: fs.CutoffProfile = fs.CutoffProfile()):
        self.model, self.profile, self.params = model, profile, params
        self.grid = profile.grid
        eps, h = profile.eps, self.grid.h
        self.floor = default_floor(eps, h) if floor is None else floor
        self.max_index = max_index
        self.cell = h
        self.chi = chi

    def residual(self, u):
        return residual_phi(self.model, self.profile, u)

    def right_inverse(self, u, phi):
        return solve_linearized(self.model, self.profile, u, phi)

    def apply_linearized(self, u, v):
        return linearize(self.model, self.profile, u).apply(v)

    def second_derivative(self, u, v, w):
        return second_derivative(self.model, self.profile, u, v, w)

    def _norm(self, values, s):
        return fs.derivative_sum_norm_values(values, self.grid, _ceil(s), self.profile.eps, self.profile.delta)

    def e_norm(self, u, s):
        return self._norm(u, s)

    def f_norm(self, phi, s):
        return self._norm(phi[0], s + 1) + self._norm(phi[1:], s)

    def zero(self):
        return np.zeros((1 + self.model.r, self.grid.n))

    def smooth(self, u, theta):
        return fs.smooth_values(u, self.grid, theta, self.chi, scale=self.profile.eps)

    def inner(self, u, w):
        return float(np.sum(self.grid.quadrature_weights() * np.asarray(u) * np.asarray(w)))

    def translation_mode(self, u) -> np.ndarray:
        return total_derivative(self.profile, u)

    def translate(self, u, a):
        """E-element of the translated total profile: U_CE(.+a) - U_CE + u(.+a)."""
        x = self.grid.x
        xs = np.clip(x + a, -self.grid.extent, self.grid.extent)
        spline = make_interp_spline(x, np.asarray(u).T, k=5)
        return self.profile.evaluate(x + a) - self.profile.values + spline(xs).T


def default_floor(eps: float, h: float, c: float = 3.0) -> float:
    """Stopping floor c (eps h)^4 eps^3.

    Sits above the round-off level of the weighted F-norm (five scaled
    derivatives amplify it by about (eps h)^-5) and below the last genuinely
    quadratic Newton step.
    """
    return c * (eps * h) ** 4 * eps**3


def relax_params(eps: float, **overrides) -> NmParams:
    base = NmParams(k=3, kappa=1, gamma0=0, gamma=1, m=1, r=1, rprime=0, s0=3, eps=eps)
    return feasible_pick(base.with_(**overrides)) if overrides.get("N") is None else base.with_(**overrides)


@dataclass
class RelaxConfig:
    n: int = 2048
    delta: float = 0.1
    decay_lengths: float = 40.0
    jmax: int = 20
    floor: float | None = None
    newton: bool = False
    margin: float = 4.0
    params: NmParams | None = None


def build_problem(model: RelaxModel, eps_amp: float, config: RelaxConfig = RelaxConfig()) -> RelaxProblem:
    shock = shock_endpoints(model, eps_amp)
    profile = ce_profile(model, shock, delta=config.delta, n=config.n, decay_lengths=config.decay_lengths)
    params = config.params or relax_params(eps_amp)
    return RelaxProblem(model, profile, params, config.floor)


def solve_profile(model: RelaxModel, eps_amp: float, config: RelaxConfig = RelaxConfig()
                  ) -> tuple[np.ndarray, SolveResult, RelaxProblem]:
    """Returns the full profile U_CE + U, the engine result and the instance used."""
    prob = build_problem(model, eps_amp, config)
    run = run_newton if config.newton else run_nash_moser
    res = run(prob, jmax=config.jmax, margin=config.margin)
    return prob.profile.values + res.u, res, prob


@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    left: tuple
    right: tuple

    def to_dict(self) -> dict:
        return {"rate": self.rate, "amplitude": self.amplitude,
                "left": {"rate": self.left[0], "amplitude": self.left[1]},
                "right": {"rate": self.right[0], "amplitude": self.right[1]}}


def decay_fit(values: np.ndarray, x: np.ndarray, noise: float = 1e-10) -> DecayFit:
    """Exponential tail fit of log|f| against |x| over the outer half on each side.

    Samples below noise * peak are dropped so round-off does not flatten the tail.
    Vector input is reduced to its pointwise Euclidean magnitude.
    """
    mag = np.abs(values) if np.ndim(values) == 1 else np.sqrt(np.sum(np.asarray(values) ** 2, axis=0))
    peak = float(mag.max())
    if peak == 0 or max(mag[0], mag[-1]) >= 1e-3 * peak:
        raise ValueError("input does not decay at both ends")
    L = float(np.max(np.abs(x)))
    sides = []
    for sel in (x <= -0.5 * L, x >= 0.5 * L):
        keep = sel & (mag > noise * peak)
        if keep.sum() < 3:
            raise ValueError("too few samples above the noise level in the outer half")
        slope, icpt = np.polyfit(np.abs(x[keep]), np.log(mag[keep]), 1)
        sides.append((float(-slope), float(math.exp(icpt))))
    left, right = sides
    return DecayFit(min(left[0], right[0]), max(left[1], right[1]), left, right)


def random_forcing(profile: CeProfile, rng: np.random.Generator, terms: int = 6) -> np.ndarray:
    """Smooth decaying (f, g) built in the scaled variable eps x, so draws match across eps."""
    xs = profile.eps * profile.grid.x
    out = np.zeros((2, xs.size))
    for c in range(2):
        for _ in range(terms):
            a, center, width = rng.standard_normal(), rng.uniform(-4, 4), rng.uniform(1, 3)
            out[c] += a * np.exp(-((xs - center) / width) ** 2)
    return out


def operator_norm_probe(problem: RelaxProblem, draws: int = 20, seed: int = 0) -> dict:
    """sup over random F of |Psi(0) F|_{2} / (|f|_3 + |g|_2), plus the worst right-inverse defect."""
    rng = np.random.default_rng(seed)
    U0 = problem.zero()
    lin = linearize(problem.model, problem.profile, U0)
    ratio, defect = 0.0, 0.0
    for _ in range(draws):
        F = random_forcing(problem.profile, rng)
        U = solve_linearized(problem.model, problem.profile, U0, F, lin)
        ratio = max(ratio, problem.e_norm(U, 2) / problem.f_norm(F, 2))
        defect = max(defect, problem._norm(lin.apply(U) - F, 1) / problem._norm(F, 2))
    return {"ratio": ratio, "defect": defect}
