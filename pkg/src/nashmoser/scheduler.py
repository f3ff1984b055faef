"""Parameter ledger for the Nash-Moser scheme.

Evaluates the admissibility inequalities linking the loss exponents
(k, kappa, gamma0, gamma, m, r, r') to the scheme's free parameters
(alpha, N, p, zeta, theta0), and builds the double-exponential schedule
theta_j = theta0 ** (zeta ** j).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

THETA_CAP = 1e300
N_MAX = 10_000


class FeasibilityError(ValueError):
    pass


@dataclass(frozen=True)
class NmParams:
    k: float = 3.0
    kappa: float = 1.0
    gamma0: float = 0.0
    gamma: float = 1.0
    m: float = 1.0
    r: float = 1.0
    rprime: float = 0.0
    s0: float = 3.0
    sbar: float | None = None
    s: float | None = None
    alpha: float = 0.6
    N: int = 7
    p: float = 300.0
    zeta: float = 1.1
    theta0: float | None = None
    eps: float = 0.1
    margin: float = 1.0  # multiplier on the right-hand sides of the step conditions

    def __post_init__(self):
        for name in ("k", "kappa", "gamma0", "gamma", "m", "r", "rprime"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if not self.zeta > 1:
            raise ValueError("zeta must exceed 1")
        if self.theta0 is not None and not self.theta0 > 1:
            raise ValueError("theta0 must exceed 1")
        if self.s is not None and self.s < self.s0:
            raise ValueError("working index s below s0")
        if self.s is not None and self.sbar is not None and self.s > self.sbar:
            raise ValueError("working index s above sbar")

    @property
    def mprime(self) -> float:
        return max(self.m + self.rprime, self.r)

    @property
    def rr(self) -> float:
        return max(self.r, self.rprime)

    @property
    def q(self) -> float:
        return self.m + self.alpha

    @property
    def pprime(self) -> float:
        return self.p - self.mprime

    @property
    def p0(self) -> float:
        return (self.pprime + self.rr) / (self.N + 1)

    @property
    def N0(self) -> float:
        if self.k <= 2 * self.kappa:
            return math.inf
        return self.k * self.mprime / (self.k - 2 * self.kappa)

    @property
    def beta(self) -> float:
        return ((self.pprime - self.q) - self.N * (self.q + self.rr)) / (self.pprime + self.rr)

    @property
    def working_s(self) -> float:
        return self.s if self.s is not None else self.s0 + self.mprime

    @property
    def log_theta0(self) -> float:
        if self.theta0 is not None:
            return math.log(self.theta0)
        return -self.k * math.log(self.eps)

    @property
    def theta_0(self) -> float:
        return math.exp(self.log_theta0)

    def with_(self, **kw) -> "NmParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta0_resolved"] = self.theta_0
        d["s_resolved"] = self.working_s
        return d


def check_ass_k(params: NmParams) -> bool:
    kap = params.kappa
    return max(2 * kap, kap + params.gamma0, kap + params.gamma) < params.k


def _barp_ratio(params: NmParams, N):
    """Inner ratio of the p-bar formula; +inf where the denominator is not positive."""
    N = np.asarray(N, dtype=float)
    k, kap = params.k, params.kappa
    M = np.maximum(max(params.gamma0 / k, params.gamma / k), 0.5 * (1 + params.mprime / N))
    den = k - kap - k * M
    with np.errstate(divide="ignore", invalid="ignore"):
        val = k * (N + 1) * (M + params.m + params.rr) / den
    return np.where(den > 0, val, np.inf)


def pbar(params: NmParams, n_max: int = N_MAX) -> tuple[float, int]:
    """Infimum over integer N in (N0, n_max] of the p-bar formula, with its minimizer."""
    if not check_ass_k(params):
        raise FeasibilityError("max(2 kappa, kappa + gamma0, kappa + gamma) < k is violated")
    N0 = params.N0
    Ns = np.arange(math.floor(N0) + 1, n_max + 1)
    Ns = Ns[Ns > N0]
    vals = _barp_ratio(params, Ns)
    i = int(np.argmin(vals))
    if not np.isfinite(vals[i]):
        raise FeasibilityError("no admissible N in the scan range")
    return params.rprime - params.rr + float(vals[i]), int(Ns[i])


def pbar_real(params: NmParams, n_max: int = N_MAX) -> tuple[float, float]:
    """Same infimum with N relaxed to a real variable (reported for transparency)."""
    N0 = params.N0
    grid = N0 + np.geomspace(1e-6, n_max - N0, 4000)
    vals = _barp_ratio(params, grid)
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda t: float(_barp_ratio(params, t)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    best_N, best = (res.x, res.fun) if res.fun < vals[i] else (grid[i], vals[i])
    return params.rprime - params.rr + float(best), float(best_N)


def alpha_window(params: NmParams) -> tuple[float, float]:
    """(lo, hi] for alpha; lo >= hi means the window is empty."""
    k = params.k
    lo = max(params.gamma0 / k, params.gamma / k, 0.5 * (1 + params.mprime / params.N))
    p0 = params.p0
    if p0 <= 0:
        return lo, -math.inf
    hi = (1 - params.kappa / k - (params.m + params.rr) / p0) / (1 + 1 / p0)
    return lo, hi


def window_nonempty(window: tuple[float, float]) -> bool:
    return window[0] < window[1]


@dataclass
class FeasibilityReport:
    ass_k_ok: bool
    alpha_window: tuple[float, float]
    n_star: int | None
    pbar: float | None
    pbar_real: float | None
    n_real: float | None
    derived: dict = field(default_factory=dict)
    alpha_ok: bool = False

    @property
    def feasible(self) -> bool:
        return self.ass_k_ok and self.alpha_ok

    def to_dict(self) -> dict:
        lo, hi = self.alpha_window
        return {
            "ass_k_ok": self.ass_k_ok,
            "alpha_window": {"lo": lo, "hi": hi if math.isfinite(hi) else None,
                             "empty": not window_nonempty(self.alpha_window)},
            "alpha_in_window": self.alpha_ok,
            "n_star": self.n_star,
            "pbar": self.pbar,
            "pbar_real": self.pbar_real,
            "n_real": self.n_real,
            "derived": self.derived,
            "feasible": self.feasible,
        }


def feasibility(params: NmParams) -> FeasibilityReport:
    ok = check_ass_k(params)
    pb = n_star = pb_r = n_r = None
    if ok:
        pb, n_star = pbar(params)
        pb_r, n_r = pbar_real(params)
    window = alpha_window(params)
    in_window = ok and window[0] < params.alpha <= window[1]
    derived = {
        "mprime": params.mprime,
        "rr": params.rr,
        "p0": params.p0,
        "M": max(params.gamma0 / params.k, params.gamma / params.k, 0.5 * (1 + params.mprime / params.N)),
        "N0": params.N0 if math.isfinite(params.N0) else None,
        "beta": params.beta,
        "q": params.q,
    }
    return FeasibilityReport(ok, window, n_star, pb, pb_r, n_r, derived, in_window)


@dataclass
class ThetaSchedule:
    thetas: list
    cond1_0: bool
    summable: bool
    truncated: bool

    def __getitem__(self, j):
        return self.thetas[j]

    def __len__(self):
        return len(self.thetas)


def theta_schedule(params: NmParams, jmax: int) -> ThetaSchedule:
    if jmax < 1:
        raise ValueError("jmax must be at least 1")
    if params.zeta > 2 * params.alpha:
        warnings.warn(f"zeta = {params.zeta} exceeds 2 alpha = {2 * params.alpha}", stacklevel=2)
    log_t0 = params.log_theta0
    thetas, truncated = [], False
    for j in range(jmax + 1):
        lt = log_t0 * params.zeta**j
        if lt > math.log(THETA_CAP):
            truncated = True
            warnings.warn(f"theta_{j} overflows the float range; schedule truncated at {j} terms", stacklevel=2)
            break
        thetas.append(math.exp(lt))
    th = np.array(thetas)
    cond1_0 = log_t0 * -params.alpha <= max(params.gamma, params.gamma0) * math.log(params.eps) + 1e-12
    summable = bool(np.sum(th ** -params.alpha) <= 2 * thetas[0] ** -params.alpha)
    return ThetaSchedule(thetas, bool(cond1_0), summable, truncated)


def theta_at(params: NmParams, j: int) -> float:
    """theta_j capped at THETA_CAP."""
    lt = params.log_theta0 * params.zeta**j
    return math.exp(min(lt, math.log(THETA_CAP)))


@dataclass(frozen=True)
class StepVerdicts:
    con2: bool
    con3: bool
    con4: bool

    def all(self) -> bool:
        return self.con2 and self.con3 and self.con4


def step_conditions(params: NmParams, theta_j: float, theta_j1: float) -> StepVerdicts:
    """The three step inequalities, evaluated in logs to survive huge theta."""
    a, lt, lt1 = params.alpha, math.log(theta_j), math.log(theta_j1)
    log_eps, lm = math.log(params.eps), math.log(params.margin)
    lhs2 = np.logaddexp((params.m - params.q - a) * lt, -2 * a * lt)
    con2 = lhs2 <= -lt1 + lm
    con3 = -params.k * log_eps + (params.mprime + params.N) * lt <= params.N * lt1 + lm
    con4 = -params.kappa * log_eps - params.beta * lt <= -a * lt + lm
    return StepVerdicts(bool(con2), bool(con3), bool(con4))


def _summable(log_theta0: float, alpha: float, zeta: float, terms: int = 60) -> bool:
    j = np.arange(1, terms)
    tail = np.exp(-alpha * log_theta0 * (zeta**np.minimum(j, 200) - 1))
    return bool(1 + np.sum(tail) <= 2)


def feasible_pick(base: NmParams, n_range: int = 400, slack: float = 1e-3) -> NmParams:
    """Smallest-p choice of (N, p, alpha, zeta) meeting every step condition for all j.

    Each condition is monotone in theta_j, so it suffices to meet it at j = 0.
    """
    if not check_ass_k(base):
        raise FeasibilityError("max(2 kappa, kappa + gamma0, kappa + gamma) < k is violated")
    k, kap, mp, rr, m = base.k, base.kappa, base.mprime, base.rr, base.m
    T0, L, lm = base.log_theta0, -math.log(base.eps), math.log(base.margin)
    best = None
    for N in range(math.floor(base.N0) + 1, math.floor(base.N0) + 1 + n_range):
        zeta = 1 + (mp + (k * L - lm) / T0) / N + slack
        while True:
            lo = max(base.gamma0 / k, base.gamma / k, 0.5 * (1 + mp / N))
            alpha = max(lo + slack, (zeta + (math.log(2) - lm) / T0) / 2 + slack,
                        max(base.gamma, base.gamma0) * L / T0)
            if alpha >= 1 - kap / k or _summable(T0, alpha, zeta):
                break
            zeta += 0.002
        bstar = alpha + (kap * L - lm) / T0
        top = 1 - kap / k - alpha
        if top <= 0 or bstar >= 1 or zeta > 2 * alpha:
            continue
        q = m + alpha
        p0_min = (alpha + m + rr) / top
        pp_window = p0_min * (N + 1) - rr
        pp_beta = (q + N * (q + rr) + bstar * rr) / (1 - bstar)
        p = math.ceil(max(pp_window, pp_beta) + 1) + mp
        if best is None or p < best[0]:
            best = (p, N, alpha, zeta)
    if best is None:
        raise FeasibilityError("no feasible (N, p, alpha, zeta) in the scan range")
    p, N, alpha, zeta = best
    s = base.s if base.s is not None else base.s0 + mp
    return base.with_(N=N, p=float(p), alpha=alpha, zeta=zeta, s=s, sbar=s + p + base.rprime)
