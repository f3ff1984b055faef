"""Discretized Sobolev scales on uniform 1D grids.

Grids are either periodic (spectral calculus) or a truncated line
(finite differences).  Norms come in two flavors: the Fourier weight
(1 + |eps xi|^2)^(s/2) and the exponentially weighted derivative sum
eps^(1/2) sum_k eps^(-k) ||exp(delta eps <x>) d^k f||.  Smoothing
operators are Fourier multipliers chi(|xi| / theta).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

PERIODIC = "periodic"
LINE = "line"
FOURIER = "fourier"
DERIVATIVE_SUM = "derivative-sum"

# highest derivative with a direct finite-difference stencil on line grids
MAX_LINE_ORDER = 4
FD_ACCURACY = 4


@dataclass(frozen=True)
class Grid:
    kind: str
    n: int
    extent: float  # half-length L for line grids, period for periodic ones

    def __post_init__(self):
        if self.kind not in (PERIODIC, LINE):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.n < 16:
            raise ValueError("grid needs at least 16 points")
        if not self.extent > 0:
            raise ValueError("grid extent must be positive")
        if self.kind == PERIODIC and self.n & (self.n - 1):
            raise ValueError("periodic grids use a power-of-two point count")

    @classmethod
    def periodic(cls, n: int, period: float = 2 * np.pi) -> "Grid":
        return cls(PERIODIC, int(n), float(period))

    @classmethod
    def line(cls, n: int, half_length: float) -> "Grid":
        return cls(LINE, int(n), float(half_length))

    @property
    def h(self) -> float:
        if self.kind == PERIODIC:
            return self.extent / self.n
        return 2 * self.extent / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        if self.kind == PERIODIC:
            return np.arange(self.n) * self.h
        return np.linspace(-self.extent, self.extent, self.n)

    @property
    def length(self) -> float:
        return self.extent if self.kind == PERIODIC else 2 * self.extent

    def wavenumbers(self) -> np.ndarray:
        """Angular frequencies matching np.fft ordering (periodic grids)."""
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    def quadrature_weights(self) -> np.ndarray:
        w = np.full(self.n, self.h)
        if self.kind == LINE:
            w[0] = w[-1] = self.h / 2
        return w

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "extent": self.extent}


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of a (vector) function, stored as a components x n array."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != self.grid.n:
            raise ValueError(f"values of shape {v.shape} do not fit grid of size {self.grid.n}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def components(self) -> int:
        return self.values.shape[0]

    def component(self, i: int) -> np.ndarray:
        return self.values[i]

    def _like(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise ValueError("grid mismatch")
            return other.values
        return other

    def __add__(self, other):
        return self._like(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._like(self.values - self._other(other))

    def __rsub__(self, other):
        return self._like(self._other(other) - self.values)

    def __mul__(self, other):
        return self._like(self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.values)


@dataclass(frozen=True)
class NormSpec:
    s: float
    eps: float = 1.0
    delta: float = 0.0
    flavor: str = DERIVATIVE_SUM

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("norm order must be nonnegative")
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if self.delta < 0:
            raise ValueError("weight delta must be nonnegative")
        if self.flavor not in (FOURIER, DERIVATIVE_SUM):
            raise ValueError(f"unknown norm flavor {self.flavor!r}")
        if self.flavor == DERIVATIVE_SUM and float(self.s) != int(self.s):
            raise ValueError("derivative-sum norms need an integer order")

    def with_order(self, s: float) -> "NormSpec":
        return NormSpec(s, self.eps, self.delta, self.flavor)

    def to_dict(self) -> dict:
        return {"s": self.s, "eps": self.eps, "delta": self.delta, "flavor": self.flavor}


@dataclass(frozen=True)
class CutoffProfile:
    """Radial cutoff chi with chi = 1 on [0, 1] and chi = 0 on [2, inf)."""

    shape: str = "smooth-bump"

    def __post_init__(self):
        if self.shape not in ("smooth-bump", "raised-cosine", "sharp"):
            raise ValueError(f"unknown cutoff shape {self.shape!r}")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.where(t <= 1.0, 1.0, 0.0)
        if self.shape == "sharp":
            return out
        mid = (t > 1.0) & (t < 2.0)
        tau = t[mid] - 1.0
        if self.shape == "smooth-bump":
            out[mid] = np.exp(1.0 - 1.0 / (1.0 - tau**2))
        else:
            out[mid] = 0.5 * (1.0 + np.cos(np.pi * tau))
        return out


def fd_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for d^m/dx^m at z on nodes x (Fornberg)."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


@lru_cache(maxsize=64)
def line_derivative_matrix(n: int, h: float, k: int) -> sp.csr_matrix:
    """Sparse k-th derivative, 4th order: centered inside, one-sided near the ends."""
    if not 1 <= k <= MAX_LINE_ORDER:
        raise ValueError(f"line stencils support orders 1..{MAX_LINE_ORDER}, got {k}")
    half = (k + 1) // 2 - 1 + FD_ACCURACY // 2
    width = max(2 * half + 1, k + FD_ACCURACY)
    if width > n:
        raise ValueError("grid too small for the stencil")
    rows, cols, vals = [], [], []
    for i in range(n):
        if half <= i < n - half:
            idx = np.arange(i - half, i + half + 1)
        elif i < half:
            idx = np.arange(0, width)
        else:
            idx = np.arange(n - width, n)
        w = fd_weights(0.0, (idx - i).astype(float), k) / h**k
        rows.extend([i] * len(idx))
        cols.extend(idx)
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _check_finite(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite values produced")
    return values


def _spectral_derivative(values: np.ndarray, grid: Grid, k: int) -> np.ndarray:
    xi = grid.wavenumbers()
    mult = (1j * xi) ** k
    if k % 2 == 1 and grid.n % 2 == 0:
        mult[grid.n // 2] = 0.0  # the Nyquist mode has no odd derivative
    out = np.fft.ifft(np.fft.fft(values, axis=-1) * mult, axis=-1)
    return out if np.iscomplexobj(values) else out.real


def _line_derivative_values(values: np.ndarray, grid: Grid, k: int) -> np.ndarray:
    # orders above the stencil limit are composed; used only inside norms
    out = values
    while k > 0:
        step = min(k, MAX_LINE_ORDER)
        D = line_derivative_matrix(grid.n, grid.h, step)
        out = (D @ out.T).T
        k -= step
    return out


def derivative_values(values: np.ndarray, grid: Grid, k: int) -> np.ndarray:
    """k-th derivative of raw sample arrays (last axis is space)."""
    if k == 0:
        return np.array(values, copy=True)
    if grid.kind == PERIODIC:
        return _spectral_derivative(values, grid, k)
    return _line_derivative_values(np.asarray(values), grid, k)


def derivative(f: GridFunction, k: int) -> GridFunction:
    if k < 0:
        raise ValueError("derivative order must be nonnegative")
    if f.grid.kind == LINE and k > MAX_LINE_ORDER:
        raise ValueError(f"line grids support derivatives up to order {MAX_LINE_ORDER}")
    return GridFunction(f.grid, _check_finite(derivative_values(f.values, f.grid, k)))


def _guard(spec: NormSpec, grid: Grid):
    if spec.s > grid.n / 4:
        raise ValueError(f"norm order {spec.s} exceeds the resolution guard n/4 = {grid.n / 4}")
    if spec.flavor == FOURIER and grid.kind != PERIODIC:
        raise ValueError("fourier norms need a periodic grid")


def fourier_norm_values(values: np.ndarray, grid: Grid, s: float, eps: float) -> np.ndarray:
    """Fourier-flavor norm along the last axis; leading axes other than components are kept."""
    c = np.fft.fft(values, axis=-1) / grid.n
    w = (1.0 + (eps * grid.wavenumbers()) ** 2) ** s
    total = np.sum(w * np.abs(c) ** 2, axis=-1)
    return np.sqrt(grid.extent * total)


def derivative_sum_norm_values(values: np.ndarray, grid: Grid, s: int, eps: float, delta: float) -> float:
    values = np.atleast_2d(values)
    x = grid.x
    weight = np.exp(delta * eps * np.sqrt(x**2 + 1.0))
    quad = grid.quadrature_weights()
    total = 0.0
    for k in range(int(s) + 1):
        dk = derivative_values(values, grid, k)
        l2 = np.sqrt(np.sum(quad * np.abs(weight * dk) ** 2))
        total += eps ** (-k) * l2
    return float(np.sqrt(eps) * total)


def norm(f: GridFunction, spec: NormSpec) -> float:
    _guard(spec, f.grid)
    if spec.flavor == FOURIER:
        if spec.delta != 0:
            raise ValueError("exponential weights are not defined for fourier norms")
        return float(np.sqrt(np.sum(fourier_norm_values(f.values, f.grid, spec.s, spec.eps) ** 2)))
    return derivative_sum_norm_values(f.values, f.grid, int(spec.s), spec.eps, spec.delta)


def smooth_values(values: np.ndarray, grid: Grid, theta: float, chi: CutoffProfile, scale: float = 1.0) -> np.ndarray:
    """Apply chi(scale |xi| / theta) along the last axis; line grids via even reflection."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    values = np.asarray(values)
    if grid.kind == PERIODIC:
        mult = chi(scale * np.abs(grid.wavenumbers()) / theta)
        out = np.fft.ifft(np.fft.fft(values, axis=-1) * mult, axis=-1)
    else:
        ext = np.concatenate([values, values[..., -2:0:-1]], axis=-1)
        xi = 2 * np.pi * np.fft.fftfreq(ext.shape[-1], d=grid.h)
        mult = chi(scale * np.abs(xi) / theta)
        out = np.fft.ifft(np.fft.fft(ext, axis=-1) * mult, axis=-1)[..., : grid.n]
    return out if np.iscomplexobj(values) else out.real


def smooth(f: GridFunction, theta: float, chi: CutoffProfile = CutoffProfile(), scale: float = 1.0) -> GridFunction:
    return GridFunction(f.grid, _check_finite(smooth_values(f.values, f.grid, theta, chi, scale)))


def interpolation_defect(f: GridFunction, s: float, sigma: float, sigma_p: float, base: NormSpec) -> float:
    if not 0 < sigma < sigma_p:
        raise ValueError("need 0 < sigma < sigma'")
    low = norm(f, base.with_order(s))
    if low == 0:
        raise ValueError("interpolation defect of the zero function is undefined")
    mid = norm(f, base.with_order(s + sigma))
    high = norm(f, base.with_order(s + sigma_p))
    lam = sigma / sigma_p
    return mid / (low ** (1 - lam) * high**lam)


def random_band_limited(grid: Grid, rng: np.random.Generator, band: float | None = None) -> np.ndarray:
    """Real white noise with Gaussian coefficients on |xi| <= band (default n/4)."""
    n = grid.n
    band = n / 4 if band is None else band
    k = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    c = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * (k <= band)
    return np.fft.ifft(c).real * n


@dataclass
class SelftestReport:
    const3: float
    const4: float
    interp: float
    by_gap: dict = field(default_factory=dict)
    trials: int = 0
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return self.const3 <= 4.0 and self.const4 <= 4.0 and self.interp <= 1.0 + 1e-9

    def to_dict(self) -> dict:
        return {
            "const3": self.const3,
            "const4": self.const4,
            "interp": self.interp,
            "by_gap": {str(k): v for k, v in self.by_gap.items()},
            "trials": self.trials,
            "elapsed_s": self.elapsed,
            "passed": self.passed,
        }


def smoothing_selftest(
    grid: Grid | None = None,
    chi: CutoffProfile = CutoffProfile(),
    trials: int = 100,
    seed: int = 0,
    thetas=(4, 8, 16, 32, 64, 128, 256),
    max_order: int = 6,
) -> SelftestReport:
    """Largest measured constants in the two smoothing bounds over random samples.

    Constants are taken over every pair 0 <= s < s' <= max_order with fourier
    norms (eps = 1).  All sums run on the spectrum directly.
    """
    if trials < 10:
        raise ValueError("selftest needs at least 10 trials")
    grid = grid or Grid.periodic(4096)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    xi = np.abs(grid.wavenumbers())
    w = 1.0 + xi**2
    orders = np.arange(max_order + 1)
    wpow = w[None, :] ** orders[:, None]
    masks = {th: chi(xi / th) for th in thetas}
    c3 = c4 = interp = 0.0
    by_gap: dict = {}
    for _ in range(trials):
        f = random_band_limited(grid, rng)
        p = np.abs(np.fft.fft(f) / grid.n) ** 2
        base = np.sqrt(grid.extent * wpow @ p)
        for th, m in masks.items():
            kept = np.sqrt(grid.extent * wpow @ (m**2 * p))
            lost = np.sqrt(grid.extent * wpow @ ((1 - m) ** 2 * p))
            for s in orders:
                for sp_ in orders[orders > s]:
                    gap = float(sp_ - s)
                    r3 = lost[s] / (th ** (-gap) * base[sp_])
                    r4 = kept[sp_] / (th**gap * base[s])
                    c3, c4 = max(c3, r3), max(c4, r4)
                    g3, g4 = by_gap.get(int(gap), (0.0, 0.0))
                    by_gap[int(gap)] = (max(g3, r3), max(g4, r4))
        # log-convexity of the fourier scale, sampled on a few (s, sigma, sigma')
        for s, sig, sigp in ((0, 0.5, 1.0), (1, 1.0, 2.0), (0, 1.5, 4.0), (2, 0.25, 3.0)):
            norms = [np.sqrt(grid.extent * np.sum(w ** (s + t) * p)) for t in (0.0, sig, sigp)]
            lam = sig / sigp
            interp = max(interp, norms[1] / (norms[0] ** (1 - lam) * norms[2] ** lam))
    return SelftestReport(float(c3), float(c4), float(interp), by_gap, trials, time.perf_counter() - t0)
