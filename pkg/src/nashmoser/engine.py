"""Nash-Moser iteration over an abstract problem instance.

The iteration starts from u_0 = 0 and applies

    v_j = -Psi(u_j) Phi(u_j),    u_{j+1} = u_j + S_{theta_j} v_j

with theta_j from the scheduler.  Every step records the residual and
corrector norms needed to evaluate the C1/C2 induction hypotheses.
"""

from __future__ import annotations

import abc
import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .scheduler import NmParams, feasibility, theta_at

CONVERGED = "converged"
STALLED = "stalled"
DIVERGED = "diverged"
BUDGET = "budget"

TRACE_COLUMNS = ("j", "theta", "res_s", "v_sq", "u_sq", "u_sp", "c1", "c2i", "c2ii", "c2iii", "ms")


class ProblemInstance(abc.ABC):
    """What a concrete problem must provide to be iterated."""

    params: NmParams
    floor: float = 1e-12
    max_index: float = math.inf  # largest norm index the discretization resolves
    cell: float = 1.0  # grid spacing, used to express shifts in cells

    @abc.abstractmethod
    def residual(self, u): ...

    @abc.abstractmethod
    def right_inverse(self, u, phi): ...

    @abc.abstractmethod
    def e_norm(self, u, s: float) -> float: ...

    @abc.abstractmethod
    def f_norm(self, phi, s: float) -> float: ...

    @abc.abstractmethod
    def zero(self): ...

    def smooth(self, u, theta: float):
        return u

    def apply_linearized(self, u, v):
        raise NotImplementedError

    def second_derivative(self, u, v, w):
        raise NotImplementedError

    def translate(self, u, a: float):
        raise NotImplementedError

    def inner(self, u, w) -> float:
        return float(np.vdot(np.asarray(u), np.asarray(w)).real)


class FunctionalProblem(ProblemInstance):
    """Instance assembled from plain callables (scalars or small arrays)."""

    def __init__(self, residual: Callable, right_inverse: Callable, params: NmParams | None = None,
                 norm: Callable = lambda x: float(np.linalg.norm(np.atleast_1d(x))),
                 smooth: Callable | None = None, shape=(), floor: float = 1e-12,
                 linearized: Callable | None = None):
        self._residual, self._right_inverse, self._norm = residual, right_inverse, norm
        self._smooth, self._linearized = smooth, linearized
        self.params = params or NmParams()
        self.shape, self.floor = shape, floor

    def residual(self, u):
        return self._residual(u)

    def right_inverse(self, u, phi):
        return self._right_inverse(u, phi)

    def e_norm(self, u, s):
        return self._norm(u)

    def f_norm(self, phi, s):
        return self._norm(phi)

    def zero(self):
        return np.zeros(self.shape) if self.shape else 0.0

    def smooth(self, u, theta):
        return u if self._smooth is None else self._smooth(u, theta)

    def apply_linearized(self, u, v):
        if self._linearized is None:
            raise NotImplementedError
        return self._linearized(u, v)


@dataclass
class StepRecord:
    j: int
    theta: float
    res_s: float
    v_sq: float
    u_sq: float
    u_sp: float
    ms: float
    c1: bool = True
    c2i: bool = True
    c2ii: bool = True
    c2iii: bool = True
    e1: float = math.nan  # linear part of the smoothing error
    e2: float = math.nan  # quadratic Taylor remainder
    defect: float = math.nan  # right-inverse defect of the unsmoothed step


@dataclass
class IterationTrace:
    steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def __getitem__(self, j) -> StepRecord:
        return self.steps[j]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])

    def to_csv(self, with_timing: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for s in self.steps:
            w.writerow([s.j, repr(s.theta), repr(s.res_s), repr(s.v_sq), repr(s.u_sq), repr(s.u_sp),
                        int(s.c1), int(s.c2i), int(s.c2ii), int(s.c2iii),
                        f"{s.ms:.3f}" if with_timing else ""])
        return buf.getvalue()


@dataclass
class SolveResult:
    u: object
    status: str
    trace: IterationTrace
    final_res: float
    floor: float
    method: str = "nash-moser"
    notes: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def summary(self) -> dict:
        tr = self.trace
        return {
            "status": self.status,
            "method": self.method,
            "steps": len(tr),
            "final_res": self.final_res,
            "floor": self.floor,
            "c1_all": bool(all(s.c1 for s in tr.steps)),
            "c2_all": bool(all(s.c2i and s.c2ii and s.c2iii for s in tr.steps)),
            "notes": list(self.notes),
        }


def check_c1(trace: IterationTrace, j: int, params: NmParams, margin: float = 4.0) -> bool:
    s = trace[j]
    return bool(s.v_sq <= margin * s.theta ** (-params.alpha))


def check_c2(trace: IterationTrace, j: int, params: NmParams, margin: float = 4.0) -> tuple[bool, bool, bool]:
    s = trace[j]
    c2i = s.u_sq <= margin * params.theta_0 ** (-params.alpha)
    c2ii = s.res_s <= margin / s.theta
    # logs keep theta^N finite for huge theta
    c2iii = s.u_sp == 0 or math.log(s.u_sp) <= math.log(margin) + params.N * math.log(s.theta)
    return bool(c2i), bool(c2ii), bool(c2iii)


def _index(problem: ProblemInstance, s: float, notes: list, label: str) -> float:
    if s > problem.max_index:
        note = f"{label} index {s:g} exceeds the resolvable maximum; using {problem.max_index:g}"
        if note not in notes:
            notes.append(note)
        return problem.max_index
    return s


def _iterate(problem: ProblemInstance, jmax: int, floor: float | None, smoothing: bool, margin: float,
             override: bool, diagnostics: bool, stall_steps: int) -> SolveResult:
    params = problem.params
    floor = problem.floor if floor is None else floor
    notes: list = []
    if not override:
        rep = feasibility(params)
        if not rep.feasible:
            raise ValueError("parameters fail the feasibility ledger; pass override=True to run anyway")
    s = params.working_s
    i_sq = _index(problem, s + params.q, notes, "s+q")
    i_sp = _index(problem, s + params.p, notes, "s+p")

    u = problem.zero()
    trace = IterationTrace()
    status, running_min, since_best = BUDGET, math.inf, 0
    phi = problem.residual(u)
    prev = None  # (phi_j, Phi'(u_j) S v_j) for the Taylor remainder of the previous step
    for j in range(jmax):
        t0 = time.perf_counter()
        theta = theta_at(params, j)
        res = problem.f_norm(phi, s)
        u_sq, u_sp = problem.e_norm(u, i_sq), problem.e_norm(u, i_sp)
        if prev is not None and trace.steps:
            trace.steps[-1].e2 = problem.f_norm(phi - prev[0] - prev[1], s)
        rec = StepRecord(j, theta, res, 0.0, u_sq, u_sp, 0.0)
        trace.steps.append(rec)
        if not (math.isfinite(res) and math.isfinite(u_sq)):
            status = DIVERGED
            notes.append(f"non-finite norms at step {j}")
            break
        if res <= floor:
            status = CONVERGED
            break
        if res > 10 * running_min:
            status = DIVERGED
            break
        if res < running_min:
            running_min, since_best = res, 0
        else:
            since_best += 1
            if since_best >= stall_steps:
                status = STALLED
                notes.append(f"no residual decrease for {stall_steps} steps")
                break
        try:
            v = -problem.right_inverse(u, phi)
        except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
            status = STALLED
            notes.append(f"right inverse failed at step {j}: {exc}")
            break
        sv = problem.smooth(v, theta) if smoothing else v
        rec.v_sq = problem.e_norm(v, i_sq)
        if diagnostics:
            try:
                lin_v = problem.apply_linearized(u, v)
                lin_sv = problem.apply_linearized(u, sv) if smoothing else lin_v
                rec.defect = problem.f_norm(lin_v + phi, s)
                rec.e1 = problem.f_norm(lin_sv - lin_v, s)
                prev = (phi, lin_sv)
            except NotImplementedError:
                diagnostics = False
        u = u + sv
        phi = problem.residual(u)
        rec.ms = 1e3 * (time.perf_counter() - t0)
        if not np.all(np.isfinite(np.asarray(phi))):
            status = DIVERGED
            notes.append(f"non-finite residual after step {j}")
            break
    for jj, rec in enumerate(trace.steps):
        rec.c1 = check_c1(trace, jj, params, margin)
        rec.c2i, rec.c2ii, rec.c2iii = check_c2(trace, jj, params, margin)
    final = trace.steps[-1].res_s if trace.steps else math.nan
    return SolveResult(u, status, trace, final, floor, "nash-moser" if smoothing else "newton", notes)


def run_nash_moser(problem: ProblemInstance, jmax: int = 30, floor: float | None = None, margin: float = 4.0,
                   override: bool = False, diagnostics: bool = True, stall_steps: int = 6) -> SolveResult:
    return _iterate(problem, jmax, floor, True, margin, override, diagnostics, stall_steps)


def run_newton(problem: ProblemInstance, jmax: int = 30, floor: float | None = None, margin: float = 4.0,
               override: bool = False, diagnostics: bool = True, stall_steps: int = 6) -> SolveResult:
    return _iterate(problem, jmax, floor, False, margin, override, diagnostics, stall_steps)


def quadratic_contraction_ok(trace: IterationTrace, floor: float, C: float = 5.0) -> bool:
    """log res_{j+1} <= 2 log res_j + C on steps with res_j >= 10 floor.

    A step landing at or below the floor has reached round-off and is not judged.
    """
    res = trace.column("res_s")
    for a, b in zip(res[:-1], res[1:]):
        if a >= 10 * floor and b > floor and math.log(b) > 2 * math.log(a) + C:
            return False
    return True


@dataclass
class KernelBasis:
    basis: list
    defects: list
    rejected: list  # (index, defect) of candidates failing the near-kernel test


def kernel_basis(problem: ProblemInstance, u, candidates: Sequence, tol: float = 1e-4) -> KernelBasis:
    """Orthonormalize (discrete L2) the candidates that the linearization nearly annihilates."""
    s0 = problem.params.s0
    basis, defects, rejected = [], [], []
    for i, c in enumerate(candidates):
        d = problem.f_norm(problem.apply_linearized(u, c), s0) / problem.e_norm(c, s0 + problem.params.m)
        if d > tol:
            rejected.append((i, d))
            continue
        w = np.array(c, dtype=float)
        for b in basis:
            w = w - problem.inner(b, w) * b
        nrm = math.sqrt(problem.inner(w, w))
        if nrm == 0:
            rejected.append((i, 0.0))
            continue
        basis.append(w / nrm)
        defects.append(d)
    return KernelBasis(basis, defects, rejected)


def tangency_defect(problem: ProblemInstance, u, uhat, basis: Sequence) -> float:
    """Relative s0-distance of uhat - u from the span of an L2-orthonormal basis."""
    s0 = problem.params.s0
    w = np.asarray(uhat) - np.asarray(u)
    total = problem.e_norm(w, s0)
    if total == 0:
        return 0.0
    rest = w.copy()
    for b in basis:
        rest = rest - problem.inner(b, w) * b
    return problem.e_norm(rest, s0) / total


class PhaseAlignError(RuntimeError):
    def __init__(self, msg, scanned):
        super().__init__(msg)
        self.scanned = scanned


@dataclass
class PhaseAlignment:
    shift: float
    shift_cells: float
    aligned: object
    residual: float


def phase_align(problem: ProblemInstance, u, uhat, basis: Sequence, bracket_cells: float = 20.0,
                samples: int = 161, tol: float = 1e-10) -> PhaseAlignment:
    """Shift a so that <phi, uhat(. + a) - u> = 0 for the translation mode phi."""
    if len(basis) != 1:
        raise ValueError("root-find alignment needs a one-dimensional basis")
    phi = basis[0]

    def h(a):
        return problem.inner(phi, problem.translate(uhat, a) - u)

    h0 = h(0.0)
    ref = math.sqrt(max(problem.inner(uhat - u, uhat - u), 0.0))
    if abs(h0) <= tol * max(ref, 1e-300):
        return PhaseAlignment(0.0, 0.0, uhat, h0)
    grid = np.linspace(-bracket_cells, bracket_cells, samples) * problem.cell
    vals = np.array([h(a) for a in grid])
    sign_change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if len(sign_change) == 0:
        raise PhaseAlignError("no sign change of the phase function in the bracket", list(zip(grid, vals)))
    i = sign_change[np.argmin(np.abs(grid[sign_change] + grid[sign_change + 1]))]
    a = brentq(h, grid[i], grid[i + 1], xtol=1e-12 * problem.cell, rtol=1e-14)
    return PhaseAlignment(a, a / problem.cell, problem.translate(uhat, a), h(a))
