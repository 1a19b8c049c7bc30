"""State-feedback stabilization through the gain-product convexification:
margin synthesis for continuous- and discrete-time LTI systems, stability
checks, gain recovery and test-instance generation.

The synthesis problems replace the constant-zero feasibility objective with a
margin objective (minimize t over the constraints shifted by -t I): the
feasible set is unchanged, but the optimum yields a strictly interior point
and a quantitative strict-feasibility margin. Tr(P) <= n * 1e3 bounds the
homogeneous cone, without which the margin problem is unbounded and any fixed
bound preserves the feasibility verdict.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import cert as _cert
from .convexify import (ChangeOfVariables, gain_map_ct, gain_map_dt)
from .sdp import SolveStatus, SolverFailure, solve, strict_feasibility
from .symmat import SymMat, chol_factor, chol_solve, max_eig

EPSILON_SCALE = 1e-3          # default epsilon = this * max(1, ||A||_F)
EPSILON_HALVINGS = 10         # halving attempts before giving up
GENERATION_BUDGET = 1000
PBH_RANK_REL = 1e-9
SINGULAR_GATE = 1e-10
DEFAULT_MARGIN_TOL = 1e-9


class ConvergenceFailure(RuntimeError):
    """General eigenvalue computation did not converge."""


class GenerationBudgetExceeded(RuntimeError):
    """Rejection sampling exhausted its draw budget."""


class NotStabilizable(RuntimeError):
    """No strict feasibility certificate at any tested epsilon.

    This reports the absence of a certificate at the tested epsilon schedule,
    not a proof that the pair is unstabilizable.
    """

    def __init__(self, message, tried):
        super().__init__(message)
        self.tried = tuple(tried)


class Clock(enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class LtiSystem:
    """x' = Ax + Bu (continuous) or x+ = Ax + Bu (discrete)."""

    A: np.ndarray
    B: np.ndarray
    clock: Clock

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        b = np.asarray(self.B, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("A must be square")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValueError("B must have as many rows as A")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("entries must be finite")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class StabilizationResult:
    P: SymMat
    M: np.ndarray
    F: np.ndarray
    epsilon: float
    margin: float
    certificate: object  # DualityCertificate


def eig_general(a) -> np.ndarray:
    """Eigenvalues of a square, possibly non-symmetric matrix, sorted by real
    part then imaginary part. Contract-based: each value drives det(A - w I)
    to numerical zero (validated against characteristic-polynomial roots in
    the test suite)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(a)):
        raise ValueError("entries must be finite")
    try:
        w = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    order = np.lexsort((w.imag, w.real))
    return w[order]


def is_hurwitz(a, tol: float = 0.0) -> bool:
    """All eigenvalue real parts strictly below -tol."""
    return bool(np.max(eig_general(a).real) < -tol)


def spectral_radius(a) -> float:
    return float(np.max(np.abs(eig_general(a))))


def default_epsilon(a) -> float:
    return EPSILON_SCALE * max(1.0, float(np.linalg.norm(a)))


def _margin_start(cov: ChangeOfVariables) -> np.ndarray:
    """Strictly feasible start for the margin problem: P = I, M = 0, t large."""
    p = cov.target_sdp
    v = np.zeros(p.nvars)
    assignment = p.unpack(v)
    n = assignment["P"].shape[0]
    assignment["P"] = np.eye(n)
    assignment["t"] = 0.0
    v = p.pack(assignment)
    worst = max(max_eig(SymMat(b(v))) for b in p.blocks)
    assignment["t"] = worst + 1.0
    return p.pack(assignment)


def dt_block_residual(a, b, epsilon, p, m) -> float:
    """Max eigenvalue of the block lift [[-P + eps I, AP + BM], [., -P]]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    m = np.asarray(m, dtype=float)
    n = a.shape[0]
    c = a @ p + b @ m
    block = np.block([[-p + epsilon * np.eye(n), c], [c.T, -p]])
    return max_eig(SymMat(block))


def dt_quadratic_residual(a, b, epsilon, p, m) -> float:
    """Max eigenvalue of (AP + BM) P^{-1} (AP + BM)^T - P + eps I."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    m = np.asarray(m, dtype=float)
    c = a @ p + b @ m
    ell = chol_factor(0.5 * (p + p.T))
    quad = c @ chol_solve(ell, c.T)
    return max_eig(SymMat(quad - p + epsilon * np.eye(a.shape[0]), tol=1e-6))


def _synthesize(sys: LtiSystem, epsilon, tol, nsamples, seed, kind):
    eps0 = default_epsilon(sys.A) if epsilon is None else float(epsilon)
    if eps0 <= 0:
        raise ValueError("epsilon must be positive")
    make_map = gain_map_ct if kind is Clock.CONTINUOUS else gain_map_dt
    tried = []
    for k in range(EPSILON_HALVINGS + 1):
        eps = eps0 / 2.0 ** k
        cov = make_map(sys.A, sys.B, eps)
        sol = solve(cov.target_sdp, start=_margin_start(cov))
        if sol.status is SolveStatus.NUMERICAL_FAILURE:
            raise SolverFailure(f"margin solve failed at epsilon={eps:g}")
        t_star = sol.primal_value
        tried.append((eps, t_star))
        if sol.status is SolveStatus.OPTIMAL and t_star < -tol:
            return _finish(sys, cov, sol, eps, nsamples, seed)
    detail = ", ".join(f"eps={e:.3e}: margin={-t:.3e}" for e, t in tried)
    raise NotStabilizable(
        f"no strict feasibility certificate at tested epsilon values ({detail})",
        tried)


def _finish(sys, cov, sol, eps, nsamples, seed):
    assignment = sol.assignment(cov.target_sdp)
    p = assignment["P"]
    m = assignment["M"]
    recovered = cov.recover_fn({"P": p, "M": m})
    f = recovered["F"]
    closed = sys.A + sys.B @ f
    if sys.clock is Clock.CONTINUOUS:
        stable = is_hurwitz(closed, 0.0)
    else:
        stable = spectral_radius(closed) < 1.0
    if not stable:
        raise SolverFailure("recovered gain failed the closed-loop stability check")
    if sys.clock is Clock.DISCRETE:
        # cross-check: the fractional form must agree with the block lift
        if dt_quadratic_residual(sys.A, sys.B, eps, p, m) > 1e-7:
            raise SolverFailure("quadratic-form residual disagrees with the block lift")
    certificate = _cert.certify(cov.source, cov, nsamples=nsamples, seed=seed,
                                solution=sol)
    return StabilizationResult(SymMat(p), m, f, eps, -sol.primal_value, certificate)


def ct_synthesize(sys: LtiSystem, epsilon: float | None = None,
                  tol: float = DEFAULT_MARGIN_TOL, nsamples: int = 25,
                  seed: int = 0) -> StabilizationResult:
    """Continuous-time gain synthesis via the margin problem over the
    linearized Lyapunov inequality; epsilon is halved up to 10 times before
    reporting NotStabilizable."""
    if sys.clock is not Clock.CONTINUOUS:
        raise ValueError("ct_synthesize needs a continuous-time system")
    return _synthesize(sys, epsilon, tol, nsamples, seed, Clock.CONTINUOUS)


def dt_synthesize(sys: LtiSystem, epsilon: float | None = None,
                  tol: float = DEFAULT_MARGIN_TOL, nsamples: int = 25,
                  seed: int = 0) -> StabilizationResult:
    """Discrete-time gain synthesis through the block lift of the quadratic
    stability form, with the fractional form checked at the solution."""
    if sys.clock is not Clock.DISCRETE:
        raise ValueError("dt_synthesize needs a discrete-time system")
    return _synthesize(sys, epsilon, tol, nsamples, seed, Clock.DISCRETE)


def slater_margin(sys: LtiSystem, epsilon: float) -> float:
    """Strict-feasibility margin (-t*) of the convexified constraint system at
    this epsilon; positive means a strictly feasible point exists, and callers
    may halve epsilon and retry since shrinking epsilon only enlarges the
    feasible set."""
    make_map = gain_map_ct if sys.clock is Clock.CONTINUOUS else gain_map_dt
    cov = make_map(sys.A, sys.B, float(epsilon))
    _, margin, _ = strict_feasibility(cov.feasibility_sdp)
    return margin


def pbh_stabilizable(a, b, clock: Clock) -> bool:
    """Rank test on [A - w I, B] at every eigenvalue w that is unstable for
    the clock (Re w >= 0 continuous, |w| >= 1 discrete)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    for w in eig_general(a):
        unstable = (w.real >= 0.0) if clock is Clock.CONTINUOUS else (abs(w) >= 1.0)
        if not unstable:
            continue
        pencil = np.hstack([a - w * np.eye(n), b.astype(complex)])
        sv = np.linalg.svd(pencil, compute_uv=False)
        threshold = PBH_RANK_REL * max(1.0, sv[0])
        if np.sum(sv > threshold) < n:
            return False
    return True


def random_stabilizable(n: int, m: int, seed: int, clock: Clock) -> LtiSystem:
    """Standard-normal (A, B) pairs rejection-sampled until the PBH test
    passes. Raises GenerationBudgetExceeded after 1000 draws."""
    if not 1 <= n <= 8:
        raise ValueError("n must be between 1 and 8")
    if not 1 <= m <= n:
        raise ValueError("m must be between 1 and n")
    rng = np.random.default_rng(seed)
    for _ in range(GENERATION_BUDGET):
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, m))
        if pbh_stabilizable(a, b, clock):
            return LtiSystem(a, b, clock)
    raise GenerationBudgetExceeded(f"no stabilizable pair in {GENERATION_BUDGET} draws")
