"""Convex linear-objective SDP in block-LMI form and a dense log-barrier
path-following solver returning primal and dual solutions.

Constraint sense and duality convention: every block is an affine map
``Phi_i(v) = F0_i + sum_j v_j F_ij`` constrained ``Phi_i(v) <= 0`` (negative
semidefinite), with PSD dual blocks ``Z_i`` and Lagrangian
``c.v + sum_i Tr(Z_i Phi_i(v))``. Along the central path the dual blocks are
recovered as ``Z_i = mu * (-Phi_i(v))^{-1}``, whose dual objective
``sum_i Tr(Z_i F0_i)`` trails the primal objective by ``mu * sum_i dim_i``
plus the dual-stationarity residual. The barrier parameter starts at 1 and
shrinks by a factor of 5 per centering stage until the implied gap meets the
tolerance.

The solver is deterministic: no randomness, fixed reduction orders.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .blocks import BlockLayout, VariableBlock
from .symmat import SymMat, NotPositiveDefinite, chol_factor, chol_solve, max_eig

DEFAULT_TOL_GAP = 1e-7
DEFAULT_TOL_FEAS = 1e-8
MAX_NEWTON_ITERATIONS = 200
MU_INITIAL = 1.0
MU_SHRINK = 5.0
CENTER_TOL = 1e-9           # stop centering when (newton decrement)^2 / 2 <= this
UNBOUNDED_OBJECTIVE = -1e12
MARGIN_CAP = 1e3            # phase-1 margin variable is kept above -MARGIN_CAP
PHASE1_BOX = 1e6            # phase-1 bounds every original coordinate to +-this
PHASE1_VAR = "_phase1_t"
EQUALITY_SLACK = 1e-7


class SolverFailure(RuntimeError):
    """The barrier solver could not produce a usable iterate."""


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


class AffineMatrixExpr:
    """Affine map into symmetric matrices over flat problem coordinates."""

    def __init__(self, dim: int, constant, coeffs):
        self.dim = int(dim)
        constant = np.asarray(constant, dtype=float)
        if constant.shape != (self.dim, self.dim):
            raise ValueError("constant term shape mismatch")
        self.constant = 0.5 * (constant + constant.T)
        merged = {}
        for idx, mat in coeffs:
            mat = np.asarray(mat, dtype=float)
            if mat.shape != (self.dim, self.dim):
                raise ValueError("coefficient shape mismatch")
            merged[int(idx)] = merged.get(int(idx), 0.0) + 0.5 * (mat + mat.T)
        items = sorted(merged.items())
        items = [(i, m) for i, m in items if np.max(np.abs(m)) > 0.0]
        self.var_idx = np.array([i for i, _ in items], dtype=int)
        self.mats = (np.stack([m for _, m in items])
                     if items else np.zeros((0, self.dim, self.dim)))

    def __call__(self, v: np.ndarray) -> np.ndarray:
        if len(self.var_idx) == 0:
            return self.constant.copy()
        return self.constant + np.tensordot(v[self.var_idx], self.mats, axes=(0, 0))

    def shifted_by_margin(self, t_index: int) -> "AffineMatrixExpr":
        """Same block with an extra ``- t I`` term for a margin variable."""
        coeffs = list(zip(self.var_idx, self.mats))
        coeffs.append((t_index, -np.eye(self.dim)))
        return AffineMatrixExpr(self.dim, self.constant, coeffs)

    def scaled(self, gamma: float) -> "AffineMatrixExpr":
        return AffineMatrixExpr(self.dim, gamma * self.constant,
                                list(zip(self.var_idx, gamma * self.mats)))


class SdpProblem:
    """minimize c.v subject to every block expression being NSD."""

    def __init__(self, layout: BlockLayout, objective, blocks):
        self.layout = layout
        self.c = np.asarray(objective, dtype=float).reshape(-1)
        if self.c.shape != (layout.total,):
            raise ValueError("objective length must match coordinate count")
        self.blocks = tuple(blocks)
        for b in self.blocks:
            if len(b.var_idx) and (b.var_idx.min() < 0 or b.var_idx.max() >= layout.total):
                raise ValueError("block references out-of-range coordinate")

    @property
    def nvars(self) -> int:
        return self.layout.total

    @property
    def total_block_dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    def with_objective(self, c) -> "SdpProblem":
        return SdpProblem(self.layout, c, self.blocks)

    def pack(self, assignment: dict) -> np.ndarray:
        return self.layout.pack(assignment)

    def unpack(self, v) -> dict:
        return self.layout.unpack(v)


@dataclass
class SdpSolution:
    status: SolveStatus
    v: np.ndarray
    Z: list
    primal_value: float
    dual_value: float
    iterations: int
    mu_final: float
    dual_residual: np.ndarray | None = None
    farkas: list | None = None
    iterate_log: tuple = ()

    def assignment(self, problem: SdpProblem) -> dict:
        return problem.unpack(self.v)

    @property
    def gap(self) -> float:
        return abs(self.primal_value - self.dual_value)


class SdpBuilder:
    """Assembles an SdpProblem from named structured variables.

    Constraint blocks are declared through per-variable linear maps applied to
    basis elements; symmetric variables use the basis ``E_ii`` and
    ``E_ij + E_ji``, which carries the off-diagonal coefficient doubling of
    the upper-triangle flattening.
    """

    def __init__(self):
        self._vars = []
        self._blocks = []
        self._objective = {}

    def add_scalar(self, name: str) -> "SdpBuilder":
        self._vars.append(VariableBlock(name, "scalar"))
        return self

    def add_matrix(self, name: str, m: int, n: int) -> "SdpBuilder":
        self._vars.append(VariableBlock(name, "matrix", (m, n)))
        return self

    def add_symmetric(self, name: str, n: int) -> "SdpBuilder":
        self._vars.append(VariableBlock(name, "symmetric", (n, n)))
        return self

    def add_block(self, constant, terms: dict) -> "SdpBuilder":
        """Add one NSD constraint block: constant plus terms[name](basis)."""
        self._blocks.append((np.asarray(constant, dtype=float), dict(terms)))
        return self

    def minimize(self, weights: dict) -> "SdpBuilder":
        """Linear objective; weights are per flattened coordinate of each block."""
        self._objective = dict(weights)
        return self

    def fix_scalar(self, name: str, value: float, slack: float = EQUALITY_SLACK) -> "SdpBuilder":
        """Equality encoded as a pair of 1x1 inequality blocks with shared slack."""
        self.add_block([[-value - slack]], {name: lambda b: [[b]]})
        self.add_block([[value - slack]], {name: lambda b: [[-b]]})
        return self

    def build(self) -> SdpProblem:
        layout = BlockLayout(tuple(self._vars))
        c = np.zeros(layout.total)
        for name, w in self._objective.items():
            rng = layout.coord_range(name)
            w = np.asarray(w, dtype=float).reshape(-1)
            if w.size == 1 and len(rng) == 1:
                c[rng.start] = w[0]
            elif w.size == len(rng):
                c[rng.start:rng.stop] = w
            else:
                raise ValueError(f"objective weights for {name!r} have wrong size")
        blocks = []
        for constant, terms in self._blocks:
            dim = constant.shape[0]
            coeffs = []
            for name, fn in terms.items():
                block = layout.get(name)
                for idx, basis in zip(layout.coord_range(name), block.basis_elements()):
                    mat = np.asarray(fn(basis), dtype=float)
                    if mat.shape != (dim, dim):
                        raise ValueError(f"term for {name!r} returned shape {mat.shape}")
                    coeffs.append((idx, mat))
            blocks.append(AffineMatrixExpr(dim, constant, coeffs))
        return SdpProblem(layout, c, blocks)


def phase1_problem(problem: SdpProblem, cap: float = MARGIN_CAP) -> SdpProblem:
    """Margin problem: minimize t with every block shifted by -t I, plus a
    floor block keeping t >= -cap and a +-PHASE1_BOX box on every original
    coordinate. The boxes keep the barrier centering bounded along directions
    the margin objective does not control; they only affect the verdict for
    problems whose sole strictly feasible points live outside the box."""
    if any(b.name == PHASE1_VAR for b in problem.layout):
        raise ValueError("problem already carries a phase-1 variable")
    layout = BlockLayout(problem.layout.blocks + (VariableBlock(PHASE1_VAR, "scalar"),))
    t_index = layout.total - 1
    blocks = [b.shifted_by_margin(t_index) for b in problem.blocks]
    blocks.append(AffineMatrixExpr(1, [[-cap]], [(t_index, [[-1.0]])]))
    for j in range(problem.nvars):
        blocks.append(AffineMatrixExpr(1, [[-PHASE1_BOX]], [(j, [[1.0]])]))
        blocks.append(AffineMatrixExpr(1, [[-PHASE1_BOX]], [(j, [[-1.0]])]))
    c = np.zeros(layout.total)
    c[t_index] = 1.0
    return SdpProblem(layout, c, blocks)


def residuals(problem: SdpProblem, v) -> list:
    """Per-block maximum eigenvalue at v; negative means strictly feasible."""
    v = np.asarray(v, dtype=float)
    if v.shape != (problem.nvars,):
        raise ValueError("point length must match nvars")
    return [max_eig(SymMat(b(v))) for b in problem.blocks]


def sdp_dual_value(problem: SdpProblem, solution: SdpSolution) -> float:
    """Dual objective implied by the solution's dual blocks."""
    if not solution.Z:
        raise ValueError("solution has no dual blocks")
    return float(sum(np.tensordot(z.data, b.constant, axes=2)
                     for z, b in zip(solution.Z, problem.blocks)))


class _Barrier:
    """One barrier path-following run from a strictly feasible start."""

    def __init__(self, problem, tol_gap, tol_feas, max_iterations, stop_objective=None):
        self.p = problem
        self.tol_gap = tol_gap
        self.tol_feas = tol_feas
        self.max_iterations = max_iterations
        self.stop_objective = stop_objective
        self.iterations = 0
        self.log = []

    def _factors(self, v):
        factors = []
        for b in self.p.blocks:
            s = -b(v)
            s = 0.5 * (s + s.T)
            try:
                factors.append(chol_factor(s))
            except NotPositiveDefinite:
                return None
        return factors

    def _barrier_value(self, v, factors, mu):
        logdet = sum(2.0 * np.sum(np.log(np.diag(ell))) for ell in factors)
        return float(self.p.c @ v) - mu * logdet

    def _grad_hess(self, v, factors, mu):
        n = self.p.nvars
        grad = self.p.c.copy()
        hess = np.zeros((n, n))
        for b, ell in zip(self.p.blocks, factors):
            if len(b.var_idx) == 0:
                continue
            s_inv = chol_solve(ell, np.eye(b.dim))
            w = np.einsum("ij,kjl->kil", s_inv, b.mats)
            grad[b.var_idx] += mu * np.einsum("kii->k", w)
            ix = np.ix_(b.var_idx, b.var_idx)
            hess[ix] += mu * np.einsum("aij,bji->ab", w, w)
        return grad, hess

    def _newton_direction(self, grad, hess):
        d = np.sqrt(np.maximum(np.diag(hess), 1e-300))
        scaled = hess / d[:, None] / d[None, :]
        rhs = -grad / d
        ridge = 0.0
        for _ in range(8):
            try:
                ell = chol_factor(scaled + ridge * np.eye(len(rhs)))
                return chol_solve(ell, rhs) / d
            except NotPositiveDefinite:
                ridge = 1e-12 if ridge == 0.0 else ridge * 100.0
        raise SolverFailure("Newton system not factorizable")

    def _center(self, v, factors, mu, extra_criterion=None, budget=None):
        """Newton iterations at fixed mu. Returns (v, factors, status_or_None)."""
        budget = budget if budget is not None else self.max_iterations
        for _ in range(budget):
            obj = float(self.p.c @ v)
            if obj < UNBOUNDED_OBJECTIVE:
                return v, factors, SolveStatus.UNBOUNDED
            grad, hess = self._grad_hess(v, factors, mu)
            step = self._newton_direction(grad, hess)
            decrement_sq = float(-grad @ step)
            if decrement_sq / 2.0 <= CENTER_TOL:
                if extra_criterion is None or extra_criterion(v, grad):
                    return v, factors, None
                # the decrement understates the dual residual when the Hessian
                # is huge; keep stepping until the iterate can no longer move
                if np.max(np.abs(step)) <= 1e-17 * max(1.0, float(np.max(np.abs(v)))):
                    return v, factors, None
            if self.iterations >= self.max_iterations:
                return v, factors, SolveStatus.NUMERICAL_FAILURE
            phi0 = self._barrier_value(v, factors, mu)
            armijo_slack = 1e-14 * (1.0 + abs(phi0))
            alpha, accepted = 1.0, None
            for _ in range(60):
                trial = v + alpha * step
                if np.array_equal(trial, v):
                    break  # step underflow: nothing left to gain here
                trial_factors = self._factors(trial)
                if trial_factors is not None:
                    phi1 = self._barrier_value(trial, trial_factors, mu)
                    if phi1 <= phi0 + 0.01 * alpha * float(grad @ step) + armijo_slack:
                        accepted = (trial, trial_factors)
                        break
                alpha *= 0.5
            if accepted is None:
                # stalled line search: accept current point as centered-enough
                return v, factors, None
            v, factors = accepted
            self.iterations += 1
            self.log.append((mu, v.copy()))
            if self.stop_objective is not None and float(self.p.c @ v) <= self.stop_objective:
                return v, factors, None
        return v, factors, SolveStatus.NUMERICAL_FAILURE

    def run(self, v0) -> SdpSolution:
        v = np.asarray(v0, dtype=float).copy()
        factors = self._factors(v)
        if factors is None:
            raise SolverFailure("start point is not strictly feasible")
        total_dim = self.p.total_block_dim
        # match the initial barrier weight to the start point: far-out starts
        # (large objective) enter the path high up instead of crawling along
        # the feasible valley at mu = 1
        mu = max(MU_INITIAL, abs(float(self.p.c @ v)) / max(total_dim, 1))
        c_scale = max(1.0, float(np.max(np.abs(self.p.c))) if self.p.c.size else 1.0)

        def polished(v_cur, grad):
            r_inf = float(np.max(np.abs(grad))) if grad.size else 0.0
            r_dot = abs(float(grad @ v_cur))
            obj = float(self.p.c @ v_cur)
            return (r_inf <= self.tol_feas * c_scale
                    and r_dot <= 0.1 * self.tol_gap * (1.0 + abs(obj)))

        status = None
        while True:
            v, factors, status = self._center(v, factors, mu)
            if status is not None:
                break
            obj = float(self.p.c @ v)
            if self.stop_objective is not None and obj <= self.stop_objective:
                break
            if mu * total_dim <= 0.5 * self.tol_gap * (1.0 + abs(obj)):
                v, factors, status = self._center(v, factors, mu,
                                                  extra_criterion=polished, budget=40)
                if (status is SolveStatus.NUMERICAL_FAILURE
                        and self.iterations < self.max_iterations):
                    status = None  # gap target already met; polish is best-effort
                break
            mu /= MU_SHRINK
        if status is SolveStatus.UNBOUNDED:
            return SdpSolution(SolveStatus.UNBOUNDED, v, [], -math.inf, -math.inf,
                               self.iterations, mu, iterate_log=tuple(self.log))
        z_blocks = []
        for b, ell in zip(self.p.blocks, factors):
            z_blocks.append(SymMat(mu * chol_solve(ell, np.eye(b.dim)), tol=1e-6))
        grad, _ = self._grad_hess(v, factors, mu)
        primal = float(self.p.c @ v)
        dual = float(sum(np.tensordot(z.data, b.constant, axes=2)
                         for z, b in zip(z_blocks, self.p.blocks)))
        final_status = SolveStatus.OPTIMAL if status is None else status
        return SdpSolution(final_status, v, z_blocks, primal, dual, self.iterations,
                           mu, dual_residual=grad, iterate_log=tuple(self.log))


def _initial_margin_point(problem: SdpProblem, cap: float) -> np.ndarray:
    """Strictly feasible start for the phase-1 problem: v = 0, t above the
    worst block eigenvalue (and above the cap floor)."""
    v = np.zeros(problem.nvars + 1)
    worst = max(max_eig(SymMat(b(v[:-1]))) for b in problem.blocks)
    v[-1] = max(worst + 1.0, -cap + 1.0)
    return v


def strict_feasibility(problem: SdpProblem, tol_gap: float = DEFAULT_TOL_GAP,
                       tol_feas: float = DEFAULT_TOL_FEAS, cap: float = MARGIN_CAP,
                       stop_margin: float | None = None):
    """Phase-1 search for a strictly feasible point.

    Returns ``(v0, margin, phase1_solution)`` where ``margin = -t*`` from the
    capped margin problem (so the reported margin saturates at ``cap``), and
    ``v0`` is None when no strictly interior point was found. When
    ``stop_margin`` is set the search stops early once that margin is
    certified, which is enough for start-point generation.
    """
    p1 = phase1_problem(problem, cap)
    stop_obj = None if stop_margin is None else -abs(stop_margin)
    solver = _Barrier(p1, tol_gap, tol_feas, MAX_NEWTON_ITERATIONS, stop_objective=stop_obj)
    sol1 = solver.run(_initial_margin_point(problem, cap))
    if sol1.status is SolveStatus.NUMERICAL_FAILURE:
        raise SolverFailure("phase-1 barrier run failed")
    t_star = float(sol1.v[-1])
    if t_star >= -tol_feas:
        return None, -t_star, sol1
    return sol1.v[:-1].copy(), -t_star, sol1


def slater_margin(problem: SdpProblem) -> float:
    """Capped strict-feasibility margin of the block constraints."""
    _, margin, _ = strict_feasibility(problem)
    return margin


def solve(problem: SdpProblem, tol_gap: float = DEFAULT_TOL_GAP,
          tol_feas: float = DEFAULT_TOL_FEAS, start=None) -> SdpSolution:
    """Solve the SDP, finding a strictly feasible start via phase 1 if needed.

    Statuses: OPTIMAL with the full primal-dual contract; INFEASIBLE with the
    phase-1 dual blocks attached as a Farkas-style witness (PSD, annihilating
    the coefficient maps, positive pairing with the constants when strictly
    infeasible); UNBOUNDED when the objective passes -1e12 on the central
    path; NUMERICAL_FAILURE with the best iterate after the Newton cap.
    """
    phase1_iters = 0
    v0 = None
    if start is not None:
        cand = np.asarray(start, dtype=float)
        if cand.shape == (problem.nvars,):
            if _Barrier(problem, tol_gap, tol_feas, 1)._factors(cand) is not None:
                v0 = cand
    if v0 is None:
        exit_margin = max(1e-3, 1000.0 * tol_feas)
        feasible_v, margin, sol1 = strict_feasibility(
            problem, tol_gap, tol_feas, stop_margin=exit_margin)
        phase1_iters = sol1.iterations
        if feasible_v is None:
            farkas = [z for z in sol1.Z[:len(problem.blocks)]]
            return SdpSolution(SolveStatus.INFEASIBLE, sol1.v[:-1], [], math.nan,
                               math.nan, phase1_iters, sol1.mu_final, farkas=farkas)
        v0 = feasible_v
    solver = _Barrier(problem, tol_gap, tol_feas,
                      max(MAX_NEWTON_ITERATIONS - phase1_iters, 40))
    out = solver.run(v0)
    out.iterations += phase1_iters
    return out
