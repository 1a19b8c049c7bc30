"""Non-convex matrix-inequality programs: representation, constraint and
Lagrangian evaluation, and brute-force grid oracles.

The oracles are the independent verification route for duality claims: they
never touch the convexification path. Grid minima are exact only up to the
grid resolution, and the unboundedness verdict of :func:`dual_oracle` is a
heuristic (boundary attainment plus an outward probe); callers that need
ground truth compare against closed forms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .blocks import BlockLayout, VariableBlock
from .symmat import SymMat, max_eig, min_eig

GRID_BUDGET = 10 ** 7
MAX_OBJECTIVE_DEGREE = 4
MULTIPLIER_PSD_TOL = 1e-10
UNBOUNDED_VALUE_FLOOR = -1e9


class MissingBlock(KeyError):
    """An assignment does not cover a referenced variable block."""


class GridBudgetExceeded(RuntimeError):
    """Requested grid would exceed the oracle point budget."""


class NoFeasibleGridPoint(RuntimeError):
    """No point of the search grid satisfies every constraint."""


class Polynomial:
    """Sparse polynomial over scalar coordinates of named blocks.

    Monomial keys are sorted tuples of ((block, coordinate), power). Supports
    the arithmetic needed to build degree <= 4 objectives and 1x1 constraint
    entries, and evaluates over floats or numpy arrays (for grid sweeps).
    """

    __slots__ = ("monomials",)

    def __init__(self, monomials=None):
        self.monomials = {}
        for key, coeff in (monomials or {}).items():
            if coeff != 0.0:
                self.monomials[key] = float(coeff)

    @classmethod
    def constant(cls, value: float) -> "Polynomial":
        return cls({(): float(value)})

    @classmethod
    def var(cls, block: str, index: int = 0) -> "Polynomial":
        return cls({(((block, index), 1),): 1.0})

    def degree(self) -> int:
        if not self.monomials:
            return 0
        return max(sum(p for _, p in key) for key in self.monomials)

    def variables(self):
        refs = set()
        for key in self.monomials:
            refs.update(ref for ref, _ in key)
        return refs

    def blocks(self):
        return {ref[0] for ref in self.variables()}

    def __add__(self, other):
        other = other if isinstance(other, Polynomial) else Polynomial.constant(other)
        out = dict(self.monomials)
        for key, coeff in other.monomials.items():
            out[key] = out.get(key, 0.0) + coeff
        return Polynomial(out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({k: -c for k, c in self.monomials.items()})

    def __sub__(self, other):
        other = other if isinstance(other, Polynomial) else Polynomial.constant(other)
        return self + (-other)

    def __rsub__(self, other):
        return Polynomial.constant(other) + (-self)

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial({k: c * float(other) for k, c in self.monomials.items()})
        out = {}
        for ka, ca in self.monomials.items():
            for kb, cb in other.monomials.items():
                powers = {}
                for ref, p in itertools.chain(ka, kb):
                    powers[ref] = powers.get(ref, 0) + p
                key = tuple(sorted(powers.items()))
                out[key] = out.get(key, 0.0) + ca * cb
        return Polynomial(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers not supported")
        out = Polynomial.constant(1.0)
        for _ in range(n):
            out = out * self
        return out

    def evaluate(self, coords: dict) -> float:
        """Evaluate given flat coordinates: coords[(block, index)] -> value.

        Values may be numpy arrays of a shared shape, in which case the result
        broadcasts (used by the vectorized grid oracles).
        """
        total = 0.0
        for key, coeff in self.monomials.items():
            term = coeff
            for ref, power in key:
                if ref not in coords:
                    raise MissingBlock(ref[0])
                term = term * coords[ref] ** power
            total = total + term
        return total

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.monomials == other.monomials

    def __hash__(self):
        return hash(tuple(sorted(self.monomials.items())))

    def __repr__(self):
        return f"Polynomial({self.monomials!r})"


class BilinearMatrixExpr:
    """Constant + linear + bilinear structural terms mapping blocks to S^d.

    ``linear`` entries are (block name, fn) with ``fn(value) -> (d, d) array``
    linear in the block value; ``bilinear`` entries are (names tuple, fn) with
    ``fn(*values)`` covering the structured products (gain-times-Lyapunov
    forms and the like). 1x1 polynomial constraints carry their Polynomial so
    the oracles can vectorize.
    """

    def __init__(self, dim, constant=None, linear=(), bilinear=(), poly=None):
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("constraint dimension must be at least 1")
        if constant is None:
            constant = np.zeros((self.dim, self.dim))
        self.constant = SymMat(constant)
        if self.constant.dim != self.dim:
            raise ValueError("constant term dimension mismatch")
        self.linear = tuple((str(name), fn) for name, fn in linear)
        self.bilinear = tuple((tuple(names), fn) for names, fn in bilinear)
        self.poly = poly
        if poly is not None and self.dim != 1:
            raise ValueError("polynomial fast path only applies to 1x1 constraints")

    @classmethod
    def from_polynomial(cls, poly: Polynomial) -> "BilinearMatrixExpr":
        blocks = sorted(poly.blocks())
        linear = tuple((b, None) for b in blocks)  # reference bookkeeping only
        expr = cls(1, poly=poly)
        expr.linear = linear
        return expr

    def referenced_blocks(self):
        refs = [name for name, _ in self.linear]
        for names, _ in self.bilinear:
            refs.extend(names)
        if self.poly is not None:
            refs.extend(self.poly.blocks())
        return set(refs)


def _flat_coords(assignment: dict) -> dict:
    coords = {}
    for name, value in assignment.items():
        if np.isscalar(value):
            coords[(name, 0)] = float(value)
        else:
            arr = np.asarray(value, dtype=float)
            for k, entry in enumerate(arr.reshape(-1)):
                coords[(name, k)] = float(entry)
    return coords


def eval_constraint(expr: BilinearMatrixExpr, assignment: dict) -> SymMat:
    """Evaluate one matrix constraint at an assignment, symmetrized."""
    missing = expr.referenced_blocks() - set(assignment)
    if missing:
        raise MissingBlock(sorted(missing)[0])
    if expr.poly is not None:
        value = expr.poly.evaluate(_flat_coords(assignment))
        return SymMat([[value]])
    acc = expr.constant.data.copy()
    for name, fn in expr.linear:
        if fn is not None:
            acc = acc + np.asarray(fn(assignment[name]), dtype=float)
    for names, fn in expr.bilinear:
        acc = acc + np.asarray(fn(*(assignment[n] for n in names)), dtype=float)
    return SymMat(acc)


class BmiProblem:
    """Objective polynomial plus matrix constraints, each required <= 0.

    Variable blocks carry optional bounds boxes; the boxes exist for the grid
    oracles only and are not part of the feasibility semantics.
    """

    def __init__(self, blocks, objective: Polynomial, constraints, name: str = ""):
        self.layout = BlockLayout(tuple(blocks))
        self.objective = objective
        self.constraints = tuple(constraints)
        self.name = name
        if objective.degree() > MAX_OBJECTIVE_DEGREE:
            raise ValueError(f"objective degree {objective.degree()} exceeds cap "
                             f"{MAX_OBJECTIVE_DEGREE}")
        declared = {b.name for b in self.layout}
        undeclared = objective.blocks() - declared
        for expr in self.constraints:
            undeclared |= expr.referenced_blocks() - declared
        if undeclared:
            raise ValueError(f"undeclared blocks referenced: {sorted(undeclared)}")

    @property
    def blocks(self):
        return self.layout.blocks

    def objective_value(self, assignment: dict) -> float:
        return float(self.objective.evaluate(_flat_coords(assignment)))


class Multipliers:
    """One PSD matrix per constraint (checked to tolerance 1e-10)."""

    def __init__(self, matrices):
        mats = []
        for m in matrices:
            m = m if isinstance(m, SymMat) else SymMat(m)
            if min_eig(m) < -MULTIPLIER_PSD_TOL:
                raise ValueError("multiplier is not positive semidefinite")
            mats.append(m)
        self.matrices = tuple(mats)

    @classmethod
    def scalars(cls, *values) -> "Multipliers":
        return cls([[[float(v)]] for v in values])

    def __len__(self):
        return len(self.matrices)


def lagrangian(problem: BmiProblem, assignment: dict, mult: Multipliers) -> float:
    """Objective plus sum of Tr(multiplier_i * constraint_i) at the point."""
    if len(mult) != len(problem.constraints):
        raise ValueError("multiplier count does not match constraint count")
    total = problem.objective_value(assignment)
    for lam, expr in zip(mult.matrices, problem.constraints):
        phi = eval_constraint(expr, assignment)
        if phi.dim != lam.dim:
            raise ValueError("multiplier dimension mismatch")
        total += float(np.tensordot(lam.data, phi.data, axes=2))
    return total


@dataclass(frozen=True)
class PrimalOracleResult:
    value: float
    argmin: dict


@dataclass(frozen=True)
class DualOracleResult:
    unbounded_below: bool
    value: float | None

    def as_float(self) -> float:
        return -math.inf if self.unbounded_below else self.value


def _axes(problem: BmiProblem, grid_per_dim: int, box) -> list:
    """One (label, linspace) pair per flat coordinate. Endpoints included, and
    a symmetric box with an odd point count lands exactly on zero."""
    if grid_per_dim < 2:
        raise ValueError("grid_per_dim must be at least 2")
    axes = []
    for block in problem.layout:
        bounds = (box or {}).get(block.name, block.box)
        if bounds is None:
            raise ValueError(f"block {block.name!r} has no bounds box")
        lo, hi = float(bounds[0]), float(bounds[1])
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"invalid bounds for block {block.name!r}")
        for k in range(block.size):
            axes.append(((block.name, k), np.linspace(lo, hi, grid_per_dim)))
    if grid_per_dim ** len(axes) > GRID_BUDGET:
        raise GridBudgetExceeded(
            f"{grid_per_dim}^{len(axes)} grid points exceed budget {GRID_BUDGET}")
    return axes


def _vectorizable(problem: BmiProblem) -> bool:
    return (all(b.kind == "scalar" for b in problem.layout)
            and all(e.poly is not None for e in problem.constraints))


def _mesh(axes):
    grids = np.meshgrid(*(ax for _, ax in axes), indexing="ij")
    return {label: g.reshape(-1) for (label, _), g in zip(axes, grids)}


def _iter_points(problem: BmiProblem, axes):
    labels = [label for label, _ in axes]
    for values in itertools.product(*(ax for _, ax in axes)):
        coords = dict(zip(labels, values))
        flat = np.array(values)
        offset = 0
        assignment = {}
        for block in problem.layout:
            assignment[block.name] = block.unflatten(flat[offset:offset + block.size])
            offset += block.size
        yield coords, assignment


def _assignment_from_coords(problem: BmiProblem, coords: dict) -> dict:
    assignment = {}
    for block in problem.layout:
        vals = np.array([coords[(block.name, k)] for k in range(block.size)])
        assignment[block.name] = block.unflatten(vals)
    return assignment


def primal_oracle(problem: BmiProblem, grid_per_dim: int, box=None,
                  feas_tol: float = 1e-9) -> PrimalOracleResult:
    """Best feasible grid point; feasibility means every constraint has
    maximum eigenvalue at most ``feas_tol`` (absorbing float drift at exact
    boundary optima)."""
    axes = _axes(problem, grid_per_dim, box)
    if _vectorizable(problem):
        coords = _mesh(axes)
        feasible = np.ones(next(iter(coords.values())).shape, dtype=bool) \
            if coords else np.array([True])
        for expr in problem.constraints:
            feasible &= expr.poly.evaluate(coords) <= feas_tol
        if not np.any(feasible):
            raise NoFeasibleGridPoint("no grid point satisfies all constraints")
        obj = np.broadcast_to(problem.objective.evaluate(coords),
                              feasible.shape).astype(float)
        masked = np.where(feasible, obj, np.inf)
        best = int(np.argmin(masked))
        point = {label: float(arr[best]) for label, arr in coords.items()}
        return PrimalOracleResult(float(masked[best]),
                                  _assignment_from_coords(problem, point))
    best_val, best_assignment = math.inf, None
    for _, assignment in _iter_points(problem, axes):
        if all(max_eig(eval_constraint(e, assignment)) <= feas_tol
               for e in problem.constraints):
            val = problem.objective_value(assignment)
            if val < best_val:
                best_val, best_assignment = val, assignment
    if best_assignment is None:
        raise NoFeasibleGridPoint("no grid point satisfies all constraints")
    return PrimalOracleResult(best_val, best_assignment)


def dual_oracle(problem: BmiProblem, mult: Multipliers, grid_per_dim: int,
                box=None) -> DualOracleResult:
    """Grid infimum of the Lagrangian at fixed multipliers.

    Reports ``unbounded_below`` when the grid minimum sits on the box boundary
    and an outward probe at twice the box radius keeps decreasing, or when the
    minimum falls under -1e9. This is a heuristic verdict, not a certificate.
    """
    if len(mult) != len(problem.constraints):
        raise ValueError("multiplier count does not match constraint count")
    axes = _axes(problem, grid_per_dim, box)
    lows = {label: ax[0] for label, ax in axes}
    highs = {label: ax[-1] for label, ax in axes}
    if _vectorizable(problem):
        lag_poly = problem.objective
        for lam, expr in zip(mult.matrices, problem.constraints):
            lag_poly = lag_poly + float(lam.data[0, 0]) * expr.poly
        coords = _mesh(axes)
        values = np.broadcast_to(lag_poly.evaluate(coords),
                                 next(iter(coords.values())).shape).astype(float)
        best = int(np.argmin(values))
        best_val = float(values[best])
        best_coords = {label: float(arr[best]) for label, arr in coords.items()}
        lag_at = lag_poly.evaluate
    else:
        best_val, best_coords = math.inf, None
        for coords_pt, assignment in _iter_points(problem, axes):
            val = lagrangian(problem, assignment, mult)
            if val < best_val:
                best_val, best_coords = val, coords_pt

        def lag_at(coords_pt):
            return lagrangian(problem, _assignment_from_coords(problem, coords_pt), mult)

    if best_val < UNBOUNDED_VALUE_FLOOR:
        return DualOracleResult(True, None)
    on_edge = any(best_coords[label] in (lows[label], highs[label])
                  for label in best_coords)
    if on_edge:
        centers = {label: 0.5 * (lows[label] + highs[label]) for label in best_coords}
        probe = {label: centers[label] + 2.0 * (best_coords[label] - centers[label])
                 for label in best_coords}
        probe_val = float(lag_at(probe))
        if probe_val < best_val - 1e-9 * (1.0 + abs(best_val)):
            return DualOracleResult(True, None)
    return DualOracleResult(False, best_val)


def weak_duality_check(p_val: float, d_val: float, tol: float) -> bool:
    """d <= p + tol, accepting -inf for an unbounded dual evaluation."""
    if d_val == -math.inf:
        return True
    if not (np.isfinite(p_val) and np.isfinite(d_val)):
        raise ValueError("values must be finite or d_val = -inf")
    return d_val <= p_val + tol
