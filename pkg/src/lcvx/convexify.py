"""Change-of-variables maps that convexify the built-in program families,
with sampled surjectivity and epigraph-inclusion evidence.

Each map pairs a forward transform h with a recovery transform q such that
h(q(v)) = v on the convex feasible set and q lands inside the original
feasible set. Surjectivity is evidenced by sampling, never claimed as proved;
reports carry sample counts and seeds so runs are reproducible.

Map families:

- ``neg_square``:      x -> v = -x^2, recovered by the nonnegative root
                       q(v) = sqrt(-v) (the negative root is equally valid;
                       the nonnegative branch is fixed for determinism).
- ``product_lift``:    (x1, x2) -> (v1, v2) = (x1, x1 x2^2), recovered by
                       q(v) = (v1, sqrt(v2 / v1)) on v1 >= 1.
- ``gain_product_ct``: (P, F) -> (P, M = F P) for continuous-time synthesis,
                       recovered by F = M P^{-1} on P positive definite.
- ``gain_product_dt``: same product map for the discrete-time family, whose
                       convex side is solved through the block-matrix lift of
                       the quadratic stability form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .blocks import VariableBlock
from .bmi import BilinearMatrixExpr, BmiProblem, Polynomial, eval_constraint
from .sdp import (MARGIN_CAP, SdpBuilder, SdpProblem, SolveStatus, solve,
                  strict_feasibility)
from .symmat import NotPositiveDefinite, SymMat, chol_factor, chol_solve, max_eig, sym_eig

ROUNDTRIP_TOL = 1e-8           # relative, per surjection witness contract
SOURCE_RESIDUAL_TOL = 1e-7
EPIGRAPH_TOL = 1e-10
SINGULAR_P_GATE = 1e-10
DOMAIN_GATE = 1e-9
TRACE_CAP_PER_DIM = 1e3        # Tr(P) <= n * this bounds the homogeneous cone
GAIN_CAP = 1e6                 # sigma_max(M) <= this keeps barrier centers finite
SAMPLER_OBJECTIVES = 10
SAMPLER_TOL_GAP = 1e-5


class DomainViolation(ValueError):
    """Point lies outside the domain of the requested transform."""


class SingularP(ValueError):
    """Lyapunov block is singular or not positive definite where required."""


class SamplingFailed(RuntimeError):
    """No strictly feasible target samples could be generated."""


class MapKind(enum.Enum):
    NEG_SQUARE = "neg_square"
    PRODUCT_LIFT = "product_lift"
    GAIN_PRODUCT_CT = "gain_product_ct"
    GAIN_PRODUCT_DT = "gain_product_dt"


@dataclass(frozen=True)
class ChangeOfVariables:
    """Forward map h and recovery map q between a source program and its
    convexified target.

    ``target_problem`` is the paper-variable convex program (used to evaluate
    the transported objective and constraints), ``feasibility_sdp`` its
    constraint system without any synthetic objective variable (used for
    Slater margins and sampling), and ``target_sdp`` the solvable
    linear-objective lift (epigraph variable for nonlinear objectives, margin
    variable for the feasibility families).
    """

    kind: MapKind
    source: BmiProblem
    target_problem: BmiProblem
    target_sdp: SdpProblem
    feasibility_sdp: SdpProblem
    paper_vars: tuple
    forward_fn: object
    recover_fn: object
    margin_var: str | None = None
    constraint_block_map: tuple = ()


@dataclass(frozen=True)
class SurjectionReport:
    passed: bool
    nsamples: int
    seed: int
    worst_roundtrip: float
    worst_source_violation: float

    def as_dict(self):
        return {"passed": self.passed, "nsamples": self.nsamples, "seed": self.seed,
                "worst_roundtrip": self.worst_roundtrip,
                "worst_source_violation": self.worst_source_violation}


@dataclass(frozen=True)
class InclusionReport:
    passed: bool
    nsamples: int
    checked: int
    seed: int
    counterexamples: int

    def as_dict(self):
        return {"passed": self.passed, "nsamples": self.nsamples,
                "checked": self.checked, "seed": self.seed,
                "counterexamples": self.counterexamples}


@dataclass(frozen=True)
class EpigraphPoint:
    """Constraint bounds and an objective bound: (U_1 .. U_N, t)."""

    bounds: tuple
    t: float


def forward(cov: ChangeOfVariables, assignment: dict) -> dict:
    """Apply h to a source assignment."""
    return cov.forward_fn(assignment)


def recover(cov: ChangeOfVariables, assignment: dict) -> dict:
    """Apply q to a target assignment (extra keys are ignored)."""
    return cov.recover_fn(assignment)


def _rel_diff(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
    return float(np.max(np.abs(a - b))) / scale if a.size else 0.0


def _paper_assignment(cov: ChangeOfVariables, full: dict) -> dict:
    return {name: full[name] for name in cov.paper_vars}


def sample_strict_targets(cov: ChangeOfVariables, nsamples: int, seed: int) -> list:
    """Strictly feasible points of the convex target constraint system.

    Solves the feasibility SDP under a handful of random linear objectives and
    mixes the optima with the phase-1 margin point (the bounded stand-in for
    the analytic center, which need not exist on unbounded feasible sets).
    """
    rng = np.random.default_rng(seed)
    fsdp = cov.feasibility_sdp
    try:
        v_ref, margin, _ = strict_feasibility(fsdp)
    except Exception as exc:
        raise SamplingFailed(f"phase-1 failed: {exc}") from exc
    if v_ref is None or margin <= 0:
        raise SamplingFailed("target constraints admit no strictly feasible point")
    optima = []
    for _ in range(SAMPLER_OBJECTIVES):
        c = rng.standard_normal(fsdp.nvars)
        try:
            sol = solve(fsdp.with_objective(c), tol_gap=SAMPLER_TOL_GAP,
                        tol_feas=1e-6, start=v_ref)
        except Exception:
            continue
        if sol.status is SolveStatus.OPTIMAL:
            optima.append(sol.v)
    samples = []
    for i in range(nsamples):
        theta = rng.uniform(0.0, 0.95)
        if optima:
            vv = (1.0 - theta) * v_ref + theta * optima[i % len(optima)]
        else:
            direction = rng.standard_normal(fsdp.nvars)
            vv = v_ref + 0.0 * direction
            scale = 1.0
            for _ in range(40):
                cand = v_ref + scale * direction
                if all(max_eig(SymMat(b(cand))) < 0 for b in fsdp.blocks):
                    vv = cand
                    break
                scale *= 0.5
        if all(max_eig(SymMat(b(vv))) < 0 for b in fsdp.blocks):
            samples.append(fsdp.unpack(vv))
    if not samples:
        raise SamplingFailed("no strictly feasible samples survived")
    return samples


def surjection_spotcheck(cov: ChangeOfVariables, nsamples: int, seed: int) -> SurjectionReport:
    """Sampled witness that h maps the recovered points back onto the target
    set (h(q(v)) = v) and that q lands inside the source feasible set."""
    samples = sample_strict_targets(cov, nsamples, seed)
    worst_rt = 0.0
    worst_viol = -np.inf
    for full in samples:
        v_paper = _paper_assignment(cov, full)
        x = recover(cov, v_paper)
        v_back = forward(cov, x)
        for name in cov.paper_vars:
            worst_rt = max(worst_rt, _rel_diff(v_back[name], v_paper[name]))
        for expr in cov.source.constraints:
            worst_viol = max(worst_viol, max_eig(eval_constraint(expr, x)))
    passed = worst_rt <= ROUNDTRIP_TOL and worst_viol <= SOURCE_RESIDUAL_TOL
    return SurjectionReport(passed, len(samples), seed, worst_rt, float(worst_viol))


def epigraph_member_source(problem: BmiProblem, point: EpigraphPoint,
                           assignment: dict) -> bool:
    """Whether ``assignment`` witnesses (U_1..U_N, t) in the source epigraph
    set: every constraint value is dominated by its bound and the objective
    does not exceed t."""
    if len(point.bounds) != len(problem.constraints):
        raise ValueError("bound count does not match constraint count")
    for expr, bound in zip(problem.constraints, point.bounds):
        bound = bound if isinstance(bound, SymMat) else SymMat(bound)
        phi = eval_constraint(expr, assignment)
        if phi.dim != bound.dim:
            raise ValueError("bound dimension mismatch")
        if max_eig(SymMat(phi.data - bound.data)) > EPIGRAPH_TOL:
            return False
    return problem.objective_value(assignment) <= point.t + EPIGRAPH_TOL


def _random_source_point(problem: BmiProblem, rng) -> dict:
    out = {}
    for block in problem.layout:
        if block.box is None:
            raise ValueError(f"block {block.name!r} has no bounds box")
        lo, hi = block.box
        flat = rng.uniform(lo, hi, size=block.size)
        out[block.name] = block.unflatten(flat)
    return out


def inclusion_spotcheck(problem: BmiProblem, cov: ChangeOfVariables,
                        nsamples: int, seed: int) -> InclusionReport:
    """Sampled check that source epigraph points stay inside the convexified
    epigraph set, with h providing the membership witness.

    Samples x in the source bounds box, lifts slack to build (U, t), and
    checks the target membership at v = h(x). Samples where h or the target
    constraints are undefined (singular or indefinite Lyapunov blocks) are
    skipped, not counted as failures.
    """
    rng = np.random.default_rng(seed)
    target = cov.target_problem
    failures = 0
    checked = 0
    for _ in range(nsamples):
        x = _random_source_point(problem, rng)
        phis = [eval_constraint(e, x) for e in problem.constraints]
        bounds = []
        for phi in phis:
            g = rng.standard_normal((phi.dim, phi.dim))
            slack = rng.uniform(0.0, 2.0) * (g @ g.T) / phi.dim
            bounds.append(SymMat(phi.data + slack))
        t = problem.objective_value(x) + rng.uniform(0.0, 2.0)
        try:
            v = forward(cov, x)
            target_phis = [eval_constraint(e, v) for e in target.constraints]
            f_target = target.objective_value(v)
        except (SingularP, DomainViolation, NotPositiveDefinite):
            continue
        checked += 1
        ok = True
        for tphi, bound in zip(target_phis, bounds):
            tol = EPIGRAPH_TOL * max(1.0, float(np.max(np.abs(bound.data))),
                                     float(np.max(np.abs(tphi.data))))
            if max_eig(SymMat(tphi.data - bound.data)) > tol:
                ok = False
        if f_target > t + EPIGRAPH_TOL * max(1.0, abs(t)):
            ok = False
        if not ok:
            failures += 1
    passed = failures == 0 and checked > 0
    return InclusionReport(passed, nsamples, checked, seed, failures)


def corrupt_forward(cov: ChangeOfVariables, offset: float = 1.0) -> ChangeOfVariables:
    """Negative-control copy whose forward map is shifted on the first paper
    variable; a correct harness must catch it."""
    first = cov.paper_vars[0]
    base = cov.forward_fn

    def bad_forward(assignment):
        out = dict(base(assignment))
        out[first] = out[first] + offset
        return out

    return replace(cov, forward_fn=bad_forward)


# ---------------------------------------------------------------------------
# map families


def example1_map() -> ChangeOfVariables:
    """Scalar benchmark: minimize x^2 subject to 1 - x^2 <= 0."""
    x = Polynomial.var("x")
    source = BmiProblem(
        [VariableBlock("x", "scalar", box=(-3.0, 3.0))],
        objective=x ** 2,
        constraints=[BilinearMatrixExpr.from_polynomial(1.0 - x ** 2)],
        name="example1",
    )
    v = Polynomial.var("v")
    target = BmiProblem(
        [VariableBlock("v", "scalar", box=(-12.0, -1.0))],
        objective=-1.0 * v,
        constraints=[BilinearMatrixExpr.from_polynomial(v + 1.0)],
        name="example1-convex",
    )
    builder = SdpBuilder().add_scalar("v")
    builder.add_block([[1.0]], {"v": lambda s: [[s]]})
    builder.minimize({"v": -1.0})
    target_sdp = builder.build()
    feas = SdpBuilder().add_scalar("v")
    feas.add_block([[1.0]], {"v": lambda s: [[s]]})
    feasibility = feas.build()

    def fwd(assignment):
        xval = float(assignment["x"])
        return {"v": -xval * xval}

    def rec(assignment):
        vval = float(assignment["v"])
        if vval > -1.0 + DOMAIN_GATE:
            raise DomainViolation(f"v = {vval} outside the image of the feasible set")
        return {"x": float(np.sqrt(-vval))}

    return ChangeOfVariables(MapKind.NEG_SQUARE, source, target, target_sdp,
                             feasibility, ("v",), fwd, rec,
                             constraint_block_map=(0,))


def example2_map() -> ChangeOfVariables:
    """Two-variable benchmark: minimize x1^2 + x1 x2^2 subject to
    1 - x1 x2^2 <= 0 and 1 - x1 <= 0."""
    x1, x2 = Polynomial.var("x1"), Polynomial.var("x2")
    source = BmiProblem(
        [VariableBlock("x1", "scalar", box=(0.5, 3.0)),
         VariableBlock("x2", "scalar", box=(0.5, 3.0))],
        objective=x1 ** 2 + x1 * x2 ** 2,
        constraints=[BilinearMatrixExpr.from_polynomial(1.0 - x1 * x2 ** 2),
                     BilinearMatrixExpr.from_polynomial(1.0 - x1)],
        name="example2",
    )
    v1, v2 = Polynomial.var("v1"), Polynomial.var("v2")
    target = BmiProblem(
        [VariableBlock("v1", "scalar", box=(1.0, 12.0)),
         VariableBlock("v2", "scalar", box=(1.0, 12.0))],
        objective=v1 ** 2 + v2,
        constraints=[BilinearMatrixExpr.from_polynomial(1.0 - v2),
                     BilinearMatrixExpr.from_polynomial(1.0 - v1)],
        name="example2-convex",
    )
    # quadratic objective enters the SDP through an epigraph variable s with
    # v1^2 + v2 <= s written as the 2x2 block [[v2 - s, -v1], [-v1, -1]] <= 0
    builder = SdpBuilder().add_scalar("v1").add_scalar("v2").add_scalar("s")
    builder.add_block([[1.0]], {"v2": lambda w: [[-w]]})
    builder.add_block([[1.0]], {"v1": lambda w: [[-w]]})
    builder.add_block([[0.0, 0.0], [0.0, -1.0]],
                      {"v1": lambda w: [[0.0, -w], [-w, 0.0]],
                       "v2": lambda w: [[w, 0.0], [0.0, 0.0]],
                       "s": lambda w: [[-w, 0.0], [0.0, 0.0]]})
    builder.minimize({"s": 1.0})
    target_sdp = builder.build()
    feas = SdpBuilder().add_scalar("v1").add_scalar("v2")
    feas.add_block([[1.0]], {"v2": lambda w: [[-w]]})
    feas.add_block([[1.0]], {"v1": lambda w: [[-w]]})
    feasibility = feas.build()

    def fwd(assignment):
        a, b = float(assignment["x1"]), float(assignment["x2"])
        return {"v1": a, "v2": a * b * b}

    def rec(assignment):
        w1, w2 = float(assignment["v1"]), float(assignment["v2"])
        if w1 < 1.0 - DOMAIN_GATE:
            raise DomainViolation(f"v1 = {w1} below the image of the feasible set")
        if w2 < 0.0:
            raise DomainViolation(f"v2 = {w2} has no real preimage")
        return {"x1": w1, "x2": float(np.sqrt(w2 / w1))}

    return ChangeOfVariables(MapKind.PRODUCT_LIFT, source, target, target_sdp,
                             feasibility, ("v1", "v2"), fwd, rec,
                             constraint_block_map=(0, 1))


def _gain_forward(assignment):
    p = np.asarray(assignment["P"], dtype=float)
    f = np.asarray(assignment["F"], dtype=float)
    eigs = sym_eig(SymMat(p)).eigenvalues
    if np.min(np.abs(eigs)) <= SINGULAR_P_GATE:
        raise SingularP("P is numerically singular")
    return {"P": 0.5 * (p + p.T), "M": f @ p}


def _gain_recover(assignment):
    p = np.asarray(assignment["P"], dtype=float)
    m = np.asarray(assignment["M"], dtype=float)
    try:
        ell = chol_factor(0.5 * (p + p.T))
    except NotPositiveDefinite as exc:
        raise SingularP("P must be positive definite to recover the gain") from exc
    f = chol_solve(ell, m.T).T
    return {"P": 0.5 * (p + p.T), "F": f}


def _control_source(a, b, epsilon, kind):
    n, m = a.shape[0], b.shape[1]
    box = (-TRACE_CAP_PER_DIM, TRACE_CAP_PER_DIM)
    blocks = [VariableBlock("P", "symmetric", (n, n), box=box),
              VariableBlock("F", "matrix", (m, n), box=box)]
    if kind is MapKind.GAIN_PRODUCT_CT:
        lyap = BilinearMatrixExpr(
            n, constant=epsilon * np.eye(n),
            bilinear=[(("P", "F"),
                       lambda p, f: (a + b @ f) @ p + p @ (a + b @ f).T)])
    else:
        lyap = BilinearMatrixExpr(
            n, constant=epsilon * np.eye(n),
            linear=[("P", lambda p: -p)],
            bilinear=[(("P", "F"),
                       lambda p, f: (a + b @ f) @ p @ (a + b @ f).T)])
    positivity = BilinearMatrixExpr(n, constant=epsilon * np.eye(n),
                                    linear=[("P", lambda p: -p)])
    return BmiProblem(blocks, Polynomial.constant(0.0), [lyap, positivity],
                      name=f"stabilization-{kind.value}")


def _dt_fractional(a, b, epsilon):
    def quad(p, m):
        c = a @ p + b @ m
        ell = chol_factor(0.5 * (p + p.T))
        return c @ chol_solve(ell, c.T)
    return BilinearMatrixExpr(
        a.shape[0], constant=epsilon * np.eye(a.shape[0]),
        linear=[("P", lambda p: -p)],
        bilinear=[(("P", "M"), quad)])


def _control_target_problem(a, b, epsilon, kind):
    n, m = a.shape[0], b.shape[1]
    box = (-TRACE_CAP_PER_DIM, TRACE_CAP_PER_DIM)
    blocks = [VariableBlock("P", "symmetric", (n, n), box=box),
              VariableBlock("M", "matrix", (m, n), box=box)]
    if kind is MapKind.GAIN_PRODUCT_CT:
        lyap = BilinearMatrixExpr(
            n, constant=epsilon * np.eye(n),
            linear=[("P", lambda p: a @ p + p @ a.T),
                    ("M", lambda mm: b @ mm + (b @ mm).T)])
    else:
        lyap = _dt_fractional(a, b, epsilon)
    positivity = BilinearMatrixExpr(n, constant=epsilon * np.eye(n),
                                    linear=[("P", lambda p: -p)])
    return BmiProblem(blocks, Polynomial.constant(0.0), [lyap, positivity],
                      name=f"stabilization-{kind.value}-convex")


def _control_sdps(a, b, epsilon, kind):
    """Feasibility SDP over (P, M) and its margin form over (P, M, t).

    Tr(P) and sigma_max(M) normalization blocks bound the homogeneous cone;
    without them both the margin optimum and every barrier center run away.
    Neither is shifted by the margin variable, so the reported margin comes
    from the stability blocks alone."""
    n, m = a.shape[0], b.shape[1]

    def feasibility_terms(builder):
        if kind is MapKind.GAIN_PRODUCT_CT:
            builder.add_block(epsilon * np.eye(n),
                              {"P": lambda e: a @ e + e @ a.T,
                               "M": lambda e: b @ e + (b @ e).T})
        else:
            zero = np.zeros((n, n))
            const = np.block([[epsilon * np.eye(n), zero], [zero, zero]])
            builder.add_block(const,
                              {"P": lambda e: np.block([[-e, a @ e],
                                                        [(a @ e).T, -e]]),
                               "M": lambda e: np.block([[zero, b @ e],
                                                        [(b @ e).T, zero]])})
        builder.add_block(epsilon * np.eye(n), {"P": lambda e: -e})
        builder.add_block([[-n * TRACE_CAP_PER_DIM]],
                          {"P": lambda e: [[np.trace(e)]]})
        zmm = np.zeros((m, m))
        znn = np.zeros((n, n))
        builder.add_block(-GAIN_CAP * np.eye(m + n),
                          {"M": lambda e: np.block([[zmm, -e], [-e.T, znn]])})

    feas = SdpBuilder().add_symmetric("P", n).add_matrix("M", m, n)
    feasibility_terms(feas)
    feasibility = feas.build()

    margin = SdpBuilder().add_symmetric("P", n).add_matrix("M", m, n).add_scalar("t")
    feasibility_terms(margin)
    margin.minimize({"t": 1.0})
    built = margin.build()
    t_index = built.layout.coord_range("t").start
    shifted = [blk.shifted_by_margin(t_index) for blk in built.blocks[:2]]
    shifted.extend(built.blocks[2:])  # normalization blocks stay unshifted
    target_sdp = SdpProblem(built.layout, built.c, shifted)
    return feasibility, target_sdp


def gain_map_ct(a, b, epsilon: float) -> ChangeOfVariables:
    """Continuous-time synthesis map: the closed-loop Lyapunov inequality in
    (P, F) becomes linear in (P, M) with M = F P."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    source = _control_source(a, b, epsilon, MapKind.GAIN_PRODUCT_CT)
    target = _control_target_problem(a, b, epsilon, MapKind.GAIN_PRODUCT_CT)
    feasibility, target_sdp = _control_sdps(a, b, epsilon, MapKind.GAIN_PRODUCT_CT)
    return ChangeOfVariables(MapKind.GAIN_PRODUCT_CT, source, target, target_sdp,
                             feasibility, ("P", "M"), _gain_forward, _gain_recover,
                             margin_var="t", constraint_block_map=(0, 1))


def gain_map_dt(a, b, epsilon: float) -> ChangeOfVariables:
    """Discrete-time synthesis map: the quadratic stability form in (P, M)
    is solved through its block-matrix lift; the fractional form
    (AP + BM) P^{-1} (AP + BM)^T - P + eps I is kept for cross-checks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    source = _control_source(a, b, epsilon, MapKind.GAIN_PRODUCT_DT)
    target = _control_target_problem(a, b, epsilon, MapKind.GAIN_PRODUCT_DT)
    feasibility, target_sdp = _control_sdps(a, b, epsilon, MapKind.GAIN_PRODUCT_DT)
    return ChangeOfVariables(MapKind.GAIN_PRODUCT_DT, source, target, target_sdp,
                             feasibility, ("P", "M"), _gain_forward, _gain_recover,
                             margin_var="t", constraint_block_map=(None, 1))
