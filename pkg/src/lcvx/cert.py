"""End-to-end strong-duality certificates.

A certificate assembles, for one program and its convexification map: the
strict-feasibility (Slater) margin of the convex target, the convex primal
and dual optimal values and their gap, the recovered original-variable
solution with its constraint residuals, and sampled surjectivity plus
epigraph-inclusion evidence.

Verdict semantics:

- STRONG_DUALITY_VERIFIED: margin > 0, surjectivity evidence passed, the gap
  is within tolerance, and the recovered point satisfies the original
  constraints. This is the numerical realization of the hypothesis checks
  whose conclusion is a zero duality gap.
- WEAK_ONLY: the gap closed numerically but the hypothesis evidence is
  incomplete, so only the order d* <= p* is asserted.
- INCONCLUSIVE: a pipeline stage failed or the gap did not close; a large gap
  is never reported as "strong duality fails" since it may stem from
  numerics.

The reported dual value is the convexified problem's SDP dual value; under
verified hypotheses it coincides with the original dual optimum, and the
grid oracles provide the independent cross-check of that reasoning chain.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .bmi import BmiProblem, Multipliers, dual_oracle, eval_constraint, primal_oracle
from .convexify import (ChangeOfVariables, InclusionReport, SurjectionReport,
                        inclusion_spotcheck, recover, surjection_spotcheck)
from .sdp import SolveStatus, solve, strict_feasibility
from .symmat import max_eig

DEFAULT_TOL_GAP = 1e-6
DEFAULT_TOL_FEAS = 1e-7
DEFAULT_NSAMPLES = 100


class Verdict(enum.Enum):
    STRONG_DUALITY_VERIFIED = "strong_duality_verified"
    WEAK_ONLY = "weak_only"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class DualityCertificate:
    primal_value: float
    dual_value: float
    gap: float
    slater_margin: float
    surjection_report: SurjectionReport | None
    inclusion_report: InclusionReport | None
    recovered_x: dict | None
    original_residuals: tuple
    recovered_multipliers: Multipliers | None
    tol_gap: float
    tol_feas: float
    nsamples: int
    seed: int
    verdict: Verdict
    failure_stage: str | None = None

    def as_dict(self) -> dict:
        def arr(x):
            if x is None:
                return None
            return {k: (float(v) if np.isscalar(v) else np.asarray(v).tolist())
                    for k, v in x.items()}
        return {
            "primal_value": _json_float(self.primal_value),
            "dual_value": _json_float(self.dual_value),
            "gap": _json_float(self.gap),
            "slater_margin": _json_float(self.slater_margin),
            "surjection": self.surjection_report.as_dict() if self.surjection_report else None,
            "inclusion": self.inclusion_report.as_dict() if self.inclusion_report else None,
            "recovered_x": arr(self.recovered_x),
            "original_residuals": [_json_float(r) for r in self.original_residuals],
            "tolerances": {"tol_gap": self.tol_gap, "tol_feas": self.tol_feas},
            "nsamples": self.nsamples,
            "seed": self.seed,
            "verdict": self.verdict.value,
            "failure_stage": self.failure_stage,
        }


def _json_float(x):
    x = float(x)
    return None if not math.isfinite(x) else x


@dataclass(frozen=True)
class CrossCheckReport:
    primal_oracle_value: float
    primal_consistent: bool
    dual_oracle_value: float
    dual_consistent: bool
    slack: float

    @property
    def passed(self) -> bool:
        return self.primal_consistent and self.dual_consistent


def certify(problem: BmiProblem, cov: ChangeOfVariables,
            tol_gap: float = DEFAULT_TOL_GAP, tol_feas: float = DEFAULT_TOL_FEAS,
            nsamples: int = DEFAULT_NSAMPLES, seed: int = 0,
            solution=None) -> DualityCertificate:
    """Run the full pipeline: Slater margin of the convex target, convex
    solve, dual value, original-variable recovery and residuals, spot checks,
    verdict. Stage errors yield an INCONCLUSIVE certificate naming the stage.

    ``solution`` may carry a precomputed solve of ``cov.target_sdp`` (the
    synthesis path reuses its margin solve); determinism is unaffected since
    the solver itself is deterministic.
    """
    if problem is not cov.source:
        raise ValueError("problem must be the source of the change of variables")

    nan = math.nan
    margin = nan
    p_star = d_star = gap = nan
    recovered_x = None
    residual_values: tuple = ()
    multipliers = None
    surjection = None
    inclusion = None

    def inconclusive(stage):
        return DualityCertificate(p_star, d_star, gap, margin, surjection,
                                  inclusion, recovered_x, residual_values,
                                  multipliers, tol_gap, tol_feas, nsamples, seed,
                                  Verdict.INCONCLUSIVE, failure_stage=stage)

    try:
        if cov.margin_var is not None and solution is not None:
            margin = -solution.primal_value
        else:
            _, margin, _ = strict_feasibility(cov.feasibility_sdp)
    except Exception:
        return inconclusive("slater-margin")

    try:
        sol = solution if solution is not None else solve(cov.target_sdp)
        if sol.status is not SolveStatus.OPTIMAL:
            p_star = sol.primal_value
            return inconclusive(f"convex-solve:{sol.status.value}")
    except Exception:
        return inconclusive("convex-solve")
    p_star = sol.primal_value
    d_star = sol.dual_value
    gap = abs(p_star - d_star)

    try:
        full = sol.assignment(cov.target_sdp)
        recovered_x = recover(cov, {k: full[k] for k in cov.paper_vars})
    except Exception:
        return inconclusive("recover")

    try:
        residual_values = tuple(max_eig(eval_constraint(e, recovered_x))
                                for e in problem.constraints)
    except Exception:
        return inconclusive("original-residuals")

    try:
        if all(j is not None for j in cov.constraint_block_map):
            multipliers = Multipliers([sol.Z[j] for j in cov.constraint_block_map])
    except Exception:
        multipliers = None  # informational; does not gate the verdict

    try:
        surjection = surjection_spotcheck(cov, nsamples, seed)
    except Exception:
        return inconclusive("surjection-spotcheck")

    try:
        inclusion = inclusion_spotcheck(problem, cov, nsamples, seed + 1)
    except Exception:
        inclusion = None  # informational; does not gate the verdict

    if d_star > p_star + tol_gap:
        return inconclusive("weak-duality")

    gap_ok = gap <= tol_gap * (1.0 + abs(p_star))
    residuals_ok = all(r <= tol_feas for r in residual_values)
    hypotheses_ok = margin > 0 and surjection.passed and residuals_ok
    if gap_ok and hypotheses_ok:
        verdict = Verdict.STRONG_DUALITY_VERIFIED
    elif gap_ok:
        verdict = Verdict.WEAK_ONLY
    else:
        verdict = Verdict.INCONCLUSIVE
    return DualityCertificate(p_star, d_star, gap, margin, surjection, inclusion,
                              recovered_x, residual_values, multipliers,
                              tol_gap, tol_feas, nsamples, seed, verdict)


def cross_check_with_oracle(certificate: DualityCertificate, problem: BmiProblem,
                            grid_per_dim: int, box=None) -> CrossCheckReport:
    """Independent verification of a certificate against the grid oracles.

    The primal oracle value must match the certified p* within twice the grid
    step (scaled by 1 + |p*|), and the dual oracle at the recovered
    multipliers must stay below p* plus the same slack.
    """
    result = primal_oracle(problem, grid_per_dim, box=box)
    step = 0.0
    for block in problem.layout:
        bounds = (box or {}).get(block.name, block.box)
        step = max(step, (bounds[1] - bounds[0]) / (grid_per_dim - 1))
    slack = 2.0 * step * (1.0 + abs(certificate.primal_value))
    primal_ok = abs(result.value - certificate.primal_value) <= slack

    if len(problem.constraints) == 0:
        dual_val = result.value  # unconstrained: dual equals primal trivially
        dual_ok = True
        return CrossCheckReport(result.value, primal_ok, dual_val, dual_ok, slack)
    if certificate.recovered_multipliers is None:
        raise ValueError("certificate carries no recoverable multipliers")
    dres = dual_oracle(problem, certificate.recovered_multipliers, grid_per_dim, box=box)
    dual_val = dres.as_float()
    dual_ok = dual_val <= certificate.primal_value + slack
    return CrossCheckReport(result.value, primal_ok, dual_val, dual_ok, slack)
