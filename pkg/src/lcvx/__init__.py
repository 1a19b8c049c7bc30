"""Lossless convexification toolkit: represent non-convex matrix-inequality
programs, convexify them through paired variable changes, solve the convex
side with a dense barrier SDP solver, recover original-variable solutions,
and certify strong duality numerically."""

from .blocks import VariableBlock
from .bmi import (BilinearMatrixExpr, BmiProblem, Multipliers, Polynomial,
                  dual_oracle, eval_constraint, lagrangian, primal_oracle,
                  weak_duality_check)
from .cert import DualityCertificate, Verdict, certify, cross_check_with_oracle
from .control import (Clock, LtiSystem, NotStabilizable, StabilizationResult,
                      ct_synthesize, dt_synthesize, eig_general, is_hurwitz,
                      random_stabilizable, spectral_radius)
from .convexify import (ChangeOfVariables, EpigraphPoint, MapKind,
                        epigraph_member_source, example1_map, example2_map,
                        forward, gain_map_ct, gain_map_dt, inclusion_spotcheck,
                        recover, surjection_spotcheck)
from .corpus import InstanceFile, builtin, builtins, load, save
from .sdp import (AffineMatrixExpr, SdpBuilder, SdpProblem, SdpSolution,
                  SolveStatus, residuals, sdp_dual_value, slater_margin, solve)
from .symmat import (EigenDecomp, SymMat, cholesky, is_nsd, is_psd, max_eig,
                     min_eig, schur_complement, sym_eig)

__version__ = "0.1.0"
