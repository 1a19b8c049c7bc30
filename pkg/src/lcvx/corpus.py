"""Instance file format, built-in instances, and canonical serialization.

File schema (canonical form: sorted keys, compact separators, floats at 17
significant digits, trailing newline):

    {
      "data": {
        "A": [[..]], "B": [[..]], "C": [[..]],      # per kind
        "boxes": {"primal": {var: [lo, hi]}, "dual": {var: [lo, hi]}},
        "epsilon": 0.001,
        "family": "neg_square" | "product_lift",    # scalar_bmi only
        "polynomials": {"objective": POLY, "constraints": [POLY, ..]}
      },
      "expected": {"p_star": .., "d_star": .., "provenance": ".."},   # optional
      "kind": "scalar_bmi" | "ct_stabilization" | "dt_stabilization"
              | "static_output_feedback",
      "name": "..",                                                   # optional
      "schema_version": "1"
    }

    POLY = [{"coeff": c, "vars": [[variable, power], ..]}, ..]

Scalar instances must carry polynomials structurally identical to their
declared family; this keeps the paired convexification maps valid. NaN and
infinite numbers are rejected on both read and write.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .bmi import BilinearMatrixExpr, BmiProblem, Polynomial
from .blocks import VariableBlock
from .control import Clock, LtiSystem, default_epsilon
from .convexify import ChangeOfVariables, example1_map, example2_map, gain_map_ct, gain_map_dt

SCHEMA_VERSION = "1"
KINDS = ("scalar_bmi", "ct_stabilization", "dt_stabilization", "static_output_feedback")
FAMILIES = ("neg_square", "product_lift")


class ParseError(ValueError):
    """Input is not valid JSON; the message names the offending offset."""


class SchemaMismatch(ValueError):
    """JSON parsed but does not satisfy the instance schema."""


class NoConvexificationAvailable(ValueError):
    """The instance kind has no paired change of variables."""


def _fmt_number(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return repr(x)
    x = float(x)
    if not math.isfinite(x):
        raise SchemaMismatch("non-finite numbers are not representable")
    return format(x, ".17g")


def canonical_dumps(obj) -> str:
    """Canonical JSON text: sorted keys, compact, 17-significant-digit floats."""
    def render(o):
        if o is None:
            return "null"
        if isinstance(o, bool):
            return "true" if o else "false"
        if isinstance(o, (int, float, np.floating, np.integer)):
            return _fmt_number(o if not isinstance(o, (np.floating, np.integer)) else o.item())
        if isinstance(o, str):
            return json.dumps(o, ensure_ascii=False)
        if isinstance(o, (list, tuple)):
            return "[" + ",".join(render(v) for v in o) + "]"
        if isinstance(o, np.ndarray):
            return render(o.tolist())
        if isinstance(o, dict):
            items = sorted(o.items())
            if any(not isinstance(k, str) for k, _ in items):
                raise SchemaMismatch("object keys must be strings")
            return "{" + ",".join(json.dumps(k) + ":" + render(v) for k, v in items) + "}"
        raise SchemaMismatch(f"unserializable value of type {type(o).__name__}")
    return render(obj) + "\n"


def _reject_constant(token):
    raise SchemaMismatch(f"non-finite number token {token!r} rejected")


def _check_finite(obj, path="$"):
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise SchemaMismatch(f"non-finite number at {path}")
        return
    if isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")
        return
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
        return
    raise SchemaMismatch(f"unexpected value type at {path}")


def _matrix(data, key, rows=None, cols=None):
    if key not in data:
        raise SchemaMismatch(f"missing matrix {key!r}")
    arr = np.asarray(data[key], dtype=float)
    if arr.ndim != 2:
        raise SchemaMismatch(f"matrix {key!r} must be two-dimensional")
    if rows is not None and arr.shape[0] != rows:
        raise SchemaMismatch(f"matrix {key!r} must have {rows} rows")
    if cols is not None and arr.shape[1] != cols:
        raise SchemaMismatch(f"matrix {key!r} must have {cols} columns")
    if not np.all(np.isfinite(arr)):
        raise SchemaMismatch(f"matrix {key!r} has non-finite entries")
    return arr


def poly_to_json(poly: Polynomial) -> list:
    out = []
    for key, coeff in sorted(poly.monomials.items()):
        refs = []
        for (block, index), power in key:
            if index != 0:
                raise SchemaMismatch("only scalar variables serialize to files")
            refs.append([block, int(power)])
        out.append({"coeff": float(coeff), "vars": refs})
    return out


def poly_from_json(items) -> Polynomial:
    if not isinstance(items, list):
        raise SchemaMismatch("polynomial must be a list of monomials")
    total = Polynomial.constant(0.0)
    for mono in items:
        if not isinstance(mono, dict) or "coeff" not in mono:
            raise SchemaMismatch("monomial needs a coefficient")
        term = Polynomial.constant(float(mono["coeff"]))
        for ref in mono.get("vars", []):
            name, power = str(ref[0]), int(ref[1])
            term = term * Polynomial.var(name) ** power
        total = total + term
    return total


@dataclass(frozen=True)
class InstanceFile:
    kind: str
    data: dict
    name: str | None = None
    expected: dict | None = None
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaMismatch(f"unknown kind {self.kind!r}")
        if not isinstance(self.data, dict):
            raise SchemaMismatch("data must be an object")
        _check_finite(self.data, "$.data")
        if self.expected is not None:
            if not isinstance(self.expected, dict):
                raise SchemaMismatch("expected must be an object")
            extra = set(self.expected) - {"p_star", "d_star", "provenance"}
            if extra:
                raise SchemaMismatch(f"unknown expected fields {sorted(extra)}")
            _check_finite(self.expected, "$.expected")
        self._validate_kind()

    def _validate_kind(self):
        data = self.data
        if self.kind == "scalar_bmi":
            if data.get("family") not in FAMILIES:
                raise SchemaMismatch("scalar_bmi needs a family in "
                                     f"{FAMILIES}")
            polys = data.get("polynomials")
            if not isinstance(polys, dict) or "objective" not in polys \
                    or "constraints" not in polys:
                raise SchemaMismatch("scalar_bmi needs polynomials "
                                     "{objective, constraints}")
            return
        n = _matrix(data, "A").shape[0]
        _matrix(data, "A", rows=n, cols=n)
        _matrix(data, "B", rows=n)
        if self.kind == "static_output_feedback":
            _matrix(data, "C", cols=n)
        if "epsilon" in data and not float(data["epsilon"]) > 0:
            raise SchemaMismatch("epsilon must be positive")

    def to_dict(self) -> dict:
        out = {"schema_version": self.schema_version, "kind": self.kind,
               "data": self.data}
        if self.name is not None:
            out["name"] = self.name
        if self.expected is not None:
            out["expected"] = self.expected
        return out

    @classmethod
    def from_dict(cls, obj) -> "InstanceFile":
        if not isinstance(obj, dict):
            raise SchemaMismatch("top level must be an object")
        extra = set(obj) - {"schema_version", "kind", "data", "name", "expected"}
        if extra:
            raise SchemaMismatch(f"unknown top-level fields {sorted(extra)}")
        for required in ("schema_version", "kind", "data"):
            if required not in obj:
                raise SchemaMismatch(f"missing top-level field {required!r}")
        if obj["schema_version"] != SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported schema_version {obj['schema_version']!r}")
        return cls(kind=obj["kind"], data=obj["data"], name=obj.get("name"),
                   expected=obj.get("expected"))


def dumps(instance: InstanceFile) -> str:
    return canonical_dumps(instance.to_dict())


def loads(text: str) -> InstanceFile:
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return InstanceFile.from_dict(obj)


def save(instance: InstanceFile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(instance))


def load(path) -> InstanceFile:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def _scalar_polys(cov: ChangeOfVariables) -> dict:
    return {"objective": poly_to_json(cov.source.objective),
            "constraints": [poly_to_json(e.poly) for e in cov.source.constraints]}


def builtins() -> list:
    """The built-in instance set; at least the two scalar benchmarks, one
    synthesis instance per clock, and an output-feedback demo."""
    ex1 = example1_map()
    ex2 = example2_map()
    out = [
        InstanceFile(
            kind="scalar_bmi", name="example1",
            data={"family": "neg_square",
                  "polynomials": _scalar_polys(ex1),
                  "boxes": {"primal": {"x": [-3.0, 3.0]},
                            "dual": {"x": [-10.0, 10.0]}}},
            expected={"p_star": 1.0, "d_star": 1.0,
                      "provenance": "analytic: constrained optimum at x = 1; "
                                    "dual supremum of the closed-form dual at "
                                    "multiplier 1"}),
        InstanceFile(
            kind="scalar_bmi", name="example2",
            data={"family": "product_lift",
                  "polynomials": _scalar_polys(ex2),
                  "boxes": {"primal": {"x1": [0.5, 3.0], "x2": [0.5, 3.0]},
                            "dual": {"x1": [-10.0, 10.0], "x2": [-10.0, 10.0]}}},
            expected={"p_star": 2.0, "d_star": 2.0,
                      "provenance": "analytic: optimum at (1, 1); dual supremum "
                                    "at multipliers (1, 2)"}),
        InstanceFile(
            kind="ct_stabilization", name="ct_double_integrator",
            data={"A": [[0.0, 1.0], [0.0, 0.0]], "B": [[0.0], [1.0]],
                  "epsilon": 1e-3}),
        InstanceFile(
            kind="dt_stabilization", name="dt_unstable_scalar",
            data={"A": [[1.2]], "B": [[1.0]], "epsilon": 1e-3}),
        InstanceFile(
            kind="static_output_feedback", name="sof_demo",
            data=_sof_demo_data()),
    ]
    return out


def _sof_demo_data() -> dict:
    rng = np.random.default_rng(12345)
    a = np.round(rng.standard_normal((3, 3)), 4)
    b = np.round(rng.standard_normal((3, 1)), 4)
    c = np.round(rng.standard_normal((2, 3)), 4)
    return {"A": a.tolist(), "B": b.tolist(), "C": c.tolist(), "epsilon": 1e-3}


def builtin(name: str) -> InstanceFile:
    for inst in builtins():
        if inst.name == name:
            return inst
    raise KeyError(f"unknown builtin instance {name!r}")


def _instance_epsilon(instance: InstanceFile) -> float:
    if "epsilon" in instance.data:
        return float(instance.data["epsilon"])
    return default_epsilon(np.asarray(instance.data["A"], dtype=float))


def to_change_of_variables(instance: InstanceFile) -> ChangeOfVariables:
    """Build the paired convexification for an instance; scalar instances are
    validated against their family's canonical polynomials."""
    if instance.kind == "scalar_bmi":
        cov = example1_map() if instance.data["family"] == "neg_square" \
            else example2_map()
        polys = instance.data["polynomials"]
        objective = poly_from_json(polys["objective"])
        constraints = [poly_from_json(p) for p in polys["constraints"]]
        if objective != cov.source.objective or \
                constraints != [e.poly for e in cov.source.constraints]:
            raise SchemaMismatch("polynomials do not match the declared family")
        return cov
    if instance.kind == "ct_stabilization":
        return gain_map_ct(instance.data["A"], instance.data["B"],
                           _instance_epsilon(instance))
    if instance.kind == "dt_stabilization":
        return gain_map_dt(instance.data["A"], instance.data["B"],
                           _instance_epsilon(instance))
    raise NoConvexificationAvailable(
        f"no lossless convexification available for kind {instance.kind}")


def to_system(instance: InstanceFile) -> LtiSystem:
    if instance.kind == "ct_stabilization":
        clock = Clock.CONTINUOUS
    elif instance.kind == "dt_stabilization":
        clock = Clock.DISCRETE
    else:
        raise ValueError(f"kind {instance.kind} is not a state-feedback instance")
    return LtiSystem(np.asarray(instance.data["A"], dtype=float),
                     np.asarray(instance.data["B"], dtype=float), clock)


def _sof_bmi(a, b, c, epsilon) -> BmiProblem:
    n, m, p = a.shape[0], b.shape[1], c.shape[0]
    box = (-1e3, 1e3)
    lyap = BilinearMatrixExpr(
        n, constant=epsilon * np.eye(n),
        bilinear=[(("P", "F"),
                   lambda pp, ff: (a + b @ ff @ c) @ pp + pp @ (a + b @ ff @ c).T)])
    positivity = BilinearMatrixExpr(n, constant=epsilon * np.eye(n),
                                    linear=[("P", lambda pp: -pp)])
    return BmiProblem(
        [VariableBlock("P", "symmetric", (n, n), box=box),
         VariableBlock("F", "matrix", (m, p), box=box)],
        Polynomial.constant(0.0), [lyap, positivity], name="static-output-feedback")


def to_bmi(instance: InstanceFile) -> BmiProblem:
    """The instance as a plain program; boxes from the file's primal section
    replace the factory defaults when present."""
    if instance.kind == "static_output_feedback":
        a = np.asarray(instance.data["A"], dtype=float)
        b = np.asarray(instance.data["B"], dtype=float)
        c = np.asarray(instance.data["C"], dtype=float)
        return _sof_bmi(a, b, c, _instance_epsilon(instance))
    problem = to_change_of_variables(instance).source
    boxes = instance.data.get("boxes", {}).get("primal")
    if not boxes:
        return problem
    blocks = []
    for blk in problem.layout:
        if blk.name in boxes:
            lo, hi = boxes[blk.name]
            blocks.append(VariableBlock(blk.name, blk.kind, blk.shape, (lo, hi)))
        else:
            blocks.append(blk)
    return BmiProblem(blocks, problem.objective, problem.constraints,
                      name=problem.name)
