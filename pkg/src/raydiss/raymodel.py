"""Mechanical system description and dissipation-potential construction.

A system is (M(q), V(q), D(q, v)): a configuration-dependent mass matrix,
a potential, and a dissipation function that is the sole constitutive input
for nonconservative forces. The dissipation potential R is built from D:

* homogeneous_sum mode: D = sum of terms, each velocity-homogeneous of a
  declared degree n > 0; then R = sum(term / n) exactly.
* general mode: R(q, v) = integral over u in (0, 1] of D(q, u*v)/u du,
  computed by composite Gauss-Legendre quadrature with panel-doubling
  refinement. The arbitrary additive constant is fixed by R(q, 0) = 0.

Structural checks (homogeneity, Euler identity v.dR/dv = D, positivity)
are seeded and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import exprcore as xc
from .exprcore import EvalContext, ExprNode


class ModelError(Exception):
    """System or dissipation spec violates a structural hypothesis."""


class QuadratureError(ModelError):
    """Panel-doubling refinement of the R integral failed to converge."""


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class QuadratureConfig:
    node_count: int = 64
    panels: int = 4
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.node_count < 8:
            raise ValueError("node_count must be >= 8")
        if self.panels < 1:
            raise ValueError("panels must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class DissipationTerm:
    """One velocity-homogeneous contribution to D, with declared degree."""

    expr: ExprNode
    degree: float
    smooth_eps: float | None = None  # optional tanh regularization of sign/abs kinks

    def __post_init__(self):
        if self.degree <= 0:
            raise ModelError(
                f"dissipation term degree must be > 0, got {self.degree}; "
                "a degree-0 or rest-nonvanishing part makes the "
                "dissipation-potential integral diverge")


@dataclass(frozen=True)
class DissipationSpec:
    mode: str  # 'homogeneous_sum' | 'general'
    terms: tuple = ()
    raw: ExprNode | None = None
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if self.mode not in ("homogeneous_sum", "general"):
            raise ModelError(f"unknown dissipation mode '{self.mode}'")
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.mode == "homogeneous_sum" and self.raw is not None:
            raise ModelError("homogeneous_sum mode must not set 'raw'")
        if self.mode == "general":
            if self.raw is None:
                raise ModelError("general mode requires 'raw'")
            if self.terms:
                raise ModelError("general mode must not set 'terms'")

    @property
    def is_null(self):
        return self.mode == "homogeneous_sum" and not self.terms

    def uses_abs_or_sign(self):
        if self.mode == "general":
            return xc.uses_abs_or_sign(self.raw)
        return any(xc.uses_abs_or_sign(t.expr) for t in self.terms)


def null_dissipation():
    return DissipationSpec(mode="homogeneous_sum", terms=())


@dataclass(frozen=True)
class SystemSpec:
    """Complete mechanical system: T via M(q), potential V(q), dissipation D."""

    dof: int
    mass_matrix: tuple  # dof x dof nested tuple of ExprNode, q-only
    potential: ExprNode
    dissipation: DissipationSpec
    params: dict = field(default_factory=dict)
    labels: tuple | None = None

    def __post_init__(self):
        m = self.dof
        if m < 1:
            raise ModelError("dof must be >= 1")
        mm = tuple(tuple(row) for row in self.mass_matrix)
        object.__setattr__(self, "mass_matrix", mm)
        if len(mm) != m or any(len(row) != m for row in mm):
            raise ModelError(f"mass_matrix must be {m}x{m}")
        for row in mm:
            for e in row:
                xc.bind_check(e, m, self.params)
                if xc.uses_velocity(e):
                    raise ModelError(
                        "mass_matrix entries must not reference velocities")
        xc.bind_check(self.potential, m, self.params)
        if xc.uses_velocity(self.potential):
            raise ModelError("potential must not reference velocities")
        d = self.dissipation
        exprs = [d.raw] if d.mode == "general" else [t.expr for t in d.terms]
        for e in exprs:
            xc.bind_check(e, m, self.params)

    def ctx(self, q, v):
        return EvalContext(tuple(q), tuple(v), self.params)

    def mass(self, q):
        """Evaluate M(q); checks symmetry to 1e-12."""
        ctx = self.ctx(q, np.zeros(self.dof))
        M = np.array([[xc.evaluate(e, ctx) for e in row]
                      for row in self.mass_matrix])
        if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(M).max())):
            raise ModelError(f"mass matrix not symmetric at q={list(q)}")
        return M

    def mass_grad(self, q):
        """dM/dq_j for all j: array of shape (dof, dof, dof), [j, a, b]."""
        m = self.dof
        ctx = self.ctx(q, np.zeros(m))
        out = np.zeros((m, m, m))
        for a in range(m):
            for b in range(m):
                out[:, a, b] = xc.grad_q(self.mass_matrix[a][b], ctx)
        return out


# ---------------------------------------------------------------------------
# Check reports


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    max_violation: float
    samples: int
    detail: str = ""
    witness: tuple | None = None  # (q, v) of the worst sample

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "max_violation": float(self.max_violation),
            "samples": self.samples,
            "detail": self.detail,
            "witness": None if self.witness is None else
                       [list(self.witness[0]), list(self.witness[1])],
        }


def sample_states(dof, samples, seed, v_norm_range=(0.1, 10.0)):
    """Seeded reproducible state sampler: q uniform in [-2,2]^m, speed
    log-uniform in v_norm_range, uniform direction."""
    rng = np.random.default_rng(seed)
    lo, hi = np.log(v_norm_range[0]), np.log(v_norm_range[1])
    out = []
    for _ in range(samples):
        q = rng.uniform(-2.0, 2.0, dof)
        d = rng.normal(size=dof)
        n = np.linalg.norm(d)
        if n == 0.0:
            d[0] = 1.0
            n = 1.0
        speed = np.exp(rng.uniform(lo, hi))
        out.append((q, speed * d / n))
    return out


# ---------------------------------------------------------------------------
# D and R evaluation


def eval_D(spec: DissipationSpec, ctx: EvalContext) -> float:
    if spec.mode == "general":
        return xc.evaluate(spec.raw, ctx)
    return sum(xc.evaluate(t.expr, ctx) for t in spec.terms)


def eval_R_closed(spec: DissipationSpec, ctx: EvalContext) -> float:
    """R = sum over terms of term/degree (exact for homogeneous terms)."""
    if spec.mode != "homogeneous_sum":
        raise ModelError("eval_R_closed requires homogeneous_sum mode")
    return sum(xc.evaluate(t.expr, ctx) / t.degree for t in spec.terms)


def _gl_rule(node_count):
    return np.polynomial.legendre.leggauss(node_count)


def _quad_once(spec, ctx, panels, with_grad):
    """Composite Gauss-Legendre estimate of integral over (0,1] of
    D(q, u*v)/u du, optionally with its velocity gradient.

    d/dv_j of D(q, u*v) is u * (dD/dv_j)(q, u*v); the 1/u weight cancels
    the chain factor, so the gradient integrand is just dD/dv at u*v.
    """
    m = ctx.dof
    nodes, weights = _gl_rule(spec.quadrature.node_count)
    if with_grad:
        fn = xc.compiled(spec.raw, m, "v", None)
    else:
        fn = xc.compiled(spec.raw)
    acc_val = 0.0
    acc_g = np.zeros(m)
    v = np.asarray(ctx.v, dtype=float)
    edges = np.linspace(0.0, 1.0, panels + 1)
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        for x, w in zip(nodes, weights):
            u = mid + half * x
            vs = tuple(u * v)
            if with_grad:
                val, g = fn(ctx.q, vs, ctx.params)
                acc_g += (w * half) * np.array(g)
            else:
                val = fn(ctx.q, vs, ctx.params)
            acc_val += (w * half / u) * val
    return acc_val, acc_g


def _refined_quadrature(spec, ctx, with_grad=False):
    qc = spec.quadrature
    prev = _quad_once(spec, ctx, qc.panels, with_grad)
    panels = qc.panels
    warning = None
    for attempt in range(2):
        panels *= 2
        cur = _quad_once(spec, ctx, panels, with_grad)
        change = abs(cur[0] - prev[0])
        if change <= qc.tolerance * (1.0 + abs(cur[0])):
            if attempt > 0:
                warning = (f"quadrature needed {panels} panels "
                           f"(configured {qc.panels}) to converge")
            return cur, warning
        prev = cur
    raise QuadratureError(
        f"R quadrature did not converge after doubling panels twice "
        f"(last change {change:.3e} > tolerance {qc.tolerance:.3e}); "
        f"check that D(q, 0) = 0 and D has velocity degree > 0")


def eval_R_quadrature(spec: DissipationSpec, ctx: EvalContext):
    """General-mode R via the u-integral; returns (value, warning|None)."""
    if spec.mode != "general":
        raise ModelError("eval_R_quadrature requires general mode")
    (val, _), warning = _refined_quadrature(spec, ctx)
    return float(val), warning


def eval_R(spec: DissipationSpec, ctx: EvalContext) -> float:
    if spec.mode == "homogeneous_sum":
        return eval_R_closed(spec, ctx)
    return eval_R_quadrature(spec, ctx)[0]


def grad_R_v(spec: DissipationSpec, ctx: EvalContext) -> np.ndarray:
    """dR/dv, the (negated) dissipative generalized force."""
    m = ctx.dof
    if spec.mode == "homogeneous_sum":
        out = np.zeros(m)
        for t in spec.terms:
            out += xc.grad_v(t.expr, ctx, smooth_eps=t.smooth_eps) / t.degree
        return out
    (_, g), _ = _refined_quadrature(spec, ctx, with_grad=True)
    return g


# ---------------------------------------------------------------------------
# Structural checks


def homogeneity_check(term: DissipationTerm, dof: int, params: dict,
                      samples: int = 50, seed: int = 0) -> CheckReport:
    """Verify expr(q, lam*v) = lam^n * expr(q, v) on sampled states."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    worst = 0.0
    witness = None
    for q, v in sample_states(dof, samples, seed):
        base = xc.evaluate(term.expr, EvalContext(q, v, params))
        for lam in (0.5, 2.0, 3.0):
            scaled = xc.evaluate(term.expr, EvalContext(q, lam * v, params))
            expected = lam ** term.degree * base
            rel = abs(scaled - expected) / (1.0 + abs(expected))
            if rel > worst:
                worst = rel
                witness = (tuple(q), tuple(v))
    passed = worst <= 1e-9
    return CheckReport(
        name="homogeneity", passed=bool(passed), max_violation=float(worst),
        samples=samples,
        detail=f"declared degree {term.degree}",
        witness=None if passed else witness)


def euler_identity_check(spec: DissipationSpec, dof: int, params: dict,
                         samples: int = 50, seed: int = 0) -> CheckReport:
    """Verify v . dR/dv = D, the defining relation of the R construction."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    worst = 0.0
    witness = None
    for q, v in sample_states(dof, samples, seed):
        ctx = EvalContext(q, v, params)
        lhs = float(np.dot(v, grad_R_v(spec, ctx)))
        d = eval_D(spec, ctx)
        rel = abs(lhs - d) / (1.0 + abs(d))
        if rel > worst:
            worst = rel
            witness = (tuple(q), tuple(v))
    passed = worst <= 1e-8
    return CheckReport(
        name="euler_identity", passed=bool(passed), max_violation=float(worst),
        samples=samples, detail="v . dR/dv vs D",
        witness=None if passed else witness)


def positivity_scan(spec: DissipationSpec, dof: int, params: dict,
                    samples: int = 50, seed: int = 0) -> CheckReport:
    """Report the minimum of D over sampled states; pass iff >= -1e-12."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    dmin = 0.0
    witness = None
    for q, v in sample_states(dof, samples, seed):
        d = eval_D(spec, EvalContext(q, v, params))
        if d < dmin:
            dmin = d
            witness = (tuple(q), tuple(v))
    passed = dmin >= -1e-12
    return CheckReport(
        name="positivity", passed=bool(passed), max_violation=float(max(0.0, -dmin)),
        samples=samples, detail=f"min D = {dmin:.6g}",
        witness=None if passed else witness)


def rest_value_check(spec: DissipationSpec, dof: int, params: dict,
                     samples: int = 20, seed: int = 0) -> CheckReport:
    """D(q, 0) must vanish, else the R integral diverges."""
    worst = 0.0
    witness = None
    zeros = np.zeros(dof)
    for q, _ in sample_states(dof, samples, seed):
        d = abs(eval_D(spec, EvalContext(q, zeros, params)))
        if d > worst:
            worst = d
            witness = (tuple(q), tuple(zeros))
    passed = worst <= 1e-12
    return CheckReport(
        name="rest_value", passed=bool(passed), max_violation=float(worst),
        samples=samples, detail="D(q, 0) = 0 hypothesis",
        witness=None if passed else witness)
