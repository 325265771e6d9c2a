"""Equations of motion and time integration.

The motion solves M(q) qdd = b with

    b_j = dT/dq_j - (sum_k v_k dM/dq_k) v - dV/dq_j - dR/dv_j,
    dT/dq_j = 0.5 * v . (dM/dq_j) . v,

obtained by expanding d/dt(dT/dv) = M qdd + Mdot v for T = 0.5 v.M(q)v.
Only first derivatives of the mass-matrix entries are needed.

Integrators: classical fixed-step RK4, and the Dormand-Prince 5(4)
embedded pair with standard step-size control. Both additionally carry a
running integral of the dissipation D alongside the mechanical state, so
energy-balance audits can use a quadrature at full integrator accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import exprcore as xc
from . import raymodel as rm
from .raymodel import SystemSpec


class DynamicsError(Exception):
    pass


class MassMatrixError(DynamicsError):
    """M(q) failed the positive-definite factorization."""


class DivergenceError(DynamicsError):
    """NaN or infinity appeared in the state."""


class StiffnessError(DynamicsError):
    """Adaptive step size underflowed."""


class MaxStepsError(DynamicsError):
    pass


@dataclass(frozen=True)
class State:
    t: float
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def is_finite(self):
        return (np.isfinite(self.t) and np.all(np.isfinite(self.q))
                and np.all(np.isfinite(self.v)))


@dataclass(frozen=True)
class Diagnostics:
    H: float
    T_kin: float
    V_pot: float
    D_val: float
    R_val: float
    W: float
    L_val: float
    E_diss: float = 0.0  # integrator-accumulated integral of D since t0


@dataclass(frozen=True)
class ForceBreakdown:
    conservative: np.ndarray  # Q = -dV/dq
    inertial: np.ndarray      # dT/dq - d/dt(dT/dv)
    dissipative: np.ndarray   # -dR/dv
    generalized: np.ndarray   # conservative + inertial


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"
    dt: float = 1e-3
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_steps: int = 10_000_000
    sample_every: int = 1

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown integrator method '{self.method}'")
        if self.dt <= 0 or self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("dt, rel_tol and abs_tol must be positive")
        if self.max_steps < 1 or self.sample_every < 1:
            raise ValueError("max_steps and sample_every must be >= 1")


@dataclass
class Trajectory:
    samples: list  # of (State, Diagnostics)
    method: str
    steps_taken: int = 0
    steps_rejected: int = 0
    dt: float | None = None
    rel_tol: float | None = None
    abs_tol: float | None = None
    force_breakdowns: list | None = None

    def __post_init__(self):
        ts = self.times()
        if len(ts) and np.any(np.diff(ts) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.samples)

    def times(self):
        return np.array([s.t for s, _ in self.samples])

    def states(self):
        return [s for s, _ in self.samples]

    def diagnostics(self):
        return [d for _, d in self.samples]

    def spacing_uniform(self, rtol=1e-9):
        dt = np.diff(self.times())
        if len(dt) < 2:
            return True
        return np.ptp(dt) <= rtol * dt.mean()


# ---------------------------------------------------------------------------
# Per-system compiled cache. Keyed by object identity; SystemSpec is
# immutable so this is safe.


class _SysCache:
    def __init__(self, sys: SystemSpec):
        m = sys.dof
        self.sys = sys
        self.m = m
        self.params = sys.params
        self.mass_const = not any(
            any(isinstance(n, xc.Coord) for n in xc.walk(e))
            for row in sys.mass_matrix for e in row)
        self.mass_fns = [[xc.compiled(e) for e in row]
                         for row in sys.mass_matrix]
        self.mass_grad_fns = [[xc.compiled(e, m, "q") for e in row]
                              for row in sys.mass_matrix]
        self.pot_fn = xc.compiled(sys.potential)
        self.pot_grad_fn = xc.compiled(sys.potential, m, "q")
        d = sys.dissipation
        self.general = d.mode == "general"
        if not self.general:
            self.term_fns = [
                (xc.compiled(t.expr), xc.compiled(t.expr, m, "v", t.smooth_eps),
                 t.degree) for t in d.terms]
        if self.mass_const:
            q0 = tuple([0.0] * m)
            M = self._mass_at(q0)
            self.M0 = M
            self.Minv0 = self._inv_pd(M, q0)

    def _mass_at(self, q):
        M = np.array([[fn(q, q, self.params) for fn in row]
                      for row in self.mass_fns])
        if not np.allclose(M, M.T, rtol=0.0,
                           atol=1e-12 * (1.0 + np.abs(M).max())):
            raise MassMatrixError(f"mass matrix not symmetric at q={list(q)}")
        return M

    def _inv_pd(self, M, q):
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise MassMatrixError(
                f"mass matrix not positive definite at q={list(q)}") from None
        return np.linalg.inv(M)

    def mass(self, q):
        return self.M0 if self.mass_const else self._mass_at(tuple(q))

    def grad_R_v(self, q, v):
        if self.general:
            return rm.grad_R_v(self.sys.dissipation, self.sys.ctx(q, v))
        out = np.zeros(self.m)
        for _, gfn, deg in self.term_fns:
            _, g = gfn(q, v, self.params)
            out += np.array(g) / deg
        return out

    def eval_D(self, q, v):
        if self.general:
            return rm.eval_D(self.sys.dissipation, self.sys.ctx(q, v))
        return sum(fn(q, v, self.params) for fn, _, _ in self.term_fns)

    def eval_R(self, q, v):
        if self.general:
            return rm.eval_R(self.sys.dissipation, self.sys.ctx(q, v))
        return sum(fn(q, v, self.params) / deg
                   for fn, _, deg in self.term_fns)

    def accel(self, q, v):
        m = self.m
        _, gV = self.pot_grad_fn(q, v, self.params)
        b = -np.array(gV) - self.grad_R_v(q, v)
        if self.mass_const:
            return self.Minv0 @ b
        qt = tuple(q)
        M = self._mass_at(qt)
        dM = np.empty((m, m, m))
        for a in range(m):
            for c in range(m):
                dM[:, a, c] = self.mass_grad_fns[a][c](qt, qt, self.params)[1]
        va = np.asarray(v, dtype=float)
        dT_dq = 0.5 * np.einsum("a,jab,b->j", va, dM, va)
        Mdot = np.einsum("j,jab->ab", va, dM)
        b = b + dT_dq - Mdot @ va
        return self._inv_pd(M, qt) @ b

    def diagnostics(self, q, v, e_diss):
        M = self.mass(q)
        va = np.asarray(v, dtype=float)
        T = 0.5 * float(va @ M @ va)
        V = self.pot_fn(q, v, self.params)
        D = self.eval_D(q, v)
        R = self.eval_R(q, v)
        W = float(np.dot(va, self.grad_R_v(q, v)))  # on-shell W = v.dR/dv
        return Diagnostics(H=T + V, T_kin=T, V_pot=V, D_val=D, R_val=R,
                           W=W, L_val=T - V, E_diss=e_diss)


_SYS_CACHE = {}


def _cache(sys: SystemSpec) -> _SysCache:
    hit = _SYS_CACHE.get(id(sys))
    if hit is not None and hit.sys is sys:
        return hit
    c = _SysCache(sys)
    _SYS_CACHE[id(sys)] = c
    return c


# ---------------------------------------------------------------------------
# Force assembly


def accel(sys: SystemSpec, s: State) -> np.ndarray:
    """Explicit second-order form of the dissipative Lagrange equations."""
    try:
        return _cache(sys).accel(tuple(s.q), tuple(s.v))
    except MassMatrixError as e:
        raise MassMatrixError(f"{e} (t={s.t})") from None


def diagnostics(sys: SystemSpec, s: State, e_diss: float = 0.0) -> Diagnostics:
    return _cache(sys).diagnostics(tuple(s.q), tuple(s.v), e_diss)


def force_breakdown(sys: SystemSpec, s: State) -> ForceBreakdown:
    """Force components with the inertial part taken from the assembled EOM
    (d/dt(dT/dv) evaluated with qdd = accel)."""
    m = sys.dof
    M = sys.mass(s.q)
    dM = sys.mass_grad(s.q)
    ctx = sys.ctx(s.q, s.v)
    qdd = accel(sys, s)
    dT_dq = 0.5 * np.einsum("a,jab,b->j", s.v, dM, s.v)
    Mdot = np.einsum("j,jab->ab", s.v, dM)
    ddt_p = M @ qdd + Mdot @ s.v
    conservative = -xc.grad_q(sys.potential, ctx)
    inertial = dT_dq - ddt_p
    dissipative = -rm.grad_R_v(sys.dissipation, ctx)
    return ForceBreakdown(conservative=conservative, inertial=inertial,
                          dissipative=dissipative,
                          generalized=conservative + inertial)


# ---------------------------------------------------------------------------
# Steppers. Internal RK state is y = [q, v, E] with E' = D(q, v).


def _rhs(sys, t, y):
    m = sys.dof
    c = _cache(sys)
    q = tuple(y[:m])
    v = tuple(y[m:2 * m])
    out = np.empty(2 * m + 1)
    out[:m] = v
    out[m:2 * m] = c.accel(q, v)
    out[2 * m] = c.eval_D(q, v)
    return out


def _pack(s: State, e_diss: float):
    return np.concatenate([s.q, s.v, [e_diss]])


def _unpack(sys, t, y):
    m = sys.dof
    return State(t, y[:m], y[m:2 * m]), float(y[2 * m])


def _check_finite(y, t):
    if not np.all(np.isfinite(y)):
        raise DivergenceError(f"non-finite state at t={t}")


def _rk4_raw(sys, t, y, dt):
    k1 = _rhs(sys, t, y)
    k2 = _rhs(sys, t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = _rhs(sys, t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = _rhs(sys, t + dt, y + dt * k3)
    ynew = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check_finite(ynew, t + dt)
    return ynew


def step_rk4(sys: SystemSpec, s: State, dt: float) -> State:
    """One classical RK4 step; local error O(dt^5)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = _rk4_raw(sys, s.t, _pack(s, 0.0), dt)
    return _unpack(sys, s.t + dt, y)[0]


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784,
                   11 / 84, 0.0])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
                  22 / 525, -1 / 40])  # b5 - b4


def _rk45_raw(sys, t, y, dt, cfg):
    nmech = 2 * sys.dof
    k = []
    for i in range(7):
        yi = y.copy()
        for j, a in enumerate(_DP_A[i]):
            if a:
                yi = yi + dt * a * k[j]
        k.append(_rhs(sys, t + _DP_C[i] * dt, yi))
    K = np.array(k)
    ynew = y + dt * (_DP_B5 @ K)
    _check_finite(ynew, t + dt)
    errvec = dt * (_DP_E @ K)[:nmech]
    w = cfg.abs_tol + cfg.rel_tol * np.abs(y[:nmech])
    err = float(np.sqrt(np.mean((errvec / w) ** 2)))
    return ynew, err


def step_rk45(sys: SystemSpec, s: State, dt_try: float,
              cfg: IntegratorConfig):
    """One embedded 5(4) step. Returns (state, dt_next, accepted)."""
    if dt_try <= 0:
        raise ValueError("dt_try must be positive")
    if not s.is_finite():
        raise DivergenceError(f"non-finite state at t={s.t}")
    y = _pack(s, 0.0)
    ynew, err = _rk45_raw(sys, s.t, y, dt_try, cfg)
    factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
    dt_next = dt_try * factor
    if err <= 1.0:
        return _unpack(sys, s.t + dt_try, ynew)[0], dt_next, True
    return s, dt_next, False


# ---------------------------------------------------------------------------
# Driver


def integrate(sys: SystemSpec, init: State, t_end: float,
              cfg: IntegratorConfig) -> Trajectory:
    """Integrate from init.t to t_end; the final step lands exactly on
    t_end. Deterministic for identical inputs."""
    if not init.is_finite():
        raise DivergenceError("initial state is not finite")
    if t_end <= init.t:
        raise ValueError("t_end must exceed the initial time")
    if cfg.method == "rk4":
        return _integrate_rk4(sys, init, t_end, cfg)
    return _integrate_rk45(sys, init, t_end, cfg)


def _integrate_rk4(sys, init, t_end, cfg):
    traj = Trajectory(samples=[(init, diagnostics(sys, init, 0.0))],
                      method="rk4", dt=cfg.dt)
    y = _pack(init, 0.0)
    t = init.t
    steps = 0
    while t < t_end - 1e-15 * (1.0 + abs(t_end)):
        if steps >= cfg.max_steps:
            raise MaxStepsError(f"max_steps={cfg.max_steps} exceeded at t={t}")
        dt = min(cfg.dt, t_end - t)
        y = _rk4_raw(sys, t, y, dt)
        steps += 1
        # exact-multiple time tracking avoids a spurious sliver step at
        # the end from accumulated rounding in repeated addition
        t = min(init.t + steps * cfg.dt, t_end)
        if steps % cfg.sample_every == 0 or t >= t_end - 1e-15 * (1.0 + abs(t_end)):
            s, e = _unpack(sys, t, y)
            traj.samples.append((s, diagnostics(sys, s, e)))
    traj.steps_taken = steps
    return traj


def _integrate_rk45(sys, init, t_end, cfg):
    traj = Trajectory(samples=[(init, diagnostics(sys, init, 0.0))],
                      method="rk45", rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol)
    y = _pack(init, 0.0)
    t = init.t
    dt = min(1e-2 * (t_end - init.t), 0.1)
    steps = accepted = rejected = 0
    while t < t_end - 1e-15 * (1.0 + abs(t_end)):
        if steps >= cfg.max_steps:
            raise MaxStepsError(f"max_steps={cfg.max_steps} exceeded at t={t}")
        if dt < 1e-14 * (1.0 + abs(t)):
            raise StiffnessError(
                f"step size underflow (dt={dt:.3e}) at t={t}; "
                "the problem is likely too stiff for an explicit pair")
        clipped = min(dt, t_end - t)
        ynew, err = _rk45_raw(sys, t, y, clipped, cfg)
        steps += 1
        factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        if err <= 1.0:
            y = ynew
            t += clipped
            accepted += 1
            dt = clipped * factor
            if (accepted % cfg.sample_every == 0
                    or t >= t_end - 1e-15 * (1.0 + abs(t_end))):
                s, e = _unpack(sys, t, y)
                traj.samples.append((s, diagnostics(sys, s, e)))
        else:
            rejected += 1
            dt = clipped * factor
    traj.steps_taken = accepted
    traj.steps_rejected = rejected
    return traj
