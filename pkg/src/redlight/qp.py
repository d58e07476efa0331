"""Dense convex QP solver: operator-splitting iteration with an active-set
polish step, plus KKT residual reporting.

Problems are stated as

    minimize    0.5 x' H x + g' x
    subject to  l <= A x <= u        (equality rows have l == u)

which is the natural target of the condensed control transcription: a few
dozen variables and a few hundred rows, all dense.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lstsq

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a soft dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

log = logging.getLogger(__name__)

STATUS_SOLVED = "solved"
STATUS_MAX_ITER = "max-iterations"
STATUS_INFEASIBLE = "infeasible-detected"

ADMM_RHO = 1.0
ADMM_SIGMA = 1e-6
ADMM_ALPHA = 1.6          # over-relaxation
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 20000
CHECK_EVERY = 25


@dataclass(eq=False)
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    constraint_matrix: np.ndarray
    lower_bounds: np.ndarray
    upper_bounds: np.ndarray
    var_names: list[str] = field(default_factory=list)
    row_groups: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hessian = np.asarray(self.hessian, dtype=float)
        self.gradient = np.asarray(self.gradient, dtype=float)
        self.constraint_matrix = np.atleast_2d(
            np.asarray(self.constraint_matrix, dtype=float))
        self.lower_bounds = np.asarray(self.lower_bounds, dtype=float)
        self.upper_bounds = np.asarray(self.upper_bounds, dtype=float)
        h = self.hessian
        if np.max(np.abs(h - h.T)) > 1e-9 * max(1.0, np.max(np.abs(h))):
            raise ValueError("hessian must be symmetric")
        if np.linalg.eigvalsh(h)[0] < -1e-8:
            raise ValueError("hessian must be positive semidefinite")
        if np.any(self.lower_bounds > self.upper_bounds + 1e-12):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.hessian.shape[0]

    @property
    def n_rows(self) -> int:
        return self.constraint_matrix.shape[0]

    def dump(self, path) -> None:
        """Debug dump for offline replay: matrices row-major."""
        payload = {
            "schema": "redlight-qp-v1",
            "n_vars": self.n_vars,
            "n_rows": self.n_rows,
            "hessian": self.hessian.tolist(),
            "gradient": self.gradient.tolist(),
            "constraint_matrix": self.constraint_matrix.tolist(),
            "lower_bounds": [None if b == -np.inf else b for b in self.lower_bounds],
            "upper_bounds": [None if b == np.inf else b for b in self.upper_bounds],
            "var_names": self.var_names,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)


def load_problem(path) -> QpProblem:
    with open(path) as fh:
        payload = json.load(fh)
    lb = np.array([-np.inf if b is None else b for b in payload["lower_bounds"]])
    ub = np.array([np.inf if b is None else b for b in payload["upper_bounds"]])
    return QpProblem(
        hessian=np.array(payload["hessian"]),
        gradient=np.array(payload["gradient"]),
        constraint_matrix=np.array(payload["constraint_matrix"]),
        lower_bounds=lb, upper_bounds=ub,
        var_names=payload.get("var_names", []),
    )


@dataclass(eq=False)
class QpSolution:
    primal: np.ndarray
    dual: np.ndarray
    status: str
    kkt: tuple[float, float, float]   # stationarity, primal, complementarity
    iterations: int = 0
    objective: float = float("nan")


def kkt_residuals(p: QpProblem, primal: np.ndarray, dual: np.ndarray):
    """(stationarity, primal violation, complementarity) infinity norms.

    Sign convention: dual > 0 pushes against the upper bound, dual < 0
    against the lower bound.
    """
    ax = p.constraint_matrix @ primal
    stationarity = np.max(np.abs(
        p.hessian @ primal + p.gradient + p.constraint_matrix.T @ dual))
    primal_viol = 0.0
    if p.n_rows:
        primal_viol = float(np.max(np.maximum(
            np.maximum(p.lower_bounds - ax, 0.0),
            np.maximum(ax - p.upper_bounds, 0.0))))
    pos = np.maximum(dual, 0.0)
    neg = np.maximum(-dual, 0.0)
    # a dual pushing against an infinite bound counts by its own magnitude
    finite_up = np.isfinite(p.upper_bounds)
    finite_lo = np.isfinite(p.lower_bounds)
    up_gap = np.abs(np.where(finite_up, p.upper_bounds - ax, 0.0))
    lo_gap = np.abs(np.where(finite_lo, ax - p.lower_bounds, 0.0))
    comp_up = np.where(finite_up, pos * up_gap, pos)
    comp_lo = np.where(finite_lo, neg * lo_gap, neg)
    comp = float(np.max(comp_up + comp_lo, initial=0.0))
    return float(stationarity), primal_viol, comp


def _polish(p: QpProblem, x: np.ndarray, y: np.ndarray, tol: float):
    """Solve the equality-constrained problem on the apparent active set.

    Mirrors the usual operator-splitting polish: rows whose multiplier is
    decisively nonzero (or whose slack is tiny) are pinned to the relevant
    bound, the resulting KKT system is solved by least squares, and the
    candidate is accepted only if its residuals actually meet the tolerance.
    """
    ax = p.constraint_matrix @ x
    slack_tol = max(10 * tol, 1e-7)
    lower_active = (y < -slack_tol) | (ax - p.lower_bounds < slack_tol)
    upper_active = (y > slack_tol) | (p.upper_bounds - ax < slack_tol)
    equality = np.isclose(p.lower_bounds, p.upper_bounds)
    lower_active |= equality
    upper_active &= ~lower_active

    active = lower_active | upper_active
    idx = np.flatnonzero(active)
    a_act = p.constraint_matrix[idx]
    b_act = np.where(lower_active[idx], p.lower_bounds[idx], p.upper_bounds[idx])

    n, m = p.n_vars, len(idx)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = p.hessian
    kkt[:n, n:] = a_act.T
    kkt[n:, :n] = a_act
    rhs = np.concatenate([-p.gradient, b_act])
    sol, *_ = lstsq(kkt, rhs, lapack_driver="gelsy", check_finite=False)
    for _ in range(3):   # iterative refinement
        sol = sol + lstsq(kkt, rhs - kkt @ sol, lapack_driver="gelsy",
                          check_finite=False)[0]
    x_pol = sol[:n]
    y_pol = np.zeros(p.n_rows)
    y_pol[idx] = sol[n:]
    return x_pol, y_pol


def _equilibrate(p: QpProblem, iters: int = 10):
    """Ruiz equilibration of the stacked problem data plus a scalar cost
    normalization.  Returns (h, g, a, l, u, d, e, c) with the scaled data and
    the variable/row/cost scalings needed to map iterates back."""
    n, m = p.n_vars, p.n_rows
    h = p.hessian.copy()
    a = p.constraint_matrix.copy()
    g = p.gradient.copy()
    d = np.ones(n)
    e = np.ones(m)
    c = 1.0
    for _ in range(iters):
        cn = np.max(np.abs(h), axis=0)
        if m:
            cn = np.maximum(cn, np.max(np.abs(a), axis=0))
        cn[cn == 0] = 1.0
        dd = 1.0 / np.sqrt(cn)
        h = dd[:, None] * h * dd[None, :]
        if m:
            rn = np.max(np.abs(a), axis=1)
            rn[rn == 0] = 1.0
            ee = 1.0 / np.sqrt(rn)
            a = ee[:, None] * (a * dd[None, :])
            e *= ee
        d *= dd
        col_norms = np.max(np.abs(h), axis=0)
        gamma = max(float(np.mean(col_norms)),
                    float(np.max(np.abs(c * d * p.gradient), initial=0.0)))
        if gamma > 0:
            h /= gamma
            c /= gamma
    g = c * d * p.gradient
    lb = np.where(np.isfinite(p.lower_bounds), e * p.lower_bounds, -np.inf)
    ub = np.where(np.isfinite(p.upper_bounds), e * p.upper_bounds, np.inf)
    return h, g, a, lb, ub, d, e, c


@njit(cache=True)
def _admm_block(kinv, a, at, g, lb, ub, rho_vec, sigma, alpha,
                x, z, y, n_iters):  # pragma: no cover - exercised via solve_qp
    """Run a block of operator-splitting iterations in place; returns the
    final dual increment for the infeasibility test."""
    m = a.shape[0]
    dy = np.zeros(m)
    for _ in range(n_iters):
        rhs = sigma * x - g + at @ (rho_vec * z - y)
        x = kinv @ rhs
        ax = a @ x
        for i in range(m):
            axr = alpha * ax[i] + (1.0 - alpha) * z[i]
            zi = axr + y[i] / rho_vec[i]
            if zi < lb[i]:
                zi = lb[i]
            elif zi > ub[i]:
                zi = ub[i]
            dy[i] = rho_vec[i] * (axr - zi)
            y[i] += dy[i]
            z[i] = zi
    return x, z, y, dy, ax


def solve_qp(p: QpProblem, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER,
             warm_start: np.ndarray | None = None,
             warm_start_dual: np.ndarray | None = None) -> QpSolution:
    """Operator-splitting iteration with over-relaxation, Ruiz equilibration
    and adaptive step sizing; deterministic for fixed inputs.  Residual
    checks, the polish step and the returned solution are all in the
    problem's original units.  Returns the best iterate with residuals on
    non-convergence."""
    n, m = p.n_vars, p.n_rows
    h_s, g_s, a_s, lb_s, ub_s, d_scl, e_scl, c_scl = _equilibrate(p)
    equality = np.isclose(p.lower_bounds, p.upper_bounds)
    rho = ADMM_RHO

    def rho_vec_for(r):
        rv = np.full(m, r)
        rv[equality] = r * 1e3
        return rv

    rho_vec = rho_vec_for(rho)

    def factorize():
        return np.linalg.inv(h_s + ADMM_SIGMA * np.eye(n)
                             + a_t @ (rho_vec[:, None] * a_s))

    a_s = np.ascontiguousarray(a_s)
    a_t = np.ascontiguousarray(a_s.T)
    kinv = factorize()

    x = np.zeros(n)
    if warm_start is not None:
        x = np.asarray(warm_start, dtype=float) / d_scl
    z = np.clip(a_s @ x, lb_s, ub_s)
    y = np.zeros(m)
    if warm_start_dual is not None and len(warm_start_dual) == m:
        y = c_scl * np.asarray(warm_start_dual, dtype=float) / e_scl

    best = None
    it = 0
    while it < max_iter:
        block = min(CHECK_EVERY, max_iter - it)
        x, z, y, dy, ax = _admm_block(
            kinv, a_s, a_t, g_s, lb_s, ub_s, rho_vec,
            ADMM_SIGMA, ADMM_ALPHA, x, z, y, block)
        it += block

        x_u = d_scl * x
        y_u = e_scl * y / c_scl
        res = kkt_residuals(p, x_u, y_u)
        if best is None or max(res) < max(best[2]):
            best = (x_u, y_u, res, it)
        if max(res) <= tol:
            obj = 0.5 * x_u @ p.hessian @ x_u + p.gradient @ x_u
            return QpSolution(x_u, y_u, STATUS_SOLVED, res, it, obj)
        if max(res) <= 1e3 * tol or it % 100 == 0:
            x_pol, y_pol = _polish(p, x_u, y_u, tol)
            res_pol = kkt_residuals(p, x_pol, y_pol)
            if max(res_pol) <= tol:
                obj = 0.5 * x_pol @ p.hessian @ x_pol + p.gradient @ x_pol
                return QpSolution(x_pol, y_pol, STATUS_SOLVED, res_pol, it, obj)
        # primal infeasibility certificate on the dual increment
        # (scaled-space certificate is valid for the original problem)
        norm_dy = np.max(np.abs(dy), initial=0.0)
        if norm_dy > 1e-12:
            dyn = dy / norm_dy
            support = (
                np.sum(ub_s[dyn > 0] * dyn[dyn > 0], initial=0.0)
                + np.sum(lb_s[dyn < 0] * dyn[dyn < 0], initial=0.0)
            )
            if (np.max(np.abs(a_t @ dyn)) <= 1e-8
                    and np.isfinite(support) and support < -1e-8):
                return QpSolution(x_u, y_u, STATUS_INFEASIBLE, res, it)
        # adaptive step size from the scaled residual balance
        if it % 200 == 0 and m:
            r_prim = np.max(np.abs(ax - z), initial=0.0)
            r_dual = np.max(np.abs(h_s @ x + g_s + a_t @ y), initial=0.0)
            scale_p = max(np.max(np.abs(ax), initial=0.0),
                          np.max(np.abs(z), initial=0.0), 1e-12)
            scale_d = max(np.max(np.abs(h_s @ x), initial=0.0),
                          np.max(np.abs(g_s), initial=0.0),
                          np.max(np.abs(a_t @ y), initial=0.0), 1e-12)
            ratio = np.sqrt((r_prim / scale_p) / max(r_dual / scale_d, 1e-16))
            if ratio > 5.0 or ratio < 0.2:
                rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                rho_vec = rho_vec_for(rho)
                kinv = factorize()

    x_b, y_b, res_b, _ = best
    obj = 0.5 * x_b @ p.hessian @ x_b + p.gradient @ x_b
    log.debug("solve_qp hit max iterations; residuals %s", res_b)
    return QpSolution(x_b, y_b, STATUS_MAX_ITER, res_b, max_iter, obj)
