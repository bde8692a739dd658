"""Inner solver for smooth constrained minimization.

A safeguarded first-order augmented-Lagrangian (method of multipliers) outer
loop around a quasi-Newton bound-constrained inner solve (scipy L-BFGS-B).
Inequalities use the Powell-Hestenes-Rockafellar penalty, so no slack variables
or complementarity machinery are needed, and the KKT residual of every returned
point can be audited directly.

Conventions: inequalities are feasible iff ineq(x) >= 0; the Lagrangian is
f - lam.eq - mu.ineq with mu >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize as _scipy_minimize

_DEFAULT_TOL = 1e-4


def gradient(f, x: np.ndarray) -> np.ndarray:
    """Central finite-difference gradient with per-coordinate step
    h_i = max(1e-6, 1e-6 * |x_i|)."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = max(1e-6, 1e-6 * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ArithmeticError(f"non-finite evaluation in finite differences at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g


def finite_difference_jacobian(fun, x: np.ndarray) -> np.ndarray:
    """Central finite-difference Jacobian of a vector-valued function."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        h = max(1e-6, 1e-6 * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2.0 * h)
    return J


@dataclass
class SmoothProgram:
    """A finite-dimensional smooth program: min objective s.t. eq = 0, ineq >= 0, bounds.

    Derivative callbacks are optional; missing ones fall back to central finite
    differences (the finite-difference path is kept alive for audits). The vjp
    callbacks compute J(x)^T w without forming the Jacobian.
    """

    dim: int
    objective: object
    eq: object = None
    ineq: object = None
    bounds: tuple | None = None  # (lower array, upper array)
    objective_grad: object = None
    eq_vjp: object = None
    ineq_vjp: object = None
    # optional second-order interface: dense Jacobians and a diagonal objective
    # Hessian enable the projected-Newton inner solver
    eq_jac: object = None
    ineq_jac: object = None
    objective_hess_diag: object = None
    # optional: diagonal of sum_i t_i * (-d2 ineq_i) restricted to its PSD part,
    # for penalty weights t; sharpens the Newton model when cost-bound rows are active
    ineq_curvature_diag: object = None

    def has_second_order(self) -> bool:
        return (
            self.objective_hess_diag is not None
            and (self.eq is None or self.eq_jac is not None)
            and (self.ineq is None or self.ineq_jac is not None)
        )

    def grad_objective(self, x):
        if self.objective_grad is not None:
            return self.objective_grad(x)
        return gradient(self.objective, x)

    def eq_pullback(self, x, w):
        if self.eq_vjp is not None:
            return self.eq_vjp(x, w)
        return finite_difference_jacobian(self.eq, x).T @ w

    def ineq_pullback(self, x, w):
        if self.ineq_vjp is not None:
            return self.ineq_vjp(x, w)
        return finite_difference_jacobian(self.ineq, x).T @ w

    def eval_eq(self, x):
        if self.eq is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.eq(x), dtype=float))

    def eval_ineq(self, x):
        if self.ineq is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.ineq(x), dtype=float))


@dataclass
class SolveResult:
    point: np.ndarray
    objective_value: float
    multipliers: tuple  # (eq multipliers, ineq multipliers >= 0)
    kkt_residual: float
    status: str  # converged | max_iter | infeasible
    inner_iterations: int = 0
    outer_iterations: int = 0
    merit_trace: list = field(default_factory=list)


def kkt_residual(program: SmoothProgram, point, multipliers) -> float:
    """Max-norm KKT residual: stationarity of f - lam.eq - mu.ineq, feasibility,
    dual feasibility and complementarity.

    With box bounds, stationarity is measured by the projected-gradient residual
    ||x - clip(x - g, lo, hi)||_inf, which reduces to ||g||_inf when no bounds
    are declared (bound multipliers are implicit).
    """
    x = np.asarray(point, dtype=float)
    lam, mu = (np.atleast_1d(np.asarray(m, dtype=float)) for m in multipliers)
    g = np.asarray(program.grad_objective(x), dtype=float).copy()
    residuals = [0.0]
    if program.eq is not None and lam.size:
        c = program.eval_eq(x)
        g -= program.eq_pullback(x, lam)
        residuals.append(float(np.max(np.abs(c))) if c.size else 0.0)
    if program.ineq is not None and mu.size:
        s = program.eval_ineq(x)
        g -= program.ineq_pullback(x, mu)
        if s.size:
            residuals.append(float(np.max(np.abs(np.minimum(s, 0.0)))))
            residuals.append(float(np.max(np.abs(mu * s))))
        residuals.append(float(np.max(np.abs(np.minimum(mu, 0.0)))) if mu.size else 0.0)
    if program.bounds is not None:
        lo, hi = program.bounds
        stationarity = float(np.max(np.abs(x - np.clip(x - g, lo, hi))))
    else:
        stationarity = float(np.max(np.abs(g))) if g.size else 0.0
    residuals.append(stationarity)
    return max(residuals)


def _feasibility_violation(c, s) -> float:
    viol = 0.0
    if c.size:
        viol = max(viol, float(np.max(np.abs(c))))
    if s.size:
        viol = max(viol, float(np.max(np.abs(np.minimum(s, 0.0)))))
    return viol


def _projected_newton(value_grad, hess, x, lo, hi, gtol, max_iter, trace_sub=None):
    """Minimize a smooth function over a box with damped Newton steps projected
    onto the bounds. Monotone in the merit by backtracking line search."""
    x = np.clip(x, lo, hi)
    f, g = value_grad(x)
    if trace_sub is not None:
        trace_sub.append(f)
    nit = 0
    for _ in range(max_iter):
        pg = np.max(np.abs(x - np.clip(x - g, lo, hi)))
        if pg <= gtol:
            break
        at_lo = (x <= lo + 1e-12) & (g > 0.0)
        at_hi = (x >= hi - 1e-12) & (g < 0.0)
        free = ~(at_lo | at_hi)
        p = -g.copy()  # clamped coordinates fall back to projected gradient
        if free.any():
            H = hess(x)
            Hff = H[np.ix_(free, free)]
            scale = max(1.0, float(np.trace(Hff)) / Hff.shape[0])
            jitter = 1e-9 * scale
            for _attempt in range(6):
                try:
                    factor = cho_factor(
                        Hff + jitter * np.eye(Hff.shape[0]), lower=True, check_finite=False
                    )
                    p[free] = -cho_solve(factor, g[free], check_finite=False)
                    break
                except np.linalg.LinAlgError:
                    jitter *= 100.0
            else:
                p[free] = -g[free]
        alpha = 1.0
        moved = False
        for _ls in range(30):
            x_new = np.clip(x + alpha * p, lo, hi)
            step = x_new - x
            if np.max(np.abs(step)) < 1e-15:
                break
            f_new, g_new = value_grad(x_new)
            if f_new <= f + 1e-4 * float(g @ step):
                x, f, g = x_new, f_new, g_new
                moved = True
                break
            alpha *= 0.5
        nit += 1
        if trace_sub is not None and moved:
            trace_sub.append(f)
        if not moved:
            break
    return x, f, g, nit


def minimize(
    program: SmoothProgram,
    x0,
    *,
    tol: float = _DEFAULT_TOL,
    feas_tol: float | None = None,
    rho0: float = 10.0,
    rho_factor: float = 10.0,
    rho_max: float = 1e5,
    max_outer: int = 20,
    max_inner: int = 200,
    maxcor: int = 20,
    lam0=None,
    mu0=None,
    trace: bool = False,
) -> SolveResult:
    """Solve a SmoothProgram from x0. Deterministic for fixed inputs.

    Multipliers take a first-order update after every inner solve; the penalty
    grows by rho_factor (capped at rho_max) only when feasibility stalls, which
    keeps the inner subproblems as well-conditioned as the problem allows.
    Returns status 'converged' once the KKT residual is <= tol (always <= the
    module default 1e-4), 'max_iter' with the best point when the outer loop
    caps out while near-feasible, and 'infeasible' when feasibility cannot be
    restored.
    """
    if feas_tol is None:
        feas_tol = tol
    x = np.array(x0, dtype=float)
    if x.shape != (program.dim,):
        raise ValueError(f"x0 must have shape ({program.dim},), got {x.shape}")
    scipy_bounds = None
    if program.bounds is not None:
        lo, hi = program.bounds
        x = np.clip(x, lo, hi)
        scipy_bounds = list(zip(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)))

    m = program.eval_eq(x).size if program.eq is not None else 0
    p = program.eval_ineq(x).size if program.ineq is not None else 0
    warm_duals = lam0 is not None or mu0 is not None
    lam = np.zeros(m) if lam0 is None else np.array(lam0, dtype=float)
    mu = np.zeros(p) if mu0 is None else np.maximum(0.0, np.array(mu0, dtype=float))
    if lam.shape != (m,) or mu.shape != (p,):
        raise ValueError("multiplier warm starts have inconsistent shapes")

    rho = float(rho0)
    unconstrained = m == 0 and p == 0
    omega_floor = 0.3 * tol
    if unconstrained:
        omega = omega_floor
    elif warm_duals:
        omega = max(omega_floor, 1e-3)
    else:
        omega = 1e-2

    merit_trace: list = []
    inner_total = 0
    prev_viol = np.inf
    best = None  # (viol, kkt, x, lam, mu)
    stall_count = 0
    score_history: list = []

    for outer in range(1, max_outer + 1):

        def al_value_grad(z, _lam=lam, _mu=mu, _rho=rho):
            value = float(program.objective(z))
            grad = np.asarray(program.grad_objective(z), dtype=float).copy()
            if m:
                c = program.eval_eq(z)
                value += float(-_lam @ c + 0.5 * _rho * (c @ c))
                grad += program.eq_pullback(z, _rho * c - _lam)
            if p:
                s = program.eval_ineq(z)
                t = np.maximum(0.0, _mu - _rho * s)
                value += float(np.sum(t**2 - _mu**2) / (2.0 * _rho))
                grad += program.ineq_pullback(z, -t)
            return value, grad

        subtrace = None
        if trace:
            subtrace = []
            merit_trace.append(subtrace)

        if program.has_second_order():

            def al_hess(z, _lam=lam, _mu=mu, _rho=rho):
                hd = np.asarray(program.objective_hess_diag(z), dtype=float).copy()
                H = None
                if p:
                    s = program.eval_ineq(z)
                    t = np.maximum(0.0, _mu - _rho * s)
                    active = t > 0.0
                    if program.ineq_curvature_diag is not None and active.any():
                        hd += program.ineq_curvature_diag(z, t)
                    H = np.diag(hd)
                    if active.any():
                        Ja = program.ineq_jac(z)[active]
                        H += _rho * (Ja.T @ Ja)
                else:
                    H = np.diag(hd)
                if m:
                    Je = program.eq_jac(z)
                    H += _rho * (Je.T @ Je)
                return H

            lo_v = program.bounds[0] if program.bounds is not None else np.full(x.size, -np.inf)
            hi_v = program.bounds[1] if program.bounds is not None else np.full(x.size, np.inf)
            x, _f, _g, nit = _projected_newton(
                al_value_grad, al_hess, x, lo_v, hi_v, omega, max_inner, subtrace
            )
            inner_total += nit
        else:
            callback = None
            if trace:

                def callback(zk, _sub=subtrace):
                    _sub.append(al_value_grad(zk)[0])

                subtrace.append(al_value_grad(x)[0])

            res = _scipy_minimize(
                al_value_grad,
                x,
                jac=True,
                method="L-BFGS-B",
                bounds=scipy_bounds,
                callback=callback,
                options={"maxiter": max_inner, "gtol": omega, "ftol": 1e-16, "maxcor": maxcor},
            )
            x = np.asarray(res.x, dtype=float)
            inner_total += int(res.nit)

        c = program.eval_eq(x) if m else np.zeros(0)
        s = program.eval_ineq(x) if p else np.zeros(0)
        viol = _feasibility_violation(c, s)
        lam = lam - rho * c if m else lam
        mu = np.maximum(0.0, mu - rho * s) if p else mu

        kkt = kkt_residual(program, x, (lam, mu))
        if best is None or (viol, kkt) < best[:2]:
            if best is not None and viol + kkt > 0.9 * (best[0] + best[1]):
                stall_count += 1
            else:
                stall_count = 0
            best = (viol, kkt, x.copy(), lam.copy(), mu.copy())
        else:
            stall_count += 1
        if kkt <= tol and viol <= feas_tol:
            return SolveResult(
                point=x,
                objective_value=float(program.objective(x)),
                multipliers=(lam, mu),
                kkt_residual=kkt,
                status="converged",
                inner_iterations=inner_total,
                outer_iterations=outer,
                merit_trace=merit_trace,
            )

        score_history.append(viol + kkt)
        if stall_count >= 4 or (len(score_history) >= 6 and score_history[-1] > 0.5 * score_history[-6]):
            break  # no meaningful progress; return the best point found
        if viol > max(0.25 * prev_viol, feas_tol):
            rho = min(rho * rho_factor, rho_max)
        prev_viol = viol
        omega = max(0.3 * omega, omega_floor)

    viol, kkt, x, lam, mu = best
    status = "max_iter" if viol <= 10.0 * feas_tol else "infeasible"
    return SolveResult(
        point=x,
        objective_value=float(program.objective(x)),
        multipliers=(lam, mu),
        kkt_residual=kkt,
        status=status,
        inner_iterations=inner_total,
        outer_iterations=max_outer,
        merit_trace=merit_trace,
    )
