"""Positive steady states of ``eps u'' + c u' + M_Omega u + f(x, u) = 0``.

The construction follows the monotone sub/super-solution scheme. With
``G(u) = eps u'' + c u' + M_Omega u + f(x, u)`` and

    theta * (1 + L_f + |c|/h + 2 eps/h**2) <= 1,

the damped map ``u -> u + theta G(u)`` is order preserving on
``[0, ||S||_inf]``. Iterating it downward from the constant super-solution
``||S||_inf`` and upward from a small multiple of the principal
eigenfunction gives two monotone sequences squeezing the unique positive
solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .discrete_operator import Grid, assemble
from .environment import profile_sup
from .errors import ConvergenceError, MonotonicityViolation, ValidationError
from .kernel import truncate
from .spectral import _factor, principal_eigenvalue

BORDERLINE_BAND = 1e-4
ORDER_SLACK = 1e-13


@dataclass
class SteadyStateResult:
    u: np.ndarray
    residual: float
    classification: str
    epsilon: float
    domain_R: float
    bracket: tuple
    l1_mass: float
    grad_sup: float
    h1_norm: float
    lambda_p: float
    iterations: int
    x: np.ndarray
    kappa: float = 0.0
    order_violation: float = 0.0
    trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)


class _Problem:
    """Discrete nonlinear operator ``G`` and its monotone step size."""

    def __init__(self, grid, kernel, growth, c, epsilon):
        self.grid = grid
        self.growth = growth
        self.c = float(c)
        self.epsilon = float(epsilon)
        self.op = assemble(grid, kernel, c, epsilon)
        self.x = grid.x
        self.M = growth.saturation
        self.L = growth.lipschitz(self.M)
        h = grid.h
        self.theta = 1.0 / (1.0 + self.L + abs(self.c) / h + 2.0 * self.epsilon / h**2)

    def G(self, u):
        return self.op.apply_linear(u, "direct") + self.growth.f(self.x, u)

    def residual(self, u):
        """Sup-norm of ``G(u)`` using the assembled matrix (an independent path)."""
        return float(np.max(np.abs(self.op.sparse() @ u + self.growth.f(self.x, u))))

    def linearized(self):
        return self.op.with_potential(self.growth)


def _diagnostics(u, h):
    du = np.diff(u) / h
    return (
        h * math.fsum(u),
        float(np.max(np.abs(du))) if du.size else 0.0,
        math.sqrt(h * math.fsum(u * u) + h * math.fsum(du * du)),
    )


def _result(prob, u, classification, lam, iterations, bracket, **extra):
    l1, grad, h1 = _diagnostics(u, prob.grid.h)
    return SteadyStateResult(
        u=u,
        residual=prob.residual(u),
        classification=classification,
        epsilon=prob.epsilon,
        domain_R=prob.grid.half_width,
        bracket=bracket,
        l1_mass=l1,
        grad_sup=grad,
        h1_norm=h1,
        lambda_p=lam,
        iterations=iterations,
        x=prob.x,
        **extra,
    )


def polish_eigenfunction(op, eig, rtol=1e-3, max_steps=200):
    """Refine a principal eigenfunction until it is accurate componentwise.

    A normwise-converged eigenvector can be wrong by orders of magnitude
    where it is tiny. Further inverse iterations with a fixed certified
    shift contract every component, and for an M-matrix the triangular
    solves involve no cancellation, so relative accuracy holds even at
    ``phi ~ 1e-30``. Stops once ``max_i |(A phi)_i / phi_i + lambda_p|``
    is below ``rtol * max(|lambda_p|, 1e-12)``.
    """
    A = op.sparse()
    s = -eig.lambda_p
    gap = max(abs(s), 1e-12)
    v = eig.eigenfunction.copy()
    lu, ok = _factor((s + 0.1 * gap) * sp.identity(op.n, format="csr") - A)
    if not ok:
        raise ConvergenceError("steady_state.polish_eigenfunction", "shift not certified above s(A)")
    for _ in range(max_steps):
        spread = float(np.max(np.abs((A @ v) / v - s)))
        if spread <= rtol * gap:
            return v
        v = lu.solve(v)
        v /= v.max()
    raise ConvergenceError(
        "steady_state.polish_eigenfunction", f"componentwise spread {spread:.3e} after {max_steps} steps"
    )


def subsolution_seed(prob, phi, kappa0=0.5):
    """Largest ``kappa`` in a halving search from ``kappa0`` with
    ``G(kappa phi) >= 0`` at every grid point.

    ``phi`` must be componentwise accurate (see :func:`polish_eigenfunction`).
    """
    kappa = min(kappa0, prob.M)
    for _ in range(60):
        w = kappa * phi
        if np.all(prob.G(w) >= 0):
            return kappa, w
        kappa *= 0.5
    raise ConvergenceError("steady_state.solve_bounded", "no admissible subsolution multiple of phi_p")


def _monotone(prob, u, direction, tol, max_iter, check_order=True):
    """Single-sided monotone iteration until ``max |G(u)| <= tol``."""
    theta = prob.theta
    worst = 0.0
    for it in range(1, max_iter + 1):
        g = prob.G(u)
        if float(np.max(np.abs(g))) <= tol:
            return u, it - 1, worst
        new = u + theta * g
        if check_order:
            step = (u - new) if direction > 0 else (new - u)
            worst = max(worst, float(step.max()))
            if worst > ORDER_SLACK * max(1.0, prob.M):
                raise MonotonicityViolation(
                    "steady_state.solve_bounded", f"iterates not monotone (violation {worst:.3e})"
                )
        u = new
    raise ConvergenceError(
        "steady_state.solve_bounded", f"no convergence in {max_iter} iterations", result=u
    )


def _newton(prob, u, tol, max_steps=30):
    A = prob.op.sparse()
    for _ in range(max_steps):
        g = prob.G(u)
        if float(np.max(np.abs(g))) <= tol:
            return u
        jac = (A + sp.diags(prob.growth.dfds(prob.x, u))).tocsc()
        u = u - spsolve(jac, g)
    return u


def solve_bounded(
    grid,
    kernel,
    growth,
    c,
    epsilon,
    tol=1e-8,
    max_iter=2_000_000,
    accelerate=None,
    check_order=True,
    band=BORDERLINE_BAND,
    kappa0=0.5,
):
    """Steady state on ``grid`` by the two-sided monotone scheme.

    ``epsilon = 0`` is allowed (the upwind drift alone regularizes). The
    linearized principal eigenvalue decides the branch: ``lambda_p <= -band``
    runs the bracket iteration and returns ``"nontrivial"``; ``lambda_p >=
    band`` iterates down from the super-solution and returns ``"trivial"``;
    anything in between is ``"borderline"``.

    ``accelerate="newton"`` polishes with Newton once the brackets are within
    ``1e-3`` and checks the result stays inside them.
    """
    prob = _Problem(grid, kernel, growth, c, epsilon)
    eig = principal_eigenvalue(prob.linearized(), tol=1e-10)
    lam = eig.lambda_p
    M = prob.M
    sup = np.full(grid.n, M)

    if lam > -band:
        label = "trivial" if lam >= band else "borderline"
        # downward iteration reaches the maximal solution: 0 when trivial
        u = sup
        converged = False
        for it in range(1, max_iter + 1):
            g = prob.G(u)
            if float(u.max()) <= tol or (label == "borderline" and float(np.max(np.abs(g))) <= tol):
                converged = True
                break
            u = u + prob.theta * g
        res = _result(prob, u, label, lam, it, (0.0, float(u.max())))
        if not converged:
            if label == "trivial":
                raise ConvergenceError(
                    "steady_state.solve_bounded", f"decay to 0 too slow (lambda_p={lam:.3e})", result=res
                )
            res.flags.append("unconverged")
        return res

    phi = polish_eigenfunction(prob.linearized(), eig)
    kappa, sub = subsolution_seed(prob, phi, kappa0)
    theta = prob.theta
    worst = 0.0
    it = 0
    u = None
    while it < max_iter:
        it += 1
        gs, gS = prob.G(sub), prob.G(sup)
        gap = float(np.max(sup - sub))
        if gap <= tol and max(np.max(np.abs(gs)), np.max(np.abs(gS))) <= tol:
            u = sup
            break
        if accelerate == "newton" and gap <= 1e-3:
            cand = _newton(prob, sup.copy(), 0.1 * tol)
            if np.all(cand >= sub - tol) and np.all(cand <= sup + tol) and prob.residual(cand) <= tol:
                u = cand
                break
            accelerate = None
        new_sub, new_sup = sub + theta * gs, sup + theta * gS
        if check_order:
            worst = max(worst, float(np.max(sub - new_sub)), float(np.max(new_sup - sup)))
            cross = float(np.max(new_sub - new_sup))
            if cross > ORDER_SLACK * max(1.0, M):
                raise MonotonicityViolation(
                    "steady_state.solve_bounded", f"brackets cross by {cross:.3e}"
                )
            if worst > ORDER_SLACK * max(1.0, M):
                raise MonotonicityViolation(
                    "steady_state.solve_bounded", f"iterates not monotone (violation {worst:.3e})"
                )
        sub, sup = new_sub, new_sup
    if u is None:
        raise ConvergenceError(
            "steady_state.solve_bounded", f"brackets did not meet in {max_iter} iterations",
            result=_result(prob, sup, "nontrivial", lam, it, (float(sub.max()), float(sup.max()))),
        )
    return _result(
        prob, u, "nontrivial", lam, it, (float(sub.max()), float(sup.max())),
        kappa=kappa, order_violation=worst,
    )


def solve_bounded_viscous(grid, kernel, growth, c, epsilon, tol=1e-8, **kwargs):
    """Regularized problem on ``grid`` with Dirichlet ghosts on both sides."""
    if not epsilon > 0:
        raise ValidationError("steady_state.solve_bounded_viscous", f"epsilon must be positive, got {epsilon}")
    return solve_bounded(grid, kernel, growth, c, epsilon, tol=tol, **kwargs)


def uniqueness_probe(grid, kernel, growth, c, epsilon=0.0, kappa_ratio=4.0, tol=1e-11, max_iter=2_000_000):
    """Solve from three admissible seeds and report their sup-norm spread.

    Seeds: ``kappa phi_p``, ``kappa phi_p / kappa_ratio`` and the constant
    super-solution. Returns ``(spread, solutions)``.
    """
    prob = _Problem(grid, kernel, growth, c, epsilon)
    eig = principal_eigenvalue(prob.linearized(), tol=1e-10)
    if eig.lambda_p > -BORDERLINE_BAND:
        raise ValidationError("steady_state.uniqueness_probe", f"lambda_p = {eig.lambda_p} is not negative")
    kappa, seed = subsolution_seed(prob, polish_eigenfunction(prob.linearized(), eig))
    seeds = {
        "kappa": seed,
        "kappa/ratio": seed / kappa_ratio,
        "super": np.full(grid.n, prob.M),
    }
    sols = {}
    for name, s0 in seeds.items():
        direction = -1 if name == "super" else 1
        sols[name], _, _ = _monotone(prob, s0.copy(), direction, tol, max_iter)
    vals = list(sols.values())
    spread = max(float(np.max(np.abs(p - q))) for p in vals for q in vals)
    return spread, sols


def _check_schedule(values, decreasing, where, name):
    vals = [float(v) for v in values]
    if len(vals) < 1:
        raise ValidationError(where, f"{name} is empty")
    pairs = list(zip(vals, vals[1:]))
    if decreasing and any(b >= a for a, b in pairs):
        raise ValidationError(where, f"{name} must be strictly decreasing")
    if not decreasing and any(b <= a for a, b in pairs):
        raise ValidationError(where, f"{name} must be strictly increasing")
    return vals


def _warm_solve(prob, u, tol, max_iter):
    for it in range(1, max_iter + 1):
        g = prob.G(u)
        if float(np.max(np.abs(g))) <= tol:
            return u, it - 1
        u = u + prob.theta * g
    raise ConvergenceError("steady_state.vanishing_viscosity", f"warm start did not converge in {max_iter} iterations")


def vanishing_viscosity(grid, kernel, growth, c, eps_schedule, tol=1e-8, max_iter=2_000_000, strict=True):
    """Continuation in ``eps`` down to ``eps_schedule[-1] >= 0``.

    The first level uses the bracket scheme; later levels warm-start the
    damped iteration from the previous solution. ``trace`` records
    ``level, param, sup_increment, residual, l1_mass``. With ``strict`` a
    run of three non-decreasing increments raises :class:`ConvergenceError`
    (grid too coarse to resolve the limit).
    """
    where = "steady_state.vanishing_viscosity"
    eps = _check_schedule(eps_schedule, True, where, "eps_schedule")
    if eps[-1] < 0:
        raise ValidationError(where, "epsilon must stay >= 0")
    if eps[-1] == 0 and c == 0:
        raise ValidationError(where, "the eps = 0 endpoint needs c != 0")
    result = solve_bounded(grid, kernel, growth, c, eps[0], tol=tol, max_iter=max_iter)
    trace = [dict(level=0, param=eps[0], sup_increment=math.nan, residual=result.residual, l1_mass=result.l1_mass)]
    increments = []
    for level, e in enumerate(eps[1:], start=1):
        prob = _Problem(grid, kernel, growth, c, e)
        if result.classification == "nontrivial":
            u, iters = _warm_solve(prob, result.u.copy(), tol, max_iter)
            lam = principal_eigenvalue(prob.linearized(), tol=1e-10).lambda_p
            label = "nontrivial" if lam <= -BORDERLINE_BAND else ("trivial" if lam >= BORDERLINE_BAND else "borderline")
            new = _result(prob, u, label, lam, iters, (float(u.max()), float(u.max())))
        else:
            new = solve_bounded(grid, kernel, growth, c, e, tol=tol, max_iter=max_iter)
        inc = float(np.max(np.abs(new.u - result.u)))
        increments.append(inc)
        trace.append(dict(level=level, param=e, sup_increment=inc, residual=new.residual, l1_mass=new.l1_mass))
        result = new
    result.trace = trace
    for k in range(len(increments) - 2):
        if increments[k] <= increments[k + 1] <= increments[k + 2]:
            result.flags.append("increments-not-decreasing")
            if strict:
                raise ConvergenceError(
                    where, f"increments non-decreasing over levels {k + 1}..{k + 3}: discretization too coarse",
                    result=result,
                )
            break
    return result


def domain_continuation(kernel, growth, c, epsilon, R_schedule, tol=1e-6, h=0.05, solve_tol=1e-10, slack=1e-10):
    """Solve on nested domains and check ``u_{R1} <= u_{R2}`` on the common grid.

    Stops once the sup-norm increment (smaller solution extended by zero)
    drops below ``tol``.
    """
    where = "steady_state.domain_continuation"
    Rs = _check_schedule(R_schedule, False, where, "R_schedule")
    prev = None
    trace = []
    for level, R in enumerate(Rs):
        grid = Grid.from_spacing(R, h)
        res = solve_bounded(grid, kernel, growth, c, epsilon, tol=solve_tol, accelerate="newton")
        inc = math.nan
        if prev is not None:
            m = (grid.n - prev.u.size) // 2
            common = res.u[m : m + prev.u.size]
            drop = float(np.max(prev.u - common))
            if drop > slack:
                raise MonotonicityViolation(
                    where, f"u decreased by {drop:.3e} when R grew to {R}: boundary convention broken", result=res
                )
            ext = np.zeros(grid.n)
            ext[m : m + prev.u.size] = prev.u
            inc = float(np.max(np.abs(res.u - ext)))
        trace.append(dict(level=level, param=R, sup_increment=inc, residual=res.residual, l1_mass=res.l1_mass))
        prev = res
        if inc < tol:
            break
    prev.trace = trace
    if not trace[-1]["sup_increment"] < tol:
        prev.flags.append("unconverged-in-R")
    return prev


def fat_tail_solve(kernel, growth, c, N_schedule, grid, tol=1e-8, solve_tol=1e-11, slack=1e-10):
    """Steady states for the truncations ``J_N`` along an increasing ``N_schedule``.

    Checks ``u_N`` is pointwise nondecreasing in ``N`` and records
    ``lambda_p(J_N)`` per level in the trace.
    """
    where = "steady_state.fat_tail_solve"
    Ns = _check_schedule(N_schedule, False, where, "N_schedule")
    sup_a = profile_sup(growth.profile)
    if not sup_a > 1:
        raise ValidationError(where, f"needs sup a > 1, got {sup_a}")
    prev = None
    trace = []
    for level, N in enumerate(Ns):
        kN = truncate(kernel, N)
        res = solve_bounded(grid, kN, growth, c, 0.0, tol=solve_tol, accelerate="newton")
        if level == 0 and res.classification != "nontrivial":
            raise ValidationError(
                where, f"lambda_p(J_N) = {res.lambda_p} >= 0 at the first level: not persistent even truncated"
            )
        inc = math.nan
        if prev is not None:
            drop = float(np.max(prev.u - res.u))
            if drop > slack:
                raise MonotonicityViolation(where, f"u_N decreased by {drop:.3e} at N={N}", result=res)
            inc = float(np.max(np.abs(res.u - prev.u)))
        trace.append(
            dict(level=level, param=N, sup_increment=inc, residual=res.residual, l1_mass=res.l1_mass, lambda_p=res.lambda_p)
        )
        prev = res
    prev.trace = trace
    if not prev.residual <= tol:
        raise ConvergenceError(where, f"final residual {prev.residual:.3e} above {tol}", result=prev)
    return prev
