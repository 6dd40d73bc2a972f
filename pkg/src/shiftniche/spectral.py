"""Generalized principal eigenvalue of ``eps D_xx + c D_x + M_Omega + a``.

Sign convention: ``lambda_p`` solves ``A phi + lambda_p phi = 0`` with
``phi > 0``, so ``lambda_p = -s(A)`` where ``s(A)`` is the Perron root
(spectral abscissa) of the Metzler matrix ``A``. A negative ``lambda_p``
means the linearized population grows.

The default solver is a positivity-preserving shifted inverse iteration.
For ``sigma > s(A)`` the matrix ``sigma I - A`` is a nonsingular M-matrix,
its inverse is entrywise positive, and Gaussian elimination without
pivoting has strictly positive pivots; conversely a nonpositive pivot proves
``sigma <= s(A)``. The shift is therefore certified at every step and every
iterate stays positive. Collatz-Wielandt ratios ``(A v)_i / v_i`` bracket
``s(A)`` along the way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ._parallel import ordered_map
from .discrete_operator import Grid, assemble
from .environment import as_profile, profile_sup
from .errors import ConvergenceError, MonotonicityViolation, TransformDivergent, ValidationError
from .kernel import exponential_moment, reflect

DEFAULT_BOUNDED_TOL = 1e-10
DEFAULT_SCHEDULE_TOL = 1e-8


@dataclass
class EigenResult:
    """Principal eigenpair of one discretized operator."""

    lambda_p: float
    eigenfunction: np.ndarray
    residual: float
    domain_R: float
    iterations: int
    method: str
    converged: bool = True
    n: int = 0
    h: float = 0.0
    cw_bounds: tuple = (-math.inf, math.inf)
    residual_history: list = field(default_factory=list)
    history: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def _factor(mat):
    """No-pivot LU; returns ``(lu, ok)`` with ``ok`` iff all pivots are positive."""
    try:
        lu = splu(
            mat.tocsc(),
            permc_spec="NATURAL",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError:  # exactly singular
        return None, False
    if not np.array_equal(lu.perm_r, np.arange(mat.shape[0])):
        return lu, False
    return lu, bool(lu.U.diagonal().min() > 0)


def principal_eigenvalue(op, tol=DEFAULT_BOUNDED_TOL, max_iter=None, method="perron-iteration", v0=None):
    """Principal eigenvalue and positive eigenfunction of ``op``.

    Parameters
    ----------
    op : DiscreteOperator
    tol : float
        Stop when ``max |A phi + lambda phi| <= tol (1 + |lambda|)`` with
        ``max phi = 1``.
    max_iter : int, optional
        Defaults to 200 for ``"perron-iteration"`` and 10**6 for ``"power"``.
    method : {"perron-iteration", "power", "dense-oracle"}
        ``"power"`` is the plain power iteration on ``A + k I``;
        ``"dense-oracle"`` is a full nonsymmetric eigensolve (``n <= 2048``).
    v0 : array, optional
        Positive starting vector.
    """
    if method == "dense-oracle":
        res = _dense_oracle(op)
    elif method == "perron-iteration":
        res = _shift_invert(op, tol, max_iter or 200, v0)
    elif method == "power":
        res = _power(op, tol, max_iter or 10**6, v0)
    else:
        raise ValidationError("spectral.principal_eigenvalue", f"unknown method {method!r}")
    res.domain_R = op.grid.half_width
    res.n = op.n
    res.h = op.h
    # one independent matrix-free application
    res.residual = float(np.max(np.abs(op.apply(res.eigenfunction) + res.lambda_p * res.eigenfunction)))
    if not res.converged:
        res.flags.append("max-iter")
        raise ConvergenceError(
            "spectral.principal_eigenvalue",
            f"no convergence after {res.iterations} iterations (residual {res.residual:.3e})",
            result=res,
        )
    return res


def _start(op, v0):
    v = np.ones(op.n) if v0 is None else np.array(v0, dtype=float)
    if v.shape != (op.n,) or not np.all(v > 0):
        raise ValidationError("spectral.principal_eigenvalue", "starting vector must be positive")
    return v / v.max()


def _estimate(A, v):
    Av = A @ v
    rho = float(v @ Av) / float(v @ v)
    res = float(np.max(np.abs(Av - rho * v)))
    return Av, rho, res


def _check_positive(v, it):
    if not np.all(v > 0):
        raise ConvergenceError(
            "spectral.principal_eigenvalue",
            f"non-positive iterate at iteration {it}: the operator is not Metzler/irreducible",
        )


def _shift_invert(op, tol, max_iter, v0):
    A = op.sparse()
    eye = sp.identity(op.n, format="csr")
    v = _start(op, v0)
    Av = A @ v
    ratio = Av / v
    upper, lower = float(ratio.max()), float(ratio.min())
    sigma = upper + 1e-3 * (1.0 + abs(upper))
    rho, res = upper, math.inf
    history = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        lu, ok = _factor(sigma * eye - A)
        if not ok:
            # sigma <= s(A): certified lower bound, move towards the upper one
            lower = max(lower, sigma)
            sigma = 0.5 * (sigma + upper) if sigma < upper else upper + 1e-6 * (1.0 + abs(upper))
            continue
        w = lu.solve(v)
        _check_positive(w, it)
        v = w / w.max()
        Av, rho, res = _estimate(A, v)
        ratio = Av / v
        upper = min(upper, float(ratio.max()))
        lower = max(lower, float(ratio.min()))
        history.append(res)
        if res <= tol * (1.0 + abs(rho)):
            converged = True
            break
        candidate = max(rho, lower) + max(10.0 * res, 1e-7 * (1.0 + abs(rho)))
        sigma = min(candidate, upper + 1e-9 * (1.0 + abs(upper)))
    return EigenResult(
        lambda_p=-rho,
        eigenfunction=v,
        residual=res,
        domain_R=0.0,
        iterations=it,
        method="perron-iteration",
        converged=converged,
        cw_bounds=(-upper, -lower),
        residual_history=history,
    )


def _power(op, tol, max_iter, v0):
    A = op.sparse()
    k = op.shift
    B = (A + k * sp.identity(op.n, format="csr")).tocsr()
    v = _start(op, v0)
    history = []
    converged = False
    rho, res = 0.0, math.inf
    upper, lower = math.inf, -math.inf
    it = 0
    while it < max_iter:
        it += 1
        w = B @ v
        _check_positive(w, it)
        v = w / w.max()
        Av, rho, res = _estimate(A, v)
        history.append(res)
        if res <= tol * (1.0 + abs(rho)):
            converged = True
            ratio = Av / v
            upper, lower = float(ratio.max()), float(ratio.min())
            break
    return EigenResult(
        lambda_p=-rho,
        eigenfunction=v,
        residual=res,
        domain_R=0.0,
        iterations=it,
        method="power",
        converged=converged,
        cw_bounds=(-upper, -lower),
        residual_history=history,
    )


def _dense_oracle(op):
    vals, vecs = np.linalg.eig(op.dense())
    i = int(np.argmax(vals.real))
    vec = vecs[:, i].real
    vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
    vec = vec / vec.max()
    return EigenResult(
        lambda_p=-float(vals[i].real),
        eigenfunction=vec,
        residual=0.0,
        domain_R=0.0,
        iterations=1,
        method="dense-oracle",
    )


# -- domain limit -----------------------------------------------------------


def default_R_schedule(kernel, a, h, levels=5):
    """Geometric schedule ``R_k = R_0 2**k`` starting beyond niche plus kernel reach."""
    ext = as_profile(a).extent
    reach = kernel.reach if kernel.bounded else min(kernel.reach, 10.0)
    R0 = max(ext + 2.0 * reach, 4.0 * reach, 8.0 * h)
    R0 = math.ceil(R0 / h) * h
    return [R0 * 2**k for k in range(levels)]


def lambda_p_limit(
    kernel,
    growth,
    c,
    epsilon=0.0,
    R_schedule=None,
    tol=1e-4,
    h=0.05,
    eig_tol=DEFAULT_SCHEDULE_TOL,
    method="perron-iteration",
):
    """``lambda_p`` on growing domains ``(-R_k, R_k)`` sharing spacing ``h``.

    Grids with a common spacing are nested, so each operator is a principal
    submatrix of the next and ``lambda_p`` must be nonincreasing; a
    violation raises :class:`MonotonicityViolation`. Iteration stops when two
    successive values differ by less than ``tol``; otherwise the last value
    is returned with the flag ``"unconverged-in-R"``.
    """
    a = as_profile(growth)
    if R_schedule is None:
        R_schedule = default_R_schedule(kernel, a, h)
    R_schedule = [float(R) for R in R_schedule]
    if any(b <= r for r, b in zip(R_schedule, R_schedule[1:])):
        raise ValidationError("spectral.lambda_p_limit", "R_schedule must be strictly increasing")
    needed = a.extent + (kernel.reach if kernel.bounded else 0.0)
    if R_schedule[0] < needed:
        raise ValidationError(
            "spectral.lambda_p_limit", f"R_schedule starts at {R_schedule[0]} < niche extent + kernel reach = {needed}"
        )
    history = []
    result = None
    for R in R_schedule:
        op = assemble(Grid.from_spacing(R, h), kernel, c, epsilon, a)
        current = principal_eigenvalue(op, tol=eig_tol, method=method)
        if result is not None:
            slack = max(1e-12, 10.0 * eig_tol * (1.0 + abs(current.lambda_p)))
            if current.lambda_p > result.lambda_p + slack:
                raise MonotonicityViolation(
                    "spectral.lambda_p_limit",
                    f"lambda_p increased from {result.lambda_p} (R={result.domain_R}) to {current.lambda_p} (R={R})",
                    result=current,
                )
        history.append((R, current.lambda_p))
        done = result is not None and abs(current.lambda_p - result.lambda_p) < tol
        result = current
        if done:
            break
    result.history = history
    if len(history) < 2 or abs(history[-1][1] - history[-2][1]) >= tol:
        result.flags.append("unconverged-in-R")
    return result


def lambda_sweep(kernel, growth, c_values, workers=1, **kwargs):
    """``lambda_p_limit`` at each ``c`` (order preserved)."""
    return ordered_map(lambda c: lambda_p_limit(kernel, growth, c, **kwargs), c_values, workers)


def richardson_lambda(kernel, growth, c, R, h, epsilon=0.0, tol=DEFAULT_BOUNDED_TOL):
    """Two-grid extrapolation ``2 lambda(h/2) - lambda(h)`` for the first-order scheme."""
    a = as_profile(growth)
    coarse = principal_eigenvalue(assemble(Grid.from_spacing(R, h), kernel, c, epsilon, a), tol=tol)
    fine = principal_eigenvalue(assemble(Grid.from_spacing(R, h / 2), kernel, c, epsilon, a), tol=tol)
    return 2.0 * fine.lambda_p - coarse.lambda_p


# -- analytic bounds and identities -----------------------------------------


def analytic_lambda_bounds(kernel, growth, c, mu_grid):
    """Lower bounds on ``lambda_p`` from exponential test functions.

    With ``phi = exp(-mu x)``,
    ``c phi' + M phi + a phi <= phi (-c mu + E(mu) - 1 + sup a)``, where
    ``E(mu) = int J(z) exp(mu z) dz``, so every ``mu`` certifies
    ``lambda_p >= c mu + 1 - E(mu) - sup a``.

    Returns ``(lower, certificates, notes)``; ``certificates`` lists
    ``(mu, value)`` pairs and ``notes`` the skipped divergent entries.
    """
    sup_a = profile_sup(as_profile(growth))
    certificates, notes = [], []
    for mu in mu_grid:
        mu = float(mu)
        try:
            E = exponential_moment(kernel, abs(mu), "+" if mu >= 0 else "-")
        except TransformDivergent:
            notes.append(f"mu={mu!r}: transform-divergent, skipped")
            continue
        certificates.append((mu, c * mu + 1.0 - E - sup_a))
    if not certificates:
        raise ValidationError("spectral.analytic_lambda_bounds", "no usable mu in mu_grid")
    lower = max(v for _, v in certificates)
    return lower, certificates, notes


def duality_residual(op, tol=1e-12):
    """``|lambda_p(A) - lambda_p(A^T)|`` from two independent solves."""
    primal = principal_eigenvalue(op, tol=tol)
    dual = principal_eigenvalue(op.transpose(), tol=tol)
    return abs(primal.lambda_p - dual.lambda_p)


def continuum_dual(op):
    """Dual assembled from its continuous definition: reflected kernel, speed ``-c``."""
    return assemble(op.grid, reflect(op.kernel), -op.c, op.epsilon, op.a_values)


def reflection_identity_check(kernel, growth, c, grid, epsilon=0.0, tol=1e-12):
    """``|lambda_p(c, J, a(x)) - lambda_p(-c, J*, a(-x))|`` on a symmetric grid.

    ``a(-x)`` is taken as the reversed grid values, which is exact because
    the grid is symmetric about 0.
    """
    a_vals = np.asarray(as_profile(growth)(grid.x), dtype=float)
    left = principal_eigenvalue(assemble(grid, kernel, c, epsilon, a_vals), tol=tol)
    right = principal_eigenvalue(assemble(grid, reflect(kernel), -c, epsilon, a_vals[::-1].copy()), tol=tol)
    return abs(left.lambda_p - right.lambda_p)


def potential_lower_bound(op):
    """``-max_i (M_Omega 1 + a)_i``: the bound from the constant test function."""
    return -float(np.max(op.dispersal_row_sums() + op.a_values))
