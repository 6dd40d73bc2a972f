"""Critical shift speeds and their closed-form bounds.

The persistence thresholds are read off the sign of ``c -> lambda_p(c)``:
``c*`` is the first sign change met moving away from ``c = 0`` and ``c**``
the last one inside the scanned range, on each side. Nothing here assumes
the two coincide; the report records whether the sampled sign pattern is a
single interval around 0 (``monotone_sign_structure``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import fftconvolve

from ._parallel import ordered_map
from .environment import as_profile, profile_sup, tail_bounds
from .errors import ShiftNicheError, TransformDivergent, ValidationError
from .kernel import exponential_moment, moment
from .spectral import lambda_p_limit

DEFAULT_BRACKET_TOL = 1e-3
SCAN_HALF_POINTS = 20
SCAN_FACTOR = 1.25
DEFAULT_POLICY = {"h": 0.05, "R_schedule": None, "tol": 1e-4, "eig_tol": 1e-10}


@dataclass
class CriticalSpeedReport:
    c_star_plus: tuple
    c_star_minus: tuple
    c_dstar_plus: tuple
    c_dstar_minus: tuple
    lambda_curve: list
    bounds: dict
    monotone_sign_structure: bool
    lambda_at_rest: float
    bracket_tol: float
    c_range: tuple
    flags: list = field(default_factory=list)
    policy: dict = field(default_factory=dict)

    def to_text(self):
        """``key = value`` lines grouped in ``[section]`` blocks."""

        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if v is None:
                return "none"
            if isinstance(v, (float, int, np.floating)):
                return format(float(v), ".17g")
            if isinstance(v, (tuple, list)):
                return "[" + ", ".join(fmt(e) for e in v) + "]"
            return str(v)

        lines = ["[speeds]"]
        for name in ("c_star_plus", "c_star_minus", "c_dstar_plus", "c_dstar_minus"):
            lines.append(f"{name} = {fmt(getattr(self, name))}")
        lines.append(f"monotone_sign_structure = {fmt(self.monotone_sign_structure)}")
        lines.append(f"lambda_at_rest = {fmt(self.lambda_at_rest)}")
        lines += ["", "[bounds]"]
        for key in sorted(self.bounds):
            lines.append(f"{key} = {fmt(self.bounds[key])}")
        lines += ["", "[scan]"]
        lines.append(f"bracket_tol = {fmt(self.bracket_tol)}")
        lines.append(f"c_range = {fmt(self.c_range)}")
        lines.append(f"samples = {len(self.lambda_curve)}")
        for key in sorted(self.policy):
            lines.append(f"policy.{key} = {fmt(self.policy[key])}")
        lines += ["", "[flags]"]
        lines.append(f"flags = {fmt(list(self.flags))}")
        return "\n".join(lines) + "\n"


def spectral_speed_bound(kernel, growth, orientation="+", alpha_range=(1e-3, 50.0), points=200):
    """``inf_alpha (E(alpha) - 1 + sup a) / alpha`` for ``alpha`` in ``alpha_range``.

    A log-spaced scan brackets the minimum, then a golden-section search
    refines it. Returns ``(value, argmin, flags)``; the flag
    ``"boundary-minimum"`` marks a minimum on the edge of the range.
    """
    sup_a = profile_sup(as_profile(growth))
    lo, hi = (float(a) for a in alpha_range)
    if not 0 < lo < hi:
        raise ValidationError("critical_speed.spectral_speed_bound", f"bad alpha_range {alpha_range}")

    def g(alpha):
        return (exponential_moment(kernel, alpha, orientation) - 1.0 + sup_a) / alpha

    alphas = np.geomspace(lo, hi, points)
    values = np.array([g(a) for a in alphas])  # raises TransformDivergent for fat tails
    i = int(np.argmin(values))
    if i == 0 or i == points - 1:
        return float(values[i]), float(alphas[i]), ["boundary-minimum"]
    res = minimize_scalar(
        g, bracket=(alphas[i - 1], alphas[i], alphas[i + 1]), method="golden", tol=1e-12
    )
    if res.fun <= values[i]:
        return float(res.fun), float(res.x), []
    return float(values[i]), float(alphas[i]), []


def symmetric_remark_values(kernel, growth):
    """``(2 sqrt(m2 sup a), sqrt(2 m2 sup a))`` with ``m2 = int J z^2``.

    The first is the value quoted in the literature for symmetric kernels;
    the second follows from ``cosh(t) - 1 >= t**2 / 2`` and is the one that
    actually bounds the minimized speed from below.
    """
    where = "critical_speed.symmetric_remark_values"
    if not kernel.symmetric:
        raise ValidationError(where, "kernel must be symmetric")
    sup_a = profile_sup(as_profile(growth))
    if not sup_a > 0:
        raise ValidationError(where, f"sup a must be positive, got {sup_a}")
    m2 = moment(kernel, 2)
    return 2.0 * math.sqrt(m2 * sup_a), math.sqrt(2.0 * m2 * sup_a)


def barrier(x, tau):
    """``1 - tau x`` for ``x <= 0`` and ``1 / (1 + tau x)`` for ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0, 1.0 - tau * x, 1.0 / (1.0 + tau * np.maximum(x, 0.0)))


def barrier_derivative(x, tau):
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0, -tau, -tau / (1.0 + tau * np.maximum(x, 0.0)) ** 2)


def barrier_residual(kernel, growth, c, tau, delta, half_width, h=0.01, kink=None):
    """``max (c w' + J * w - w + (a + delta) w)`` over ``|x| <= half_width``,
    skipping ``|x| < kink`` (default ``2 h``) around the kink of ``w``."""
    K, wts = kernel.weights(h)
    m = int(round(half_width / h))
    xs = h * np.arange(-m - K, m + K + 1)
    conv = fftconvolve(barrier(xs, tau), wts, mode="valid")
    x = h * np.arange(-m, m + 1)
    w = barrier(x, tau)
    a = np.asarray(as_profile(growth)(x), dtype=float)
    res = c * barrier_derivative(x, tau) + conv - w + (a + delta) * w
    keep = np.abs(x) >= (2.0 * h if kink is None else kink)
    return float(np.max(res[keep]))


def fat_tail_speed_bound(kernel, growth, delta=None, check_half_width=None, h=0.01):
    """Extinction speed ``c#`` for symmetric kernels with finite second moment.

    ``tau0`` is the positive root of ``M2 tau**2 + M1 tau - kappa = 0``,
    computed in the cancellation-free form ``2 kappa / (M1 + sqrt(...))``.
    ``delta`` defaults to half the tail margin ``-max(tails)``. The barrier
    inequality is evaluated at ``c#`` and returned as ``barrier_residual``.
    """
    where = "critical_speed.fat_tail_speed_bound"
    if not kernel.symmetric:
        raise ValidationError(where, "kernel must be symmetric")
    profile = as_profile(growth)
    if delta is None:
        delta = -0.5 * max(profile.tails)
    tb = tail_bounds(growth, delta)
    M1 = moment(kernel, 1, half_line=True)
    M2 = moment(kernel, 2, half_line=True)
    kappa = tb.kappa
    tau0 = 2.0 * kappa / (M1 + math.sqrt(M1 * M1 + 4.0 * kappa * M2))
    assert tau0 > 0, "tau0 must be positive"
    sup_a = profile_sup(profile)
    scale = (1.0 + tau0 * tb.R0) / tau0
    c0 = M1
    c1 = c0 + (sup_a + delta) * scale
    c2 = (kappa + delta + sup_a) * scale
    c_hash = max(c0, c1, c2)
    half = check_half_width or max(4.0 * tb.R0, 20.0)
    return {
        "c_hash": c_hash,
        "tau0": tau0,
        "c0": c0,
        "c1": c1,
        "c2": c2,
        "R0": tb.R0,
        "kappa": kappa,
        "delta": float(delta),
        "M1": M1,
        "M2": M2,
        "root_residual": tau0 * tau0 * M2 + tau0 * M1 - kappa,
        "barrier_residual": barrier_residual(kernel, growth, c_hash, tau0, delta, half, h),
    }


def closed_form_bounds(kernel, growth):
    """Every closed-form speed available for ``kernel``; ``None`` where undefined."""
    out = {}
    for side, orient in (("plus", "+"), ("minus", "-")):
        try:
            val, arg, fl = spectral_speed_bound(kernel, growth, orient)
        except TransformDivergent:
            val, arg, fl = None, None, ["transform-divergent"]
        out[f"c_alpha_{side}"] = val
        out[f"alpha_{side}"] = arg
        # the same infimum written with a(x) = d_s f(x, 0)
        out[f"c0_{side}"] = val
        if fl:
            out[f"c_alpha_{side}_flags"] = ",".join(fl)
    if kernel.symmetric and profile_sup(as_profile(growth)) > 0:
        out["symmetric_remark_value"], out["corrected_symmetric_value"] = symmetric_remark_values(kernel, growth)
    else:
        out["symmetric_remark_value"] = out["corrected_symmetric_value"] = None
    if out["c_alpha_plus"] is None:
        try:
            fat = fat_tail_speed_bound(kernel, growth)
            out["c_hash"] = fat["c_hash"]
            out["tau0"] = fat["tau0"]
        except ShiftNicheError as exc:
            out["c_hash"] = None
            out["c_hash_error"] = str(exc)
    else:
        out["c_hash"] = None
    return out


def find_speeds(
    kernel,
    growth,
    grid_policy=None,
    c_range=None,
    bracket_tol=DEFAULT_BRACKET_TOL,
    workers=1,
    half_points=SCAN_HALF_POINTS,
):
    """Bracket ``c*`` and ``c**`` on both sides of ``c = 0``.

    Parameters
    ----------
    grid_policy : dict, optional
        ``h``, ``R_schedule``, ``tol`` (domain convergence) and ``eig_tol``
        passed to :func:`shiftniche.spectral.lambda_p_limit`.
    c_range : (float, float), optional
        ``(c_min, c_max)`` with ``c_min < 0 < c_max``; defaults to
        ``1.25`` times the closed-form bounds (``c#`` for fat tails).
    workers : int
        Threads for the scan and the independent bisections; the result is
        identical for every value.

    Brackets are ``(lo, hi)`` magnitudes: ``lambda_p < 0`` at ``lo`` and
    ``>= 0`` at ``hi`` (``hi = inf`` when no sign change was found).
    """
    where = "critical_speed.find_speeds"
    policy = dict(DEFAULT_POLICY)
    policy.update(grid_policy or {})
    bracket_tol = float(bracket_tol)
    if not bracket_tol > 0:
        raise ValidationError(where, "bracket_tol must be positive")

    def lam(c):
        return lambda_p_limit(
            kernel, growth, c, h=policy["h"], R_schedule=policy["R_schedule"],
            tol=policy["tol"], eig_tol=policy["eig_tol"],
        ).lambda_p

    lam0 = lam(0.0)
    if not lam0 < 0:
        raise ValidationError(where, f"not-persistent-at-rest: lambda_p(0) = {lam0} >= 0")

    bounds = closed_form_bounds(kernel, growth)
    if c_range is None:
        if bounds["c_alpha_plus"] is not None:
            c_range = (-SCAN_FACTOR * bounds["c_alpha_minus"], SCAN_FACTOR * bounds["c_alpha_plus"])
        elif bounds.get("c_hash") is not None:
            c_range = (-SCAN_FACTOR * bounds["c_hash"], SCAN_FACTOR * bounds["c_hash"])
        else:
            raise ValidationError(where, "no closed-form bound available; pass c_range")
    c_min, c_max = (float(v) for v in c_range)
    if not c_min < 0 < c_max:
        raise ValidationError(where, f"c_range must straddle 0, got {c_range}")

    # c_k = c_max * k / n: exactly mirrored samples when c_min = -c_max
    ks = range(1, half_points + 1)
    plus = [c_max * k / half_points for k in ks]
    minus = [-c_min * k / half_points for k in ks]
    values = ordered_map(lam, [-c for c in minus] + plus, workers)
    lam_minus, lam_plus = values[:half_points], values[half_points:]
    curve = {0.0: lam0}
    curve.update({-c: v for c, v in zip(minus, lam_minus)})
    curve.update(zip(plus, lam_plus))

    flags = []
    tasks = []  # (side, kind, lo, hi) in magnitudes
    sides = {}
    for side, mags, lams in (("plus", plus, lam_plus), ("minus", minus, lam_minus)):
        mags = [0.0] + mags
        lams = [lam0] + lams
        changes = [i for i in range(len(mags) - 1) if lams[i] < 0 <= lams[i + 1]]
        negative = [lv < 0 for lv in lams]
        contiguous = not any(negative[i + 1] and not negative[i] for i in range(len(lams) - 1))
        sides[side] = dict(changes=changes, mags=mags, contiguous=contiguous)
        if not changes:
            flags.append(f"no-sign-change-{side}")
            continue
        first, last = changes[0], changes[-1]
        tasks.append((side, "star", mags[first], mags[first + 1]))
        if last != first:
            tasks.append((side, "dstar", mags[last], mags[last + 1]))

    sign = {"plus": 1.0, "minus": -1.0}

    def bisect(task):
        side, _, lo, hi = task
        seen = []
        while hi - lo > bracket_tol:
            mid = 0.5 * (lo + hi)
            v = lam(sign[side] * mid)
            seen.append((sign[side] * mid, v))
            if v < 0:
                lo = mid
            else:
                hi = mid
        # independent re-verification of the endpoint signs
        ok = lam(sign[side] * lo) < 0 <= lam(sign[side] * hi)
        return (lo, hi), seen, ok

    outcomes = ordered_map(bisect, tasks, workers)
    brackets = {}
    for task, (br, seen, ok) in zip(tasks, outcomes):
        side, kind = task[0], task[1]
        brackets[(side, kind)] = br
        curve.update(seen)
        if not ok:
            flags.append(f"bracket-recheck-failed-{side}-{kind}")
    for side in ("plus", "minus"):
        edge = c_max if side == "plus" else -c_min
        if (side, "star") not in brackets:
            brackets[(side, "star")] = brackets[(side, "dstar")] = (edge, math.inf)
        elif (side, "dstar") not in brackets:
            brackets[(side, "dstar")] = brackets[(side, "star")]

    lam_curve = sorted(curve.items())
    monotone = all(
        sides[s]["contiguous"] and len(sides[s]["changes"]) <= 1 for s in ("plus", "minus")
    )
    return CriticalSpeedReport(
        c_star_plus=brackets[("plus", "star")],
        c_star_minus=brackets[("minus", "star")],
        c_dstar_plus=brackets[("plus", "dstar")],
        c_dstar_minus=brackets[("minus", "dstar")],
        lambda_curve=lam_curve,
        bounds=bounds,
        monotone_sign_structure=monotone,
        lambda_at_rest=lam0,
        bracket_tol=bracket_tol,
        c_range=(c_min, c_max),
        flags=flags,
        policy=policy,
    )


def save_lambda_curve_csv(curve, path):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("c,lambda_p\n")
        for c, v in curve:
            fh.write(f"{format(float(c), '.17g')},{format(float(v), '.17g')}\n")
